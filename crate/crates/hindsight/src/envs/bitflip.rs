//! Bit-flip task with an explicit stop action.
//!
//! The state is `n` bits; the goal is another bit vector. Each step the agent
//! either flips exactly one bit or takes the extra *stop* action, which
//! leaves the bits untouched and ends the episode. The decisive skill is
//! knowing when to stop: stopping on the goal keeps the achieved state there,
//! stopping anywhere else wastes the episode. Actions arrive as an
//! `n + 1`-dimensional continuous vector and decode by argmax, so a
//! continuous-control agent can drive the discrete task unchanged.

use rand::{Rng, RngCore};

use crate::config::EnvConfig;
use crate::envs::{Environment, ResetObs, StepObs};
use crate::error::{Error, Result};
use crate::goal_dist::{GoalDistributionSpec, Rect};

pub struct BitFlip {
    n: usize,
    horizon: usize,
    bits: Vec<f64>,
    goal: Vec<f64>,
    steps: usize,
    done: bool,
    started: bool,
}

impl BitFlip {
    pub fn new(n: usize, horizon: Option<usize>) -> Result<BitFlip> {
        if n == 0 {
            return Err(Error::Config("bitflip needs at least one bit".into()));
        }
        // Default horizon: one step per bit plus slack for the stop action.
        let horizon = horizon.unwrap_or(n + 2);
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(BitFlip {
            n,
            horizon,
            bits: vec![0.0; n],
            goal: vec![0.0; n],
            steps: 0,
            done: true,
            started: false,
        })
    }

    pub fn from_config(cfg: &EnvConfig) -> Result<BitFlip> {
        BitFlip::new(cfg.n_bits, cfg.horizon)
    }

    /// Index of the largest action coordinate; ties go to the lowest index.
    fn decode(&self, action: &[f64]) -> usize {
        assert_eq!(action.len(), self.n + 1, "bitflip actions have n + 1 coordinates");
        let mut best = 0;
        for (i, &v) in action.iter().enumerate() {
            assert!(v.is_finite(), "actions must be finite");
            if v > action[best] {
                best = i;
            }
        }
        best
    }
}

impl Environment for BitFlip {
    fn name(&self) -> &'static str {
        "bitflip"
    }

    fn observation_dim(&self) -> usize {
        self.n
    }

    fn action_dim(&self) -> usize {
        self.n + 1
    }

    fn goal_dim(&self) -> usize {
        self.n
    }

    fn action_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); self.n + 1]
    }

    fn binary_action_coords(&self) -> Vec<usize> {
        // Argmax decoding already discretizes; no coordinate needs snapping.
        Vec::new()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> ResetObs {
        self.bits = (0..self.n).map(|_| f64::from(rng.gen::<bool>())).collect();
        // Redraw the goal while it coincides with the start, so every episode
        // begins unsolved.
        loop {
            self.goal = (0..self.n).map(|_| f64::from(rng.gen::<bool>())).collect();
            if self.goal != self.bits {
                break;
            }
        }
        self.steps = 0;
        self.done = false;
        self.started = true;
        ResetObs {
            observation: self.bits.clone(),
            achieved_goal: self.bits.clone(),
            desired_goal: self.goal.clone(),
        }
    }

    fn step(&mut self, action: &[f64]) -> StepObs {
        assert!(self.started, "reset the environment before stepping");
        assert!(!self.done, "episode is over; reset before stepping again");
        let idx = self.decode(action);
        if idx == self.n {
            self.done = true;
        } else {
            self.bits[idx] = 1.0 - self.bits[idx];
        }
        self.steps += 1;
        if self.steps >= self.horizon {
            self.done = true;
        }
        StepObs {
            observation: self.bits.clone(),
            achieved_goal: self.bits.clone(),
            reward: self.reward(&self.bits, &self.goal),
            done: self.done,
        }
    }

    fn reward(&self, achieved: &[f64], desired: &[f64]) -> f64 {
        assert_eq!(achieved.len(), self.n, "achieved goal has wrong dimension");
        assert_eq!(desired.len(), self.n, "desired goal has wrong dimension");
        let matches = achieved.iter().zip(desired).all(|(a, d)| (a - d).abs() < 0.5);
        if matches {
            0.0
        } else {
            -1.0
        }
    }

    fn goal_space(&self) -> Option<GoalDistributionSpec> {
        None
    }

    fn goal_grid_bounds(&self) -> Option<Rect> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn one_hot(n: usize, idx: usize) -> Vec<f64> {
        let mut a = vec![-1.0; n + 1];
        a[idx] = 1.0;
        a
    }

    #[test]
    fn flip_actions_flip_exactly_one_bit() {
        let mut env = BitFlip::new(6, None).unwrap();
        let start = env.reset(&mut stream(40, "flip"));
        let out = env.step(&one_hot(6, 2));
        for i in 0..6 {
            let expect = if i == 2 { 1.0 - start.observation[i] } else { start.observation[i] };
            assert_eq!(out.observation[i], expect);
        }
        assert!(!out.done);
    }

    #[test]
    fn stop_action_freezes_bits_and_ends_the_episode() {
        let mut env = BitFlip::new(5, None).unwrap();
        let start = env.reset(&mut stream(41, "stop"));
        let out = env.step(&one_hot(5, 5));
        assert_eq!(out.observation, start.observation, "stop must not move the bits");
        assert!(out.done);
    }

    #[test]
    fn stopping_on_the_goal_scores_zero() {
        let mut env = BitFlip::new(4, None).unwrap();
        let start = env.reset(&mut stream(42, "win"));
        // Flip every mismatched bit, then stop.
        let mut last = None;
        for i in 0..4 {
            if start.observation[i] != start.desired_goal[i] {
                last = Some(env.step(&one_hot(4, i)));
            }
        }
        let reached = last.expect("goal is redrawn to differ from the start");
        assert_eq!(reached.reward, 0.0, "bits now equal the goal");
        if !reached.done {
            let stopped = env.step(&one_hot(4, 4));
            assert_eq!(stopped.reward, 0.0);
            assert!(stopped.done);
        }
    }

    #[test]
    fn horizon_caps_the_episode() {
        let mut env = BitFlip::new(3, Some(4)).unwrap();
        env.reset(&mut stream(43, "hz"));
        let mut done = false;
        for step in 1..=4 {
            let out = env.step(&one_hot(3, 0));
            done = out.done;
            assert_eq!(done, step == 4);
        }
        assert!(done);
    }

    #[test]
    fn goal_never_equals_the_start() {
        let mut env = BitFlip::new(2, None).unwrap();
        let mut rng = stream(44, "redraw");
        // With 2 bits collisions are frequent, exercising the redraw loop.
        for _ in 0..200 {
            let start = env.reset(&mut rng);
            assert_ne!(start.observation, start.desired_goal);
        }
    }

    #[test]
    fn reward_requires_an_exact_match() {
        let env = BitFlip::new(3, None).unwrap();
        assert_eq!(env.reward(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]), 0.0);
        assert_eq!(env.reward(&[1.0, 0.0, 0.0], &[1.0, 0.0, 1.0]), -1.0);
    }

    #[test]
    fn argmax_ties_break_low() {
        let mut env = BitFlip::new(3, None).unwrap();
        let start = env.reset(&mut stream(45, "tie"));
        let out = env.step(&[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(out.observation[0], 1.0 - start.observation[0], "lowest index wins ties");
        assert_eq!(out.observation[1..], start.observation[1..]);
    }
}
