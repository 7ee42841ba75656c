//! Goal-conditioned environments with sparse rewards.
//!
//! Every environment exposes flat `f64` observations, a box action space, an
//! achieved-goal projection of the state, and a sparse reward in {-1, 0}
//! computable for *any* (achieved, desired) pair — the property hindsight
//! relabeling relies on. Episodes are fixed-horizon; reaching the goal does
//! not end them early (an agent must also learn to stay there).

use rand::RngCore;

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::goal_dist::{GoalDistributionSpec, Rect};

pub mod bitflip;
pub mod robot;
pub mod throw;

pub use bitflip::BitFlip;
pub use robot::RobotThrow;
pub use throw::Throw;

/// Initial snapshot returned by [`Environment::reset`].
#[derive(Clone, Debug, PartialEq)]
pub struct ResetObs {
    pub observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
}

/// Result of one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepObs {
    pub observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    /// Sparse reward of the new achieved goal against the episode's goal.
    pub reward: f64,
    /// Episode over (horizon exhausted, or a terminal action was taken).
    pub done: bool,
}

/// A goal-conditioned task. Object-safe so training code can hold a boxed
/// environment chosen at runtime.
pub trait Environment {
    fn name(&self) -> &'static str;
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn goal_dim(&self) -> usize;
    /// Per-coordinate (low, high) action bounds.
    fn action_bounds(&self) -> Vec<(f64, f64)>;
    /// Action coordinates with two effective values (e.g. a gripper); the
    /// exploration policy snaps these to a bound instead of perturbing them.
    fn binary_action_coords(&self) -> Vec<usize>;
    fn horizon(&self) -> usize;
    /// Start a fresh episode.
    fn reset(&mut self, rng: &mut dyn RngCore) -> ResetObs;
    /// Advance one step. Panics if called on a finished episode or before the
    /// first reset.
    fn step(&mut self, action: &[f64]) -> StepObs;
    /// Sparse reward for an arbitrary pair: 0 when `achieved` attains
    /// `desired`, -1 otherwise.
    fn reward(&self, achieved: &[f64], desired: &[f64]) -> f64;
    /// Density the episode goals are drawn from, for environments with a
    /// low-dimensional spatial goal space; `None` otherwise.
    fn goal_space(&self) -> Option<GoalDistributionSpec>;
    /// Region to discretize when binning achieved/virtual goals; covers
    /// everywhere a goal can land, not just where episode goals are drawn.
    fn goal_grid_bounds(&self) -> Option<Rect>;
}

/// Build the environment named in the configuration.
pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>> {
    let name = cfg
        .name
        .as_deref()
        .ok_or_else(|| Error::Config("missing environment name (set env.name)".into()))?;
    match name {
        "bitflip" => Ok(Box::new(BitFlip::from_config(cfg)?)),
        "hand" => Ok(Box::new(Throw::from_config(cfg, false)?)),
        "hand-wall" => Ok(Box::new(Throw::from_config(cfg, true)?)),
        "robot" => Ok(Box::new(RobotThrow::from_config(cfg)?)),
        other => Err(Error::Config(format!(
            "unknown environment '{other}' (expected bitflip, hand, hand-wall, or robot)"
        ))),
    }
}

/// Euclidean distance between two goal vectors.
pub fn goal_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "goal dimension mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EnvConfig;
    use crate::rng::stream;

    fn config(name: &str) -> EnvConfig {
        EnvConfig { name: Some(name.to_string()), ..EnvConfig::default() }
    }

    #[test]
    fn factory_builds_every_environment() {
        for name in ["bitflip", "hand", "hand-wall", "robot"] {
            let env = make_env(&config(name)).unwrap();
            assert_eq!(env.name(), name);
        }
    }

    #[test]
    fn factory_rejects_missing_and_unknown_names() {
        assert!(make_env(&EnvConfig::default()).is_err(), "name is mandatory");
        assert!(make_env(&config("cartpole")).is_err());
    }

    #[test]
    fn contract_shapes_hold_across_episodes() {
        // Shared contract probe: dims advertised by the trait must match what
        // reset and step actually produce, rewards must be sparse, and the
        // episode must end by the advertised horizon.
        for name in ["bitflip", "hand", "hand-wall", "robot"] {
            let mut env = make_env(&config(name)).unwrap();
            let mut rng = stream(30, "contract");
            for _ in 0..5 {
                let start = env.reset(&mut rng);
                assert_eq!(start.observation.len(), env.observation_dim(), "{name}");
                assert_eq!(start.achieved_goal.len(), env.goal_dim(), "{name}");
                assert_eq!(start.desired_goal.len(), env.goal_dim(), "{name}");
                assert_eq!(env.action_bounds().len(), env.action_dim(), "{name}");
                let mut steps = 0;
                loop {
                    let action: Vec<f64> = env
                        .action_bounds()
                        .iter()
                        .map(|&(lo, hi)| {
                            use rand::Rng;
                            (&mut rng).gen_range(lo..hi)
                        })
                        .collect();
                    let out = env.step(&action);
                    steps += 1;
                    assert_eq!(out.observation.len(), env.observation_dim(), "{name}");
                    assert_eq!(out.achieved_goal.len(), env.goal_dim(), "{name}");
                    assert!(out.reward == 0.0 || out.reward == -1.0, "{name}");
                    assert_eq!(
                        out.reward,
                        env.reward(&out.achieved_goal, &start.desired_goal),
                        "{name}: step reward must equal the reward function"
                    );
                    if out.done {
                        break;
                    }
                    assert!(steps < env.horizon(), "{name} must finish by its horizon");
                }
                assert!(steps <= env.horizon(), "{name}");
            }
        }
    }

    #[test]
    fn resets_are_deterministic_per_stream() {
        for name in ["bitflip", "hand", "hand-wall", "robot"] {
            let mut env_a = make_env(&config(name)).unwrap();
            let mut env_b = make_env(&config(name)).unwrap();
            let a = env_a.reset(&mut stream(31, "detreset"));
            let b = env_b.reset(&mut stream(31, "detreset"));
            assert_eq!(a, b, "{name} reset must be a pure function of the stream");
        }
    }

    #[test]
    fn goal_distance_is_euclidean() {
        assert_eq!(goal_distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(goal_distance(&[1.0], &[1.0]), 0.0);
    }
}
