//! Planar hand-throwing tasks (`hand`, `hand-wall`).
//!
//! A point hand moves inside a workspace on the left of a unit screen and
//! must deliver a ball to a goal inside a target region on the right — out of
//! the hand's own reach, so the ball has to be thrown. The `hand-wall`
//! variant adds a vertical wall between workspace and target region that the
//! ball must clear.
//!
//! Physics runs at one unit time step per control step:
//!
//! 1. The commanded velocity (at most `max_hand_speed` per axis) moves the
//!    hand, which is then clamped to its workspace; the hand's velocity is
//!    the clamped displacement actually realized.
//! 2. The gripper adopts the commanded state. Opening releases a held ball;
//!    closing grasps a free ball within `grasp_radius` of the hand.
//! 3. A held ball rides the hand at the hand's velocity. A free ball moves
//!    by its velocity, then gravity reduces the vertical velocity. A ball
//!    released this step flies with the velocity it had while carried — the
//!    hand's displacement from the *previous* step — so a throw is wind-up
//!    then release.
//! 4. Collisions are inelastic: crossing the wall below its top, touching the
//!    floor, or leaving the screen stops the offending velocity component
//!    (wall and floor stop the ball dead).
//!
//! The achieved goal is the ball position; reward is 0 within
//! `success_epsilon` of the goal, -1 otherwise. Episodes run a fixed horizon
//! — parking the ball on the goal and keeping it there is the winning move.

use rand::{Rng, RngCore};

use crate::config::EnvConfig;
use crate::envs::{goal_distance, Environment, ResetObs, StepObs};
use crate::error::{Error, Result};
use crate::goal_dist::{GoalDistributionSpec, Rect};

pub struct Throw {
    variant_name: &'static str,
    /// `(x, height)` of the wall, present only in the `hand-wall` variant.
    wall: Option<(f64, f64)>,
    gravity: f64,
    max_speed: f64,
    grasp_radius: f64,
    success_eps: f64,
    horizon: usize,
    rest_y: f64,
    prob_in_hand: f64,
    workspace: Rect,
    target: Rect,

    hand_pos: [f64; 2],
    hand_vel: [f64; 2],
    gripper_closed: bool,
    held: bool,
    ball_pos: [f64; 2],
    ball_vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    done: bool,
    started: bool,
}

impl Throw {
    pub fn from_config(cfg: &EnvConfig, with_wall: bool) -> Result<Throw> {
        let workspace = cfg.hand_workspace.to_rect()?;
        let target = cfg.target_region.to_rect()?;
        let screen = Rect::xy(0.0, 1.0, 0.0, 1.0).unwrap();
        for (label, rect) in [("hand workspace", &workspace), ("target region", &target)] {
            if !(screen.contains(&rect.lo) && screen.contains(&rect.hi)) {
                return Err(Error::Config(format!("{label} must lie inside the unit screen")));
            }
        }
        if !(cfg.gravity > 0.0) {
            return Err(Error::Config(format!("gravity must be positive, got {}", cfg.gravity)));
        }
        if !(cfg.max_hand_speed > 0.0 && cfg.grasp_radius > 0.0 && cfg.success_epsilon > 0.0) {
            return Err(Error::Config("speeds, radii, and tolerances must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.prob_ball_in_hand) {
            return Err(Error::Config(format!(
                "prob_ball_in_hand must lie in [0, 1], got {}",
                cfg.prob_ball_in_hand
            )));
        }
        if !(cfg.ball_rest_y >= 0.0 && cfg.ball_rest_y < workspace.lo[1]) {
            return Err(Error::Config(
                "ball rest height must be nonnegative and below the workspace".into(),
            ));
        }
        let wall = if with_wall {
            if !(0.0 < cfg.wall_x && cfg.wall_x < 1.0 && 0.0 < cfg.wall_height && cfg.wall_height <= 1.0)
            {
                return Err(Error::Config("wall must stand inside the unit screen".into()));
            }
            if workspace.hi[0] >= cfg.wall_x || target.lo[0] <= cfg.wall_x {
                return Err(Error::Config(
                    "wall must separate the hand workspace from the target region".into(),
                ));
            }
            Some((cfg.wall_x, cfg.wall_height))
        } else {
            None
        };
        Ok(Throw {
            variant_name: if with_wall { "hand-wall" } else { "hand" },
            wall,
            gravity: cfg.gravity,
            max_speed: cfg.max_hand_speed,
            grasp_radius: cfg.grasp_radius,
            success_eps: cfg.success_epsilon,
            horizon: cfg.horizon.unwrap_or(50),
            rest_y: cfg.ball_rest_y,
            prob_in_hand: cfg.prob_ball_in_hand,
            workspace,
            target,
            hand_pos: [0.0; 2],
            hand_vel: [0.0; 2],
            gripper_closed: false,
            held: false,
            ball_pos: [0.0; 2],
            ball_vel: [0.0; 2],
            goal: [0.0; 2],
            steps: 0,
            done: true,
            started: false,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.hand_pos[0],
            self.hand_pos[1],
            self.hand_vel[0],
            self.hand_vel[1],
            f64::from(self.gripper_closed),
            self.ball_pos[0],
            self.ball_pos[1],
            self.ball_vel[0],
            self.ball_vel[1],
        ]
    }

    /// Free-flight update shared with the gripper phases: integrate, then
    /// resolve wall, floor, and screen-edge collisions in that order.
    fn fly_ball(&mut self) {
        let prev = self.ball_pos;
        self.ball_pos[0] += self.ball_vel[0];
        self.ball_pos[1] += self.ball_vel[1];
        self.ball_vel[1] -= self.gravity;

        if let Some((wx, wh)) = self.wall {
            let before = prev[0] - wx;
            let after = self.ball_pos[0] - wx;
            if before * after < 0.0 {
                let y_cross = prev[1] + (self.ball_pos[1] - prev[1]) * (wx - prev[0]) / (self.ball_pos[0] - prev[0]);
                if y_cross <= wh {
                    // Stick to the incoming side, nudged off the plane so the
                    // next step does not re-detect a crossing.
                    self.ball_pos = [wx + before.signum() * 1e-9, y_cross];
                    self.ball_vel = [0.0, 0.0];
                }
            }
        }
        if self.ball_pos[1] <= self.rest_y {
            self.ball_pos[1] = self.rest_y;
            self.ball_vel = [0.0, 0.0];
        }
        if self.ball_pos[0] < 0.0 {
            self.ball_pos[0] = 0.0;
            self.ball_vel[0] = 0.0;
        } else if self.ball_pos[0] > 1.0 {
            self.ball_pos[0] = 1.0;
            self.ball_vel[0] = 0.0;
        }
        if self.ball_pos[1] > 1.0 {
            self.ball_pos[1] = 1.0;
            self.ball_vel[1] = 0.0;
        }
    }
}

impl Environment for Throw {
    fn name(&self) -> &'static str {
        self.variant_name
    }

    fn observation_dim(&self) -> usize {
        9
    }

    fn action_dim(&self) -> usize {
        3
    }

    fn goal_dim(&self) -> usize {
        2
    }

    fn action_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); 3]
    }

    fn binary_action_coords(&self) -> Vec<usize> {
        // The gripper command is effectively open/closed.
        vec![2]
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> ResetObs {
        self.hand_pos = [
            rng.gen_range(self.workspace.lo[0]..self.workspace.hi[0]),
            rng.gen_range(self.workspace.lo[1]..self.workspace.hi[1]),
        ];
        self.hand_vel = [0.0; 2];
        let u: f64 = rng.gen();
        if u < self.prob_in_hand {
            self.held = true;
            self.gripper_closed = true;
            self.ball_pos = self.hand_pos;
            self.ball_vel = [0.0; 2];
        } else {
            self.held = false;
            self.gripper_closed = false;
            self.ball_pos = [
                rng.gen_range(self.workspace.lo[0]..self.workspace.hi[0]),
                self.rest_y,
            ];
            self.ball_vel = [0.0; 2];
        }
        self.goal = [
            rng.gen_range(self.target.lo[0]..self.target.hi[0]),
            rng.gen_range(self.target.lo[1]..self.target.hi[1]),
        ];
        self.steps = 0;
        self.done = false;
        self.started = true;
        ResetObs {
            observation: self.observation(),
            achieved_goal: self.ball_pos.to_vec(),
            desired_goal: self.goal.to_vec(),
        }
    }

    fn step(&mut self, action: &[f64]) -> StepObs {
        assert!(self.started, "reset the environment before stepping");
        assert!(!self.done, "episode is over; reset before stepping again");
        assert_eq!(action.len(), 3, "hand actions are [vx, vy, grip]");
        assert!(action.iter().all(|a| a.is_finite()), "actions must be finite");

        let cmd = [
            action[0].clamp(-1.0, 1.0) * self.max_speed,
            action[1].clamp(-1.0, 1.0) * self.max_speed,
        ];
        let prev_hand = self.hand_pos;
        self.hand_pos = [
            (prev_hand[0] + cmd[0]).clamp(self.workspace.lo[0], self.workspace.hi[0]),
            (prev_hand[1] + cmd[1]).clamp(self.workspace.lo[1], self.workspace.hi[1]),
        ];
        self.hand_vel = [self.hand_pos[0] - prev_hand[0], self.hand_pos[1] - prev_hand[1]];

        self.gripper_closed = action[2] > 0.0;
        if !self.gripper_closed {
            self.held = false;
        } else if !self.held && goal_distance(&self.ball_pos, &self.hand_pos) <= self.grasp_radius {
            self.held = true;
        }

        if self.held {
            self.ball_pos = self.hand_pos;
            self.ball_vel = self.hand_vel;
        } else {
            self.fly_ball();
        }

        self.steps += 1;
        if self.steps >= self.horizon {
            self.done = true;
        }
        StepObs {
            observation: self.observation(),
            achieved_goal: self.ball_pos.to_vec(),
            reward: self.reward(&self.ball_pos, &self.goal),
            done: self.done,
        }
    }

    fn reward(&self, achieved: &[f64], desired: &[f64]) -> f64 {
        if goal_distance(achieved, desired) <= self.success_eps {
            0.0
        } else {
            -1.0
        }
    }

    fn goal_space(&self) -> Option<GoalDistributionSpec> {
        Some(GoalDistributionSpec::UniformRect(self.target.clone()))
    }

    fn goal_grid_bounds(&self) -> Option<Rect> {
        // Goals are binned over the whole screen: relabeled goals are ball
        // positions, which can land anywhere.
        Some(Rect::xy(0.0, 1.0, 0.0, 1.0).unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EnvConfig;
    use crate::rng::stream;

    fn env(with_wall: bool) -> Throw {
        let cfg = EnvConfig {
            name: Some(if with_wall { "hand-wall" } else { "hand" }.to_string()),
            ..EnvConfig::default()
        };
        Throw::from_config(&cfg, with_wall).unwrap()
    }

    const STAY: [f64; 3] = [0.0, 0.0, -1.0];

    #[test]
    fn free_ball_follows_the_closed_form_parabola() {
        let mut e = env(false);
        e.reset(&mut stream(50, "parab"));
        // Launch state: mid-screen, rightward and upward velocity.
        let (x0, y0, vx, vy) = (0.4, 0.5, 0.02, 0.01);
        e.held = false;
        e.ball_pos = [x0, y0];
        e.ball_vel = [vx, vy];
        let g = e.gravity;
        for k in 1..=10 {
            let out = e.step(&STAY);
            let kf = k as f64;
            // Position integrates before gravity acts, so after k steps:
            // x = x0 + k vx, y = y0 + k vy - g k(k-1)/2.
            let expect_x = x0 + kf * vx;
            let expect_y = y0 + kf * vy - g * kf * (kf - 1.0) / 2.0;
            assert!((out.achieved_goal[0] - expect_x).abs() < 1e-12, "step {k}");
            assert!((out.achieved_goal[1] - expect_y).abs() < 1e-12, "step {k}");
        }
    }

    #[test]
    fn dropped_ball_comes_to_rest_on_the_floor() {
        let mut e = env(false);
        e.reset(&mut stream(51, "floor"));
        e.held = false;
        e.ball_pos = [0.5, 0.3];
        e.ball_vel = [0.0, 0.0];
        for _ in 0..200 {
            e.step(&STAY);
            if e.done {
                break;
            }
        }
        assert_eq!(e.ball_pos[1], e.rest_y, "ball must settle at rest height");
        assert_eq!(e.ball_vel, [0.0, 0.0]);
        // Resting is a fixed point if the episode continues.
        if !e.done {
            let out = e.step(&STAY);
            assert_eq!(out.achieved_goal[1], e.rest_y);
        }
    }

    #[test]
    fn hand_is_clamped_and_reports_realized_velocity() {
        let mut e = env(false);
        e.reset(&mut stream(52, "clamp"));
        e.hand_pos = [e.workspace.hi[0] - 0.01, 0.5];
        // Command full speed rightward: only 0.01 of motion is available.
        let out = e.step(&[1.0, 0.0, -1.0]);
        assert_eq!(out.observation[0], e.workspace.hi[0]);
        assert!((out.observation[2] - 0.01).abs() < 1e-12, "velocity is the clamped displacement");
        // A second push against the boundary realizes zero velocity.
        let out = e.step(&[1.0, 0.0, -1.0]);
        assert_eq!(out.observation[2], 0.0);
    }

    #[test]
    fn grasp_carry_and_throw() {
        let mut e = env(false);
        e.reset(&mut stream(53, "throw"));
        // Place a free ball just within grasp range of the hand.
        e.held = false;
        e.gripper_closed = false;
        e.hand_pos = [0.2, 0.5];
        e.ball_pos = [0.2, 0.46];
        e.ball_vel = [0.0, 0.0];
        // Close the gripper without moving: the ball snaps to the hand.
        let out = e.step(&[0.0, 0.0, 1.0]);
        assert!(e.held);
        assert_eq!(out.achieved_goal, vec![0.2, 0.5]);
        // Wind up: carry the ball at full speed to the right and up.
        let out = e.step(&[1.0, 1.0, 1.0]);
        assert_eq!(out.achieved_goal, e.hand_pos.to_vec());
        assert_eq!(e.ball_vel, e.hand_vel);
        let carried_vel = e.ball_vel;
        // Release: the ball leaves with the carried velocity.
        let before = e.ball_pos;
        let out = e.step(&[0.0, 0.0, -1.0]);
        assert!(!e.held);
        assert!((out.achieved_goal[0] - (before[0] + carried_vel[0])).abs() < 1e-12);
        assert!((out.achieved_goal[1] - (before[1] + carried_vel[1])).abs() < 1e-12);
    }

    #[test]
    fn a_scripted_pick_and_throw_reaches_most_goals() {
        // Reachability oracle: a hand-written controller — walk to the ball,
        // grasp, carry to a launch point computed from the ballistic closed
        // form, wind up one step, release — must put the ball within the
        // success radius of most sampled goals. This pins down that the task
        // is solvable through the public interface within the horizon.
        let mut e = env(false);
        let mut rng = stream(60, "script");
        let max_v = e.max_speed;
        let g = e.gravity;
        let drop = |k: f64| g * k * (k - 1.0) / 2.0;
        let (mut successes, mut floor_start_successes) = (0, 0);
        let episodes = 60;
        for _ in 0..episodes {
            let start = e.reset(&mut rng);
            let started_on_floor = !e.held;
            let goal = [start.desired_goal[0], start.desired_goal[1]];

            // Launch plan: release from (0.30, y_r) at velocity (max_v, vy)
            // so that flight step k* passes through the goal.
            let x_r = 0.30;
            let k = ((goal[0] - x_r) / max_v).round().max(1.0);
            let mut y_r = (goal[1] + drop(k) - 0.03 * k).clamp(0.10, 0.90);
            let mut vy = 0.0;
            for _ in 0..3 {
                vy = ((goal[1] + drop(k) - y_r) / k).clamp(-max_v, max_v);
                y_r = (goal[1] + drop(k) - vy * k).clamp(0.05 + vy.max(0.0) + 1e-3, 0.94);
            }
            let prelaunch = [x_r - max_v, y_r - vy];

            let mut any_success = false;
            let mut released = false;
            let mut obs = start.observation;
            loop {
                let (hand, ball) = ([obs[0], obs[1]], [obs[5], obs[6]]);
                let held = obs[4] == 1.0 && hand == ball;
                let action = if released {
                    [0.0, 0.0, -1.0]
                } else if held {
                    let dx = prelaunch[0] - hand[0];
                    let dy = prelaunch[1] - hand[1];
                    if dx.abs() < 1e-9 && dy.abs() < 1e-9 {
                        // Wind-up: one full-speed step to (x_r, y_r); the
                        // following release inherits this displacement.
                        released = true;
                        [1.0, vy / max_v, 1.0]
                    } else {
                        [
                            (dx / max_v).clamp(-1.0, 1.0),
                            (dy / max_v).clamp(-1.0, 1.0),
                            1.0,
                        ]
                    }
                } else {
                    // Approach the resting ball and close once the gripper
                    // will land inside the grasp radius after the move.
                    let target = [ball[0], 0.05f64.max(ball[1])];
                    let dx = (target[0] - hand[0]).clamp(-max_v, max_v);
                    let dy = (target[1] - hand[1]).clamp(-max_v, max_v);
                    let after = [hand[0] + dx, hand[1] + dy];
                    let d2 = (after[0] - ball[0]).powi(2) + (after[1] - ball[1]).powi(2);
                    let grip = if d2.sqrt() <= e.grasp_radius - 1e-9 { 1.0 } else { -1.0 };
                    [dx / max_v, dy / max_v, grip]
                };
                let out = e.step(&action);
                if out.reward == 0.0 {
                    any_success = true;
                }
                obs = out.observation;
                if out.done {
                    break;
                }
            }
            if any_success {
                successes += 1;
                if started_on_floor {
                    floor_start_successes += 1;
                }
            }
        }
        let rate = successes as f64 / episodes as f64;
        assert!(rate >= 0.6, "scripted controller must hit most goals, got {rate}");
        assert!(floor_start_successes > 0, "grasping from the floor must work at least once");
    }

    #[test]
    fn open_gripper_never_grasps() {
        let mut e = env(false);
        e.reset(&mut stream(54, "nograsp"));
        e.held = false;
        e.hand_pos = [0.2, 0.5];
        e.ball_pos = [0.2, 0.5];
        e.ball_vel = [0.0, 0.0];
        e.step(&[0.0, 0.0, -1.0]);
        assert!(!e.held, "an open gripper must not pick the ball up");
    }

    #[test]
    fn ball_out_of_reach_cannot_be_grasped() {
        let mut e = env(false);
        e.reset(&mut stream(55, "far"));
        e.held = false;
        e.hand_pos = [0.2, 0.5];
        e.ball_pos = [0.2, 0.4];
        e.ball_vel = [0.0, 0.0];
        e.step(&[0.0, 0.0, 1.0]);
        assert!(!e.held, "0.1 away is outside the grasp radius");
    }

    #[test]
    fn wall_stops_low_throws_and_passes_high_ones() {
        let mut e = env(true);
        let (wx, wh) = e.wall.unwrap();
        // Low crossing: flat rightward flight at half the wall's height.
        e.reset(&mut stream(56, "wall-low"));
        e.held = false;
        e.ball_pos = [wx - 0.03, wh * 0.5];
        e.ball_vel = [0.06, 0.0];
        e.step(&STAY);
        assert!((e.ball_pos[0] - wx).abs() < 1e-6, "ball must stick at the wall");
        assert!(e.ball_pos[0] < wx, "ball stays on the incoming side");
        assert_eq!(e.ball_vel, [0.0, 0.0]);
        // It then slides down the wall under gravity (one step to accrue
        // downward velocity, one to move).
        e.step(&STAY);
        e.step(&STAY);
        assert!(e.ball_pos[1] < wh * 0.5);
        assert!((e.ball_pos[0] - wx).abs() < 1e-6, "the slide is vertical");

        // High crossing: same horizontal flight above the wall top.
        let mut e = env(true);
        e.reset(&mut stream(57, "wall-high"));
        e.held = false;
        e.ball_pos = [wx - 0.03, wh + 0.2];
        e.ball_vel = [0.06, 0.0];
        e.step(&STAY);
        assert!(e.ball_pos[0] > wx, "ball must clear the wall");
    }

    #[test]
    fn screen_edges_stop_the_ball_inelastically() {
        let mut e = env(false);
        e.reset(&mut stream(58, "edge"));
        e.held = false;
        e.ball_pos = [0.99, 0.5];
        e.ball_vel = [0.05, 0.0];
        e.step(&STAY);
        assert_eq!(e.ball_pos[0], 1.0);
        assert_eq!(e.ball_vel[0], 0.0);
    }

    #[test]
    fn reset_splits_between_hand_and_ground_starts() {
        let mut e = env(false);
        let mut rng = stream(59, "starts");
        let (mut in_hand, mut on_ground) = (0, 0);
        for _ in 0..200 {
            let start = e.reset(&mut rng);
            if e.held {
                in_hand += 1;
                assert_eq!(start.achieved_goal, start.observation[0..2].to_vec());
            } else {
                on_ground += 1;
                assert_eq!(start.achieved_goal[1], e.rest_y);
            }
            // Goals always come from the target region.
            assert!(e.target.contains(&start.desired_goal));
        }
        assert!(in_hand > 60 && on_ground > 60, "both starts must occur: {in_hand}/{on_ground}");
    }

    #[test]
    fn ground_ball_is_reachable_from_the_workspace() {
        let mut e = env(false);
        let mut rng = stream(60, "reach");
        for _ in 0..100 {
            e.reset(&mut rng);
            if !e.held {
                // The hand directly above the ball at its lowest workspace
                // height must be within grasp range.
                let hover = [e.ball_pos[0], e.workspace.lo[1]];
                assert!(goal_distance(&hover, &e.ball_pos) <= e.grasp_radius);
            }
        }
    }

    #[test]
    fn episodes_run_the_full_horizon() {
        let mut e = env(false);
        e.reset(&mut stream(61, "hz"));
        let mut steps = 0;
        loop {
            let out = e.step(&STAY);
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(steps, e.horizon());
    }

    #[test]
    fn success_is_a_distance_threshold() {
        let e = env(false);
        assert_eq!(e.reward(&[0.7, 0.5], &[0.7, 0.5]), 0.0);
        assert_eq!(e.reward(&[0.7, 0.5], &[0.7, 0.54]), 0.0);
        assert_eq!(e.reward(&[0.7, 0.5], &[0.7, 0.56]), -1.0);
    }
}
