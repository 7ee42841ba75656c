//! Two-link planar robot throwing (`robot`).
//!
//! A two-joint arm anchored near the lower left of the unit screen swings its
//! end effector to pick up and throw a ball at goals in the target region on
//! the right — mostly outside the arm's half-unit reach. Joints turn at a
//! bounded angular velocity per step; a joint command that would push the
//! elbow or the end effector off the screen is rejected wholesale (the arm
//! does not move that step). The gripper, ball, and scoring behave exactly as
//! in the hand tasks: grasp within a radius, carried balls ride the end
//! effector, released balls fly ballistically with the carried velocity, and
//! collisions are inelastic.

use rand::{Rng, RngCore};

use crate::config::EnvConfig;
use crate::envs::{goal_distance, Environment, ResetObs, StepObs};
use crate::error::{Error, Result};
use crate::goal_dist::{GoalDistributionSpec, Rect};

pub struct RobotThrow {
    base: [f64; 2],
    links: [f64; 2],
    joint_vel_limit: f64,
    gravity: f64,
    grasp_radius: f64,
    success_eps: f64,
    horizon: usize,
    rest_y: f64,
    prob_in_hand: f64,
    target: Rect,

    theta: [f64; 2],
    theta_dot: [f64; 2],
    ee_vel: [f64; 2],
    gripper_closed: bool,
    held: bool,
    ball_pos: [f64; 2],
    ball_vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    done: bool,
    started: bool,
}

/// Wrap an angle into [-pi, pi).
fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}

fn inside_screen(p: &[f64; 2]) -> bool {
    (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])
}

impl RobotThrow {
    pub fn from_config(cfg: &EnvConfig) -> Result<RobotThrow> {
        let base = [cfg.robot_base[0], cfg.robot_base[1]];
        if !inside_screen(&base) {
            return Err(Error::Config("robot base must sit inside the unit screen".into()));
        }
        let links = [cfg.link_lengths[0], cfg.link_lengths[1]];
        if !(links[0] > 0.0 && links[1] > 0.0) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if !(cfg.joint_vel_limit > 0.0 && cfg.joint_vel_limit < std::f64::consts::PI) {
            return Err(Error::Config(format!(
                "joint velocity limit must lie in (0, pi), got {}",
                cfg.joint_vel_limit
            )));
        }
        let target = cfg.target_region.to_rect()?;
        if !(cfg.gravity > 0.0 && cfg.grasp_radius > 0.0 && cfg.success_epsilon > 0.0) {
            return Err(Error::Config("gravity, radii, and tolerances must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.prob_ball_in_hand) {
            return Err(Error::Config(format!(
                "prob_ball_in_hand must lie in [0, 1], got {}",
                cfg.prob_ball_in_hand
            )));
        }
        if !(cfg.ball_rest_y >= 0.0 && cfg.ball_rest_y < 1.0) {
            return Err(Error::Config("ball rest height must lie inside the screen".into()));
        }
        Ok(RobotThrow {
            base,
            links,
            joint_vel_limit: cfg.joint_vel_limit,
            gravity: cfg.gravity,
            grasp_radius: cfg.grasp_radius,
            success_eps: cfg.success_epsilon,
            horizon: cfg.horizon.unwrap_or(50),
            rest_y: cfg.ball_rest_y,
            prob_in_hand: cfg.prob_ball_in_hand,
            target,
            theta: [0.0; 2],
            theta_dot: [0.0; 2],
            ee_vel: [0.0; 2],
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

    /// Forward kinematics: elbow and end-effector positions for joint angles.
    fn fk(&self, theta: &[f64; 2]) -> ([f64; 2], [f64; 2]) {
        let elbow = [
            self.base[0] + self.links[0] * theta[0].cos(),
            self.base[1] + self.links[0] * theta[0].sin(),
        ];
        let ee = [
            elbow[0] + self.links[1] * (theta[0] + theta[1]).cos(),
            elbow[1] + self.links[1] * (theta[0] + theta[1]).sin(),
        ];
        (elbow, ee)
    }

    fn ee(&self) -> [f64; 2] {
        self.fk(&self.theta).1
    }

    fn observation(&self) -> Vec<f64> {
        let ee = self.ee();
        vec![
            self.theta[0].cos(),
            self.theta[0].sin(),
            self.theta[1].cos(),
            self.theta[1].sin(),
            ee[0],
            ee[1],
            self.theta_dot[0],
            self.theta_dot[1],
            self.ee_vel[0],
            self.ee_vel[1],
            f64::from(self.gripper_closed),
            self.ball_pos[0],
            self.ball_pos[1],
            self.ball_vel[0],
            self.ball_vel[1],
        ]
    }

    /// Free-flight update: integrate, then floor and screen edges (no wall).
    fn fly_ball(&mut self) {
        self.ball_pos[0] += self.ball_vel[0];
        self.ball_pos[1] += self.ball_vel[1];
        self.ball_vel[1] -= self.gravity;
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

impl Environment for RobotThrow {
    fn name(&self) -> &'static str {
        "robot"
    }

    fn observation_dim(&self) -> usize {
        15
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
        vec![2]
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> ResetObs {
        // Rejection-sample a joint pose whose whole arm lies on the screen.
        loop {
            self.theta = [
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            ];
            let (elbow, ee) = self.fk(&self.theta);
            if inside_screen(&elbow) && inside_screen(&ee) {
                break;
            }
        }
        self.theta_dot = [0.0; 2];
        self.ee_vel = [0.0; 2];
        let u: f64 = rng.gen();
        if u < self.prob_in_hand {
            self.held = true;
            self.gripper_closed = true;
            self.ball_pos = self.ee();
            self.ball_vel = [0.0; 2];
        } else {
            self.held = false;
            self.gripper_closed = false;
            // A free ball starts anywhere in the arm's reach disk (clipped to
            // the screen); unsupported, it simply falls from there.
            let reach = self.links[0] + self.links[1];
            loop {
                let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                if goal_distance(&p, &self.base) <= reach {
                    self.ball_pos = p;
                    break;
                }
            }
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
        assert_eq!(action.len(), 3, "robot actions are [omega1, omega2, grip]");
        assert!(action.iter().all(|a| a.is_finite()), "actions must be finite");

        let omega = [
            action[0].clamp(-1.0, 1.0) * self.joint_vel_limit,
            action[1].clamp(-1.0, 1.0) * self.joint_vel_limit,
        ];
        let proposed = [wrap_angle(self.theta[0] + omega[0]), wrap_angle(self.theta[1] + omega[1])];
        let (elbow, ee_new) = self.fk(&proposed);
        if inside_screen(&elbow) && inside_screen(&ee_new) {
            let ee_old = self.ee();
            self.theta = proposed;
            self.theta_dot = omega;
            self.ee_vel = [ee_new[0] - ee_old[0], ee_new[1] - ee_old[1]];
        } else {
            // Rejected: the arm holds its pose this step.
            self.theta_dot = [0.0; 2];
            self.ee_vel = [0.0; 2];
        }
        let ee = self.ee();

        self.gripper_closed = action[2] > 0.0;
        if !self.gripper_closed {
            self.held = false;
        } else if !self.held && goal_distance(&self.ball_pos, &ee) <= self.grasp_radius {
            self.held = true;
        }

        if self.held {
            self.ball_pos = ee;
            self.ball_vel = self.ee_vel;
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
        Some(Rect::xy(0.0, 1.0, 0.0, 1.0).unwrap())
    }
}
