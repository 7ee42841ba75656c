//! Multi-goal reinforcement learning at desk scale.
//!
//! A goal-conditioned DDPG agent (goal concatenated to the state) trained with
//! hindsight relabeling, plus two refinements: virtual goals can be *prioritized*
//! by how instructive they are relative to the task's goal distribution, and
//! *misleading* relabeled transitions — those whose virtual goal was already
//! achieved before the action was taken — can be filtered out to remove the
//! optimistic bias they otherwise inject into the critic.
//!
//! The crate ships the matching environments (a bit-flip game with a
//! null-terminate action and three 2D throwing tasks), a prioritized replay
//! buffer, goal-distribution scoring (closed-form and Monte-Carlo), and an
//! evaluation harness. Everything is deterministic per `(config, seed)`.

pub mod config;
pub mod ddpg;
pub mod envs;
pub mod error;
pub mod goal_dist;
pub mod her;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
