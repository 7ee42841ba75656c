//! Evaluation and diagnostics.
//!
//! Policies are evaluated greedily (no exploration). Two success notions are
//! tracked: *any-step* success (the goal was reached at some point during the
//! episode) and *final-state* success (the last state still satisfies the
//! goal). Value-estimation bias is probed by comparing the critic's estimate
//! at the initial state against the empirical discounted return of the very
//! episode that followed, paired per episode and summarized by medians so a
//! few divergent episodes cannot dominate.

use rand::Rng;

use crate::ddpg::{concat3, greedy_action, ActorCritic};
use crate::envs::{goal_distance, Environment};
use crate::error::{Error, Result};
use crate::goal_dist::{kl_divergence, GridDistribution, GridSpec};
use crate::replay::Transition;

/// Aggregate outcome of a batch of greedy evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEval {
    /// Fraction of episodes that reached the goal at any step.
    pub success_rate: f64,
    /// Fraction of episodes whose final state satisfies the goal.
    pub final_state_success_rate: f64,
    /// Mean Euclidean distance between the final achieved goal and the
    /// desired goal.
    pub mean_final_distance: f64,
    pub n_episodes: usize,
}

/// Run `n_episodes` greedy episodes and summarize them.
pub fn evaluate_policy<R: Rng>(
    env: &mut dyn Environment,
    ac: &ActorCritic,
    n_episodes: usize,
    rng: &mut R,
) -> PolicyEval {
    assert!(n_episodes > 0, "need at least one evaluation episode");
    let bounds = env.action_bounds();
    let mut successes = 0usize;
    let mut final_successes = 0usize;
    let mut distance_sum = 0.0;
    for _ in 0..n_episodes {
        let start = env.reset(rng);
        let goal = start.desired_goal;
        let mut obs = start.observation;
        let achieved;
        let mut any_success = false;
        loop {
            let a = greedy_action(&ac.actor, &obs, &goal, &bounds);
            let out = env.step(&a);
            if out.reward == 0.0 {
                any_success = true;
            }
            obs = out.observation;
            if out.done {
                achieved = out.achieved_goal;
                break;
            }
        }
        if any_success {
            successes += 1;
        }
        if env.reward(&achieved, &goal) == 0.0 {
            final_successes += 1;
        }
        distance_sum += goal_distance(&achieved, &goal);
    }
    PolicyEval {
        success_rate: successes as f64 / n_episodes as f64,
        final_state_success_rate: final_successes as f64 / n_episodes as f64,
        mean_final_distance: distance_sum / n_episodes as f64,
        n_episodes,
    }
}

/// Paired comparison of predicted and realized value at initial states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QBiasProbe {
    /// Median over episodes of `Q(s0 ‖ g, pi(s0 ‖ g))` under the online nets.
    pub q0_median: f64,
    /// Median over the same episodes of the empirical discounted return.
    pub return_median: f64,
    pub n_episodes: usize,
}

impl QBiasProbe {
    /// Median estimate minus median outcome; positive means overestimation.
    pub fn bias(&self) -> f64 {
        self.q0_median - self.return_median
    }
}

/// Estimate value bias: for each of `n_episodes` greedy episodes, record the
/// online critic's value of the initial state-action and the discounted
/// return actually collected, then take medians.
pub fn q_bias_probe<R: Rng>(
    env: &mut dyn Environment,
    ac: &ActorCritic,
    n_episodes: usize,
    gamma: f64,
    rng: &mut R,
) -> QBiasProbe {
    assert!(n_episodes > 0, "need at least one probe episode");
    let bounds = env.action_bounds();
    let mut q0s = Vec::with_capacity(n_episodes);
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let start = env.reset(rng);
        let goal = start.desired_goal;
        let mut obs = start.observation;
        let a0 = greedy_action(&ac.actor, &obs, &goal, &bounds);
        let q0 = ac.critic.forward_one(&concat3(&obs, &goal, &a0));
        q0s.push(q0[0]);
        let mut discount = 1.0;
        let mut ret = 0.0;
        let mut first = Some(a0);
        loop {
            let a = first.take().unwrap_or_else(|| greedy_action(&ac.actor, &obs, &goal, &bounds));
            let out = env.step(&a);
            ret += discount * out.reward;
            discount *= gamma;
            obs = out.observation;
            if out.done {
                break;
            }
        }
        returns.push(ret);
    }
    QBiasProbe {
        q0_median: percentile(&q0s, 50.0),
        return_median: percentile(&returns, 50.0),
        n_episodes,
    }
}

/// Percentile with linear interpolation between order statistics. NaN values
/// are ignored; an effectively empty sample yields NaN. `p` is in [0, 100].
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    assert!((0.0..=100.0).contains(&p), "percentile must lie in [0, 100], got {p}");
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        let frac = rank - lo as f64;
        v[lo] + frac * (v[hi] - v[lo])
    }
}

/// One epoch's worth of learning-curve data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Any-step success rate of the greedy policy.
    pub success_rate: f64,
    pub mean_final_distance: f64,
    /// Median initial-state value estimate.
    pub q0_estimate: f64,
    /// Median empirical discounted return of the probe episodes.
    pub empirical_return: f64,
    /// Exploration rate used throughout the epoch.
    pub epsilon: f64,
    /// KL from the fixed reference target to the stored-goal histogram;
    /// NaN for environments without a planar goal space.
    pub kl_to_target: f64,
    /// Prioritization kernel bandwidth in force at evaluation time; NaN when
    /// not applicable.
    pub sigma_sq: f64,
}

/// Histogram the goals of the virtual (relabeled) transitions in `transitions`
/// over `grid`, normalize it, and report it with its KL divergence from
/// `target`. Errors when no virtual transitions are present.
pub fn vg_distribution_report(
    transitions: &[Transition],
    grid: &GridSpec,
    target: &GridDistribution,
) -> Result<(GridDistribution, f64)> {
    let mut hist = GridDistribution::zeros(grid.m, grid.n);
    let mut total = 0usize;
    for t in transitions.iter().filter(|t| t.is_virtual) {
        if t.goal.len() != 2 {
            return Err(Error::Config(format!(
                "virtual-goal histogram needs 2-dimensional goals, got {}",
                t.goal.len()
            )));
        }
        let (i, j) = grid.bin(&t.goal);
        hist.values[grid.index(i, j)] += 1.0;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Config("no virtual transitions to histogram".to_string()));
    }
    for v in hist.values.iter_mut() {
        *v /= total as f64;
    }
    let kl = kl_divergence(target, &hist)?;
    Ok((hist, kl))
}

/// Per-metric 33rd/50th/67th percentiles across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub p33: f64,
    pub p50: f64,
    pub p67: f64,
}

fn quantiles(xs: &[f64]) -> Quantiles {
    Quantiles { p33: percentile(xs, 33.0), p50: percentile(xs, 50.0), p67: percentile(xs, 67.0) }
}

/// One epoch of a multi-seed aggregate curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub epoch: usize,
    pub success_rate: Quantiles,
    pub mean_final_distance: Quantiles,
    pub q0_estimate: Quantiles,
    pub empirical_return: Quantiles,
    pub kl_to_target: Quantiles,
}

/// Combine learning curves from several runs (seeds) into per-epoch
/// percentile bands. All runs must cover exactly the same epochs.
pub fn aggregate_curves(runs: &[Vec<EpochRow>]) -> Result<Vec<AggregateRow>> {
    if runs.is_empty() {
        return Err(Error::Config("no curves to aggregate".to_string()));
    }
    let len = runs[0].len();
    if len == 0 {
        return Err(Error::Config("cannot aggregate empty curves".to_string()));
    }
    for (i, run) in runs.iter().enumerate() {
        if run.len() != len {
            return Err(Error::Config(format!(
                "curve {i} has {} epochs, expected {len}",
                run.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(len);
    for e in 0..len {
        let epoch = runs[0][e].epoch;
        for (i, run) in runs.iter().enumerate() {
            if run[e].epoch != epoch {
                return Err(Error::Config(format!(
                    "curve {i} has epoch {} at position {e}, expected {epoch}",
                    run[e].epoch
                )));
            }
        }
        let col = |f: &dyn Fn(&EpochRow) -> f64| -> Vec<f64> {
            runs.iter().map(|run| f(&run[e])).collect()
        };
        out.push(AggregateRow {
            epoch,
            success_rate: quantiles(&col(&|r| r.success_rate)),
            mean_final_distance: quantiles(&col(&|r| r.mean_final_distance)),
            q0_estimate: quantiles(&col(&|r| r.q0_estimate)),
            empirical_return: quantiles(&col(&|r| r.empirical_return)),
            kl_to_target: quantiles(&col(&|r| r.kl_to_target)),
        });
    }
    Ok(out)
}
