//! Hindsight relabeling: virtual-goal selection, prioritization, filtering.
//!
//! After every episode, each timestep contributes (besides the lived
//! transition) up to `k_virtual` relabeled copies whose goal is replaced by an
//! achieved goal drawn from the episode's own future. Two refinements are
//! layered on top of the plain future strategy:
//!
//! * **Instructive prioritization** ([`IbsState`]): virtual goals are drawn
//!   in proportion to how under-represented their grid cell is relative to a
//!   kernel-smoothed target distribution over the task's goal density, so the
//!   replay buffer's relabeled goals drift toward where real goals live.
//! * **Filtering** ([`filter_virtual_transition`]): a relabeled transition
//!   whose goal was *already achieved* in the state the action was taken from
//!   carries no information about the action (any action "succeeds"), and a
//!   sparse-reward critic trained on such rows inflates its value estimates.
//!   Filtering drops them at insertion time.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal_dist::{build_target_grid, GoalDistributionSpec, GridDistribution, GridSpec};
use crate::replay::{PerBuffer, Transition};

/// One complete episode, as recorded by a rollout.
///
/// With `T` executed actions there are `T + 1` observations and achieved
/// goals (including the initial state) and `T` rewards, where `rewards[t]`
/// scores `achieved_goals[t + 1]` against `desired_goal`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub achieved_goals: Vec<Vec<f64>>,
    pub desired_goal: Vec<f64>,
}

impl EpisodeTrajectory {
    /// Number of executed actions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Panic unless the per-field lengths are mutually consistent.
    pub fn assert_consistent(&self) {
        let t = self.actions.len();
        assert!(t > 0, "episodes must contain at least one action");
        assert_eq!(self.observations.len(), t + 1, "need T + 1 observations");
        assert_eq!(self.achieved_goals.len(), t + 1, "need T + 1 achieved goals");
        assert_eq!(self.rewards.len(), t, "need T rewards");
    }
}

/// Candidate virtual goals for timestep `t`: every goal achieved strictly
/// after the action at `t` (the "future" strategy). Never empty for valid
/// `t < T`.
pub fn candidate_goals(traj: &EpisodeTrajectory, t: usize) -> &[Vec<f64>] {
    assert!(t < traj.len(), "timestep {t} outside episode of length {}", traj.len());
    &traj.achieved_goals[t + 1..]
}

/// Tunables for instructive virtual-goal prioritization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IbsParams {
    /// Grid cells along x.
    pub grid_m: usize,
    /// Grid cells along y.
    pub grid_n: usize,
    /// Initial squared kernel bandwidth; large values flatten the target so
    /// early training explores broadly.
    pub sigma_sq_init: f64,
    /// Annealing floor for the squared bandwidth.
    pub sigma_sq_final: f64,
    /// Multiplicative decay applied once per annealing period.
    pub sigma_decay: f64,
    /// Number of completed cycles per annealing period.
    pub anneal_period_cycles: usize,
    /// Lower bound for both target-grid cells and candidate weights; keeps
    /// every cell and every candidate reachable.
    pub floor: f64,
}

impl Default for IbsParams {
    fn default() -> IbsParams {
        IbsParams {
            grid_m: 20,
            grid_n: 20,
            sigma_sq_init: 2.0,
            sigma_sq_final: 0.2,
            sigma_decay: 0.9,
            anneal_period_cycles: 50,
            floor: 0.002,
        }
    }
}

impl IbsParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_m == 0 || self.grid_n == 0 {
            return Err(Error::Config("prioritization grid needs positive dimensions".into()));
        }
        if !(self.sigma_sq_init > 0.0 && self.sigma_sq_final > 0.0) {
            return Err(Error::Config("squared bandwidths must be positive".into()));
        }
        if self.sigma_sq_final > self.sigma_sq_init {
            return Err(Error::Config(format!(
                "bandwidth floor {} exceeds initial value {}",
                self.sigma_sq_final, self.sigma_sq_init
            )));
        }
        if !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return Err(Error::Config(format!("sigma decay must lie in (0, 1], got {}", self.sigma_decay)));
        }
        if self.anneal_period_cycles == 0 {
            return Err(Error::Config("annealing period must be at least one cycle".into()));
        }
        if self.floor <= 0.0 || self.floor * (self.grid_m * self.grid_n) as f64 >= 1.0 {
            return Err(Error::Config(format!(
                "floor {} infeasible for a {}x{} grid",
                self.floor, self.grid_m, self.grid_n
            )));
        }
        Ok(())
    }

    /// Squared bandwidth after `completed_cycles` training cycles.
    pub fn sigma_sq_at(&self, completed_cycles: usize) -> f64 {
        let periods = (completed_cycles / self.anneal_period_cycles) as i32;
        (self.sigma_sq_init * self.sigma_decay.powi(periods)).max(self.sigma_sq_final)
    }
}

/// Running state of instructive prioritization: the (annealed) target
/// distribution over goal-space cells and a histogram of every virtual goal
/// stored so far (the proposal distribution).
#[derive(Clone, Debug)]
pub struct IbsState {
    params: IbsParams,
    spec: GoalDistributionSpec,
    grid: GridSpec,
    target: GridDistribution,
    counts: Vec<u64>,
    total_stored: u64,
    sigma_sq: f64,
}

impl IbsState {
    pub fn new(spec: GoalDistributionSpec, bounds_grid: GridSpec, params: IbsParams) -> Result<IbsState> {
        params.validate()?;
        spec.validate()?;
        let sigma_sq = params.sigma_sq_init;
        let target = build_target_grid(&spec, sigma_sq.sqrt(), &bounds_grid, params.floor)?;
        let cells = bounds_grid.cells();
        Ok(IbsState {
            params,
            spec,
            grid: bounds_grid,
            target,
            counts: vec![0; cells],
            total_stored: 0,
            sigma_sq,
        })
    }

    /// Rebuild a state from explicit pieces (diagnostics and tests); the
    /// target is recomputed from the spec at the given squared bandwidth.
    pub fn from_parts(
        spec: GoalDistributionSpec,
        bounds_grid: GridSpec,
        params: IbsParams,
        sigma_sq: f64,
        counts: Vec<u64>,
    ) -> Result<IbsState> {
        params.validate()?;
        if counts.len() != bounds_grid.cells() {
            return Err(Error::Shape(format!(
                "got {} counts for a grid of {} cells",
                counts.len(),
                bounds_grid.cells()
            )));
        }
        if sigma_sq <= 0.0 {
            return Err(Error::Config(format!("squared bandwidth must be positive, got {sigma_sq}")));
        }
        let target = build_target_grid(&spec, sigma_sq.sqrt(), &bounds_grid, params.floor)?;
        let total_stored = counts.iter().sum();
        Ok(IbsState { params, spec, grid: bounds_grid, target, counts, total_stored, sigma_sq })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn target(&self) -> &GridDistribution {
        &self.target
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn total_stored(&self) -> u64 {
        self.total_stored
    }

    /// Normalized histogram of stored virtual goals; all-zero before the
    /// first goal is stored.
    pub fn proposal_distribution(&self) -> GridDistribution {
        let mut values = vec![0.0; self.counts.len()];
        if self.total_stored > 0 {
            let total = self.total_stored as f64;
            for (v, &c) in values.iter_mut().zip(&self.counts) {
                *v = c as f64 / total;
            }
        }
        GridDistribution { m: self.grid.m, n: self.grid.n, values }
    }

    /// Instructiveness weight of each candidate: how far its cell's target
    /// mass exceeds the mass already stored there, floored so every candidate
    /// keeps a nonzero chance.
    pub fn weights(&self, candidates: &[Vec<f64>]) -> Vec<f64> {
        let proposal = self.proposal_distribution();
        candidates
            .iter()
            .map(|g| {
                let (i, j) = self.grid.bin(g);
                let idx = self.grid.index(i, j);
                (self.target.values[idx] - proposal.values[idx]).max(self.params.floor)
            })
            .collect()
    }

    /// Weights normalized into a sampling distribution over the candidates.
    pub fn priorities(&self, candidates: &[Vec<f64>]) -> Vec<f64> {
        assert!(!candidates.is_empty(), "cannot prioritize an empty candidate set");
        let mut w = self.weights(candidates);
        let total: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= total;
        }
        w
    }

    /// Account for a virtual goal that was actually stored in the buffer.
    pub fn record_stored_goal(&mut self, g: &[f64]) {
        let (i, j) = self.grid.bin(g);
        self.counts[self.grid.index(i, j)] += 1;
        self.total_stored += 1;
    }

    /// Apply the bandwidth schedule after a completed cycle; rebuilds the
    /// target distribution when the bandwidth actually changes.
    pub fn anneal(&mut self, completed_cycles: usize) {
        let next = self.params.sigma_sq_at(completed_cycles);
        if next != self.sigma_sq {
            self.sigma_sq = next;
            self.target = build_target_grid(&self.spec, next.sqrt(), &self.grid, self.params.floor)
                .expect("annealed target rebuild cannot fail after construction succeeded");
        }
    }
}

/// Draw `k` virtual goals from the candidates (with replacement) according to
/// the given sampling distribution.
pub fn sample_virtual_goals<R: Rng>(
    candidates: &[Vec<f64>],
    priorities: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    assert_eq!(candidates.len(), priorities.len(), "one priority per candidate");
    assert!(!candidates.is_empty(), "cannot sample from an empty candidate set");
    let dist = WeightedIndex::new(priorities).expect("priorities must be positive and finite");
    (0..k).map(|_| candidates[dist.sample(rng)].clone()).collect()
}

/// Whether a relabeled transition should enter the buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Skip,
}

/// Drop a virtual transition when its goal was already achieved in the state
/// the action was taken from: such a row rewards the action for something the
/// action had no part in.
pub fn filter_virtual_transition(
    traj: &EpisodeTrajectory,
    t: usize,
    virtual_goal: &[f64],
    reward_fn: &dyn Fn(&[f64], &[f64]) -> f64,
) -> FilterDecision {
    assert!(t < traj.len(), "timestep {t} outside episode of length {}", traj.len());
    if reward_fn(&traj.achieved_goals[t], virtual_goal) == 0.0 {
        FilterDecision::Skip
    } else {
        FilterDecision::Keep
    }
}

/// Per-episode relabeling configuration.
#[derive(Clone, Copy, Debug)]
pub struct HerParams {
    /// Virtual transitions attempted per real transition.
    pub k_virtual: usize,
    /// Drop virtual transitions whose goal was already achieved pre-action.
    pub use_filter: bool,
    /// Prioritize virtual-goal draws by instructiveness (requires an
    /// [`IbsState`]); uniform over candidates otherwise.
    pub use_ibs: bool,
}

/// Counters from storing one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub real_stored: usize,
    pub virtual_stored: usize,
    pub virtual_skipped: usize,
}

/// Store an episode: `T` lived transitions plus up to `k_virtual` relabeled
/// copies per timestep.
///
/// `ibs` may be provided even when `params.use_ibs` is false — the histogram
/// of stored virtual goals keeps tracking the proposal distribution for
/// diagnostics either way. When `use_ibs` is true it must be `Some`.
pub fn store_episode<R: Rng>(
    buffer: &mut PerBuffer,
    traj: &EpisodeTrajectory,
    params: &HerParams,
    mut ibs: Option<&mut IbsState>,
    reward_fn: &dyn Fn(&[f64], &[f64]) -> f64,
    rng: &mut R,
) -> StoreStats {
    traj.assert_consistent();
    assert!(!params.use_ibs || ibs.is_some(), "prioritized sampling needs grid state");
    let t_max = traj.len();
    let mut stats = StoreStats::default();

    for t in 0..t_max {
        buffer.store(Transition {
            observation: traj.observations[t].clone(),
            goal: traj.desired_goal.clone(),
            action: traj.actions[t].clone(),
            reward: traj.rewards[t],
            next_observation: traj.observations[t + 1].clone(),
            achieved_goal: traj.achieved_goals[t].clone(),
            next_achieved_goal: traj.achieved_goals[t + 1].clone(),
            is_virtual: false,
        });
        stats.real_stored += 1;
    }

    if params.k_virtual == 0 {
        return stats;
    }

    for t in 0..t_max {
        let candidates = candidate_goals(traj, t);
        let priorities = match (&ibs, params.use_ibs) {
            (Some(state), true) => state.priorities(candidates),
            _ => vec![1.0 / candidates.len() as f64; candidates.len()],
        };
        let goals = sample_virtual_goals(candidates, &priorities, params.k_virtual, rng);
        for vg in goals {
            if params.use_filter
                && filter_virtual_transition(traj, t, &vg, reward_fn) == FilterDecision::Skip
            {
                stats.virtual_skipped += 1;
                continue;
            }
            let reward = reward_fn(&traj.achieved_goals[t + 1], &vg);
            buffer.store(Transition {
                observation: traj.observations[t].clone(),
                goal: vg.clone(),
                action: traj.actions[t].clone(),
                reward,
                next_observation: traj.observations[t + 1].clone(),
                achieved_goal: traj.achieved_goals[t].clone(),
                next_achieved_goal: traj.achieved_goals[t + 1].clone(),
                is_virtual: true,
            });
            if let Some(state) = ibs.as_deref_mut() {
                state.record_stored_goal(&vg);
            }
            stats.virtual_stored += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goal_dist::Rect;
    use crate::rng::stream;

    /// Planar point-reaching reward: 0 within 0.05, -1 otherwise.
    fn planar_reward(a: &[f64], d: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(d).map(|(x, y)| (x - y) * (x - y)).sum();
        if sq.sqrt() <= 0.05 {
            0.0
        } else {
            -1.0
        }
    }

    /// Hand-built 3-step episode in the plane. The agent starts at (0.1, 0.1)
    /// and drifts right; it never reaches the desired goal at (0.9, 0.9).
    fn episode() -> EpisodeTrajectory {
        let points =
            [[0.1, 0.1], [0.2, 0.1], [0.2, 0.1], [0.3, 0.1]].map(|p| p.to_vec()).to_vec();
        EpisodeTrajectory {
            observations: points.clone(),
            actions: vec![vec![1.0, 0.0]; 3],
            rewards: vec![-1.0; 3],
            achieved_goals: points,
            desired_goal: vec![0.9, 0.9],
        }
    }

    fn unit_grid(m: usize, n: usize) -> GridSpec {
        GridSpec::new(m, n, Rect::xy(0.0, 1.0, 0.0, 1.0).unwrap()).unwrap()
    }

    fn ibs_for_tests() -> IbsState {
        let spec =
            GoalDistributionSpec::UniformRect(Rect::xy(0.55, 0.95, 0.05, 0.95).unwrap());
        IbsState::new(spec, unit_grid(10, 10), IbsParams::default()).unwrap()
    }

    #[test]
    fn candidates_are_strictly_future() {
        let traj = episode();
        assert_eq!(candidate_goals(&traj, 0).len(), 3);
        assert_eq!(candidate_goals(&traj, 2), &[vec![0.3, 0.1]]);
    }

    #[test]
    fn filter_skips_pre_achieved_goals_only() {
        let traj = episode();
        // Steps 1 -> 2 do not move: the goal achieved at step 2 was already
        // achieved before the action at step 1 ran.
        let vg = traj.achieved_goals[2].clone();
        assert_eq!(
            filter_virtual_transition(&traj, 1, &vg, &planar_reward),
            FilterDecision::Skip
        );
        // The same goal seen from step 0 required actual motion.
        assert_eq!(
            filter_virtual_transition(&traj, 0, &vg, &planar_reward),
            FilterDecision::Keep
        );
    }

    #[test]
    fn store_episode_counts_and_flags() {
        let mut buffer = PerBuffer::new(1024, 0.6, 0.4, 1e-3);
        let params = HerParams { k_virtual: 4, use_filter: false, use_ibs: false };
        let stats = store_episode(
            &mut buffer,
            &episode(),
            &params,
            None,
            &planar_reward,
            &mut stream(20, "store"),
        );
        assert_eq!(stats.real_stored, 3);
        assert_eq!(stats.virtual_stored, 12, "k = 4 over 3 steps, nothing filtered");
        assert_eq!(stats.virtual_skipped, 0);
        assert_eq!(buffer.len(), 15);
        let virtual_count = buffer.iter().filter(|t| t.is_virtual).count();
        assert_eq!(virtual_count, 12);
        for t in buffer.iter().filter(|t| !t.is_virtual) {
            assert_eq!(t.goal, vec![0.9, 0.9], "real transitions keep the desired goal");
        }
    }

    #[test]
    fn store_episode_filter_removes_every_violation() {
        let mut buffer = PerBuffer::new(1024, 0.6, 0.4, 1e-3);
        let params = HerParams { k_virtual: 8, use_filter: true, use_ibs: false };
        store_episode(
            &mut buffer,
            &episode(),
            &params,
            None,
            &planar_reward,
            &mut stream(21, "filter"),
        );
        for t in buffer.iter().filter(|t| t.is_virtual) {
            assert_eq!(
                planar_reward(&t.achieved_goal, &t.goal),
                -1.0,
                "no stored virtual transition may start with its goal already achieved"
            );
        }
    }

    #[test]
    fn unfiltered_store_contains_violations_for_a_stalling_episode() {
        let mut buffer = PerBuffer::new(1024, 0.6, 0.4, 1e-3);
        let params = HerParams { k_virtual: 8, use_filter: false, use_ibs: false };
        store_episode(
            &mut buffer,
            &episode(),
            &params,
            None,
            &planar_reward,
            &mut stream(22, "noflt"),
        );
        let violations = buffer
            .iter()
            .filter(|t| t.is_virtual && planar_reward(&t.achieved_goal, &t.goal) == 0.0)
            .count();
        assert!(violations > 0, "the stalled step must produce pre-achieved relabels");
    }

    #[test]
    fn virtual_rewards_score_the_next_achieved_goal() {
        let mut buffer = PerBuffer::new(1024, 0.6, 0.4, 1e-3);
        let params = HerParams { k_virtual: 4, use_filter: true, use_ibs: false };
        store_episode(
            &mut buffer,
            &episode(),
            &params,
            None,
            &planar_reward,
            &mut stream(23, "vrew"),
        );
        for t in buffer.iter().filter(|t| t.is_virtual) {
            assert_eq!(t.reward, planar_reward(&t.next_achieved_goal, &t.goal));
        }
    }

    #[test]
    fn priorities_normalize_and_respect_floor() {
        let mut ibs = ibs_for_tests();
        // Saturate one cell so its weight falls to the floor.
        for _ in 0..1000 {
            ibs.record_stored_goal(&[0.61, 0.51]);
        }
        let candidates = vec![vec![0.61, 0.51], vec![0.85, 0.45]];
        let w = ibs.weights(&candidates);
        assert_eq!(w[0], IbsParams::default().floor, "over-stored cell must hit the floor");
        assert!(w[1] > w[0], "under-stored cell must outweigh the saturated one");
        let p = ibs.priorities(&candidates);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn empty_proposal_gives_target_shaped_weights() {
        let ibs = ibs_for_tests();
        assert_eq!(ibs.total_stored(), 0);
        let inside = vec![0.75, 0.5];
        let outside = vec![0.1, 0.5];
        let w = ibs.weights(&[inside, outside]);
        assert!(
            w[0] > w[1],
            "with nothing stored, weights must follow the target distribution"
        );
    }

    #[test]
    fn sampling_tracks_priorities() {
        let candidates = vec![vec![0.1, 0.1], vec![0.9, 0.9]];
        let priorities = vec![0.25, 0.75];
        let mut rng = stream(24, "vgsample");
        let draws = 40_000;
        let goals = sample_virtual_goals(&candidates, &priorities, draws, &mut rng);
        let hi = goals.iter().filter(|g| g[0] > 0.5).count() as f64 / draws as f64;
        assert!((hi - 0.75).abs() < 0.02, "drawn at {hi}, expected 0.75");
    }

    #[test]
    fn annealing_schedule_decays_and_floors() {
        let params = IbsParams::default();
        assert_eq!(params.sigma_sq_at(0), 2.0);
        assert_eq!(params.sigma_sq_at(49), 2.0);
        assert_eq!(params.sigma_sq_at(50), 2.0 * 0.9);
        assert_eq!(params.sigma_sq_at(100), 2.0 * 0.9 * 0.9);
        // Far in the future the schedule pins at the floor.
        assert_eq!(params.sigma_sq_at(50 * 200), 0.2);
        // Monotone non-increasing along the way.
        let mut prev = f64::INFINITY;
        for c in (0..5000).step_by(50) {
            let v = params.sigma_sq_at(c);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn anneal_rebuilds_target_on_change() {
        let mut ibs = ibs_for_tests();
        let before = ibs.target().values.clone();
        ibs.anneal(10);
        assert_eq!(ibs.target().values, before, "no bandwidth change, no rebuild");
        ibs.anneal(50);
        assert!(ibs.sigma_sq() < 2.0);
        assert_ne!(ibs.target().values, before, "bandwidth change must rebuild the target");
        ibs.target().validate_normalized().unwrap();
    }

    #[test]
    fn ibs_store_records_only_survivors() {
        let mut buffer = PerBuffer::new(4096, 0.6, 0.4, 1e-3);
        let mut ibs = ibs_for_tests();
        let params = HerParams { k_virtual: 6, use_filter: true, use_ibs: true };
        let stats = store_episode(
            &mut buffer,
            &episode(),
            &params,
            Some(&mut ibs),
            &planar_reward,
            &mut stream(25, "ibs-store"),
        );
        assert_eq!(
            ibs.total_stored() as usize,
            stats.virtual_stored,
            "histogram must track stored virtual goals exactly"
        );
        let proposal = ibs.proposal_distribution();
        if stats.virtual_stored > 0 {
            proposal.validate_normalized().unwrap();
        }
    }

    #[test]
    fn params_validation_rejects_bad_values() {
        let mut p = IbsParams::default();
        p.sigma_sq_final = 3.0;
        assert!(p.validate().is_err(), "floor above init must fail");
        let mut p = IbsParams::default();
        p.floor = 0.5;
        assert!(p.validate().is_err(), "floor mass above 1 must fail");
        let mut p = IbsParams::default();
        p.anneal_period_cycles = 0;
        assert!(p.validate().is_err());
        assert!(IbsParams::default().validate().is_ok());
    }
}
