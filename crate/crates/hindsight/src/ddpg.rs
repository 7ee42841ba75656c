//! Goal-conditioned DDPG.
//!
//! An actor maps `observation ‖ goal` to a continuous action through a tanh
//! output; a critic scores `observation ‖ goal ‖ action` with a linear head.
//! The critic standardizes every layer input with frozen running statistics
//! during the forward/backward pass and refreshes those statistics *after*
//! each optimization step, so gradients stay exact for the loss actually
//! computed. Slowly-tracking target copies of both networks stabilize the
//! bootstrap target
//!
//! ```text
//! y = clamp(r + gamma * Q'(s' ‖ g, pi'(s' ‖ g)), -1 / (1 - gamma), 0)
//! ```
//!
//! whose clamp encodes that discounted sums of {-1, 0} rewards can never
//! leave that interval — the first line of defense against value
//! overestimation. Exploration is epsilon-scheduled per epoch with three
//! branches: greedy, Gaussian-perturbed greedy, or uniform.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{RunConfig, TargetSyncMode};
use crate::envs::{make_env, Environment};
use crate::error::Result;
use crate::goal_dist::{build_target_grid, kl_divergence, GridDistribution, GridSpec};
use crate::her::{self, EpisodeTrajectory, HerParams, IbsState};
use crate::metrics::{evaluate_policy, q_bias_probe, EpochRow};
use crate::nn::optim::OptimizerState;
use crate::nn::{clip_gradients, sync_target, Activation, Grads, Mlp, SyncMode};
use crate::replay::{PerBuffer, SampledBatch};
use crate::rng::{stream, substream};

/// Online and target networks plus their optimizers.
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
}

/// Scale a network's output layer close to zero so initial predictions start
/// near the origin: the actor begins on the plastic part of tanh instead of
/// half-saturated, and the critic builds value estimates up from rewards
/// rather than from init noise.
fn shrink_output_layer(net: &mut Mlp) {
    let last = net.layers.last_mut().expect("network has layers");
    for w in &mut last.w {
        *w *= 1e-2;
    }
}

impl ActorCritic {
    /// Build actor and critic for the given problem dimensions. The actor
    /// uses relu hidden layers and a tanh output without normalization; the
    /// critic standardizes the observation ‖ goal part of its input and ends
    /// linear. Targets start as exact copies.
    pub fn new(
        obs_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        cfg: &crate::config::AgentConfig,
        rng_actor: &mut ChaCha8Rng,
        rng_critic: &mut ChaCha8Rng,
    ) -> Result<ActorCritic> {
        let hidden = &cfg.hidden_sizes;
        let n_layers = hidden.len() + 1;

        let mut actor_sizes = vec![obs_dim + goal_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(action_dim);
        let mut actor_acts = vec![Activation::Relu; n_layers - 1];
        actor_acts.push(Activation::Tanh);
        let mut actor = Mlp::init(&actor_sizes, &actor_acts, &vec![false; n_layers], rng_actor)?;
        shrink_output_layer(&mut actor);

        let mut critic_sizes = vec![obs_dim + goal_dim + action_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        let mut critic_acts = vec![Activation::Relu; n_layers - 1];
        critic_acts.push(Activation::Linear);
        // Standardization guards only the observation ‖ goal path, at the
        // input. Action coordinates keep the identity transform (they are
        // tanh-bounded already), and hidden layers stay raw: re-standardizing
        // learned features hands the policy-gradient ascent a landscape full
        // of variance-amplified false summits, and a critic that can be
        // driven above zero off-distribution breaks the value bound that
        // target clamping is supposed to guarantee.
        let mut critic_norms = vec![false; n_layers];
        critic_norms[0] = true;
        let mut critic = Mlp::init(&critic_sizes, &critic_acts, &critic_norms, rng_critic)?;
        shrink_output_layer(&mut critic);

        let actor_opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.clip_norm, &actor)?;
        let critic_opt =
            OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.clip_norm, &critic)?;
        Ok(ActorCritic {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
        })
    }
}

/// `a ‖ b`.
pub fn concat2(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// `a ‖ b ‖ c`.
pub fn concat3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len() + c.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v.extend_from_slice(c);
    v
}

/// The actor's action for `observation ‖ goal`, clamped to the bounds.
pub fn greedy_action(actor: &Mlp, obs: &[f64], goal: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    let mut a = actor.forward_one(&concat2(obs, goal));
    assert_eq!(a.len(), bounds.len(), "actor output and action bounds disagree");
    for (v, &(lo, hi)) in a.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
    a
}

/// Epsilon-scheduled exploration. One uniform draw selects the branch:
/// with probability `1 - epsilon` the greedy action runs as-is; within the
/// exploring mass, 80% perturbs the greedy action with Gaussian noise of
/// standard deviation `noise_fraction` of each action range and 20% draws
/// uniformly from the action box. Binary coordinates (like a gripper) are
/// snapped to the nearer bound in the exploring branches instead of carrying
/// intermediate values.
pub fn select_action<R: Rng>(
    actor: &Mlp,
    obs: &[f64],
    goal: &[f64],
    epsilon: f64,
    noise_fraction: f64,
    bounds: &[(f64, f64)],
    binary_coords: &[usize],
    rng: &mut R,
) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&epsilon), "epsilon must lie in [0, 1], got {epsilon}");
    let u: f64 = rng.gen();
    if u >= epsilon {
        return greedy_action(actor, obs, goal, bounds);
    }
    let mut a = if u < 0.8 * epsilon {
        let mut a = greedy_action(actor, obs, goal, bounds);
        for (v, &(lo, hi)) in a.iter_mut().zip(bounds) {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v + noise_fraction * (hi - lo) * z).clamp(lo, hi);
        }
        a
    } else {
        bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect()
    };
    for &c in binary_coords {
        let (lo, hi) = bounds[c];
        a[c] = if a[c] > 0.5 * (lo + hi) { hi } else { lo };
    }
    a
}

/// Bootstrap targets for a batch, from the target networks:
/// `y = clamp(r + gamma * Q'(s' ‖ g, pi'(s' ‖ g)), -1 / (1 - gamma), 0)`.
pub fn critic_targets(ac: &ActorCritic, batch: &[crate::replay::Transition], gamma: f64) -> Vec<f64> {
    let next_in: Vec<Vec<f64>> =
        batch.iter().map(|t| concat2(&t.next_observation, &t.goal)).collect();
    let (next_actions, _) = ac.actor_target.forward(&next_in);
    let q_in: Vec<Vec<f64>> = batch
        .iter()
        .zip(&next_actions)
        .map(|(t, a)| concat3(&t.next_observation, &t.goal, a))
        .collect();
    let (q_next, _) = ac.critic_target.forward(&q_in);
    let lower = -1.0 / (1.0 - gamma);
    batch
        .iter()
        .zip(&q_next)
        .map(|(t, q)| (t.reward + gamma * q[0]).clamp(lower, 0.0))
        .collect()
}

/// Deterministic-policy-gradient pieces for one batch of `observation ‖ goal`
/// inputs: the actor loss `-mean Q(s ‖ g, pi(s ‖ g))` and its exact gradient
/// with respect to the actor's parameters, obtained by backpropagating
/// through the (frozen) critic and slicing out the action coordinates.
pub fn actor_gradients(actor: &Mlp, critic: &Mlp, inputs: &[Vec<f64>]) -> (f64, Grads) {
    let n = inputs.len();
    assert!(n > 0, "need a non-empty batch");
    let (actions, actor_cache) = actor.forward(inputs);
    let q_in: Vec<Vec<f64>> =
        inputs.iter().zip(&actions).map(|(sg, a)| concat2(sg, a)).collect();
    let (q, critic_cache) = critic.forward(&q_in);
    let loss = -q.iter().map(|row| row[0]).sum::<f64>() / n as f64;
    let grad_q = vec![vec![-1.0 / n as f64]; n];
    let (_, grad_in) = critic.backward(&critic_cache, &grad_q);
    let sg_dim = actor.input_dim();
    let grad_actions: Vec<Vec<f64>> = grad_in.iter().map(|row| row[sg_dim..].to_vec()).collect();
    let (grads, _) = actor.backward(&actor_cache, &grad_actions);
    (loss, grads)
}

/// Outcome of one optimization step.
pub struct TrainStats {
    /// Importance-weighted mean squared TD error.
    pub critic_loss: f64,
    /// `-mean Q` under the current actor.
    pub actor_loss: f64,
    /// `|td|` per batch row, for priority updates.
    pub td_abs: Vec<f64>,
}

/// One DDPG optimization step on a prioritized batch: critic regression
/// toward the clamped bootstrap target (importance-weighted), then the
/// deterministic policy gradient for the actor, then a refresh of the
/// critic's input statistics from this batch.
pub fn train_step(ac: &mut ActorCritic, batch: &SampledBatch, gamma: f64) -> Result<TrainStats> {
    let n = batch.transitions.len();
    assert!(n > 0, "empty batch");
    assert_eq!(batch.weights.len(), n);

    // Critic: weighted MSE toward y.
    let inputs: Vec<Vec<f64>> = batch
        .transitions
        .iter()
        .map(|t| concat3(&t.observation, &t.goal, &t.action))
        .collect();
    let (q, cache) = ac.critic.forward(&inputs);
    let y = critic_targets(ac, &batch.transitions, gamma);
    let td: Vec<f64> = q.iter().zip(&y).map(|(row, yi)| row[0] - yi).collect();
    let critic_loss =
        td.iter().zip(&batch.weights).map(|(t, w)| w * t * t).sum::<f64>() / n as f64;
    let grad_out: Vec<Vec<f64>> =
        td.iter().zip(&batch.weights).map(|(t, w)| vec![2.0 * w * t / n as f64]).collect();
    let (mut critic_grads, _) = ac.critic.backward(&cache, &grad_out);
    clip_gradients(&mut critic_grads, ac.critic_opt.clip_norm);

    // Actor: deterministic policy gradient through the pre-update critic.
    let sg_inputs: Vec<Vec<f64>> = batch
        .transitions
        .iter()
        .map(|t| concat2(&t.observation, &t.goal))
        .collect();
    let (actor_loss, mut actor_grads) = actor_gradients(&ac.actor, &ac.critic, &sg_inputs);
    clip_gradients(&mut actor_grads, ac.actor_opt.clip_norm);

    ac.critic_opt.apply(&mut ac.critic, &critic_grads)?;
    ac.actor_opt.apply(&mut ac.actor, &actor_grads)?;
    // Statistics move only after the gradients that assumed them are taken,
    // and only for the observation ‖ goal prefix of the critic input.
    let sg_dim = ac.actor.input_dim();
    ac.critic.update_norm_stats_prefix(&cache, sg_dim);

    Ok(TrainStats { critic_loss, actor_loss, td_abs: td.iter().map(|t| t.abs()).collect() })
}

/// Roll out one episode under the exploration policy.
pub fn run_episode(
    env: &mut dyn Environment,
    actor: &Mlp,
    epsilon: f64,
    noise_fraction: f64,
    reset_rng: &mut ChaCha8Rng,
    action_rng: &mut ChaCha8Rng,
) -> EpisodeTrajectory {
    let bounds = env.action_bounds();
    let binary = env.binary_action_coords();
    let start = env.reset(reset_rng);
    let goal = start.desired_goal;
    let mut observations = vec![start.observation];
    let mut achieved_goals = vec![start.achieved_goal];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    loop {
        let a = select_action(
            actor,
            observations.last().unwrap(),
            &goal,
            epsilon,
            noise_fraction,
            &bounds,
            &binary,
            action_rng,
        );
        let out = env.step(&a);
        actions.push(a);
        rewards.push(out.reward);
        observations.push(out.observation);
        achieved_goals.push(out.achieved_goal);
        if out.done {
            break;
        }
    }
    EpisodeTrajectory { observations, actions, rewards, achieved_goals, desired_goal: goal }
}

/// Everything a finished run hands back to the caller.
pub struct RunArtifacts {
    pub curve: Vec<EpochRow>,
    pub ac: ActorCritic,
    pub buffer: PerBuffer,
    /// Present for environments with a planar goal space.
    pub ibs: Option<IbsState>,
    /// Fixed reference target the KL diagnostic compares against.
    pub reference_target: Option<GridDistribution>,
}

/// Train an agent per the configuration. `on_epoch` fires after each epoch's
/// evaluation with the freshly computed row, for progress reporting.
///
/// The loop structure is epochs → cycles → (episodes, then optimization
/// steps). Exploration epsilon decays per epoch; the replay buffer's
/// importance exponent anneals linearly over *scheduled* optimization steps
/// (steps skipped while the buffer is still smaller than a batch are
/// scheduled all the same, so the annealing endpoint does not depend on the
/// warm-up length); the bandwidth of the prioritization target anneals per
/// completed cycle. Every random decision draws from a named stream of the
/// run seed, which makes reruns bit-identical.
pub fn run_training(
    cfg: &RunConfig,
    on_epoch: &mut dyn FnMut(&EpochRow),
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut env = make_env(&cfg.env)?;
    let mut eval_env = make_env(&cfg.env)?;
    let seed = cfg.run.seed;

    let mut ac = ActorCritic::new(
        env.observation_dim(),
        env.goal_dim(),
        env.action_dim(),
        &cfg.agent,
        &mut stream(seed, "actor-init"),
        &mut stream(seed, "critic-init"),
    )?;
    let mut buffer = PerBuffer::new(
        cfg.agent.buffer_capacity,
        cfg.algo.per.alpha,
        cfg.algo.per.beta_init,
        cfg.algo.per.priority_floor,
    );

    // Planar goal spaces get the full prioritization state (the proposal
    // histogram doubles as a diagnostic even for unprioritized variants) and
    // a fixed reference target for the KL curve.
    let (mut ibs, reference_target) = match (env.goal_grid_bounds(), env.goal_space()) {
        (Some(bounds), Some(spec)) => {
            let grid = GridSpec::new(cfg.algo.ibs.grid_m, cfg.algo.ibs.grid_n, bounds)?;
            let reference =
                build_target_grid(&spec, cfg.metrics.reference_sigma, &grid, cfg.algo.ibs.floor)?;
            let state = IbsState::new(spec, grid, cfg.algo.ibs.clone())?;
            (Some(state), Some(reference))
        }
        _ => (None, None),
    };

    let her_params = HerParams {
        k_virtual: cfg.algo.k_virtual,
        use_filter: cfg.algo.variant.uses_filter(),
        use_ibs: cfg.algo.variant.uses_ibs(),
    };
    let mut reset_rng = stream(seed, "env-reset");
    let mut action_rng = stream(seed, "action");
    let mut her_rng = stream(seed, "her");
    let mut per_rng = stream(seed, "per");

    let gamma = cfg.agent.gamma;
    let total_scheduled =
        (cfg.run.epochs * cfg.run.cycles_per_epoch * cfg.run.optimization_steps_per_cycle) as f64;
    let mut scheduled_steps = 0u64;
    let mut executed_steps = 0u64;
    let mut optimization_cycles = 0u64;
    let mut completed_cycles = 0usize;
    let mut curve = Vec::with_capacity(cfg.run.epochs);

    for epoch in 0..cfg.run.epochs {
        let epsilon = (cfg.agent.epsilon_init * cfg.agent.epsilon_decay.powi(epoch as i32))
            .max(cfg.agent.epsilon_final);

        for _cycle in 0..cfg.run.cycles_per_epoch {
            for _episode in 0..cfg.run.episodes_per_cycle {
                let traj = run_episode(
                    env.as_mut(),
                    &ac.actor,
                    epsilon,
                    cfg.agent.noise_scale_fraction,
                    &mut reset_rng,
                    &mut action_rng,
                );
                let reward_fn = |a: &[f64], d: &[f64]| env.reward(a, d);
                her::store_episode(
                    &mut buffer,
                    &traj,
                    &her_params,
                    ibs.as_mut(),
                    &reward_fn,
                    &mut her_rng,
                );
            }

            let steps_before_cycle = executed_steps;
            for _step in 0..cfg.run.optimization_steps_per_cycle {
                scheduled_steps += 1;
                let frac = scheduled_steps as f64 / total_scheduled;
                let beta = cfg.algo.per.beta_init
                    + (cfg.algo.per.beta_final - cfg.algo.per.beta_init) * frac;
                buffer.set_beta(beta.min(cfg.algo.per.beta_final));
                if buffer.len() < cfg.agent.batch_size {
                    continue;
                }
                let batch = buffer.sample(cfg.agent.batch_size, &mut per_rng);
                let stats = train_step(&mut ac, &batch, gamma)?;
                buffer.update_priorities(&batch.indices, &stats.td_abs);
                executed_steps += 1;
                if let TargetSyncMode::Polyak = cfg.agent.target_sync_mode {
                    let tau = cfg.agent.polyak_coefficient;
                    sync_target(&mut ac.actor_target, &ac.actor, SyncMode::Polyak(tau));
                    sync_target(&mut ac.critic_target, &ac.critic, SyncMode::Polyak(tau));
                }
            }
            // Hard sync counts optimization cycles, not steps: the targets hold
            // still for `target_sync_period` whole cycles of regression.
            if executed_steps > steps_before_cycle {
                optimization_cycles += 1;
                if matches!(cfg.agent.target_sync_mode, TargetSyncMode::Hard)
                    && optimization_cycles % cfg.agent.target_sync_period as u64 == 0
                {
                    sync_target(&mut ac.actor_target, &ac.actor, SyncMode::Hard);
                    sync_target(&mut ac.critic_target, &ac.critic, SyncMode::Hard);
                }
            }

            completed_cycles += 1;
            if let Some(state) = ibs.as_mut() {
                state.anneal(completed_cycles);
            }
        }

        let mut eval_rng = substream(seed, "eval", epoch as u64);
        let pe = evaluate_policy(eval_env.as_mut(), &ac, cfg.run.eval_episodes, &mut eval_rng);
        let qb = q_bias_probe(eval_env.as_mut(), &ac, cfg.run.eval_episodes, gamma, &mut eval_rng);
        let (kl_to_target, sigma_sq) = match (&ibs, &reference_target) {
            (Some(state), Some(reference)) => {
                let proposal = state.proposal_distribution();
                (kl_divergence(reference, &proposal)?, state.sigma_sq())
            }
            _ => (f64::NAN, f64::NAN),
        };
        let row = EpochRow {
            epoch,
            success_rate: pe.success_rate,
            mean_final_distance: pe.mean_final_distance,
            q0_estimate: qb.q0_median,
            empirical_return: qb.return_median,
            epsilon,
            kl_to_target,
            sigma_sq,
        };
        on_epoch(&row);
        curve.push(row);
    }

    Ok(RunArtifacts { curve, ac, buffer, ibs, reference_target })
}
