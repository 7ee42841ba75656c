//! `hindsight` — train, evaluate, and analyze goal-conditioned agents.
//!
//! Subcommands:
//!
//! - `train`: run the full training loop for a TOML configuration and
//!   materialize a run directory (config snapshot, learning curves,
//!   checkpoint, goal heatmaps, replay-buffer dump).
//! - `eval`: load a checkpoint and measure the greedy policy.
//! - `vgdist`: discretize a goal distribution into the prioritization target
//!   grid, optionally comparing a run's stored virtual goals against it.
//! - `bias-study`: train plain and filtered relabeling variants across seeds
//!   and tabulate final value-estimation bias.
//! - `aggregate`: combine learning curves from several runs into per-epoch
//!   percentile bands.
//!
//! Every command exits 0 on success, 2 on configuration or parse errors, 3 on
//! numerical failures, and 1 on I/O errors. If `HINDSIGHT_OUT_ROOT` is set,
//! relative run directories land beneath it.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use hindsight::config::{RunConfig, Variant};
use hindsight::ddpg::{run_episode, run_training};
use hindsight::envs::make_env;
use hindsight::goal_dist::{build_target_grid, GoalDistributionSpec, GridSpec, Rect};
use hindsight::io::{
    load_checkpoint, parse_buffer_dump, parse_curves_csv, parse_gmm_toml, parse_samples_csv,
    write_aggregate_csv, write_episode_trace, write_grid_csv, write_run_dir,
};
use hindsight::metrics::{aggregate_curves, evaluate_policy, percentile, q_bias_probe};
use hindsight::replay::Transition;
use hindsight::rng::stream;
use hindsight::{Error, Result};

const OUT_ROOT_ENV: &str = "HINDSIGHT_OUT_ROOT";

#[derive(Parser)]
#[command(name = "hindsight", version, about = "Multi-goal reinforcement learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write a run directory.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint with the greedy policy.
    Eval(EvalArgs),
    /// Build (and compare against) the virtual-goal target distribution.
    Vgdist(VgdistArgs),
    /// Compare value-estimation bias of plain and filtered relabeling.
    BiasStudy(BiasStudyArgs),
    /// Merge learning curves from several runs into percentile bands.
    Aggregate(AggregateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set agent.gamma=0.95 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory (defaults to runs/<env>-<variant>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// TOML configuration describing the environment the agent was trained on.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Number of greedy evaluation episodes.
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    /// Seed for evaluation episodes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a metric,value CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a step-by-step trace of one greedy episode here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct VgdistArgs {
    /// Take the goal distribution from this configuration's environment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override for --config (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Uniform goal distribution over "x_lo,x_hi,y_lo,y_hi".
    #[arg(long, value_name = "RECT")]
    rect: Option<String>,
    /// Gaussian-mixture goal distribution from a TOML file.
    #[arg(long)]
    gmm: Option<PathBuf>,
    /// Empirical goal distribution from a CSV of samples.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Kernel bandwidth used to score cell centers.
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Per-cell probability floor of the target distribution.
    #[arg(long, default_value_t = 0.002)]
    floor: f64,
    /// Grid resolution as "MxN".
    #[arg(long, default_value = "20x20")]
    grid: String,
    /// Grid bounds as "x_lo,x_hi,y_lo,y_hi" (defaults to the environment's
    /// bounds with --config, the unit square otherwise).
    #[arg(long, value_name = "RECT")]
    bounds: Option<String>,
    /// Write the target grid as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram the virtual goals of this buffer dump and report their
    /// divergence from the target.
    #[arg(long, value_name = "BUFFER_DUMP")]
    from_dump: Option<PathBuf>,
}

#[derive(Args)]
struct BiasStudyArgs {
    /// Base TOML configuration (defaults to the bit-flip environment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Comma-separated seeds; at least two.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Write the study table here (always printed to stdout too).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Write the aggregate CSV here (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// curves.csv files or run directories containing one.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Vgdist(args) => run_vgdist(args),
        Command::BiasStudy(args) => run_bias_study(args),
        Command::Aggregate(args) => run_aggregate(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Shape(_) => 2,
        Error::Numeric(_) => 3,
        Error::Io(_) => 1,
    }
}

/// Relative run directories are placed under `HINDSIGHT_OUT_ROOT` when set.
fn resolve_out_dir(dir: &str) -> PathBuf {
    let path = PathBuf::from(dir);
    if path.is_relative() {
        if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
            if !root.is_empty() {
                return PathBuf::from(root).join(path);
            }
        }
    }
    path
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::from_sources(args.config.as_deref(), &args.set)?;
    if let Some(out) = &args.out {
        cfg.run.out_dir = Some(out.display().to_string());
    }
    cfg.validate()?;
    let out_dir = resolve_out_dir(&cfg.run.out_dir.clone().unwrap_or_else(|| cfg.default_out_dir()));
    // Fail before training, not after an hour of it.
    if out_dir.exists() {
        return Err(Error::Config(format!(
            "output directory {} already exists; refusing to overwrite",
            out_dir.display()
        )));
    }
    let artifacts = run_training(&cfg, &mut |row| {
        println!(
            "epoch {:>4}  success {:.3}  final-dist {:.3}  q0 {:>9.3}  return {:>9.3}  eps {:.3}  kl {:.3}",
            row.epoch,
            row.success_rate,
            row.mean_final_distance,
            row.q0_estimate,
            row.empirical_return,
            row.epsilon,
            row.kl_to_target,
        );
    })?;
    write_run_dir(&out_dir, &cfg, &artifacts)?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    if args.episodes == 0 {
        return Err(Error::Config("--episodes must be at least 1".to_string()));
    }
    let cfg = RunConfig::from_sources(args.config.as_deref(), &args.set)?;
    // Evaluation only touches the environment and agent sections; the
    // training schedule and relabeling strategy may be absent or stale.
    cfg.validate_agent()?;
    let mut env = make_env(&cfg.env)?;
    let nets = load_checkpoint(&args.checkpoint)?;
    let sg_dim = env.observation_dim() + env.goal_dim();
    if nets.actor.input_dim() != sg_dim
        || nets.actor.output_dim() != env.action_dim()
        || nets.critic.input_dim() != sg_dim + env.action_dim()
    {
        return Err(Error::Parse(format!(
            "checkpoint dimensions (actor {}->{}, critic {}->1) do not fit environment {} \
             (observation {}, goal {}, action {})",
            nets.actor.input_dim(),
            nets.actor.output_dim(),
            nets.critic.input_dim(),
            env.name(),
            env.observation_dim(),
            env.goal_dim(),
            env.action_dim(),
        )));
    }
    let ac = nets.into_actor_critic(&cfg.agent)?;
    let mut rng = stream(args.seed, "cli-eval");
    let pe = evaluate_policy(env.as_mut(), &ac, args.episodes, &mut rng);
    let qb = q_bias_probe(env.as_mut(), &ac, args.episodes, cfg.agent.gamma, &mut rng);
    let pairs: Vec<(&str, f64)> = vec![
        ("episodes", pe.n_episodes as f64),
        ("success_rate", pe.success_rate),
        ("final_state_success_rate", pe.final_state_success_rate),
        ("mean_final_distance", pe.mean_final_distance),
        ("q0_median", qb.q0_median),
        ("return_median", qb.return_median),
        ("bias", qb.bias()),
    ];
    for (k, v) in &pairs {
        println!("{k} {v}");
    }
    if let Some(out) = &args.out {
        let mut csv = String::from("metric,value\n");
        for (k, v) in &pairs {
            let _ = writeln!(csv, "{k},{v}");
        }
        fs::write(out, csv)?;
    }
    if let Some(trace) = &args.trace {
        let mut reset_rng = stream(args.seed, "cli-trace-reset");
        let mut action_rng = stream(args.seed, "cli-trace-action");
        let traj = run_episode(
            env.as_mut(),
            &ac.actor,
            0.0,
            cfg.agent.noise_scale_fraction,
            &mut reset_rng,
            &mut action_rng,
        );
        fs::write(trace, write_episode_trace(&traj))?;
    }
    Ok(())
}

fn parse_rect_arg(text: &str) -> Result<Rect> {
    let parts = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad rectangle coordinate {p:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let [x_lo, x_hi, y_lo, y_hi] = parts[..] else {
        return Err(Error::Config(format!(
            "rectangle must be x_lo,x_hi,y_lo,y_hi — got {} values",
            parts.len()
        )));
    };
    Rect::xy(x_lo, x_hi, y_lo, y_hi)
}

fn parse_grid_arg(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("grid must look like 20x20, got {text:?}"));
    let (m, n) = text.split_once('x').ok_or_else(bad)?;
    let m: usize = m.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if m == 0 || n == 0 || m > 4096 || n > 4096 {
        return Err(bad());
    }
    Ok((m, n))
}

fn run_vgdist(args: VgdistArgs) -> Result<()> {
    let sources = [
        args.config.is_some(),
        args.rect.is_some(),
        args.gmm.is_some(),
        args.samples.is_some(),
    ];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err(Error::Config(
            "exactly one of --config, --rect, --gmm, --samples must be given".to_string(),
        ));
    }
    let (spec, env_bounds): (GoalDistributionSpec, Option<Rect>) = if args.config.is_some() {
        let cfg = RunConfig::from_sources(args.config.as_deref(), &args.set)?;
        let env = make_env(&cfg.env)?;
        let spec = env.goal_space().ok_or_else(|| {
            Error::Config(format!("environment {} has no planar goal distribution", env.name()))
        })?;
        (spec, env.goal_grid_bounds())
    } else if let Some(rect) = &args.rect {
        (GoalDistributionSpec::UniformRect(parse_rect_arg(rect)?), None)
    } else if let Some(path) = &args.gmm {
        (GoalDistributionSpec::Gmm(parse_gmm_toml(&fs::read_to_string(path)?)?), None)
    } else {
        let path = args.samples.as_ref().unwrap();
        (GoalDistributionSpec::Samples(parse_samples_csv(&fs::read_to_string(path)?)?), None)
    };
    let bounds = match &args.bounds {
        Some(text) => parse_rect_arg(text)?,
        None => match env_bounds {
            Some(b) => b,
            None => Rect::xy(0.0, 1.0, 0.0, 1.0)?,
        },
    };
    let (m, n) = parse_grid_arg(&args.grid)?;
    let grid = GridSpec::new(m, n, bounds)?;
    let target = build_target_grid(&spec, args.sigma, &grid, args.floor)?;
    let min = target.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = target.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("cells {m}x{n}");
    println!("sum {}", target.sum());
    println!("min {min}");
    println!("max {max}");
    if let Some(out) = &args.out {
        fs::write(out, write_grid_csv(&grid, &target, args.sigma))?;
    }
    if let Some(dump) = &args.from_dump {
        let rows = parse_buffer_dump(&fs::read_to_string(dump)?)?;
        let transitions: Vec<Transition> = rows
            .into_iter()
            .map(|r| Transition {
                observation: Vec::new(),
                action: Vec::new(),
                reward: r.reward,
                next_observation: Vec::new(),
                goal: r.goal,
                achieved_goal: r.achieved.clone(),
                next_achieved_goal: r.achieved,
                is_virtual: r.is_virtual,
            })
            .collect();
        let n_virtual = transitions.iter().filter(|t| t.is_virtual).count();
        let (_, kl) = hindsight::metrics::vg_distribution_report(&transitions, &grid, &target)?;
        println!("virtual_rows {n_virtual}");
        println!("kl {kl}");
    }
    Ok(())
}

fn run_bias_study(args: BiasStudyArgs) -> Result<()> {
    let mut base = RunConfig::from_sources(args.config.as_deref(), &args.set)?;
    if base.env.name.is_none() {
        base.env.name = Some("bitflip".to_string());
    }
    let seeds = args
        .seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {s:?}")))
        })
        .collect::<Result<Vec<u64>>>()?;
    if seeds.len() < 2 {
        return Err(Error::Config("a bias study needs at least two seeds".to_string()));
    }
    let mut table = String::from("variant,seed,final_success,q0_estimate,empirical_return,bias\n");
    // Per variant, the per-seed [success, q0, return, bias] quadruples.
    let mut results: Vec<Vec<[f64; 4]>> = Vec::new();
    for variant in [Variant::Her, Variant::FilteredHer] {
        let mut rows = Vec::new();
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.algo.variant = variant;
            cfg.run.seed = seed;
            cfg.validate()?;
            eprintln!("running {variant} seed {seed}...");
            let artifacts = run_training(&cfg, &mut |_| {})?;
            let last = artifacts.curve.last().expect("at least one epoch");
            let bias = last.q0_estimate - last.empirical_return;
            let _ = writeln!(
                table,
                "{variant},{seed},{},{},{},{bias}",
                last.success_rate, last.q0_estimate, last.empirical_return
            );
            rows.push([last.success_rate, last.q0_estimate, last.empirical_return, bias]);
        }
        results.push(rows);
    }
    // Paired per-seed differences (plain minus filtered), summarized by medians.
    let diff_median = |k: usize| {
        let diffs: Vec<f64> =
            (0..seeds.len()).map(|i| results[0][i][k] - results[1][i][k]).collect();
        percentile(&diffs, 50.0)
    };
    let _ = writeln!(
        table,
        "summary,median,{},{},{},{}",
        diff_median(0),
        diff_median(1),
        diff_median(2),
        diff_median(3)
    );
    print!("{table}");
    if let Some(out) = &args.out {
        fs::write(out, table)?;
    }
    Ok(())
}

fn run_aggregate(args: AggregateArgs) -> Result<()> {
    let mut runs = Vec::new();
    for input in &args.inputs {
        let path: PathBuf =
            if input.is_dir() { input.join("curves.csv") } else { input.clone() };
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("cannot read curves from {}: {e}", path.display()))
        })?;
        runs.push(parse_curves_csv(&text)?);
    }
    let aggregate = aggregate_curves(&runs)?;
    let text = write_aggregate_csv(&aggregate);
    match &args.out {
        Some(out) => fs::write(out, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
