//! Run configuration.
//!
//! A run is fully described by one TOML document with five blocks — `[env]`,
//! `[algo]`, `[agent]`, `[run]`, `[metrics]` — every field of which has a
//! default, so an empty document is a valid configuration (for everything but
//! the mandatory `env.name`). Unknown keys are rejected rather than ignored:
//! a typo must fail loudly, not silently train with defaults. Individual
//! fields can be overridden from the command line with dotted-path
//! assignments (`agent.gamma=0.95`) that are patched into the document before
//! deserialization, so overrides obey exactly the same parsing and
//! validation as the file itself.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal_dist::Rect;
use crate::her::IbsParams;
use crate::nn::optim::OptimizerKind;

/// Axis-aligned planar region, spelled out for TOML readability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn to_rect(&self) -> Result<Rect> {
        Rect::xy(self.x_min, self.x_max, self.y_min, self.y_max)
    }
}

/// Environment selection and physical constants. Constants irrelevant to the
/// selected environment are ignored (bitflip does not read gravity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// One of `bitflip`, `hand`, `hand-wall`, `robot`. Mandatory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Episode length; each environment picks its natural default when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Bit count for `bitflip`.
    pub n_bits: usize,
    /// Goal tolerance for the planar tasks.
    pub success_epsilon: f64,
    pub gravity: f64,
    pub max_hand_speed: f64,
    pub grasp_radius: f64,
    /// Height at which a grounded ball rests (its radius).
    pub ball_rest_y: f64,
    /// Probability that an episode starts with the ball already held.
    pub prob_ball_in_hand: f64,
    pub hand_workspace: Region,
    pub target_region: Region,
    pub wall_x: f64,
    pub wall_height: f64,
    pub robot_base: [f64; 2],
    pub link_lengths: [f64; 2],
    pub joint_vel_limit: f64,
}

impl Default for EnvConfig {
    fn default() -> EnvConfig {
        EnvConfig {
            name: None,
            horizon: None,
            n_bits: 8,
            success_epsilon: 0.05,
            gravity: 0.003,
            max_hand_speed: 0.05,
            grasp_radius: 0.05,
            ball_rest_y: 0.02,
            prob_ball_in_hand: 0.5,
            hand_workspace: Region { x_min: 0.05, x_max: 0.35, y_min: 0.05, y_max: 0.95 },
            target_region: Region { x_min: 0.55, x_max: 0.95, y_min: 0.05, y_max: 0.95 },
            wall_x: 0.45,
            wall_height: 0.5,
            robot_base: [0.2, 0.3],
            link_lengths: [0.25, 0.25],
            joint_vel_limit: 0.15,
        }
    }
}

/// Which combination of relabeling refinements to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain future-strategy relabeling.
    Her,
    /// Instructive virtual-goal prioritization on top of relabeling.
    HerIbs,
    /// Relabeling with misleading transitions filtered out.
    FilteredHer,
    /// Both refinements together.
    FilteredHerIbs,
}

impl Variant {
    pub fn uses_filter(self) -> bool {
        matches!(self, Variant::FilteredHer | Variant::FilteredHerIbs)
    }

    pub fn uses_ibs(self) -> bool {
        matches!(self, Variant::HerIbs | Variant::FilteredHerIbs)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Her => "her",
            Variant::HerIbs => "her-ibs",
            Variant::FilteredHer => "filtered-her",
            Variant::FilteredHerIbs => "filtered-her-ibs",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prioritized-replay tunables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerConfig {
    /// Exponent shaping how strongly TD error drives sampling.
    pub alpha: f64,
    /// Importance-weight exponent at the start of training…
    pub beta_init: f64,
    /// …and its value at the final scheduled optimization step.
    pub beta_final: f64,
    /// Additive floor keeping zero-error transitions sampleable.
    pub priority_floor: f64,
}

impl Default for PerConfig {
    fn default() -> PerConfig {
        PerConfig { alpha: 0.6, beta_init: 0.4, beta_final: 1.0, priority_floor: 1e-3 }
    }
}

/// Relabeling strategy block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub variant: Variant,
    /// Virtual transitions attempted per real transition.
    pub k_virtual: usize,
    pub ibs: IbsParams,
    pub per: PerConfig,
}

impl Default for AlgoConfig {
    fn default() -> AlgoConfig {
        AlgoConfig {
            variant: Variant::FilteredHerIbs,
            k_virtual: 4,
            ibs: IbsParams::default(),
            per: PerConfig::default(),
        }
    }
}

/// How target networks follow the online networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSyncMode {
    /// Copy wholesale every `target_sync_period` optimization steps.
    Hard,
    /// Exponentially track with coefficient `polyak_coefficient` every step.
    Polyak,
}

/// Agent hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub buffer_capacity: usize,
    /// Exploration schedule: epsilon at epoch k is
    /// `max(epsilon_final, epsilon_init * epsilon_decay^k)`.
    pub epsilon_init: f64,
    pub epsilon_decay: f64,
    pub epsilon_final: f64,
    /// Gaussian exploration noise, as a fraction of each action range.
    pub noise_scale_fraction: f64,
    pub batch_size: usize,
    pub target_sync_period: usize,
    pub target_sync_mode: TargetSyncMode,
    pub polyak_coefficient: f64,
    pub hidden_sizes: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for AgentConfig {
    fn default() -> AgentConfig {
        AgentConfig {
            gamma: 0.98,
            buffer_capacity: 1_000_000,
            epsilon_init: 1.0,
            epsilon_decay: 0.95,
            epsilon_final: 0.05,
            noise_scale_fraction: 0.05,
            batch_size: 64,
            target_sync_period: 7,
            target_sync_mode: TargetSyncMode::Hard,
            polyak_coefficient: 0.005,
            hidden_sizes: vec![64, 64, 64],
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.001,
            clip_norm: 3.0,
        }
    }
}

/// Training schedule and output layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSchedule {
    pub seed: u64,
    pub epochs: usize,
    pub cycles_per_epoch: usize,
    pub episodes_per_cycle: usize,
    pub optimization_steps_per_cycle: usize,
    /// Greedy evaluation episodes per epoch.
    pub eval_episodes: usize,
    /// Where the run directory goes; defaults to
    /// `runs/{env}-{variant}-seed{seed}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Write the replay buffer's goal columns at the end of the run.
    pub dump_buffer: bool,
    /// Write target/proposal heatmap grids (planar environments only).
    pub write_heatmaps: bool,
}

impl Default for RunSchedule {
    fn default() -> RunSchedule {
        RunSchedule {
            seed: 0,
            epochs: 50,
            cycles_per_epoch: 50,
            episodes_per_cycle: 16,
            optimization_steps_per_cycle: 40,
            eval_episodes: 50,
            out_dir: None,
            dump_buffer: true,
            write_heatmaps: true,
        }
    }
}

/// Evaluation-only knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Kernel bandwidth of the *fixed* reference target distribution that
    /// the per-epoch KL diagnostic compares against (the annealed training
    /// target keeps moving; curves need a stationary yardstick).
    pub reference_sigma: f64,
}

impl Default for MetricsConfig {
    fn default() -> MetricsConfig {
        MetricsConfig { reference_sigma: 0.2 }
    }
}

/// Everything a run needs, as parsed from one TOML document.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub algo: AlgoConfig,
    pub agent: AgentConfig,
    pub run: RunSchedule,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    /// Parse a TOML document. An empty document yields the defaults.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("configuration: {e}")))
    }

    /// Read and parse a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml_str(&text)
    }

    /// Build a configuration from an optional file plus dotted-path
    /// overrides, e.g. `agent.gamma=0.95` or `env.name=hand`. Overrides are
    /// patched into the document *before* deserialization, so they get the
    /// same unknown-key and type checking as the file.
    pub fn from_sources(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::Parse(format!("configuration: {e}")))?
            }
            None => toml::Value::try_from(RunConfig::default())
                .expect("defaults always serialize"),
        };
        for spec in overrides {
            apply_override(&mut value, spec)?;
        }
        value.try_into().map_err(|e| Error::Parse(format!("configuration: {e}")))
    }

    /// Serialize for the run-directory snapshot.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize: {e}")))
    }

    /// Default run-directory name for this configuration.
    pub fn default_out_dir(&self) -> String {
        format!(
            "runs/{}-{}-seed{}",
            self.env.name.as_deref().unwrap_or("unknown"),
            self.algo.variant,
            self.run.seed
        )
    }

    /// Cross-field checks beyond what deserialization can express.
    pub fn validate(&self) -> Result<()> {
        self.validate_agent()?;
        let p = &self.algo.per;
        for (label, v) in
            [("per.alpha", p.alpha), ("per.beta_init", p.beta_init), ("per.beta_final", p.beta_final)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{label} must lie in [0, 1], got {v}")));
            }
        }
        if p.beta_init > p.beta_final {
            return Err(Error::Config("beta_init must not exceed beta_final".into()));
        }
        if !(p.priority_floor > 0.0) {
            return Err(Error::Config("priority_floor must be positive".into()));
        }
        self.algo.ibs.validate()?;
        let r = &self.run;
        if r.epochs == 0 || r.cycles_per_epoch == 0 || r.episodes_per_cycle == 0 {
            return Err(Error::Config("epochs, cycles, and episodes must all be positive".into()));
        }
        if r.optimization_steps_per_cycle == 0 {
            return Err(Error::Config("optimization_steps_per_cycle must be positive".into()));
        }
        if r.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        if !(self.metrics.reference_sigma > 0.0) {
            return Err(Error::Config("reference_sigma must be positive".into()));
        }
        if self.algo.variant.uses_ibs() && self.env.name.as_deref() == Some("bitflip") {
            return Err(Error::Config(
                "instructive prioritization needs a planar goal space; bitflip has none \
                 (use variant her or filtered-her)"
                    .into(),
            ));
        }
        Ok(())
    }

    /// The subset of [`RunConfig::validate`] that evaluation-only workflows
    /// need: the environment and agent sections, ignoring training schedule
    /// and relabeling strategy.
    pub fn validate_agent(&self) -> Result<()> {
        let a = &self.agent;
        if !(a.gamma > 0.0 && a.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", a.gamma)));
        }
        for (label, v) in [("epsilon_init", a.epsilon_init), ("epsilon_final", a.epsilon_final)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{label} must lie in [0, 1], got {v}")));
            }
        }
        if !(a.epsilon_decay > 0.0 && a.epsilon_decay <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon_decay must lie in (0, 1], got {}",
                a.epsilon_decay
            )));
        }
        if a.epsilon_final > a.epsilon_init {
            return Err(Error::Config("epsilon_final must not exceed epsilon_init".into()));
        }
        if a.noise_scale_fraction < 0.0 {
            return Err(Error::Config("noise_scale_fraction must be nonnegative".into()));
        }
        if a.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if a.buffer_capacity < a.batch_size {
            return Err(Error::Config(format!(
                "buffer capacity {} cannot hold a batch of {}",
                a.buffer_capacity, a.batch_size
            )));
        }
        if a.hidden_sizes.is_empty() || a.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes must be non-empty and positive".into()));
        }
        if !(a.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(a.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if a.target_sync_period == 0 {
            return Err(Error::Config("target_sync_period must be positive".into()));
        }
        if !(a.polyak_coefficient > 0.0 && a.polyak_coefficient <= 1.0) {
            return Err(Error::Config("polyak_coefficient must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Patch one `path.to.key=value` assignment into a TOML document. The value
/// side is parsed as TOML when possible (numbers, booleans, arrays, quoted
/// strings) and falls back to a bare string otherwise, so `env.name=hand`
/// and `env.name="hand"` both work.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, rhs) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override '{spec}' is not of the form key=value")))?;
    let path = path.trim();
    let rhs = rhs.trim();
    if path.is_empty() {
        return Err(Error::Parse(format!("override '{spec}' has an empty key")));
    }
    let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {rhs}")) {
        Ok(mut table) => table.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(rhs.to_string()),
    };
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Parse(format!("override '{spec}' has an empty path segment")));
    }
    let mut node = root;
    for segment in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::Parse(format!("override '{spec}': '{segment}' is not a table"))
        })?;
        node = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let last = segments[segments.len() - 1];
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Parse(format!("override '{spec}': parent of '{last}' is not a table")))?;
    table.insert(last.to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_configuration() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.agent.gamma, 0.98);
        assert_eq!(cfg.agent.batch_size, 64);
        assert_eq!(cfg.algo.k_virtual, 4);
        assert_eq!(cfg.algo.variant, Variant::FilteredHerIbs);
        assert_eq!(cfg.run.epochs, 50);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[agent]\ngama = 0.9\n").is_err(), "typo must fail");
        assert!(RunConfig::from_toml_str("[agnt]\ngamma = 0.9\n").is_err());
    }

    #[test]
    fn partial_documents_merge_with_defaults() {
        let cfg = RunConfig::from_toml_str("[env]\nname = \"hand\"\n[agent]\ngamma = 0.9\n").unwrap();
        assert_eq!(cfg.env.name.as_deref(), Some("hand"));
        assert_eq!(cfg.agent.gamma, 0.9);
        assert_eq!(cfg.agent.batch_size, 64, "unspecified fields keep defaults");
    }

    #[test]
    fn snapshot_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.env.name = Some("hand-wall".to_string());
        cfg.run.seed = 7;
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_parse_types_and_fall_back_to_strings() {
        let mut value = toml::Value::try_from(RunConfig::default()).unwrap();
        apply_override(&mut value, "agent.gamma=0.9").unwrap();
        apply_override(&mut value, "env.name=hand").unwrap();
        apply_override(&mut value, "run.dump_buffer=false").unwrap();
        apply_override(&mut value, "agent.hidden_sizes=[32, 32]").unwrap();
        let cfg: RunConfig = value.try_into().unwrap();
        assert_eq!(cfg.agent.gamma, 0.9);
        assert_eq!(cfg.env.name.as_deref(), Some("hand"));
        assert!(!cfg.run.dump_buffer);
        assert_eq!(cfg.agent.hidden_sizes, vec![32, 32]);
    }

    #[test]
    fn overrides_reject_malformed_specs_and_bad_keys() {
        let mut value = toml::Value::try_from(RunConfig::default()).unwrap();
        assert!(apply_override(&mut value, "no-equals-sign").is_err());
        assert!(apply_override(&mut value, "=5").is_err());
        // A misspelled key patches fine but fails deserialization.
        let mut value = toml::Value::try_from(RunConfig::default()).unwrap();
        apply_override(&mut value, "agent.gama=0.9").unwrap();
        assert!(value.try_into::<RunConfig>().is_err());
    }

    #[test]
    fn from_sources_without_a_file_starts_from_defaults() {
        let cfg =
            RunConfig::from_sources(None, &["env.name=bitflip".to_string(), "run.seed=3".to_string()])
                .unwrap();
        assert_eq!(cfg.env.name.as_deref(), Some("bitflip"));
        assert_eq!(cfg.run.seed, 3);
        assert_eq!(cfg.agent.gamma, 0.98);
    }

    #[test]
    fn validation_catches_out_of_range_values() {
        let mut cfg = RunConfig::default();
        cfg.env.name = Some("hand".to_string());
        assert!(cfg.validate().is_ok());
        cfg.agent.gamma = 1.0;
        assert!(cfg.validate().is_err(), "gamma = 1 would unbound the value range");
        let mut cfg = RunConfig::default();
        cfg.env.name = Some("hand".to_string());
        cfg.agent.buffer_capacity = 8;
        assert!(cfg.validate().is_err(), "capacity below batch size");
        let mut cfg = RunConfig::default();
        cfg.env.name = Some("hand".to_string());
        cfg.algo.per.beta_init = 0.9;
        cfg.algo.per.beta_final = 0.5;
        assert!(cfg.validate().is_err(), "beta must anneal upward");
    }

    #[test]
    fn prioritization_is_rejected_on_bitflip() {
        let mut cfg = RunConfig::default();
        cfg.env.name = Some("bitflip".to_string());
        assert!(cfg.validate().is_err(), "default variant prioritizes; bitflip cannot");
        cfg.algo.variant = Variant::FilteredHer;
        assert!(cfg.validate().is_ok());
        cfg.algo.variant = Variant::Her;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn variant_flags_and_names() {
        assert!(!Variant::Her.uses_filter() && !Variant::Her.uses_ibs());
        assert!(Variant::FilteredHer.uses_filter() && !Variant::FilteredHer.uses_ibs());
        assert!(!Variant::HerIbs.uses_filter() && Variant::HerIbs.uses_ibs());
        assert!(Variant::FilteredHerIbs.uses_filter() && Variant::FilteredHerIbs.uses_ibs());
        assert_eq!(Variant::FilteredHerIbs.to_string(), "filtered-her-ibs");
        let v: Variant = toml::from_str::<toml::Table>("v = \"filtered-her\"")
            .unwrap()
            .remove("v")
            .unwrap()
            .try_into()
            .unwrap();
        assert_eq!(v, Variant::FilteredHer);
    }

    #[test]
    fn default_out_dir_is_descriptive() {
        let mut cfg = RunConfig::default();
        cfg.env.name = Some("hand".to_string());
        cfg.run.seed = 11;
        assert_eq!(cfg.default_out_dir(), "runs/hand-filtered-her-ibs-seed11");
    }
}
