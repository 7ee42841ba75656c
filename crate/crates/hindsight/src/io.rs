//! On-disk formats: network checkpoints, CSV tables, run directories.
//!
//! Everything here is deliberately boring and strict. Floating-point values
//! are written with Rust's shortest-roundtrip `Display` formatting, so a
//! write→parse→write cycle is byte-identical; parsers validate lengths and
//! caps before allocating, reject non-finite values where the format forbids
//! them, and report malformed input as [`Error::Parse`] rather than
//! panicking — the decoders double as fuzzing surfaces.
//!
//! The checkpoint container is a little-endian binary format:
//!
//! ```text
//! "HERC" | version u32 | net_count u32
//! per net:    name_len u32 | name utf-8 | layer_count u32
//! per layer:  in_dim u32 | out_dim u32 | activation u8 | normalized u8
//!             w f64*(out*in) | b f64*out
//!             [norm_mean f64*in | norm_var f64*in]   (iff normalized)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::ddpg::{ActorCritic, RunArtifacts};
use crate::error::{Error, Result};
use crate::goal_dist::{Gmm, GridDistribution, GridSpec, Rect};
use crate::her::EpisodeTrajectory;
use crate::metrics::{AggregateRow, EpochRow};
use crate::nn::optim::OptimizerState;
use crate::nn::{Activation, Layer, Mlp, RunningNorm};
use crate::replay::Transition;

const CHECKPOINT_MAGIC: &[u8; 4] = b"HERC";
const CHECKPOINT_VERSION: u32 = 1;
const MAX_NETS: usize = 16;
const MAX_NAME_LEN: usize = 256;
const MAX_LAYERS: usize = 64;
const MAX_LAYER_DIM: usize = 65_536;
const MAX_GRID_SIDE: usize = 4_096;
const MAX_GRID_CELLS: usize = 1 << 20;
const MAX_CSV_DIMS: usize = 1_024;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Linear => 2,
    }
}

fn activation_from_code(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Tanh),
        2 => Ok(Activation::Linear),
        other => Err(parse_err(format!("unknown activation code {other}"))),
    }
}

/// Serialize named networks into the checkpoint container.
pub fn encode_networks(nets: &[(&str, &Mlp)]) -> Vec<u8> {
    assert!(nets.len() <= MAX_NETS, "too many networks for one checkpoint");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (name, net) in nets {
        assert!(name.len() <= MAX_NAME_LEN, "network name too long");
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
        for layer in &net.layers {
            out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
            out.push(activation_code(layer.activation));
            out.push(layer.norm.is_some() as u8);
            for &w in &layer.w {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for &b in &layer.b {
                out.extend_from_slice(&b.to_le_bytes());
            }
            if let Some(norm) = &layer.norm {
                for &m in &norm.mean {
                    out.extend_from_slice(&m.to_le_bytes());
                }
                for &v in &norm.var {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(parse_err(format!(
                "checkpoint truncated: needed {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    /// Read `n` doubles, checking the byte budget before allocating and
    /// requiring every value to be finite.
    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let needed = n
            .checked_mul(8)
            .ok_or_else(|| parse_err(format!("{what}: length overflow")))?;
        let raw = self.bytes(needed)?;
        let mut out = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(parse_err(format!("{what}: non-finite value {v}")));
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Parse the checkpoint container. The decoder is total: any byte string
/// either yields structurally valid, finite networks or a parse error.
pub fn decode_networks(bytes: &[u8]) -> Result<Vec<(String, Mlp)>> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err(parse_err("not a checkpoint: bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(parse_err(format!("unsupported checkpoint version {version}")));
    }
    let n_nets = r.u32()? as usize;
    if n_nets == 0 || n_nets > MAX_NETS {
        return Err(parse_err(format!("unreasonable network count {n_nets}")));
    }
    let mut nets = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let name_len = r.u32()? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(parse_err(format!("network name of {name_len} bytes")));
        }
        let name = std::str::from_utf8(r.bytes(name_len)?)
            .map_err(|_| parse_err("network name is not utf-8"))?
            .to_string();
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > MAX_LAYERS {
            return Err(parse_err(format!("unreasonable layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            if in_dim == 0 || in_dim > MAX_LAYER_DIM || out_dim == 0 || out_dim > MAX_LAYER_DIM {
                return Err(parse_err(format!("layer {l}: bad dims {in_dim}x{out_dim}")));
            }
            let activation = activation_from_code(r.u8()?)?;
            let normalized = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(parse_err(format!("bad normalization flag {other}"))),
            };
            let w = r.f64_vec(in_dim * out_dim, "weights")?;
            let b = r.f64_vec(out_dim, "biases")?;
            let norm = if normalized {
                let mut norm = RunningNorm::new(in_dim);
                norm.mean = r.f64_vec(in_dim, "norm mean")?;
                let var = r.f64_vec(in_dim, "norm var")?;
                if var.iter().any(|v| *v < 0.0) {
                    return Err(parse_err("negative variance in norm statistics"));
                }
                norm.var = var;
                Some(norm)
            } else {
                None
            };
            layers.push(Layer { w, b, in_dim, out_dim, activation, norm });
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(parse_err(format!(
                    "layer chain mismatch: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        nets.push((name, Mlp { layers }));
    }
    if r.remaining() != 0 {
        return Err(parse_err(format!("{} trailing bytes after checkpoint", r.remaining())));
    }
    Ok(nets)
}

/// The four networks of a saved agent.
pub struct CheckpointNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
}

impl CheckpointNets {
    /// Rebuild a usable agent around the saved networks with fresh
    /// optimizer state.
    pub fn into_actor_critic(self, cfg: &crate::config::AgentConfig) -> Result<ActorCritic> {
        let actor_opt =
            OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.clip_norm, &self.actor)?;
        let critic_opt =
            OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.clip_norm, &self.critic)?;
        Ok(ActorCritic {
            actor: self.actor,
            critic: self.critic,
            actor_target: self.actor_target,
            critic_target: self.critic_target,
            actor_opt,
            critic_opt,
        })
    }
}

/// Write all four agent networks to `path`.
pub fn save_checkpoint(path: &Path, ac: &ActorCritic) -> Result<()> {
    let bytes = encode_networks(&[
        ("actor", &ac.actor),
        ("critic", &ac.critic),
        ("actor_target", &ac.actor_target),
        ("critic_target", &ac.critic_target),
    ]);
    fs::write(path, bytes)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<CheckpointNets> {
    let bytes = fs::read(path)?;
    let mut nets = decode_networks(&bytes)?;
    let mut take = |name: &str| -> Result<Mlp> {
        let idx = nets
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| parse_err(format!("checkpoint is missing the {name} network")))?;
        Ok(nets.swap_remove(idx).1)
    };
    let out = CheckpointNets {
        actor: take("actor")?,
        critic: take("critic")?,
        actor_target: take("actor_target")?,
        critic_target: take("critic_target")?,
    };
    if !nets.is_empty() {
        return Err(parse_err(format!("checkpoint has {} unexpected networks", nets.len())));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Grid CSV
// ---------------------------------------------------------------------------

/// Render a grid distribution with its geometry on a `#` metadata line.
/// `sigma` records the kernel bandwidth the grid was built with (NaN for
/// plain histograms).
pub fn write_grid_csv(grid: &GridSpec, dist: &GridDistribution, sigma: f64) -> String {
    assert_eq!((grid.m, grid.n), (dist.m, dist.n), "grid and distribution shapes disagree");
    let b = &grid.bounds;
    let mut out = format!(
        "# m={} n={} x_lo={} x_hi={} y_lo={} y_hi={} sigma={}\n",
        grid.m, grid.n, b.lo[0], b.hi[0], b.lo[1], b.hi[1], sigma
    );
    for i in 0..grid.m {
        for j in 0..grid.n {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", dist.get(i, j));
        }
        out.push('\n');
    }
    out
}

fn parse_finite_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 =
        s.trim().parse().map_err(|_| parse_err(format!("{what}: bad float {s:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(format!("{what}: non-finite value {s:?}")));
    }
    Ok(v)
}

fn lines_of(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l))
}

/// Parse a grid CSV written by [`write_grid_csv`].
pub fn parse_grid_csv(text: &str) -> Result<(GridSpec, GridDistribution, f64)> {
    let mut lines = lines_of(text);
    let meta = lines.next().ok_or_else(|| parse_err("empty grid file"))?;
    let meta = meta
        .strip_prefix('#')
        .ok_or_else(|| parse_err("grid file must start with a # metadata line"))?;
    let mut m = None;
    let mut n = None;
    let mut bounds = [None; 4];
    let mut sigma = None;
    for field in meta.split_whitespace() {
        let (key, value) =
            field.split_once('=').ok_or_else(|| parse_err(format!("bad metadata {field:?}")))?;
        match key {
            "m" | "n" => {
                let v: usize = value
                    .parse()
                    .map_err(|_| parse_err(format!("bad grid size {value:?}")))?;
                if v == 0 || v > MAX_GRID_SIDE {
                    return Err(parse_err(format!("grid side {v} out of range")));
                }
                if key == "m" {
                    m = Some(v);
                } else {
                    n = Some(v);
                }
            }
            "x_lo" => bounds[0] = Some(parse_finite_f64(value, "x_lo")?),
            "x_hi" => bounds[1] = Some(parse_finite_f64(value, "x_hi")?),
            "y_lo" => bounds[2] = Some(parse_finite_f64(value, "y_lo")?),
            "y_hi" => bounds[3] = Some(parse_finite_f64(value, "y_hi")?),
            "sigma" => {
                // NaN marks "no kernel", so accept it here.
                sigma = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| parse_err(format!("bad sigma {value:?}")))?,
                )
            }
            other => return Err(parse_err(format!("unknown metadata key {other:?}"))),
        }
    }
    let (m, n) = match (m, n) {
        (Some(m), Some(n)) => (m, n),
        _ => return Err(parse_err("metadata must define m and n")),
    };
    if m * n > MAX_GRID_CELLS {
        return Err(parse_err(format!("grid of {} cells is too large", m * n)));
    }
    let [Some(x_lo), Some(x_hi), Some(y_lo), Some(y_hi)] = bounds else {
        return Err(parse_err("metadata must define x_lo/x_hi/y_lo/y_hi"));
    };
    let sigma = sigma.ok_or_else(|| parse_err("metadata must define sigma"))?;
    let grid = Rect::xy(x_lo, x_hi, y_lo, y_hi)
        .and_then(|bounds| GridSpec::new(m, n, bounds))
        .map_err(|e| parse_err(format!("grid metadata: {e}")))?;
    let mut values = Vec::with_capacity(m * n);
    for i in 0..m {
        let line =
            lines.next().ok_or_else(|| parse_err(format!("expected {m} rows, found {i}")))?;
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != n {
            return Err(parse_err(format!("row {i} has {} cells, expected {n}", row.len())));
        }
        for cell in row {
            values.push(parse_finite_f64(cell, "grid cell")?);
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(parse_err("trailing content after grid rows"));
    }
    Ok((grid, GridDistribution { m, n, values }, sigma))
}

// ---------------------------------------------------------------------------
// Replay-buffer dump CSV
// ---------------------------------------------------------------------------

/// One parsed row of a buffer dump.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferDumpRow {
    pub achieved: Vec<f64>,
    pub goal: Vec<f64>,
    pub reward: f64,
    pub is_virtual: bool,
}

/// Render the goal-relevant columns of stored transitions. The header names
/// carry the dimensions, so the parser needs no side channel.
pub fn write_buffer_dump<'a>(transitions: impl IntoIterator<Item = &'a Transition>) -> Result<String> {
    let mut iter = transitions.into_iter().peekable();
    let first = iter.peek().ok_or_else(|| Error::Config("nothing to dump".to_string()))?;
    let a_dim = first.achieved_goal.len();
    let g_dim = first.goal.len();
    let mut out = String::new();
    for k in 0..a_dim {
        let _ = write!(out, "achieved_{k},");
    }
    for k in 0..g_dim {
        let _ = write!(out, "goal_{k},");
    }
    out.push_str("reward,is_virtual\n");
    for t in iter {
        assert_eq!(t.achieved_goal.len(), a_dim, "ragged achieved goals");
        assert_eq!(t.goal.len(), g_dim, "ragged goals");
        for v in &t.achieved_goal {
            let _ = write!(out, "{v},");
        }
        for v in &t.goal {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{}", t.reward, t.is_virtual as u8);
    }
    Ok(out)
}

/// Parse a dump written by [`write_buffer_dump`].
pub fn parse_buffer_dump(text: &str) -> Result<Vec<BufferDumpRow>> {
    let mut lines = lines_of(text);
    let header = lines.next().ok_or_else(|| parse_err("empty buffer dump"))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 3 || fields.len() > 2 * MAX_CSV_DIMS + 2 {
        return Err(parse_err("implausible buffer-dump header"));
    }
    let a_dim = fields.iter().take_while(|f| f.starts_with("achieved_")).count();
    let g_dim = fields[a_dim..].iter().take_while(|f| f.starts_with("goal_")).count();
    if a_dim == 0 || g_dim == 0 {
        return Err(parse_err("buffer-dump header must name achieved_* and goal_* columns"));
    }
    for (k, f) in fields[..a_dim].iter().enumerate() {
        if *f != format!("achieved_{k}") {
            return Err(parse_err(format!("achieved columns out of order at {f:?}")));
        }
    }
    for (k, f) in fields[a_dim..a_dim + g_dim].iter().enumerate() {
        if *f != format!("goal_{k}") {
            return Err(parse_err(format!("goal columns out of order at {f:?}")));
        }
    }
    if fields[a_dim + g_dim..] != ["reward", "is_virtual"] {
        return Err(parse_err("buffer-dump header must end with reward,is_virtual"));
    }
    let n_cols = a_dim + g_dim + 2;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(parse_err(format!(
                "row {lineno} has {} cells, expected {n_cols}",
                cells.len()
            )));
        }
        let achieved = cells[..a_dim]
            .iter()
            .map(|c| parse_finite_f64(c, "achieved"))
            .collect::<Result<Vec<f64>>>()?;
        let goal = cells[a_dim..a_dim + g_dim]
            .iter()
            .map(|c| parse_finite_f64(c, "goal"))
            .collect::<Result<Vec<f64>>>()?;
        let reward = parse_finite_f64(cells[n_cols - 2], "reward")?;
        let is_virtual = match cells[n_cols - 1] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("bad is_virtual flag {other:?}"))),
        };
        rows.push(BufferDumpRow { achieved, goal, reward, is_virtual });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Learning-curve CSV
// ---------------------------------------------------------------------------

const CURVES_HEADER: &str =
    "epoch,success_rate,mean_final_distance,q0_estimate,empirical_return,epsilon,kl_to_target,sigma_sq";

/// Render per-epoch learning-curve rows.
pub fn write_curves_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            r.success_rate,
            r.mean_final_distance,
            r.q0_estimate,
            r.empirical_return,
            r.epsilon,
            r.kl_to_target,
            r.sigma_sq
        );
    }
    out
}

/// Parse a curves file written by [`write_curves_csv`]. NaN cells are legal
/// (they mark diagnostics that do not apply to the run's environment).
pub fn parse_curves_csv(text: &str) -> Result<Vec<EpochRow>> {
    let mut lines = lines_of(text);
    let header = lines.next().ok_or_else(|| parse_err("empty curves file"))?;
    if header != CURVES_HEADER {
        return Err(parse_err(format!("unexpected curves header {header:?}")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(parse_err(format!(
                "curves row {lineno} has {} cells, expected 8",
                cells.len()
            )));
        }
        let epoch: usize = cells[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad epoch {:?}", cells[0])))?;
        let f = |i: usize, what: &str| -> Result<f64> {
            let v: f64 = cells[i]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("{what}: bad float {:?}", cells[i])))?;
            if v.is_infinite() {
                return Err(parse_err(format!("{what}: infinite value")));
            }
            Ok(v)
        };
        rows.push(EpochRow {
            epoch,
            success_rate: f(1, "success_rate")?,
            mean_final_distance: f(2, "mean_final_distance")?,
            q0_estimate: f(3, "q0_estimate")?,
            empirical_return: f(4, "empirical_return")?,
            epsilon: f(5, "epsilon")?,
            kl_to_target: f(6, "kl_to_target")?,
            sigma_sq: f(7, "sigma_sq")?,
        });
    }
    Ok(rows)
}

/// Render multi-seed percentile bands.
pub fn write_aggregate_csv(rows: &[AggregateRow]) -> String {
    let metrics =
        ["success_rate", "mean_final_distance", "q0_estimate", "empirical_return", "kl_to_target"];
    let mut out = String::from("epoch");
    for m in metrics {
        let _ = write!(out, ",{m}_p33,{m}_p50,{m}_p67");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.epoch);
        for q in
            [r.success_rate, r.mean_final_distance, r.q0_estimate, r.empirical_return, r.kl_to_target]
        {
            let _ = write!(out, ",{},{},{}", q.p33, q.p50, q.p67);
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Goal-sample CSV and mixture TOML
// ---------------------------------------------------------------------------

/// Render goal samples, one comma-separated point per line.
pub fn write_samples_csv(samples: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for s in samples {
        for (j, v) in s.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Parse goal samples: comma-separated floats, one point per line, `#`
/// comment lines ignored. All points must share one dimension.
pub fn parse_samples_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines_of(text).enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let point = line
            .split(',')
            .map(|c| parse_finite_f64(c, "sample"))
            .collect::<Result<Vec<f64>>>()?;
        if point.len() > MAX_CSV_DIMS {
            return Err(parse_err(format!("sample of dimension {}", point.len())));
        }
        if let Some(first) = samples.first() {
            if point.len() != first.len() {
                return Err(parse_err(format!(
                    "row {lineno} has dimension {}, expected {}",
                    point.len(),
                    first.len()
                )));
            }
        }
        samples.push(point);
    }
    if samples.is_empty() {
        return Err(parse_err("no samples in file"));
    }
    Ok(samples)
}

/// Parse a Gaussian-mixture goal distribution from TOML of the form
///
/// ```toml
/// [[component]]
/// weight = 1.0
/// mean = [0.7, 0.5]
/// cov = [[0.01, 0.0], [0.0, 0.01]]
/// ```
pub fn parse_gmm_toml(text: &str) -> Result<Gmm> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct GmmFile {
        component: Vec<crate::goal_dist::GmmComponent>,
    }
    let file: GmmFile =
        toml::from_str(text).map_err(|e| parse_err(format!("mixture file: {e}")))?;
    let gmm = Gmm { components: file.component };
    gmm.validate().map_err(|e| parse_err(format!("mixture file: {e}")))?;
    Ok(gmm)
}

// ---------------------------------------------------------------------------
// Episode traces
// ---------------------------------------------------------------------------

/// Render one episode step by step: the observation and achieved goal the
/// action was taken from, the action, and the reward it earned. The desired
/// goal rides on a metadata line.
pub fn write_episode_trace(traj: &EpisodeTrajectory) -> String {
    traj.assert_consistent();
    let mut out = String::from("# goal=");
    for (j, v) in traj.desired_goal.iter().enumerate() {
        if j > 0 {
            out.push(';');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
    out.push_str("t");
    for k in 0..traj.observations[0].len() {
        let _ = write!(out, ",obs_{k}");
    }
    for k in 0..traj.achieved_goals[0].len() {
        let _ = write!(out, ",achieved_{k}");
    }
    for k in 0..traj.actions[0].len() {
        let _ = write!(out, ",action_{k}");
    }
    out.push_str(",reward\n");
    for t in 0..traj.len() {
        let _ = write!(out, "{t}");
        for v in &traj.observations[t] {
            let _ = write!(out, ",{v}");
        }
        for v in &traj.achieved_goals[t] {
            let _ = write!(out, ",{v}");
        }
        for v in &traj.actions[t] {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", traj.rewards[t]);
    }
    out
}

// ---------------------------------------------------------------------------
// Run directories
// ---------------------------------------------------------------------------

/// Materialize a finished run as a directory:
///
/// ```text
/// out_dir/
///   config-snapshot.toml
///   curves.csv
///   checkpoints/final.ckpt
///   buffer-dump.csv              (if run.dump_buffer)
///   heatmaps/target.csv          (planar goal spaces, if run.write_heatmaps)
///   heatmaps/proposal.csv
/// ```
///
/// The directory appears atomically: everything is staged under a hidden
/// sibling and renamed into place, and an already-existing `out_dir` is
/// refused rather than overwritten.
pub fn write_run_dir(out_dir: &Path, cfg: &RunConfig, artifacts: &RunArtifacts) -> Result<()> {
    if out_dir.exists() {
        return Err(Error::Config(format!(
            "output directory {} already exists; refusing to overwrite",
            out_dir.display()
        )));
    }
    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let name = out_dir
        .file_name()
        .ok_or_else(|| Error::Config(format!("bad output directory {}", out_dir.display())))?
        .to_string_lossy()
        .to_string();
    let staging = parent.join(format!(".{}.tmp-{}", name, std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let result = (|| -> Result<()> {
        fs::create_dir_all(staging.join("checkpoints"))?;
        fs::write(staging.join("config-snapshot.toml"), cfg.to_toml_string()?)?;
        fs::write(staging.join("curves.csv"), write_curves_csv(&artifacts.curve))?;
        save_checkpoint(&staging.join("checkpoints").join("final.ckpt"), &artifacts.ac)?;
        if cfg.run.dump_buffer {
            fs::write(staging.join("buffer-dump.csv"), write_buffer_dump(artifacts.buffer.iter())?)?;
        }
        if cfg.run.write_heatmaps {
            if let (Some(ibs), Some(reference)) = (&artifacts.ibs, &artifacts.reference_target) {
                fs::create_dir_all(staging.join("heatmaps"))?;
                fs::write(
                    staging.join("heatmaps").join("target.csv"),
                    write_grid_csv(ibs.grid(), reference, cfg.metrics.reference_sigma),
                )?;
                fs::write(
                    staging.join("heatmaps").join("proposal.csv"),
                    write_grid_csv(ibs.grid(), &ibs.proposal_distribution(), f64::NAN),
                )?;
            }
        }
        fs::rename(&staging, out_dir)?;
        Ok(())
    })();
    if result.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}
