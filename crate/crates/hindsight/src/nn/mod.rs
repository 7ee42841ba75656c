//! Minimal dense networks with exact backpropagation.
//!
//! The toolkit only ever needs fixed-topology multi-layer perceptrons, so this
//! module favors transparency over generality: plain `Vec<f64>` storage,
//! explicit forward caches, and gradients that are exact for the computation
//! graph (the tests verify them against central finite differences).
//!
//! Layers may standardize their input features using running statistics
//! ([`RunningNorm`]). The statistics are *not* part of the differentiated
//! graph: [`Mlp::forward`] is pure and uses the stored statistics, and the
//! training loop refreshes them explicitly via [`Mlp::update_norm_stats`]
//! after gradients have been computed. The same statistics are used at
//! training and evaluation time, so there is no train/eval mode divergence.
//!
//! Shape mismatches between values that must agree panic with a descriptive
//! message: they are call-contract bugs, not recoverable conditions.

pub mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative as a function of the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Running per-feature statistics for input standardization.
///
/// Mean starts at 0 and variance at 1, so a freshly initialized layer applies
/// the identity transform. [`RunningNorm::update_from_batch`] moves the
/// statistics toward the batch moments by an exponential step.
///
/// Standardized values are clamped to [`RunningNorm::MAX_Z`] standard
/// deviations. A feature whose running variance has collapsed would otherwise
/// amplify off-distribution inputs by `1 / sigma` without bound, and a value
/// network that can be driven arbitrarily high off-distribution is exactly
/// what a policy-gradient ascent will find and exploit.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Exponential moving-average step applied per batch update.
    pub momentum: f64,
    /// Added to the variance before taking the square root.
    pub eps: f64,
}

impl RunningNorm {
    /// Largest magnitude a standardized feature can take; the transform is
    /// flat (zero gradient) beyond it. In-distribution data is unaffected.
    pub const MAX_Z: f64 = 5.0;

    pub fn new(dim: usize) -> Self {
        RunningNorm { mean: vec![0.0; dim], var: vec![1.0; dim], momentum: 0.01, eps: 1e-5 }
    }

    /// Multiplier applied to feature `j` (the derivative of the transform
    /// inside the clamp).
    fn scale(&self, j: usize) -> f64 {
        1.0 / (self.var[j] + self.eps).sqrt()
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.mean.len(), "normalization dimension mismatch");
        x.iter()
            .enumerate()
            .map(|(j, &v)| ((v - self.mean[j]) * self.scale(j)).clamp(-Self::MAX_Z, Self::MAX_Z))
            .collect()
    }

    /// Exponential update toward the batch mean and (population) variance.
    pub fn update_from_batch(&mut self, rows: &[Vec<f64>]) {
        let dim = self.mean.len();
        self.update_prefix_from_batch(rows, dim);
    }

    /// Like [`RunningNorm::update_from_batch`], but only the first `upto`
    /// features move; the rest keep their current transform.
    pub fn update_prefix_from_batch(&mut self, rows: &[Vec<f64>], upto: usize) {
        if rows.is_empty() {
            return;
        }
        let dim = self.mean.len().min(upto);
        let n = rows.len() as f64;
        for j in 0..dim {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            self.mean[j] += self.momentum * (mean - self.mean[j]);
            self.var[j] += self.momentum * (var - self.var[j]);
        }
    }
}

/// One dense layer: optional input standardization, affine map, activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// Row-major `out_dim x in_dim` weight matrix.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Present iff this layer standardizes its input features.
    pub norm: Option<RunningNorm>,
}

impl Layer {
    fn affine(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            *o += row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }
}

/// Feed-forward network: a chain of [`Layer`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Everything the backward pass needs from one forward pass.
///
/// Per layer: the raw inputs (pre-normalization, kept for statistics updates),
/// the normalized inputs that multiplied the weights, and the pre-activations.
pub struct Cache {
    raw_in: Vec<Vec<Vec<f64>>>,
    norm_in: Vec<Vec<Vec<f64>>>,
    pre: Vec<Vec<Vec<f64>>>,
    outputs: Vec<Vec<f64>>,
}

impl Cache {
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn batch_len(&self) -> usize {
        self.outputs.len()
    }
}

/// Parameter gradients, shaped exactly like the network's layers.
#[derive(Clone, Debug)]
pub struct Grads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// Global L2 norm over every entry.
    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self
            .w
            .iter()
            .chain(self.b.iter())
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum();
        sq.sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            for g in v.iter_mut() {
                *g *= f;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(self.b.iter())
            .flat_map(|v| v.iter())
            .all(|g| g.is_finite())
    }
}

/// If the global L2 norm exceeds `clip_norm`, scale all gradients down to it.
///
/// Never increases the norm and is idempotent.
pub fn clip_gradients(grads: &mut Grads, clip_norm: f64) {
    assert!(clip_norm > 0.0, "clip_norm must be positive, got {clip_norm}");
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
}

/// How [`sync_target`] copies the online network into the target network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyncMode {
    /// Exact copy (parameters and normalization statistics).
    Hard,
    /// `target <- (1 - tau) * target + tau * online`, applied to parameters
    /// and normalization statistics alike.
    Polyak(f64),
}

/// Update a target network from its online counterpart.
pub fn sync_target(target: &mut Mlp, online: &Mlp, mode: SyncMode) {
    assert_eq!(
        target.layer_sizes(),
        online.layer_sizes(),
        "target and online architectures must match"
    );
    match mode {
        SyncMode::Hard => *target = online.clone(),
        SyncMode::Polyak(tau) => {
            for (tl, ol) in target.layers.iter_mut().zip(&online.layers) {
                for (t, o) in tl.w.iter_mut().zip(&ol.w) {
                    *t = (1.0 - tau) * *t + tau * o;
                }
                for (t, o) in tl.b.iter_mut().zip(&ol.b) {
                    *t = (1.0 - tau) * *t + tau * o;
                }
                match (&mut tl.norm, &ol.norm) {
                    (Some(tn), Some(on)) => {
                        for (t, o) in tn.mean.iter_mut().zip(&on.mean) {
                            *t = (1.0 - tau) * *t + tau * o;
                        }
                        for (t, o) in tn.var.iter_mut().zip(&on.var) {
                            *t = (1.0 - tau) * *t + tau * o;
                        }
                    }
                    (None, None) => {}
                    _ => panic!("target and online normalization layout must match"),
                }
            }
        }
    }
}

impl Mlp {
    /// Build a network with fan-in-scaled uniform initialization and zero
    /// biases; deterministic for a given generator state.
    ///
    /// `activations[i]` and `normalize[i]` describe the layer mapping
    /// `layer_sizes[i] -> layer_sizes[i + 1]`. Relu layers use a
    /// `sqrt(6 / fan_in)` limit, tanh/linear layers `sqrt(3 / fan_in)`.
    pub fn init<R: Rng>(
        layer_sizes: &[usize],
        activations: &[Activation],
        normalize: &[bool],
        rng: &mut R,
    ) -> Result<Mlp> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Config(format!(
                "expected {} activations for {} sizes, got {}",
                layer_sizes.len() - 1,
                layer_sizes.len(),
                activations.len()
            )));
        }
        if normalize.len() != activations.len() {
            return Err(Error::Config(format!(
                "expected {} normalization flags, got {}",
                activations.len(),
                normalize.len()
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("layer sizes must be positive, got {layer_sizes:?}")));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, (&act, &norm)) in activations.iter().zip(normalize).enumerate() {
            let (in_dim, out_dim) = (layer_sizes[i], layer_sizes[i + 1]);
            let limit = match act {
                Activation::Relu => (6.0 / in_dim as f64).sqrt(),
                Activation::Tanh | Activation::Linear => (3.0 / in_dim as f64).sqrt(),
            };
            let w = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
            layers.push(Layer {
                w,
                b: vec![0.0; out_dim],
                in_dim,
                out_dim,
                activation: act,
                norm: norm.then(|| RunningNorm::new(in_dim)),
            });
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("network has layers").out_dim
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.out_dim));
        sizes
    }

    /// Pure forward pass over a batch of rows.
    ///
    /// Normalizing layers use their stored running statistics; repeated calls
    /// with the same network and batch yield identical outputs.
    pub fn forward(&self, batch: &[Vec<f64>]) -> (Vec<Vec<f64>>, Cache) {
        let n_layers = self.layers.len();
        let mut raw_in = Vec::with_capacity(n_layers);
        let mut norm_in = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut current: Vec<Vec<f64>> = batch.to_vec();
        for layer in &self.layers {
            for row in &current {
                assert_eq!(row.len(), layer.in_dim, "forward input dimension mismatch");
            }
            let z: Vec<Vec<f64>> = match &layer.norm {
                Some(norm) => current.iter().map(|r| norm.normalize(r)).collect(),
                None => current.clone(),
            };
            let p: Vec<Vec<f64>> = z.iter().map(|r| layer.affine(r)).collect();
            let out: Vec<Vec<f64>> =
                p.iter().map(|r| r.iter().map(|&v| layer.activation.apply(v)).collect()).collect();
            raw_in.push(current);
            norm_in.push(z);
            pre.push(p);
            current = out;
        }
        let cache = Cache { raw_in, norm_in, pre, outputs: current.clone() };
        (current, cache)
    }

    /// Convenience single-row forward without keeping a cache.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let (out, _) = self.forward(std::slice::from_ref(&x.to_vec()));
        out.into_iter().next().expect("one output row")
    }

    /// Exact backward pass.
    ///
    /// `grad_out[i]` is the loss gradient with respect to output row `i` of the
    /// forward pass that produced `cache`. Returns parameter gradients (summed
    /// over the batch; any 1/batch factors belong to the caller's `grad_out`)
    /// and the gradient with respect to the original input rows. Normalization
    /// statistics are treated as constants.
    pub fn backward(&self, cache: &Cache, grad_out: &[Vec<f64>]) -> (Grads, Vec<Vec<f64>>) {
        assert_eq!(grad_out.len(), cache.batch_len(), "backward batch size mismatch");
        let mut grads = Grads::zeros_like(self);
        let mut upstream: Vec<Vec<f64>> = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let z = &cache.norm_in[l];
            let mut downstream = vec![vec![0.0; layer.in_dim]; upstream.len()];
            for (i, up) in upstream.iter().enumerate() {
                assert_eq!(up.len(), layer.out_dim, "backward gradient dimension mismatch");
                for r in 0..layer.out_dim {
                    let d_pre = up[r] * layer.activation.derivative(pre[i][r]);
                    if d_pre == 0.0 {
                        continue;
                    }
                    grads.b[l][r] += d_pre;
                    let row = &mut grads.w[l][r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (c, g) in row.iter_mut().enumerate() {
                        *g += d_pre * z[i][c];
                    }
                    let w_row = &layer.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (c, d) in downstream[i].iter_mut().enumerate() {
                        *d += d_pre * w_row[c];
                    }
                }
                if let Some(norm) = &layer.norm {
                    for (c, d) in downstream[i].iter_mut().enumerate() {
                        // The clamp is flat: no gradient flows to features
                        // that were standardized beyond MAX_Z.
                        if z[i][c].abs() >= RunningNorm::MAX_Z {
                            *d = 0.0;
                        } else {
                            *d *= norm.scale(c);
                        }
                    }
                }
            }
            upstream = downstream;
        }
        (grads, upstream)
    }

    /// Refresh the running statistics of every normalizing layer from the raw
    /// inputs recorded in `cache`. Called by the training loop after gradient
    /// computation so that gradients stay exact for the graph that produced
    /// them.
    pub fn update_norm_stats(&mut self, cache: &Cache) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if let Some(norm) = &mut layer.norm {
                norm.update_from_batch(&cache.raw_in[l]);
            }
        }
    }

    /// Refresh running statistics like [`Mlp::update_norm_stats`], except
    /// that on the input layer only the first `prefix` features move. For a
    /// critic fed `observation ‖ goal ‖ action` this keeps the action
    /// coordinates on the identity transform: actions are bounded by
    /// construction, and tracking the statistics of a converging policy's
    /// own actions would collapse their variance and amplify them instead of
    /// standardizing.
    pub fn update_norm_stats_prefix(&mut self, cache: &Cache, prefix: usize) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if let Some(norm) = &mut layer.norm {
                let upto = if l == 0 { prefix } else { norm.mean.len() };
                norm.update_prefix_from_batch(&cache.raw_in[l], upto);
            }
        }
    }

    /// All parameters are finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample_batch<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..rows).map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect()
    }

    /// Scrambled running stats so normalization is a nontrivial transform.
    fn scramble_norm<R: Rng>(net: &mut Mlp, rng: &mut R) {
        for layer in &mut net.layers {
            if let Some(norm) = &mut layer.norm {
                for m in norm.mean.iter_mut() {
                    *m = rng.gen_range(-0.5..0.5);
                }
                for v in norm.var.iter_mut() {
                    *v = rng.gen_range(0.3..2.0);
                }
            }
        }
    }

    #[test]
    fn init_validates_shapes() {
        let mut rng = stream(7, "init");
        assert!(Mlp::init(&[4], &[], &[], &mut rng).is_err(), "single size must be rejected");
        assert!(
            Mlp::init(&[4, 3], &[Activation::Relu, Activation::Tanh], &[false, false], &mut rng)
                .is_err(),
            "activation count mismatch must be rejected"
        );
        let net = Mlp::init(
            &[4, 64, 64, 64, 2],
            &[Activation::Relu, Activation::Relu, Activation::Relu, Activation::Tanh],
            &[false; 4],
            &mut rng,
        )
        .unwrap();
        assert_eq!(net.layer_sizes(), vec![4, 64, 64, 64, 2]);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let make = || {
            let mut rng = stream(3, "init");
            Mlp::init(&[5, 8, 2], &[Activation::Relu, Activation::Tanh], &[false, false], &mut rng)
                .unwrap()
        };
        assert_eq!(make(), make(), "same seed must give bit-identical parameters");
    }

    #[test]
    fn forward_zero_weights_gives_zero() {
        let mut rng = stream(1, "init");
        let mut net =
            Mlp::init(&[3, 4, 2], &[Activation::Relu, Activation::Linear], &[false, false], &mut rng)
                .unwrap();
        for layer in &mut net.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = net.forward_one(&[1.0, -2.0, 3.0]);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_layer_passes_input_through() {
        let mut rng = stream(1, "init");
        let mut net = Mlp::init(&[3, 3], &[Activation::Linear], &[false], &mut rng).unwrap();
        let layer = &mut net.layers[0];
        layer.w.iter_mut().for_each(|w| *w = 0.0);
        for i in 0..3 {
            layer.w[i * 3 + i] = 1.0;
        }
        let x = vec![0.3, -1.2, 4.5];
        assert_eq!(net.forward_one(&x), x);
    }

    #[test]
    fn forward_matches_naive_per_sample_oracle() {
        let mut rng = stream(11, "oracle");
        let net = Mlp::init(
            &[4, 6, 5, 2],
            &[Activation::Relu, Activation::Tanh, Activation::Linear],
            &[true, false, true],
            &mut rng,
        )
        .unwrap();
        let batch = sample_batch(&mut rng, 5, 4);
        let (out, _) = net.forward(&batch);

        // Naive oracle: scalar loops, one sample at a time.
        for (i, x) in batch.iter().enumerate() {
            let mut cur = x.clone();
            for layer in &net.layers {
                let z: Vec<f64> = match &layer.norm {
                    Some(n) => cur
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            ((v - n.mean[j]) / (n.var[j] + n.eps).sqrt())
                                .clamp(-RunningNorm::MAX_Z, RunningNorm::MAX_Z)
                        })
                        .collect(),
                    None => cur.clone(),
                };
                let mut next = vec![0.0; layer.out_dim];
                for r in 0..layer.out_dim {
                    let mut acc = layer.b[r];
                    for c in 0..layer.in_dim {
                        acc += layer.w[r * layer.in_dim + c] * z[c];
                    }
                    next[r] = layer.activation.apply(acc);
                }
                cur = next;
            }
            for (a, b) in out[i].iter().zip(&cur) {
                assert!((a - b).abs() < 1e-12, "batched forward diverged from oracle: {a} vs {b}");
            }
        }
    }

    #[test]
    fn standardization_clamps_extreme_inputs_and_flattens_their_gradient() {
        // One normalizing linear layer with a collapsed variance: a far-out
        // input must standardize to exactly MAX_Z, the output must stay
        // bounded, and no gradient may flow back through the clamped feature.
        let mut rng = stream(12, "clamp");
        let mut net = Mlp::init(&[2, 1], &[Activation::Linear], &[true], &mut rng).unwrap();
        let layer = &mut net.layers[0];
        layer.w = vec![1.0, 1.0];
        layer.b = vec![0.0];
        let norm = layer.norm.as_mut().unwrap();
        norm.var = vec![1e-6, 1.0];

        // Feature 0 is 1000 sigma out; feature 1 is in-distribution.
        let batch = vec![vec![1.0, 0.5]];
        let (out, cache) = net.forward(&batch);
        let scale1 = 1.0 / (1.0f64 + 1e-5).sqrt();
        let expect = RunningNorm::MAX_Z + 0.5 * scale1;
        assert!((out[0][0] - expect).abs() < 1e-12, "clamped forward: {} vs {expect}", out[0][0]);

        let (_, grad_in) = net.backward(&cache, &[vec![1.0]]);
        assert_eq!(grad_in[0][0], 0.0, "no gradient through a clamped feature");
        assert!((grad_in[0][1] - scale1).abs() < 1e-12, "in-range feature keeps its scale");
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = stream(9, "pure");
        let net = Mlp::init(&[3, 5, 1], &[Activation::Relu, Activation::Linear], &[true, false], &mut rng)
            .unwrap();
        let batch = sample_batch(&mut rng, 4, 3);
        let (a, _) = net.forward(&batch);
        let (b, _) = net.forward(&batch);
        assert_eq!(a, b, "forward must be pure");
    }

    #[test]
    fn backward_linear_layer_hand_calculation() {
        // Single linear layer, grad_out = ones: dW = input, db = 1.
        let mut rng = stream(2, "init");
        let net = Mlp::init(&[3, 1], &[Activation::Linear], &[false], &mut rng).unwrap();
        let batch = vec![vec![2.0, -1.0, 0.5]];
        let (_, cache) = net.forward(&batch);
        let (grads, _) = net.backward(&cache, &[vec![1.0]]);
        assert_eq!(grads.w[0], vec![2.0, -1.0, 0.5]);
        assert_eq!(grads.b[0], vec![1.0]);
    }

    #[test]
    fn backward_dead_relu_blocks_gradient() {
        let mut rng = stream(4, "init");
        let mut net =
            Mlp::init(&[2, 3, 1], &[Activation::Relu, Activation::Linear], &[false, false], &mut rng)
                .unwrap();
        // Large negative biases force all pre-activations below zero.
        net.layers[0].b.iter_mut().for_each(|b| *b = -100.0);
        let batch = vec![vec![0.5, -0.25]];
        let (_, cache) = net.forward(&batch);
        let (grads, grad_in) = net.backward(&cache, &[vec![1.0]]);
        assert!(grads.w[0].iter().all(|&g| g == 0.0), "dead relu must zero weight grads");
        assert!(grad_in[0].iter().all(|&g| g == 0.0), "dead relu must zero input grads");
    }

    /// Central finite differences on every parameter of randomly shaped nets,
    /// covering all activations and normalization on/off.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(21, "fd");
        for case in 0..6 {
            let sizes = vec![
                rng.gen_range(2..5),
                rng.gen_range(2..6),
                rng.gen_range(2..6),
                rng.gen_range(1..4),
            ];
            let acts = [
                [Activation::Relu, Activation::Tanh, Activation::Linear],
                [Activation::Tanh, Activation::Relu, Activation::Tanh],
                [Activation::Linear, Activation::Relu, Activation::Linear],
            ][case % 3];
            let norms = [[true, false, true], [false, true, false], [true, true, true]][case % 3];
            let mut net = Mlp::init(&sizes, &acts, &norms, &mut rng).unwrap();
            scramble_norm(&mut net, &mut rng);
            let batch = sample_batch(&mut rng, 4, sizes[0]);
            let gout: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..*sizes.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();

            let (_, cache) = net.forward(&batch);
            let (grads, _) = net.backward(&cache, &gout);

            let loss = |net: &Mlp| -> f64 {
                let (out, _) = net.forward(&batch);
                out.iter().zip(&gout).map(|(o, g)| o.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()).sum()
            };
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for l in 0..net.layers.len() {
                for k in 0..net.layers[l].w.len() {
                    let orig = net.layers[l].w[k];
                    net.layers[l].w[k] = orig + h;
                    let up = loss(&net);
                    net.layers[l].w[k] = orig - h;
                    let down = loss(&net);
                    net.layers[l].w[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = grads.w[l][k];
                    let denom = an.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max((an - fd).abs() / denom);
                }
                for k in 0..net.layers[l].b.len() {
                    let orig = net.layers[l].b[k];
                    net.layers[l].b[k] = orig + h;
                    let up = loss(&net);
                    net.layers[l].b[k] = orig - h;
                    let down = loss(&net);
                    net.layers[l].b[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = grads.b[l][k];
                    let denom = an.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max((an - fd).abs() / denom);
                }
            }
            assert!(worst < 1e-4, "finite-difference mismatch {worst} on case {case}");
        }
    }

    #[test]
    fn backward_input_gradient_matches_finite_differences() {
        // The actor update differentiates through the critic's inputs, so the
        // input gradient (including the normalization scale) must be exact.
        let mut rng = stream(31, "fdin");
        let mut net = Mlp::init(
            &[4, 5, 1],
            &[Activation::Relu, Activation::Linear],
            &[true, true],
            &mut rng,
        )
        .unwrap();
        scramble_norm(&mut net, &mut rng);
        let x = vec![0.4, -0.9, 1.3, 0.2];
        let (_, cache) = net.forward(std::slice::from_ref(&x));
        let (_, grad_in) = net.backward(&cache, &[vec![1.0]]);
        let h = 1e-5;
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += h;
            let up = net.forward_one(&xp)[0];
            xp[j] -= 2.0 * h;
            let down = net.forward_one(&xp)[0];
            let fd = (up - down) / (2.0 * h);
            let an = grad_in[0][j];
            let denom = an.abs().max(fd.abs()).max(1e-6);
            assert!((an - fd).abs() / denom < 1e-4, "input grad mismatch at {j}: {an} vs {fd}");
        }
    }

    #[test]
    fn clip_scales_down_and_is_idempotent() {
        let mut grads = Grads { w: vec![vec![6.0, 0.0]], b: vec![vec![0.0]] };
        clip_gradients(&mut grads, 3.0);
        assert!((grads.w[0][0] - 3.0).abs() < 1e-12, "norm 6 clipped at 3 must halve");
        let before = grads.w[0][0];
        clip_gradients(&mut grads, 3.0);
        assert_eq!(grads.w[0][0], before, "clipping must be idempotent");

        let mut small = Grads { w: vec![vec![1.0]], b: vec![vec![0.0]] };
        clip_gradients(&mut small, 3.0);
        assert_eq!(small.w[0][0], 1.0, "norm below clip must be unchanged");

        let mut zero = Grads { w: vec![vec![0.0]], b: vec![vec![0.0]] };
        clip_gradients(&mut zero, 3.0);
        assert_eq!(zero.w[0][0], 0.0, "zero grads stay zero");
    }

    #[test]
    fn sync_hard_copies_exactly() {
        let mut rng = stream(5, "sync");
        let online = Mlp::init(&[3, 4, 2], &[Activation::Relu, Activation::Tanh], &[true, false], &mut rng)
            .unwrap();
        let mut target =
            Mlp::init(&[3, 4, 2], &[Activation::Relu, Activation::Tanh], &[true, false], &mut rng)
                .unwrap();
        sync_target(&mut target, &online, SyncMode::Hard);
        assert_eq!(target, online, "hard sync must copy bit-for-bit");
        let probe = sample_batch(&mut rng, 3, 3);
        assert_eq!(target.forward(&probe).0, online.forward(&probe).0);
    }

    #[test]
    fn sync_polyak_limits() {
        let mut rng = stream(6, "sync");
        let online = Mlp::init(&[2, 3], &[Activation::Linear], &[false], &mut rng).unwrap();
        let original = Mlp::init(&[2, 3], &[Activation::Linear], &[false], &mut rng).unwrap();

        let mut t1 = original.clone();
        sync_target(&mut t1, &online, SyncMode::Polyak(1.0));
        assert_eq!(t1, online, "tau = 1 equals the online net");

        let mut t0 = original.clone();
        sync_target(&mut t0, &online, SyncMode::Polyak(0.0));
        assert_eq!(t0, original, "tau = 0 leaves the target unchanged");
    }
}
