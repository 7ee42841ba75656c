//! Prioritized experience replay.
//!
//! Transitions live in a fixed-capacity ring buffer; sampling is proportional
//! to `(|td| + floor)^alpha` via a binary sum-tree, with stratified draws and
//! importance-sampling weights `(N * P)^(-beta)` normalized by the batch
//! maximum. New transitions enter at the largest priority seen so far, so
//! every experience gets sampled at least once with high probability before
//! its own TD error takes over.

use serde::{Deserialize, Serialize};

use rand::Rng;

/// One goal-conditioned transition. `reward` is sparse: 0 when
/// `next_achieved_goal` attains `goal`, -1 otherwise. `is_virtual` marks
/// relabeled copies so diagnostics can separate them from lived experience.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub goal: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub next_achieved_goal: Vec<f64>,
    pub is_virtual: bool,
}

/// Complete binary tree whose leaves hold priorities and whose internal nodes
/// hold subtree sums, for O(log n) proportional sampling and updates.
#[derive(Clone, Debug)]
pub struct SumTree {
    /// Number of leaves, a power of two. Node 1 is the root; leaf `i` lives at
    /// `leaf_base + i`; node 0 is unused padding.
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(min_leaves: usize) -> SumTree {
        assert!(min_leaves >= 1, "sum-tree needs at least one leaf");
        let leaves = min_leaves.next_power_of_two();
        SumTree { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn leaf(&self, i: usize) -> f64 {
        assert!(i < self.leaves, "leaf {i} outside tree of {} leaves", self.leaves);
        self.nodes[self.leaves + i]
    }

    /// Set leaf `i` and refresh its ancestors. Parents are recomputed as
    /// left + right rather than nudged by the delta, so float error cannot
    /// accumulate over millions of updates.
    pub fn set(&mut self, i: usize, value: f64) {
        assert!(i < self.leaves, "leaf {i} outside tree of {} leaves", self.leaves);
        assert!(value >= 0.0 && value.is_finite(), "priorities must be finite and nonnegative");
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Index of the leaf where cumulative mass first exceeds `mass`.
    ///
    /// `mass` is clamped into `[0, total)`; with all stored priorities
    /// strictly positive and occupancy forming a prefix of the leaves, the
    /// descent cannot land on an empty leaf.
    pub fn prefix_find(&self, mass: f64) -> usize {
        let total = self.total();
        assert!(total > 0.0, "cannot sample from an empty sum-tree");
        let mut mass = mass.clamp(0.0, total * (1.0 - 1e-12));
        let mut node = 1;
        while node < self.leaves {
            let left = self.nodes[2 * node];
            if mass < left {
                node *= 2;
            } else {
                mass -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }
}

/// Sampled batch: transitions with their buffer slots (for priority updates)
/// and importance-sampling weights.
#[derive(Clone, Debug)]
pub struct SampledBatch {
    pub transitions: Vec<Transition>,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Ring-buffer replay store with proportional prioritization.
#[derive(Clone, Debug)]
pub struct PerBuffer {
    capacity: usize,
    alpha: f64,
    beta: f64,
    priority_floor: f64,
    /// Largest raw (pre-exponent) priority ever assigned; new transitions
    /// enter at this value so they are sampled promptly.
    max_priority_seen: f64,
    data: Vec<Transition>,
    /// Next slot to write; wraps at capacity once full.
    head: usize,
    tree: SumTree,
}

impl PerBuffer {
    pub fn new(capacity: usize, alpha: f64, beta: f64, priority_floor: f64) -> PerBuffer {
        assert!(capacity >= 1, "replay buffer needs capacity");
        assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1], got {alpha}");
        assert!((0.0..=1.0).contains(&beta), "beta must lie in [0, 1], got {beta}");
        assert!(priority_floor > 0.0, "priority floor must be positive");
        PerBuffer {
            capacity,
            alpha,
            beta,
            priority_floor,
            max_priority_seen: 1.0,
            data: Vec::new(),
            head: 0,
            tree: SumTree::new(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn set_beta(&mut self, beta: f64) {
        assert!((0.0..=1.0).contains(&beta), "beta must lie in [0, 1], got {beta}");
        self.beta = beta;
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Iterate stored transitions in slot order (not insertion order once the
    /// ring has wrapped).
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    /// Append a transition, evicting the oldest once full. Enters the
    /// priority tree at the maximum raw priority seen so far.
    pub fn store(&mut self, t: Transition) {
        if let Some(first) = self.data.first() {
            assert_eq!(
                (t.observation.len(), t.goal.len(), t.action.len()),
                (first.observation.len(), first.goal.len(), first.action.len()),
                "transition shapes must match the buffer's contents"
            );
        }
        let slot = self.head;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[slot] = t;
        }
        self.head = (self.head + 1) % self.capacity;
        self.tree.set(slot, self.max_priority_seen.powf(self.alpha));
    }

    /// Stratified proportional sample of `k` transitions (with replacement
    /// across strata). Panics when fewer than `k` transitions are stored —
    /// callers gate on buffer length before optimizing.
    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> SampledBatch {
        assert!(k >= 1, "cannot sample an empty batch");
        assert!(self.len() >= k, "buffer holds {} transitions, asked for {k}", self.len());
        let total = self.tree.total();
        let n = self.len() as f64;
        let segment = total / k as f64;
        let mut transitions = Vec::with_capacity(k);
        let mut indices = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for s in 0..k {
            let mass = segment * (s as f64 + rng.gen::<f64>());
            let idx = self.tree.prefix_find(mass);
            let prob = self.tree.leaf(idx) / total;
            transitions.push(self.data[idx].clone());
            indices.push(idx);
            weights.push((n * prob).powf(-self.beta));
        }
        let max_w = weights.iter().cloned().fold(0.0f64, f64::max);
        for w in weights.iter_mut() {
            *w /= max_w;
        }
        SampledBatch { transitions, indices, weights }
    }

    /// Reassign priorities after an optimization step:
    /// `leaf = (|td| + floor)^alpha`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        assert_eq!(indices.len(), td_errors.len(), "one TD error per sampled index");
        for (&idx, &td) in indices.iter().zip(td_errors) {
            assert!(idx < self.len(), "priority update for unoccupied slot {idx}");
            assert!(td.is_finite(), "TD errors must be finite, got {td}");
            let raw = td.abs() + self.priority_floor;
            self.max_priority_seen = self.max_priority_seen.max(raw);
            self.tree.set(idx, raw.powf(self.alpha));
        }
    }
}

/// Deterministically shuffle-free frequency check helper: expected sampling
/// probability of slot `i` under the current priorities.
pub fn expected_probability(buffer: &PerBuffer, i: usize) -> f64 {
    buffer.tree.leaf(i) / buffer.tree.total()
}
