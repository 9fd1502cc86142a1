//! Shared domain types: probability vectors, labeled examples, prediction
//! sets, dataset splits, and the deterministic randomness contract.
//!
//! Everything here is immutable after construction and safe to share across
//! concurrent workers; all operations are pure functions of their inputs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Raw probability sums may deviate from 1 by at most this much on input.
/// Ingested files carry rounded decimals; anything further off is a data bug.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Errors from core type construction and dataset splitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("probability entry {value} at index {index} is negative")]
    NegativeEntry { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, outside 1 +/- {PROB_SUM_TOLERANCE}")]
    SumOutOfTolerance { sum: f64 },

    #[error("label space needs at least 2 entries, got {len}")]
    LabelSpaceTooSmall { len: usize },

    #[error("split plan sizes sum to {plan_total}, dataset has {available}")]
    SizeMismatch { plan_total: usize, available: usize },
}

/// A point on the probability simplex over a finite label space.
///
/// Entries are non-negative and sum to 1 (renormalized exactly on
/// construction). Labels are dense indices `0..len()`; human-readable names
/// live only in I/O metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Number of labels.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of label `y`.
    pub fn prob(&self, y: usize) -> f64 {
        self.probs[y]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Top-1 confidence, `max_y p(y)`.
    pub fn top1(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total probability assigned to the members of `set`.
    pub fn mass(&self, set: &PredictionSet) -> f64 {
        set.members().map(|y| self.probs[y]).sum()
    }

    /// Shannon entropy in nats, with the `0 log 0 = 0` convention.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Validates and normalizes a raw probability vector.
///
/// Accepts non-negative entries whose sum is within [`PROB_SUM_TOLERANCE`] of
/// 1, then rescales so the entries sum to 1 exactly (up to rounding).
pub fn make_prob_vector(raw: &[f64]) -> Result<ProbVector, CoreError> {
    if raw.len() < 2 {
        return Err(CoreError::LabelSpaceTooSmall { len: raw.len() });
    }
    for (index, &value) in raw.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(CoreError::NegativeEntry { index, value });
        }
    }
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(CoreError::SumOutOfTolerance { sum });
    }
    Ok(ProbVector {
        probs: raw.iter().map(|v| v / sum).collect(),
    })
}

/// A labeled (or unlabeled) classification example with both model outputs.
///
/// `cloud_dist` is the reference distribution `p*(.|x)`, `edge_dist` the
/// small model's `p^e(.|x)`. The label, when present, is sampled from the
/// cloud distribution by the synthetic worlds.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: u64,
    /// Input features; may be empty when no method needs them.
    pub features: Vec<f64>,
    pub cloud_dist: ProbVector,
    pub edge_dist: ProbVector,
    pub label: Option<usize>,
}

/// A segmentation-style instance: per-item scores in `[0, 1]` and the set of
/// ground-truth positive items.
#[derive(Debug, Clone)]
pub struct MultiLabelExample {
    pub id: u64,
    pub item_scores: Vec<f64>,
    pub positives: BTreeSet<usize>,
}

/// A set of label indices (or item indices in the multi-label case).
///
/// Empty and full sets are both valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    members: BTreeSet<usize>,
}

impl PredictionSet {
    pub fn empty() -> Self {
        PredictionSet {
            members: BTreeSet::new(),
        }
    }

    /// The full set `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        PredictionSet {
            members: (0..n).collect(),
        }
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>) -> Self {
        PredictionSet {
            members: members.into_iter().collect(),
        }
    }

    pub fn contains(&self, y: usize) -> bool {
        self.members.contains(&y)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    /// True when `self` is a subset of `other`.
    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        self.members.is_subset(&other.members)
    }
}

/// Dataset roles used by the calibration pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Train,
    Calibration,
    Optimization,
    Validation,
    Test,
}

/// A named partition of an example sequence into disjoint roles.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    sizes: Vec<(Role, usize)>,
}

impl SplitPlan {
    pub fn new(sizes: Vec<(Role, usize)>) -> Self {
        SplitPlan { sizes }
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().map(|(_, n)| n).sum()
    }

    pub fn sizes(&self) -> &[(Role, usize)] {
        &self.sizes
    }
}

/// Deterministically shuffles `items` under `rng` and assigns contiguous
/// blocks to the plan's roles, in plan order.
///
/// The same `(seed, plan)` always yields the same partition.
pub fn split_dataset<T: Clone>(
    items: &[T],
    plan: &SplitPlan,
    rng: &mut impl Rng,
) -> Result<Vec<(Role, Vec<T>)>, CoreError> {
    let total = plan.total();
    if total != items.len() {
        return Err(CoreError::SizeMismatch {
            plan_total: total,
            available: items.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(plan.sizes.len());
    let mut cursor = 0;
    for &(role, n) in &plan.sizes {
        let block = order[cursor..cursor + n]
            .iter()
            .map(|&i| items[i].clone())
            .collect();
        cursor += n;
        out.push((role, block));
    }
    Ok(out)
}

/// Master seed plus a counter-based stream derivation rule.
///
/// `stream(i)` is a pure function of `(master_seed, i)`: identical arguments
/// yield bit-identical draws across runs, and distinct counters yield
/// statistically independent streams. This is what lets trials run in
/// parallel while staying reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomnessContract {
    pub master_seed: u64,
}

impl RandomnessContract {
    pub fn new(master_seed: u64) -> Self {
        RandomnessContract { master_seed }
    }

    /// The `i`-th independent stream of this contract.
    pub fn stream(&self, i: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(i);
        rng
    }
}

/// Ceiling that tolerates float dust just above an integer, so that rank
/// computations like `ceil((1 - alpha) * (n + 1))` do not overshoot when the
/// product lands on `k + 1e-16`.
pub(crate) fn rank_ceil(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}
