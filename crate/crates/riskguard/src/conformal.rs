//! Split conformal prediction, localized conformal prediction, and
//! highest-mass sets.
//!
//! These are the label-set constructors used both standalone and as the
//! edge-side set builders for cascading. The quantile rule keeps the usual
//! point mass at infinity, so an empty calibration set degrades gracefully to
//! the full label set instead of silently undercovering.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::core::{rank_ceil, PredictionSet, ProbVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),

    #[error("feature dimension mismatch: test has {test}, calibration has {cal}")]
    DimensionMismatch { test: usize, cal: usize },

    #[error("kernel bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
}

/// Nonconformity score `J(x, y)` evaluated against a designated distribution.
///
/// Only the negative log-probability score is registered; probability zero
/// maps to `+inf` so such labels never enter a set with a finite threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFunction {
    NegLogProb,
}

impl ScoreFunction {
    pub fn score(&self, dist: &ProbVector, y: usize) -> f64 {
        match self {
            ScoreFunction::NegLogProb => {
                let p = dist.prob(y);
                if p > 0.0 {
                    -p.ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Gaussian localization kernel `exp(-||x1 - x2||^2 / (2 h^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcpConfig {
    pub bandwidth: f64,
}

impl LcpConfig {
    pub fn new(bandwidth: f64) -> Result<Self, ConformalError> {
        if !(bandwidth > 0.0) {
            return Err(ConformalError::BadBandwidth(bandwidth));
        }
        Ok(LcpConfig { bandwidth })
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// Split-conformal calibration threshold.
///
/// Returns the k-th smallest element of `scores ∪ {+inf}` where
/// `k = ceil((1 - alpha) (n + 1))`; the infinite point mass is returned
/// whenever `k = n + 1` (in particular for an empty calibration set).
pub fn cp_quantile(scores: &[f64], alpha_label_mis: f64) -> Result<f64, ConformalError> {
    if !(alpha_label_mis > 0.0 && alpha_label_mis < 1.0) {
        return Err(ConformalError::AlphaOutOfRange(alpha_label_mis));
    }
    let n = scores.len();
    let k = rank_ceil((1.0 - alpha_label_mis) * (n as f64 + 1.0));
    if k > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// All labels whose score does not exceed the threshold `q`.
pub fn cp_set(dist: &ProbVector, q: f64, score: ScoreFunction) -> PredictionSet {
    PredictionSet::from_members((0..dist.len()).filter(|&y| score.score(dist, y) <= q))
}

/// Highest-mass set: the smallest-cardinality set with total probability at
/// least `target_mass`.
///
/// Built greedily by descending probability, ties broken by ascending label
/// index. A `1e-12` slack absorbs the rounding left over from normalization
/// when the target is the full mass.
pub fn hms(dist: &ProbVector, target_mass: f64) -> PredictionSet {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| {
        dist.prob(b)
            .partial_cmp(&dist.prob(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut members = Vec::new();
    let mut cum = 0.0;
    for y in order {
        members.push(y);
        cum += dist.prob(y);
        if cum + 1e-12 >= target_mass {
            break;
        }
    }
    PredictionSet::from_members(members)
}

/// Localized conformal threshold around the test point `x`.
///
/// Draws a single perturbation `x~ = x + h z`, `z ~ N(0, I)` (the density
/// proportional to the Gaussian kernel at `x`), weights every calibration
/// score by its kernel affinity to `x~`, attaches the test point's own weight
/// to the infinite atom, and returns the smallest score whose cumulative
/// weight reaches `1 - alpha`.
pub fn lcp_quantile(
    x: &[f64],
    cal: &[(Vec<f64>, f64)],
    cfg: &LcpConfig,
    alpha_label_mis: f64,
    rng: &mut impl Rng,
) -> Result<f64, ConformalError> {
    if !(alpha_label_mis > 0.0 && alpha_label_mis < 1.0) {
        return Err(ConformalError::AlphaOutOfRange(alpha_label_mis));
    }
    for (feat, _) in cal {
        if feat.len() != x.len() {
            return Err(ConformalError::DimensionMismatch {
                test: x.len(),
                cal: feat.len(),
            });
        }
    }
    let perturbed: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let z: f64 = rng.sample(StandardNormal);
            xi + cfg.bandwidth * z
        })
        .collect();

    let w_test = cfg.kernel(x, &perturbed);
    let raw: Vec<f64> = cal.iter().map(|(f, _)| cfg.kernel(f, &perturbed)).collect();
    let total = w_test + raw.iter().sum::<f64>();
    if !(total > 0.0) {
        // All kernel evaluations underflowed; only the infinite atom is left.
        return Ok(f64::INFINITY);
    }

    let mut weighted: Vec<(f64, f64)> = cal
        .iter()
        .zip(&raw)
        .map(|((_, score), &w)| (*score, w / total))
        .collect();
    weighted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let need = 1.0 - alpha_label_mis;
    let mut cum = 0.0;
    for (score, w) in weighted {
        cum += w;
        if cum + 1e-12 >= need {
            return Ok(score);
        }
    }
    Ok(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{make_prob_vector, RandomnessContract};
    use proptest::prelude::*;
    use rand::Rng;

    /// Rank oracle: explicit sort of `scores ∪ {inf}`, then index `k - 1`.
    fn quantile_rank_oracle(scores: &[f64], alpha: f64) -> f64 {
        let mut augmented = scores.to_vec();
        augmented.push(f64::INFINITY);
        augmented.sort_by(f64::total_cmp);
        let k = ((1.0 - alpha) * augmented.len() as f64 - 1e-9).ceil() as usize;
        augmented[k - 1]
    }

    #[test]
    fn quantile_matches_rank_oracle_on_examples() {
        assert_eq!(cp_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 3.0);
        assert_eq!(cp_quantile(&[], 0.1).unwrap(), f64::INFINITY);
        assert_eq!(cp_quantile(&[5.0], 0.5).unwrap(), 5.0);
    }

    #[test]
    fn quantile_matches_rank_oracle_randomized() {
        let contract = RandomnessContract::new(11);
        let mut rng = contract.stream(0);
        for case in 0..200 {
            let n = rng.random_range(0..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
            let alpha = rng.random_range(0.01..0.99);
            let got = cp_quantile(&scores, alpha).unwrap();
            let want = quantile_rank_oracle(&scores, alpha);
            assert_eq!(got, want, "case {case}: n={n} alpha={alpha}");
        }
    }

    #[test]
    fn quantile_rejects_bad_alpha() {
        assert!(cp_quantile(&[1.0], 0.0).is_err());
        assert!(cp_quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn set_from_hand_scores() {
        let dist = make_prob_vector(&[0.7, 0.2, 0.1]).unwrap();
        let q = -(0.15f64).ln();
        let set = cp_set(&dist, q, ScoreFunction::NegLogProb);
        assert_eq!(set, PredictionSet::from_members([0, 1]));
    }

    #[test]
    fn set_extremes() {
        let dist = make_prob_vector(&[0.7, 0.2, 0.1]).unwrap();
        assert_eq!(
            cp_set(&dist, f64::INFINITY, ScoreFunction::NegLogProb),
            PredictionSet::full(3)
        );
        assert_eq!(
            cp_set(&dist, f64::NEG_INFINITY, ScoreFunction::NegLogProb),
            PredictionSet::empty()
        );
    }

    #[test]
    fn zero_probability_labels_stay_out() {
        let dist = make_prob_vector(&[1.0, 0.0]).unwrap();
        let set = cp_set(&dist, 1e12, ScoreFunction::NegLogProb);
        assert!(set.contains(0));
        assert!(!set.contains(1));
    }

    #[test]
    fn hms_examples() {
        let d = make_prob_vector(&[0.5, 0.3, 0.2]).unwrap();
        assert_eq!(hms(&d, 0.7), PredictionSet::from_members([0, 1]));
        let u = make_prob_vector(&[0.25; 4]).unwrap();
        assert_eq!(hms(&u, 1.0), PredictionSet::full(4));
        let tie = make_prob_vector(&[0.4, 0.4, 0.2]).unwrap();
        assert_eq!(hms(&tie, 0.4), PredictionSet::from_members([0]));
    }

    #[test]
    fn hms_mass_and_minimality_randomized() {
        let contract = RandomnessContract::new(5);
        let mut rng = contract.stream(0);
        for _ in 0..300 {
            let n = rng.random_range(2..12);
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let d = make_prob_vector(&raw.iter().map(|v| v / total).collect::<Vec<_>>())
                .unwrap();
            let target = rng.random_range(0.05..1.0);
            let set = hms(&d, target);
            let mass = d.mass(&set);
            assert!(mass + 1e-9 >= target, "mass {mass} below target {target}");
            // Dropping the smallest-probability member must break the target.
            if set.len() > 1 {
                let smallest = set
                    .members()
                    .min_by(|&a, &b| d.prob(a).partial_cmp(&d.prob(b)).unwrap())
                    .unwrap();
                let reduced: f64 = mass - d.prob(smallest);
                assert!(
                    reduced + 1e-12 < target,
                    "set not minimal: {reduced} still covers {target}"
                );
            }
        }
    }

    #[test]
    fn lcp_equals_cp_when_weights_equal() {
        let contract = RandomnessContract::new(17);
        let mut rng = contract.stream(0);
        let cfg = LcpConfig::new(1.0).unwrap();
        for case in 0..100 {
            let n = rng.random_range(1..30);
            let x = vec![0.3, -1.2];
            // All calibration features identical to x: kernel weights match
            // the test atom's weight exactly, whatever the perturbation.
            let cal: Vec<(Vec<f64>, f64)> = (0..n)
                .map(|_| (x.clone(), rng.random::<f64>() * 4.0))
                .collect();
            let alpha = rng.random_range(0.05..0.95);
            let scores: Vec<f64> = cal.iter().map(|(_, s)| *s).collect();
            let got = lcp_quantile(&x, &cal, &cfg, alpha, &mut rng).unwrap();
            let want = cp_quantile(&scores, alpha).unwrap();
            assert_eq!(got, want, "case {case}: n={n} alpha={alpha}");
        }
    }

    #[test]
    fn lcp_flat_kernel_limit() {
        let contract = RandomnessContract::new(23);
        let mut rng = contract.stream(0);
        let cfg = LcpConfig::new(1e9).unwrap();
        let cal: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|i| (vec![i as f64, -(i as f64)], i as f64 * 0.1))
            .collect();
        let x = vec![0.5, 2.5];
        let scores: Vec<f64> = cal.iter().map(|(_, s)| *s).collect();
        for alpha in [0.1, 0.3, 0.5] {
            let got = lcp_quantile(&x, &cal, &cfg, alpha, &mut rng).unwrap();
            assert_eq!(got, cp_quantile(&scores, alpha).unwrap());
        }
    }

    #[test]
    fn lcp_two_atom_hand_case() {
        // One calibration point carrying the same kernel weight as the test
        // atom: each gets weight 1/2, so at alpha = 0.4 the finite score's
        // cumulative weight 0.5 misses 0.6 and the threshold is infinite.
        let contract = RandomnessContract::new(29);
        let mut rng = contract.stream(0);
        let cfg = LcpConfig::new(2.0).unwrap();
        let x = vec![1.0];
        let cal = vec![(vec![1.0], 2.0)];
        let got = lcp_quantile(&x, &cal, &cfg, 0.4, &mut rng).unwrap();
        assert_eq!(got, f64::INFINITY);
    }

    #[test]
    fn lcp_dimension_mismatch() {
        let contract = RandomnessContract::new(31);
        let mut rng = contract.stream(0);
        let cfg = LcpConfig::new(1.0).unwrap();
        let err = lcp_quantile(&[1.0, 2.0], &[(vec![1.0], 0.5)], &cfg, 0.1, &mut rng);
        assert!(matches!(
            err,
            Err(ConformalError::DimensionMismatch { test: 2, cal: 1 })
        ));
    }

    proptest! {
        #[test]
        fn nesting_in_threshold(
            raw in proptest::collection::vec(0.01f64..1.0, 2..8),
            q1 in -2.0f64..6.0,
            dq in 0.0f64..4.0,
        ) {
            let total: f64 = raw.iter().sum();
            let d = make_prob_vector(&raw.iter().map(|v| v / total).collect::<Vec<_>>()).unwrap();
            let small = cp_set(&d, q1, ScoreFunction::NegLogProb);
            let large = cp_set(&d, q1 + dq, ScoreFunction::NegLogProb);
            prop_assert!(small.is_subset(&large));
        }
    }
}
