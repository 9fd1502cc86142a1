//! Edge-cloud cascading by conformal alignment.
//!
//! Each test input's edge prediction set either aligns with the cloud
//! (its cloud-referenced coverage reaches `1 - alpha`) or not. Screening
//! pools the unlabeled test batch with a labeled validation set, walks both
//! in ascending order of a predicted alignment score, and stops as soon as a
//! validation-based estimate of the false discovery proportion among the
//! still-unscreened test inputs drops to the tolerated level. The guarantee
//! does not depend on the predictor's quality — a bad predictor only costs
//! deferral rate, never validity — so the predictor is pluggable, with
//! isotonic regression on the edge's self-estimate as the default.

use thiserror::Error;

use crate::core::{PredictionSet, ProbVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error("isotonic training set is empty")]
    EmptyTraining,
}

/// One pooled record: the edge's self-estimate `u`, the true alignment
/// `c_star` (cloud mass of the edge set; meaningful for reference data), and
/// the predicted alignment `c_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentRecord {
    pub id: u64,
    pub u: f64,
    pub c_star: f64,
    pub c_hat: f64,
}

/// True alignment score of an edge set: the cloud probability mass it
/// captures.
pub fn alignment_score(p_star: &ProbVector, edge_set: &PredictionSet) -> f64 {
    p_star.mass(edge_set)
}

/// Maps an alignment predictor over the edge's self-estimate.
pub trait AlignmentPredictor {
    fn predict(&self, u: f64) -> f64;
}

/// Non-decreasing step function fit by pool-adjacent-violators.
///
/// Prediction uses the right-continuous step convention: the value of the
/// largest knot at or below `u`, clamping below the first knot to the first
/// step value.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicPredictor {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl AlignmentPredictor for IsotonicPredictor {
    fn predict(&self, u: f64) -> f64 {
        match self.knots.partition_point(|&x| x <= u) {
            0 => self.values[0],
            k => self.values[k - 1],
        }
    }
}

/// Fits the isotonic predictor on `(u, c_star)` pairs.
pub fn fit_isotonic(train: &[(f64, f64)]) -> Result<IsotonicPredictor, CascadeError> {
    if train.is_empty() {
        return Err(CascadeError::EmptyTraining);
    }
    let mut sorted = train.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Collapse duplicate abscissas first; PAVA requires one block per knot.
    let mut knots: Vec<f64> = Vec::new();
    let mut blocks: Vec<(f64, f64)> = Vec::new(); // (target sum, weight)
    for (x, y) in sorted {
        if knots.last() == Some(&x) {
            let last = blocks.last_mut().unwrap();
            last.0 += y;
            last.1 += 1.0;
        } else {
            knots.push(x);
            blocks.push((y, 1.0));
        }
    }

    // Pool adjacent violators: merge any block whose mean undercuts its
    // predecessor until the means are non-decreasing.
    let mut merged: Vec<(f64, f64, usize)> = Vec::new(); // (sum, weight, span)
    for (sum, weight) in blocks {
        let mut current = (sum, weight, 1usize);
        while let Some(&(psum, pweight, pspan)) = merged.last() {
            if psum / pweight > current.0 / current.1 {
                merged.pop();
                current = (psum + current.0, pweight + current.1, pspan + current.2);
            } else {
                break;
            }
        }
        merged.push(current);
    }

    let mut values = Vec::with_capacity(knots.len());
    for (sum, weight, span) in merged {
        let mean = sum / weight;
        for _ in 0..span {
            values.push(mean);
        }
    }
    Ok(IsotonicPredictor { knots, values })
}

/// Estimated false discovery proportion of the unscreened test inputs,
/// inferred from the unscreened validation inputs.
///
/// Follows the `0/0 = 0` convention when no test inputs remain.
pub fn fdp_estimate(
    n_te: usize,
    n_val: usize,
    unscreened_val_misaligned: usize,
    unscreened_te: usize,
) -> f64 {
    if unscreened_te == 0 {
        return 0.0;
    }
    (n_te as f64 / (1.0 + n_val as f64)) * (1.0 + unscreened_val_misaligned as f64)
        / unscreened_te as f64
}

/// Which pool a ledger entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RecordRole {
    Validation,
    Test,
}

/// Full trace of one screening run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningLedger {
    /// Pooled records in screening order: `(role, index into the role's
    /// input slice)`, ascending by `c_hat` with ties broken by role (test
    /// before validation) and then id.
    pub order: Vec<(RecordRole, usize)>,
    /// FDP estimates at steps `0..=k_ca`.
    pub fdp_trajectory: Vec<f64>,
    /// First step at which the estimate reached the tolerated level.
    pub k_ca: usize,
    /// Indices (into the test slice) of the unscreened test inputs at
    /// `k_ca` — the inputs kept at the edge.
    pub selected: Vec<usize>,
}

/// Sequential screening with FDR control.
///
/// Validation records carry true alignment scores; a record is misaligned
/// when `c_star < 1 - alpha_label_mis` (strict). The walk stops at the first
/// step whose estimate is within `delta`; step 0 (nothing screened) is legal,
/// and an exhausted pool degrades to deferring everything.
///
/// Ties in the predicted score screen test records before validation
/// records. Coarse predictors (any step function, isotonic included) tie
/// whole blocks of the pool; screening tied validation records first would
/// let the estimator stop while equally-ranked test records are still
/// unscreened and unaccounted for, which inflates the realized FDR. The
/// test-first direction keeps tied test records out of the kept set until
/// the validation evidence at that score level is spent, so the bound stays
/// conservative under arbitrary tie mass.
pub fn conformal_alignment_screen(
    val_records: &[AlignmentRecord],
    test_records: &[AlignmentRecord],
    alpha_label_mis: f64,
    delta: f64,
) -> ScreeningLedger {
    let n_val = val_records.len();
    let n_te = test_records.len();
    let threshold = 1.0 - alpha_label_mis;

    let mut order: Vec<(RecordRole, usize)> = (0..n_val)
        .map(|i| (RecordRole::Validation, i))
        .chain((0..n_te).map(|i| (RecordRole::Test, i)))
        .collect();
    order.sort_by(|&(role_a, ia), &(role_b, ib)| {
        let rec = |role: RecordRole, i: usize| match role {
            RecordRole::Validation => &val_records[i],
            RecordRole::Test => &test_records[i],
        };
        rec(role_a, ia)
            .c_hat
            .total_cmp(&rec(role_b, ib).c_hat)
            .then(role_b.cmp(&role_a))
            .then(rec(role_a, ia).id.cmp(&rec(role_b, ib).id))
    });

    let mut uns_val_misaligned = val_records
        .iter()
        .filter(|r| r.c_star < threshold)
        .count();
    let mut uns_te = n_te;

    let mut trajectory = Vec::new();
    let mut k_ca = order.len();
    for k in 0..=order.len() {
        if k > 0 {
            match order[k - 1] {
                (RecordRole::Validation, i) => {
                    if val_records[i].c_star < threshold {
                        uns_val_misaligned -= 1;
                    }
                }
                (RecordRole::Test, _) => uns_te -= 1,
            }
        }
        let estimate = fdp_estimate(n_te, n_val, uns_val_misaligned, uns_te);
        trajectory.push(estimate);
        if estimate <= delta {
            k_ca = k;
            break;
        }
    }

    let mut selected: Vec<usize> = order[k_ca..]
        .iter()
        .filter_map(|&(role, i)| (role == RecordRole::Test).then_some(i))
        .collect();
    selected.sort_unstable();

    ScreeningLedger {
        order,
        fdp_trajectory: trajectory,
        k_ca,
        selected,
    }
}

/// Heuristic baseline: defer whenever the edge's top-1 confidence falls
/// below the threshold (conventionally `1 - delta`).
pub fn confidence_based_deferral(confidences: &[f64], tau_def: f64) -> Vec<bool> {
    confidences.iter().map(|&c| c < tau_def).collect()
}

/// Final routing of a single test input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestAssignment {
    /// Processed at the edge (kept in the selected set).
    pub edge: bool,
    /// Cloud mass of the set actually served.
    pub c_star_assigned: f64,
    /// Size of the set actually served.
    pub set_size: usize,
    /// Size of the cloud oracle set for this input (non-empty by
    /// construction of the highest-mass set).
    pub cloud_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeMetrics {
    pub satisfaction_rate: f64,
    pub deferral_rate: f64,
    pub normalized_inefficiency: f64,
}

/// Batch metrics over per-test assignments.
///
/// Satisfaction is restricted to edge-processed inputs (cloud-assigned ones
/// satisfy by construction and are excluded), with `0/0 = 0` when nothing
/// ran at the edge.
pub fn cascade_metrics(
    assignments: &[TestAssignment],
    alpha_label_mis: f64,
) -> CascadeMetrics {
    let n = assignments.len();
    let threshold = 1.0 - alpha_label_mis;
    let edge_count = assignments.iter().filter(|a| a.edge).count();
    let satisfied = assignments
        .iter()
        .filter(|a| a.edge && a.c_star_assigned >= threshold)
        .count();
    let satisfaction_rate = if edge_count == 0 {
        0.0
    } else {
        satisfied as f64 / edge_count as f64
    };
    let deferral_rate = 1.0 - edge_count as f64 / n as f64;
    let normalized_inefficiency = assignments
        .iter()
        .map(|a| a.set_size as f64 / a.cloud_size as f64)
        .sum::<f64>()
        / n as f64;
    CascadeMetrics {
        satisfaction_rate,
        deferral_rate,
        normalized_inefficiency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{make_prob_vector, RandomnessContract};
    use rand::Rng;

    #[test]
    fn alignment_score_is_set_mass() {
        let p = make_prob_vector(&[0.6, 0.3, 0.1]).unwrap();
        assert!((alignment_score(&p, &PredictionSet::full(3)) - 1.0).abs() < 1e-12);
        assert_eq!(alignment_score(&p, &PredictionSet::empty()), 0.0);
        let s = PredictionSet::from_members([0, 2]);
        assert!((alignment_score(&p, &s) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn isotonic_two_point_fit() {
        let f = fit_isotonic(&[(0.1, 0.2), (0.5, 0.8)]).unwrap();
        assert_eq!(f.predict(0.1), 0.2);
        assert_eq!(f.predict(0.5), 0.8);
        // Interior points take the value of the left step.
        assert_eq!(f.predict(0.3), 0.2);
        // Outside the training range: nearest step value.
        assert_eq!(f.predict(0.0), 0.2);
        assert_eq!(f.predict(0.9), 0.8);
    }

    #[test]
    fn isotonic_pools_antitone_pair() {
        let f = fit_isotonic(&[(0.1, 0.9), (0.9, 0.1)]).unwrap();
        assert_eq!(f.predict(0.1), 0.5);
        assert_eq!(f.predict(0.9), 0.5);
        assert_eq!(f.predict(0.5), 0.5);
    }

    #[test]
    fn isotonic_constant_targets() {
        let f = fit_isotonic(&[(0.2, 0.7), (0.4, 0.7), (0.9, 0.7)]).unwrap();
        for u in [0.0, 0.3, 0.65, 1.0] {
            assert_eq!(f.predict(u), 0.7);
        }
    }

    #[test]
    fn isotonic_predictions_monotone_randomized() {
        let contract = RandomnessContract::new(61);
        let mut rng = contract.stream(0);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let train: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            let f = fit_isotonic(&train).unwrap();
            let mut last = f.predict(0.0);
            for k in 1..=100 {
                let u = k as f64 / 100.0;
                let v = f.predict(u);
                assert!(v >= last - 1e-12, "prediction decreased at u = {u}");
                last = v;
            }
        }
    }

    #[test]
    fn isotonic_empty_training() {
        assert!(matches!(fit_isotonic(&[]), Err(CascadeError::EmptyTraining)));
    }

    #[test]
    fn fdp_estimate_hand_values() {
        assert_eq!(fdp_estimate(2, 3, 1, 2), 0.5);
        assert_eq!(fdp_estimate(5, 3, 2, 0), 0.0);
        // All validation misaligned with nothing screened: exactly 1.
        assert_eq!(fdp_estimate(7, 4, 4, 7), 1.0);
    }

    fn rec(id: u64, c_star: f64, c_hat: f64) -> AlignmentRecord {
        AlignmentRecord {
            id,
            u: c_hat,
            c_star,
            c_hat,
        }
    }

    #[test]
    fn screen_hand_trace() {
        // Two validation records (aligned 0.9, misaligned 0.5) and one test
        // input; threshold 0.8, tolerance 0.5; the misaligned record sorts
        // first. Step 0 estimates (1/3)(1+1)/1 = 2/3 > 0.5; screening it
        // brings the estimate to (1/3)(1+0)/1 = 1/3 <= 0.5.
        let val = vec![rec(0, 0.9, 0.7), rec(1, 0.5, 0.2)];
        let test = vec![rec(2, 0.85, 0.9)];
        let ledger = conformal_alignment_screen(&val, &test, 0.2, 0.5);
        assert_eq!(ledger.k_ca, 1);
        assert_eq!(ledger.order[0], (RecordRole::Validation, 1));
        assert!((ledger.fdp_trajectory[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((ledger.fdp_trajectory[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(ledger.selected, vec![0]);
    }

    #[test]
    fn screen_selects_everything_with_clean_validation() {
        // All validation aligned and n_val >= 1/delta - 1: step 0 already
        // passes, keeping the whole test batch at the edge.
        let val: Vec<AlignmentRecord> =
            (0..9).map(|i| rec(i, 0.95, i as f64 / 10.0)).collect();
        let test: Vec<AlignmentRecord> =
            (0..4).map(|i| rec(100 + i, 0.1, 0.5)).collect();
        let ledger = conformal_alignment_screen(&val, &test, 0.2, 0.1);
        assert_eq!(ledger.k_ca, 0);
        assert_eq!(ledger.selected, vec![0, 1, 2, 3]);
    }

    #[test]
    fn screen_worst_case_defers_all() {
        // Every validation record misaligned and a tiny tolerance: the walk
        // only stops once no test inputs remain.
        let val: Vec<AlignmentRecord> =
            (0..5).map(|i| rec(i, 0.1, i as f64 / 10.0)).collect();
        let test: Vec<AlignmentRecord> =
            (0..3).map(|i| rec(100 + i, 0.9, 0.05 * i as f64)).collect();
        let ledger = conformal_alignment_screen(&val, &test, 0.2, 0.01);
        assert!(ledger.selected.is_empty());
        assert_eq!(*ledger.fdp_trajectory.last().unwrap(), 0.0);
    }

    #[test]
    fn screen_tie_rule_test_first() {
        let val = vec![rec(3, 0.9, 0.5), rec(1, 0.9, 0.5)];
        let test = vec![rec(2, 0.9, 0.5)];
        let ledger = conformal_alignment_screen(&val, &test, 0.2, 1e-9);
        // Equal c_hat everywhere: test before validation, then ascending id.
        assert_eq!(
            ledger.order,
            vec![
                (RecordRole::Test, 0),
                (RecordRole::Validation, 1),
                (RecordRole::Validation, 0)
            ]
        );
    }

    #[test]
    fn screen_tied_blocks_hold_test_records_first() {
        // A coarse predictor collapses the whole pool onto one score: within
        // the tied block every test record must precede every validation
        // record, so the walk cannot keep a tied test record on the strength
        // of validation evidence screened out beneath it.
        let val: Vec<AlignmentRecord> = (0..10)
            .map(|i| rec(i, if i < 5 { 0.1 } else { 0.95 }, 0.4))
            .collect();
        let test: Vec<AlignmentRecord> = (0..10).map(|i| rec(100 + i, 0.9, 0.4)).collect();
        let ledger = conformal_alignment_screen(&val, &test, 0.2, 0.25);
        let first_val = ledger
            .order
            .iter()
            .position(|&(role, _)| role == RecordRole::Validation)
            .unwrap();
        let last_test = ledger
            .order
            .iter()
            .rposition(|&(role, _)| role == RecordRole::Test)
            .unwrap();
        assert!(last_test < first_val, "tied test records must sort first");
    }

    #[test]
    fn screen_monotone_in_delta() {
        let contract = RandomnessContract::new(83);
        let mut rng = contract.stream(0);
        for _ in 0..30 {
            let val: Vec<AlignmentRecord> = (0..20)
                .map(|i| rec(i, rng.random(), rng.random()))
                .collect();
            let test: Vec<AlignmentRecord> = (0..10)
                .map(|i| rec(100 + i, rng.random(), rng.random()))
                .collect();
            let mut last_k = usize::MAX;
            for delta in [0.05, 0.1, 0.2, 0.4, 0.8] {
                let ledger = conformal_alignment_screen(&val, &test, 0.2, delta);
                assert!(
                    ledger.k_ca <= last_k,
                    "k_ca grew from {last_k} to {} at delta {delta}",
                    ledger.k_ca
                );
                last_k = ledger.k_ca;
            }
        }
    }

    #[test]
    fn screen_is_deterministic() {
        let val: Vec<AlignmentRecord> = (0..6).map(|i| rec(i, 0.8, 0.5)).collect();
        let test: Vec<AlignmentRecord> = (0..6).map(|i| rec(50 + i, 0.3, 0.5)).collect();
        let a = conformal_alignment_screen(&val, &test, 0.2, 0.3);
        let b = conformal_alignment_screen(&val, &test, 0.2, 0.3);
        assert_eq!(a, b);
    }

    #[test]
    fn deferral_threshold_edges() {
        assert_eq!(
            confidence_based_deferral(&[0.2, 0.9], 0.0),
            vec![false, false]
        );
        assert_eq!(
            confidence_based_deferral(&[0.2, 0.9, 1.0], 1.0),
            vec![true, true, false]
        );
        assert_eq!(
            confidence_based_deferral(&[0.9, 0.6], 0.8),
            vec![false, true]
        );
    }

    #[test]
    fn metrics_trivials() {
        let all_deferred = vec![
            TestAssignment {
                edge: false,
                c_star_assigned: 0.9,
                set_size: 3,
                cloud_size: 3,
            };
            4
        ];
        let m = cascade_metrics(&all_deferred, 0.2);
        assert_eq!(m.satisfaction_rate, 0.0);
        assert_eq!(m.deferral_rate, 1.0);
        assert_eq!(m.normalized_inefficiency, 1.0);

        let all_edge = vec![
            TestAssignment {
                edge: true,
                c_star_assigned: 0.85,
                set_size: 2,
                cloud_size: 2,
            };
            4
        ];
        let m = cascade_metrics(&all_edge, 0.2);
        assert_eq!(m.satisfaction_rate, 1.0);
        assert_eq!(m.deferral_rate, 0.0);
        assert_eq!(m.normalized_inefficiency, 1.0);

        let double = vec![TestAssignment {
            edge: true,
            c_star_assigned: 0.5,
            set_size: 4,
            cloud_size: 2,
        }];
        let m = cascade_metrics(&double, 0.2);
        assert_eq!(m.normalized_inefficiency, 2.0);
        assert_eq!(m.satisfaction_rate, 0.0);
    }
}
