//! Optimized-certainty-equivalent risks on prediction sets.
//!
//! An OCE risk is `inf_t { t + E[psi(loss - t)] }` for a nondecreasing convex
//! cost `psi`; the average risk, entropic risk, and CVaR are the three
//! instantiations used here. The auxiliary parameter `t` is optimized by
//! golden-section search over the loss range, which is lossless for all three
//! costs: the CVaR minimizer is a loss quantile, the entropic minimizer is
//! the log-MGF value, and the average is flat in `t`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{MultiLabelExample, PredictionSet};

/// Absolute tolerance on `t` for the golden-section search.
const T_SEARCH_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OceError {
    #[error("loss sequence is empty")]
    EmptyLosses,

    #[error("entropic sensitivity must be positive, got {0}")]
    BadEntropicZeta(f64),

    #[error("CVaR level must lie in [0, 1), got {0}")]
    BadCvarZeta(f64),

    #[error("nested-set scores must lie in [0, 1], got {0}")]
    ScoreOutOfRange(f64),

    #[error("lambda grid must be strictly ascending")]
    GridNotAscending,

    #[error("loss row {row} increases along the lambda grid at column {col}")]
    NonMonotoneRow { row: usize, col: usize },

    #[error("ground truth kind does not match the loss function")]
    TruthMismatch,
}

/// Loss functions on prediction sets, both bounded in `[0, 1]` and
/// non-increasing as the set grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetLoss {
    /// `1` if the label is outside the set, else `0`.
    Miscoverage,
    /// False-negative rate `1 - |Y+ ∩ Γ| / |Y+|`, with `|Y+| = 0` giving 0.
    Fnr,
}

/// Ground truth consumed by a [`SetLoss`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroundTruth {
    Label(usize),
    Items(BTreeSet<usize>),
}

/// Evaluates a set loss against the ground truth.
pub fn set_loss(
    loss: SetLoss,
    truth: &GroundTruth,
    set: &PredictionSet,
) -> Result<f64, OceError> {
    match (loss, truth) {
        (SetLoss::Miscoverage, GroundTruth::Label(y)) => {
            Ok(if set.contains(*y) { 0.0 } else { 1.0 })
        }
        (SetLoss::Fnr, GroundTruth::Items(positives)) => {
            if positives.is_empty() {
                return Ok(0.0);
            }
            let hit = positives.iter().filter(|&&i| set.contains(i)).count();
            Ok(1.0 - hit as f64 / positives.len() as f64)
        }
        _ => Err(OceError::TruthMismatch),
    }
}

/// OCE cost function `psi`; all variants are nondecreasing and convex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFunction {
    /// `psi(u) = u`, recovering the expected loss.
    Average,
    /// `psi(u) = (exp(zeta u) - 1) / zeta`, `zeta > 0`.
    Entropic { zeta: f64 },
    /// `psi(u) = max(u, 0) / (1 - zeta)`, `zeta in [0, 1)`.
    Cvar { zeta: f64 },
}

impl CostFunction {
    pub fn entropic(zeta: f64) -> Result<Self, OceError> {
        if !(zeta > 0.0) {
            return Err(OceError::BadEntropicZeta(zeta));
        }
        Ok(CostFunction::Entropic { zeta })
    }

    pub fn cvar(zeta: f64) -> Result<Self, OceError> {
        if !(0.0..1.0).contains(&zeta) {
            return Err(OceError::BadCvarZeta(zeta));
        }
        Ok(CostFunction::Cvar { zeta })
    }

    pub fn psi(&self, u: f64) -> f64 {
        match *self {
            CostFunction::Average => u,
            CostFunction::Entropic { zeta } => ((zeta * u).exp() - 1.0) / zeta,
            CostFunction::Cvar { zeta } => u.max(0.0) / (1.0 - zeta),
        }
    }
}

/// Payoff transform feeding the concentration bounds:
/// `v = t + psi(loss - t)`.
pub fn oce_payoff(cost: &CostFunction, t: f64, loss_value: f64) -> f64 {
    t + cost.psi(loss_value - t)
}

/// Range of [`oce_payoff`] over losses in `[0, ell_max]`; `psi` is
/// nondecreasing, so the endpoints are attained at the endpoints.
pub fn oce_payoff_bounds(cost: &CostFunction, t: f64, ell_max: f64) -> (f64, f64) {
    (oce_payoff(cost, t, 0.0), oce_payoff(cost, t, ell_max))
}

/// A complete risk specification: the set loss, the OCE cost, the auxiliary
/// parameter, and the loss supremum (1 for both bounded losses here).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskQuery {
    pub loss: SetLoss,
    pub cost: CostFunction,
    pub t: f64,
    pub ell_max: f64,
}

impl RiskQuery {
    pub fn new(loss: SetLoss, cost: CostFunction, t: f64) -> Self {
        RiskQuery {
            loss,
            cost,
            t,
            ell_max: 1.0,
        }
    }

    pub fn payoff(&self, loss_value: f64) -> f64 {
        oce_payoff(&self.cost, self.t, loss_value)
    }

    pub fn payoff_bounds(&self) -> (f64, f64) {
        oce_payoff_bounds(&self.cost, self.t, self.ell_max)
    }
}

/// Joint objective `t + mean_i psi(loss_i - t)`.
pub fn oce_objective(losses: &[f64], t: f64, cost: &CostFunction) -> Result<f64, OceError> {
    if losses.is_empty() {
        return Err(OceError::EmptyLosses);
    }
    let mean: f64 =
        losses.iter().map(|&l| cost.psi(l - t)).sum::<f64>() / losses.len() as f64;
    Ok(t + mean)
}

/// Empirical OCE risk: the objective minimized over `t`, returned with the
/// minimizing `t`.
pub fn oce_risk(losses: &[f64], cost: &CostFunction) -> Result<(f64, f64), OceError> {
    if losses.is_empty() {
        return Err(OceError::EmptyLosses);
    }
    if matches!(cost, CostFunction::Average) {
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        return Ok((mean, 0.0));
    }
    let t_star = optimize_t(losses, cost)?;
    Ok((oce_objective(losses, t_star, cost)?, t_star))
}

/// The `t` minimizing the empirical objective on the given losses.
///
/// Intended for the held-out optimization split, never the calibration split.
pub fn optimize_t(losses: &[f64], cost: &CostFunction) -> Result<f64, OceError> {
    if losses.is_empty() {
        return Err(OceError::EmptyLosses);
    }
    if matches!(cost, CostFunction::Average) {
        return Ok(0.0);
    }
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(golden_section_min(
        |t| oce_objective(losses, t, cost).expect("losses checked non-empty"),
        lo,
        hi,
        T_SEARCH_TOL,
    ))
}

/// Golden-section minimizer for a convex function on `[a, b]`.
fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    if b - a <= tol {
        return 0.5 * (a + b);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Per-instance score vector defining the threshold family
/// `Γ_λ = { y : score(y) >= 1 - λ }`, nested by construction.
#[derive(Debug, Clone)]
pub struct NestedSetFamily {
    scores: Vec<f64>,
}

impl NestedSetFamily {
    pub fn new(scores: Vec<f64>) -> Result<Self, OceError> {
        for &s in &scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(OceError::ScoreOutOfRange(s));
            }
        }
        Ok(NestedSetFamily { scores })
    }

    pub fn from_multilabel(example: &MultiLabelExample) -> Result<Self, OceError> {
        NestedSetFamily::new(example.item_scores.clone())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// The set at threshold parameter `lambda`.
    pub fn set_at(&self, lambda: f64) -> PredictionSet {
        PredictionSet::from_members(
            (0..self.scores.len()).filter(|&i| self.scores[i] >= 1.0 - lambda),
        )
    }
}

/// A `[example x lambda]` loss matrix, stored column-major so each grid
/// point's loss sequence is contiguous for the betting bound.
#[derive(Debug, Clone)]
pub struct LossMatrix {
    data: Vec<f64>,
    examples: usize,
    lambdas: usize,
}

impl LossMatrix {
    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn lambdas(&self) -> usize {
        self.lambdas
    }

    /// Losses of every example at grid column `j`.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.examples..(j + 1) * self.examples]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.lambdas).map(move |j| self.data[j * self.examples + i])
    }
}

/// Evaluates every example's loss along an ascending lambda grid.
///
/// Rows are checked to be non-increasing; a violation signals a broken
/// score/loss combination and is reported as [`OceError::NonMonotoneRow`].
pub fn losses_along_lambda(
    families: &[NestedSetFamily],
    truths: &[GroundTruth],
    loss: SetLoss,
    lambda_grid: &[f64],
) -> Result<LossMatrix, OceError> {
    if !lambda_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(OceError::GridNotAscending);
    }
    let n = families.len();
    assert_eq!(n, truths.len(), "one ground truth per family");
    let l = lambda_grid.len();
    let mut data = vec![0.0; n * l];
    for (i, (family, truth)) in families.iter().zip(truths).enumerate() {
        let row = instance_losses(family, truth, loss, lambda_grid)?;
        for (j, &v) in row.iter().enumerate() {
            data[j * n + i] = v;
        }
        for j in 1..l {
            if row[j] > row[j - 1] + 1e-12 {
                return Err(OceError::NonMonotoneRow { row: i, col: j });
            }
        }
    }
    Ok(LossMatrix {
        data,
        examples: n,
        lambdas: l,
    })
}

/// One instance's losses along the grid, without materializing the sets.
pub(crate) fn instance_losses(
    family: &NestedSetFamily,
    truth: &GroundTruth,
    loss: SetLoss,
    lambda_grid: &[f64],
) -> Result<Vec<f64>, OceError> {
    match (loss, truth) {
        (SetLoss::Miscoverage, GroundTruth::Label(y)) => {
            let score = family.scores[*y];
            Ok(lambda_grid
                .iter()
                .map(|&lam| if score >= 1.0 - lam { 0.0 } else { 1.0 })
                .collect())
        }
        (SetLoss::Fnr, GroundTruth::Items(positives)) => {
            if positives.is_empty() {
                return Ok(vec![0.0; lambda_grid.len()]);
            }
            let mut pos_scores: Vec<f64> =
                positives.iter().map(|&i| family.scores[i]).collect();
            pos_scores.sort_by(f64::total_cmp);
            let m = pos_scores.len() as f64;
            Ok(lambda_grid
                .iter()
                .map(|&lam| {
                    let thresh = 1.0 - lam;
                    let included =
                        pos_scores.len() - pos_scores.partition_point(|&s| s < thresh);
                    1.0 - included as f64 / m
                })
                .collect())
        }
        _ => Err(OceError::TruthMismatch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::RandomnessContract;
    use proptest::prelude::*;
    use rand::Rng;

    /// Dense-grid oracle for the OCE infimum, step 1e-5 over the loss range.
    fn grid_oracle(losses: &[f64], cost: &CostFunction) -> f64 {
        let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let steps = ((hi - lo) / 1e-5).ceil() as usize;
        let mut best = f64::INFINITY;
        for k in 0..=steps.max(1) {
            let t = lo + (hi - lo) * k as f64 / steps.max(1) as f64;
            best = best.min(oce_objective(losses, t, cost).unwrap());
        }
        best
    }

    #[test]
    fn miscoverage_examples() {
        let set = PredictionSet::from_members([0, 1]);
        assert_eq!(
            set_loss(SetLoss::Miscoverage, &GroundTruth::Label(2), &set).unwrap(),
            1.0
        );
        assert_eq!(
            set_loss(SetLoss::Miscoverage, &GroundTruth::Label(1), &set).unwrap(),
            0.0
        );
    }

    #[test]
    fn fnr_hand_count() {
        let set = PredictionSet::from_members([2, 3, 7]);
        let truth = GroundTruth::Items([1, 2, 3].into_iter().collect());
        let loss = set_loss(SetLoss::Fnr, &truth, &set).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fnr_empty_positives_convention() {
        let truth = GroundTruth::Items(BTreeSet::new());
        assert_eq!(
            set_loss(SetLoss::Fnr, &truth, &PredictionSet::empty()).unwrap(),
            0.0
        );
    }

    #[test]
    fn truth_mismatch_is_rejected() {
        let set = PredictionSet::empty();
        assert!(set_loss(SetLoss::Fnr, &GroundTruth::Label(0), &set).is_err());
    }

    #[test]
    fn objective_examples() {
        let avg = oce_objective(&[0.0, 1.0, 1.0, 0.0], 0.3, &CostFunction::Average).unwrap();
        assert!((avg - 0.5).abs() < 1e-15);

        let cvar = CostFunction::cvar(0.5).unwrap();
        let v = oce_objective(&[0.0, 0.0, 1.0, 1.0], 0.0, &cvar).unwrap();
        assert!((v - 1.0).abs() < 1e-15);

        let ent = CostFunction::entropic(1.0).unwrap();
        let v = oce_objective(&[0.0, 1.0], 0.0, &ent).unwrap();
        let want = (1f64.exp() - 1.0) / 2.0;
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
    }

    #[test]
    fn risk_average_is_sample_mean() {
        let losses = [0.1, 0.4, 0.7, 0.2];
        let (risk, t) = oce_risk(&losses, &CostFunction::Average).unwrap();
        assert!((risk - 0.35).abs() < 1e-12);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn risk_cvar_bernoulli_population() {
        // Exact 5% ones: objective is t + 0.5 (1 - t), minimized at t = 0.
        let mut losses = vec![0.0; 950];
        losses.extend(vec![1.0; 50]);
        let cvar = CostFunction::cvar(0.9).unwrap();
        let (risk, _) = oce_risk(&losses, &cvar).unwrap();
        assert!((risk - 0.5).abs() < 1e-6, "{risk}");

        // Boundary case p = 1 - zeta: the objective is flat at 1.
        let mut losses = vec![0.0; 900];
        losses.extend(vec![1.0; 100]);
        let (risk, _) = oce_risk(&losses, &cvar).unwrap();
        assert!((risk - 1.0).abs() < 1e-6, "{risk}");
    }

    #[test]
    fn risk_entropic_closed_form() {
        let ent = CostFunction::entropic(1.0).unwrap();
        let (risk, t_star) = oce_risk(&[0.0, 1.0], &ent).unwrap();
        let want = ((1.0 + 1f64.exp()) / 2.0).ln();
        assert!((risk - want).abs() < 1e-7, "{risk} vs {want}");
        assert!((t_star - risk).abs() < 1e-6);
    }

    #[test]
    fn optimize_t_examples() {
        assert_eq!(optimize_t(&[0.3, 0.9], &CostFunction::Average).unwrap(), 0.0);

        let ent = CostFunction::entropic(2.0).unwrap();
        let t = optimize_t(&[0.4, 0.4, 0.4], &ent).unwrap();
        assert!((t - 0.4).abs() < 1e-7, "{t}");

        let cvar = CostFunction::cvar(0.5).unwrap();
        let t = optimize_t(&[0.0, 0.0, 0.0, 1.0], &cvar).unwrap();
        assert!(t.abs() < 1e-6, "{t}");
    }

    #[test]
    fn golden_section_matches_grid_oracle() {
        let contract = RandomnessContract::new(99);
        let mut rng = contract.stream(0);
        let costs = [
            CostFunction::Average,
            CostFunction::entropic(1.0).unwrap(),
            CostFunction::entropic(3.0).unwrap(),
            CostFunction::cvar(0.5).unwrap(),
            CostFunction::cvar(0.9).unwrap(),
        ];
        for cost in &costs {
            for _ in 0..100 {
                let n = rng.random_range(1..40);
                let losses: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let (risk, _) = oce_risk(&losses, cost).unwrap();
                let oracle = grid_oracle(&losses, cost);
                assert!(
                    (risk - oracle).abs() <= 1e-4,
                    "{cost:?}: golden {risk} vs grid {oracle}"
                );
            }
        }
    }

    #[test]
    fn cvar_dominates_mean() {
        let contract = RandomnessContract::new(101);
        let mut rng = contract.stream(0);
        let cvar = CostFunction::cvar(0.8).unwrap();
        for _ in 0..100 {
            let n = rng.random_range(1..30);
            let losses: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mean = losses.iter().sum::<f64>() / n as f64;
            let (risk, _) = oce_risk(&losses, &cvar).unwrap();
            assert!(risk >= mean - 1e-9, "CVaR {risk} under mean {mean}");
        }
    }

    #[test]
    fn empty_losses_rejected() {
        assert!(matches!(
            oce_risk(&[], &CostFunction::Average),
            Err(OceError::EmptyLosses)
        ));
        assert!(oce_objective(&[], 0.0, &CostFunction::Average).is_err());
        assert!(optimize_t(&[], &CostFunction::Average).is_err());
    }

    #[test]
    fn cost_constructors_validate() {
        assert!(CostFunction::entropic(0.0).is_err());
        assert!(CostFunction::cvar(1.0).is_err());
        assert!(CostFunction::cvar(-0.1).is_err());
    }

    #[test]
    fn risk_query_payoff_bounds() {
        let query = RiskQuery::new(SetLoss::Fnr, CostFunction::cvar(0.9).unwrap(), 0.1);
        assert_eq!(query.ell_max, 1.0);
        let (lo, hi) = query.payoff_bounds();
        // psi(u) = max(u, 0) / 0.1: zero loss pays t, full loss pays t + 9.
        assert!((lo - 0.1).abs() < 1e-15);
        assert!((hi - 9.1).abs() < 1e-12);
        assert_eq!(query.payoff(0.0), lo);
        assert_eq!(query.payoff(1.0), hi);
        for l in [0.0, 0.3, 0.7, 1.0] {
            let v = query.payoff(l);
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn loss_rows_from_hand_examples() {
        // Hand membership check: 0.9 >= 1 - 0.05 fails, 0.9 >= 1 - 0.2 holds.
        let grid = [0.05, 0.2];
        let fam = NestedSetFamily::new(vec![0.9, 0.05, 0.05]).unwrap();
        let m = losses_along_lambda(
            &[fam],
            &[GroundTruth::Label(0)],
            SetLoss::Miscoverage,
            &grid,
        )
        .unwrap();
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![1.0, 0.0]);

        let fam = NestedSetFamily::new(vec![1.0; 4]).unwrap();
        let truth = GroundTruth::Items([0, 2].into_iter().collect());
        let m = losses_along_lambda(&[fam], &[truth], SetLoss::Fnr, &grid).unwrap();
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![0.0, 0.0]);

        // True label scored 0: miscovered until lambda reaches 1.
        let fam = NestedSetFamily::new(vec![0.0, 1.0]).unwrap();
        let grid = [0.3, 0.9, 1.0];
        let m = losses_along_lambda(
            &[fam],
            &[GroundTruth::Label(0)],
            SetLoss::Miscoverage,
            &grid,
        )
        .unwrap();
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn set_at_matches_instance_losses() {
        let contract = RandomnessContract::new(7);
        let mut rng = contract.stream(0);
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        for _ in 0..50 {
            let m = rng.random_range(1..12);
            let scores: Vec<f64> = (0..m).map(|_| rng.random()).collect();
            let fam = NestedSetFamily::new(scores).unwrap();
            let positives: BTreeSet<usize> =
                (0..m).filter(|_| rng.random::<bool>()).collect();
            let truth = GroundTruth::Items(positives.clone());
            let fast = instance_losses(&fam, &truth, SetLoss::Fnr, &grid).unwrap();
            for (j, &lam) in grid.iter().enumerate() {
                let direct =
                    set_loss(SetLoss::Fnr, &truth, &fam.set_at(lam)).unwrap();
                assert!((fast[j] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_must_ascend() {
        let fam = NestedSetFamily::new(vec![0.5, 0.5]).unwrap();
        let err = losses_along_lambda(
            &[fam],
            &[GroundTruth::Label(0)],
            SetLoss::Miscoverage,
            &[0.2, 0.2],
        );
        assert!(matches!(err, Err(OceError::GridNotAscending)));
    }

    proptest! {
        #[test]
        fn psi_is_convex(
            u1 in -1.0f64..2.0,
            u2 in -1.0f64..2.0,
            theta in 0.0f64..1.0,
            zeta_e in 0.1f64..4.0,
            zeta_c in 0.0f64..0.95,
        ) {
            let costs = [
                CostFunction::Average,
                CostFunction::entropic(zeta_e).unwrap(),
                CostFunction::cvar(zeta_c).unwrap(),
            ];
            for cost in &costs {
                let mix = cost.psi(theta * u1 + (1.0 - theta) * u2);
                let hull = theta * cost.psi(u1) + (1.0 - theta) * cost.psi(u2);
                prop_assert!(mix <= hull + 1e-12, "{cost:?}: {mix} > {hull}");
            }
        }

        #[test]
        fn loss_rows_monotone_for_random_instances(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..10),
            mask in proptest::collection::vec(proptest::bool::ANY, 10),
        ) {
            let m = scores.len();
            let fam = NestedSetFamily::new(scores).unwrap();
            let positives: BTreeSet<usize> = (0..m).filter(|&i| mask[i]).collect();
            let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
            let matrix = losses_along_lambda(
                &[fam],
                &[GroundTruth::Items(positives)],
                SetLoss::Fnr,
                &grid,
            );
            prop_assert!(matrix.is_ok());
        }
    }
}
