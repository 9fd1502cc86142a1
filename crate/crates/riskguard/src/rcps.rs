//! High-probability OCE risk control: the WSR betting bound and the
//! RCPS / CRC hyperparameter selection rules.
//!
//! The upper confidence bound treats each calibration payoff
//! `v_j = t + psi(loss_j - t)` as a bounded observation, normalizes it to
//! `[0, 1]`, and runs a capital process against every candidate mean `R`:
//!
//! ```text
//! K_i(R) = prod_{j<=i} (1 + eta_j (R - v~_j))
//! ```
//!
//! Candidates whose capital exceeds `1/delta` are rejected as larger than the
//! true mean; the bound is the smallest rejected candidate, located by binary
//! search (the capital is nondecreasing in `R` because every factor is). The
//! betting rate `eta_j` is predictable — it only uses the running moments of
//! the first `j - 1` payoffs, with priors `mu = 1/2`, `sigma^2 = 1/4` — so
//! any such schedule preserves the supermartingale guarantee.

use thiserror::Error;

use crate::oce::{
    oce_payoff, oce_payoff_bounds, optimize_t, CostFunction, LossMatrix, OceError,
};

/// Loss supremum for the bounded losses used throughout.
const ELL_MAX: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RcpsError {
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),

    #[error("eta cap must lie in (0, 1), got {0}")]
    BadEtaCap(f64),

    #[error("payoff {value} outside [{lo}, {hi}]")]
    PayoffOutOfBounds { value: f64, lo: f64, hi: f64 },

    #[error("grid length {grid} does not match loss matrix width {matrix}")]
    GridMismatch { grid: usize, matrix: usize },

    #[error(transparent)]
    Oce(#[from] OceError),
}

/// Parameters of the WSR upper confidence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WsrConfig {
    /// Violation probability of the bound.
    pub delta: f64,
    /// Binary-search resolution for the candidate mean, on the normalized
    /// `[0, 1]` scale.
    pub r_grid_resolution: f64,
    /// Cap on the betting rate; strictly below 1 keeps every capital factor
    /// positive, which is what makes the search over `R` sound.
    pub eta_cap: f64,
}

impl WsrConfig {
    pub fn new(delta: f64) -> Result<Self, RcpsError> {
        Self::with_resolution(delta, 1e-4, 0.5)
    }

    pub fn with_resolution(
        delta: f64,
        r_grid_resolution: f64,
        eta_cap: f64,
    ) -> Result<Self, RcpsError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(RcpsError::BadDelta(delta));
        }
        if !(eta_cap > 0.0 && eta_cap < 1.0) {
            return Err(RcpsError::BadEtaCap(eta_cap));
        }
        Ok(WsrConfig {
            delta,
            r_grid_resolution,
            eta_cap,
        })
    }
}

/// Outcome of an RCPS selection run.
#[derive(Debug, Clone)]
pub struct RcpsResult {
    /// Smallest grid value whose whole suffix keeps the UCB under the risk
    /// tolerance; `None` when even the largest grid point fails.
    pub lambda_hat: Option<f64>,
    /// The auxiliary OCE parameter in force at the selected point (at the
    /// largest scanned point when nothing was selectable).
    pub t_used: f64,
    /// Scanned `(lambda, UCB)` pairs, ascending in lambda. The scan starts at
    /// the top of the grid and stops at the first failure, so the trace
    /// always covers the suffix ending at the largest grid point.
    pub ucb_trace: Vec<(f64, f64)>,
}

/// WSR upper confidence bound on the mean of payoffs bounded in
/// `[v_lo, v_hi]`, holding with probability `1 - delta`.
///
/// Degenerate bounds (`v_lo == v_hi`) return `v_lo`; an empty payoff
/// sequence carries no evidence and returns the vacuous bound `v_hi`.
pub fn wsr_ucb(
    payoffs: &[f64],
    v_lo: f64,
    v_hi: f64,
    cfg: &WsrConfig,
) -> Result<f64, RcpsError> {
    if v_hi - v_lo <= 0.0 {
        return Ok(v_lo);
    }
    let span = v_hi - v_lo;
    let mut normalized = Vec::with_capacity(payoffs.len());
    for &v in payoffs {
        if v < v_lo - 1e-9 * span.max(1.0) || v > v_hi + 1e-9 * span.max(1.0) {
            return Err(RcpsError::PayoffOutOfBounds {
                value: v,
                lo: v_lo,
                hi: v_hi,
            });
        }
        normalized.push(((v - v_lo) / span).clamp(0.0, 1.0));
    }
    if normalized.is_empty() {
        return Ok(v_hi);
    }

    let etas = betting_rates(&normalized, cfg);
    let threshold = 1.0 / cfg.delta;
    let trips = |r: f64| -> bool {
        let mut capital = 1.0;
        for (v, eta) in normalized.iter().zip(&etas) {
            capital *= 1.0 + eta * (r - v);
            if capital > threshold {
                return true;
            }
        }
        false
    };

    if !trips(1.0) {
        return Ok(v_hi);
    }
    // Capital at R = 0 never exceeds 1, so the bracket [lo, hi] always starts
    // with trips(lo) = false, trips(hi) = true.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while hi - lo > cfg.r_grid_resolution {
        let mid = 0.5 * (lo + hi);
        if trips(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(v_lo + span * hi)
}

/// Predictable betting rates from running moments of the normalized payoffs.
fn betting_rates(normalized: &[f64], cfg: &WsrConfig) -> Vec<f64> {
    let log_inv_delta = (1.0 / cfg.delta).ln();
    let mut etas = Vec::with_capacity(normalized.len());
    let mut mean_acc = 0.5;
    let mut var_acc = 0.25;
    let mut sigma2_prev = 0.25;
    for (j, &v) in normalized.iter().enumerate() {
        let step = (j + 1) as f64;
        let eta = (2.0 * log_inv_delta / (sigma2_prev * step * (1.0 + step).ln()))
            .sqrt()
            .min(cfg.eta_cap);
        etas.push(eta);
        mean_acc += v;
        let mu = mean_acc / (step + 1.0);
        var_acc += (v - mu) * (v - mu);
        sigma2_prev = var_acc / (step + 1.0);
    }
    etas
}

/// OCE-RCPS selection at a fixed auxiliary parameter `t`.
///
/// Scans the grid from the largest lambda downward and returns the smallest
/// lambda such that every grid point above it keeps the UCB within
/// `alpha_risk_tol`. `t` must be independent of the calibration split.
pub fn oce_rcps_select(
    cal_losses: &LossMatrix,
    lambda_grid: &[f64],
    cost: &CostFunction,
    t: f64,
    alpha_risk_tol: f64,
    cfg: &WsrConfig,
) -> Result<RcpsResult, RcpsError> {
    select_with_t(cal_losses, lambda_grid, cost, |_| Ok(t), alpha_risk_tol, cfg)
}

/// OCE-RCPS with the auxiliary parameter re-optimized per grid point on a
/// held-out optimization split.
pub fn run_oce_rcps(
    opt_losses: &LossMatrix,
    cal_losses: &LossMatrix,
    lambda_grid: &[f64],
    cost: &CostFunction,
    alpha_risk_tol: f64,
    cfg: &WsrConfig,
) -> Result<RcpsResult, RcpsError> {
    check_grid(opt_losses, lambda_grid)?;
    select_with_t(
        cal_losses,
        lambda_grid,
        cost,
        |j| Ok(optimize_t(opt_losses.column(j), cost)?),
        alpha_risk_tol,
        cfg,
    )
}

fn check_grid(matrix: &LossMatrix, grid: &[f64]) -> Result<(), RcpsError> {
    if matrix.lambdas() != grid.len() {
        return Err(RcpsError::GridMismatch {
            grid: grid.len(),
            matrix: matrix.lambdas(),
        });
    }
    Ok(())
}

fn select_with_t(
    cal_losses: &LossMatrix,
    lambda_grid: &[f64],
    cost: &CostFunction,
    t_at: impl Fn(usize) -> Result<f64, RcpsError>,
    alpha_risk_tol: f64,
    cfg: &WsrConfig,
) -> Result<RcpsResult, RcpsError> {
    check_grid(cal_losses, lambda_grid)?;
    let mut trace = Vec::new();
    let mut lambda_hat = None;
    let mut t_used = 0.0;
    let mut first = true;
    for j in (0..lambda_grid.len()).rev() {
        let t = t_at(j)?;
        if first {
            t_used = t;
            first = false;
        }
        let (v_lo, v_hi) = oce_payoff_bounds(cost, t, ELL_MAX);
        let payoffs: Vec<f64> = cal_losses
            .column(j)
            .iter()
            .map(|&l| oce_payoff(cost, t, l))
            .collect();
        let ucb = wsr_ucb(&payoffs, v_lo, v_hi, cfg)?;
        trace.push((lambda_grid[j], ucb));
        if ucb > alpha_risk_tol {
            break;
        }
        lambda_hat = Some(lambda_grid[j]);
        t_used = t;
    }
    trace.reverse();
    Ok(RcpsResult {
        lambda_hat,
        t_used,
        ucb_trace: trace,
    })
}

/// OCE-CRC selection at a fixed `t`: the smallest grid lambda at which the
/// inflated empirical estimate clears the tolerance in expectation.
pub fn oce_crc_select(
    cal_losses: &LossMatrix,
    lambda_grid: &[f64],
    cost: &CostFunction,
    t: f64,
    alpha_risk_tol: f64,
) -> Result<Option<f64>, RcpsError> {
    check_grid(cal_losses, lambda_grid)?;
    for (j, &lambda) in lambda_grid.iter().enumerate() {
        if crc_condition(cal_losses, j, cost, t, alpha_risk_tol) {
            return Ok(Some(lambda));
        }
    }
    Ok(None)
}

/// OCE-CRC with the auxiliary parameter re-optimized per grid point on the
/// optimization split; returns the selected lambda and the `t` used there.
pub fn run_oce_crc(
    opt_losses: &LossMatrix,
    cal_losses: &LossMatrix,
    lambda_grid: &[f64],
    cost: &CostFunction,
    alpha_risk_tol: f64,
) -> Result<Option<(f64, f64)>, RcpsError> {
    check_grid(opt_losses, lambda_grid)?;
    check_grid(cal_losses, lambda_grid)?;
    for (j, &lambda) in lambda_grid.iter().enumerate() {
        let t = optimize_t(opt_losses.column(j), cost)?;
        if crc_condition(cal_losses, j, cost, t, alpha_risk_tol) {
            return Ok(Some((lambda, t)));
        }
    }
    Ok(None)
}

fn crc_condition(
    cal_losses: &LossMatrix,
    j: usize,
    cost: &CostFunction,
    t: f64,
    alpha_risk_tol: f64,
) -> bool {
    let n = cal_losses.examples() as f64;
    let bound = oce_payoff(cost, t, ELL_MAX);
    if cal_losses.examples() == 0 {
        return bound <= alpha_risk_tol;
    }
    let rhat = cal_losses
        .column(j)
        .iter()
        .map(|&l| oce_payoff(cost, t, l))
        .sum::<f64>()
        / n;
    n / (n + 1.0) * rhat + bound / (n + 1.0) <= alpha_risk_tol
}
