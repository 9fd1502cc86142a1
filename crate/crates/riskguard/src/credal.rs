//! Conformalized credal inference: divergence balls around the edge model's
//! predictive distribution, sized offline so that the cloud distribution
//! lands inside with the target probability.
//!
//! Divergences are asymmetric; throughout, the first argument is the
//! candidate or reference distribution and the second is the edge center:
//! calibration scores are `D_f(p* || p^e)` and membership tests
//! `D_f(q || p^e)`. Infinite divergences (support mismatches) are legal score
//! values and simply sort last, which keeps the quantile rule total.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::core::{make_prob_vector, rank_ceil, ProbVector};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CredalError {
    #[error("distribution dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),

    #[error("bounds box is inconsistent: sum(lower) = {lower_sum}, sum(upper) = {upper_sum}")]
    InconsistentBox { lower_sum: f64, upper_sum: f64 },
}

/// The order of the alpha-divergence family; 1 means `KL(q || p)`, 0 the
/// reverse KL, other finite orders use `f(n) = (n^a - 1) / (a (a - 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub alpha_order: f64,
}

impl DivergenceSpec {
    pub fn new(alpha_order: f64) -> Self {
        DivergenceSpec { alpha_order }
    }

    pub fn kl() -> Self {
        DivergenceSpec { alpha_order: 1.0 }
    }
}

/// A divergence ball `{ q : D_f(q || center) <= tau_div }`.
#[derive(Debug, Clone)]
pub struct CredalBall {
    pub center: ProbVector,
    pub tau_div: f64,
    pub spec: DivergenceSpec,
}

impl CredalBall {
    pub fn new(center: ProbVector, tau_div: f64, spec: DivergenceSpec) -> Self {
        CredalBall {
            center,
            tau_div,
            spec,
        }
    }
}

/// Alpha-divergence `D_f(q || p)` with the limits at orders 0 and 1
/// special-cased to the two KL orientations.
pub fn alpha_divergence(
    q: &ProbVector,
    p: &ProbVector,
    spec: &DivergenceSpec,
) -> Result<f64, CredalError> {
    if q.len() != p.len() {
        return Err(CredalError::DimensionMismatch {
            left: q.len(),
            right: p.len(),
        });
    }
    // Bitwise-identical inputs are exactly at divergence 0; this keeps the
    // ball's own center inside it for every order and radius.
    if q.probs() == p.probs() {
        return Ok(0.0);
    }
    let a = spec.alpha_order;
    if a == 1.0 {
        return Ok(kl(q.probs(), p.probs()));
    }
    if a == 0.0 {
        return Ok(kl(p.probs(), q.probs()));
    }
    let mut sum = 0.0;
    for (&qy, &py) in q.probs().iter().zip(p.probs()) {
        if qy == 0.0 && py == 0.0 {
            continue;
        }
        if qy == 0.0 {
            if a < 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        if py == 0.0 {
            if a > 1.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        sum += qy.powf(a) * py.powf(1.0 - a);
    }
    Ok((sum - 1.0) / (a * (a - 1.0)))
}

fn kl(q: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&qy, &py) in q.iter().zip(p) {
        if qy == 0.0 {
            continue;
        }
        if py == 0.0 {
            return f64::INFINITY;
        }
        total += qy * (qy / py).ln();
    }
    total
}

/// Offline CD-CI calibration: the conformal quantile of the divergence
/// scores `D_f(p*_i || p^e_i)`.
///
/// Returns the k-th smallest score with `k = ceil((1 + n)(1 - alpha))`, or
/// `+inf` when the calibration set is too small for that rank.
pub fn cdci_offline(
    cal_pairs: &[(ProbVector, ProbVector)],
    spec: &DivergenceSpec,
    alpha_dist_mis: f64,
) -> Result<f64, CredalError> {
    if cal_pairs.is_empty() {
        return Err(CredalError::EmptyCalibration);
    }
    if !(alpha_dist_mis > 0.0 && alpha_dist_mis < 1.0) {
        return Err(CredalError::AlphaOutOfRange(alpha_dist_mis));
    }
    let mut scores = Vec::with_capacity(cal_pairs.len());
    for (p_star, p_edge) in cal_pairs {
        scores.push(alpha_divergence(p_star, p_edge, spec)?);
    }
    let n = scores.len();
    let k = rank_ceil((1.0 + n as f64) * (1.0 - alpha_dist_mis));
    if k > n {
        return Ok(f64::INFINITY);
    }
    scores.sort_by(f64::total_cmp);
    Ok(scores[k - 1])
}

/// Whether `q` lies inside the ball.
pub fn credal_membership(q: &ProbVector, ball: &CredalBall) -> Result<bool, CredalError> {
    Ok(alpha_divergence(q, &ball.center, &ball.spec)? <= ball.tau_div)
}

/// Discrete representation of the simplex used for bounds and extraction.
///
/// `Grid` enumerates the exact lattice `{ k/G }` (intended for small label
/// spaces); `Random` draws uniformly from the simplex via a seeded stream, so
/// every consumer of the same sampler sees the same candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexSampler {
    Grid { resolution: usize },
    Random { count: usize, seed: u64 },
}

impl SimplexSampler {
    /// Default representation for a label space of the given size: the
    /// exact lattice at resolution 100 while enumeration stays cheap
    /// (up to 4 labels), uniform Dirichlet draws of 20000 points above.
    pub fn default_for(dim: usize, seed: u64) -> Self {
        if dim <= 4 {
            SimplexSampler::Grid { resolution: 100 }
        } else {
            SimplexSampler::Random {
                count: 20_000,
                seed,
            }
        }
    }

    /// Candidate points for a `dim`-label simplex, in deterministic order.
    pub fn points(&self, dim: usize) -> Vec<ProbVector> {
        match *self {
            SimplexSampler::Grid { resolution } => {
                let mut out = Vec::new();
                let mut counts = vec![0usize; dim];
                enumerate_compositions(resolution, resolution, 0, &mut counts, &mut out);
                out
            }
            SimplexSampler::Random { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Vec::with_capacity(count);
                while out.len() < count {
                    let draws: Vec<f64> = (0..dim)
                        .map(|_| -(1.0 - rng.random::<f64>()).ln())
                        .collect();
                    let total: f64 = draws.iter().sum();
                    if total > 0.0 {
                        out.push(
                            make_prob_vector(
                                &draws.iter().map(|e| e / total).collect::<Vec<_>>(),
                            )
                            .expect("normalized exponentials form a distribution"),
                        );
                    }
                }
                out
            }
        }
    }
}

fn enumerate_compositions(
    resolution: usize,
    remaining: usize,
    slot: usize,
    counts: &mut [usize],
    out: &mut Vec<ProbVector>,
) {
    if slot == counts.len() - 1 {
        counts[slot] = remaining;
        let raw: Vec<f64> = counts
            .iter()
            .map(|&k| k as f64 / resolution as f64)
            .collect();
        out.push(make_prob_vector(&raw).expect("lattice point sums to 1"));
        return;
    }
    for k in 0..=remaining {
        counts[slot] = k;
        enumerate_compositions(resolution, remaining - k, slot + 1, counts, out);
    }
}

/// Per-class probability bounds attained inside a credal set.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Per-class min/max of `q(y)` over the sampled in-ball candidates, with the
/// center always part of the candidate pool (so the box is never empty).
pub fn credal_bounds(ball: &CredalBall, sampler: &SimplexSampler) -> BoundsBox {
    let dim = ball.center.len();
    let mut lower = ball.center.probs().to_vec();
    let mut upper = ball.center.probs().to_vec();
    for q in sampler.points(dim) {
        if credal_membership(&q, ball).expect("sampler emits matching dimension") {
            for (y, &v) in q.probs().iter().enumerate() {
                lower[y] = lower[y].min(v);
                upper[y] = upper[y].max(v);
            }
        }
    }
    BoundsBox { lower, upper }
}

/// Intersection probability: every class placed at the same relative
/// position `b` inside its interval, with `b` chosen so the result is a
/// distribution.
pub fn intersection_probability(bounds: &BoundsBox) -> Result<ProbVector, CredalError> {
    let lower_sum: f64 = bounds.lower.iter().sum();
    let upper_sum: f64 = bounds.upper.iter().sum();
    if lower_sum > 1.0 + 1e-9 || upper_sum < 1.0 - 1e-9 {
        return Err(CredalError::InconsistentBox {
            lower_sum,
            upper_sum,
        });
    }
    let widths: f64 = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(l, u)| u - l)
        .sum();
    if widths == 0.0 {
        return Ok(make_prob_vector(&bounds.lower).expect("degenerate box is a distribution"));
    }
    let b = (1.0 - lower_sum) / widths;
    let raw: Vec<f64> = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(l, u)| l + b * (u - l))
        .collect();
    Ok(make_prob_vector(&raw).expect("intersection probability sums to 1"))
}

/// How to collapse a credal set into one predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionRule {
    Intersection,
    MaxEntropy,
    Ensemble,
}

/// Extracts a single distribution from the ball using the given rule.
///
/// MaxEntropy and Ensemble operate on the discrete in-ball candidates (the
/// center prepended), matching the sampler-based set representation; ties in
/// entropy go to the first candidate encountered.
pub fn extract_distribution(
    ball: &CredalBall,
    sampler: &SimplexSampler,
    rule: ExtractionRule,
) -> Result<ProbVector, CredalError> {
    match rule {
        ExtractionRule::Intersection => intersection_probability(&credal_bounds(ball, sampler)),
        ExtractionRule::MaxEntropy => {
            let mut best = ball.center.clone();
            let mut best_entropy = ball.center.entropy();
            for q in sampler.points(ball.center.len()) {
                if credal_membership(&q, ball)? {
                    let h = q.entropy();
                    if h > best_entropy {
                        best_entropy = h;
                        best = q;
                    }
                }
            }
            Ok(best)
        }
        ExtractionRule::Ensemble => {
            let dim = ball.center.len();
            let mut acc = ball.center.probs().to_vec();
            let mut count = 1usize;
            for q in sampler.points(dim) {
                if credal_membership(&q, ball)? {
                    for (a, &v) in acc.iter_mut().zip(q.probs()) {
                        *a += v;
                    }
                    count += 1;
                }
            }
            let raw: Vec<f64> = acc.iter().map(|v| v / count as f64).collect();
            Ok(make_prob_vector(&raw).expect("mean of distributions is a distribution"))
        }
    }
}

/// Hard decision from a predictive distribution: argmax with ties broken by
/// ascending label index.
pub fn hard_decision(q: &ProbVector) -> usize {
    let mut best = 0;
    for y in 1..q.len() {
        if q.prob(y) > q.prob(best) {
            best = y;
        }
    }
    best
}

/// Empirical coverage and inefficiency of CD-CI on test pairs
/// `(p_star, p_edge)`.
///
/// Coverage is the fraction of tests whose cloud distribution falls inside
/// the ball around the edge distribution; inefficiency is the mean in-ball
/// fraction of the sampler's candidate points, a normalized-volume proxy for
/// the credal set size.
pub fn credal_coverage_and_inefficiency(
    test_pairs: &[(ProbVector, ProbVector)],
    spec: &DivergenceSpec,
    tau_div: f64,
    sampler: &SimplexSampler,
) -> (f64, f64) {
    assert!(!test_pairs.is_empty(), "test pairs must be non-empty");
    let dim = test_pairs[0].1.len();
    let candidates = sampler.points(dim);
    let per_test: Vec<(f64, f64)> = par::map_slice(test_pairs, |(p_star, p_edge)| {
        let ball = CredalBall::new(p_edge.clone(), tau_div, *spec);
        let covered = credal_membership(p_star, &ball).expect("matching dimensions");
        let inside = candidates
            .iter()
            .filter(|q| credal_membership(q, &ball).expect("matching dimensions"))
            .count();
        (
            if covered { 1.0 } else { 0.0 },
            inside as f64 / candidates.len() as f64,
        )
    });
    let n = per_test.len() as f64;
    let coverage = per_test.iter().map(|(c, _)| c).sum::<f64>() / n;
    let inefficiency = per_test.iter().map(|(_, v)| v).sum::<f64>() / n;
    (coverage, inefficiency)
}
