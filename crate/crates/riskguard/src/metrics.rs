//! Calibration and detection metrics: ECE, reliability diagrams, MMCE, and
//! the TV-based OOD detection probability.

use thiserror::Error;

/// Kernel bandwidth used by [`mmce`] unless the caller overrides it.
pub const DEFAULT_MMCE_BANDWIDTH: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("input sequence is empty")]
    EmptyInput,

    #[error("kernel bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
}

/// A single prediction: self-reported confidence and binary correctness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPrediction {
    pub confidence: f64,
    pub correct: bool,
}

/// Equal-width confidence bins; bin `m` covers `((m-1)/M, m/M]`, with
/// confidence 0 assigned to the first bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningConfig {
    pub bins: usize,
}

impl BinningConfig {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 1, "at least one bin");
        BinningConfig { bins }
    }

    fn index(&self, confidence: f64) -> usize {
        if confidence <= 0.0 {
            return 0;
        }
        let raw = (confidence * self.bins as f64).ceil() as usize;
        raw.saturating_sub(1).min(self.bins - 1)
    }
}

/// One occupied bin of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    /// Zero-based bin index.
    pub bin: usize,
    pub confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Per-bin confidence, accuracy, and occupancy for the non-empty bins.
pub fn reliability_diagram(
    preds: &[ScoredPrediction],
    cfg: &BinningConfig,
) -> Result<Vec<BinStat>, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut conf_sum = vec![0.0; cfg.bins];
    let mut correct_sum = vec![0.0; cfg.bins];
    let mut counts = vec![0usize; cfg.bins];
    for p in preds {
        let b = cfg.index(p.confidence);
        conf_sum[b] += p.confidence;
        correct_sum[b] += if p.correct { 1.0 } else { 0.0 };
        counts[b] += 1;
    }
    Ok((0..cfg.bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| BinStat {
            bin: b,
            confidence: conf_sum[b] / counts[b] as f64,
            accuracy: correct_sum[b] / counts[b] as f64,
            count: counts[b],
        })
        .collect())
}

/// Expected calibration error: the occupancy-weighted gap between per-bin
/// accuracy and per-bin confidence.
pub fn ece(preds: &[ScoredPrediction], cfg: &BinningConfig) -> Result<f64, MetricsError> {
    let bins = reliability_diagram(preds, cfg)?;
    let n = preds.len() as f64;
    Ok(bins
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.confidence).abs())
        .sum())
}

/// Maximum mean calibration error with the Laplacian kernel
/// `exp(-|r_i - r_j| / h)`.
///
/// The kernel quadratic form is non-negative up to round-off; it is floored
/// at zero before the square root.
pub fn mmce(preds: &[ScoredPrediction], bandwidth: f64) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(bandwidth > 0.0) {
        return Err(MetricsError::BadBandwidth(bandwidth));
    }
    let n = preds.len();
    let residual: Vec<f64> = preds
        .iter()
        .map(|p| (if p.correct { 1.0 } else { 0.0 }) - p.confidence)
        .collect();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            let kernel =
                (-(preds[i].confidence - preds[j].confidence).abs() / bandwidth).exp();
            quad += residual[i] * residual[j] * kernel;
        }
    }
    Ok((quad.max(0.0) / (n * n) as f64).sqrt())
}

/// TV distance between the binned confidence histograms of in-distribution
/// and out-of-distribution inputs, and the induced optimal detection
/// probability `(1 + TV) / 2`.
pub fn ood_detection_probability(
    id_confidences: &[f64],
    ood_confidences: &[f64],
    cfg: &BinningConfig,
) -> Result<(f64, f64), MetricsError> {
    if id_confidences.is_empty() || ood_confidences.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let histogram = |values: &[f64]| {
        let mut h = vec![0.0; cfg.bins];
        for &v in values {
            h[cfg.index(v)] += 1.0 / values.len() as f64;
        }
        h
    };
    let id_hist = histogram(id_confidences);
    let ood_hist = histogram(ood_confidences);
    let tv = 0.5
        * id_hist
            .iter()
            .zip(&ood_hist)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok((tv, 0.5 * (1.0 + tv)))
}
