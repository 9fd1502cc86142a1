//! Many-trial experiment driver.
//!
//! An [`ExperimentSpec`] names one of the built-in experiments, a synthetic
//! world, method parameters, a trial count, and a master seed. Running it
//! yields one record of scalar metrics per trial plus a [`Summary`] with
//! means, standard errors, fixed-bin histograms, and the experiment's
//! declared pass/fail checks. Trial `i` draws everything it needs from
//! stream `i` of the master seed and from a disjoint block of world streams,
//! so trials are independent, the execution order is irrelevant, and the
//! whole run is reproducible bit-for-bit at any worker count.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{
    cascade_metrics, conformal_alignment_screen, fit_isotonic, AlignmentPredictor,
    AlignmentRecord, TestAssignment,
};
use crate::conformal::{cp_quantile, cp_set, hms, lcp_quantile, LcpConfig, ScoreFunction};
use crate::core::{split_dataset, Example, RandomnessContract, Role, SplitPlan};
use crate::credal::{
    cdci_offline, credal_bounds, credal_coverage_and_inefficiency, intersection_probability,
    CredalBall, DivergenceSpec, SimplexSampler,
};
use crate::oce::{
    losses_along_lambda, oce_risk, CostFunction, GroundTruth, NestedSetFamily, SetLoss,
};
use crate::par;
use crate::rcps::{run_oce_crc, run_oce_rcps, WsrConfig};
use crate::synthworld::{
    ClassificationWorld, ClassificationWorldConfig, MultiLabelWorld, MultiLabelWorldConfig,
};

/// Bin count of every summary histogram.
const HISTOGRAM_BINS: usize = 50;

/// World-stream region reserved for Monte Carlo evaluation pools; trial data
/// blocks stay far below it.
const EVAL_STREAM_BASE: u64 = 1 << 46;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("trial {trial} failed: {message}")]
    Trial { trial: usize, message: String },
}

/// Synthetic world selector shared by the experiments and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorldConfig {
    Classification(ClassificationWorldConfig),
    Multilabel(MultiLabelWorldConfig),
}

/// Edge-side prediction-set construction for the cascading experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSetKind {
    Hms,
    Cp,
    Lcp,
}

impl EdgeSetKind {
    fn tag(&self) -> &'static str {
        match self {
            EdgeSetKind::Hms => "hms",
            EdgeSetKind::Cp => "cp",
            EdgeSetKind::Lcp => "lcp",
        }
    }
}

/// Alignment-score predictor used during screening. `Random` deliberately
/// ignores the data; validity must survive it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Isotonic,
    Random,
}

impl PredictorKind {
    fn tag(&self) -> &'static str {
        match self {
            PredictorKind::Isotonic => "iso",
            PredictorKind::Random => "rand",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpCoverageParams {
    pub world: ClassificationWorldConfig,
    pub alpha_label_mis: f64,
    pub cal_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OceRcpsParams {
    pub world: MultiLabelWorldConfig,
    pub costs: Vec<CostFunction>,
    pub alpha_risk_tol: f64,
    pub delta: f64,
    /// Reference-set sizes to sweep; each splits into optimization and
    /// calibration parts by `opt_frac`.
    pub reference_sizes: Vec<usize>,
    pub opt_frac: f64,
    pub test_size: usize,
    pub lambda_grid_step: f64,
    /// Monte Carlo size of the shared true-risk evaluation pool.
    pub mc_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdciParams {
    pub world: ClassificationWorldConfig,
    pub alpha_dist_mis: f64,
    pub alpha_order: f64,
    pub cal_size: usize,
    pub test_size: usize,
    /// Simplex lattice resolution for bounds and inefficiency.
    pub grid_resolution: usize,
    /// Edge logit-noise levels to sweep (each overrides the world's value).
    pub edge_noise_levels: Vec<f64>,
    /// Declared acceptance band for mean coverage.
    pub coverage_band: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    pub world: ClassificationWorldConfig,
    pub alpha_label_mis: f64,
    pub deltas: Vec<f64>,
    pub builders: Vec<EdgeSetKind>,
    pub predictors: Vec<PredictorKind>,
    pub cal_size: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub lcp_bandwidth: f64,
}

/// The experiment catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    CpCoverage(CpCoverageParams),
    OceRcps(OceRcpsParams),
    OceCrcContrast(OceRcpsParams),
    Cdci(CdciParams),
    CascadeFdr(CascadeParams),
    CascadeTradeoff(CascadeParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub master_seed: u64,
    pub trials: usize,
    #[serde(flatten)]
    pub experiment: ExperimentKind,
}

/// Scalar metrics of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over sqrt(count); 0 for a single trial.
    pub se: f64,
    pub count: usize,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metrics: BTreeMap<String, MetricSummary>,
    pub checks: Vec<CheckResult>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Runs every trial of the spec and aggregates the summary.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, HarnessError> {
    validate(spec)?;
    let (records, checks) = match &spec.experiment {
        ExperimentKind::CpCoverage(params) => {
            run_cp_coverage(spec.master_seed, spec.trials, params)?
        }
        ExperimentKind::OceRcps(params) => {
            run_oce_rcps_experiment(spec.master_seed, spec.trials, params, false)?
        }
        ExperimentKind::OceCrcContrast(params) => {
            run_oce_rcps_experiment(spec.master_seed, spec.trials, params, true)?
        }
        ExperimentKind::Cdci(params) => run_cdci(spec.master_seed, spec.trials, params)?,
        ExperimentKind::CascadeFdr(params) => {
            run_cascade(spec.master_seed, spec.trials, params, false)?
        }
        ExperimentKind::CascadeTradeoff(params) => {
            run_cascade(spec.master_seed, spec.trials, params, true)?
        }
    };
    let metrics = summarize(&records);
    let checks = checks(&metrics);
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(ExperimentOutput {
        trials: records,
        summary: Summary {
            metrics,
            checks,
            all_pass,
        },
    })
}

/// Validates a world configuration; shared with the CLI's `gen` command.
pub fn validate_world(world: &WorldConfig) -> Result<(), HarnessError> {
    match world {
        WorldConfig::Classification(w) => check_class_world(w),
        WorldConfig::Multilabel(w) => {
            if w.items_per_instance == 0 {
                return Err(HarnessError::InvalidSpec(
                    "items_per_instance must be positive".into(),
                ));
            }
            if !(w.positive_rate > 0.0 && w.positive_rate < 1.0) {
                return Err(HarnessError::InvalidSpec(
                    "positive_rate must lie in (0, 1)".into(),
                ));
            }
            if w.score_noise < 0.0 {
                return Err(HarnessError::InvalidSpec(
                    "score_noise must be non-negative".into(),
                ));
            }
            Ok(())
        }
    }
}

fn check_class_world(w: &ClassificationWorldConfig) -> Result<(), HarnessError> {
    if w.label_count < 2 {
        return Err(HarnessError::InvalidSpec(format!(
            "label_count must be at least 2, got {}",
            w.label_count
        )));
    }
    if w.feature_dim < 1 {
        return Err(HarnessError::InvalidSpec(
            "feature_dim must be positive".into(),
        ));
    }
    if !(w.edge_temperature > 0.0) || w.edge_logit_noise < 0.0 || !(w.logit_scale > 0.0) {
        return Err(HarnessError::InvalidSpec(
            "world distortion parameters out of range".into(),
        ));
    }
    Ok(())
}

fn validate(spec: &ExperimentSpec) -> Result<(), HarnessError> {
    let bad = |msg: String| Err(HarnessError::InvalidSpec(msg));
    if spec.trials < 1 {
        return bad("trial count must be at least 1".into());
    }
    let check_alpha = |name: &str, v: f64| {
        if v > 0.0 && v < 1.0 {
            Ok(())
        } else {
            Err(HarnessError::InvalidSpec(format!(
                "{name} must lie in (0, 1), got {v}"
            )))
        }
    };
    match &spec.experiment {
        ExperimentKind::CpCoverage(p) => {
            check_class_world(&p.world)?;
            check_alpha("alpha_label_mis", p.alpha_label_mis)?;
            if p.test_size == 0 {
                return bad("test_size must be positive".into());
            }
        }
        ExperimentKind::OceRcps(p) | ExperimentKind::OceCrcContrast(p) => {
            validate_world(&WorldConfig::Multilabel(p.world))?;
            check_alpha("delta", p.delta)?;
            check_alpha("opt_frac", p.opt_frac)?;
            if !(p.alpha_risk_tol >= 0.0) {
                return bad("alpha_risk_tol must be non-negative".into());
            }
            if p.costs.is_empty() || p.reference_sizes.is_empty() {
                return bad("costs and reference_sizes must be non-empty".into());
            }
            if p.reference_sizes.iter().any(|&s| s < 5) {
                return bad("reference sizes must be at least 5".into());
            }
            if !(p.lambda_grid_step > 0.0 && p.lambda_grid_step <= 1.0) {
                return bad("lambda_grid_step must lie in (0, 1]".into());
            }
            if p.mc_count < 10_000 {
                return bad("mc_count must be at least 10000".into());
            }
            if p.test_size == 0 {
                return bad("test_size must be positive".into());
            }
        }
        ExperimentKind::Cdci(p) => {
            check_class_world(&p.world)?;
            check_alpha("alpha_dist_mis", p.alpha_dist_mis)?;
            if p.cal_size == 0 || p.test_size == 0 {
                return bad("cal_size and test_size must be positive".into());
            }
            if p.grid_resolution < 2 {
                return bad("grid_resolution must be at least 2".into());
            }
            if p.edge_noise_levels.is_empty() {
                return bad("edge_noise_levels must be non-empty".into());
            }
        }
        ExperimentKind::CascadeFdr(p) | ExperimentKind::CascadeTradeoff(p) => {
            check_class_world(&p.world)?;
            check_alpha("alpha_label_mis", p.alpha_label_mis)?;
            if p.deltas.is_empty() || p.builders.is_empty() || p.predictors.is_empty() {
                return bad("deltas, builders, and predictors must be non-empty".into());
            }
            for &d in &p.deltas {
                check_alpha("delta", d)?;
            }
            if p.val_size == 0 || p.test_size == 0 || p.train_size == 0 {
                return bad("train/val/test sizes must be positive".into());
            }
            if p.builders.contains(&EdgeSetKind::Cp) && p.cal_size == 0 {
                return bad("cp builder needs a calibration set".into());
            }
            if p.builders.contains(&EdgeSetKind::Lcp) && !(p.lcp_bandwidth > 0.0) {
                return bad("lcp builder needs a positive bandwidth".into());
            }
        }
    }
    Ok(())
}

/// Runs per-trial closures in parallel and surfaces the lowest-index error.
fn execute_trials<F>(trials: usize, run: F) -> Result<Vec<TrialRecord>, HarnessError>
where
    F: Fn(usize) -> Result<BTreeMap<String, f64>, String> + Sync + Send,
{
    let results = par::map_indexed(trials, |trial| (trial, run(trial)));
    let mut records = Vec::with_capacity(trials);
    for (trial, result) in results {
        match result {
            Ok(metrics) => records.push(TrialRecord { trial, metrics }),
            Err(message) => return Err(HarnessError::Trial { trial, message }),
        }
    }
    Ok(records)
}

/// Aggregates records into per-metric summaries; trial order is normalized
/// first, so shuffled inputs summarize identically.
pub fn summarize(records: &[TrialRecord]) -> BTreeMap<String, MetricSummary> {
    let mut ordered: Vec<&TrialRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.trial);
    let mut by_name: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in ordered {
        for (name, &value) in &record.metrics {
            by_name.entry(name.clone()).or_default().push(value);
        }
    }
    by_name
        .into_iter()
        .map(|(name, values)| {
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let se = if count < 2 {
                0.0
            } else {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (count as f64 - 1.0);
                (var / count as f64).sqrt()
            };
            let (lo, hi) = metric_range(&name);
            let mut counts = vec![0u64; HISTOGRAM_BINS];
            for &v in &values {
                let frac = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                let bin = ((frac * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
                counts[bin] += 1;
            }
            (
                name,
                MetricSummary {
                    mean,
                    se,
                    count,
                    histogram: Histogram { lo, hi, counts },
                },
            )
        })
        .collect()
}

/// Natural histogram range of a metric, keyed by its name prefix.
fn metric_range(name: &str) -> (f64, f64) {
    if name.starts_with("ni_") {
        (0.0, 5.0)
    } else {
        (0.0, 1.0)
    }
}

fn cost_tag(cost: &CostFunction) -> String {
    match cost {
        CostFunction::Average => "avg".to_string(),
        CostFunction::Entropic { zeta } => format!("ent{zeta}"),
        CostFunction::Cvar { zeta } => format!("cvar{zeta}"),
    }
}

type Checks = Box<dyn Fn(&BTreeMap<String, MetricSummary>) -> Vec<CheckResult> + Send>;

// ---------------------------------------------------------------------------
// Split conformal coverage
// ---------------------------------------------------------------------------

fn run_cp_coverage(
    master_seed: u64,
    trials: usize,
    params: &CpCoverageParams,
) -> Result<(Vec<TrialRecord>, Checks), HarnessError> {
    let world = ClassificationWorld::new(params.world);
    let contract = RandomnessContract::new(master_seed);
    let p = params.clone();
    let block = (p.cal_size + p.test_size) as u64;

    let records = execute_trials(trials, move |trial| {
        let examples = world.generate(p.cal_size + p.test_size, 1 + trial as u64 * block);
        let mut rng = contract.stream(trial as u64);
        let plan = SplitPlan::new(vec![
            (Role::Calibration, p.cal_size),
            (Role::Test, p.test_size),
        ]);
        let parts = split_dataset(&examples, &plan, &mut rng).map_err(|e| e.to_string())?;
        let cal = &parts[0].1;
        let test = &parts[1].1;

        let score = ScoreFunction::NegLogProb;
        let cal_scores: Vec<f64> = cal
            .iter()
            .map(|ex| score.score(&ex.cloud_dist, ex.label.expect("world labels")))
            .collect();
        let q = cp_quantile(&cal_scores, p.alpha_label_mis).map_err(|e| e.to_string())?;
        let covered = test
            .iter()
            .filter(|ex| {
                cp_set(&ex.cloud_dist, q, score).contains(ex.label.expect("world labels"))
            })
            .count();
        let mut metrics = BTreeMap::new();
        metrics.insert("coverage".to_string(), covered as f64 / test.len() as f64);
        Ok(metrics)
    })?;

    let alpha = params.alpha_label_mis;
    let cal_size = params.cal_size;
    let checks: Checks = Box::new(move |metrics| {
        let m = &metrics["coverage"];
        let lo = 1.0 - alpha - 3.0 * m.se;
        let hi = 1.0 - alpha + 1.0 / (cal_size as f64 + 1.0) + 3.0 * m.se;
        vec![CheckResult {
            name: "cp_marginal_coverage_band".to_string(),
            pass: m.mean >= lo && m.mean <= hi,
            detail: format!("mean coverage {:.5} in [{:.5}, {:.5}]", m.mean, lo, hi),
        }]
    });
    Ok((records, checks))
}

// ---------------------------------------------------------------------------
// OCE-RCPS satisfaction (and the CRC contrast)
// ---------------------------------------------------------------------------

/// Shared Monte Carlo pool for population-risk evaluation: per-instance
/// sorted positive scores, enough to price the FNR at any lambda.
struct FnrEvalPool {
    sorted_positive_scores: Vec<Vec<f64>>,
}

impl FnrEvalPool {
    fn build(world: &MultiLabelWorld, mc_count: usize) -> Self {
        let instances = world.generate(mc_count, EVAL_STREAM_BASE);
        let sorted_positive_scores = instances
            .iter()
            .map(|ex| {
                let mut scores: Vec<f64> =
                    ex.positives.iter().map(|&i| ex.item_scores[i]).collect();
                scores.sort_by(f64::total_cmp);
                scores
            })
            .collect();
        FnrEvalPool {
            sorted_positive_scores,
        }
    }

    fn losses_at(&self, lambda: f64) -> Vec<f64> {
        let thresh = 1.0 - lambda;
        self.sorted_positive_scores
            .iter()
            .map(|scores| {
                if scores.is_empty() {
                    return 0.0;
                }
                let included = scores.len() - scores.partition_point(|&s| s < thresh);
                1.0 - included as f64 / scores.len() as f64
            })
            .collect()
    }
}

/// Population OCE risk of the threshold family at `lambda`, Monte Carlo
/// estimated on a fresh evaluation stream.
pub fn true_oce_risk(
    world: &WorldConfig,
    lambda: f64,
    loss: SetLoss,
    cost: &CostFunction,
    mc_count: usize,
) -> Result<f64, HarnessError> {
    if mc_count < 10_000 {
        return Err(HarnessError::InvalidSpec(
            "true_oce_risk needs mc_count >= 10000".into(),
        ));
    }
    let (families, truths): (Vec<NestedSetFamily>, Vec<GroundTruth>) = match world {
        WorldConfig::Classification(cfg) => {
            let world = ClassificationWorld::new(*cfg);
            let examples = world.generate(mc_count, EVAL_STREAM_BASE);
            examples
                .iter()
                .map(|ex| {
                    (
                        NestedSetFamily::new(ex.cloud_dist.probs().to_vec())
                            .expect("probabilities are valid scores"),
                        GroundTruth::Label(ex.label.expect("world labels")),
                    )
                })
                .unzip()
        }
        WorldConfig::Multilabel(cfg) => {
            let world = MultiLabelWorld::new(*cfg);
            let instances = world.generate(mc_count, EVAL_STREAM_BASE);
            instances
                .iter()
                .map(|ex| {
                    (
                        NestedSetFamily::from_multilabel(ex).expect("scores clamped"),
                        GroundTruth::Items(ex.positives.clone()),
                    )
                })
                .unzip()
        }
    };
    let matrix = losses_along_lambda(&families, &truths, loss, &[lambda])
        .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
    let (risk, _) = oce_risk(matrix.column(0), cost)
        .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
    Ok(risk)
}

fn lambda_grid(step: f64) -> Vec<f64> {
    let count = (1.0 / step).round() as usize;
    (0..=count).map(|k| k as f64 * step).collect()
}

fn multilabel_losses(
    instances: &[crate::core::MultiLabelExample],
    grid: &[f64],
) -> Result<crate::oce::LossMatrix, String> {
    let families: Vec<NestedSetFamily> = instances
        .iter()
        .map(|ex| NestedSetFamily::from_multilabel(ex).expect("scores clamped"))
        .collect();
    let truths: Vec<GroundTruth> = instances
        .iter()
        .map(|ex| GroundTruth::Items(ex.positives.clone()))
        .collect();
    losses_along_lambda(&families, &truths, SetLoss::Fnr, grid).map_err(|e| e.to_string())
}

fn mean_relative_set_size(test: &[crate::core::MultiLabelExample], lambda: f64) -> f64 {
    let thresh = 1.0 - lambda;
    test.iter()
        .map(|ex| {
            let included = ex.item_scores.iter().filter(|&&s| s >= thresh).count();
            included as f64 / ex.item_scores.len() as f64
        })
        .sum::<f64>()
        / test.len() as f64
}

fn run_oce_rcps_experiment(
    master_seed: u64,
    trials: usize,
    params: &OceRcpsParams,
    contrast: bool,
) -> Result<(Vec<TrialRecord>, Checks), HarnessError> {
    let world = MultiLabelWorld::new(params.world);
    let contract = RandomnessContract::new(master_seed);
    let grid = lambda_grid(params.lambda_grid_step);
    let pool = FnrEvalPool::build(&world, params.mc_count);
    // Selected lambdas live on the grid and repeat across trials, so the
    // population risk is memoized on the lambda bit pattern per cost.
    let memo: Mutex<HashMap<(usize, u64), f64>> = Mutex::new(HashMap::new());

    let p = params.clone();
    let block: u64 = p
        .reference_sizes
        .iter()
        .map(|&s| (s + p.test_size) as u64)
        .sum();

    let records = {
        let grid = &grid;
        let pool = &pool;
        let memo = &memo;
        let p = &p;
        let world = &world;
        let true_risk = move |cost_idx: usize, cost: &CostFunction, lambda: f64| -> f64 {
            let key = (cost_idx, lambda.to_bits());
            if let Some(&risk) = memo.lock().unwrap().get(&key) {
                return risk;
            }
            let losses = pool.losses_at(lambda);
            let (risk, _) = oce_risk(&losses, cost).expect("pool is non-empty");
            memo.lock().unwrap().insert(key, risk);
            risk
        };

        execute_trials(trials, move |trial| {
            let mut rng = contract.stream(trial as u64);
            let mut metrics = BTreeMap::new();
            let mut offset = 0u64;
            for &size in &p.reference_sizes {
                let total = size + p.test_size;
                let instances = world.generate(total, 1 + trial as u64 * block + offset);
                offset += total as u64;

                let opt_n = ((size as f64 * p.opt_frac).round() as usize).max(1);
                let cal_n = size - opt_n;
                let plan = SplitPlan::new(vec![
                    (Role::Optimization, opt_n),
                    (Role::Calibration, cal_n),
                    (Role::Test, p.test_size),
                ]);
                let parts =
                    split_dataset(&instances, &plan, &mut rng).map_err(|e| e.to_string())?;
                let opt_matrix = multilabel_losses(&parts[0].1, grid)?;
                let cal_matrix = multilabel_losses(&parts[1].1, grid)?;
                let test = &parts[2].1;

                for (cost_idx, cost) in p.costs.iter().enumerate() {
                    let tag = format!("{}_n{}", cost_tag(cost), size);
                    let cfg = WsrConfig::new(p.delta).map_err(|e| e.to_string())?;
                    let result =
                        run_oce_rcps(&opt_matrix, &cal_matrix, grid, cost, p.alpha_risk_tol, &cfg)
                            .map_err(|e| e.to_string())?;

                    // An infeasible selection deploys the trivial full set
                    // (the top of the grid), whose FNR is identically zero;
                    // satisfaction is always scored on the set actually
                    // served.
                    let fallback = *grid.last().expect("grid non-empty");
                    let rcps_lambda = result.lambda_hat.unwrap_or(fallback);
                    let risk = true_risk(cost_idx, cost, rcps_lambda);
                    metrics.insert(format!("lambda_rcps_{tag}"), rcps_lambda);
                    metrics.insert(
                        format!("rel_set_size_rcps_{tag}"),
                        mean_relative_set_size(test, rcps_lambda),
                    );
                    metrics.insert(
                        format!("satisfaction_rcps_{tag}"),
                        if risk <= p.alpha_risk_tol { 1.0 } else { 0.0 },
                    );
                    metrics.insert(
                        format!("none_rate_rcps_{tag}"),
                        if result.lambda_hat.is_none() { 1.0 } else { 0.0 },
                    );

                    if contrast {
                        let crc =
                            run_oce_crc(&opt_matrix, &cal_matrix, grid, cost, p.alpha_risk_tol)
                                .map_err(|e| e.to_string())?;
                        let crc_lambda = crc.map(|(lambda, _)| lambda).unwrap_or(fallback);
                        let crc_risk = true_risk(cost_idx, cost, crc_lambda);
                        metrics.insert(format!("lambda_crc_{tag}"), crc_lambda);
                        metrics.insert(
                            format!("rel_set_size_crc_{tag}"),
                            mean_relative_set_size(test, crc_lambda),
                        );
                        metrics.insert(
                            format!("crc_le_rcps_{tag}"),
                            if crc_lambda <= rcps_lambda + 1e-12 { 1.0 } else { 0.0 },
                        );
                        metrics.insert(
                            format!("satisfaction_crc_{tag}"),
                            if crc_risk <= p.alpha_risk_tol { 1.0 } else { 0.0 },
                        );
                    }
                }
            }
            Ok(metrics)
        })?
    };

    let p = params.clone();
    let checks: Checks = Box::new(move |metrics| {
        let mut out = Vec::new();
        for cost in &p.costs {
            for &size in &p.reference_sizes {
                let tag = format!("{}_n{}", cost_tag(cost), size);
                let m = &metrics[&format!("satisfaction_rcps_{tag}")];
                let floor = 1.0 - p.delta - 3.0 * m.se;
                out.push(CheckResult {
                    name: format!("rcps_satisfaction_{tag}"),
                    pass: m.mean >= floor,
                    detail: format!("satisfaction {:.4} >= {:.4}", m.mean, floor),
                });
            }
            // Size sweep: larger reference sets should not inflate the sets.
            if p.reference_sizes.len() > 1 {
                for pair in p.reference_sizes.windows(2) {
                    let tag_small = format!("{}_n{}", cost_tag(cost), pair[0]);
                    let tag_large = format!("{}_n{}", cost_tag(cost), pair[1]);
                    let (Some(small), Some(large)) = (
                        metrics.get(&format!("rel_set_size_rcps_{tag_small}")),
                        metrics.get(&format!("rel_set_size_rcps_{tag_large}")),
                    ) else {
                        continue;
                    };
                    let margin = 3.0 * (small.se * small.se + large.se * large.se).sqrt();
                    out.push(CheckResult {
                        name: format!(
                            "rcps_set_size_trend_{}_{}to{}",
                            cost_tag(cost),
                            pair[0],
                            pair[1]
                        ),
                        pass: large.mean <= small.mean + margin,
                        detail: format!(
                            "set size {:.4} (n={}) <= {:.4} (n={}) + {:.4}",
                            large.mean, pair[1], small.mean, pair[0], margin
                        ),
                    });
                }
            }
            if contrast {
                for &size in &p.reference_sizes {
                    let tag = format!("{}_n{}", cost_tag(cost), size);
                    let rcps = &metrics[&format!("satisfaction_rcps_{tag}")];
                    let crc = &metrics[&format!("satisfaction_crc_{tag}")];
                    let pooled = (rcps.se * rcps.se + crc.se * crc.se).sqrt();
                    out.push(CheckResult {
                        name: format!("crc_undershoots_rcps_{tag}"),
                        pass: crc.mean <= rcps.mean - 2.0 * pooled,
                        detail: format!(
                            "crc satisfaction {:.4} <= rcps {:.4} - {:.4}",
                            crc.mean,
                            rcps.mean,
                            2.0 * pooled
                        ),
                    });
                    if let Some(le) = metrics.get(&format!("crc_le_rcps_{tag}")) {
                        out.push(CheckResult {
                            name: format!("crc_lambda_below_rcps_{tag}"),
                            pass: le.mean >= 0.95,
                            detail: format!("crc lambda <= rcps lambda on {:.3}", le.mean),
                        });
                    }
                }
            }
        }
        out
    });
    Ok((records, checks))
}

// ---------------------------------------------------------------------------
// CD-CI coverage and efficiency
// ---------------------------------------------------------------------------

fn run_cdci(
    master_seed: u64,
    trials: usize,
    params: &CdciParams,
) -> Result<(Vec<TrialRecord>, Checks), HarnessError> {
    let worlds: Vec<ClassificationWorld> = params
        .edge_noise_levels
        .iter()
        .map(|&noise| {
            let mut cfg = params.world;
            cfg.edge_logit_noise = noise;
            ClassificationWorld::new(cfg)
        })
        .collect();
    let spec = DivergenceSpec::new(params.alpha_order);
    let sampler = SimplexSampler::Grid {
        resolution: params.grid_resolution,
    };
    let p = params.clone();
    let block = (p.cal_size + p.test_size) as u64;

    let contract = RandomnessContract::new(master_seed);
    let records = {
        let worlds = &worlds;
        let p = &p;
        execute_trials(trials, move |trial| {
            let mut rng = contract.stream(trial as u64);
            let mut metrics = BTreeMap::new();
            let mut intersection_valid = 1.0f64;
            for (world, &noise) in worlds.iter().zip(&p.edge_noise_levels) {
                let examples =
                    world.generate(p.cal_size + p.test_size, 1 + trial as u64 * block);
                let plan = SplitPlan::new(vec![
                    (Role::Calibration, p.cal_size),
                    (Role::Test, p.test_size),
                ]);
                let parts =
                    split_dataset(&examples, &plan, &mut rng).map_err(|e| e.to_string())?;
                let to_pairs = |examples: &[Example]| -> Vec<_> {
                    examples
                        .iter()
                        .map(|ex| (ex.cloud_dist.clone(), ex.edge_dist.clone()))
                        .collect()
                };
                let cal_pairs: Vec<_> = to_pairs(&parts[0].1);
                let test_pairs: Vec<_> = to_pairs(&parts[1].1);
                let (cal_pairs, test_pairs) = (&cal_pairs[..], &test_pairs[..]);

                let tau = cdci_offline(cal_pairs, &spec, p.alpha_dist_mis)
                    .map_err(|e| e.to_string())?;
                let (coverage, inefficiency) =
                    credal_coverage_and_inefficiency(test_pairs, &spec, tau, &sampler);
                metrics.insert(format!("coverage_s{noise}"), coverage);
                metrics.insert(format!("ineff_s{noise}"), inefficiency);

                // Exercise the extraction path on a few inputs; the
                // intersection output must stay a distribution inside its
                // box.
                for (_, p_edge) in test_pairs.iter().take(3) {
                    let ball = CredalBall::new(p_edge.clone(), tau, spec);
                    let bounds = credal_bounds(&ball, &sampler);
                    match intersection_probability(&bounds) {
                        Ok(q) => {
                            let sum: f64 = q.probs().iter().sum();
                            let inside = q.probs().iter().enumerate().all(|(y, &v)| {
                                v >= bounds.lower[y] - 1e-9 && v <= bounds.upper[y] + 1e-9
                            });
                            if (sum - 1.0).abs() > 1e-9 || !inside {
                                intersection_valid = 0.0;
                            }
                        }
                        Err(_) => intersection_valid = 0.0,
                    }
                }
            }
            metrics.insert("intersection_valid".to_string(), intersection_valid);
            Ok(metrics)
        })?
    };

    let p = params.clone();
    let checks: Checks = Box::new(move |metrics| {
        let mut out = Vec::new();
        for &noise in &p.edge_noise_levels {
            let m = &metrics[&format!("coverage_s{noise}")];
            out.push(CheckResult {
                name: format!("cdci_coverage_band_s{noise}"),
                pass: m.mean >= p.coverage_band.0 && m.mean <= p.coverage_band.1,
                detail: format!(
                    "mean coverage {:.4} in [{:.2}, {:.2}]",
                    m.mean, p.coverage_band.0, p.coverage_band.1
                ),
            });
        }
        for pair in p.edge_noise_levels.windows(2) {
            let low = &metrics[&format!("ineff_s{}", pair[0])];
            let high = &metrics[&format!("ineff_s{}", pair[1])];
            let margin = 3.0 * (low.se * low.se + high.se * high.se).sqrt();
            out.push(CheckResult {
                name: format!("cdci_inefficiency_trend_s{}to{}", pair[0], pair[1]),
                pass: high.mean >= low.mean + margin,
                detail: format!(
                    "inefficiency {:.4} (noise {}) >= {:.4} (noise {}) + {:.4}",
                    high.mean, pair[1], low.mean, pair[0], margin
                ),
            });
        }
        let valid = &metrics["intersection_valid"];
        out.push(CheckResult {
            name: "cdci_intersection_valid".to_string(),
            pass: valid.mean == 1.0,
            detail: format!("valid intersection rate {:.4}", valid.mean),
        });
        out
    });
    Ok((records, checks))
}

// ---------------------------------------------------------------------------
// Conformal-alignment cascading
// ---------------------------------------------------------------------------

/// Per-builder intermediates shared by every (predictor, delta) cell of a
/// trial.
struct BuilderArtifacts {
    /// `(u, c_star)` per training record.
    train_pairs: Vec<(f64, f64)>,
    /// Validation and test pools with `c_hat` still unset.
    val: Vec<AlignmentRecord>,
    test: Vec<AlignmentRecord>,
    /// Edge set size per test record.
    test_edge_sizes: Vec<usize>,
    /// Cloud oracle set size and mass per test record.
    test_cloud_sizes: Vec<usize>,
    test_cloud_cstar: Vec<f64>,
}

fn run_cascade(
    master_seed: u64,
    trials: usize,
    params: &CascadeParams,
    tradeoff: bool,
) -> Result<(Vec<TrialRecord>, Checks), HarnessError> {
    let world = ClassificationWorld::new(params.world);
    let contract = RandomnessContract::new(master_seed);
    let p = params.clone();
    let total = p.cal_size + p.train_size + p.val_size + p.test_size;
    let target_mass = 1.0 - p.alpha_label_mis;

    let records = {
        let world = &world;
        let p = &p;
        execute_trials(trials, move |trial| {
            let examples = world.generate(total, 1 + trial as u64 * total as u64);
            let mut rng = contract.stream(trial as u64);
            let plan = SplitPlan::new(vec![
                (Role::Calibration, p.cal_size),
                (Role::Train, p.train_size),
                (Role::Validation, p.val_size),
                (Role::Test, p.test_size),
            ]);
            let parts = split_dataset(&examples, &plan, &mut rng).map_err(|e| e.to_string())?;
            let (cal, train, val, test) = (&parts[0].1, &parts[1].1, &parts[2].1, &parts[3].1);

            // Shared conformal ingredients over the calibration split.
            let score = ScoreFunction::NegLogProb;
            let cal_scores: Vec<f64> = cal
                .iter()
                .map(|ex| score.score(&ex.edge_dist, ex.label.expect("world labels")))
                .collect();
            let cp_q = cp_quantile(&cal_scores, p.alpha_label_mis).map_err(|e| e.to_string())?;
            let lcp_cal: Vec<(Vec<f64>, f64)> = cal
                .iter()
                .zip(&cal_scores)
                .map(|(ex, &s)| (ex.features.clone(), s))
                .collect();
            let lcp_cfg = LcpConfig::new(p.lcp_bandwidth).map_err(|e| e.to_string())?;

            // Cloud oracle sets are builder-independent.
            let cloud_sets: Vec<crate::core::PredictionSet> = test
                .iter()
                .map(|ex| hms(&ex.cloud_dist, target_mass))
                .collect();
            let test_cloud_sizes: Vec<usize> = cloud_sets.iter().map(|s| s.len()).collect();
            let test_cloud_cstar: Vec<f64> = test
                .iter()
                .zip(&cloud_sets)
                .map(|(ex, set)| ex.cloud_dist.mass(set))
                .collect();

            let mut metrics = BTreeMap::new();
            for builder in &p.builders {
                let build_sets =
                    |examples: &[Example],
                     rng: &mut rand_chacha::ChaCha8Rng|
                     -> Result<Vec<crate::core::PredictionSet>, String> {
                        examples
                            .iter()
                            .map(|ex| match builder {
                                EdgeSetKind::Hms => Ok(hms(&ex.edge_dist, target_mass)),
                                EdgeSetKind::Cp => Ok(cp_set(&ex.edge_dist, cp_q, score)),
                                EdgeSetKind::Lcp => {
                                    let q = lcp_quantile(
                                        &ex.features,
                                        &lcp_cal,
                                        &lcp_cfg,
                                        p.alpha_label_mis,
                                        rng,
                                    )
                                    .map_err(|e| e.to_string())?;
                                    Ok(cp_set(&ex.edge_dist, q, score))
                                }
                            })
                            .collect()
                    };
                let train_sets = build_sets(train, &mut rng)?;
                let val_sets = build_sets(val, &mut rng)?;
                let test_sets = build_sets(test, &mut rng)?;

                let record = |ex: &Example, set: &crate::core::PredictionSet| AlignmentRecord {
                    id: ex.id,
                    u: ex.edge_dist.mass(set),
                    c_star: ex.cloud_dist.mass(set),
                    c_hat: 0.0,
                };
                let artifacts = BuilderArtifacts {
                    train_pairs: train
                        .iter()
                        .zip(&train_sets)
                        .map(|(ex, set)| {
                            let r = record(ex, set);
                            (r.u, r.c_star)
                        })
                        .collect(),
                    val: val
                        .iter()
                        .zip(&val_sets)
                        .map(|(ex, set)| record(ex, set))
                        .collect(),
                    test: test
                        .iter()
                        .zip(&test_sets)
                        .map(|(ex, set)| record(ex, set))
                        .collect(),
                    test_edge_sizes: test_sets.iter().map(|s| s.len()).collect(),
                    test_cloud_sizes: test_cloud_sizes.clone(),
                    test_cloud_cstar: test_cloud_cstar.clone(),
                };

                for predictor in &p.predictors {
                    let (mut val_recs, mut test_recs) =
                        (artifacts.val.clone(), artifacts.test.clone());
                    match predictor {
                        PredictorKind::Isotonic => {
                            let fit = fit_isotonic(&artifacts.train_pairs)
                                .map_err(|e| e.to_string())?;
                            for r in val_recs.iter_mut().chain(test_recs.iter_mut()) {
                                r.c_hat = fit.predict(r.u);
                            }
                        }
                        PredictorKind::Random => {
                            for r in val_recs.iter_mut().chain(test_recs.iter_mut()) {
                                r.c_hat = rng.random();
                            }
                        }
                    }

                    for &delta in &p.deltas {
                        let ledger = conformal_alignment_screen(
                            &val_recs,
                            &test_recs,
                            p.alpha_label_mis,
                            delta,
                        );
                        let mut selected = vec![false; test_recs.len()];
                        for &i in &ledger.selected {
                            selected[i] = true;
                        }
                        let assignments: Vec<TestAssignment> = (0..test_recs.len())
                            .map(|i| TestAssignment {
                                edge: selected[i],
                                c_star_assigned: if selected[i] {
                                    test_recs[i].c_star
                                } else {
                                    artifacts.test_cloud_cstar[i]
                                },
                                set_size: if selected[i] {
                                    artifacts.test_edge_sizes[i]
                                } else {
                                    artifacts.test_cloud_sizes[i]
                                },
                                cloud_size: artifacts.test_cloud_sizes[i],
                            })
                            .collect();
                        let m = cascade_metrics(&assignments, p.alpha_label_mis);
                        let fdp = if ledger.selected.is_empty() {
                            0.0
                        } else {
                            ledger
                                .selected
                                .iter()
                                .filter(|&&i| test_recs[i].c_star < target_mass)
                                .count() as f64
                                / ledger.selected.len() as f64
                        };
                        let tag =
                            format!("{}_{}_d{}", builder.tag(), predictor.tag(), delta);
                        metrics.insert(format!("fdp_{tag}"), fdp);
                        metrics.insert(format!("deferral_{tag}"), m.deferral_rate);
                        metrics.insert(format!("ni_{tag}"), m.normalized_inefficiency);
                        metrics.insert(format!("satisfaction_{tag}"), m.satisfaction_rate);
                    }
                }
            }
            Ok(metrics)
        })?
    };

    let p = params.clone();
    let checks: Checks = Box::new(move |metrics| {
        let mut out = Vec::new();
        // FDR control in every cell, whatever the predictor quality.
        for builder in &p.builders {
            for predictor in &p.predictors {
                for &delta in &p.deltas {
                    let tag = format!("{}_{}_d{}", builder.tag(), predictor.tag(), delta);
                    let m = &metrics[&format!("fdp_{tag}")];
                    let cap = delta + 3.0 * m.se;
                    out.push(CheckResult {
                        name: format!("cascade_fdr_{tag}"),
                        pass: m.mean <= cap,
                        detail: format!("mean FDP {:.4} <= {:.4}", m.mean, cap),
                    });
                }
            }
        }
        if tradeoff {
            let pred = p.predictors[0];
            let margin =
                |a: &MetricSummary, b: &MetricSummary| 3.0 * (a.se * a.se + b.se * b.se).sqrt();
            // Builder ordering at each delta: HMS defers most, LCP least,
            // with normalized inefficiency ordered the other way.
            for &delta in &p.deltas {
                let get = |metric: &str, builder: &EdgeSetKind| {
                    metrics
                        .get(&format!(
                            "{metric}_{}_{}_d{delta}",
                            builder.tag(),
                            pred.tag()
                        ))
                        .expect("metric recorded")
                };
                for pair in p.builders.windows(2) {
                    let (a, b) = (&pair[0], &pair[1]);
                    let da = get("deferral", a);
                    let db = get("deferral", b);
                    out.push(CheckResult {
                        name: format!(
                            "cascade_deferral_order_{}_{}_d{delta}",
                            a.tag(),
                            b.tag()
                        ),
                        pass: da.mean >= db.mean - margin(da, db),
                        detail: format!(
                            "deferral {}={:.4} >= {}={:.4} - {:.4}",
                            a.tag(),
                            da.mean,
                            b.tag(),
                            db.mean,
                            margin(da, db)
                        ),
                    });
                    let na = get("ni", a);
                    let nb = get("ni", b);
                    out.push(CheckResult {
                        name: format!("cascade_ni_order_{}_{}_d{delta}", a.tag(), b.tag()),
                        pass: na.mean <= nb.mean + margin(na, nb),
                        detail: format!(
                            "NI {}={:.4} <= {}={:.4} + {:.4}",
                            a.tag(),
                            na.mean,
                            b.tag(),
                            nb.mean,
                            margin(na, nb)
                        ),
                    });
                }
            }
            // Delta trend per builder: a stricter target defers more and
            // pushes NI toward 1.
            let mut deltas = p.deltas.clone();
            deltas.sort_by(f64::total_cmp);
            for builder in &p.builders {
                for pair in deltas.windows(2) {
                    let (strict, loose) = (pair[0], pair[1]);
                    let get = |metric: &str, delta: f64| {
                        metrics
                            .get(&format!(
                                "{metric}_{}_{}_d{delta}",
                                builder.tag(),
                                pred.tag()
                            ))
                            .expect("metric recorded")
                    };
                    let ds = get("deferral", strict);
                    let dl = get("deferral", loose);
                    out.push(CheckResult {
                        name: format!(
                            "cascade_deferral_monotone_{}_d{strict}_d{loose}",
                            builder.tag()
                        ),
                        pass: ds.mean >= dl.mean - margin(ds, dl),
                        detail: format!(
                            "deferral at delta {strict} ({:.4}) >= at {loose} ({:.4}) - {:.4}",
                            ds.mean,
                            dl.mean,
                            margin(ds, dl)
                        ),
                    });
                    let ns = get("ni", strict);
                    let nl = get("ni", loose);
                    out.push(CheckResult {
                        name: format!(
                            "cascade_ni_toward_one_{}_d{strict}_d{loose}",
                            builder.tag()
                        ),
                        pass: (ns.mean - 1.0).abs() <= (nl.mean - 1.0).abs() + margin(ns, nl),
                        detail: format!(
                            "|NI - 1| at delta {strict} ({:.4}) <= at {loose} ({:.4}) + {:.4}",
                            (ns.mean - 1.0).abs(),
                            (nl.mean - 1.0).abs(),
                            margin(ns, nl)
                        ),
                    });
                }
            }
        }
        out
    });
    Ok((records, checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn small_world(seed: u64) -> ClassificationWorldConfig {
        ClassificationWorldConfig {
            label_count: 6,
            feature_dim: 4,
            logit_scale: 1.0,
            edge_temperature: 0.7,
            edge_logit_noise: 0.3,
            seed,
        }
    }

    fn cp_spec(trials: usize) -> ExperimentSpec {
        ExperimentSpec {
            master_seed: 7,
            trials,
            experiment: ExperimentKind::CpCoverage(CpCoverageParams {
                world: small_world(3),
                alpha_label_mis: 0.1,
                cal_size: 50,
                test_size: 25,
            }),
        }
    }

    #[test]
    fn run_is_deterministic() {
        let spec = cp_spec(40);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn single_trial_has_zero_se() {
        let out = run_experiment(&cp_spec(1)).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.summary.metrics["coverage"].se, 0.0);
    }

    #[test]
    fn summary_is_order_independent() {
        let out = run_experiment(&cp_spec(30)).unwrap();
        let mut shuffled = out.trials.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        shuffled.shuffle(&mut rng);
        assert_eq!(summarize(&shuffled), out.summary.metrics);
    }

    #[test]
    fn invalid_specs_rejected() {
        let spec = cp_spec(0);
        assert!(matches!(
            run_experiment(&spec),
            Err(HarnessError::InvalidSpec(_))
        ));
        let mut spec = cp_spec(5);
        if let ExperimentKind::CpCoverage(p) = &mut spec.experiment {
            p.alpha_label_mis = 1.5;
        }
        assert!(run_experiment(&spec).is_err());
        let mut spec = cp_spec(5);
        if let ExperimentKind::CpCoverage(p) = &mut spec.experiment {
            p.world.label_count = 1;
        }
        assert!(run_experiment(&spec).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ExperimentSpec {
            master_seed: 11,
            trials: 3,
            experiment: ExperimentKind::OceRcps(OceRcpsParams {
                world: MultiLabelWorldConfig {
                    items_per_instance: 10,
                    positive_rate: 0.3,
                    score_noise: 0.3,
                    seed: 5,
                },
                costs: vec![
                    CostFunction::Average,
                    CostFunction::Cvar { zeta: 0.9 },
                    CostFunction::Entropic { zeta: 3.0 },
                ],
                alpha_risk_tol: 0.2,
                delta: 0.2,
                reference_sizes: vec![100],
                opt_frac: 0.2,
                test_size: 20,
                lambda_grid_step: 0.01,
                mc_count: 10_000,
            }),
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn true_risk_trivial_values() {
        let world = WorldConfig::Classification(small_world(9));
        let risk = true_oce_risk(
            &world,
            1.0,
            SetLoss::Miscoverage,
            &CostFunction::Average,
            10_000,
        )
        .unwrap();
        assert_eq!(risk, 0.0);

        let ml = WorldConfig::Multilabel(MultiLabelWorldConfig {
            items_per_instance: 10,
            positive_rate: 0.4,
            score_noise: 0.0,
            seed: 2,
        });
        let risk =
            true_oce_risk(&ml, 0.3, SetLoss::Fnr, &CostFunction::Average, 10_000).unwrap();
        assert_eq!(risk, 0.0);
    }

    #[test]
    fn true_risk_cvar_zero_matches_average() {
        let world = WorldConfig::Classification(small_world(9));
        let avg = true_oce_risk(
            &world,
            0.4,
            SetLoss::Miscoverage,
            &CostFunction::Average,
            20_000,
        )
        .unwrap();
        let cvar0 = true_oce_risk(
            &world,
            0.4,
            SetLoss::Miscoverage,
            &CostFunction::Cvar { zeta: 0.0 },
            20_000,
        )
        .unwrap();
        assert!((avg - cvar0).abs() < 1e-3, "{avg} vs {cvar0}");
    }

    #[test]
    fn true_risk_mc_sizes_agree() {
        let world = WorldConfig::Classification(small_world(21));
        let small = true_oce_risk(
            &world,
            0.4,
            SetLoss::Miscoverage,
            &CostFunction::Average,
            100_000,
        )
        .unwrap();
        let large = true_oce_risk(
            &world,
            0.4,
            SetLoss::Miscoverage,
            &CostFunction::Average,
            1_000_000,
        )
        .unwrap();
        let se = (small * (1.0 - small) / 100_000f64).sqrt();
        assert!(
            (small - large).abs() <= 3.0 * se.max(1e-4),
            "{small} vs {large} (se {se})"
        );
    }

    #[test]
    fn lambda_grid_covers_unit_interval() {
        let grid = lambda_grid(0.001);
        assert_eq!(grid.len(), 1001);
        assert_eq!(grid[0], 0.0);
        assert!((grid[1000] - 1.0).abs() < 1e-12);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
}
