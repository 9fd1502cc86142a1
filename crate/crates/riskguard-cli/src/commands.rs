//! Implementations of the `gen`, `run`, and `calibrate` subcommands.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use riskguard::conformal::{cp_quantile, lcp_quantile, LcpConfig, ScoreFunction};
use riskguard::core::{split_dataset, Example, RandomnessContract, Role, SplitPlan};
use riskguard::credal::{cdci_offline, DivergenceSpec};
use riskguard::harness::{
    run_experiment, validate_world, ExperimentSpec, WorldConfig,
};
use riskguard::oce::{losses_along_lambda, CostFunction, GroundTruth, NestedSetFamily, SetLoss};
use riskguard::rcps::{run_oce_crc, run_oce_rcps, WsrConfig};
use riskguard::synthworld::{gen_classification, gen_multilabel};

use crate::formats::{
    CdciReport, ExtReal, MultiLabelRecord, QuantileReport, RiskSelectionReport, ScoreFileRecord,
};
use crate::{io_err, CalibrateMethod, CliError, CostChoice, DistChoice};

pub fn gen(
    config_path: &Path,
    count: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<ExitCode, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| io_err(&format!("reading {}", config_path.display()), e))?;
    let mut world: WorldConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("parsing world config: {e}")))?;
    if let Some(seed) = seed {
        match &mut world {
            WorldConfig::Classification(cfg) => cfg.seed = seed,
            WorldConfig::Multilabel(cfg) => cfg.seed = seed,
        }
    }
    validate_world(&world).map_err(|e| CliError::Config(e.to_string()))?;

    let mut lines = Vec::with_capacity(count);
    match &world {
        WorldConfig::Classification(cfg) => {
            for ex in gen_classification(cfg, count) {
                let record = ScoreFileRecord::from_example(&ex);
                lines.push(serde_json::to_string(&record).expect("record serializes"));
            }
        }
        WorldConfig::Multilabel(cfg) => {
            for ex in gen_multilabel(cfg, count) {
                let record = MultiLabelRecord::from_example(&ex);
                lines.push(serde_json::to_string(&record).expect("record serializes"));
            }
        }
    }
    let mut body = lines.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(out, body).map_err(|e| io_err(&format!("writing {}", out.display()), e))?;
    Ok(ExitCode::SUCCESS)
}

pub fn run(spec_path: &Path, out_dir: &Path) -> Result<ExitCode, CliError> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| io_err(&format!("reading {}", spec_path.display()), e))?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("parsing experiment spec: {e}")))?;
    let output = run_experiment(&spec).map_err(|e| CliError::Config(e.to_string()))?;

    fs::create_dir_all(out_dir)
        .map_err(|e| io_err(&format!("creating {}", out_dir.display()), e))?;
    let trials_path = out_dir.join("trials.ndjson");
    let mut trials_file = fs::File::create(&trials_path)
        .map_err(|e| io_err(&format!("creating {}", trials_path.display()), e))?;
    for record in &output.trials {
        let line = serde_json::to_string(record).expect("trial record serializes");
        writeln!(trials_file, "{line}")
            .map_err(|e| io_err(&format!("writing {}", trials_path.display()), e))?;
    }
    let summary_path = out_dir.join("summary.json");
    let summary =
        serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    fs::write(&summary_path, summary + "\n")
        .map_err(|e| io_err(&format!("writing {}", summary_path.display()), e))?;

    for check in &output.summary.checks {
        println!(
            "[{}] {} — {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    if output.summary.all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn read_examples(path: &Path) -> Result<Vec<Example>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreFileRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Config(format!("line {}: {e}", lineno + 1))
        })?;
        examples.push(record.into_example().map_err(CliError::Config)?);
    }
    Ok(examples)
}

fn scores_against(
    examples: &[Example],
    dist: DistChoice,
) -> Result<Vec<f64>, CliError> {
    let score = ScoreFunction::NegLogProb;
    examples
        .iter()
        .map(|ex| {
            let label = ex.label.ok_or_else(|| {
                CliError::Config(format!("record {} has no label", ex.id))
            })?;
            Ok(match dist {
                DistChoice::Edge => score.score(&ex.edge_dist, label),
                DistChoice::Cloud => score.score(&ex.cloud_dist, label),
            })
        })
        .collect()
}

fn cost_from(choice: CostChoice, zeta: Option<f64>) -> Result<CostFunction, CliError> {
    match choice {
        CostChoice::Avg => Ok(CostFunction::Average),
        CostChoice::Entropic => {
            let zeta = zeta.ok_or_else(|| {
                CliError::Config("entropic cost requires --zeta".into())
            })?;
            CostFunction::entropic(zeta).map_err(|e| CliError::Config(e.to_string()))
        }
        CostChoice::Cvar => {
            let zeta = zeta
                .ok_or_else(|| CliError::Config("cvar cost requires --zeta".into()))?;
            CostFunction::cvar(zeta).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

/// Builds the per-record threshold families and truths for the OCE methods:
/// nested sets over the chosen distribution's probabilities, miscoverage
/// against the record label.
fn oce_inputs(
    examples: &[Example],
    dist: DistChoice,
) -> Result<(Vec<NestedSetFamily>, Vec<GroundTruth>), CliError> {
    let mut families = Vec::with_capacity(examples.len());
    let mut truths = Vec::with_capacity(examples.len());
    for ex in examples {
        let probs = match dist {
            DistChoice::Edge => ex.edge_dist.probs(),
            DistChoice::Cloud => ex.cloud_dist.probs(),
        };
        families.push(
            NestedSetFamily::new(probs.to_vec())
                .map_err(|e| CliError::Config(e.to_string()))?,
        );
        let label = ex
            .label
            .ok_or_else(|| CliError::Config(format!("record {} has no label", ex.id)))?;
        truths.push(GroundTruth::Label(label));
    }
    Ok((families, truths))
}

fn lambda_grid(step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CliError::Config(format!(
            "grid step must lie in (0, 1], got {step}"
        )));
    }
    let count = (1.0 / step).round() as usize;
    Ok((0..=count).map(|k| k as f64 * step).collect())
}

fn split_opt_cal(
    examples: &[Example],
    opt_frac: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>), CliError> {
    if !(opt_frac > 0.0 && opt_frac < 1.0) {
        return Err(CliError::Config(format!(
            "--opt-frac must lie in (0, 1), got {opt_frac}"
        )));
    }
    let opt_n = ((examples.len() as f64 * opt_frac).round() as usize)
        .clamp(1, examples.len().saturating_sub(1));
    let plan = SplitPlan::new(vec![
        (Role::Optimization, opt_n),
        (Role::Calibration, examples.len() - opt_n),
    ]);
    let mut rng = RandomnessContract::new(seed).stream(0);
    let mut parts = split_dataset(examples, &plan, &mut rng)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let cal = parts.pop().expect("two roles").1;
    let opt = parts.pop().expect("two roles").1;
    Ok((opt, cal))
}

pub fn calibrate(method: &CalibrateMethod) -> Result<ExitCode, CliError> {
    match method {
        CalibrateMethod::Cp { data, alpha, dist } => {
            let examples = read_examples(data)?;
            let scores = scores_against(&examples, *dist)?;
            let q = cp_quantile(&scores, *alpha)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let report = QuantileReport {
                method: "cp".into(),
                q: ExtReal(q),
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        CalibrateMethod::Lcp {
            data,
            alpha,
            bandwidth,
            x,
            seed,
            dist,
        } => {
            let examples = read_examples(data)?;
            let test_x: Vec<f64> = x
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad feature value {part:?}")))
                })
                .collect::<Result<_, _>>()?;
            if examples.iter().any(|ex| ex.features.is_empty()) {
                return Err(CliError::Config(
                    "lcp needs feature vectors on every record; this file has none".into(),
                ));
            }
            let scores = scores_against(&examples, *dist)?;
            let cal: Vec<(Vec<f64>, f64)> = examples
                .iter()
                .zip(&scores)
                .map(|(ex, &s)| (ex.features.clone(), s))
                .collect();
            let cfg = LcpConfig::new(*bandwidth)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let mut rng = RandomnessContract::new(*seed).stream(0);
            let q = lcp_quantile(&test_x, &cal, &cfg, *alpha, &mut rng)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let report = QuantileReport {
                method: "lcp".into(),
                q: ExtReal(q),
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        CalibrateMethod::OceRcps {
            data,
            alpha,
            delta,
            cost,
            zeta,
            opt_frac,
            grid_step,
            seed,
            dist,
        } => {
            let examples = read_examples(data)?;
            let cost = cost_from(*cost, *zeta)?;
            let grid = lambda_grid(*grid_step)?;
            let (opt, cal) = split_opt_cal(&examples, *opt_frac, *seed)?;
            let (opt_fams, opt_truths) = oce_inputs(&opt, *dist)?;
            let (cal_fams, cal_truths) = oce_inputs(&cal, *dist)?;
            let opt_matrix =
                losses_along_lambda(&opt_fams, &opt_truths, SetLoss::Miscoverage, &grid)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            let cal_matrix =
                losses_along_lambda(&cal_fams, &cal_truths, SetLoss::Miscoverage, &grid)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            let cfg = WsrConfig::new(*delta).map_err(|e| CliError::Config(e.to_string()))?;
            let result = run_oce_rcps(&opt_matrix, &cal_matrix, &grid, &cost, *alpha, &cfg)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let report = RiskSelectionReport {
                method: "oce_rcps".into(),
                lambda_hat: result.lambda_hat,
                t: result.t_used,
                // The trace is what the caller needs to see when nothing is
                // selectable; keep the output small otherwise.
                ucb_trace: if result.lambda_hat.is_none() {
                    Some(result.ucb_trace.clone())
                } else {
                    None
                },
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if result.lambda_hat.is_none() {
                return Err(CliError::Infeasible);
            }
            Ok(ExitCode::SUCCESS)
        }
        CalibrateMethod::OceCrc {
            data,
            alpha,
            cost,
            zeta,
            opt_frac,
            grid_step,
            seed,
            dist,
        } => {
            let examples = read_examples(data)?;
            let cost = cost_from(*cost, *zeta)?;
            let grid = lambda_grid(*grid_step)?;
            let (opt, cal) = split_opt_cal(&examples, *opt_frac, *seed)?;
            let (opt_fams, opt_truths) = oce_inputs(&opt, *dist)?;
            let (cal_fams, cal_truths) = oce_inputs(&cal, *dist)?;
            let opt_matrix =
                losses_along_lambda(&opt_fams, &opt_truths, SetLoss::Miscoverage, &grid)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            let cal_matrix =
                losses_along_lambda(&cal_fams, &cal_truths, SetLoss::Miscoverage, &grid)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            let selection = run_oce_crc(&opt_matrix, &cal_matrix, &grid, &cost, *alpha)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let report = RiskSelectionReport {
                method: "oce_crc".into(),
                lambda_hat: selection.map(|(lambda, _)| lambda),
                t: selection.map(|(_, t)| t).unwrap_or(0.0),
                ucb_trace: None,
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if selection.is_none() {
                return Err(CliError::Infeasible);
            }
            Ok(ExitCode::SUCCESS)
        }
        CalibrateMethod::Cdci {
            data,
            alpha_dist,
            alpha_order,
        } => {
            let examples = read_examples(data)?;
            let pairs: Vec<_> = examples
                .iter()
                .map(|ex| (ex.cloud_dist.clone(), ex.edge_dist.clone()))
                .collect();
            let spec = DivergenceSpec::new(*alpha_order);
            let tau = cdci_offline(&pairs, &spec, *alpha_dist)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let report = CdciReport {
                method: "cdci".into(),
                tau_div: ExtReal(tau),
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(ExitCode::SUCCESS)
        }
    }
}
