//! Experiment drivers: single runs, ablations over variants, sensitivity
//! sweeps over `T` or `K`, and gradient checks on the tiny geometry.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PreparedData, RunConfig};
use crate::data::{Split, Window};
use crate::error::{io_err, Error, Result};
use crate::metrics::{compute_metrics, median, MetricsReport};
use crate::model::{model_gradient_check, predict, HrhnParams, ModelConfig, VariantConfig};
use crate::numerics::{GradCheckReport, DEFAULT_PERTURBATION};
use crate::train::{train, TrainReport};

pub const DEFAULT_GRADCHECK_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_T_GRID: &[usize] = &[4, 6, 8, 10, 12, 14];
pub const DEFAULT_K_GRID: &[usize] = &[1, 2, 3, 4, 5];
/// Windows per gradient check batch.
const GRADCHECK_WINDOWS: usize = 4;

/// Initializes and trains a model on `data`: `config.seed` seeds the
/// initialization and `config.train.seed` the batch order.
pub fn fit(config: &RunConfig, model: &ModelConfig, data: &PreparedData) -> Result<(HrhnParams<f32>, TrainReport)> {
    let mut params = HrhnParams::<f32>::init(model.clone(), config.seed)?;
    let report = train(&mut params, &data.train, &data.validation, &config.train, data.stats.as_ref())?;
    Ok((params, report))
}

/// Raw-scale predictions and targets of `params` over `windows`.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub predictions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub windows: Vec<usize>,
}

pub fn evaluate(params: &HrhnParams<f32>, data: &PreparedData, windows: &[Window], batch_size: usize) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let predictions = data.denormalize(&predict(params, windows, batch_size)?);
    let targets = data.raw_targets(windows);
    Ok(Evaluation {
        metrics: compute_metrics(&predictions, &targets)?,
        predictions,
        targets,
        windows: windows.iter().map(Window::target_row).collect(),
    })
}

/// Outcome of one (configuration, seed) training run, scored on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    pub final_train_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub steps: usize,
    pub error: Option<String>,
}

fn seeded(config: &RunConfig, seed: u64) -> RunConfig {
    let mut c = config.clone();
    c.seed = seed;
    c.train.seed = seed;
    c
}

fn run_one(config: &RunConfig, model: &ModelConfig, data: &PreparedData, label: String, seed: u64) -> RunRecord {
    let config = seeded(config, seed);
    let attempt = || -> Result<(TrainReport, MetricsReport)> {
        model.validate()?;
        let (params, report) = fit(&config, model, data)?;
        let eval = evaluate(&params, data, data.windows(Split::Test), config.train.batch_size)?;
        Ok((report, eval.metrics))
    };
    match attempt() {
        Ok((report, metrics)) => RunRecord {
            label,
            seed,
            metrics: Some(metrics),
            final_train_loss: report.epochs.last().map(|e| e.train_loss),
            best_epoch: report.best_epoch,
            steps: report.steps,
            error: None,
        },
        Err(e) => RunRecord {
            label,
            seed,
            metrics: None,
            final_train_loss: None,
            best_epoch: None,
            steps: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Medians over the successful runs of one table row or sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianMetrics {
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    /// Fraction; `None` when any run left MAPE undefined.
    pub mape: Option<f64>,
    pub mape_percent: Option<f64>,
    pub succeeded: usize,
    pub failed: usize,
}

impl MedianMetrics {
    pub fn from_runs(runs: &[RunRecord]) -> Self {
        let ok: Vec<&MetricsReport> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let pick = |f: fn(&MetricsReport) -> f64| median(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
        let mapes: Option<Vec<f64>> = ok.iter().map(|m| m.mape).collect();
        let mape = mapes.and_then(|v| median(&v));
        Self {
            rmse: pick(|m| m.rmse),
            mae: pick(|m| m.mae),
            mape,
            mape_percent: mape.map(|m| m * 100.0),
            succeeded: ok.len(),
            failed: runs.len() - ok.len(),
        }
    }
}

/// The ablation variants for encoder depth `depth`: the four module
/// combinations, then single-layer attention at every depth below the top.
pub fn ablation_variants(depth: usize) -> Vec<VariantConfig> {
    let mut out = vec![
        VariantConfig::RHN,
        VariantConfig::RHN_CONVNET,
        VariantConfig::RHN_HA,
        VariantConfig::HRHN,
    ];
    out.extend((1..depth).map(VariantConfig::single_layer));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    #[serde(flatten)]
    pub median: MedianMetrics,
    pub runs: Vec<RunRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

#[derive(Serialize)]
struct AblationCsvRow<'a> {
    variant: &'a str,
    median_rmse: Option<f64>,
    median_mae: Option<f64>,
    median_mape: Option<f64>,
    median_mape_percent: Option<f64>,
    succeeded: usize,
    failed: usize,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv_rows(
            path,
            self.rows.iter().map(|r| AblationCsvRow {
                variant: &r.variant,
                median_rmse: r.median.rmse,
                median_mae: r.median.mae,
                median_mape: r.median.mape,
                median_mape_percent: r.median.mape_percent,
                succeeded: r.median.succeeded,
                failed: r.median.failed,
            }),
        )
    }
}

/// Trains every ablation variant with every seed on identical data and
/// budget. Failed runs are recorded in their row; the table is always
/// complete.
pub fn run_ablation(config: &RunConfig, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    config.validate()?;
    let data = config.prepare_data()?;
    let base = config.model_config()?;
    let variants = ablation_variants(base.depth);
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let variant = variants[v];
            run_one(config, &base.with_variant(variant), &data, variant.label(), seed)
        })
        .collect();
    let rows = variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let runs = records[v * seeds.len()..(v + 1) * seeds.len()].to_vec();
            AblationRow {
                variant: variant.label(),
                median: MedianMetrics::from_runs(&runs),
                runs,
            }
        })
        .collect();
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "T")]
    Window,
    #[serde(rename = "K")]
    Depth,
}

impl SweepAxis {
    pub fn default_grid(self) -> &'static [usize] {
        match self {
            SweepAxis::Window => DEFAULT_T_GRID,
            SweepAxis::Depth => DEFAULT_K_GRID,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Window => "T",
            SweepAxis::Depth => "K",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" | "window" => Ok(SweepAxis::Window),
            "K" | "k" | "depth" => Ok(SweepAxis::Depth),
            other => Err(Error::config(format!("unknown sweep axis `{other}` (expected T or K)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    #[serde(flatten)]
    pub median: MedianMetrics,
    pub runs: Vec<RunRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
}

#[derive(Serialize)]
struct SeriesRow {
    x: usize,
    median_rmse: Option<f64>,
}

impl SweepResult {
    /// `(x, median RMSE)` pairs; failed points carry `None`.
    pub fn series(&self) -> Vec<(usize, Option<f64>)> {
        self.points.iter().map(|p| (p.value, p.median.rmse)).collect()
    }

    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        write_csv_rows(
            path,
            self.series().into_iter().map(|(x, median_rmse)| SeriesRow { x, median_rmse }),
        )
    }
}

/// Trains the configured variant at each grid value with every seed, the
/// other axis held at its configured value. Failed points are recorded and
/// the sweep continues.
pub fn run_sweep(config: &RunConfig, axis: SweepAxis, values: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!("sweep values must be strictly ascending, got {values:?}")));
    }
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    config.validate()?;
    let label = config.model.variant.label();
    let points = values
        .iter()
        .map(|&value| {
            let mut c = config.clone();
            match axis {
                SweepAxis::Window => c.dataset.window = value,
                SweepAxis::Depth => c.model.depth = value,
            }
            let prepared = c.model_config().and_then(|m| {
                m.validate()?;
                Ok((m, c.prepare_data()?))
            });
            let runs: Vec<RunRecord> = match &prepared {
                Ok((model, data)) => seeds
                    .par_iter()
                    .map(|&s| run_one(&c, model, data, label.clone(), s))
                    .collect(),
                Err(e) => seeds
                    .iter()
                    .map(|&seed| RunRecord {
                        label: label.clone(),
                        seed,
                        metrics: None,
                        final_train_loss: None,
                        best_epoch: None,
                        steps: 0,
                        error: Some(e.to_string()),
                    })
                    .collect(),
            };
            SweepPoint {
                value,
                median: MedianMetrics::from_runs(&runs),
                runs,
            }
        })
        .collect();
    Ok(SweepResult {
        axis,
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    pub variant: String,
    pub threshold: f64,
    pub passed: bool,
    pub report: GradCheckReport,
}

/// Tiny-preset geometry with the given variant.
pub fn tiny_model_config(variant: VariantConfig) -> Result<ModelConfig> {
    let cfg = RunConfig::preset("tiny")?.model_config()?.with_variant(variant);
    cfg.validate()?;
    Ok(cfg)
}

/// Full-model finite-difference check in 64-bit on the tiny geometry, over a
/// small batch of normalized tiny-preset windows.
pub fn run_gradcheck(variant: VariantConfig, seed: u64, threshold: f64) -> Result<GradcheckOutcome> {
    if !(threshold > 0.0) {
        return Err(Error::config("gradcheck threshold must be positive"));
    }
    let model = tiny_model_config(variant)?;
    let mut run = RunConfig::preset("tiny")?;
    run.dataset.seed = seed;
    let data = run.prepare_data()?;
    let params = HrhnParams::<f64>::init(model, seed)?;
    let report = model_gradient_check(&params, &data.train[..GRADCHECK_WINDOWS], DEFAULT_PERTURBATION)?;
    Ok(GradcheckOutcome {
        variant: variant.label(),
        threshold,
        passed: report.passes(threshold),
        report,
    })
}

pub fn write_csv_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
    }
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}
