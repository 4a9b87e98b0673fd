//! Run configuration: a sectioned TOML file, optionally layered over a named
//! preset. Unknown keys are rejected and everything is validated before any
//! data is touched.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conv::ConvLayerSpec;
use crate::data::{load_csv, make_windows, normalize, normalize_with, NormalizationStats, SeriesDataset, Split, Splits, Window};
use crate::error::{io_err, Error, Result};
use crate::model::{ModelConfig, VariantConfig};
use crate::synth::SyntheticSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// CSV with a header row: `n` exogenous columns, then `d` target columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Generator seed for synthetic data, independent of the model seed.
    #[serde(default)]
    pub seed: u64,
    /// Exogenous column count; required for CSV input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_d")]
    pub d: usize,
    /// Window size `T`.
    pub window: usize,
    /// Row counts per split; 70/15/15 fractions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<SplitSizes>,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_d() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Local feature dimension `m`.
    pub feature_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub depth: usize,
    #[serde(default)]
    pub conv: Vec<ConvLayerSpec>,
    #[serde(default)]
    pub variant: VariantConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model initialization seed; the shuffling seed is `train.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

pub const PRESETS: &[&str] = &["nasdaq", "tiny", "quickstart"];

const NASDAQ: &str = r#"
[dataset]
path = "data/nasdaq100_padding.csv"
n = 81
d = 1
window = 11
splits = { train = 35100, validation = 2730, test = 2730 }

[model]
feature_dim = 64
encoder_hidden = 128
decoder_hidden = 128
depth = 2
conv = [
    { maps = 16, kernel = 3, pool = 3 },
    { maps = 32, kernel = 3, pool = 3 },
    { maps = 64, kernel = 3, pool = 3 },
]
variant = { use_conv_frontend = true, attention = "hierarchical" }

[train]
epochs = 50
batch_size = 128
learning_rate = 1e-3
patience = 10
"#;

const TINY: &str = r#"
[dataset]
synthetic = { kind = "linear_exo", length = 200, n = 4 }
d = 1
window = 5

[model]
feature_dim = 6
encoder_hidden = 8
decoder_hidden = 8
depth = 2
conv = [
    { maps = 3, kernel = 2, pool = 2 },
    { maps = 4, kernel = 2, pool = 1 },
]
variant = { use_conv_frontend = true, attention = "hierarchical" }

[train]
epochs = 5
batch_size = 32
"#;

const QUICKSTART: &str = r#"
[dataset]
synthetic = { kind = "linear_exo", length = 500, n = 4, noise = 0.01 }
d = 1
window = 8

[model]
feature_dim = 16
encoder_hidden = 32
decoder_hidden = 32
depth = 2
conv = [{ maps = 8, kernel = 2, pool = 1 }]
variant = { use_conv_frontend = true, attention = "hierarchical" }

[train]
epochs = 30
batch_size = 32
learning_rate = 1e-3
"#;

pub fn preset_source(name: &str) -> Result<&'static str> {
    match name {
        "nasdaq" => Ok(NASDAQ),
        "tiny" => Ok(TINY),
        "quickstart" => Ok(QUICKSTART),
        other => Err(Error::config(format!(
            "unknown preset `{other}` (available: {})",
            PRESETS.join(", ")
        ))),
    }
}

fn parse_table(source: &str, origin: &str) -> Result<toml::Table> {
    source
        .parse::<toml::Table>()
        .map_err(|e| Error::config(format!("{origin}: {e}")))
}

/// Recursively overlays `over` onto `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Data after loading, normalization and windowing.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub raw: SeriesDataset,
    pub dataset: SeriesDataset,
    pub stats: Option<NormalizationStats>,
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
}

impl PreparedData {
    pub fn windows(&self, split: Split) -> &[Window] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Raw-scale targets of `windows`.
    pub fn raw_targets(&self, windows: &[Window]) -> Vec<Vec<f64>> {
        windows
            .iter()
            .map(|w| self.raw.targets.row(w.target_row()).to_vec())
            .collect()
    }

    /// Maps model outputs back to the raw scale.
    pub fn denormalize(&self, predictions: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match &self.stats {
            Some(s) => s.denormalize_targets(predictions),
            None => predictions.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(source: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(source).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml(preset_source(name)?)
    }

    /// Preset (if any), then the file (if any), then `overrides`, merged in
    /// that order and validated once.
    pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: Option<toml::Table>) -> Result<Self> {
        let mut table = match preset {
            Some(name) => parse_table(preset_source(name)?, &format!("preset {name}"))?,
            None => toml::Table::new(),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            merge(&mut table, parse_table(&text, &path.display().to_string())?);
        }
        if let Some(o) = overrides {
            merge(&mut table, o);
        }
        if table.is_empty() {
            return Err(Error::config("no configuration given (use a preset or a config file)"));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn exogenous_dim(&self) -> Result<usize> {
        match (&self.dataset.synthetic, self.dataset.n) {
            (Some(s), Some(n)) if s.exogenous_dim() != n => Err(Error::config(format!(
                "dataset.n = {n} disagrees with the synthetic generator's n = {}",
                s.exogenous_dim()
            ))),
            (Some(s), _) => Ok(s.exogenous_dim()),
            (None, Some(n)) => Ok(n),
            (None, None) => Err(Error::config("dataset.n is required for CSV input")),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        Ok(ModelConfig {
            n: self.exogenous_dim()?,
            d: self.dataset.d,
            window: self.dataset.window,
            feature_dim: m.feature_dim,
            encoder_hidden: m.encoder_hidden,
            decoder_hidden: m.decoder_hidden,
            depth: m.depth,
            conv: m.conv.clone(),
            variant: m.variant,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ds = &self.dataset;
        match (&ds.path, &ds.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::config("dataset: give either `path` or `synthetic`, not both"))
            }
            (None, None) => return Err(Error::config("dataset: one of `path` or `synthetic` is required")),
            (None, Some(s)) => {
                if s.length < crate::synth::MIN_LENGTH {
                    return Err(Error::config(format!(
                        "dataset.synthetic.length must be at least {}",
                        crate::synth::MIN_LENGTH
                    )));
                }
                if ds.d != 1 {
                    return Err(Error::config("synthetic datasets have d = 1"));
                }
            }
            _ => {}
        }
        if let Some(s) = &ds.splits {
            if s.train == 0 {
                return Err(Error::config("dataset.splits.train must be positive"));
            }
        }
        self.model_config()?.validate()?;
        self.train.validate()
    }

    /// Loads (or generates) the dataset and applies the configured splits.
    pub fn load_dataset(&self) -> Result<SeriesDataset> {
        let ds = &self.dataset;
        let data = match (&ds.path, &ds.synthetic) {
            (Some(path), None) => load_csv(path, self.exogenous_dim()?, ds.d)?,
            (None, Some(spec)) => spec.generate(ds.seed)?,
            _ => unreachable!("validated"),
        };
        let splits = match &ds.splits {
            Some(s) => {
                let total = s.train + s.validation + s.test;
                if total != data.rows() {
                    return Err(Error::Data(format!(
                        "split sizes {} + {} + {} = {total} do not match the {} dataset rows",
                        s.train,
                        s.validation,
                        s.test,
                        data.rows()
                    )));
                }
                Splits::from_sizes(s.train, s.validation, s.test)
            }
            None if ds.synthetic.is_some() => data.splits.clone(),
            None => Splits::from_fractions(data.rows(), 0.7, 0.15)?,
        };
        data.with_splits(splits)
    }

    pub fn prepare_data(&self) -> Result<PreparedData> {
        self.prepare_data_with(None)
    }

    /// As [`RunConfig::prepare_data`], normalizing with `stats` when given
    /// instead of statistics recomputed from the training split.
    pub fn prepare_data_with(&self, stats: Option<&NormalizationStats>) -> Result<PreparedData> {
        let raw = self.load_dataset()?;
        let (dataset, stats) = match (self.dataset.normalize, stats) {
            (false, _) => (raw.clone(), None),
            (true, Some(s)) => {
                if s.exogenous_mean.len() != raw.n() || s.target_mean.len() != raw.d() {
                    return Err(Error::Data(format!(
                        "normalization statistics cover {} + {} columns, dataset has {} + {}",
                        s.exogenous_mean.len(),
                        s.target_mean.len(),
                        raw.n(),
                        raw.d()
                    )));
                }
                (normalize_with(&raw, s), Some(s.clone()))
            }
            (true, None) => {
                let (d, s) = normalize(&raw);
                (d, Some(s))
            }
        };
        let window = self.dataset.window;
        let windows_or_empty = |split: Split| -> Result<Vec<Window>> {
            if dataset.splits.get(split).is_empty() {
                Ok(Vec::new())
            } else {
                make_windows(&dataset, split, window)
            }
        };
        Ok(PreparedData {
            train: make_windows(&dataset, Split::Train, window)?,
            validation: windows_or_empty(Split::Validation)?,
            test: windows_or_empty(Split::Test)?,
            raw,
            dataset,
            stats,
        })
    }
}
