//! Synthetic series with known structure.
//!
//! `linear_exo` targets are a fixed linear map of the two most recent driver
//! vectors plus Gaussian noise, so the mapping is learnable by construction.
//! `regime_switch` alternates smooth driver-following segments with
//! oscillatory bursts; the first exogenous column carries a marker one step
//! before every switch.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{SeriesDataset, Splits};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    LinearExo,
    RegimeSwitch,
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::LinearExo => "linear_exo",
            SyntheticKind::RegimeSwitch => "regime_switch",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_exo" => Ok(SyntheticKind::LinearExo),
            "regime_switch" => Ok(SyntheticKind::RegimeSwitch),
            other => Err(Error::config(format!(
                "unknown synthetic kind `{other}` (expected linear_exo or regime_switch)"
            ))),
        }
    }
}

pub const MIN_LENGTH: usize = 100;
/// Driver autocorrelation.
const DRIVER_PERSISTENCE: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub length: usize,
    /// Exogenous column count, including the marker column for `regime_switch`.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Number of regime switches; defaults to one per 200 rows.
    #[serde(default)]
    pub switches: Option<usize>,
}

fn default_noise() -> f64 {
    0.01
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, length: usize) -> Self {
        Self {
            kind,
            length,
            n: None,
            noise: default_noise(),
            switches: None,
        }
    }

    pub fn exogenous_dim(&self) -> usize {
        self.n.unwrap_or(match self.kind {
            SyntheticKind::LinearExo => 4,
            SyntheticKind::RegimeSwitch => 8,
        })
    }

    pub fn switch_count(&self) -> usize {
        self.switches.unwrap_or(self.length / 200)
    }

    pub fn generate(&self, seed: u64) -> Result<SeriesDataset> {
        if self.length < MIN_LENGTH {
            return Err(Error::config(format!(
                "synthetic length must be at least {MIN_LENGTH}, got {}",
                self.length
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("synthetic noise must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = match self.kind {
            SyntheticKind::LinearExo => linear_exo(self, &mut rng)?,
            SyntheticKind::RegimeSwitch => regime_switch(self, &mut rng)?,
        };
        let splits = Splits::from_fractions(ds.rows(), 0.7, 0.15)?;
        ds.with_splits(splits)
    }
}

pub fn gen_synthetic(kind: SyntheticKind, length: usize, seed: u64) -> Result<SeriesDataset> {
    SyntheticSpec::new(kind, length).generate(seed)
}

/// Coefficients of the linear map used by `linear_exo`: `(lag1, lag2)` per driver.
pub fn linear_exo_coefficients(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|j| {
            let j = j as f64;
            (0.6 * (1.3 * j + 0.4).cos(), 0.4 * (0.7 * j + 1.1).sin())
        })
        .collect()
}

fn ar_drivers(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let innovation = (1.0 - DRIVER_PERSISTENCE * DRIVER_PERSISTENCE).sqrt();
    let mut state: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
    (0..rows)
        .map(|_| {
            for s in state.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *s = DRIVER_PERSISTENCE * *s + innovation * e;
            }
            state.clone()
        })
        .collect()
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

fn linear_exo(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<SeriesDataset> {
    let n = spec.exogenous_dim();
    if n == 0 {
        return Err(Error::config("linear_exo needs at least one driver"));
    }
    let coef = linear_exo_coefficients(n);
    // two extra warm-up rows so every target has both lags
    let x = ar_drivers(rng, spec.length + 2, n);
    let mut exo = Vec::with_capacity(spec.length * n);
    let mut tgt = Vec::with_capacity(spec.length);
    for t in 2..spec.length + 2 {
        let mut y = 0.0;
        for (j, (a, b)) in coef.iter().enumerate() {
            y += a * x[t - 1][j] + b * x[t - 2][j];
        }
        let e: f64 = rng.sample(StandardNormal);
        tgt.push(y + spec.noise * e);
        exo.extend_from_slice(&x[t]);
    }
    SeriesDataset::new(
        Tensor::matrix(spec.length, n, exo)?,
        Tensor::matrix(spec.length, 1, tgt)?,
        names("x", n),
        vec!["y".into()],
    )
}

/// Switch times strictly inside `(margin, length − margin)`, one per equal
/// segment, with random placement inside the segment.
fn switch_times(rng: &mut ChaCha8Rng, length: usize, count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let margin = 2;
    let span = length - 2 * margin;
    let seg = span / count;
    (0..count)
        .map(|i| {
            let lo = margin + i * seg;
            let jitter = seg / 4;
            lo + seg / 2 - jitter + rng.gen_range(0..=2 * jitter)
        })
        .collect()
}

fn regime_switch(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<SeriesDataset> {
    let n = spec.exogenous_dim();
    if n < 5 {
        return Err(Error::config("regime_switch needs n >= 5 (marker plus four drivers)"));
    }
    let count = spec.switch_count();
    if count * 8 > spec.length {
        return Err(Error::config(format!(
            "{count} switches do not fit in {} rows",
            spec.length
        )));
    }
    let drivers = n - 1;
    let z = ar_drivers(rng, spec.length + 1, drivers);
    let switches = switch_times(rng, spec.length, count);

    let coef: Vec<f64> = (0..drivers).map(|j| 0.5 * (0.9 * j as f64 + 0.3).cos()).collect();
    let mut exo = Vec::with_capacity(spec.length * n);
    let mut tgt = Vec::with_capacity(spec.length);
    let mut oscillating = false;
    let mut since_switch = 0usize;
    let mut next = 0usize;
    let omega = std::f64::consts::PI / 3.0;
    for t in 0..spec.length {
        if next < switches.len() && switches[next] == t {
            oscillating = !oscillating;
            since_switch = 0;
            next += 1;
        }
        let marker = if switches.get(next) == Some(&(t + 1)) { 1.0 } else { 0.0 };
        exo.push(marker);
        exo.extend_from_slice(&z[t + 1]);

        let prev = &z[t];
        let linear: f64 = coef.iter().zip(prev).map(|(c, v)| c * v).sum();
        let local = 0.6 * prev[0].max(prev[1]) - 0.4 * prev[2].max(prev[3]);
        let burst = if oscillating {
            let amp = 1.0 + 0.5 * prev[1].max(prev[2]).max(0.0);
            1.5 * amp * (omega * since_switch as f64).sin()
        } else {
            0.0
        };
        let e: f64 = rng.sample(StandardNormal);
        tgt.push(linear + local + burst + spec.noise * e);
        since_switch += 1;
    }
    let mut exo_names = vec!["switch_marker".to_owned()];
    exo_names.extend(names("z", drivers));
    SeriesDataset::new(
        Tensor::matrix(spec.length, n, exo)?,
        Tensor::matrix(spec.length, 1, tgt)?,
        exo_names,
        vec!["y".into()],
    )
}
