//! Error metrics on the raw (denormalized) scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Per-dimension RMSE averaged over dimensions.
    pub rmse: f64,
    /// Mean absolute error over all samples and dimensions.
    pub mae: f64,
    /// Mean absolute percentage error as a fraction; `None` when any target is zero.
    pub mape: Option<f64>,
    /// `mape` times 100.
    pub mape_percent: Option<f64>,
    pub mape_defined: bool,
    pub rmse_per_dim: Vec<f64>,
    pub mae_per_dim: Vec<f64>,
    pub mape_per_dim: Option<Vec<f64>>,
    pub samples: usize,
    pub dims: usize,
}

pub fn compute_metrics(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Empty { op: "compute_metrics" });
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape {
            op: "compute_metrics",
            lhs: vec![predictions.len()],
            rhs: vec![targets.len()],
        });
    }
    let dims = targets[0].len();
    if dims == 0 {
        return Err(Error::Empty { op: "compute_metrics" });
    }
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != dims || t.len() != dims {
            return Err(Error::Shape {
                op: "compute_metrics",
                lhs: vec![p.len()],
                rhs: vec![t.len()],
            });
        }
    }
    let n = predictions.len() as f64;
    let mut sq = vec![0.0; dims];
    let mut abs = vec![0.0; dims];
    let mut pct = vec![0.0; dims];
    let mut mape_defined = true;
    for (p, t) in predictions.iter().zip(targets) {
        for j in 0..dims {
            let err = p[j] - t[j];
            sq[j] += err * err;
            abs[j] += err.abs();
            if t[j] == 0.0 {
                mape_defined = false;
            } else {
                pct[j] += (err / t[j]).abs();
            }
        }
    }
    let rmse_per_dim: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
    let mae_per_dim: Vec<f64> = abs.iter().map(|a| a / n).collect();
    let d = dims as f64;
    let rmse = rmse_per_dim.iter().sum::<f64>() / d;
    let mae = mae_per_dim.iter().sum::<f64>() / d;
    let (mape, mape_per_dim) = if mape_defined {
        let per: Vec<f64> = pct.iter().map(|p| p / n).collect();
        (Some(per.iter().sum::<f64>() / d), Some(per))
    } else {
        (None, None)
    };
    let report = MetricsReport {
        rmse,
        mae,
        mape,
        mape_percent: mape.map(|m| m * 100.0),
        mape_defined,
        rmse_per_dim,
        mae_per_dim,
        mape_per_dim,
        samples: predictions.len(),
        dims,
    };
    if !(report.rmse.is_finite() && report.mae.is_finite() && report.mape.map_or(true, f64::is_finite)) {
        return Err(Error::NonFinite { op: "compute_metrics" });
    }
    Ok(report)
}

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}
