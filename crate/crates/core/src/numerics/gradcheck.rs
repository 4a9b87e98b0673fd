//! Central finite-difference verification of analytic gradients.

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use super::graph::{Graph, NodeId};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Scalar;
use crate::error::{Error, Result};

pub const DEFAULT_PERTURBATION: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_relative_error < threshold
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A scalar loss that can be built at any precision.
pub trait LossBuilder {
    fn build<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<NodeId>;
}

fn analytic_gradients<F>(params: &ParamStore<f64>, loss_fn: F) -> Result<Gradients<f64>>
where
    F: FnOnce(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let loss = loss_fn(&mut g)?;
    g.backward(loss)
}

fn eval_loss<T: Scalar, F>(store: &ParamStore<T>, loss_fn: F) -> Result<T>
where
    F: FnOnce(&mut Graph<'_, T>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let loss = loss_fn(&mut g)?;
    Ok(g.value(loss).data()[0])
}

/// Central difference `(f(θ+ε) − f(θ−ε)) / 2ε` in the store's own precision.
fn central_difference<T: Scalar>(
    store: &mut ParamStore<T>,
    id: ParamId,
    index: usize,
    flat_index: usize,
    perturbation: f64,
    eval: &impl Fn(&ParamStore<T>) -> Result<T>,
) -> Result<f64> {
    let original = store.value(id).data()[index];
    let eps = T::from_f64(perturbation);
    let mut probe = |value: T| -> Result<T> {
        store.value_mut(id).data_mut()[index] = value;
        let out = eval(store);
        store.value_mut(id).data_mut()[index] = original;
        match out {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(Error::NonFinite { op: "loss" }),
            Err(e) => Err(e),
        }
    };
    let result = probe(original + eps).and_then(|plus| Ok((plus, probe(original - eps)?)));
    match result {
        Ok((plus, minus)) => Ok((plus - minus).as_f64() / (2.0 * perturbation)),
        Err(e) if matches!(e.root(), Error::NonFinite { .. }) => Err(Error::NonFiniteLoss {
            name: store.group(id).name.clone(),
            index,
            flat_index,
        }),
        Err(e) => Err(e),
    }
}

fn compare<T: Scalar>(
    analytic: &Gradients<f64>,
    store: &mut ParamStore<T>,
    perturbation: f64,
    eval: impl Fn(&ParamStore<T>) -> Result<T>,
) -> Result<GradCheckReport> {
    if !(perturbation > 0.0) {
        return Err(Error::config("perturbation must be positive"));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        groups: Vec::new(),
    };
    let mut flat_offset = 0;
    for gi in 0..store.len() {
        let id = ParamId(gi);
        let len = store.group(id).value.len();
        let grad = analytic
            .get(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; len]);
        let mut worst = GroupError {
            name: store.group(id).name.clone(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in grad.iter().enumerate() {
            let numeric = central_difference(store, id, i, flat_offset + i, perturbation, &eval)?;
            let err = relative_error(a, numeric);
            if err > worst.max_relative_error || i == 0 {
                worst.max_relative_error = err;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
            report.checked += 1;
        }
        report.max_relative_error = report.max_relative_error.max(worst.max_relative_error);
        report.groups.push(worst);
        flat_offset += len;
    }
    Ok(report)
}

/// Compares the analytic gradient of `loss_fn` with
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every scalar parameter in `params`.
///
/// `loss_fn` must be deterministic and build a scalar loss on the graph it is
/// given. Parameter values are restored before returning.
pub fn gradient_check<F>(loss_fn: F, params: &mut ParamStore<f64>, perturbation: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let analytic = analytic_gradients(params, &loss_fn)?;
    compare(&analytic, params, perturbation, |s| eval_loss(s, &loss_fn))
}

/// Like [`gradient_check`], but the finite differences are evaluated in
/// double-double arithmetic while the analytic gradient stays in `f64`.
///
/// With an `O(1)` loss, `f64` rounding alone puts about `ulp(f)/2ε ≈ 1e-11`
/// of noise on every difference quotient, which swamps gradient components
/// near the `1e-8` floor of [`relative_error`]. The extended-precision
/// reference removes that noise without changing `ε`.
pub fn gradient_check_reference<L: LossBuilder>(
    loss: &L,
    params: &ParamStore<f64>,
    perturbation: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(params, |g| loss.build(g))?;
    let mut wide: ParamStore<TwoFloat> = params.cast();
    compare(&analytic, &mut wide, perturbation, |s| eval_loss(s, |g| loss.build(g)))
}
