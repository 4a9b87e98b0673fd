//! Recurrent highway cell with recurrence depth `K`.
//!
//! At each time step the cell applies `K` stacked highway layers. The input
//! enters only the first layer; every layer `k` mixes a tanh candidate `g`
//! with the previous depth state through a transform gate `r` and a carry
//! gate `c`:
//!
//! ```text
//! h[k] = g ⊙ r + h[k−1] ⊙ c,   h[0] = previous step's h[K]
//! ```
//!
//! All `K` intermediate states are kept, since hierarchical attention reads
//! every depth.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{init_uniform, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};

/// One weight per nonlinearity, ordered candidate, transform gate, carry gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateTriple {
    pub candidate: ParamId,
    pub transform: ParamId,
    pub carry: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhnParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// `[hidden × input_dim]`, used only at depth 1.
    pub input_weights: GateTriple,
    /// `[hidden × hidden]` per depth.
    pub recurrent_weights: Vec<GateTriple>,
    /// `[hidden]` per depth.
    pub biases: Vec<GateTriple>,
}

impl RhnParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        depth: usize,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || depth == 0 {
            return Err(Error::config(format!(
                "{prefix}: input size, hidden size and depth must be positive"
            )));
        }
        let mut triple = |store: &mut ParamStore<T>, name: &str, shape: &[usize], fan_in: Option<usize>| {
            let mut make = |gate: &str| {
                let value = match fan_in {
                    Some(f) => init_uniform(rng, shape, f),
                    None => Tensor::zeros(shape),
                };
                store.add(format!("{prefix}.{name}_{gate}"), value)
            };
            GateTriple {
                candidate: make("g"),
                transform: make("r"),
                carry: make("c"),
            }
        };
        let input_weights = triple(store, "w", &[hidden, input_dim], Some(input_dim));
        let mut recurrent_weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        for k in 1..=depth {
            recurrent_weights.push(triple(store, &format!("v{k}"), &[hidden, hidden], Some(hidden)));
            biases.push(triple(store, &format!("b{k}"), &[hidden], None));
        }
        Ok(Self {
            input_dim,
            hidden,
            input_weights,
            recurrent_weights,
            biases,
        })
    }

    pub fn depth(&self) -> usize {
        self.recurrent_weights.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Gates {
    pub candidate: NodeId,
    pub transform: NodeId,
    pub carry: NodeId,
}

/// States `h[1..=K]` of one time step, plus the gate activations that
/// produced them.
#[derive(Clone, Debug)]
pub struct RhnStep {
    pub states: Vec<NodeId>,
    pub gates: Vec<Gates>,
}

impl RhnStep {
    pub fn top(&self) -> NodeId {
        *self.states.last().expect("depth >= 1")
    }
}

/// One time step of the cell on `[batch × input_dim]` inputs and a
/// `[batch × hidden]` previous top state.
pub fn rhn_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &RhnParams,
    input: NodeId,
    prev_top: NodeId,
) -> Result<RhnStep> {
    let (batch, in_cols) = g.value(input).rows_cols();
    let (prev_rows, prev_cols) = g.value(prev_top).rows_cols();
    if in_cols != params.input_dim || prev_cols != params.hidden || prev_rows != batch {
        return Err(Error::Shape {
            op: "rhn_step",
            lhs: g.value(input).shape().to_vec(),
            rhs: g.value(prev_top).shape().to_vec(),
        });
    }

    let w = params.input_weights;
    let mut projected = Vec::with_capacity(3);
    for id in [w.candidate, w.transform, w.carry] {
        let wn = g.param(id);
        projected.push(g.matmul_nt(input, wn)?);
    }

    let mut states = Vec::with_capacity(params.depth());
    let mut gates = Vec::with_capacity(params.depth());
    let mut h = prev_top;
    for (k, (v, b)) in params.recurrent_weights.iter().zip(&params.biases).enumerate() {
        let mut pre = Vec::with_capacity(3);
        for (i, (vid, bid)) in [(v.candidate, b.candidate), (v.transform, b.transform), (v.carry, b.carry)]
            .into_iter()
            .enumerate()
        {
            let vn = g.param(vid);
            let bn = g.param(bid);
            let mut z = g.matmul_nt(h, vn)?;
            if k == 0 {
                z = g.add(z, projected[i])?;
            }
            pre.push(g.add_row(z, bn)?);
        }
        let cand = g.tanh(pre[0])?;
        let transform = g.sigmoid(pre[1])?;
        let carry = g.sigmoid(pre[2])?;
        let gated = g.mul(cand, transform)?;
        let carried = g.mul(h, carry)?;
        h = g.add(gated, carried)?;
        states.push(h);
        gates.push(Gates {
            candidate: cand,
            transform,
            carry,
        });
    }
    Ok(RhnStep { states, gates })
}

/// Encoder (or decoder) hidden states indexed by time step and depth.
#[derive(Clone, Debug)]
pub struct HiddenStateGrid {
    /// `states[t][k]` is `[batch × hidden]`.
    pub states: Vec<Vec<NodeId>>,
    pub hidden: usize,
}

impl HiddenStateGrid {
    pub fn steps(&self) -> usize {
        self.states.len()
    }

    pub fn depth(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn top(&self, t: usize) -> NodeId {
        *self.states[t].last().expect("depth >= 1")
    }

    /// States of one depth layer (1-based `k`) across all time steps.
    pub fn layer(&self, k: usize) -> Vec<NodeId> {
        self.states.iter().map(|row| row[k - 1]).collect()
    }

    /// `[steps × depth × hidden]` snapshot of one batch row.
    pub fn to_tensor<T: Scalar>(&self, g: &Graph<'_, T>, batch_row: usize) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.steps() * self.depth() * self.hidden);
        for row in &self.states {
            for &node in row {
                data.extend_from_slice(g.value(node).row(batch_row));
            }
        }
        Tensor::new(vec![self.steps(), self.depth(), self.hidden], data).expect("grid shape")
    }
}

/// Runs the cell left to right, threading each step's top state into the next.
pub fn run_sequence<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &RhnParams,
    inputs: &[NodeId],
    initial_top: NodeId,
) -> Result<HiddenStateGrid> {
    if inputs.is_empty() {
        return Err(Error::Empty { op: "run_sequence" });
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut prev = initial_top;
    for &x in inputs {
        let step = rhn_step(g, params, x, prev)?;
        prev = step.top();
        states.push(step.states);
    }
    Ok(HiddenStateGrid {
        states,
        hidden: params.hidden,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_cell(store: &mut ParamStore<f64>, input: usize, hidden: usize, depth: usize) -> RhnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = RhnParams::init(store, &mut rng, "cell", input, hidden, depth).unwrap();
        for g in store.groups_mut() {
            g.value.data_mut().fill(0.0);
        }
        p
    }

    #[test]
    fn zero_parameters_halve_the_carried_state() {
        let mut store = ParamStore::new();
        let p = zero_cell(&mut store, 2, 3, 4);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::matrix(1, 2, vec![0.7, -0.3]).unwrap()).unwrap();
        let v = [1.0, -2.0, 0.5];
        let prev = g.constant(Tensor::matrix(1, 3, v.to_vec()).unwrap()).unwrap();
        let step = rhn_step(&mut g, &p, x, prev).unwrap();
        for (k, &s) in step.states.iter().enumerate() {
            let factor = 0.5f64.powi(k as i32 + 1);
            let want: Vec<f64> = v.iter().map(|x| x * factor).collect();
            assert_eq!(g.value(s).data(), &want[..]);
        }
    }

    #[test]
    fn saturated_carry_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = RhnParams::init(&mut store, &mut rng, "cell", 2, 3, 2).unwrap();
        for b in &p.biases {
            store.value_mut(b.carry).data_mut().fill(40.0);
            store.value_mut(b.transform).data_mut().fill(-40.0);
        }
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::matrix(1, 2, vec![0.4, 0.9]).unwrap()).unwrap();
        let prev = g
            .constant(Tensor::matrix(1, 3, vec![0.3, -0.8, 0.1]).unwrap())
            .unwrap();
        let step = rhn_step(&mut g, &p, x, prev).unwrap();
        let top = g.value(step.top()).data();
        for (a, b) in top.iter().zip([0.3f64, -0.8, 0.1]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut store = ParamStore::new();
        let p = zero_cell(&mut store, 2, 3, 1);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        let prev = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        assert!(rhn_step(&mut g, &p, x, prev).is_err());
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut store = ParamStore::new();
        let p = zero_cell(&mut store, 1, 1, 1);
        let mut g = Graph::new(&store);
        let prev = g.constant(Tensor::zeros(&[1, 1])).unwrap();
        assert!(matches!(
            run_sequence(&mut g, &p, &[], prev),
            Err(Error::Empty { .. })
        ));
    }

    #[test]
    fn zero_everything_gives_zero_grid() {
        let mut store = ParamStore::new();
        let p = zero_cell(&mut store, 2, 3, 2);
        let mut g = Graph::new(&store);
        let xs: Vec<_> = (0..4)
            .map(|i| g.constant(Tensor::filled(&[1, 2], i as f64)).unwrap())
            .collect();
        let h0 = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        let grid = run_sequence(&mut g, &p, &xs, h0).unwrap();
        assert_eq!(grid.steps(), 4);
        assert_eq!(grid.depth(), 2);
        assert!(grid.to_tensor(&g, 0).data().iter().all(|&v| v == 0.0));
    }
}
