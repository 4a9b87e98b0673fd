//! Hierarchical attention over the encoder's hidden-state grid, decoder input
//! fusion, and the output projection.
//!
//! For every attended depth `k` the alignment score of encoder state
//! `h_i[k]` against the previous decoder top state `s` is
//! `v_kᵀ tanh(T_k s + U_k h_i[k])`; scores are normalized with a softmax over
//! `i`, and the weighted sum of the depth-`k` states is the sub-context
//! `d[k]`. The context is the concatenation of the sub-contexts in depth
//! order. Classical attention is the special case of a single attended depth.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init_uniform, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};
use crate::rhn::HiddenStateGrid;

/// Which encoder depths the decoder attends over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttentionMode {
    /// Every depth `1..=K`, contexts concatenated.
    Hierarchical,
    /// Only the top depth `K`.
    ClassicalTop,
    /// Only depth `k` (1-based).
    SingleLayer(usize),
}

impl AttentionMode {
    /// Attended depths (1-based) for an encoder of depth `depth`.
    pub fn depths(self, depth: usize) -> Result<Vec<usize>> {
        match self {
            AttentionMode::Hierarchical => Ok((1..=depth).collect()),
            AttentionMode::ClassicalTop => Ok(vec![depth]),
            AttentionMode::SingleLayer(k) if (1..=depth).contains(&k) => Ok(vec![k]),
            AttentionMode::SingleLayer(k) => Err(Error::config(format!(
                "single_layer({k}) requires 1 <= k <= K = {depth}"
            ))),
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionMode::Hierarchical => f.write_str("hierarchical"),
            AttentionMode::ClassicalTop => f.write_str("classical_top"),
            AttentionMode::SingleLayer(k) => write!(f, "single_layer({k})"),
        }
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "hierarchical" => return Ok(AttentionMode::Hierarchical),
            "classical_top" => return Ok(AttentionMode::ClassicalTop),
            _ => {}
        }
        let inner = s
            .strip_prefix("single_layer(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("single_layer:"));
        match inner.map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(AttentionMode::SingleLayer(k)),
            _ => Err(Error::config(format!(
                "unknown attention mode `{s}` (expected hierarchical, classical_top or single_layer(k))"
            ))),
        }
    }
}

impl TryFrom<String> for AttentionMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AttentionMode> for String {
    fn from(m: AttentionMode) -> String {
        m.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayer {
    /// Encoder depth this layer attends over (1-based).
    pub depth: usize,
    /// `v_k`: `[l]`
    pub score: ParamId,
    /// `T_k`: `[l × p]`
    pub query: ParamId,
    /// `U_k`: `[l × l]`
    pub key: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub layers: Vec<AttentionLayer>,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
}

impl AttentionParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        depths: &[usize],
        enc_hidden: usize,
        dec_hidden: usize,
    ) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::config("attention needs at least one depth"));
        }
        let layers = depths
            .iter()
            .map(|&k| AttentionLayer {
                depth: k,
                score: store.add(
                    format!("attention.layer{k}.v"),
                    init_uniform(rng, &[enc_hidden], enc_hidden),
                ),
                query: store.add(
                    format!("attention.layer{k}.t"),
                    init_uniform(rng, &[enc_hidden, dec_hidden], dec_hidden),
                ),
                key: store.add(
                    format!("attention.layer{k}.u"),
                    init_uniform(rng, &[enc_hidden, enc_hidden], enc_hidden),
                ),
            })
            .collect();
        Ok(Self {
            layers,
            enc_hidden,
            dec_hidden,
        })
    }

    /// Length of the concatenated context vector.
    pub fn context_dim(&self) -> usize {
        self.layers.len() * self.enc_hidden
    }
}

/// `U_k h_i[k]` for every attended layer and position; independent of the
/// decoding step, so computed once per window.
#[derive(Clone, Debug)]
pub struct AttentionKeys {
    keys: Vec<Vec<NodeId>>,
}

impl AttentionKeys {
    pub fn prepare<T: Scalar>(
        g: &mut Graph<'_, T>,
        params: &AttentionParams,
        grid: &HiddenStateGrid,
    ) -> Result<Self> {
        if grid.hidden != params.enc_hidden {
            return Err(Error::Shape {
                op: "attention",
                lhs: vec![grid.steps(), grid.depth(), grid.hidden],
                rhs: vec![params.enc_hidden, params.dec_hidden],
            });
        }
        let mut keys = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            if layer.depth == 0 || layer.depth > grid.depth() {
                return Err(Error::config(format!(
                    "attention over depth {} but the grid has depth {}",
                    layer.depth,
                    grid.depth()
                )));
            }
            let u = g.param(layer.key);
            let row = grid
                .layer(layer.depth)
                .into_iter()
                .map(|h| g.matmul_nt(h, u))
                .collect::<Result<Vec<_>>>()?;
            keys.push(row);
        }
        Ok(Self { keys })
    }
}

/// Alignment scores `[batch × (T−1)]`, one matrix per attended layer.
pub fn align_scores_with_keys<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &AttentionParams,
    keys: &AttentionKeys,
    prev_decoder_top: NodeId,
) -> Result<Vec<NodeId>> {
    let cols = g.value(prev_decoder_top).rows_cols().1;
    if cols != params.dec_hidden {
        return Err(Error::Shape {
            op: "align_scores",
            lhs: g.value(prev_decoder_top).shape().to_vec(),
            rhs: vec![params.enc_hidden, params.dec_hidden],
        });
    }
    let mut out = Vec::with_capacity(params.layers.len());
    for (layer, layer_keys) in params.layers.iter().zip(&keys.keys) {
        let t = g.param(layer.query);
        let v = g.param(layer.score);
        let q = g.matmul_nt(prev_decoder_top, t)?;
        let mut cols = Vec::with_capacity(layer_keys.len());
        for &k in layer_keys {
            let z = g.add(q, k)?;
            let a = g.tanh(z)?;
            cols.push(g.matmul_nt(a, v)?);
        }
        out.push(g.concat_cols(&cols)?);
    }
    Ok(out)
}

pub fn align_scores<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &AttentionParams,
    grid: &HiddenStateGrid,
    prev_decoder_top: NodeId,
) -> Result<Vec<NodeId>> {
    let keys = AttentionKeys::prepare(g, params, grid)?;
    align_scores_with_keys(g, params, &keys, prev_decoder_top)
}

/// Softmax over positions, independently for each row.
pub fn attention_weights<T: Scalar>(g: &mut Graph<'_, T>, scores: NodeId) -> Result<NodeId> {
    g.softmax_rows(scores)
}

#[derive(Clone, Debug)]
pub struct ContextSet {
    /// `d[k]`, `[batch × l]` each, in attended-depth order.
    pub sub_contexts: Vec<NodeId>,
    /// Concatenation of the sub-contexts, `[batch × (layers·l)]`.
    pub context: NodeId,
    /// Attention weights `[batch × (T−1)]` per attended layer.
    pub weights: Vec<NodeId>,
}

const NORMALIZATION_GUARD: f64 = 1e-4;

pub fn build_context<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &AttentionParams,
    grid: &HiddenStateGrid,
    weights: &[NodeId],
) -> Result<ContextSet> {
    if weights.len() != params.layers.len() {
        return Err(Error::config(format!(
            "{} weight rows for {} attended layers",
            weights.len(),
            params.layers.len()
        )));
    }
    let mut sub_contexts = Vec::with_capacity(weights.len());
    for (layer, &alpha) in params.layers.iter().zip(weights) {
        let (rows, positions) = g.value(alpha).rows_cols();
        if positions != grid.steps() {
            return Err(Error::Shape {
                op: "build_context",
                lhs: g.value(alpha).shape().to_vec(),
                rhs: vec![grid.steps(), grid.depth(), grid.hidden],
            });
        }
        for r in 0..rows {
            let sum: f64 = g.value(alpha).row(r).iter().map(|v| v.as_f64()).sum();
            if (sum - 1.0).abs() > NORMALIZATION_GUARD {
                return Err(Error::UnnormalizedWeights { row: r, sum });
            }
        }
        let states = grid.layer(layer.depth);
        let mut acc: Option<NodeId> = None;
        for (i, &h) in states.iter().enumerate() {
            let a = g.slice_cols(alpha, i, 1)?;
            let term = g.mul_col(h, a)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => g.add(prev, term)?,
            });
        }
        sub_contexts.push(acc.expect("grid has at least one step"));
    }
    let context = g.concat_cols(&sub_contexts)?;
    Ok(ContextSet {
        sub_contexts,
        context,
        weights: weights.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// `W̃`: `[d × d]`
    pub target_weight: ParamId,
    /// `Ṽ`: `[d × context]`
    pub context_weight: ParamId,
    /// `b̃`: `[d]`
    pub bias: ParamId,
}

impl FusionParams {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, d: usize, context: usize) -> Self {
        Self {
            target_weight: store.add("fusion.w", init_uniform(rng, &[d, d], d)),
            context_weight: store.add("fusion.v", init_uniform(rng, &[d, context], context)),
            bias: store.add("fusion.b", Tensor::zeros(&[d])),
        }
    }
}

/// `ỹ_t = W̃ y_t + Ṽ d_t + b̃`
pub fn fuse_decoder_input<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &FusionParams,
    y_t: NodeId,
    context: NodeId,
) -> Result<NodeId> {
    affine2(g, params.target_weight, params.context_weight, params.bias, y_t, context)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputParams {
    /// `W`: `[d × p]`
    pub state_weight: ParamId,
    /// `V`: `[d × context]`
    pub context_weight: ParamId,
    /// `b`: `[d]`
    pub bias: ParamId,
}

impl OutputParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        d: usize,
        p: usize,
        context: usize,
    ) -> Self {
        Self {
            state_weight: store.add("output.w", init_uniform(rng, &[d, p], p)),
            context_weight: store.add("output.v", init_uniform(rng, &[d, context], context)),
            bias: store.add("output.b", Tensor::zeros(&[d])),
        }
    }
}

/// `ŷ_T = W s_{T−1}[K] + V d_T + b`
pub fn project_output<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &OutputParams,
    decoder_top: NodeId,
    context: NodeId,
) -> Result<NodeId> {
    affine2(g, params.state_weight, params.context_weight, params.bias, decoder_top, context)
}

fn affine2<T: Scalar>(
    g: &mut Graph<'_, T>,
    w: ParamId,
    v: ParamId,
    b: ParamId,
    x: NodeId,
    ctx: NodeId,
) -> Result<NodeId> {
    let wn = g.param(w);
    let vn = g.param(v);
    let bn = g.param(b);
    let a = g.matmul_nt(x, wn)?;
    let c = g.matmul_nt(ctx, vn)?;
    let s = g.add(a, c)?;
    g.add_row(s, bn)
}
