//! Per-time-step 1-D convolution frontend over the components of each
//! exogenous vector.
//!
//! Each `x_t` is treated as a one-map signal of length `n`. Every layer
//! applies a valid stride-1 convolution with ReLU followed by non-overlapping
//! max pooling; the final maps are flattened and projected affinely to the
//! feature dimension `m`. Time steps never mix: the batch rows of the input
//! matrix are processed independently.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init_uniform, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};

/// Geometry of one convolution + pooling stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub maps: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageGeometry {
    pub in_maps: usize,
    pub in_len: usize,
    pub conv_len: usize,
    pub pooled_len: usize,
}

/// Closed-form lengths through every stage, rejecting geometries that
/// exhaust the input.
pub fn frontend_geometry(n: usize, layers: &[ConvLayerSpec]) -> Result<Vec<StageGeometry>> {
    if n == 0 {
        return Err(Error::config("exogenous dimension n must be positive"));
    }
    let mut in_maps = 1;
    let mut len = n;
    let mut stages = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        if layer.maps == 0 || layer.kernel == 0 {
            return Err(Error::config(format!(
                "conv layer {}: maps and kernel width must be positive",
                i + 1
            )));
        }
        if layer.pool == 0 {
            return Err(Error::PoolWidth(0));
        }
        if len < layer.kernel {
            return Err(Error::config(format!(
                "conv layer {}: input length {len} is shorter than kernel width {}",
                i + 1,
                layer.kernel
            )));
        }
        let conv_len = len - layer.kernel + 1;
        let pooled_len = conv_len.div_ceil(layer.pool);
        stages.push(StageGeometry {
            in_maps,
            in_len: len,
            conv_len,
            pooled_len,
        });
        in_maps = layer.maps;
        len = pooled_len;
    }
    Ok(stages)
}

/// Size of the flattened final feature maps.
pub fn flattened_len(n: usize, layers: &[ConvLayerSpec]) -> Result<usize> {
    let stages = frontend_geometry(n, layers)?;
    Ok(match (layers.last(), stages.last()) {
        (Some(l), Some(s)) => l.maps * s.pooled_len,
        _ => n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[maps × in_maps × width]`
    pub kernels: ParamId,
    pub biases: ParamId,
    pub in_maps: usize,
    pub maps: usize,
    pub width: usize,
    pub pool_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvFrontendParams {
    pub input_len: usize,
    pub layers: Vec<ConvLayer>,
    /// `[m × flat_len]`
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
    pub flat_len: usize,
    pub out_dim: usize,
}

impl ConvFrontendParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        n: usize,
        specs: &[ConvLayerSpec],
        m: usize,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::config("feature dimension m must be positive"));
        }
        let stages = frontend_geometry(n, specs)?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, (spec, stage)) in specs.iter().zip(&stages).enumerate() {
            let shape = [spec.maps, stage.in_maps, spec.kernel];
            let kernels = store.add(
                format!("frontend.conv{}.kernels", i + 1),
                init_uniform(rng, &shape, stage.in_maps * spec.kernel),
            );
            let biases = store.add(
                format!("frontend.conv{}.biases", i + 1),
                Tensor::zeros(&[spec.maps]),
            );
            layers.push(ConvLayer {
                kernels,
                biases,
                in_maps: stage.in_maps,
                maps: spec.maps,
                width: spec.kernel,
                pool_width: spec.pool,
            });
        }
        let flat_len = flattened_len(n, specs)?;
        let fc_weight = store.add(
            "frontend.fc.weight",
            init_uniform(rng, &[m, flat_len], flat_len),
        );
        let fc_bias = store.add("frontend.fc.bias", Tensor::zeros(&[m]));
        Ok(Self {
            input_len: n,
            layers,
            fc_weight,
            fc_bias,
            flat_len,
            out_dim: m,
        })
    }
}

/// `ReLU(conv(input) + bias)` for a `[rows × in_maps·len]` input; returns the
/// output node and its per-map length.
pub fn conv1d_layer<T: Scalar>(
    g: &mut Graph<'_, T>,
    layer: &ConvLayer,
    input: NodeId,
    len: usize,
) -> Result<(NodeId, usize)> {
    if len < layer.width {
        return Err(Error::KernelTooWide {
            len,
            width: layer.width,
        });
    }
    let k = g.param(layer.kernels);
    let b = g.param(layer.biases);
    let pre = g.conv1d(input, k, b, layer.in_maps, len)?;
    Ok((g.relu(pre)?, len - layer.width + 1))
}

/// Max pooling with window `s`; returns the output node and its per-map length.
pub fn max_pool<T: Scalar>(
    g: &mut Graph<'_, T>,
    input: NodeId,
    maps: usize,
    len: usize,
    s: usize,
) -> Result<(NodeId, usize)> {
    let out = g.max_pool(input, maps, len, s)?;
    Ok((out, len.div_ceil(s.max(1))))
}

/// Maps `[rows × n]` exogenous vectors to `[rows × m]` local features. Rows
/// may be time steps of one window or of many windows; each is independent.
pub fn encode_window<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &ConvFrontendParams,
    exogenous: NodeId,
) -> Result<NodeId> {
    let cols = g.value(exogenous).rows_cols().1;
    if cols != params.input_len {
        return Err(Error::Shape {
            op: "encode_window",
            lhs: g.value(exogenous).shape().to_vec(),
            rhs: vec![params.input_len],
        });
    }
    let mut x = exogenous;
    let mut len = params.input_len;
    for layer in &params.layers {
        let (c, conv_len) = conv1d_layer(g, layer, x, len)?;
        let (p, pooled) = max_pool(g, c, layer.maps, conv_len, layer.pool_width)?;
        x = p;
        len = pooled;
    }
    let w = g.param(params.fc_weight);
    let b = g.param(params.fc_bias);
    let proj = g.matmul_nt(x, w)?;
    g.add_row(proj, b)
}
