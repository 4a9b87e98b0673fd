//! End-to-end HRHN: frontend → encoder RHN → hierarchical attention →
//! fused decoder RHN → output projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    align_scores_with_keys, attention_weights, build_context, fuse_decoder_input, project_output,
    AttentionKeys, AttentionMode, AttentionParams, ContextSet, FusionParams, OutputParams,
};
use crate::conv::{encode_window, frontend_geometry, ConvFrontendParams, ConvLayerSpec};
use crate::data::Window;
use crate::error::{Error, Result, StageExt};
use crate::numerics::{
    gradient_check_reference, init_uniform, LossBuilder, GradCheckReport, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor,
};
use crate::rhn::{rhn_step, Gates, HiddenStateGrid, RhnParams};

/// Ablation switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub use_conv_frontend: bool,
    pub attention: AttentionMode,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self::HRHN
    }
}

impl VariantConfig {
    pub const HRHN: Self = Self {
        use_conv_frontend: true,
        attention: AttentionMode::Hierarchical,
    };
    /// Classical top-layer attention, no convolution.
    pub const RHN: Self = Self {
        use_conv_frontend: false,
        attention: AttentionMode::ClassicalTop,
    };
    pub const RHN_CONVNET: Self = Self {
        use_conv_frontend: true,
        attention: AttentionMode::ClassicalTop,
    };
    pub const RHN_HA: Self = Self {
        use_conv_frontend: false,
        attention: AttentionMode::Hierarchical,
    };

    pub fn single_layer(k: usize) -> Self {
        Self {
            use_conv_frontend: false,
            attention: AttentionMode::SingleLayer(k),
        }
    }

    /// Row label in ablation tables.
    pub fn label(&self) -> String {
        match (self.use_conv_frontend, self.attention) {
            (true, AttentionMode::Hierarchical) => "HRHN".into(),
            (false, AttentionMode::ClassicalTop) => "RHN".into(),
            (true, AttentionMode::ClassicalTop) => "RHN + ConvNet".into(),
            (false, AttentionMode::Hierarchical) => "RHN + HA".into(),
            (false, AttentionMode::SingleLayer(k)) => format!("RHN-attn{k}"),
            (true, AttentionMode::SingleLayer(k)) => format!("RHN + ConvNet-attn{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Exogenous dimension `n`.
    pub n: usize,
    /// Target dimension `d`.
    pub d: usize,
    /// Window size `T`; each sample has `T − 1` input steps.
    pub window: usize,
    /// Local feature dimension `m`.
    pub feature_dim: usize,
    /// Encoder hidden size `l`.
    pub encoder_hidden: usize,
    /// Decoder hidden size `p`.
    pub decoder_hidden: usize,
    /// Recurrence depth `K` of both highway networks.
    pub depth: usize,
    #[serde(default)]
    pub conv: Vec<ConvLayerSpec>,
    #[serde(default)]
    pub variant: VariantConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("n", self.n),
            ("d", self.d),
            ("feature_dim", self.feature_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("depth", self.depth),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if self.window < 2 {
            return Err(Error::config(format!(
                "window size T must be at least 2, got {}",
                self.window
            )));
        }
        if self.variant.use_conv_frontend {
            if self.conv.is_empty() {
                return Err(Error::config(
                    "conv frontend enabled but no conv layers configured",
                ));
            }
            frontend_geometry(self.n, &self.conv)?;
        }
        self.variant.attention.depths(self.depth)?;
        Ok(())
    }

    pub fn with_variant(&self, variant: VariantConfig) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn steps(&self) -> usize {
        self.window - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Frontend {
    Conv(ConvFrontendParams),
    /// Learned affine embedding `n → m` used when the convolution is ablated.
    Affine { weight: ParamId, bias: ParamId },
}

#[derive(Clone, Debug)]
pub struct HrhnParams<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub frontend: Frontend,
    pub encoder: RhnParams,
    pub attention: AttentionParams,
    pub fusion: FusionParams,
    pub decoder: RhnParams,
    pub output: OutputParams,
}

impl<T: Scalar> HrhnParams<T> {
    /// Uniform `±1/sqrt(fan_in)` weights and zero biases, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;

        let frontend = if c.variant.use_conv_frontend {
            Frontend::Conv(ConvFrontendParams::init(&mut store, &mut rng, c.n, &c.conv, c.feature_dim)?)
        } else {
            Frontend::Affine {
                weight: store.add(
                    "frontend.embed.weight",
                    init_uniform(&mut rng, &[c.feature_dim, c.n], c.n),
                ),
                bias: store.add("frontend.embed.bias", Tensor::zeros(&[c.feature_dim])),
            }
        };
        let encoder = RhnParams::init(
            &mut store,
            &mut rng,
            "encoder",
            c.feature_dim,
            c.encoder_hidden,
            c.depth,
        )?;
        let depths = c.variant.attention.depths(c.depth)?;
        let attention =
            AttentionParams::init(&mut store, &mut rng, &depths, c.encoder_hidden, c.decoder_hidden)?;
        let context = attention.context_dim();
        let fusion = FusionParams::init(&mut store, &mut rng, c.d, context);
        let decoder = RhnParams::init(&mut store, &mut rng, "decoder", c.d, c.decoder_hidden, c.depth)?;
        let output = OutputParams::init(&mut store, &mut rng, c.d, c.decoder_hidden, context);
        Ok(Self {
            config,
            store,
            frontend,
            encoder,
            attention,
            fusion,
            decoder,
            output,
        })
    }

    /// Rebuilds the parameter layout for `config` and fills it from `store`,
    /// which must match by name and shape.
    pub fn from_store(config: ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let mut params = Self::init(config, 0)?;
        params.store.copy_values_from(store)?;
        Ok(params)
    }

    pub fn cast<U: Scalar>(&self) -> HrhnParams<U> {
        HrhnParams {
            config: self.config.clone(),
            store: self.store.cast(),
            frontend: self.frontend.clone(),
            encoder: self.encoder.clone(),
            attention: self.attention.clone(),
            fusion: self.fusion.clone(),
            decoder: self.decoder.clone(),
            output: self.output.clone(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }
}

/// Everything a forward pass produced, for inspection.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `[batch × d]`
    pub prediction: NodeId,
    pub encoder: HiddenStateGrid,
    pub encoder_gates: Vec<Vec<Gates>>,
    pub decoder_gates: Vec<Vec<Gates>>,
    /// Contexts for decoding steps `1..=T`; the last feeds only the output.
    pub contexts: Vec<ContextSet>,
}

fn check_windows(config: &ModelConfig, windows: &[&Window]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Empty { op: "forward" });
    }
    let steps = config.steps();
    for w in windows {
        let (xr, xc) = w.x.rows_cols();
        let (yr, yc) = w.y.rows_cols();
        if xr != steps || yr != steps || xc != config.n || yc != config.d || w.target.len() != config.d {
            return Err(Error::Shape {
                op: "window",
                lhs: vec![xr, xc, yc, w.target.len()],
                rhs: vec![steps, config.n, config.d, config.d],
            });
        }
    }
    Ok(())
}

/// Time-major stack of one field over a batch: row `t·B + b` is step `t` of window `b`.
fn stack_steps<T: Scalar>(windows: &[&Window], field: impl Fn(&Window) -> &Tensor<f64>, t: Option<usize>) -> Result<Tensor<T>> {
    let first = field(windows[0]);
    let (steps, cols) = first.rows_cols();
    let range: Vec<usize> = match t {
        Some(t) => vec![t],
        None => (0..steps).collect(),
    };
    let mut data = Vec::with_capacity(range.len() * windows.len() * cols);
    for &s in &range {
        for w in windows {
            data.extend(field(w).row(s).iter().map(|&v| T::from_f64(v)));
        }
    }
    Tensor::matrix(range.len() * windows.len(), cols, data)
}

/// Builds the forward pass on `g`. Only the parameter layout of `params` is
/// used; values come from the graph's store, which may differ in precision.
pub fn forward_trace<T: Scalar, P>(
    g: &mut Graph<'_, T>,
    params: &HrhnParams<P>,
    windows: &[&Window],
) -> Result<ForwardTrace> {
    let cfg = &params.config;
    check_windows(cfg, windows)?;
    let batch = windows.len();
    let steps = cfg.steps();

    let x = g.constant(stack_steps(windows, |w| &w.x, None)?)?;
    let features = match &params.frontend {
        Frontend::Conv(conv) => encode_window(g, conv, x),
        Frontend::Affine { weight, bias } => {
            let w = g.param(*weight);
            let b = g.param(*bias);
            g.matmul_nt(x, w).and_then(|z| g.add_row(z, b))
        }
    }
    .stage("frontend")?;

    let mut prev = g.constant(Tensor::zeros(&[batch, cfg.encoder_hidden]))?;
    let mut enc_states = Vec::with_capacity(steps);
    let mut encoder_gates = Vec::with_capacity(steps);
    for t in 0..steps {
        let w_t = g.slice_rows(features, t * batch, batch)?;
        let step = rhn_step(g, &params.encoder, w_t, prev).stage("encoder")?;
        prev = step.top();
        enc_states.push(step.states);
        encoder_gates.push(step.gates);
    }
    let grid = HiddenStateGrid {
        states: enc_states,
        hidden: cfg.encoder_hidden,
    };

    let keys = AttentionKeys::prepare(g, &params.attention, &grid).stage("attention")?;
    let attend = |g: &mut Graph<'_, T>, s: NodeId| -> Result<ContextSet> {
        let scores = align_scores_with_keys(g, &params.attention, &keys, s)?;
        let weights = scores
            .into_iter()
            .map(|e| attention_weights(g, e))
            .collect::<Result<Vec<_>>>()?;
        build_context(g, &params.attention, &grid, &weights)
    };

    let mut s = g.constant(Tensor::zeros(&[batch, cfg.decoder_hidden]))?;
    let mut contexts = Vec::with_capacity(steps + 1);
    let mut decoder_gates = Vec::with_capacity(steps);
    for t in 0..steps {
        let ctx = attend(g, s).stage("attention")?;
        let y_t = g.constant(stack_steps(windows, |w| &w.y, Some(t))?)?;
        let fused = fuse_decoder_input(g, &params.fusion, y_t, ctx.context).stage("fusion")?;
        let step = rhn_step(g, &params.decoder, fused, s).stage("decoder")?;
        s = step.top();
        decoder_gates.push(step.gates);
        contexts.push(ctx);
    }
    let last = attend(g, s).stage("attention")?;
    let prediction = project_output(g, &params.output, s, last.context).stage("output")?;
    contexts.push(last);

    Ok(ForwardTrace {
        prediction,
        encoder: grid,
        encoder_gates,
        decoder_gates,
        contexts,
    })
}

/// Predictions `[batch × d]` for a batch of windows.
pub fn forward_batch<T: Scalar, P>(g: &mut Graph<'_, T>, params: &HrhnParams<P>, windows: &[&Window]) -> Result<NodeId> {
    Ok(forward_trace(g, params, windows)?.prediction)
}

/// One-step-ahead prediction for a single window.
pub fn forward<T: Scalar>(params: &HrhnParams<T>, window: &Window) -> Result<Vec<f64>> {
    let mut g = Graph::new(&params.store);
    let y = forward_batch(&mut g, params, &[window])?;
    Ok(g.value(y).to_f64_vec())
}

/// Predictions for many windows, evaluated `batch_size` at a time.
pub fn predict<T: Scalar>(params: &HrhnParams<T>, windows: &[Window], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let d = params.config.d;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let mut g = Graph::new(&params.store);
        let y = forward_batch(&mut g, params, &refs)?;
        out.extend(g.value(y).to_f64_vec().chunks(d).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Mean over samples of the squared error summed over target dimensions.
pub fn loss_node<T: Scalar, P>(g: &mut Graph<'_, T>, params: &HrhnParams<P>, windows: &[&Window]) -> Result<NodeId> {
    let pred = forward_batch(g, params, windows)?;
    let targets: Vec<T> = windows
        .iter()
        .flat_map(|w| w.target.iter().map(|&v| T::from_f64(v)))
        .collect();
    let tgt = g.constant(Tensor::matrix(windows.len(), params.config.d, targets)?)?;
    let diff = g.sub(pred, tgt)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum_all(sq)?;
    g.scale(total, 1.0 / windows.len() as f64)
}

pub fn loss<T: Scalar>(params: &HrhnParams<T>, windows: &[Window]) -> Result<f64> {
    let refs: Vec<&Window> = windows.iter().collect();
    let mut g = Graph::new(&params.store);
    let l = loss_node(&mut g, params, &refs)?;
    Ok(g.value(l).data()[0].as_f64())
}

/// The training objective on plain values: `(1/N) Σ_i Σ_d (ŷ − y)²`.
pub fn objective(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Empty { op: "objective" });
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::Shape {
                op: "objective",
                lhs: vec![p.len()],
                rhs: vec![t.len()],
            });
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / predictions.len() as f64)
}

struct ModelLoss<'a> {
    params: &'a HrhnParams<f64>,
    windows: Vec<&'a Window>,
}

impl LossBuilder for ModelLoss<'_> {
    fn build<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<NodeId> {
        loss_node(g, self.params, &self.windows)
    }
}

/// Finite-difference check of the full model loss over `windows`, with the
/// difference quotients evaluated in extended precision.
pub fn model_gradient_check(params: &HrhnParams<f64>, windows: &[Window], perturbation: f64) -> Result<GradCheckReport> {
    let loss = ModelLoss {
        params,
        windows: windows.iter().collect(),
    };
    gradient_check_reference(&loss, &params.store, perturbation)
}
