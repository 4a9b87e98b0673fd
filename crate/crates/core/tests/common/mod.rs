//! Test-only reference implementations written directly from the model
//! layer definitions with plain nested vectors, independent of the graph engine.

#![allow(dead_code)]

use hrhn::conv::ConvLayerSpec;
use hrhn::data::Window;
use hrhn::model::{forward, HrhnParams, ModelConfig, VariantConfig};
use hrhn::numerics::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

pub fn uniform_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows).map(|_| uniform_vec(r, cols, scale)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn matvec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| {
            assert_eq!(row.len(), v.len());
            row.iter().zip(v).map(|(a, b)| a * b).sum()
        })
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `out[f][i] = ReLU(b[f] + Σ_p Σ_j k[f][p][j]·x[p][i+j])`; maps flattened.
pub fn conv_relu(x: &[Vec<f64>], kernels: &[Vec<Vec<f64>>], bias: &[f64]) -> Vec<Vec<f64>> {
    let len = x[0].len();
    let width = kernels[0][0].len();
    kernels
        .iter()
        .zip(bias)
        .map(|(kf, b)| {
            (0..=len - width)
                .map(|i| {
                    let mut acc = *b;
                    for (p, kp) in kf.iter().enumerate() {
                        for (j, w) in kp.iter().enumerate() {
                            acc += w * x[p][i + j];
                        }
                    }
                    acc.max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Non-overlapping max over windows of `s`; a short last window is kept.
pub fn max_pool(x: &[Vec<f64>], s: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| row.chunks(s).map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect())
        .collect()
}

/// One gate family of a highway layer.
#[derive(Clone, Debug)]
pub struct GateWeights {
    pub w: Mat,
    pub r: Mat,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RefRhn {
    /// Per depth, candidate / transform / carry; `w` is only read at depth 1.
    pub layers: Vec<[GateWeights; 3]>,
}

/// Returns `s[1..=K]` and per depth `(g, r, c)`.
pub fn rhn_step(cell: &RefRhn, x: &[f64], prev: &[f64]) -> (Vec<Vec<f64>>, Vec<[Vec<f64>; 3]>) {
    let mut s = prev.to_vec();
    let mut states = Vec::new();
    let mut gates = Vec::new();
    for (k, layer) in cell.layers.iter().enumerate() {
        let pre = |gw: &GateWeights| {
            let mut z = add(&matvec(&gw.r, &s), &gw.b);
            if k == 0 {
                z = add(&z, &matvec(&gw.w, x));
            }
            z
        };
        let g: Vec<f64> = pre(&layer[0]).into_iter().map(f64::tanh).collect();
        let r: Vec<f64> = pre(&layer[1]).into_iter().map(sigmoid).collect();
        let c: Vec<f64> = pre(&layer[2]).into_iter().map(sigmoid).collect();
        s = (0..s.len()).map(|i| g[i] * r[i] + s[i] * c[i]).collect();
        states.push(s.clone());
        gates.push([g, r, c]);
    }
    (states, gates)
}

/// `e_i = vᵀ tanh(T s + U h_i)`
pub fn align(v: &[f64], t: &Mat, u: &Mat, s: &[f64], hs: &[Vec<f64>]) -> Vec<f64> {
    let q = matvec(t, s);
    hs.iter()
        .map(|h| {
            let z = add(&q, &matvec(u, h));
            z.iter().zip(v).map(|(a, b)| a.tanh() * b).sum()
        })
        .collect()
}

pub fn softmax(e: &[f64]) -> Vec<f64> {
    let ex: Vec<f64> = e.iter().map(|v| v.exp()).collect();
    let total: f64 = ex.iter().sum();
    ex.iter().map(|v| v / total).collect()
}

pub fn context(alpha: &[f64], hs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; hs[0].len()];
    for (a, h) in alpha.iter().zip(hs) {
        for (o, v) in out.iter_mut().zip(h) {
            *o += a * v;
        }
    }
    out
}

/// `A x + B y + b`, the shape of both the fusion and the output projection.
pub fn affine2(a: &Mat, x: &[f64], b: &Mat, y: &[f64], bias: &[f64]) -> Vec<f64> {
    add(&add(&matvec(a, x), &matvec(b, y)), bias)
}

/// `(1/N) Σ_i Σ_d (ŷ − y)²`
pub fn objective(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        for (a, b) in p.iter().zip(t) {
            total += (a - b) * (a - b);
        }
    }
    total / preds.len() as f64
}

/// Naive double loops: `(rmse, mae, mape)`.
pub fn metrics(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, f64, Option<f64>) {
    let n = preds.len();
    let d = targets[0].len();
    let mut rmse = 0.0;
    for j in 0..d {
        let mut sq = 0.0;
        for i in 0..n {
            sq += (preds[i][j] - targets[i][j]).powi(2);
        }
        rmse += (sq / n as f64).sqrt();
    }
    let mut mae = 0.0;
    let mut mape = 0.0;
    let mut defined = true;
    for i in 0..n {
        for j in 0..d {
            mae += (preds[i][j] - targets[i][j]).abs();
            if targets[i][j] == 0.0 {
                defined = false;
            } else {
                mape += ((preds[i][j] - targets[i][j]) / targets[i][j]).abs();
            }
        }
    }
    let nd = (n * d) as f64;
    (rmse / d as f64, mae / nd, defined.then(|| mape / nd))
}

// --- reading model parameters by name ---

pub fn mat_of(store: &ParamStore<f64>, name: &str) -> Mat {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = store.value(id);
    let (r, c) = t.rows_cols();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn vec_of(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.value(id).data().to_vec()
}

pub fn kernels_of(store: &ParamStore<f64>, name: &str) -> Vec<Vec<Vec<f64>>> {
    let id = store.find(name).unwrap();
    let t = store.value(id);
    let s = t.shape();
    let (maps, in_maps, width) = (s[0], s[1], s[2]);
    (0..maps)
        .map(|f| {
            (0..in_maps)
                .map(|p| t.data()[(f * in_maps + p) * width..(f * in_maps + p + 1) * width].to_vec())
                .collect()
        })
        .collect()
}

pub fn rhn_of(store: &ParamStore<f64>, prefix: &str, depth: usize) -> RefRhn {
    RefRhn {
        layers: (1..=depth)
            .map(|k| {
                ["g", "r", "c"].map(|gate| GateWeights {
                    w: mat_of(store, &format!("{prefix}.w_{gate}")),
                    r: mat_of(store, &format!("{prefix}.v{k}_{gate}")),
                    b: vec_of(store, &format!("{prefix}.b{k}_{gate}")),
                })
            })
            .collect(),
    }
}

/// Replaces every parameter (biases included) with uniform values in `±scale`.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for g in store.groups_mut() {
        for v in g.value.data_mut() {
            *v = r.gen_range(-scale..scale);
        }
    }
}

pub fn random_window(cfg: &ModelConfig, r: &mut ChaCha8Rng) -> Window {
    let steps = cfg.window - 1;
    Window {
        x: Tensor::matrix(steps, cfg.n, uniform_vec(r, steps * cfg.n, 1.5)).unwrap(),
        y: Tensor::matrix(steps, cfg.d, uniform_vec(r, steps * cfg.d, 1.5)).unwrap(),
        target: uniform_vec(r, cfg.d, 1.5),
        start: 0,
    }
}

pub fn tiny_config(variant: VariantConfig) -> ModelConfig {
    ModelConfig {
        n: 4,
        d: 1,
        window: 5,
        feature_dim: 6,
        encoder_hidden: 8,
        decoder_hidden: 8,
        depth: 2,
        conv: vec![
            ConvLayerSpec { maps: 3, kernel: 2, pool: 2 },
            ConvLayerSpec { maps: 4, kernel: 2, pool: 1 },
        ],
        variant,
    }
}

/// Full pipeline: frontend, encoder, per-step attention and fusion, decoder,
/// final context and output projection.
pub fn reference_forward(params: &HrhnParams<f64>, window: &Window) -> Vec<f64> {
    let cfg = &params.config;
    let st = &params.store;
    let steps = cfg.window - 1;
    let features: Vec<Vec<f64>> = (0..steps)
        .map(|t| {
            let x = window.x.row(t).to_vec();
            if cfg.variant.use_conv_frontend {
                let mut maps = vec![x];
                for (i, layer) in cfg.conv.iter().enumerate() {
                    let k = kernels_of(st, &format!("frontend.conv{}.kernels", i + 1));
                    let b = vec_of(st, &format!("frontend.conv{}.biases", i + 1));
                    maps = max_pool(&conv_relu(&maps, &k, &b), layer.pool);
                }
                let flat: Vec<f64> = maps.concat();
                add(&matvec(&mat_of(st, "frontend.fc.weight"), &flat), &vec_of(st, "frontend.fc.bias"))
            } else {
                add(&matvec(&mat_of(st, "frontend.embed.weight"), &x), &vec_of(st, "frontend.embed.bias"))
            }
        })
        .collect();

    let enc = rhn_of(st, "encoder", cfg.depth);
    let mut h = vec![0.0; cfg.encoder_hidden];
    let mut grid: Vec<Vec<Vec<f64>>> = Vec::new();
    for w in &features {
        let (states, _) = rhn_step(&enc, w, &h);
        h = states.last().unwrap().clone();
        grid.push(states);
    }

    let depths = cfg.variant.attention.depths(cfg.depth).unwrap();
    let ctx = |s: &[f64]| -> Vec<f64> {
        depths
            .iter()
            .flat_map(|&k| {
                let hs: Vec<Vec<f64>> = grid.iter().map(|row| row[k - 1].clone()).collect();
                let e = align(
                    &vec_of(st, &format!("attention.layer{k}.v")),
                    &mat_of(st, &format!("attention.layer{k}.t")),
                    &mat_of(st, &format!("attention.layer{k}.u")),
                    s,
                    &hs,
                );
                context(&softmax(&e), &hs)
            })
            .collect()
    };

    let dec = rhn_of(st, "decoder", cfg.depth);
    let mut s = vec![0.0; cfg.decoder_hidden];
    for t in 0..steps {
        let d_t = ctx(&s);
        let fused = affine2(
            &mat_of(st, "fusion.w"),
            window.y.row(t),
            &mat_of(st, "fusion.v"),
            &d_t,
            &vec_of(st, "fusion.b"),
        );
        let (states, _) = rhn_step(&dec, &fused, &s);
        s = states.last().unwrap().clone();
    }
    let d_last = ctx(&s);
    affine2(&mat_of(st, "output.w"), &s, &mat_of(st, "output.v"), &d_last, &vec_of(st, "output.b"))
}

/// With `K = 1` hierarchical attention has one attended layer, the top one.
pub fn k1_max_difference(draws: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..draws {
        let mut r = rng(seed);
        let mut cfg: ModelConfig = tiny_config(VariantConfig::HRHN);
        cfg.depth = 1;
        cfg.variant.use_conv_frontend = seed % 2 == 0;
        let mut hier = HrhnParams::<f64>::init(cfg.clone(), seed).unwrap();
        randomize(&mut hier.store, seed, 1.0);
        let mut top_cfg = cfg.clone();
        top_cfg.variant.attention = hrhn::attention::AttentionMode::ClassicalTop;
        let top = HrhnParams::from_store(top_cfg, &hier.store).unwrap();
        let w = random_window(&cfg, &mut r);
        worst = worst.max(max_abs_diff(&forward(&hier, &w).unwrap(), &forward(&top, &w).unwrap()));
    }
    worst
}

pub mod checks;
