//! Each check draws `instances` random cases, runs the library operation and
//! the reference transcription, and returns the largest absolute deviation.

use hrhn::attention::{
    align_scores, attention_weights, build_context, fuse_decoder_input, project_output, AttentionParams,
    FusionParams, OutputParams,
};
use hrhn::conv::{conv1d_layer, max_pool, ConvLayer};
use hrhn::metrics::compute_metrics;
use hrhn::model::{loss, objective, HrhnParams, VariantConfig};
use hrhn::numerics::{Graph, NodeId, ParamStore, Tensor};
use hrhn::rhn::{rhn_step, HiddenStateGrid, RhnParams};
use rand::Rng;

use super::*;

fn rows_of(g: &Graph<'_, f64>, node: NodeId) -> Vec<Vec<f64>> {
    let t = g.value(node);
    (0..t.rows_cols().0).map(|r| t.row(r).to_vec()).collect()
}

fn constant(g: &mut Graph<'_, f64>, rows: &[Vec<f64>]) -> NodeId {
    g.constant(Tensor::from_rows(rows).unwrap()).unwrap()
}

pub fn conv(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut r = rng(seed);
        let (in_maps, maps, width) = (r.gen_range(1..4), r.gen_range(1..5), r.gen_range(1..4));
        let len = width + r.gen_range(0..6);
        let batch = r.gen_range(1..4);
        let kernels: Vec<Vec<Vec<f64>>> = (0..maps).map(|_| uniform_mat(&mut r, in_maps, width, 1.0)).collect();
        let bias = uniform_vec(&mut r, maps, 0.5);
        let mut store = ParamStore::<f64>::new();
        let kid = store.add("k", Tensor::new(vec![maps, in_maps, width], kernels.concat().concat()).unwrap());
        let bid = store.add("b", Tensor::vector(bias.clone()).unwrap());
        let layer = ConvLayer {
            kernels: kid,
            biases: bid,
            in_maps,
            maps,
            width,
            pool_width: 1,
        };
        let inputs: Vec<Vec<Vec<f64>>> = (0..batch).map(|_| uniform_mat(&mut r, in_maps, len, 2.0)).collect();
        let mut g = Graph::new(&store);
        let flat: Vec<Vec<f64>> = inputs.iter().map(|m| m.concat()).collect();
        let x = constant(&mut g, &flat);
        let (out, out_len) = conv1d_layer(&mut g, &layer, x, len).unwrap();
        assert_eq!(out_len, len - width + 1);
        for (b, input) in inputs.iter().enumerate() {
            let expect = conv_relu(input, &kernels, &bias).concat();
            worst = worst.max(max_abs_diff(g.value(out).row(b), &expect));
        }
    }
    worst
}

pub fn pool(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut r = rng(1000 + seed);
        let (maps, len, s) = (r.gen_range(1..4), r.gen_range(1..10), r.gen_range(1..5));
        let batch = r.gen_range(1..4);
        let inputs: Vec<Vec<Vec<f64>>> = (0..batch).map(|_| uniform_mat(&mut r, maps, len, 2.0)).collect();
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let flat: Vec<Vec<f64>> = inputs.iter().map(|m| m.concat()).collect();
        let x = constant(&mut g, &flat);
        let (out, out_len) = max_pool(&mut g, x, maps, len, s).unwrap();
        assert_eq!(out_len, len.div_ceil(s));
        for (b, input) in inputs.iter().enumerate() {
            worst = worst.max(max_abs_diff(g.value(out).row(b), &super::max_pool(input, s).concat()));
        }
    }
    worst
}

pub fn rhn(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut r = rng(2000 + seed);
        let (input, hidden, depth, batch) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..4), r.gen_range(1..3));
        let mut store = ParamStore::<f64>::new();
        let cell = RhnParams::init(&mut store, &mut rng(seed), "cell", input, hidden, depth).unwrap();
        randomize(&mut store, seed, 1.0);
        let reference = rhn_of(&store, "cell", depth);
        let xs = uniform_mat(&mut r, batch, input, 2.0);
        let prev = uniform_mat(&mut r, batch, hidden, 1.0);
        let mut g = Graph::new(&store);
        let xn = constant(&mut g, &xs);
        let pn = constant(&mut g, &prev);
        let step = rhn_step(&mut g, &cell, xn, pn).unwrap();
        for b in 0..batch {
            let (states, gates) = super::rhn_step(&reference, &xs[b], &prev[b]);
            for k in 0..depth {
                worst = worst.max(max_abs_diff(g.value(step.states[k]).row(b), &states[k]));
                let lib = &step.gates[k];
                for (node, expect) in [lib.candidate, lib.transform, lib.carry].into_iter().zip(&gates[k]) {
                    worst = worst.max(max_abs_diff(g.value(node).row(b), expect));
                }
            }
        }
    }
    worst
}

struct AttentionCase {
    store: ParamStore<f64>,
    params: AttentionParams,
    /// `grid[t][k]` per batch row.
    grids: Vec<Vec<Vec<Vec<f64>>>>,
    s: Vec<Vec<f64>>,
    steps: usize,
    depth: usize,
    enc: usize,
}

fn attention_case(seed: u64) -> AttentionCase {
    let mut r = rng(3000 + seed);
    let (steps, depth, enc, dec, batch) = (
        r.gen_range(1..7),
        r.gen_range(1..4),
        r.gen_range(1..6),
        r.gen_range(1..6),
        r.gen_range(1..3),
    );
    let depths: Vec<usize> = match r.gen_range(0..3) {
        0 => (1..=depth).collect(),
        1 => vec![depth],
        _ => vec![r.gen_range(1..=depth)],
    };
    let mut store = ParamStore::<f64>::new();
    let params = AttentionParams::init(&mut store, &mut rng(seed), &depths, enc, dec).unwrap();
    randomize(&mut store, seed + 7, 1.0);
    let grids = (0..batch)
        .map(|_| (0..steps).map(|_| uniform_mat(&mut r, depth, enc, 1.0)).collect())
        .collect();
    let s = uniform_mat(&mut r, batch, dec, 1.0);
    AttentionCase {
        store,
        params,
        grids,
        s,
        steps,
        depth,
        enc,
    }
}

fn grid_nodes(g: &mut Graph<'_, f64>, case: &AttentionCase) -> HiddenStateGrid {
    let states = (0..case.steps)
        .map(|t| {
            (0..case.depth)
                .map(|k| {
                    let rows: Vec<Vec<f64>> = case.grids.iter().map(|grid| grid[t][k].clone()).collect();
                    constant(g, &rows)
                })
                .collect()
        })
        .collect();
    HiddenStateGrid {
        states,
        hidden: case.enc,
    }
}

fn layer_states(case: &AttentionCase, b: usize, k: usize) -> Vec<Vec<f64>> {
    case.grids[b].iter().map(|row| row[k - 1].clone()).collect()
}

fn layer_params(case: &AttentionCase, k: usize) -> (Vec<f64>, Mat, Mat) {
    (
        vec_of(&case.store, &format!("attention.layer{k}.v")),
        mat_of(&case.store, &format!("attention.layer{k}.t")),
        mat_of(&case.store, &format!("attention.layer{k}.u")),
    )
}

/// Alignment scores, attention weights and contexts: `(scores, weights, context)`.
pub fn attention(instances: u64) -> (f64, f64, f64) {
    let (mut ws, mut ww, mut wc) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..instances {
        let case = attention_case(seed);
        let mut g = Graph::new(&case.store);
        let grid = grid_nodes(&mut g, &case);
        let s = constant(&mut g, &case.s);
        let scores = align_scores(&mut g, &case.params, &grid, s).unwrap();
        let weights: Vec<NodeId> = scores.iter().map(|&e| attention_weights(&mut g, e).unwrap()).collect();
        let ctx = build_context(&mut g, &case.params, &grid, &weights).unwrap();
        for b in 0..case.s.len() {
            let mut full = Vec::new();
            for (i, layer) in case.params.layers.iter().enumerate() {
                let hs = layer_states(&case, b, layer.depth);
                let (v, t, u) = layer_params(&case, layer.depth);
                let e = align(&v, &t, &u, &case.s[b], &hs);
                let alpha = softmax(&e);
                let d = context(&alpha, &hs);
                ws = ws.max(max_abs_diff(g.value(scores[i]).row(b), &e));
                ww = ww.max(max_abs_diff(g.value(weights[i]).row(b), &alpha));
                wc = wc.max(max_abs_diff(g.value(ctx.sub_contexts[i]).row(b), &d));
                full.extend(d);
            }
            wc = wc.max(max_abs_diff(g.value(ctx.context).row(b), &full));
        }
    }
    (ws, ww, wc)
}

/// Fusion and output projection: `(fusion, output)`.
pub fn affine(instances: u64) -> (f64, f64) {
    let (mut wf, mut wo) = (0.0f64, 0.0f64);
    for seed in 0..instances {
        let mut r = rng(4000 + seed);
        let (d, ctx_dim, p, batch) = (r.gen_range(1..4), r.gen_range(1..9), r.gen_range(1..6), r.gen_range(1..3));
        let mut store = ParamStore::<f64>::new();
        let fusion = FusionParams::init(&mut store, &mut rng(seed), d, ctx_dim);
        let output = OutputParams::init(&mut store, &mut rng(seed), d, p, ctx_dim);
        randomize(&mut store, seed, 1.0);
        let y = uniform_mat(&mut r, batch, d, 2.0);
        let c = uniform_mat(&mut r, batch, ctx_dim, 1.0);
        let s = uniform_mat(&mut r, batch, p, 1.0);
        let mut g = Graph::new(&store);
        let (yn, cn, sn) = (constant(&mut g, &y), constant(&mut g, &c), constant(&mut g, &s));
        let fused = fuse_decoder_input(&mut g, &fusion, yn, cn).unwrap();
        let out = project_output(&mut g, &output, sn, cn).unwrap();
        let fused_rows = rows_of(&g, fused);
        let out_rows = rows_of(&g, out);
        for b in 0..batch {
            let ef = affine2(&mat_of(&store, "fusion.w"), &y[b], &mat_of(&store, "fusion.v"), &c[b], &vec_of(&store, "fusion.b"));
            let eo = affine2(&mat_of(&store, "output.w"), &s[b], &mat_of(&store, "output.v"), &c[b], &vec_of(&store, "output.b"));
            wf = wf.max(max_abs_diff(&fused_rows[b], &ef));
            wo = wo.max(max_abs_diff(&out_rows[b], &eo));
        }
    }
    (wf, wo)
}

fn random_pairs(r: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (n, d) = (r.gen_range(1..20), r.gen_range(1..4));
    let preds = uniform_mat(r, n, d, 3.0);
    let targets = uniform_mat(r, n, d, 3.0);
    (preds, targets)
}

/// The objective on given predictions, and the model loss against the
/// reference forward pass on random tiny models: `(objective, model loss)`.
pub fn loss_checks(instances: u64) -> (f64, f64) {
    let (mut wo, mut wm) = (0.0f64, 0.0f64);
    let variants = [
        VariantConfig::HRHN,
        VariantConfig::RHN,
        VariantConfig::RHN_CONVNET,
        VariantConfig::RHN_HA,
        VariantConfig::single_layer(1),
    ];
    for seed in 0..instances {
        let mut r = rng(5000 + seed);
        let (p, t) = random_pairs(&mut r);
        wo = wo.max((objective(&p, &t).unwrap() - super::objective(&p, &t)).abs());

        let cfg = tiny_config(variants[seed as usize % variants.len()]);
        let mut params = HrhnParams::<f64>::init(cfg.clone(), seed).unwrap();
        randomize(&mut params.store, seed, 0.8);
        let windows: Vec<_> = (0..r.gen_range(1..4)).map(|_| random_window(&cfg, &mut r)).collect();
        let preds: Vec<Vec<f64>> = windows.iter().map(|w| reference_forward(&params, w)).collect();
        let targets: Vec<Vec<f64>> = windows.iter().map(|w| w.target.clone()).collect();
        wm = wm.max((loss(&params, &windows).unwrap() - super::objective(&preds, &targets)).abs());
    }
    (wo, wm)
}

/// `(rmse, mae, mape)` deviations from the naive double loops.
pub fn metric_checks(instances: u64) -> (f64, f64, f64) {
    let (mut wr, mut wa, mut wp) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..instances {
        let mut r = rng(6000 + seed);
        let (p, mut t) = random_pairs(&mut r);
        if seed % 10 == 0 {
            t[0][0] = 0.0;
        }
        let lib = compute_metrics(&p, &t).unwrap();
        let (rmse, mae, mape) = metrics(&p, &t);
        wr = wr.max((lib.rmse - rmse).abs());
        wa = wa.max((lib.mae - mae).abs());
        match (lib.mape, mape) {
            (Some(a), Some(b)) => wp = wp.max((a - b).abs()),
            (None, None) => {}
            _ => wp = f64::INFINITY,
        }
    }
    (wr, wa, wp)
}
