//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of A1-A6 fails; A7 is reported but never fails the run.
//!
//! `HRHN_ACCEPTANCE=A1,A5` restricts the run to the listed criteria.
//! `HRHN_NASDAQ_CSV` points A7 at the NASDAQ-100 file (default
//! `data/nasdaq100_padding.csv` under the workspace root).

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use hrhn::checkpoint::Checkpoint;
use hrhn::config::RunConfig;
use hrhn::data::{make_windows, Split, Splits};
use hrhn::harness::{evaluate, fit, run_ablation, run_gradcheck, DEFAULT_GRADCHECK_THRESHOLD};
use hrhn::metrics::{compute_metrics, median};
use hrhn::model::{forward, forward_trace, loss, predict, HrhnParams, VariantConfig};
use hrhn::numerics::Graph;
use hrhn::train::train;
use rand::Rng;

const ORACLE_TOL: f64 = 1e-9;
const K1_TOL: f64 = 1e-6;
const ROW_SUM_TOL: f64 = 1e-6;
const A3_MSE: f64 = 1e-3;
const A3_STEPS: usize = 2000;
const REPORTED_HRHN_RMSE: f64 = 1.401;
const A7_BAND: f64 = 0.15;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn a1() -> Outcome {
    let start = Instant::now();
    let variants = [
        VariantConfig::HRHN,
        VariantConfig::RHN,
        VariantConfig::RHN_CONVNET,
        VariantConfig::RHN_HA,
        VariantConfig::single_layer(1),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let mut pass = true;
    for v in variants {
        match run_gradcheck(v, 0, DEFAULT_GRADCHECK_THRESHOLD) {
            Ok(o) => {
                pass &= o.passed && o.report.groups.iter().all(|g| g.max_relative_error < DEFAULT_GRADCHECK_THRESHOLD);
                worst = worst.max(o.report.max_relative_error);
                parts.push(format!("{} [{}] {:.1e}", o.variant, v.attention, o.report.max_relative_error));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{}: {e}", v.label()));
            }
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!("max rel err {worst:.2e} < 1e-4 in {}; {}", secs(elapsed), parts.join(", ")),
    )
}

fn a2() -> Outcome {
    let start = Instant::now();
    let n = 100;
    let (scores, weights, context) = checks::attention(n);
    let (fusion, output) = checks::affine(n);
    let (objective, model_loss) = checks::loss_checks(n);
    let (rmse, mae, mape) = checks::metric_checks(n);
    let results = [
        ("conv1d_layer", checks::conv(n)),
        ("max_pool", checks::pool(n)),
        ("rhn_step", checks::rhn(n)),
        ("align_scores", scores),
        ("attention_weights", weights),
        ("build_context", context),
        ("fusion", fusion),
        ("output", output),
        ("loss", objective.max(model_loss)),
        ("compute_metrics", rmse.max(mae).max(mape)),
    ];
    let elapsed = start.elapsed();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let pass = results.iter().all(|r| r.1 < ORACLE_TOL) && elapsed < Duration::from_secs(60);
    let failing: Vec<String> = results
        .iter()
        .filter(|r| r.1 >= ORACLE_TOL)
        .map(|r| format!("{} {:.1e}", r.0, r.1))
        .collect();
    outcome(
        pass,
        format!(
            "10 operations x {n} instances, max abs dev {worst:.1e} < 1e-9 in {}{}",
            secs(elapsed),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    )
}

fn a3() -> Outcome {
    let start = Instant::now();
    let run = || -> hrhn::Result<Outcome> {
        let mut cfg = RunConfig::from_toml(include_str!("../../../configs/linear_exo_overfit.toml"))?;
        cfg.train.max_steps = Some(A3_STEPS);
        let data = cfg.prepare_data()?;
        let mut params = HrhnParams::<f32>::init(cfg.model_config()?, cfg.seed)?;
        let before = loss(&params, &data.train)?;
        let report = train(&mut params, &data.train, &[], &cfg.train, None)?;
        let after = loss(&params, &data.train)?;
        let raw_preds = data.denormalize(&predict(&params, &data.train, 256)?);
        let raw = compute_metrics(&raw_preds, &data.raw_targets(&data.train))?;
        let raw_mse = raw.rmse * raw.rmse;
        let elapsed = start.elapsed();
        let pass = report.steps == A3_STEPS
            && after < A3_MSE
            && raw_mse < A3_MSE
            && before / after >= 100.0
            && elapsed < Duration::from_secs(300);
        Ok(outcome(
            pass,
            format!(
                "train MSE {after:.2e} normalized / {raw_mse:.2e} raw after {} Adam steps (lr {}), start {before:.2e} ({:.0}x drop), {}",
                report.steps,
                cfg.train.learning_rate,
                before / after,
                secs(elapsed)
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

fn a4() -> Outcome {
    let start = Instant::now();
    let run = || -> hrhn::Result<Outcome> {
        let cfg = RunConfig::from_toml(include_str!("../../../configs/regime_switch_ablation.toml"))?;
        let table = run_ablation(&cfg, &[0, 1, 2, 3, 4])?;
        let rmse = |label: &str| table.row(label).and_then(|r| r.median.rmse);
        let cells: Vec<String> = table
            .rows
            .iter()
            .map(|r| format!("{} {}", r.variant, r.median.rmse.map_or("failed".into(), |v| format!("{v:.4}"))))
            .collect();
        let pass = match (rmse("HRHN"), rmse("RHN"), rmse("RHN + ConvNet"), rmse("RHN + HA")) {
            (Some(h), Some(r), Some(c), Some(a)) => h <= r && h <= c.max(a),
            _ => false,
        };
        Ok(outcome(
            pass,
            format!(
                "median test RMSE over 5 seeds: {}; needs HRHN <= RHN and HRHN <= max(RHN + ConvNet, RHN + HA); {}",
                cells.join(", "),
                secs(start.elapsed())
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

fn a5() -> Outcome {
    let worst = k1_max_difference(20);
    outcome(worst <= K1_TOL, format!("max abs diff {worst:.1e} <= 1e-6 over 20 draws"))
}

fn a6() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let variants = [
        VariantConfig::HRHN,
        VariantConfig::RHN,
        VariantConfig::RHN_CONVNET,
        VariantConfig::RHN_HA,
        VariantConfig::single_layer(1),
    ];

    let (mut row_dev, mut gates_ok) = (0.0f64, true);
    for (i, v) in variants.iter().enumerate() {
        for seed in 0..10u64 {
            let mut p = HrhnParams::<f64>::init(tiny_config(*v), seed).unwrap();
            randomize(&mut p.store, 31 * i as u64 + seed, 1.0);
            let w = random_window(&p.config, &mut rng(seed));
            let mut g = Graph::new(&p.store);
            let trace = forward_trace(&mut g, &p, &[&w]).unwrap();
            for ctx in &trace.contexts {
                for &a in &ctx.weights {
                    row_dev = row_dev.max((g.value(a).row(0).iter().sum::<f64>() - 1.0).abs());
                }
            }
            for gates in trace.encoder_gates.iter().chain(&trace.decoder_gates).flatten() {
                for node in [gates.transform, gates.carry] {
                    gates_ok &= g.value(node).data().iter().all(|&x| x > 0.0 && x < 1.0);
                }
            }
        }
    }
    pass &= row_dev <= ROW_SUM_TOL && gates_ok;
    notes.push(format!("row sums within {row_dev:.1e}"));
    notes.push(format!("gates in (0,1): {gates_ok}"));

    let mut zero_ok = true;
    for v in variants {
        let mut p = HrhnParams::<f64>::init(tiny_config(v), 1).unwrap();
        for g in p.store.groups_mut() {
            g.value.data_mut().fill(0.0);
        }
        let b = p.store.find("output.b").unwrap();
        p.store.value_mut(b).data_mut()[0] = 0.375;
        let w = random_window(&p.config, &mut rng(2));
        zero_ok &= forward(&p, &w).unwrap() == vec![0.375];
    }
    pass &= zero_ok;
    notes.push(format!("zero-parameter forward = output bias: {zero_ok}"));

    let mut ckpt_ok = true;
    let dir = tempfile::tempdir().unwrap();
    for (i, v) in variants.iter().enumerate() {
        let p = HrhnParams::<f32>::init(tiny_config(*v), i as u64).unwrap();
        let ck = Checkpoint::new(p, None, None);
        let path = dir.path().join(format!("{i}.ckpt"));
        ck.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let same_bits = ck
            .params
            .store
            .groups()
            .iter()
            .zip(back.params.store.groups())
            .all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
        ckpt_ok &= same_bits && back.to_bytes().unwrap() == bytes;
    }
    pass &= ckpt_ok;
    notes.push(format!("checkpoint bitwise round trip: {ckpt_ok}"));

    let mut r = rng(77);
    let mut windows_ok = true;
    for _ in 0..50 {
        let m = r.gen_range(2..400);
        let t = r.gen_range(2..=m);
        let ds = hrhn::data::SeriesDataset::new(
            hrhn::numerics::Tensor::matrix(m, 1, uniform_vec(&mut r, m, 1.0)).unwrap(),
            hrhn::numerics::Tensor::matrix(m, 1, uniform_vec(&mut r, m, 1.0)).unwrap(),
            vec!["x".into()],
            vec!["y".into()],
        )
        .unwrap()
        .with_splits(Splits::from_sizes(m, 0, 0))
        .unwrap();
        windows_ok &= make_windows(&ds, Split::Train, t).unwrap().len() == m - t + 1;
    }
    pass &= windows_ok;
    notes.push(format!("window counts = M - T + 1 on 50 pairs: {windows_ok}"));
    outcome(pass, notes.join("; "))
}

fn nasdaq_path() -> PathBuf {
    std::env::var_os("HRHN_NASDAQ_CSV").map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/nasdaq100_padding.csv")
    })
}

fn a7() -> Outcome {
    let path = nasdaq_path();
    if !path.exists() {
        return outcome(
            false,
            format!(
                "not run: NASDAQ-100 file not found at {} (set HRHN_NASDAQ_CSV); no value achieved",
                path.display()
            ),
        );
    }
    let start = Instant::now();
    let run = || -> hrhn::Result<Outcome> {
        let mut cfg = RunConfig::preset("nasdaq")?;
        cfg.dataset.path = Some(path.clone());
        let data = cfg.prepare_data()?;
        let model = cfg.model_config()?;
        let mut rmses = Vec::new();
        for seed in 0..5u64 {
            let mut c = cfg.clone();
            c.seed = seed;
            c.train.seed = seed;
            let (params, _) = fit(&c, &model, &data)?;
            rmses.push(evaluate(&params, &data, &data.test, c.train.batch_size)?.metrics.rmse);
        }
        let med = median(&rmses).expect("five runs");
        let rel = (med - REPORTED_HRHN_RMSE).abs() / REPORTED_HRHN_RMSE;
        Ok(outcome(
            rel <= A7_BAND,
            format!(
                "median test RMSE {med:.4} vs 1.401 ({:+.1}%, band ±15%), runs {rmses:.4?}, {}",
                100.0 * (med - REPORTED_HRHN_RMSE) / REPORTED_HRHN_RMSE,
                secs(start.elapsed())
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

fn main() -> ExitCode {
    let selected: Option<Vec<String>> = std::env::var("HRHN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|p| p.trim().to_uppercase()).collect());
    let criteria: [(&str, &str, fn() -> Outcome, bool); 7] = [
        ("A1", "gradient correctness", a1, true),
        ("A2", "operation-level oracles", a2, true),
        ("A3", "trainability", a3, true),
        ("A4", "ablation direction", a4, true),
        ("A5", "K=1 reduction", a5, true),
        ("A6", "invariant suite", a6, true),
        ("A7", "NASDAQ stretch (does not gate acceptance)", a7, false),
    ];
    let mut failed = Vec::new();
    for (id, name, check, gating) in criteria {
        if selected.as_ref().is_some_and(|s| !s.iter().any(|x| x == id)) {
            continue;
        }
        let o = check();
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && gating {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
