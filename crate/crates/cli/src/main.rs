use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hrhn::attention::AttentionMode;
use hrhn::checkpoint::Checkpoint;
use hrhn::config::RunConfig;
use hrhn::data::{write_csv, Split};
use hrhn::harness::{
    evaluate, run_ablation, run_gradcheck, run_sweep, write_csv_rows, write_json, SweepAxis,
    DEFAULT_GRADCHECK_THRESHOLD,
};
use hrhn::metrics::MetricsReport;
use hrhn::model::{HrhnParams, VariantConfig};
use hrhn::synth::{SyntheticKind, SyntheticSpec};
use hrhn::train::train;

/// Default output directory when neither `--out` nor the config sets one.
const OUT_ENV: &str = "HRHN_OUT_DIR";
const FALLBACK_OUT: &str = "hrhn-out";

#[derive(Parser)]
#[command(name = "hrhn", version, about = "Hierarchical attention-based recurrent highway networks for time-series prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration, layered over --preset when both are given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset: nasdaq, tiny or quickstart.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed for initialization and batch order (base seed for multi-seed commands).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: config out_dir, then $HRHN_OUT_DIR, then ./hrhn-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model variant: HRHN, RHN, "RHN + ConvNet", "RHN + HA", RHN-attn<k>, or an
    /// attention mode (hierarchical, classical_top, single_layer(k)).
    #[arg(long, global = true)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes a checkpoint, the epoch log and a resolved-config snapshot.
    Train,
    /// Evaluate a checkpoint on a dataset split (raw-scale metrics).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, validation or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write per-window predictions.
        #[arg(long)]
        dump: bool,
    },
    /// Finite-difference gradient check on the tiny geometry (64-bit).
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_GRADCHECK_THRESHOLD)]
        threshold: f64,
        /// Check HRHN, RHN, RHN + ConvNet, RHN + HA and RHN-attn1.
        #[arg(long)]
        all_variants: bool,
    },
    /// Train every ablation variant over several seeds; median test metrics.
    Ablate {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Sensitivity sweep over the window size T or the recurrence depth K.
    Sweep {
        /// T or K.
        #[arg(long)]
        axis: String,
        /// Ascending grid, comma separated [default: 4,6,...,14 for T; 1,...,5 for K].
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Write a synthetic dataset as CSV.
    GenData {
        /// linear_exo or regime_switch.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        length: usize,
        /// Exogenous column count.
        #[arg(long)]
        n: Option<usize>,
        /// Noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
        /// Number of regime switches (regime_switch only).
        #[arg(long)]
        switches: Option<usize>,
        /// Output file [default: <out>/<kind>.csv].
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn error_chain(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.ends_with(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Train => cmd_train(c),
        Command::Eval { checkpoint, split, dump } => cmd_eval(c, &checkpoint, &split, dump),
        Command::Gradcheck { threshold, all_variants } => cmd_gradcheck(c, threshold, all_variants),
        Command::Ablate { seeds } => cmd_ablate(c, seeds),
        Command::Sweep { axis, values, seeds } => cmd_sweep(c, &axis, values, seeds),
        Command::GenData {
            kind,
            length,
            n,
            noise,
            switches,
            output,
        } => cmd_gen_data(c, &kind, length, n, noise, switches, output),
    }
}

fn parse_variant(s: &str, base: VariantConfig) -> Result<VariantConfig> {
    if let Ok(attention) = s.parse::<AttentionMode>() {
        return Ok(VariantConfig {
            use_conv_frontend: base.use_conv_frontend,
            attention,
        });
    }
    let key: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
    match key.as_str() {
        "hrhn" => Ok(VariantConfig::HRHN),
        "rhn" => Ok(VariantConfig::RHN),
        "rhn+convnet" => Ok(VariantConfig::RHN_CONVNET),
        "rhn+ha" => Ok(VariantConfig::RHN_HA),
        _ => key
            .strip_prefix("rhn-attn")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(VariantConfig::single_layer)
            .ok_or_else(|| anyhow!("unknown variant `{s}`")),
    }
}

fn has_config(c: &Common) -> bool {
    c.preset.is_some() || c.config.is_some()
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(c.preset.as_deref(), c.config.as_deref(), None)?;
    apply_overrides(c, &mut cfg)?;
    Ok(cfg)
}

fn apply_overrides(c: &Common, cfg: &mut RunConfig) -> Result<()> {
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(v) = &c.variant {
        cfg.model.variant = parse_variant(v, cfg.model.variant)?;
    }
    cfg.validate()?;
    Ok(())
}

fn out_dir(c: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .or_else(|| cfg.and_then(|r| r.out_dir.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))
}

fn format_metrics(m: &MetricsReport) -> String {
    let mut s = format!("RMSE {:.6}  MAE {:.6}", m.rmse, m.mae);
    match (m.mape, m.mape_percent) {
        (Some(f), Some(p)) => write!(s, "  MAPE {f:.6} ({p:.4}%)").unwrap(),
        _ => s.push_str("  MAPE omitted (zero targets)"),
    }
    write!(s, "  N={} D={}", m.samples, m.dims).unwrap();
    s
}

fn cmd_train(c: &Common) -> Result<()> {
    let mut cfg = resolve(c)?;
    let dir = out_dir(c, Some(&cfg))?;
    cfg.out_dir = Some(dir.clone());
    write_snapshot(&cfg, &dir)?;
    let model = cfg.model_config()?;
    let data = cfg.prepare_data()?;
    println!(
        "training {} on {} train / {} validation windows (T={}, K={})",
        model.variant.label(),
        data.train.len(),
        data.validation.len(),
        model.window,
        model.depth
    );
    let mut params = HrhnParams::<f32>::init(model, cfg.seed)?;
    let outcome = train(&mut params, &data.train, &data.validation, &cfg.train, data.stats.as_ref());
    let ckpt_path = dir.join("model.ckpt");
    Checkpoint::new(params.clone(), data.stats.clone(), Some(serde_json::to_value(&cfg)?)).save(&ckpt_path)?;
    let report = outcome.with_context(|| format!("last finite parameters saved to {}", ckpt_path.display()))?;

    write_csv_rows(&dir.join("train_log.csv"), &report.epochs)?;
    write_json(&dir.join("train_report.json"), &report)?;
    for e in &report.epochs {
        match e.validation_rmse {
            Some(v) => println!("epoch {:>4}  steps {:>7}  train loss {:.6e}  validation RMSE {v:.6}", e.epoch, e.steps, e.train_loss),
            None => println!("epoch {:>4}  steps {:>7}  train loss {:.6e}", e.epoch, e.steps, e.train_loss),
        }
    }
    if let Some(best) = report.best_epoch {
        println!("kept parameters from epoch {best}");
    }
    if !data.test.is_empty() {
        let eval = evaluate(&params, &data, &data.test, cfg.train.batch_size)?;
        write_json(&dir.join("metrics_test.json"), &eval.metrics)?;
        println!("test: {}", format_metrics(&eval.metrics));
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_eval(c: &Common, checkpoint: &Path, split: &str, dump: bool) -> Result<()> {
    let split: Split = split.parse()?;
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = if has_config(c) {
        resolve(c)?
    } else {
        let run = ck
            .header
            .run
            .clone()
            .ok_or_else(|| anyhow!("checkpoint has no run configuration; pass --config or --preset"))?;
        let mut cfg: RunConfig = serde_json::from_value(run).context("checkpoint run configuration")?;
        apply_overrides(c, &mut cfg)?;
        cfg
    };
    let model = &ck.header.model;
    let n = cfg.exogenous_dim()?;
    if (n, cfg.dataset.d, cfg.dataset.window) != (model.n, model.d, model.window) {
        bail!(
            "checkpoint geometry (n={}, d={}, T={}) does not match the dataset (n={n}, d={}, T={})",
            model.n,
            model.d,
            model.window,
            cfg.dataset.d,
            cfg.dataset.window
        );
    }
    cfg.dataset.normalize = ck.header.normalization.is_some();
    let data = cfg.prepare_data_with(ck.header.normalization.as_ref())?;
    let windows = data.windows(split);
    if windows.is_empty() {
        return Err(hrhn::Error::SplitTooShort {
            split: split.to_string(),
            len: data.dataset.splits.get(split).len(),
            window: cfg.dataset.window,
        }
        .into());
    }
    let eval = evaluate(&ck.params, &data, windows, cfg.train.batch_size)?;
    let dir = out_dir(c, Some(&cfg))?;
    write_json(&dir.join(format!("metrics_{split}.json")), &eval.metrics)?;
    println!("{split}: {}", format_metrics(&eval.metrics));
    if dump {
        let path = dir.join(format!("predictions_{split}.csv"));
        let d = eval.metrics.dims;
        let mut text = String::from("row");
        (0..d).for_each(|j| write!(text, ",target_{j}").unwrap());
        (0..d).for_each(|j| write!(text, ",prediction_{j}").unwrap());
        text.push('\n');
        for ((row, t), p) in eval.windows.iter().zip(&eval.targets).zip(&eval.predictions) {
            write!(text, "{row}").unwrap();
            t.iter().chain(p).for_each(|v| write!(text, ",{v:?}").unwrap());
            text.push('\n');
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} predictions to {}", eval.predictions.len(), path.display());
    }
    Ok(())
}

fn cmd_gradcheck(c: &Common, threshold: f64, all_variants: bool) -> Result<()> {
    let cfg = if has_config(c) { Some(resolve(c)?) } else { None };
    let seed = c.seed.or(cfg.as_ref().map(|r| r.seed)).unwrap_or(0);
    let variants = if all_variants {
        vec![
            VariantConfig::HRHN,
            VariantConfig::RHN,
            VariantConfig::RHN_CONVNET,
            VariantConfig::RHN_HA,
            VariantConfig::single_layer(1),
        ]
    } else {
        let base = cfg.as_ref().map_or(VariantConfig::HRHN, |r| r.model.variant);
        vec![match &c.variant {
            Some(v) => parse_variant(v, VariantConfig::HRHN)?,
            None => base,
        }]
    };
    let mut outcomes = Vec::new();
    for variant in variants {
        let o = run_gradcheck(variant, seed, threshold)?;
        println!("{} ({}):", o.variant, variant.attention);
        for g in &o.report.groups {
            println!("  {:<40} {:.3e}", g.name, g.max_relative_error);
        }
        println!(
            "  {} max relative error {:.3e} (threshold {threshold:e}, {} entries)",
            if o.passed { "PASS" } else { "FAIL" },
            o.report.max_relative_error,
            o.report.checked
        );
        outcomes.push(o);
    }
    let dir = out_dir(c, cfg.as_ref())?;
    write_json(&dir.join("gradcheck.json"), &outcomes)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.variant.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}

fn seed_list(c: &Common, cfg: &RunConfig, count: u64) -> Result<Vec<u64>> {
    if count == 0 {
        bail!("--seeds must be at least 1");
    }
    let base = c.seed.unwrap_or(cfg.seed);
    Ok((base..base + count).collect())
}

fn cmd_ablate(c: &Common, seeds: u64) -> Result<()> {
    let mut cfg = resolve(c)?;
    let seeds = seed_list(c, &cfg, seeds)?;
    let dir = out_dir(c, Some(&cfg))?;
    cfg.out_dir = Some(dir.clone());
    write_snapshot(&cfg, &dir)?;
    let table = run_ablation(&cfg, &seeds)?;
    table.write_csv(&dir.join("ablation.csv"))?;
    write_json(&dir.join("ablation.json"), &table)?;
    println!("{:<16} {:>12} {:>12} {:>12} {:>8}", "variant", "RMSE", "MAE", "MAPE", "failed");
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    for row in &table.rows {
        println!(
            "{:<16} {:>12} {:>12} {:>12} {:>8}",
            row.variant,
            cell(row.median.rmse),
            cell(row.median.mae),
            cell(row.median.mape),
            row.median.failed
        );
        for run in &row.runs {
            if let Some(e) = &run.error {
                eprintln!("  {} seed {}: {e}", row.variant, run.seed);
            }
        }
    }
    println!("medians over seeds {seeds:?}; wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(c: &Common, axis: &str, values: Vec<usize>, seeds: u64) -> Result<()> {
    let axis: SweepAxis = axis.parse()?;
    let mut cfg = resolve(c)?;
    let seeds = seed_list(c, &cfg, seeds)?;
    let values = if values.is_empty() { axis.default_grid().to_vec() } else { values };
    let dir = out_dir(c, Some(&cfg))?;
    cfg.out_dir = Some(dir.clone());
    write_snapshot(&cfg, &dir)?;
    let result = run_sweep(&cfg, axis, &values, &seeds)?;
    result.write_series_csv(&dir.join(format!("sweep_{axis}.csv")))?;
    write_json(&dir.join(format!("sweep_{axis}.json")), &result)?;
    println!("{axis:>4} {:>12}", "RMSE");
    for p in &result.points {
        match p.median.rmse {
            Some(r) => println!("{:>4} {r:>12.6}", p.value),
            None => println!("{:>4} {:>12}", p.value, "failed"),
        }
        for run in &p.runs {
            if let Some(e) = &run.error {
                eprintln!("  {axis}={} seed {}: {e}", p.value, run.seed);
            }
        }
    }
    println!("medians over seeds {seeds:?}; wrote {}", dir.display());
    Ok(())
}

fn cmd_gen_data(
    c: &Common,
    kind: &str,
    length: usize,
    n: Option<usize>,
    noise: Option<f64>,
    switches: Option<usize>,
    output: Option<PathBuf>,
) -> Result<()> {
    let kind: SyntheticKind = kind.parse()?;
    let mut spec = SyntheticSpec::new(kind, length);
    spec.n = n;
    spec.switches = switches;
    if let Some(s) = noise {
        spec.noise = s;
    }
    let data = spec.generate(c.seed.unwrap_or(0))?;
    let path = match output {
        Some(p) => p,
        None => out_dir(c, None)?.join(format!("{kind}.csv")),
    };
    write_csv(&data, &path)?;
    println!("wrote {} rows (n={}, d={}) to {}", data.rows(), data.n(), data.d(), path.display());
    Ok(())
}
