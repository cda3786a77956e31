//! The five subcommands: generate, train, predict, eval, bench.
//!
//! Each command resolves its settings (defaults < file < flags), does its
//! work through the core crate, writes artifacts plus `manifest.json` into
//! the output directory, and prints a one-line summary. All numeric work is
//! seed-deterministic, so rerunning a command with identical inputs
//! reproduces its outputs byte for byte.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use dsur_core::data::{self, atomic_write, Dataset, PredictionRow};
use dsur_core::error::{Error, Result};
use dsur_core::metrics::EvalReport;
use dsur_core::{baseline, datagen, inference, model, parallel, training, RngState};

use crate::config::{self, BenchSettings, METHOD_DEEPSURROGATE, METHOD_FOSR};

#[derive(Args, Debug)]
pub struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file and preset defaults.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for artifacts and the run manifest.
    #[arg(long, default_value = "dsur-out")]
    pub out: PathBuf,
}

impl Common {
    fn seed_or(&self, file_seed: Option<u64>) -> u64 {
        self.seed.or(file_seed).unwrap_or(config::DEFAULT_SEED)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario preset (s1..s7, gp1..gp4); defaults to the config file's
    /// scenario section.
    #[arg(long)]
    pub scenario: Option<String>,
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let file = config::load(args.common.config.as_deref())?;
    let spec = config::resolve_scenario(&file, args.scenario.as_deref(), args.common.seed)?;
    args.common.ensure_out()?;
    let truth = datagen::generate(&spec)?;
    let out = &args.common.out;
    truth.dataset.write_csv(out)?;
    datagen::write_truth_sidecar(&out.join("truth.json"), &truth.truth)?;
    config::write_manifest(out, "generate", spec.seed, json!({ "scenario": spec }))?;
    println!(
        "generated {}: {} sites, {} train + {} test simulations, snr {:.4} -> {}",
        spec.name,
        spec.n,
        spec.h_train,
        spec.h_test,
        truth.truth.snr,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding sites.csv, inputs.csv, responses.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Training epochs (overrides the config file).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Architecture: `synthetic` or `field`.
    #[arg(long)]
    pub arch: Option<String>,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let file = config::load(args.common.config.as_deref())?;
    let dataset = Dataset::read_csv(&args.data)?;
    let (arch, model_cfg) = config::resolve_model(
        &file,
        args.arch.as_deref(),
        dataset.input_dim(),
        dataset.covariate_dim(),
    )?;
    let train_cfg = config::resolve_train(&file, &arch, args.epochs)?;
    let seed = args.common.seed_or(file.seed);
    args.common.ensure_out()?;

    let rng = RngState::new(seed);
    let mut build_rng = rng.child(0);
    let mut train_rng = rng.child(1);
    let mut params = model::build(model_cfg.clone(), &mut build_rng)?;
    let log = training::train(&mut params, &dataset, &train_cfg, &mut train_rng)?;

    let out = &args.common.out;
    model::save(&params, &out.join("model.dsur"))?;
    training::write_training_log(&out.join("training_log.csv"), &log)?;
    config::write_manifest(
        out,
        "train",
        seed,
        json!({
            "data": args.data.display().to_string(),
            "arch": arch,
            "model": model_cfg,
            "train": train_cfg,
        }),
    )?;
    let final_loss = log.rows.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} pairs (final train loss {:.6}) -> {}",
        train_cfg.epochs,
        dataset.train_sims.len() * dataset.n_sites(),
        final_loss,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fitted model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory; the training split estimates the residual
    /// variance, the held-out split is predicted.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of posterior draws F.
    #[arg(long)]
    pub draws: Option<usize>,
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let file = config::load(args.common.config.as_deref())?;
    let params = model::load(&args.model)?;
    let dataset = Dataset::read_csv(&args.data)?;
    let infer_cfg = config::resolve_infer(&file, args.draws)?;
    let seed = args.common.seed_or(file.seed);
    args.common.ensure_out()?;

    let pairs = dataset.pairs_for(&dataset.test_sims);
    if pairs.is_empty() {
        return Err(Error::Config(
            "dataset has no held-out simulations to predict".into(),
        ));
    }
    let rng = RngState::new(seed);
    let draws = inference::draw_posterior(&params, &dataset, &infer_cfg, &rng.child(0))?;
    let batch = dataset.gather(&pairs);
    let summaries = inference::predict_summaries(
        &params,
        &draws,
        &batch.s,
        &batch.z,
        &batch.x,
        &infer_cfg,
        &rng.child(1),
    )?;
    let rows: Vec<PredictionRow> = pairs
        .iter()
        .zip(&summaries)
        .map(|(&(site, sim), s)| PredictionRow {
            sim_id: sim,
            site_id: site,
            mean: s.mean,
            sd: s.sd,
            lower: s.lower,
            upper: s.upper,
        })
        .collect();
    let out = &args.common.out;
    data::write_predictions(&out.join("predictions.csv"), &rows)?;
    config::write_manifest(
        out,
        "predict",
        seed,
        json!({
            "model": args.model.display().to_string(),
            "data": args.data.display().to_string(),
            "infer": infer_cfg,
        }),
    )?;
    println!(
        "predicted {} held-out pairs with {} draws -> {}",
        rows.len(),
        infer_cfg.draws,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Predictions CSV produced by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset directory holding the true responses.
    #[arg(long)]
    pub data: PathBuf,
    /// Exceedance threshold for the misclassification rate.
    #[arg(long)]
    pub threshold: Option<f64>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let file = config::load(args.common.config.as_deref())?;
    let threshold = config::resolve_threshold(&file, args.threshold)?;
    let preds = data::read_predictions(&args.predictions)?;
    if preds.is_empty() {
        return Err(Error::Config("predictions file has no rows".into()));
    }
    let dataset = Dataset::read_csv(&args.data)?;
    args.common.ensure_out()?;

    let mut y_true = Vec::with_capacity(preds.len());
    let (mut mean, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
    for r in &preds {
        if r.site_id >= dataset.n_sites() || r.sim_id >= dataset.n_sims() {
            return Err(Error::Config(format!(
                "prediction row (sim {}, site {}) is outside the dataset ({} sims, {} sites)",
                r.sim_id,
                r.site_id,
                dataset.n_sims(),
                dataset.n_sites()
            )));
        }
        y_true.push(dataset.responses.at(r.site_id, r.sim_id));
        mean.push(r.mean);
        lower.push(r.lower);
        upper.push(r.upper);
    }
    let report = EvalReport::from_predictions(&y_true, &mean, &lower, &upper, threshold)?;

    let out = &args.common.out;
    let mut json_text = report.to_json()?;
    json_text.push('\n');
    atomic_write(&out.join("report.json"), json_text.as_bytes())?;
    let csv_text = format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row());
    atomic_write(&out.join("report.csv"), csv_text.as_bytes())?;
    config::write_manifest(
        out,
        "eval",
        args.common.seed_or(file.seed),
        json!({
            "predictions": args.predictions.display().to_string(),
            "data": args.data.display().to_string(),
            "threshold": threshold,
        }),
    )?;
    println!("{}", report.to_json()?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated scenario presets (default s6,s7).
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<String>>,
    /// Comma-separated methods: deepsurrogate, fosr.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
}

struct BenchRow {
    scenario: String,
    method: String,
    report: EvalReport,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let file = config::load(args.common.config.as_deref())?;
    let settings = config::resolve_bench(
        &file,
        args.scenarios.as_deref(),
        args.methods.as_deref(),
        args.common.seed,
    )?;
    args.common.ensure_out()?;

    // one task per scenario; each gets a pure child seed of the master
    let master = RngState::new(settings.seed);
    let per_scenario: Vec<Result<Vec<BenchRow>>> =
        parallel::map_indexed(settings.scenarios.len(), |i| {
            bench_scenario(&settings, i, master.child(i as u64).seed())
        });
    let mut rows = Vec::new();
    for r in per_scenario {
        rows.extend(r?);
    }

    let mut csv = String::from("scenario,method,rmspe,coverage,mean_length,misclass_rate,n_eval\n");
    let mut md = String::from(
        "| scenario | method | rmspe | coverage | mean length | misclass rate |\n\
         |---|---|---|---|---|---|\n",
    );
    for r in &rows {
        let e = &r.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scenario, r.method, e.rmspe, e.coverage, e.mean_length, e.misclass_rate, e.n_eval
        ));
        md.push_str(&format!(
            "| {} | {} | {:.4} | {:.3} | {:.4} | {:.4} |\n",
            r.scenario, r.method, e.rmspe, e.coverage, e.mean_length, e.misclass_rate
        ));
    }
    let out = &args.common.out;
    atomic_write(&out.join("table.csv"), csv.as_bytes())?;
    atomic_write(&out.join("table.md"), md.as_bytes())?;
    config::write_manifest(out, "bench", settings.seed, json!({ "bench": settings }))?;
    print!("{md}");
    Ok(())
}

/// Generate the scenario at desk scale and score each requested method on
/// the held-out simulations.
fn bench_scenario(settings: &BenchSettings, idx: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let name = &settings.scenarios[idx];
    let mut spec = datagen::preset(name)
        .ok_or_else(|| Error::Config(format!("unknown scenario preset `{name}`")))?;
    spec.n = settings.n;
    spec.h_train = settings.h_train;
    spec.h_test = settings.h_test;
    spec.seed = seed;
    spec.validate()?;
    let truth = datagen::generate(&spec)?;
    let dataset = &truth.dataset;
    let pairs = dataset.pairs_for(&dataset.test_sims);
    let batch = dataset.gather(&pairs);
    let y_true = &batch.y;

    let mut rows = Vec::with_capacity(settings.methods.len());
    for method in &settings.methods {
        let report = match method.as_str() {
            METHOD_DEEPSURROGATE => {
                let rng = RngState::new(seed);
                let model_cfg = dsur_core::model::ModelConfig::synthetic_default(
                    dataset.input_dim(),
                    dataset.covariate_dim(),
                );
                let train_cfg = training::TrainConfig {
                    epochs: settings.epochs,
                    ..Default::default()
                };
                let infer_cfg = inference::InferConfig {
                    draws: settings.draws,
                    ..Default::default()
                };
                let mut build_rng = rng.child(1);
                let mut train_rng = rng.child(2);
                let mut params = model::build(model_cfg, &mut build_rng)?;
                training::train(&mut params, dataset, &train_cfg, &mut train_rng)?;
                let draws =
                    inference::draw_posterior(&params, dataset, &infer_cfg, &rng.child(3))?;
                let summaries = inference::predict_summaries(
                    &params,
                    &draws,
                    &batch.s,
                    &batch.z,
                    &batch.x,
                    &infer_cfg,
                    &rng.child(4),
                )?;
                summaries_report(y_true, &summaries)?
            }
            METHOD_FOSR => {
                let fosr = baseline::fit_fosr(dataset, settings.m_s, settings.ridge)?;
                let summaries = baseline::predict_fosr(&fosr, &batch.s, &batch.z, &batch.x)?;
                summaries_report(y_true, &summaries)?
            }
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        };
        rows.push(BenchRow {
            scenario: name.clone(),
            method: method.clone(),
            report,
        });
    }
    Ok(rows)
}

fn summaries_report(
    y_true: &[f64],
    summaries: &[inference::PredictiveSummary],
) -> Result<EvalReport> {
    let mean: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    let lower: Vec<f64> = summaries.iter().map(|s| s.lower).collect();
    let upper: Vec<f64> = summaries.iter().map(|s| s.upper).collect();
    EvalReport::from_predictions(y_true, &mean, &lower, &upper, dsur_core::metrics::FLOOD_THRESHOLD)
}
