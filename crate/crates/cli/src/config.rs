//! Run configuration: TOML file, flag overrides, manifest echo.
//!
//! Precedence everywhere is built-in defaults < config file < command-line
//! flags. Every command writes `manifest.json` into its output directory with
//! the fully resolved settings, so a run is reproducible from its artifacts
//! alone. Unknown keys in the config file are rejected rather than ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dsur_core::data::atomic_write;
use dsur_core::datagen::{self, ScenarioSpec, TruthKind};
use dsur_core::error::{Error, Result};
use dsur_core::inference::{InferConfig, NoiseNormalizer};
use dsur_core::metrics::FLOOD_THRESHOLD;
use dsur_core::model::ModelConfig;
use dsur_core::training::{PenaltySpec, TrainConfig};

/// Master seed when neither a flag, the file, nor a preset supplies one.
pub const DEFAULT_SEED: u64 = 22;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub scenario: Option<ScenarioSection>,
    pub model: Option<ModelSection>,
    pub train: Option<TrainSection>,
    pub infer: Option<InferSection>,
    pub eval: Option<EvalSection>,
    pub bench: Option<BenchSection>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Preset name (s1..s7, gp1..gp4) to start from.
    pub preset: Option<String>,
    /// Truth family: "basis" or "gp".
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub h_train: Option<usize>,
    pub h_test: Option<usize>,
    pub alpha2_range: Option<(f64, f64)>,
    pub ell_range: Option<(f64, f64)>,
    pub noise_var: Option<f64>,
    pub rho: Option<f64>,
    pub beta0: Option<f64>,
    pub beta_range: Option<(f64, f64)>,
    pub k_true: Option<usize>,
    pub gp_cap: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// "synthetic" (small branches, linear head) or "field" (wide branches,
    /// softplus head).
    pub arch: Option<String>,
    /// Shared basis/coefficient dimension K; also resizes both branch output
    /// layers.
    pub k: Option<usize>,
    pub pin_multiply_weight: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub decay_steps: Option<f64>,
    pub decay_rate: Option<f64>,
    pub validation_fraction: Option<f64>,
    /// One fixed ridge strength for every branch layer, replacing the
    /// dropout-derived default.
    pub penalty_fixed: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    pub draws: Option<usize>,
    pub samples_per_draw: Option<usize>,
    pub level: Option<f64>,
    /// Residual-variance normalizer: "full" (RSS/N) or "half" (RSS/2N).
    pub noise_normalizer: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub scenarios: Option<Vec<String>>,
    pub methods: Option<Vec<String>>,
    pub n: Option<usize>,
    pub h_train: Option<usize>,
    pub h_test: Option<usize>,
    pub epochs: Option<usize>,
    pub draws: Option<usize>,
    pub ridge: Option<f64>,
    pub m_s: Option<usize>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
}

pub fn resolve_scenario(
    file: &FileConfig,
    preset_flag: Option<&str>,
    seed_flag: Option<u64>,
) -> Result<ScenarioSpec> {
    let section = file.scenario.clone().unwrap_or_default();
    let name = preset_flag
        .map(str::to_owned)
        .or_else(|| section.preset.clone());
    let mut spec = match &name {
        Some(n) => datagen::preset(n)
            .ok_or_else(|| Error::Config(format!("unknown scenario preset `{n}`")))?,
        None => datagen::base_spec("custom"),
    };
    if let Some(kind) = &section.kind {
        spec.kind = match kind.as_str() {
            "basis" => TruthKind::BasisTruth,
            "gp" => TruthKind::GpTruth,
            other => {
                return Err(Error::Config(format!(
                    "unknown truth kind `{other}` (expected `basis` or `gp`)"
                )))
            }
        };
    }
    if let Some(v) = section.n {
        spec.n = v;
    }
    if let Some(v) = section.h_train {
        spec.h_train = v;
    }
    if let Some(v) = section.h_test {
        spec.h_test = v;
    }
    if let Some(v) = section.alpha2_range {
        spec.alpha2_range = v;
    }
    if let Some(v) = section.ell_range {
        spec.ell_range = v;
    }
    if let Some(v) = section.noise_var {
        spec.noise_var = v;
    }
    if let Some(v) = section.rho {
        spec.rho = v;
    }
    if let Some(v) = section.beta0 {
        spec.beta0 = v;
    }
    if let Some(v) = section.beta_range {
        spec.beta_range = v;
    }
    if let Some(v) = section.k_true {
        spec.k_true = v;
    }
    if let Some(v) = section.gp_cap {
        spec.gp_cap = v;
    }
    if let Some(seed) = seed_flag.or(file.seed) {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

/// Resolved architecture name plus the model configuration it denotes.
pub fn resolve_model(
    file: &FileConfig,
    arch_flag: Option<&str>,
    input_dim: usize,
    covariate_dim: usize,
) -> Result<(String, ModelConfig)> {
    let section = file.model.clone().unwrap_or_default();
    let arch = arch_flag
        .map(str::to_owned)
        .or(section.arch)
        .unwrap_or_else(|| "synthetic".to_string());
    let mut cfg = match arch.as_str() {
        "synthetic" => ModelConfig::synthetic_default(input_dim, covariate_dim),
        "field" => ModelConfig::field_default(input_dim, covariate_dim),
        other => {
            return Err(Error::Config(format!(
                "unknown architecture `{other}` (expected `synthetic` or `field`)"
            )))
        }
    };
    if let Some(k) = section.k {
        cfg.k = k;
        *cfg.basis.widths.last_mut().expect("non-empty branch") = k;
        *cfg.coef.widths.last_mut().expect("non-empty branch") = k;
    }
    if let Some(pin) = section.pin_multiply_weight {
        cfg.head.pin_multiply_weight = pin;
    }
    cfg.validate()?;
    Ok((arch, cfg))
}

pub fn resolve_train(
    file: &FileConfig,
    arch: &str,
    epochs_flag: Option<usize>,
) -> Result<TrainConfig> {
    let section = file.train.clone().unwrap_or_default();
    let mut cfg = TrainConfig::default();
    if arch == "field" {
        // the wide architecture pairs with a faster decay schedule
        cfg.adam.decay_steps = 5_000.0;
        cfg.adam.decay_rate = 0.96;
    }
    if let Some(v) = section.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = section.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = section.base_lr {
        cfg.adam.base_lr = v;
    }
    if let Some(v) = section.decay_steps {
        cfg.adam.decay_steps = v;
    }
    if let Some(v) = section.decay_rate {
        cfg.adam.decay_rate = v;
    }
    if let Some(v) = section.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(v) = section.penalty_fixed {
        cfg.penalty = PenaltySpec::Fixed(v);
    }
    if let Some(v) = epochs_flag {
        cfg.epochs = v;
    }
    Ok(cfg)
}

pub fn resolve_infer(file: &FileConfig, draws_flag: Option<usize>) -> Result<InferConfig> {
    let section = file.infer.clone().unwrap_or_default();
    let mut cfg = InferConfig::default();
    if let Some(v) = section.draws {
        cfg.draws = v;
    }
    if let Some(v) = section.samples_per_draw {
        cfg.samples_per_draw = v;
    }
    if let Some(v) = section.level {
        cfg.level = v;
    }
    if let Some(norm) = &section.noise_normalizer {
        cfg.noise_normalizer = match norm.as_str() {
            "full" => NoiseNormalizer::Full,
            "half" => NoiseNormalizer::Half,
            other => {
                return Err(Error::Config(format!(
                    "unknown noise normalizer `{other}` (expected `full` or `half`)"
                )))
            }
        };
    }
    if let Some(v) = draws_flag {
        cfg.draws = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_threshold(file: &FileConfig, threshold_flag: Option<f64>) -> Result<f64> {
    let t = threshold_flag
        .or_else(|| file.eval.as_ref().and_then(|e| e.threshold))
        .unwrap_or(FLOOD_THRESHOLD);
    if !t.is_finite() {
        return Err(Error::Config(format!("threshold {t} must be finite")));
    }
    Ok(t)
}

/// Fully resolved benchmark sweep. Scenario presets are shrunk to the desk
/// sizes below so a sweep finishes in minutes; per-scenario seeds derive from
/// `seed`.
#[derive(Clone, Debug, Serialize)]
pub struct BenchSettings {
    pub scenarios: Vec<String>,
    pub methods: Vec<String>,
    pub n: usize,
    pub h_train: usize,
    pub h_test: usize,
    pub epochs: usize,
    pub draws: usize,
    pub ridge: f64,
    pub m_s: usize,
    pub seed: u64,
}

pub const METHOD_DEEPSURROGATE: &str = "deepsurrogate";
pub const METHOD_FOSR: &str = "fosr";

pub fn resolve_bench(
    file: &FileConfig,
    scenarios_flag: Option<&[String]>,
    methods_flag: Option<&[String]>,
    seed_flag: Option<u64>,
) -> Result<BenchSettings> {
    let section = file.bench.clone().unwrap_or_default();
    let scenarios = scenarios_flag
        .map(<[String]>::to_vec)
        .or(section.scenarios)
        .unwrap_or_else(|| vec!["s6".to_string(), "s7".to_string()]);
    let methods = methods_flag
        .map(<[String]>::to_vec)
        .or(section.methods)
        .unwrap_or_else(|| {
            vec![METHOD_DEEPSURROGATE.to_string(), METHOD_FOSR.to_string()]
        });
    if scenarios.is_empty() {
        return Err(Error::Config("bench scenario list is empty".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("bench method list is empty".into()));
    }
    for m in &methods {
        if m != METHOD_DEEPSURROGATE && m != METHOD_FOSR {
            return Err(Error::Config(format!(
                "unknown method `{m}` (expected `{METHOD_DEEPSURROGATE}` or `{METHOD_FOSR}`)"
            )));
        }
    }
    for s in &scenarios {
        if datagen::preset(s).is_none() {
            return Err(Error::Config(format!("unknown scenario preset `{s}`")));
        }
    }
    Ok(BenchSettings {
        scenarios,
        methods,
        n: section.n.unwrap_or(300),
        h_train: section.h_train.unwrap_or(10),
        h_test: section.h_test.unwrap_or(10),
        epochs: section.epochs.unwrap_or(150),
        draws: section.draws.unwrap_or(200),
        ridge: section.ridge.unwrap_or(1e-4),
        m_s: section.m_s.unwrap_or(8),
        seed: seed_flag.or(file.seed).unwrap_or(DEFAULT_SEED),
    })
}

/// Echo the resolved configuration next to the run's artifacts.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
) -> Result<()> {
    let doc = serde_json::json!({
        "command": command,
        "seed": seed,
        "config": config,
    });
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Format(format!("cannot serialize manifest: {e}")))?;
    text.push('\n');
    atomic_write(&dir.join("manifest.json"), text.as_bytes())
}
