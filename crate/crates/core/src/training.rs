//! Penalized mini-batch training.
//!
//! The per-batch objective for a batch of B (site, simulation) pairs is
//!
//! ```text
//! (1 / 2B) sum_b (y_b - yhat_b)^2  +  sum_l lambda_l (|W_l|^2 + |b_l|^2)
//! ```
//!
//! where the ridge penalty runs over the branch layers only — the head and
//! the multiply weight are never penalized — and the norms are taken over the
//! entries kept by the current dropout mask, so a masked entry gets neither a
//! data gradient nor a penalty gradient. The default penalty ties each layer
//! to its dropout rate, `lambda_l = rate_l / (2 N)` with `N` the number of
//! training pairs, so the final (rate-0) branch layers are unpenalized.
//!
//! Every batch draws fresh masks. Optimization is Adam on the canonical flat
//! parameter vector with continuous learning-rate decay; the multiply weight
//! rides along as the last flat entry unless pinned, in which case its
//! gradient is zero and it never moves.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{atomic_write, Dataset};
use crate::error::{Error, Result};
use crate::model::{
    self, ModelConfig, SurrogateMask, SurrogateParams,
};
use crate::nn::{self, AdamConfig, AdamState, LayerGrads};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// How branch-layer ridge strengths are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PenaltySpec {
    /// `lambda_l = dropout_rate_l / (2 * n_train_pairs)`.
    DropoutDerived,
    /// One shared strength for every branch layer.
    Fixed(f64),
    /// Explicit per-layer strengths, one per basis and coefficient layer.
    PerLayer { basis: Vec<f64>, coef: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub penalty: PenaltySpec,
    /// Fraction of training pairs held out for loss monitoring only (no
    /// early stopping). Zero disables the holdout.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 128,
            adam: AdamConfig::default(),
            penalty: PenaltySpec::DropoutDerived,
            validation_fraction: 0.0,
        }
    }
}

/// Per-branch ridge strengths, `basis[l]` / `coef[l]` pairing with the
/// branch layer stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPenalties {
    pub basis: Vec<f64>,
    pub coef: Vec<f64>,
}

pub fn resolve_penalties(
    config: &ModelConfig,
    n_train_pairs: usize,
    spec: &PenaltySpec,
) -> Result<ResolvedPenalties> {
    let derived = |branch: &crate::model::BranchConfig| -> Vec<f64> {
        branch
            .layer_rates()
            .iter()
            .map(|r| r / (2.0 * n_train_pairs as f64))
            .collect()
    };
    match spec {
        PenaltySpec::DropoutDerived => {
            if n_train_pairs == 0 {
                return Err(Error::Config("no training pairs to derive penalties".into()));
            }
            Ok(ResolvedPenalties {
                basis: derived(&config.basis),
                coef: derived(&config.coef),
            })
        }
        PenaltySpec::Fixed(lambda) => {
            if !lambda.is_finite() || *lambda < 0.0 {
                return Err(Error::Config(format!("penalty {lambda} must be >= 0")));
            }
            Ok(ResolvedPenalties {
                basis: vec![*lambda; config.basis.widths.len()],
                coef: vec![*lambda; config.coef.widths.len()],
            })
        }
        PenaltySpec::PerLayer { basis, coef } => {
            if basis.len() != config.basis.widths.len() || coef.len() != config.coef.widths.len() {
                return Err(Error::Config(format!(
                    "per-layer penalties: got {}/{} values for {}/{} layers",
                    basis.len(),
                    coef.len(),
                    config.basis.widths.len(),
                    config.coef.widths.len()
                )));
            }
            if basis.iter().chain(coef).any(|l| !l.is_finite() || *l < 0.0) {
                return Err(Error::Config("per-layer penalties must be >= 0".into()));
            }
            Ok(ResolvedPenalties {
                basis: basis.clone(),
                coef: coef.clone(),
            })
        }
    }
}

/// Mean squared residual over a batch, halved: `(1/2B) sum (y - yhat)^2`.
pub fn data_loss(preds: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(preds.len(), ys.len());
    let b = preds.len() as f64;
    let ss: f64 = preds.iter().zip(ys).map(|(p, y)| (p - y) * (p - y)).sum();
    ss / (2.0 * b)
}

fn masked_sq_norm(w: &Tensor, b: &[f64], mask: Option<(&Tensor, &[f64])>) -> f64 {
    match mask {
        None => {
            w.data().iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>()
        }
        Some((mw, mb)) => {
            w.data()
                .iter()
                .zip(mw.data())
                .map(|(v, m)| v * v * m)
                .sum::<f64>()
                + b.iter().zip(mb).map(|(v, m)| v * v * m).sum::<f64>()
        }
    }
}

/// Ridge penalty over both branch stacks, on the entries the mask keeps.
pub fn penalty_value(
    params: &SurrogateParams,
    penalties: &ResolvedPenalties,
    mask: Option<&SurrogateMask>,
) -> f64 {
    let mut total = 0.0;
    for (l, layer) in params.basis.iter().enumerate() {
        if penalties.basis[l] == 0.0 {
            continue;
        }
        let m = mask.map(|m| (&m.basis[l].weights, m.basis[l].bias.as_slice()));
        total += penalties.basis[l] * masked_sq_norm(&layer.weights, &layer.bias, m);
    }
    for (l, layer) in params.coef.iter().enumerate() {
        if penalties.coef[l] == 0.0 {
            continue;
        }
        let m = mask.map(|m| (&m.coef[l].weights, m.coef[l].bias.as_slice()));
        total += penalties.coef[l] * masked_sq_norm(&layer.weights, &layer.bias, m);
    }
    total
}

fn add_penalty_grads_stack(
    layers: &[crate::nn::DenseLayer],
    lambdas: &[f64],
    masks: Option<&[crate::nn::LayerMask]>,
    grads: &mut [LayerGrads],
) {
    for (l, layer) in layers.iter().enumerate() {
        let lambda = lambdas[l];
        if lambda == 0.0 {
            continue;
        }
        let g = &mut grads[l];
        match masks.map(|m| &m[l]) {
            None => {
                for (gv, wv) in g.weights.data_mut().iter_mut().zip(layer.weights.data()) {
                    *gv += 2.0 * lambda * wv;
                }
                for (gv, bv) in g.bias.iter_mut().zip(&layer.bias) {
                    *gv += 2.0 * lambda * bv;
                }
            }
            Some(m) => {
                for ((gv, wv), mv) in g
                    .weights
                    .data_mut()
                    .iter_mut()
                    .zip(layer.weights.data())
                    .zip(m.weights.data())
                {
                    *gv += 2.0 * lambda * wv * mv;
                }
                for ((gv, bv), mv) in g.bias.iter_mut().zip(&layer.bias).zip(&m.bias) {
                    *gv += 2.0 * lambda * bv * mv;
                }
            }
        }
    }
}

/// Add `2 lambda_l W_l` (masked) to the branch gradients in place.
pub fn add_penalty_grads(
    params: &SurrogateParams,
    penalties: &ResolvedPenalties,
    mask: Option<&SurrogateMask>,
    grads: &mut model::SurrogateGrads,
) {
    add_penalty_grads_stack(
        &params.basis,
        &penalties.basis,
        mask.map(|m| m.basis.as_slice()),
        &mut grads.basis,
    );
    add_penalty_grads_stack(
        &params.coef,
        &penalties.coef,
        mask.map(|m| m.coef.as_slice()),
        &mut grads.coef,
    );
}

/// The visiting order of training pairs for one epoch: a seeded shuffle that
/// depends only on the base seed and the epoch index.
pub fn epoch_order(
    pairs: &[(usize, usize)],
    shuffle_base: &RngState,
    epoch: usize,
) -> Vec<(usize, usize)> {
    let mut order = pairs.to_vec();
    shuffle_base.child(epoch as u64).shuffle(&mut order);
    order
}

/// One log row per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    /// Completed optimizer updates at the end of the epoch.
    pub step: u64,
    /// Learning rate scheduled for the next update.
    pub lr: f64,
    /// Mean per-batch penalized loss over the epoch.
    pub train_loss: f64,
    /// Unpenalized loss on the holdout pairs, evaluated without dropout.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

pub fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut out = String::from("epoch,step,lr,train_loss,val_loss\n");
    for r in &log.rows {
        let _ = write!(out, "{},{},{},{}", r.epoch, r.step, r.lr, r.train_loss);
        match r.val_loss {
            Some(v) => {
                let _ = writeln!(out, ",{v}");
            }
            None => out.push_str(",\n"),
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Fit the surrogate on the training split of `data`.
///
/// Fits the standardizer on training sites and inputs, then runs
/// `cfg.epochs` passes of shuffled mini-batches, drawing a fresh dropout
/// mask per batch. Deterministic given (`params`, `data`, `cfg`, the seed
/// inside `rng`). Divergence (non-finite loss or parameter) aborts with a
/// numeric error naming the epoch.
pub fn train(
    params: &mut SurrogateParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainingLog> {
    data.validate()?;
    params.config.validate()?;
    if data.input_dim() != params.config.input_dim {
        return Err(Error::Config(format!(
            "model expects input_dim {}, data has {}",
            params.config.input_dim,
            data.input_dim()
        )));
    }
    if data.covariate_dim() != params.config.covariate_dim {
        return Err(Error::Config(format!(
            "model expects covariate_dim {}, data has {}",
            params.config.covariate_dim,
            data.covariate_dim()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    if !(0.0..=0.5).contains(&cfg.validation_fraction) {
        return Err(Error::Config(format!(
            "validation_fraction {} outside [0, 0.5]",
            cfg.validation_fraction
        )));
    }
    if data.train_sims.is_empty() {
        return Err(Error::Config("dataset has no training simulations".into()));
    }

    // Standardization constants come from the training portion only.
    let train_inputs = {
        let mut t = Tensor::zeros(vec![data.train_sims.len(), data.input_dim()]);
        for (r, &h) in data.train_sims.iter().enumerate() {
            t.row_mut(r).copy_from_slice(data.inputs.row(h));
        }
        t
    };
    params.standardizer = model::Standardizer::fit(&data.sites, &train_inputs);

    let mut pairs = data.pairs_for(&data.train_sims);
    let mut split_rng = rng.child(0);
    let mut mask_rng = rng.child(1);
    let shuffle_base = rng.child(2);

    let val_pairs: Vec<(usize, usize)> = if cfg.validation_fraction > 0.0 {
        split_rng.shuffle(&mut pairs);
        let n_val = ((pairs.len() as f64) * cfg.validation_fraction).ceil() as usize;
        if n_val == pairs.len() {
            return Err(Error::Config(
                "validation holdout would consume every training pair".into(),
            ));
        }
        pairs.split_off(pairs.len() - n_val)
    } else {
        Vec::new()
    };
    let fit_pairs = pairs;
    let penalties = resolve_penalties(&params.config, fit_pairs.len(), &cfg.penalty)?;

    let val_batch = (!val_pairs.is_empty()).then(|| data.gather(&val_pairs));

    let mut flat = Vec::new();
    model::collect_params(params, &mut flat);
    let mut state = AdamState::new(flat.len());
    let mut flat_grads = Vec::with_capacity(flat.len());
    let mut log = TrainingLog::default();

    for epoch in 0..cfg.epochs {
        let order = epoch_order(&fit_pairs, &shuffle_base, epoch);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.gather(chunk);
            let mask = model::sample_surrogate_mask(params, &mut mask_rng);
            let (preds, cache) =
                model::predict_with_cache(params, &batch.s, &batch.z, &batch.x, Some(&mask));
            let b = chunk.len() as f64;
            let upstream: Vec<f64> = preds
                .iter()
                .zip(&batch.y)
                .map(|(p, y)| (p - y) / b)
                .collect();
            let batch_loss = data_loss(&preds, &batch.y)
                + penalty_value(params, &penalties, Some(&mask));
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch} (loss {batch_loss})"
                )));
            }
            let mut grads = model::backward(params, &cache, Some(&mask), &upstream);
            add_penalty_grads(params, &penalties, Some(&mask), &mut grads);

            model::collect_params(params, &mut flat);
            model::collect_grads(&grads, &mut flat_grads);
            nn::adam_step(&mut state, &cfg.adam, &mut flat, &flat_grads);
            model::scatter_params(params, &flat);

            epoch_loss += batch_loss;
            n_batches += 1;
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch} (non-finite parameter)"
            )));
        }
        let val_loss = val_batch.as_ref().map(|vb| {
            let preds = model::predict_mean(params, &vb.s, &vb.z, &vb.x, None);
            data_loss(&preds, &vb.y)
        });
        log.rows.push(LogRow {
            epoch,
            step: state.step,
            lr: nn::lr_at(&cfg.adam, state.step),
            train_loss: epoch_loss / n_batches as f64,
            val_loss,
        });
    }
    Ok(log)
}
