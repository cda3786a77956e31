//! Predictive uncertainty from dropout.
//!
//! Each posterior draw `f` is a fresh dropout mask together with a noise
//! variance estimated under that mask on the training pairs:
//!
//! ```text
//! delta2(f) = sum_{i,h} (y_ih - yhat_ih(f))^2 / (c * N)
//! ```
//!
//! with `N` the number of training pairs and `c` = 1 (the default) or 2.
//! The halved variant mirrors the halved training loss but estimates only
//! half the residual variance when the fit is tight, which measurably
//! under-covers; `Full` is calibrated and is the default. The estimate is
//! floored at 1e-8 so a perfect fit still yields a proper sampling
//! distribution.
//!
//! Predictive samples compose the two uncertainty sources: for a new pair,
//! each draw contributes `samples_per_draw` values
//! `yhat(f) + sqrt(delta2(f)) * eps`. Summaries are the sample mean, the
//! (n-1)-normalized standard deviation, and central type-7 quantiles.
//!
//! Draw `f` derives everything from `rng.child(f)`, so results are
//! independent of evaluation order and of the worker count.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, SurrogateMask, SurrogateParams};
use crate::parallel;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Lower bound for the per-draw noise variance.
pub const NOISE_FLOOR: f64 = 1e-8;

/// Normalizer `c` in `delta2 = RSS / (c * N)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseNormalizer {
    Half,
    Full,
}

impl NoiseNormalizer {
    fn divisor(self, n_pairs: usize) -> f64 {
        match self {
            NoiseNormalizer::Half => 2.0 * n_pairs as f64,
            NoiseNormalizer::Full => n_pairs as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    /// Number of posterior draws F.
    pub draws: usize,
    pub noise_normalizer: NoiseNormalizer,
    /// Noise replicates per draw.
    pub samples_per_draw: usize,
    /// Central interval mass, e.g. 0.95.
    pub level: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            draws: 500,
            noise_normalizer: NoiseNormalizer::Full,
            samples_per_draw: 1,
            level: 0.95,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("draws must be at least 1".into()));
        }
        if self.samples_per_draw == 0 {
            return Err(Error::Config("samples_per_draw must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "interval level {} outside (0, 1)",
                self.level
            )));
        }
        Ok(())
    }
}

/// One dropout realization of the network plus its noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraw {
    pub mask: SurrogateMask,
    pub noise_var: f64,
}

/// Sample `cfg.draws` posterior draws, estimating each draw's noise variance
/// on the training pairs of `data`.
pub fn draw_posterior(
    params: &SurrogateParams,
    data: &Dataset,
    cfg: &InferConfig,
    rng: &RngState,
) -> Result<Vec<PosteriorDraw>> {
    cfg.validate()?;
    data.validate()?;
    let pairs = data.pairs_for(&data.train_sims);
    if pairs.is_empty() {
        return Err(Error::Config(
            "noise estimation needs at least one training pair".into(),
        ));
    }
    let train = data.gather(&pairs);
    let divisor = cfg.noise_normalizer.divisor(pairs.len());
    let draws = parallel::map_indexed(cfg.draws, |f| {
        let mut child = rng.child(f as u64);
        let mask = model::sample_surrogate_mask(params, &mut child);
        let preds = model::predict_mean(params, &train.s, &train.z, &train.x, Some(&mask));
        let rss: f64 = preds
            .iter()
            .zip(&train.y)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        let noise_var = (rss / divisor).max(NOISE_FLOOR);
        PosteriorDraw { mask, noise_var }
    });
    for d in &draws {
        if !d.noise_var.is_finite() {
            return Err(Error::Numeric("non-finite noise variance".into()));
        }
    }
    Ok(draws)
}

/// Predictive samples for each (row of `s`, `z`, `x`) pair: a
/// `[batch, draws * samples_per_draw]` matrix whose column block
/// `f*samples_per_draw ..` comes from draw `f`.
pub fn predictive_samples(
    params: &SurrogateParams,
    draws: &[PosteriorDraw],
    s: &Tensor,
    z: &Tensor,
    x: &Tensor,
    samples_per_draw: usize,
    rng: &RngState,
) -> Result<Tensor> {
    if draws.is_empty() {
        return Err(Error::Config("no posterior draws supplied".into()));
    }
    if samples_per_draw == 0 {
        return Err(Error::Config("samples_per_draw must be at least 1".into()));
    }
    let b = s.rows();
    let cols = draws.len() * samples_per_draw;
    let per_draw: Vec<Vec<f64>> = parallel::map_indexed(draws.len(), |f| {
        let mut child = rng.child(f as u64);
        let draw = &draws[f];
        let preds = model::predict_mean(params, s, z, x, Some(&draw.mask));
        let sd = draw.noise_var.sqrt();
        let mut block = Vec::with_capacity(b * samples_per_draw);
        for &p in &preds {
            for _ in 0..samples_per_draw {
                block.push(p + sd * child.normal());
            }
        }
        block
    });
    let mut out = Tensor::zeros(vec![b, cols]);
    for (f, block) in per_draw.iter().enumerate() {
        for row in 0..b {
            let dst = &mut out.row_mut(row)[f * samples_per_draw..(f + 1) * samples_per_draw];
            dst.copy_from_slice(&block[row * samples_per_draw..(row + 1) * samples_per_draw]);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Type-7 (linear interpolation of order statistics) quantile of an ascending
/// slice, the convention used throughout.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level {p}");
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, standard deviation, and central `level` interval of one sample set.
pub fn summarize(samples: &[f64], level: f64) -> Result<PredictiveSummary> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "cannot summarize {} predictive sample(s)",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level {level} outside (0, 1)")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let tail = (1.0 - level) / 2.0;
    Ok(PredictiveSummary {
        mean,
        sd,
        lower: quantile_type7(&sorted, tail),
        upper: quantile_type7(&sorted, 1.0 - tail),
    })
}

/// Draw predictive samples for every row and summarize them.
pub fn predict_summaries(
    params: &SurrogateParams,
    draws: &[PosteriorDraw],
    s: &Tensor,
    z: &Tensor,
    x: &Tensor,
    cfg: &InferConfig,
    rng: &RngState,
) -> Result<Vec<PredictiveSummary>> {
    cfg.validate()?;
    let samples = predictive_samples(params, draws, s, z, x, cfg.samples_per_draw, rng)?;
    (0..samples.rows())
        .map(|r| summarize(samples.row(r), cfg.level))
        .collect()
}
