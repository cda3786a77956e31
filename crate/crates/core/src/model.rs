//! The two-branch surrogate.
//!
//! `predict(s, z, x) = head([ w_m * coef(s)' basis(z), x ])`: a basis branch
//! maps simulation inputs `z` to `K` values, a coefficient branch maps the
//! spatial site `s` to `K` values, a multiply layer takes their inner product
//! (scaled by a single learnable weight `w_m`), and a dense head maps the
//! product concatenated with the site covariates `x` to the response. With a
//! linear head and `w_m = 1`, the model contains
//! `beta0 + x'beta + coef(s)' basis(z)` exactly.
//!
//! Site coordinates and simulation inputs are standardized with constants
//! fitted on training data and stored with the parameters; covariates and
//! responses pass through untouched. Dropout masks (see [`crate::nn`]) apply
//! to branch parameters only — the head and multiply weight are never masked.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::atomic_write;
use crate::error::{Error, Result};
use crate::nn::{
    self, ActivationKind, DenseLayer, ForwardCache, LayerGrads, LayerMask,
};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Sites live in the plane.
pub const SPATIAL_DIM: usize = 2;

/// Magic first line of a saved model file.
pub const MODEL_MAGIC: &str = "DSUR1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    /// Output width of each layer; the last entry is the branch dimension K.
    pub widths: Vec<usize>,
    pub activations: Vec<ActivationKind>,
    /// Dropout rate attached to every hidden (non-final) layer's parameters.
    pub dropout: f64,
}

impl BranchConfig {
    /// Per-layer dropout rates: hidden layers carry the configured rate, the
    /// final layer none.
    pub fn layer_rates(&self) -> Vec<f64> {
        let l = self.widths.len();
        (0..l)
            .map(|i| if i + 1 == l { 0.0 } else { self.dropout })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub activation: ActivationKind,
    /// Freeze the multiply-layer weight at 1 instead of training it.
    pub pin_multiply_weight: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Simulation-input dimension p.
    pub input_dim: usize,
    /// Site-covariate dimension q.
    pub covariate_dim: usize,
    /// Shared branch output dimension K.
    pub k: usize,
    pub basis: BranchConfig,
    pub coef: BranchConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Compact architecture used for synthetic scenarios: basis 32-16-8,
    /// coefficients 64-32-16-8, ReLU hidden layers with dropout 0.1, linear
    /// ends, linear head.
    pub fn synthetic_default(input_dim: usize, covariate_dim: usize) -> ModelConfig {
        use ActivationKind::*;
        ModelConfig {
            input_dim,
            covariate_dim,
            k: 8,
            basis: BranchConfig {
                widths: vec![32, 16, 8],
                activations: vec![Relu, Relu, Linear],
                dropout: 0.1,
            },
            coef: BranchConfig {
                widths: vec![64, 32, 16, 8],
                activations: vec![Relu, Relu, Relu, Linear],
                dropout: 0.1,
            },
            head: HeadConfig {
                activation: Linear,
                pin_multiply_weight: false,
            },
        }
    }

    /// Wider architecture for observed fields: both branches 128-64-32-16-8
    /// with dropout 0.1, SoftPlus head for positive-valued responses.
    pub fn field_default(input_dim: usize, covariate_dim: usize) -> ModelConfig {
        use ActivationKind::*;
        let branch = BranchConfig {
            widths: vec![128, 64, 32, 16, 8],
            activations: vec![Relu, Relu, Relu, Relu, Linear],
            dropout: 0.1,
        };
        ModelConfig {
            input_dim,
            covariate_dim,
            k: 8,
            basis: branch.clone(),
            coef: branch,
            head: HeadConfig {
                activation: SoftPlus,
                pin_multiply_weight: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("branch dimension k must be positive".into()));
        }
        for (name, branch) in [("basis", &self.basis), ("coef", &self.coef)] {
            if branch.widths.is_empty() {
                return Err(Error::Config(format!("{name} branch has no layers")));
            }
            if branch.widths.len() != branch.activations.len() {
                return Err(Error::Config(format!(
                    "{name} branch: {} widths but {} activations",
                    branch.widths.len(),
                    branch.activations.len()
                )));
            }
            if *branch.widths.last().unwrap() != self.k {
                return Err(Error::Config(format!(
                    "{name} branch must end at k={}, ends at {}",
                    self.k,
                    branch.widths.last().unwrap()
                )));
            }
            if branch.widths.contains(&0) {
                return Err(Error::Config(format!("{name} branch has a zero width")));
            }
            if !(0.0..1.0).contains(&branch.dropout) {
                return Err(Error::Config(format!(
                    "{name} branch dropout {} outside [0, 1)",
                    branch.dropout
                )));
            }
        }
        Ok(())
    }
}

/// Per-dimension affine standardization fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub s_mean: [f64; SPATIAL_DIM],
    pub s_sd: [f64; SPATIAL_DIM],
    pub z_mean: Vec<f64>,
    pub z_sd: Vec<f64>,
}

impl Standardizer {
    pub fn identity(input_dim: usize) -> Standardizer {
        Standardizer {
            s_mean: [0.0; SPATIAL_DIM],
            s_sd: [1.0; SPATIAL_DIM],
            z_mean: vec![0.0; input_dim],
            z_sd: vec![1.0; input_dim],
        }
    }

    /// Column means and standard deviations of the training sites and inputs.
    /// Degenerate (constant) columns keep sd 1 so they pass through shifted
    /// but unscaled.
    pub fn fit(sites: &Tensor, inputs: &Tensor) -> Standardizer {
        fn column_stats(t: &Tensor, j: usize) -> (f64, f64) {
            let n = t.rows();
            let mut mean = 0.0;
            for i in 0..n {
                mean += t.at(i, j);
            }
            mean /= n as f64;
            let mut ss = 0.0;
            for i in 0..n {
                let d = t.at(i, j) - mean;
                ss += d * d;
            }
            let sd = if n > 1 { (ss / (n as f64 - 1.0)).sqrt() } else { 0.0 };
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        }
        let mut s_mean = [0.0; SPATIAL_DIM];
        let mut s_sd = [1.0; SPATIAL_DIM];
        for j in 0..SPATIAL_DIM {
            let (m, sd) = column_stats(sites, j);
            s_mean[j] = m;
            s_sd[j] = sd;
        }
        let p = inputs.cols();
        let mut z_mean = vec![0.0; p];
        let mut z_sd = vec![1.0; p];
        for j in 0..p {
            let (m, sd) = column_stats(inputs, j);
            z_mean[j] = m;
            z_sd[j] = sd;
        }
        Standardizer {
            s_mean,
            s_sd,
            z_mean,
            z_sd,
        }
    }

    pub fn apply_sites(&self, s: &Tensor) -> Tensor {
        let mut out = s.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for j in 0..SPATIAL_DIM {
                row[j] = (row[j] - self.s_mean[j]) / self.s_sd[j];
            }
        }
        out
    }

    pub fn apply_inputs(&self, z: &Tensor) -> Tensor {
        let mut out = z.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.z_mean[j]) / self.z_sd[j];
            }
        }
        out
    }
}

/// Fitted (or freshly initialized) surrogate parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub config: ModelConfig,
    pub basis: Vec<DenseLayer>,
    pub coef: Vec<DenseLayer>,
    /// Dense head over `[w_m * coef's basis, x1..xq]`.
    pub head: DenseLayer,
    pub multiply_weight: f64,
    pub standardizer: Standardizer,
}

/// Dropout masks for both branches (the head is never masked).
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateMask {
    pub basis: Vec<LayerMask>,
    pub coef: Vec<LayerMask>,
}

/// Initialize a surrogate: Glorot-uniform weights, zero biases, multiply
/// weight 1, identity standardizer.
pub fn build(config: ModelConfig, rng: &mut RngState) -> Result<SurrogateParams> {
    config.validate()?;
    let make_stack = |in_dim: usize, branch: &BranchConfig, rng: &mut RngState| {
        let mut layers = Vec::with_capacity(branch.widths.len());
        let mut fan_in = in_dim;
        for (w, act) in branch.widths.iter().zip(&branch.activations) {
            layers.push(DenseLayer::glorot(fan_in, *w, *act, rng));
            fan_in = *w;
        }
        layers
    };
    let basis = make_stack(config.input_dim, &config.basis, rng);
    let coef = make_stack(SPATIAL_DIM, &config.coef, rng);
    let head = DenseLayer::glorot(1 + config.covariate_dim, 1, config.head.activation, rng);
    let standardizer = Standardizer::identity(config.input_dim);
    Ok(SurrogateParams {
        config,
        basis,
        coef,
        head,
        multiply_weight: 1.0,
        standardizer,
    })
}

/// Sample branch dropout masks at the configured per-layer rates.
pub fn sample_surrogate_mask(params: &SurrogateParams, rng: &mut RngState) -> SurrogateMask {
    let basis = nn::sample_mask(&params.basis, &params.config.basis.layer_rates(), rng)
        .expect("validated rates");
    let coef = nn::sample_mask(&params.coef, &params.config.coef.layer_rates(), rng)
        .expect("validated rates");
    SurrogateMask { basis, coef }
}

/// Basis-branch output `B(z)`, `[batch, K]`. Inputs are raw (unstandardized).
pub fn basis_forward(
    params: &SurrogateParams,
    z: &Tensor,
    mask: Option<&SurrogateMask>,
) -> Tensor {
    let zs = params.standardizer.apply_inputs(z);
    let (out, _) = nn::forward(&params.basis, &zs, mask.map(|m| m.basis.as_slice()));
    out
}

/// Coefficient-branch output `eta(s)`, `[batch, K]`.
pub fn coef_forward(
    params: &SurrogateParams,
    s: &Tensor,
    mask: Option<&SurrogateMask>,
) -> Tensor {
    let ss = params.standardizer.apply_sites(s);
    let (out, _) = nn::forward(&params.coef, &ss, mask.map(|m| m.coef.as_slice()));
    out
}

/// Everything the backward pass needs from a forward evaluation.
pub struct PredictCache {
    pub basis_out: Tensor,
    pub coef_out: Tensor,
    pub basis_cache: ForwardCache,
    pub coef_cache: ForwardCache,
    /// Unscaled multiply products `coef(s_b)' basis(z_b)` per row.
    pub products: Vec<f64>,
    pub head_cache: ForwardCache,
}

/// Forward pass retaining intermediates; returns one prediction per row.
pub fn predict_with_cache(
    params: &SurrogateParams,
    s: &Tensor,
    z: &Tensor,
    x: &Tensor,
    mask: Option<&SurrogateMask>,
) -> (Vec<f64>, PredictCache) {
    let batch = s.rows();
    assert_eq!(z.rows(), batch, "row counts of s and z");
    assert_eq!(x.rows(), batch, "row counts of s and x");
    assert_eq!(
        x.cols(),
        params.config.covariate_dim,
        "covariate dimension"
    );

    let zs = params.standardizer.apply_inputs(z);
    let ss = params.standardizer.apply_sites(s);
    let (basis_out, basis_cache) =
        nn::forward(&params.basis, &zs, mask.map(|m| m.basis.as_slice()));
    let (coef_out, coef_cache) = nn::forward(&params.coef, &ss, mask.map(|m| m.coef.as_slice()));

    let k = params.config.k;
    let mut products = Vec::with_capacity(batch);
    let mut head_in = Tensor::zeros(vec![batch, 1 + params.config.covariate_dim]);
    for b in 0..batch {
        let prod = crate::tensor::dot(&basis_out.row(b)[..k], &coef_out.row(b)[..k]);
        products.push(prod);
        let row = head_in.row_mut(b);
        row[0] = params.multiply_weight * prod;
        row[1..].copy_from_slice(x.row(b));
    }
    let (head_out, head_cache) = nn::forward(std::slice::from_ref(&params.head), &head_in, None);
    let preds = (0..batch).map(|b| head_out.at(b, 0)).collect();
    (preds, PredictCache {
        basis_out,
        coef_out,
        basis_cache,
        coef_cache,
        products,
        head_cache,
    })
}

/// Point predictions (posterior-mean network when `mask` is `None`).
pub fn predict_mean(
    params: &SurrogateParams,
    s: &Tensor,
    z: &Tensor,
    x: &Tensor,
    mask: Option<&SurrogateMask>,
) -> Vec<f64> {
    predict_with_cache(params, s, z, x, mask).0
}

/// Gradients for every parameter group.
pub struct SurrogateGrads {
    pub basis: Vec<LayerGrads>,
    pub coef: Vec<LayerGrads>,
    pub head: LayerGrads,
    pub multiply_weight: f64,
}

/// Reverse-mode pass from dLoss/dPrediction. Masked entries receive zero
/// gradient; the pinned multiply weight receives zero gradient.
pub fn backward(
    params: &SurrogateParams,
    cache: &PredictCache,
    mask: Option<&SurrogateMask>,
    upstream: &[f64],
) -> SurrogateGrads {
    let batch = upstream.len();
    let k = params.config.k;
    let up = Tensor::new(vec![batch, 1], upstream.to_vec()).expect("upstream shape");
    let (mut head_grads, d_head_in) = nn::backward(
        std::slice::from_ref(&params.head),
        &cache.head_cache,
        None,
        &up,
    );

    let mut d_multiply = 0.0;
    let mut d_basis = Tensor::zeros(vec![batch, k]);
    let mut d_coef = Tensor::zeros(vec![batch, k]);
    for b in 0..batch {
        let dm = d_head_in.at(b, 0);
        d_multiply += dm * cache.products[b];
        let d_prod = dm * params.multiply_weight;
        if d_prod != 0.0 {
            crate::tensor::axpy(d_prod, &cache.coef_out.row(b)[..k], d_basis.row_mut(b));
            crate::tensor::axpy(d_prod, &cache.basis_out.row(b)[..k], d_coef.row_mut(b));
        }
    }
    if params.config.head.pin_multiply_weight {
        d_multiply = 0.0;
    }

    let (basis_grads, _) = nn::backward(
        &params.basis,
        &cache.basis_cache,
        mask.map(|m| m.basis.as_slice()),
        &d_basis,
    );
    let (coef_grads, _) = nn::backward(
        &params.coef,
        &cache.coef_cache,
        mask.map(|m| m.coef.as_slice()),
        &d_coef,
    );

    SurrogateGrads {
        basis: basis_grads,
        coef: coef_grads,
        head: head_grads.pop().expect("single head layer"),
        multiply_weight: d_multiply,
    }
}

/// Total scalar parameter count (branches, head, multiply weight).
pub fn param_count(params: &SurrogateParams) -> usize {
    nn::param_count(&params.basis)
        + nn::param_count(&params.coef)
        + nn::param_count(std::slice::from_ref(&params.head))
        + 1
}

/// Canonical flattening order: basis stack, coef stack, head, multiply weight.
pub fn collect_params(params: &SurrogateParams, out: &mut Vec<f64>) {
    out.clear();
    nn::collect_params(&params.basis, out);
    nn::collect_params(&params.coef, out);
    nn::collect_params(std::slice::from_ref(&params.head), out);
    out.push(params.multiply_weight);
}

pub fn scatter_params(params: &mut SurrogateParams, src: &[f64]) {
    let mut pos = nn::scatter_params(&mut params.basis, src);
    pos += nn::scatter_params(&mut params.coef, &src[pos..]);
    pos += nn::scatter_params(std::slice::from_mut(&mut params.head), &src[pos..]);
    params.multiply_weight = src[pos];
    assert_eq!(pos + 1, src.len(), "flat parameter length");
}

pub fn collect_grads(grads: &SurrogateGrads, out: &mut Vec<f64>) {
    out.clear();
    nn::collect_grads(&grads.basis, out);
    nn::collect_grads(&grads.coef, out);
    nn::collect_grads(std::slice::from_ref(&grads.head), out);
    out.push(grads.multiply_weight);
}

/// Save parameters: a `DSUR1` magic line followed by a JSON document. The
/// write is atomic and floats round-trip exactly.
pub fn save(params: &SurrogateParams, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MODEL_MAGIC.as_bytes());
    bytes.push(b'\n');
    serde_json::to_writer(&mut bytes, params)
        .map_err(|e| Error::Format(format!("cannot serialize model: {e}")))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Load and validate a saved model.
pub fn load(path: &Path) -> Result<SurrogateParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read model {}: {e}", path.display())))?;
    let (magic, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Format("model file has no header line".into()))?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "unsupported model version {magic:?} (expected {MODEL_MAGIC})"
        )));
    }
    let params: SurrogateParams = serde_json::from_str(body)
        .map_err(|e| Error::Format(format!("cannot parse model payload: {e}")))?;
    params.config.validate()?;
    validate_shapes(&params)?;
    Ok(params)
}

/// Defensive shape check for deserialized parameters.
fn validate_shapes(params: &SurrogateParams) -> Result<()> {
    let check_stack = |name: &str, layers: &[DenseLayer], in_dim: usize, branch: &BranchConfig| {
        if layers.len() != branch.widths.len() {
            return Err(Error::Format(format!(
                "{name} branch: {} layers but config says {}",
                layers.len(),
                branch.widths.len()
            )));
        }
        let mut fan_in = in_dim;
        for (l, (layer, w)) in layers.iter().zip(&branch.widths).enumerate() {
            if layer.fan_in() != fan_in || layer.fan_out() != *w || layer.bias.len() != *w {
                return Err(Error::Format(format!(
                    "{name} branch layer {l}: unexpected shape"
                )));
            }
            fan_in = *w;
        }
        Ok(())
    };
    check_stack("basis", &params.basis, params.config.input_dim, &params.config.basis)?;
    check_stack("coef", &params.coef, SPATIAL_DIM, &params.config.coef)?;
    if params.head.fan_in() != 1 + params.config.covariate_dim || params.head.fan_out() != 1 {
        return Err(Error::Format("head layer has unexpected shape".into()));
    }
    if params.standardizer.z_mean.len() != params.config.input_dim
        || params.standardizer.z_sd.len() != params.config.input_dim
    {
        return Err(Error::Format("standardizer does not match input_dim".into()));
    }
    Ok(())
}
