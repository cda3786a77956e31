//! Dense network building blocks.
//!
//! A branch is a plain stack of [`DenseLayer`]s. Dropout is entry-wise over
//! parameters: a mask has exactly the shape of the layer's weights and bias,
//! entries are kept with probability `1 - rate`, and masked forward passes use
//! `W .* M` with no rescaling of the kept entries — the same convention at
//! training and inference time, which is what makes resampled masks over the
//! fitted parameters meaningful as posterior draws.
//!
//! Gradients are reverse-mode over the whole stack; `backward` also returns
//! the gradient with respect to the stack input so callers can chain branches
//! through a multiply layer. Optimization is Adam with bias correction and a
//! continuously decayed learning rate `base * rate^(step / decay_steps)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{axpy, dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationKind {
    Relu,
    Linear,
    SoftPlus,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            ActivationKind::Linear => x,
            // ln(1 + e^x), arranged to avoid overflow on either side.
            ActivationKind::SoftPlus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative at the pre-activation value; the ReLU kink at 0 maps to 0.
    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Linear => 1.0,
            ActivationKind::SoftPlus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// One dense layer: `activation(x W' + b)` with weights stored `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub activation: ActivationKind,
}

impl DenseLayer {
    /// Glorot-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn glorot(fan_in: usize, fan_out: usize, activation: ActivationKind, rng: &mut RngState) -> DenseLayer {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        DenseLayer {
            weights: Tensor::new(vec![fan_out, fan_in], data).expect("glorot shape"),
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }
}

/// Binary mask mirroring one layer's parameter shapes exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMask {
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

impl LayerMask {
    pub fn ones(layer: &DenseLayer) -> LayerMask {
        LayerMask {
            weights: Tensor::new(
                vec![layer.fan_out(), layer.fan_in()],
                vec![1.0; layer.fan_out() * layer.fan_in()],
            )
            .expect("mask shape"),
            bias: vec![1.0; layer.fan_out()],
        }
    }
}

/// Independent Bernoulli(1 - rate) masks for each layer's weight and bias
/// entries. `rates` pairs with `layers`; a rate of 0 yields all-ones masks.
pub fn sample_mask(
    layers: &[DenseLayer],
    rates: &[f64],
    rng: &mut RngState,
) -> Result<Vec<LayerMask>> {
    if layers.len() != rates.len() {
        return Err(Error::Config(format!(
            "got {} dropout rates for {} layers",
            rates.len(),
            layers.len()
        )));
    }
    for &p in rates {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
    }
    let mut masks = Vec::with_capacity(layers.len());
    for (layer, &p) in layers.iter().zip(rates) {
        if p == 0.0 {
            masks.push(LayerMask::ones(layer));
            continue;
        }
        let keep = 1.0 - p;
        let w: Vec<f64> = (0..layer.fan_out() * layer.fan_in())
            .map(|_| if rng.bernoulli(keep) { 1.0 } else { 0.0 })
            .collect();
        let b: Vec<f64> = (0..layer.fan_out())
            .map(|_| if rng.bernoulli(keep) { 1.0 } else { 0.0 })
            .collect();
        masks.push(LayerMask {
            weights: Tensor::new(vec![layer.fan_out(), layer.fan_in()], w).expect("mask shape"),
            bias: b,
        });
    }
    Ok(masks)
}

/// Intermediates retained by [`forward`] for the backward pass.
pub struct ForwardCache {
    /// Input to each layer; `layer_inputs[0]` is the stack input.
    pub layer_inputs: Vec<Tensor>,
    /// Pre-activation values per layer.
    pub preacts: Vec<Tensor>,
    /// Effective (masked) parameters used by the pass.
    pub effective: Vec<(Tensor, Vec<f64>)>,
}

fn effective_params(layer: &DenseLayer, mask: Option<&LayerMask>) -> (Tensor, Vec<f64>) {
    match mask {
        None => (layer.weights.clone(), layer.bias.clone()),
        Some(m) => {
            assert_eq!(m.weights.shape(), layer.weights.shape(), "mask shape");
            assert_eq!(m.bias.len(), layer.bias.len(), "mask bias length");
            let mut w = layer.weights.clone();
            for (wv, mv) in w.data_mut().iter_mut().zip(m.weights.data()) {
                *wv *= mv;
            }
            let b = layer
                .bias
                .iter()
                .zip(&m.bias)
                .map(|(bv, mv)| bv * mv)
                .collect();
            (w, b)
        }
    }
}

/// Run a batch (rows of `input`) through the stack. `masks`, when given, must
/// pair with `layers`.
pub fn forward(
    layers: &[DenseLayer],
    input: &Tensor,
    masks: Option<&[LayerMask]>,
) -> (Tensor, ForwardCache) {
    assert!(input.is_matrix(), "stack input must be 2-D [batch, features]");
    if let Some(ms) = masks {
        assert_eq!(ms.len(), layers.len(), "one mask per layer");
    }
    let batch = input.rows();
    let mut cache = ForwardCache {
        layer_inputs: Vec::with_capacity(layers.len()),
        preacts: Vec::with_capacity(layers.len()),
        effective: Vec::with_capacity(layers.len()),
    };
    let mut current = input.clone();
    for (l, layer) in layers.iter().enumerate() {
        assert_eq!(
            current.cols(),
            layer.fan_in(),
            "layer {l} expects {} inputs, got {}",
            layer.fan_in(),
            current.cols()
        );
        let (w, b) = effective_params(layer, masks.map(|ms| &ms[l]));
        let out_dim = layer.fan_out();
        let mut pre = Tensor::zeros(vec![batch, out_dim]);
        for i in 0..batch {
            let x = current.row(i);
            let row = pre.row_mut(i);
            for (o, slot) in row.iter_mut().enumerate() {
                *slot = dot(x, w.row(o)) + b[o];
            }
        }
        let mut act = pre.clone();
        for v in act.data_mut() {
            *v = layer.activation.apply(*v);
        }
        cache.layer_inputs.push(current);
        cache.preacts.push(pre);
        cache.effective.push((w, b));
        current = act;
    }
    (current, cache)
}

/// Per-layer parameter gradients.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Reverse-mode pass. `upstream` is dLoss/dOutput, shaped like the forward
/// output. Returns per-layer gradients (zeroed at masked-out entries) and
/// dLoss/dInput for chaining into upstream computations.
pub fn backward(
    layers: &[DenseLayer],
    cache: &ForwardCache,
    masks: Option<&[LayerMask]>,
    upstream: &Tensor,
) -> (Vec<LayerGrads>, Tensor) {
    let n_layers = layers.len();
    assert_eq!(cache.preacts.len(), n_layers, "cache/layer mismatch");
    let batch = upstream.rows();
    let mut grads: Vec<Option<LayerGrads>> = (0..n_layers).map(|_| None).collect();
    let mut delta = upstream.clone();
    for l in (0..n_layers).rev() {
        let layer = &layers[l];
        let pre = &cache.preacts[l];
        assert_eq!(delta.shape(), pre.shape(), "upstream shape at layer {l}");
        for (dv, pv) in delta.data_mut().iter_mut().zip(pre.data()) {
            *dv *= layer.activation.grad(*pv);
        }
        let input = &cache.layer_inputs[l];
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
        let mut dw = Tensor::zeros(vec![fan_out, fan_in]);
        let mut db = vec![0.0; fan_out];
        for i in 0..batch {
            let d_row = delta.row(i);
            let x_row = input.row(i);
            for (o, &d) in d_row.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, x_row, dw.row_mut(o));
                    db[o] += d;
                }
            }
        }
        if let Some(ms) = masks {
            let m = &ms[l];
            for (g, mv) in dw.data_mut().iter_mut().zip(m.weights.data()) {
                *g *= mv;
            }
            for (g, mv) in db.iter_mut().zip(&m.bias) {
                *g *= mv;
            }
        }
        // Chain through the effective (masked) weights used in the forward pass.
        let w_eff = &cache.effective[l].0;
        let mut d_input = Tensor::zeros(vec![batch, fan_in]);
        for i in 0..batch {
            let d_row = delta.row(i);
            let out_row = d_input.row_mut(i);
            for (o, &d) in d_row.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, w_eff.row(o), out_row);
                }
            }
        }
        grads[l] = Some(LayerGrads {
            weights: dw,
            bias: db,
        });
        delta = d_input;
    }
    (
        grads.into_iter().map(|g| g.expect("all layers visited")).collect(),
        delta,
    )
}

/// Number of scalar parameters in a stack.
pub fn param_count(layers: &[DenseLayer]) -> usize {
    layers
        .iter()
        .map(|l| l.fan_out() * l.fan_in() + l.fan_out())
        .sum()
}

/// Append stack parameters (per layer: weights row-major, then bias) to `out`.
pub fn collect_params(layers: &[DenseLayer], out: &mut Vec<f64>) {
    for l in layers {
        out.extend_from_slice(l.weights.data());
        out.extend_from_slice(&l.bias);
    }
}

/// Inverse of [`collect_params`]; returns how many values were consumed.
pub fn scatter_params(layers: &mut [DenseLayer], src: &[f64]) -> usize {
    let mut pos = 0;
    for l in layers {
        let nw = l.weights.data().len();
        l.weights.data_mut().copy_from_slice(&src[pos..pos + nw]);
        pos += nw;
        let nb = l.bias.len();
        l.bias.copy_from_slice(&src[pos..pos + nb]);
        pos += nb;
    }
    pos
}

/// Append stack gradients in [`collect_params`] order.
pub fn collect_grads(grads: &[LayerGrads], out: &mut Vec<f64>) {
    for g in grads {
        out.extend_from_slice(g.weights.data());
        out.extend_from_slice(&g.bias);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps over which the rate is applied once; decay is continuous in the
    /// exponent, `lr(step) = base_lr * decay_rate^(step / decay_steps)`.
    pub decay_steps: f64,
    pub decay_rate: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            base_lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_steps: 10_000.0,
            decay_rate: 0.97,
        }
    }
}

/// Learning rate after `step` completed updates.
pub fn lr_at(cfg: &AdamConfig, step: u64) -> f64 {
    cfg.base_lr * cfg.decay_rate.powf(step as f64 / cfg.decay_steps)
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed updates.
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place, at the learning rate scheduled
/// for the current step count.
pub fn adam_step(state: &mut AdamState, cfg: &AdamConfig, params: &mut [f64], grads: &[f64]) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len(), "optimizer state length");
    let lr = lr_at(cfg, state.step);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
    }
}
