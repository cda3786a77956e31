//! Function-on-scalar regression baseline.
//!
//! The comparison method regresses each response surface on the simulation
//! inputs and covariates with spatially varying coefficients,
//!
//! ```text
//! y_i(s) = g_0(s) + sum_j z_ij g_j(s) + sum_k x_ik g_{p+k}(s) + eps,
//! ```
//!
//! expanding every coefficient function in the same tensor-product B-spline
//! basis over the site square. Stacking the (simulation, site) training pairs
//! turns this into one ridge regression whose feature vector per pair is the
//! Kronecker product of the regressors `[1, z, x]` with the spatial basis
//! values — at most `order^2` of those are nonzero, so the normal equations
//! accumulate sparsely. The fitted noise scale gives flat mean ± 1.96 sd
//! intervals, which is as sharp as the homoscedastic model allows.

use crate::bspline::BsplineBasis;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::PredictiveSummary;
use crate::model::SPATIAL_DIM;
use crate::tensor::{cholesky, cholesky_solve, Tensor};

/// Site square shared with the synthetic generator.
pub const SITE_DOMAIN: (f64, f64) = (0.0, 10.0);
/// Cubic splines.
pub const SPATIAL_ORDER: usize = 4;
/// Default basis functions per spatial dimension.
pub const DEFAULT_SPATIAL_BASIS: usize = 8;
/// Two-sided 95% normal quantile used for the prediction intervals.
const NORMAL_95: f64 = 1.96;

#[derive(Clone, Debug)]
pub struct FosrModel {
    /// Basis functions per spatial dimension.
    pub m_s: usize,
    /// Ridge penalty the coefficients were fit with.
    pub ridge: f64,
    /// Coefficient matrix `[1 + p + q, m_s^2]`: one row per regressor
    /// (intercept, inputs, covariates), one column per tensor-product spatial
    /// basis function.
    pub gamma: Tensor,
    /// Homoscedastic residual scale, `sqrt(RSS / N)` over the training pairs.
    pub residual_sd: f64,
}

impl FosrModel {
    fn basis(&self) -> BsplineBasis {
        spatial_basis(self.m_s).expect("validated at fit time")
    }

    pub fn regressor_dim(&self) -> usize {
        self.gamma.rows()
    }
}

fn spatial_basis(m_s: usize) -> Result<BsplineBasis> {
    if m_s < SPATIAL_ORDER {
        return Err(Error::Config(format!(
            "spatial basis size {m_s} is below the spline order {SPATIAL_ORDER}"
        )));
    }
    BsplineBasis::clamped(SITE_DOMAIN.0, SITE_DOMAIN.1, m_s - SPATIAL_ORDER, SPATIAL_ORDER)
}

/// Nonzero tensor-product basis values at one site, as `(index, value)` with
/// `index = a * m_s + b` over the per-dimension functions `a`, `b`.
fn spatial_nonzeros(
    basis: &BsplineBasis,
    s1: f64,
    s2: f64,
    scratch: &mut (Vec<f64>, Vec<f64>),
    out: &mut Vec<(usize, f64)>,
) {
    let m = basis.len();
    basis.eval(s1, &mut scratch.0);
    basis.eval(s2, &mut scratch.1);
    out.clear();
    for (a, &va) in scratch.0.iter().enumerate() {
        if va == 0.0 {
            continue;
        }
        for (b, &vb) in scratch.1.iter().enumerate() {
            if vb != 0.0 {
                out.push((a * m + b, va * vb));
            }
        }
    }
}

/// Fit the baseline on the training simulations of `data`.
///
/// `ridge` is added to the diagonal of the normal equations; with fewer
/// effective observations than coefficients the system is singular at zero.
pub fn fit_fosr(data: &Dataset, m_s: usize, ridge: f64) -> Result<FosrModel> {
    data.validate()?;
    if data.train_sims.is_empty() {
        return Err(Error::Config("no training simulations to fit on".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!(
            "ridge penalty must be finite and non-negative, got {ridge}"
        )));
    }
    let basis = spatial_basis(m_s)?;
    let j = basis.len() * basis.len();
    let r = 1 + data.input_dim() + data.covariate_dim();
    let d = r * j;

    let pairs = data.pairs_for(&data.train_sims);
    let mut gram = Tensor::zeros(vec![d, d]);
    let mut xty = vec![0.0f64; d];
    let mut scratch = (vec![0.0; basis.len()], vec![0.0; basis.len()]);
    let mut spatial = Vec::with_capacity(SPATIAL_ORDER * SPATIAL_ORDER);
    let mut feats: Vec<(usize, f64)> = Vec::with_capacity(r * SPATIAL_ORDER * SPATIAL_ORDER);
    let mut u = vec![0.0f64; r];

    for &(site, sim) in &pairs {
        let s = data.sites.row(site);
        spatial_nonzeros(&basis, s[0], s[1], &mut scratch, &mut spatial);
        u[0] = 1.0;
        u[1..1 + data.input_dim()].copy_from_slice(data.inputs.row(sim));
        u[1 + data.input_dim()..].copy_from_slice(data.covariates.row(site));
        feats.clear();
        for (ri, &ur) in u.iter().enumerate() {
            if ur == 0.0 {
                continue;
            }
            for &(ji, v) in &spatial {
                feats.push((ri * j + ji, ur * v));
            }
        }
        let y = data.responses.at(site, sim);
        for &(i1, v1) in &feats {
            xty[i1] += v1 * y;
            let row = gram.row_mut(i1);
            for &(i2, v2) in &feats {
                row[i2] += v1 * v2;
            }
        }
    }
    for i in 0..d {
        gram.set(i, i, gram.at(i, i) + ridge);
    }

    let chol = cholesky(&gram).map_err(|e| {
        Error::Numeric(format!(
            "normal equations for the spatial regression are singular ({e}); \
             use a positive ridge penalty"
        ))
    })?;
    let coef = cholesky_solve(&chol, &xty)?;
    let gamma = Tensor::new(vec![r, j], coef)?;

    let mut model = FosrModel {
        m_s,
        ridge,
        gamma,
        residual_sd: 0.0,
    };
    let mut rss = 0.0;
    for &(site, sim) in &pairs {
        let s = data.sites.row(site);
        let pred = fosr_mean(
            &model,
            &basis,
            s[0],
            s[1],
            data.inputs.row(sim),
            data.covariates.row(site),
            &mut scratch,
            &mut spatial,
        );
        let e = data.responses.at(site, sim) - pred;
        rss += e * e;
    }
    model.residual_sd = (rss / pairs.len() as f64).sqrt();
    if !model.residual_sd.is_finite() {
        return Err(Error::Numeric(
            "spatial regression produced a non-finite residual scale".into(),
        ));
    }
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn fosr_mean(
    model: &FosrModel,
    basis: &BsplineBasis,
    s1: f64,
    s2: f64,
    z: &[f64],
    x: &[f64],
    scratch: &mut (Vec<f64>, Vec<f64>),
    spatial: &mut Vec<(usize, f64)>,
) -> f64 {
    spatial_nonzeros(basis, s1, s2, scratch, spatial);
    let mut mean = 0.0;
    for ri in 0..model.gamma.rows() {
        let ur = match ri {
            0 => 1.0,
            _ if ri <= z.len() => z[ri - 1],
            _ => x[ri - 1 - z.len()],
        };
        if ur == 0.0 {
            continue;
        }
        let row = model.gamma.row(ri);
        let mut g = 0.0;
        for &(ji, v) in spatial.iter() {
            g += v * row[ji];
        }
        mean += ur * g;
    }
    mean
}

/// Predict at the given rows; rows are `(site, inputs, covariates)` aligned
/// across the three tensors. Sites outside the fitted square are clamped to
/// its boundary (with a warning on stderr). Interval bounds are
/// mean ± 1.96 residual sd at every row.
pub fn predict_fosr(
    model: &FosrModel,
    s: &Tensor,
    z: &Tensor,
    x: &Tensor,
) -> Result<Vec<PredictiveSummary>> {
    let b = s.rows();
    if s.cols() != SPATIAL_DIM || z.rows() != b || x.rows() != b {
        return Err(Error::Shape {
            op: "predict_fosr",
            left: s.shape().to_vec(),
            right: vec![z.rows(), x.rows()],
        });
    }
    if 1 + z.cols() + x.cols() != model.regressor_dim() {
        return Err(Error::Config(format!(
            "model was fit with {} regressors but got 1 + {} + {}",
            model.regressor_dim(),
            z.cols(),
            x.cols()
        )));
    }
    let basis = model.basis();
    let (lo, hi) = basis.domain();
    let outside = (0..b)
        .filter(|&row| s.row(row).iter().any(|&c| c < lo || c > hi))
        .count();
    if outside > 0 {
        eprintln!(
            "warning: {outside} prediction site(s) fall outside [{lo}, {hi}]^2 and were clamped"
        );
    }

    let mut scratch = (vec![0.0; basis.len()], vec![0.0; basis.len()]);
    let mut spatial = Vec::with_capacity(SPATIAL_ORDER * SPATIAL_ORDER);
    let half = NORMAL_95 * model.residual_sd;
    let mut out = Vec::with_capacity(b);
    for row in 0..b {
        let sr = s.row(row);
        let mean = fosr_mean(
            model,
            &basis,
            sr[0],
            sr[1],
            z.row(row),
            x.row(row),
            &mut scratch,
            &mut spatial,
        );
        out.push(PredictiveSummary {
            mean,
            sd: model.residual_sd,
            lower: mean - half,
            upper: mean + half,
        });
    }
    Ok(out)
}
