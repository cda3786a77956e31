//! Row-major tensors and the dense kernels built on them.
//!
//! Everything numeric in the crate flows through these kernels, so they are
//! written for a single core: contiguous storage, prefix dot products with
//! independent accumulators (pipelines well even without wide SIMD), no
//! hidden allocation in hot loops. Summation order is fixed by the code, so
//! results are bitwise reproducible run to run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Dense tensor: explicit shape plus contiguous row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

// Tensors are plain owned buffers; readers on multiple threads share them freely.
const _: () = {
    const fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<Tensor>()
};

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Config(format!(
                "tensor data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// 2-D constructor from explicit rows; intended for tests and fixtures.
    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.is_matrix());
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.is_matrix());
        self.data[i * self.shape[1] + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(self.is_matrix());
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert!(self.is_matrix());
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn transposed(&self) -> Tensor {
        assert!(self.is_matrix(), "transpose requires a 2-D tensor");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(vec![c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product with four independent accumulators. The fixed accumulation
/// order is part of the crate's reproducibility contract.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.is_matrix() || !b.is_matrix() || a.cols() != b.rows() {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, n) = (a.rows(), b.cols());
    let mut out = Tensor::zeros(vec![m, n]);
    // i-k-j order: the inner update streams a row of `b` into a row of `out`.
    for i in 0..m {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il != 0.0 {
                axpy(a_il, b.row(l), out_row);
            }
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// The strict upper triangle of the result is zero. Fails with the index of
/// the first non-positive pivot; callers that factor near-singular kernels are
/// expected to add their own diagonal jitter before calling.
///
/// Large matrices (kernel matrices at thousands of sites) go through a blocked
/// right-looking variant whose trailing update is register-tiled; small ones
/// use the plain row-wise recurrence. Both paths are deterministic.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    if !a.is_matrix() || a.rows() != a.cols() {
        return Err(Error::Shape {
            op: "cholesky",
            left: a.shape.clone(),
            right: a.shape.clone(),
        });
    }
    if a.rows() >= 256 {
        cholesky_blocked(a)
    } else {
        cholesky_rowwise(a)
    }
}

fn cholesky_rowwise(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    let mut l = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        // Split so row i (being written) and rows < i (read-only) can coexist.
        let (head, tail) = l.data.split_at_mut(i * n);
        let row_i = &mut tail[..n];
        for j in 0..=i {
            let s = if j < i {
                let row_j = &head[j * n..j * n + j];
                a.at(i, j) - dot(&row_i[..j], row_j)
            } else {
                a.at(i, i) - dot(&row_i[..j], &row_i[..j])
            };
            if j == i {
                if s <= 0.0 || !s.is_finite() {
                    return Err(cholesky_pivot_error(i, s));
                }
                row_i[i] = s.sqrt();
            } else {
                let l_jj = head[j * n + j];
                row_i[j] = s / l_jj;
            }
        }
    }
    Ok(l)
}

fn cholesky_pivot_error(i: usize, s: f64) -> Error {
    Error::Numeric(format!(
        "cholesky pivot {i} is non-positive ({s:e}); matrix is not positive definite"
    ))
}

/// Trailing-update (SYRK) tile width; 4x4 keeps 16 accumulators live.
const CHOL_TILE: usize = 4;
/// Panel width for the blocked factorization.
const CHOL_NB: usize = 128;

/// 4x4 tile of `panel * panel'`: sixteen scalar accumulators over eight
/// equal-length rows, written so the compiler can drop bounds checks and keep
/// the accumulators in registers.
#[inline]
fn syrk_tile_4x4(panel: &[f64], kb: usize, ti: usize, tj: usize, acc: &mut [[f64; 4]; 4]) {
    let pi0 = &panel[ti * kb..ti * kb + kb];
    let pi1 = &panel[(ti + 1) * kb..(ti + 1) * kb + kb];
    let pi2 = &panel[(ti + 2) * kb..(ti + 2) * kb + kb];
    let pi3 = &panel[(ti + 3) * kb..(ti + 3) * kb + kb];
    let pj0 = &panel[tj * kb..tj * kb + kb];
    let pj1 = &panel[(tj + 1) * kb..(tj + 1) * kb + kb];
    let pj2 = &panel[(tj + 2) * kb..(tj + 2) * kb + kb];
    let pj3 = &panel[(tj + 3) * kb..(tj + 3) * kb + kb];
    let (mut a00, mut a01, mut a02, mut a03) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut a10, mut a11, mut a12, mut a13) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut a20, mut a21, mut a22, mut a23) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut a30, mut a31, mut a32, mut a33) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for l in 0..kb {
        let (x0, x1, x2, x3) = (pi0[l], pi1[l], pi2[l], pi3[l]);
        let (y0, y1, y2, y3) = (pj0[l], pj1[l], pj2[l], pj3[l]);
        a00 += x0 * y0;
        a01 += x0 * y1;
        a02 += x0 * y2;
        a03 += x0 * y3;
        a10 += x1 * y0;
        a11 += x1 * y1;
        a12 += x1 * y2;
        a13 += x1 * y3;
        a20 += x2 * y0;
        a21 += x2 * y1;
        a22 += x2 * y2;
        a23 += x2 * y3;
        a30 += x3 * y0;
        a31 += x3 * y1;
        a32 += x3 * y2;
        a33 += x3 * y3;
    }
    acc[0] = [a00, a01, a02, a03];
    acc[1] = [a10, a11, a12, a13];
    acc[2] = [a20, a21, a22, a23];
    acc[3] = [a30, a31, a32, a33];
}

fn cholesky_blocked(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    let mut l = Tensor::zeros(vec![n, n]);
    // Seed with the lower triangle of `a`; updates happen in place.
    for i in 0..n {
        let src = a.row(i);
        l.row_mut(i)[..=i].copy_from_slice(&src[..=i]);
    }

    let mut diag = vec![0.0f64; CHOL_NB * CHOL_NB]; // factored diagonal block, row-major kb x kb
    let mut panel: Vec<f64> = Vec::new(); // solved sub-diagonal panel, row-major (n-base) x kb

    let mut k = 0;
    while k < n {
        let kb = CHOL_NB.min(n - k);

        // Factor the kb x kb diagonal block into `diag`.
        for bi in 0..kb {
            for bj in 0..=bi {
                let mut s = l.at(k + bi, k + bj);
                s -= dot(&diag[bi * kb..bi * kb + bj], &diag[bj * kb..bj * kb + bj]);
                if bj == bi {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(cholesky_pivot_error(k + bi, s));
                    }
                    diag[bi * kb + bi] = s.sqrt();
                } else {
                    diag[bi * kb + bj] = s / diag[bj * kb + bj];
                }
            }
        }
        for bi in 0..kb {
            l.row_mut(k + bi)[k..k + kb].copy_from_slice(&diag[bi * kb..(bi + 1) * kb]);
            for v in l.row_mut(k + bi)[k + bi + 1..k + kb].iter_mut() {
                *v = 0.0;
            }
        }
        // `diag` rows above the diagonal contain stale values; zero them for the solve.
        for bi in 0..kb {
            for bj in bi + 1..kb {
                diag[bi * kb + bj] = 0.0;
            }
        }

        let base = k + kb;
        if base == n {
            break;
        }

        // Triangular solve: rows below the block become L21 = A21 * L11^{-T}.
        for i in base..n {
            let row = &mut l.row_mut(i)[k..k + kb];
            for j in 0..kb {
                let s = row[j] - dot(&row[..j], &diag[j * kb..j * kb + j]);
                row[j] = s / diag[j * kb + j];
            }
        }

        // Copy the solved panel to scratch so the trailing update reads it
        // without aliasing the rows it writes.
        let rows_below = n - base;
        panel.clear();
        panel.reserve(rows_below * kb);
        for i in base..n {
            panel.extend_from_slice(&l.row(i)[k..k + kb]);
        }

        // Trailing update: A22 -= L21 L21' on the lower triangle, in 4x4 tiles.
        let mut ti = 0;
        while ti < rows_below {
            let ih = CHOL_TILE.min(rows_below - ti);
            let mut tj = 0;
            while tj <= ti {
                let jh = CHOL_TILE.min(rows_below - tj);
                let mut acc = [[0.0f64; CHOL_TILE]; CHOL_TILE];
                if ih == CHOL_TILE && jh == CHOL_TILE {
                    syrk_tile_4x4(&panel, kb, ti, tj, &mut acc);
                } else {
                    for ai in 0..ih {
                        let pi = &panel[(ti + ai) * kb..(ti + ai) * kb + kb];
                        for aj in 0..jh {
                            let pj = &panel[(tj + aj) * kb..(tj + aj) * kb + kb];
                            acc[ai][aj] = dot(pi, pj);
                        }
                    }
                }
                for ai in 0..ih {
                    let gi = base + ti + ai;
                    let row = l.row_mut(gi);
                    for aj in 0..jh {
                        let gj = base + tj + aj;
                        if gj <= gi {
                            row[gj] -= acc[ai][aj];
                        }
                    }
                }
                tj += CHOL_TILE;
            }
            ti += CHOL_TILE;
        }

        k += kb;
    }
    Ok(l)
}

/// Solve `A x = b` given the lower Cholesky factor `L` of `A` (forward then
/// back substitution).
pub fn cholesky_solve(chol_lower: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if !chol_lower.is_matrix() || chol_lower.rows() != n || chol_lower.cols() != n {
        return Err(Error::Shape {
            op: "cholesky_solve",
            left: vec![n],
            right: chol_lower.shape.clone(),
        });
    }
    // L y = b
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let row = chol_lower.row(i);
        y[i] = (b[i] - dot(&row[..i], &y[..i])) / row[i];
    }
    // L' x = y, traversing columns of L as rows of L'
    let mut x = y;
    for i in (0..n).rev() {
        let mut s = x[i];
        for l in i + 1..n {
            s -= chol_lower.at(l, i) * x[l];
        }
        x[i] = s / chol_lower.at(i, i);
    }
    Ok(x)
}

/// One multivariate normal draw `mean + L eps` with `eps` i.i.d. standard
/// normal and `L` a lower-triangular Cholesky factor.
pub fn mvn_sample(mean: &[f64], chol_lower: &Tensor, rng: &mut RngState) -> Result<Vec<f64>> {
    let n = mean.len();
    if !chol_lower.is_matrix() || chol_lower.rows() != n || chol_lower.cols() != n {
        return Err(Error::Shape {
            op: "mvn_sample",
            left: vec![n],
            right: chol_lower.shape.clone(),
        });
    }
    let eps: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(mean[i] + dot(&chol_lower.row(i)[..=i], &eps[..=i]));
    }
    Ok(out)
}
