//! Clamped B-spline bases on an interval.
//!
//! Used in two places: the synthetic-truth generator evaluates order-4 bases
//! of the simulation inputs on [-3, 3], and the function-on-scalar baseline
//! builds its spatial tensor-product basis on the site domain. Evaluation
//! returns all basis values at a point via the stable triangular recurrence;
//! inputs outside the interval are clamped to it, where the end basis
//! function takes value 1.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BsplineBasis {
    order: usize,
    knots: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl BsplineBasis {
    /// Basis of the given order (= polynomial degree + 1) with `interior`
    /// equally spaced interior knots on `[lo, hi]` and fully clamped ends.
    /// Yields `interior + order` basis functions forming a partition of unity.
    pub fn clamped(lo: f64, hi: f64, interior: usize, order: usize) -> Result<BsplineBasis> {
        if order == 0 {
            return Err(Error::Config("b-spline order must be at least 1".into()));
        }
        if !(lo < hi) {
            return Err(Error::Config(format!(
                "b-spline interval [{lo}, {hi}] is empty"
            )));
        }
        let mut knots = Vec::with_capacity(2 * order + interior);
        knots.extend(std::iter::repeat(lo).take(order));
        let step = (hi - lo) / (interior as f64 + 1.0);
        for i in 1..=interior {
            knots.push(lo + step * i as f64);
        }
        knots.extend(std::iter::repeat(hi).take(order));
        Ok(BsplineBasis {
            order,
            knots,
            lo,
            hi,
        })
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Index of the knot span containing `t` (clamped to the domain).
    fn span(&self, t: f64) -> usize {
        let m = self.len();
        if t >= self.hi {
            return m - 1;
        }
        if t <= self.lo {
            return self.order - 1;
        }
        // Binary search over knots[order-1 ..= m]: find mu with
        // knots[mu] <= t < knots[mu+1].
        let (mut lo_i, mut hi_i) = (self.order - 1, m);
        while hi_i - lo_i > 1 {
            let mid = (lo_i + hi_i) / 2;
            if t < self.knots[mid] {
                hi_i = mid;
            } else {
                lo_i = mid;
            }
        }
        lo_i
    }

    /// Evaluate every basis function at `t` into `out` (length `len()`).
    /// At most `order` consecutive entries are nonzero; the rest are zeroed.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.len(), "output slice length");
        let t = t.clamp(self.lo, self.hi);
        let mu = self.span(t);
        out.fill(0.0);

        // Triangular recurrence over the active window (basis functions
        // mu-order+1 ..= mu).
        let k = self.order;
        let mut vals = vec![0.0; k];
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        vals[0] = 1.0;
        for j in 1..k {
            left[j] = t - self.knots[mu + 1 - j];
            right[j] = self.knots[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom == 0.0 { 0.0 } else { vals[r] / denom };
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        let first = mu + 1 - k;
        out[first..first + k].copy_from_slice(&vals);
    }

    pub fn eval_vec(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval(t, &mut out);
        out
    }
}
