//! Dense complex linear algebra and FFT helpers.

use crate::error::{Error, Result};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Forward/inverse FFT pair of one length, unitary scaling.
#[derive(Clone)]
pub struct UnitaryFft {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for UnitaryFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryFft").field("n", &self.n).finish()
    }
}

impl UnitaryFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In place `y_k = n^{-1/2} sum_m x_m e^{-i 2 pi k m / n}`.
    pub fn forward(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= s);
    }

    /// In place `y_k = n^{-1/2} sum_m x_m e^{+i 2 pi k m / n}`.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.inv.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// Linear convolution of two real sequences through a zero-padded FFT.
pub fn convolve_real(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let m = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    // pack both real inputs into one complex transform
    let mut buf = vec![C64::new(0.0, 0.0); m];
    for (i, v) in a.iter().enumerate() {
        buf[i].re = *v;
    }
    for (i, v) in b.iter().enumerate() {
        buf[i].im = *v;
    }
    fwd.process(&mut buf);
    let mut prod = vec![C64::new(0.0, 0.0); m];
    for k in 0..m {
        let x = buf[k];
        let y = buf[(m - k) % m].conj();
        let fa = (x + y) * 0.5;
        let fb = (x - y) * C64::new(0.0, -0.5);
        prod[k] = fa * fb;
    }
    inv.process(&mut prod);
    let s = 1.0 / m as f64;
    prod[..out_len].iter().map(|v| v.re * s).collect()
}

/// Linear convolution of two complex sequences through a zero-padded FFT.
pub fn convolve_complex(a: &[C64], b: &[C64]) -> Vec<C64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let m = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut fa = vec![C64::new(0.0, 0.0); m];
    let mut fb = vec![C64::new(0.0, 0.0); m];
    fa[..a.len()].copy_from_slice(a);
    fb[..b.len()].copy_from_slice(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let s = 1.0 / m as f64;
    fa[..out_len].iter().map(|v| v * s).collect()
}

/// Outcome of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub x: CVec,
    /// True when the QR route detected rank deficiency and the SVD
    /// minimum-norm solution was used instead.
    pub min_norm_fallback: bool,
}

/// Least squares `min ||a x - b||` by Householder QR, falling back to the
/// SVD minimum-norm solution when `a` is rank deficient or wide.
pub fn lstsq(a: &CMat, b: &CVec) -> Result<LsSolution> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: b.len(),
        });
    }
    if n == 0 {
        return Ok(LsSolution {
            x: CVec::zeros(0),
            min_norm_fallback: false,
        });
    }
    if m >= n {
        let qr = a.clone().qr();
        let r = qr.r();
        let rmax = (0..n).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
        let rmin = (0..n).map(|i| r[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        if rmax > 0.0 && rmin > rmax * 1e-12 * (m.max(n) as f64) {
            let qtb = qr.q().adjoint() * b;
            if let Some(x) = r.solve_upper_triangular(&qtb) {
                return Ok(LsSolution {
                    x,
                    min_norm_fallback: false,
                });
            }
        }
    }
    let x = pinv_solve(a, b)?;
    Ok(LsSolution {
        x,
        min_norm_fallback: true,
    })
}

/// Minimum-norm least-squares solution through the SVD.
pub fn pinv_solve(a: &CMat, b: &CVec) -> Result<CVec> {
    let (m, n) = a.shape();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-12 * (m.max(n) as f64);
    svd.solve(b, tol)
        .map_err(|e| Error::Numerical(format!("svd solve: {e}")))
}

/// Solves `a x = b` for Hermitian positive definite `a` by Cholesky.
/// Returns `None` when the factorisation breaks down or `a` is
/// numerically singular.
pub fn cholesky_solve(a: CMat, b: &CMat) -> Option<CMat> {
    let n = a.nrows();
    let c = a.cholesky()?;
    let l = c.l_dirty();
    let dmax = (0..n).map(|i| l[(i, i)].re).fold(0.0, f64::max);
    let dmin = (0..n).map(|i| l[(i, i)].re).fold(f64::INFINITY, f64::min);
    if !(dmin > 0.0) || (dmin / dmax).powi(2) < f64::EPSILON * n as f64 {
        return None;
    }
    Some(c.solve(b))
}

/// Ratio of extreme singular values; infinite for rank-deficient input.
pub fn condition_number(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 1.0;
    }
    let s = a.clone().singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Column submatrix in the given order.
pub fn select_columns(a: &CMat, cols: &[usize]) -> CMat {
    CMat::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}
