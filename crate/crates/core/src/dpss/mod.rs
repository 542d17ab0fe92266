//! Discrete prolate spheroidal sequences and shifted elementary BEMs.
//!
//! The prolate matrix `C[k, n] = sin(2 pi W (k - n)) / (pi (k - n))` is
//! symmetric Toeplitz with an exponentially clustered spectrum, so its
//! eigenvectors are taken from the commuting tridiagonal matrix and the
//! eigenvalues are recovered as Rayleigh quotients against `C`.

pub mod tridiag;

use crate::error::{Error, Result};
use crate::linalg::{convolve_real, CMat, UnitaryFft};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use tridiag::SymTridiagonal;

/// Default eigenvalue floor below which a basis vector is not extrapolated.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Entry of the prolate matrix at lag `k - n`.
pub fn prolate_kernel(lag: i64, w: f64) -> f64 {
    if lag == 0 {
        2.0 * w
    } else {
        let d = lag as f64;
        (TAU * w * d).sin() / (PI * d)
    }
}

/// `C[k, n]` for window half-bandwidth `w`.
pub fn prolate_entry(k: i64, n: i64, w: f64) -> f64 {
    prolate_kernel(k - n, w)
}

/// Window length, half-bandwidth and number of sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProlateSpec {
    pub len: usize,
    pub half_bandwidth: f64,
    pub count: usize,
}

impl ProlateSpec {
    /// Spec with the default half-bandwidth `1 / (2 freq_len)`.
    pub fn narrowband(len: usize, freq_len: usize, count: usize) -> Self {
        Self {
            len,
            half_bandwidth: 0.5 / freq_len as f64,
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.len == 0 {
            return Err(Error::InvalidParameter("empty prolate window".into()));
        }
        if !(self.half_bandwidth > 0.0 && self.half_bandwidth < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "half-bandwidth {} outside (0, 1/2)",
                self.half_bandwidth
            )));
        }
        if self.count == 0 || self.count > self.len {
            return Err(Error::InvalidParameter(format!(
                "basis order {} outside 1..={}",
                self.count, self.len
            )));
        }
        Ok(())
    }
}

/// First `count` Slepian sequences of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpssBasis {
    pub spec: ProlateSpec,
    /// `vectors[b]` is `u_b` over the window, unit Euclidean norm.
    pub vectors: Vec<Vec<f64>>,
    /// Eigenvalues of the prolate matrix, descending.
    pub lambdas: Vec<f64>,
}

/// Slepian's commuting tridiagonal matrix.
pub fn commuting_tridiagonal(len: usize, w: f64) -> SymTridiagonal {
    let c = (TAU * w).cos();
    let diag = (0..len)
        .map(|n| {
            let h = (len as f64 - 1.0 - 2.0 * n as f64) / 2.0;
            h * h * c
        })
        .collect();
    let off = (1..len).map(|n| 0.5 * n as f64 * (len - n) as f64).collect();
    SymTridiagonal { diag, off }
}

/// `C x` through an FFT convolution with the Toeplitz generator.
pub fn prolate_apply(x: &[f64], w: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let kernel: Vec<f64> = (0..2 * n - 1)
        .map(|j| prolate_kernel(j as i64 - (n as i64 - 1), w))
        .collect();
    let full = convolve_real(x, &kernel);
    full[n - 1..2 * n - 1].to_vec()
}

/// `C x` by direct summation; reference path for tests and small windows.
pub fn prolate_apply_direct(x: &[f64], w: f64) -> Vec<f64> {
    let n = x.len() as i64;
    (0..n)
        .map(|k| (0..n).map(|m| prolate_kernel(k - m, w) * x[m as usize]).sum())
        .collect()
}

fn fix_sign(v: &mut [f64]) {
    let peak = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * peak) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Computes the first `spec.count` sequences.
pub fn compute_dpss(spec: &ProlateSpec) -> Result<DpssBasis> {
    spec.validate()?;
    let n = spec.len;
    let w = spec.half_bandwidth;
    let t = commuting_tridiagonal(n, w);
    let mut vectors: Vec<Vec<f64>> = if n == 1 {
        vec![vec![1.0]]
    } else if spec.count <= 64 || n > 1024 {
        t.top_eigenpairs(spec.count)?.into_iter().map(|(_, v)| v).collect()
    } else {
        // many vectors of a small window: a full dense solve keeps the
        // nearly degenerate lower end orthogonal
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = t.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = t.off[i];
                m[(i + 1, i)] = t.off[i];
            }
        }
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        order
            .into_iter()
            .take(spec.count)
            .map(|j| eig.eigenvectors.column(j).iter().cloned().collect())
            .collect()
    };
    for v in vectors.iter_mut() {
        fix_sign(v);
    }
    let lambdas = vectors
        .iter()
        .map(|u| {
            let cu = prolate_apply(u, w);
            let rq: f64 = u.iter().zip(&cu).map(|(a, b)| a * b).sum();
            rq.clamp(0.0, 1.0)
        })
        .collect();
    Ok(DpssBasis {
        spec: *spec,
        vectors,
        lambdas,
    })
}

impl DpssBasis {
    pub fn len(&self) -> usize {
        self.spec.len
    }

    pub fn is_empty(&self) -> bool {
        self.spec.len == 0
    }

    pub fn order(&self) -> usize {
        self.vectors.len()
    }

    /// Keeps the first `count` sequences.
    pub fn truncated(&self, count: usize) -> DpssBasis {
        let count = count.min(self.order());
        DpssBasis {
            spec: ProlateSpec {
                count,
                ..self.spec
            },
            vectors: self.vectors[..count].to_vec(),
            lambdas: self.lambdas[..count].to_vec(),
        }
    }

    /// `(1/lambda_b) sum_k C[k, n] u_b[k]` over `start..start+len` by FFT,
    /// without substituting the in-window identity.
    pub fn extension_raw(&self, b: usize, start: i64, len: usize) -> Vec<f64> {
        let n = self.len() as i64;
        let w = self.spec.half_bandwidth;
        // lags n - k range over [start - (N-1), start + len - 1]
        let dmin = start - (n - 1);
        let glen = len + self.len() - 1;
        let kernel: Vec<f64> = (0..glen as i64).map(|j| prolate_kernel(j + dmin, w)).collect();
        let conv = convolve_real(&self.vectors[b], &kernel);
        let inv = 1.0 / self.lambdas[b];
        (0..len).map(|i| conv[i + self.len() - 1] * inv).collect()
    }

    /// Extended samples of basis `b`; in-window entries are `u_b` itself.
    fn extension(&self, b: usize, start: i64, len: usize) -> Vec<f64> {
        let mut out = self.extension_raw(b, start, len);
        let n = self.len() as i64;
        for (i, v) in out.iter_mut().enumerate() {
            let t = start + i as i64;
            if (0..n).contains(&t) {
                *v = self.vectors[b][t as usize];
            }
        }
        out
    }
}

/// Extended samples for the listed basis indices; fails on any index whose
/// eigenvalue is below `floor`.
pub fn extend_dpss(
    basis: &DpssBasis,
    indices: &[usize],
    start: i64,
    len: usize,
    floor: f64,
) -> Result<Vec<Vec<f64>>> {
    indices
        .iter()
        .map(|&b| {
            if b >= basis.order() {
                return Err(Error::InvalidParameter(format!("basis index {b} out of range")));
            }
            let lambda = basis.lambdas[b];
            if lambda < floor {
                return Err(Error::BelowFloor {
                    index: b,
                    lambda,
                    floor,
                });
            }
            Ok(basis.extension(b, start, len))
        })
        .collect()
}

/// Every basis vector extended over a range; vectors below the floor are
/// replaced by zeros and listed in `excluded`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedBasis {
    pub start: i64,
    pub len: usize,
    pub columns: Vec<Vec<f64>>,
    pub excluded: Vec<usize>,
}

impl ExtendedBasis {
    pub fn new(basis: &DpssBasis, start: i64, len: usize, floor: f64) -> Self {
        let mut excluded = Vec::new();
        let columns = (0..basis.order())
            .map(|b| {
                if basis.lambdas[b] < floor {
                    excluded.push(b);
                    vec![0.0; len]
                } else {
                    basis.extension(b, start, len)
                }
            })
            .collect();
        Self {
            start,
            len,
            columns,
            excluded,
        }
    }
}

/// `exp(i 2 pi q n / N)` with the phase reduced exactly.
pub fn tone(q: i64, n: i64, freq_len: usize) -> C64 {
    let r = (q * n).rem_euclid(freq_len as i64);
    C64::from_polar(1.0, TAU * r as f64 / freq_len as f64)
}

/// `beta_b = sum_n u_b[n] exp(-i 2 pi q n / N) h[n]` over the window.
pub fn bem_project(h: &[C64], q: i64, basis: &DpssBasis, freq_len: usize) -> Result<Vec<C64>> {
    if h.len() != basis.len() {
        return Err(Error::LengthMismatch {
            expected: basis.len(),
            got: h.len(),
        });
    }
    let dem: Vec<C64> = h
        .iter()
        .enumerate()
        .map(|(n, v)| v * tone(-q, n as i64, freq_len))
        .collect();
    Ok(basis
        .vectors
        .iter()
        .map(|u| u.iter().zip(&dem).map(|(a, b)| b * *a).sum())
        .collect())
}

/// `h[n] = exp(i 2 pi q n / N) sum_b beta_b u_b[n]` over the window.
pub fn bem_reconstruct(beta: &[C64], q: i64, basis: &DpssBasis, freq_len: usize) -> Result<Vec<C64>> {
    if beta.len() != basis.order() {
        return Err(Error::LengthMismatch {
            expected: basis.order(),
            got: beta.len(),
        });
    }
    Ok((0..basis.len())
        .map(|n| {
            let s: C64 = beta
                .iter()
                .zip(&basis.vectors)
                .map(|(b, u)| b * u[n])
                .sum();
            s * tone(q, n as i64, freq_len)
        })
        .collect())
}

/// `||h - P h||^2 / ||h||^2` for the shifted basis at bin `q`.
pub fn representation_nmse(h: &[C64], q: i64, basis: &DpssBasis, freq_len: usize) -> Result<f64> {
    let beta = bem_project(h, q, basis, freq_len)?;
    let rec = bem_reconstruct(&beta, q, basis, freq_len)?;
    let num: f64 = h.iter().zip(&rec).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = h.iter().map(|a| a.norm_sqr()).sum();
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Largest window for which [`build_b_tilde`] materialises a dense matrix.
pub const B_TILDE_MAX_LEN: usize = 4096;

/// Frequency-domain mapping `[B_q]_{k, b} = N^{-1/2} U_b[(k - q) mod N]`
/// with `U_b` the unitary DFT of `u_b`; columns ordered by Doppler bin
/// ascending, then basis index.
pub fn build_b_tilde(basis: &DpssBasis, max_doppler: usize) -> Result<CMat> {
    let n = basis.len();
    if n > B_TILDE_MAX_LEN {
        return Err(Error::InvalidDims(format!(
            "dense mapping matrix limited to windows of {B_TILDE_MAX_LEN} samples, got {n}"
        )));
    }
    let fft = UnitaryFft::new(n);
    let spectra: Vec<Vec<C64>> = basis
        .vectors
        .iter()
        .map(|u| {
            let mut s: Vec<C64> = u.iter().map(|&x| C64::new(x, 0.0)).collect();
            fft.forward(&mut s);
            s
        })
        .collect();
    let qb = basis.order();
    let bins = 2 * max_doppler + 1;
    let scale = 1.0 / (n as f64).sqrt();
    Ok(CMat::from_fn(n, bins * qb, |k, col| {
        let q = (col / qb) as i64 - max_doppler as i64;
        let b = col % qb;
        let idx = (k as i64 - q).rem_euclid(n as i64) as usize;
        spectra[b][idx] * scale
    }))
}
