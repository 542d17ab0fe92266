//! Selected eigenpairs of a real symmetric tridiagonal matrix by Sturm
//! bisection and inverse iteration.

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix: `diag[i]` on the diagonal and `off[i]`
/// coupling rows `i` and `i + 1`.
#[derive(Debug, Clone)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::InvalidDims(format!(
                "tridiagonal with {} diagonal and {} off-diagonal entries",
                diag.len(),
                off.len()
            )));
        }
        Ok(Self { diag, off })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Gershgorin interval containing the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    pub fn count_below(&self, x: f64) -> usize {
        let (lo, hi) = self.gershgorin();
        let tiny = f64::MIN_POSITIVE.sqrt() * (hi - lo).abs().max(1.0);
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.len() {
            let denom = if q.abs() < tiny { tiny.copysign(q) } else { q };
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Eigenvalue with ascending index `k` by bisection.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * scale {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(T - mu I) x = b` by Gaussian elimination with partial
    /// pivoting; exactly singular pivots are nudged.
    fn shifted_solve(&self, mu: f64, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let (glo, ghi) = self.gershgorin();
        let nudge = f64::EPSILON * (ghi - glo).abs().max(1.0);
        // rows hold up to three nonzeros after pivoting: u0 (diag), u1, u2
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut rhs = b.to_vec();
        let mut cur_d = self.diag[0] - mu;
        let mut cur_e = if n > 1 { self.off[0] } else { 0.0 };
        let mut cur_f = 0.0;
        for i in 0..n {
            if i + 1 == n {
                u0[i] = if cur_d == 0.0 { nudge } else { cur_d };
                break;
            }
            let sub = self.off[i];
            let nd = self.diag[i + 1] - mu;
            let ne = if i + 2 < n { self.off[i + 1] } else { 0.0 };
            if cur_d.abs() >= sub.abs() {
                let piv = if cur_d == 0.0 { nudge } else { cur_d };
                let m = sub / piv;
                u0[i] = piv;
                u1[i] = cur_e;
                u2[i] = cur_f;
                rhs[i + 1] -= m * rhs[i];
                cur_d = nd - m * cur_e;
                cur_e = ne - m * cur_f;
                cur_f = 0.0;
            } else {
                // swap rows i and i + 1
                let m = cur_d / sub;
                u0[i] = sub;
                u1[i] = nd;
                u2[i] = ne;
                rhs.swap(i, i + 1);
                rhs[i + 1] -= m * rhs[i];
                let d2 = cur_e - m * nd;
                let e2 = cur_f - m * ne;
                cur_d = d2;
                cur_e = e2;
                cur_f = 0.0;
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = rhs[i];
            if i + 1 < n {
                v -= u1[i] * x[i + 1];
            }
            if i + 2 < n {
                v -= u2[i] * x[i + 2];
            }
            x[i] = v / u0[i];
        }
        x
    }

    /// Eigenpairs for the `count` largest eigenvalues, descending. Vectors
    /// have unit norm and are orthogonalised against earlier ones.
    pub fn top_eigenpairs(&self, count: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        let n = self.len();
        if count > n {
            return Err(Error::InvalidParameter(format!(
                "requested {count} eigenpairs of a {n}x{n} matrix"
            )));
        }
        let mut out: Vec<(f64, Vec<f64>)> = Vec::with_capacity(count);
        for j in 0..count {
            let mu = self.eigenvalue(n - 1 - j);
            // deterministic start vector with no particular symmetry
            let mut x: Vec<f64> = (0..n)
                .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract())
                .collect();
            normalize(&mut x);
            for _ in 0..4 {
                x = self.shifted_solve(mu, &x);
                for (_, v) in &out {
                    let d: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
                    x.iter_mut().zip(v).for_each(|(xi, vi)| *xi -= d * vi);
                }
                if !normalize(&mut x) {
                    return Err(Error::Eigen(format!("inverse iteration collapsed at {j}")));
                }
            }
            out.push((mu, x));
        }
        Ok(out)
    }
}

fn normalize(x: &mut [f64]) -> bool {
    let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !nrm.is_finite() || nrm == 0.0 {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= nrm);
    true
}
