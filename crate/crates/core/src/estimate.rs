//! Off-grid coefficient estimation, channel reconstruction, DPSS
//! extrapolation, the reduced-rank MMSE predictor and the multi-band
//! single-BEM baseline.

use crate::channel::{GridDims, SupportMask, TapTrajectories};
use crate::dpss::{prolate_apply, prolate_kernel, tone, DpssBasis, ExtendedBasis, LAMBDA_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, condition_number, convolve_complex, convolve_real, lstsq, CMat, CVec};
use crate::sensing::{ColumnIndex, MeasurementMatrix, Sensing};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Prior covariance assumed for the BEM coefficients of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorModel {
    /// Per-index variances implied by uniform fractional Doppler shifts.
    #[default]
    Exact,
    /// One common variance, the mean of the exact ones.
    Isotropic,
}

/// Which side of the matrix inversion lemma is factorised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveForm {
    /// The smaller of the two.
    #[default]
    Auto,
    /// Unknowns-by-unknowns system.
    Gram,
    /// Rows-by-rows system.
    Covariance,
}

/// Prior variance of each coefficient of a grid point carrying `paths`
/// paths of variance `sigma_alpha_sq` with shifts uniform over one bin.
pub fn beta_prior_variances(
    basis: &DpssBasis,
    paths: usize,
    sigma_alpha_sq: f64,
    freq_len: usize,
    model: PriorModel,
) -> Vec<f64> {
    // the shift covariance sinc(k/N) is N times the prolate kernel at W = 1/(2N)
    let w = 0.5 / freq_len as f64;
    let scale = paths as f64 * sigma_alpha_sq * freq_len as f64;
    let exact: Vec<f64> = basis
        .vectors
        .iter()
        .map(|u| {
            let cu = prolate_apply(u, w);
            scale * u.iter().zip(&cu).map(|(a, b)| a * b).sum::<f64>().max(0.0)
        })
        .collect();
    match model {
        PriorModel::Exact => exact,
        PriorModel::Isotropic => {
            let mean = exact.iter().sum::<f64>() / exact.len().max(1) as f64;
            vec![mean; exact.len()]
        }
    }
}

/// Linear MMSE solution.
#[derive(Debug, Clone)]
pub struct LmmseSolution {
    pub beta: Vec<C64>,
    /// Form actually factorised.
    pub form: SolveForm,
    /// The regularised system was singular and a minimum-norm least-squares
    /// solution was returned instead.
    pub min_norm_fallback: bool,
    /// Condition number of the factorised system, when small enough to
    /// compute.
    pub condition: Option<f64>,
}

const CONDITION_MAX_DIM: usize = 512;

/// `beta = D A^H (A D A^H + s2 S)^{-1} y` for the prior `D = diag(prior)`
/// and noise covariance `s2 S` with `S = diag(noise_scale)`. Columns with
/// zero prior variance are estimated as zero.
pub fn lmmse(
    m: &CMat,
    y: &[C64],
    prior: &[f64],
    sigma_w_sq: f64,
    noise_scale: &[f64],
    form: SolveForm,
) -> Result<LmmseSolution> {
    let (rows, cols) = m.shape();
    if y.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: y.len(),
        });
    }
    if prior.len() != cols {
        return Err(Error::LengthMismatch {
            expected: cols,
            got: prior.len(),
        });
    }
    if noise_scale.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: noise_scale.len(),
        });
    }
    if !(sigma_w_sq >= 0.0) || prior.iter().any(|&p| !(p >= 0.0)) || noise_scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter("variances must be non-negative".into()));
    }
    let active: Vec<usize> = (0..cols).filter(|&j| prior[j] > 0.0).collect();
    let k = active.len();
    // whiten the rows so the noise is white with variance sigma_w_sq
    let inv_sqrt: Vec<f64> = noise_scale.iter().map(|s| 1.0 / s.sqrt()).collect();
    let a = CMat::from_fn(rows, k, |i, j| m[(i, active[j])] * inv_sqrt[i]);
    let yw = CVec::from_iterator(rows, y.iter().zip(&inv_sqrt).map(|(v, s)| v * *s));
    let d: Vec<f64> = active.iter().map(|&j| prior[j]).collect();
    let form = match form {
        SolveForm::Auto if k <= rows => SolveForm::Gram,
        SolveForm::Auto => SolveForm::Covariance,
        f => f,
    };
    let mut fallback = false;
    let (sol, condition) = if k == 0 {
        (CVec::zeros(0), None)
    } else {
        match form {
            SolveForm::Gram => {
                let mut g = a.adjoint() * &a;
                for (j, dj) in d.iter().enumerate() {
                    g[(j, j)] += C64::new(sigma_w_sq / dj, 0.0);
                }
                let cond = (k <= CONDITION_MAX_DIM).then(|| condition_number(&g));
                let rhs = CMat::from_column_slice(k, 1, (a.adjoint() * &yw).as_slice());
                match cholesky_solve(g, &rhs) {
                    Some(x) => (CVec::from_column_slice(x.as_slice()), cond),
                    None => {
                        fallback = true;
                        (lstsq(&a, &yw)?.x, cond)
                    }
                }
            }
            _ => {
                let mut ad = a.clone();
                for (j, dj) in d.iter().enumerate() {
                    ad.column_mut(j).scale_mut(*dj);
                }
                let mut kmat = &ad * a.adjoint();
                for i in 0..rows {
                    kmat[(i, i)] += C64::new(sigma_w_sq, 0.0);
                }
                let cond = (rows <= CONDITION_MAX_DIM).then(|| condition_number(&kmat));
                let rhs = CMat::from_column_slice(rows, 1, yw.as_slice());
                match cholesky_solve(kmat, &rhs) {
                    Some(z) => (ad.adjoint() * CVec::from_column_slice(z.as_slice()), cond),
                    None => {
                        fallback = true;
                        (lstsq(&a, &yw)?.x, cond)
                    }
                }
            }
        }
    };
    let mut beta = vec![ZERO; cols];
    for (j, &c) in active.iter().enumerate() {
        beta[c] = sol[j];
    }
    Ok(LmmseSolution {
        beta,
        form,
        min_norm_fallback: fallback,
        condition,
    })
}

/// Noise and prior parameters of the off-grid estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmseParams {
    pub paths: usize,
    pub sigma_alpha_sq: f64,
    pub sigma_w_sq: f64,
    #[serde(default)]
    pub prior: PriorModel,
    #[serde(default)]
    pub form: SolveForm,
}

/// Estimated coefficients and the reconstructed window.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub columns: Vec<ColumnIndex>,
    pub beta_hat: Vec<C64>,
    pub h_hat: TapTrajectories,
    pub condition: Option<f64>,
    /// `||y - M beta_hat||`.
    pub residual: f64,
    pub min_norm_fallback: bool,
}

/// LMMSE estimate of the BEM coefficients on a known support. An empty
/// support yields an all-zero estimate.
pub fn estimate_offgrid(
    sensing: &Sensing,
    support: &SupportMask,
    basis: &DpssBasis,
    y: &[C64],
    params: &LmmseParams,
) -> Result<EstimationResult> {
    let dims = sensing.waveform().dims();
    if support.count() == 0 {
        return Ok(EstimationResult {
            columns: Vec::new(),
            beta_hat: Vec::new(),
            h_hat: TapTrajectories::zeros(dims.delay_taps, 0, basis.len()),
            condition: None,
            residual: y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt(),
            min_norm_fallback: false,
        });
    }
    let mm = sensing.offgrid(support, basis)?;
    estimate_with_matrix(&mm, y, basis, dims, params)
}

/// LMMSE estimate from an assembled off-grid matrix.
pub fn estimate_with_matrix(
    mm: &MeasurementMatrix,
    y: &[C64],
    basis: &DpssBasis,
    dims: GridDims,
    params: &LmmseParams,
) -> Result<EstimationResult> {
    let per_b = beta_prior_variances(basis, params.paths, params.sigma_alpha_sq, dims.frame_len, params.prior);
    let prior: Vec<f64> = mm
        .columns
        .iter()
        .map(|c| per_b[c.basis.unwrap_or(0)])
        .collect();
    let sol = lmmse(&mm.matrix, y, &prior, params.sigma_w_sq, &mm.noise_scale, params.form)?;
    let fit = &mm.matrix * CVec::from_column_slice(&sol.beta);
    let residual = fit
        .iter()
        .zip(y)
        .map(|(a, b)| (b - a).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let h_hat = reconstruct(&sol.beta, &mm.columns, basis, dims)?;
    Ok(EstimationResult {
        columns: mm.columns.clone(),
        beta_hat: sol.beta,
        h_hat,
        condition: sol.condition,
        residual,
        min_norm_fallback: sol.min_norm_fallback,
    })
}

fn check_columns(beta: &[C64], columns: &[ColumnIndex], basis: &DpssBasis, dims: GridDims) -> Result<()> {
    if beta.len() != columns.len() {
        return Err(Error::LengthMismatch {
            expected: columns.len(),
            got: beta.len(),
        });
    }
    for c in columns {
        if c.delay >= dims.delay_taps || c.doppler.unsigned_abs() as usize > dims.max_doppler {
            return Err(Error::InvalidDims(format!("column ({}, {}) outside the grid", c.delay, c.doppler)));
        }
        if c.basis.is_none_or(|b| b >= basis.order()) {
            return Err(Error::InvalidDims(format!("column basis index {:?} outside the basis", c.basis)));
        }
    }
    Ok(())
}

/// Tap trajectories over the basis window from BEM coefficients.
pub fn reconstruct(beta: &[C64], columns: &[ColumnIndex], basis: &DpssBasis, dims: GridDims) -> Result<TapTrajectories> {
    check_columns(beta, columns, basis, dims)?;
    let len = basis.len();
    let mut h = TapTrajectories::zeros(dims.delay_taps, 0, len);
    for (c, b) in columns.iter().zip(beta) {
        let u = &basis.vectors[c.basis.unwrap_or(0)];
        let row = h.row_mut(c.delay);
        for (n, v) in row.iter_mut().enumerate() {
            *v += b * tone(c.doppler, n as i64, dims.frame_len) * u[n];
        }
    }
    Ok(h)
}

/// Extrapolated trajectories over a time range.
#[derive(Debug, Clone)]
pub struct PredictionResult {
    pub h: TapTrajectories,
    /// Basis indices dropped because their eigenvalue is below the floor.
    pub excluded: Vec<usize>,
    /// Coefficient energy carried by the dropped indices.
    pub excluded_energy: f64,
}

impl PredictionResult {
    /// Mean squared error over the first `horizon` samples of the range,
    /// summed over taps.
    pub fn horizon_mse(&self, truth: &TapTrajectories, horizon: usize) -> Result<f64> {
        if horizon == 0 || horizon > self.h.len || truth.start > self.h.start {
            return Err(Error::InvalidParameter(format!("horizon {horizon} not covered")));
        }
        let off = (self.h.start - truth.start) as usize;
        if off + horizon > truth.len || truth.taps != self.h.taps {
            return Err(Error::InvalidParameter("ground truth does not cover the horizon".into()));
        }
        let mut s = 0.0;
        for l in 0..self.h.taps {
            let p = &self.h.row(l)[..horizon];
            let t = &truth.row(l)[off..off + horizon];
            s += p.iter().zip(t).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        Ok(s / horizon as f64)
    }
}

/// Evaluates the BEM with extended basis sequences over
/// `start..start+len`; in-window samples coincide with [`reconstruct`].
pub fn extrapolate(
    beta: &[C64],
    columns: &[ColumnIndex],
    basis: &DpssBasis,
    dims: GridDims,
    start: i64,
    len: usize,
    floor: f64,
) -> Result<PredictionResult> {
    check_columns(beta, columns, basis, dims)?;
    let ext = ExtendedBasis::new(basis, start, len, floor);
    let mut h = TapTrajectories::zeros(dims.delay_taps, start, len);
    let mut excluded_energy = 0.0;
    for (c, b) in columns.iter().zip(beta) {
        let bi = c.basis.unwrap_or(0);
        if ext.excluded.contains(&bi) {
            excluded_energy += b.norm_sqr();
            continue;
        }
        let u = &ext.columns[bi];
        let row = h.row_mut(c.delay);
        for (i, v) in row.iter_mut().enumerate() {
            *v += b * tone(c.doppler, start + i as i64, dims.frame_len) * u[i];
        }
    }
    Ok(PredictionResult {
        h,
        excluded: ext.excluded,
        excluded_energy,
    })
}

/// Prediction over the `horizon` samples following the basis window.
pub fn predict(
    beta: &[C64],
    columns: &[ColumnIndex],
    basis: &DpssBasis,
    dims: GridDims,
    horizon: usize,
) -> Result<PredictionResult> {
    extrapolate(beta, columns, basis, dims, basis.len() as i64, horizon, LAMBDA_FLOOR)
}

/// Rank-limited MMSE prediction of a band-limited point trajectory from its
/// samples `h` over the basis window, evaluated over `start..start+len`.
pub fn reduced_rank_mmse_range(
    h: &[C64],
    q: i64,
    basis: &DpssBasis,
    rank: usize,
    freq_len: usize,
    start: i64,
    len: usize,
) -> Result<Vec<C64>> {
    let t = basis.len();
    if h.len() != t {
        return Err(Error::LengthMismatch { expected: t, got: h.len() });
    }
    if rank == 0 || rank > basis.order() {
        return Err(Error::InvalidParameter(format!(
            "rank {rank} outside 1..={}",
            basis.order()
        )));
    }
    for b in 0..rank {
        if basis.lambdas[b] < LAMBDA_FLOOR {
            return Err(Error::BelowFloor {
                index: b,
                lambda: basis.lambdas[b],
                floor: LAMBDA_FLOOR,
            });
        }
    }
    // g = U diag(1/lambda) U^T E^H h
    let d: Vec<C64> = h
        .iter()
        .enumerate()
        .map(|(m, v)| v * tone(q, m as i64, freq_len).conj())
        .collect();
    let mut g = vec![ZERO; t];
    for b in 0..rank {
        let u = &basis.vectors[b];
        let c: C64 = u.iter().zip(&d).map(|(a, v)| v * *a).sum::<C64>() / basis.lambdas[b];
        for (gm, um) in g.iter_mut().zip(u) {
            *gm += c * *um;
        }
    }
    // cross-correlation with the targets: sum_m C(n - m) g[m]
    let w = basis.spec.half_bandwidth;
    let dmin = start - (t as i64 - 1);
    let kernel: Vec<f64> = (0..(len + t - 1) as i64).map(|j| prolate_kernel(j + dmin, w)).collect();
    let re: Vec<f64> = g.iter().map(|v| v.re).collect();
    let im: Vec<f64> = g.iter().map(|v| v.im).collect();
    let cr = convolve_real(&re, &kernel);
    let ci = convolve_real(&im, &kernel);
    Ok((0..len)
        .map(|i| {
            let n = start + i as i64;
            C64::new(cr[i + t - 1], ci[i + t - 1]) * tone(q, n, freq_len)
        })
        .collect())
}

/// Single-target form of [`reduced_rank_mmse_range`].
pub fn reduced_rank_mmse(h: &[C64], q: i64, basis: &DpssBasis, rank: usize, freq_len: usize, target: i64) -> Result<C64> {
    Ok(reduced_rank_mmse_range(h, q, basis, rank, freq_len, target, 1)?[0])
}

/// `(1/len) sum_l n_l sum_{q} ||beta_lq - beta_hat_lq||^2` with `n_l` the
/// number of points at delay `l`; bounds the channel MSE of the
/// reconstruction over a `len`-sample window.
pub fn coefficient_error_bound(beta_err: &[C64], columns: &[ColumnIndex], len: usize) -> f64 {
    let mut per_delay: BTreeMap<usize, (std::collections::BTreeSet<i64>, f64)> = BTreeMap::new();
    for (c, e) in columns.iter().zip(beta_err) {
        let entry = per_delay.entry(c.delay).or_default();
        entry.0.insert(c.doppler);
        entry.1 += e.norm_sqr();
    }
    per_delay
        .values()
        .map(|(qs, s)| qs.len() as f64 * s)
        .sum::<f64>()
        / len as f64
}

/// Size of the codebook of shifted elementary bases.
pub fn multi_shifted_codebook_size(dims: &GridDims, q_bem: usize) -> usize {
    q_bem * dims.delay_taps * dims.doppler_bins()
}

/// Number of basis vectors needed to cover every nonempty Doppler pattern
/// of every tap with a dedicated single basis of `q_bem` vectors each.
pub fn single_bem_codebook_size(dims: &GridDims, q_bem: usize) -> u128 {
    let patterns = (1u128 << dims.doppler_bins()) - 1;
    dims.delay_taps as u128 * patterns * q_bem as u128
}

/// Generator of the multi-band prolate matrix at lag `k`.
pub fn multiband_kernel(k: i64, dopplers: &[i64], w: f64, freq_len: usize) -> C64 {
    let s: C64 = dopplers.iter().map(|&q| tone(q, k, freq_len)).sum();
    s * prolate_kernel(k, w)
}

/// Product of the multi-band prolate matrix with `x`.
pub fn multiband_apply(x: &[C64], dopplers: &[i64], w: f64, freq_len: usize) -> Vec<C64> {
    let t = x.len() as i64;
    if t == 0 {
        return Vec::new();
    }
    let kernel: Vec<C64> = (-(t - 1)..t).map(|k| multiband_kernel(k, dopplers, w, freq_len)).collect();
    let conv = convolve_complex(x, &kernel);
    conv[(t - 1) as usize..(2 * t - 1) as usize].to_vec()
}

/// Leading eigenvectors of the multi-band prolate matrix for one Doppler
/// pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleBemBasis {
    pub dopplers: Vec<i64>,
    pub half_bandwidth: f64,
    pub freq_len: usize,
    pub vectors: Vec<Vec<C64>>,
    pub lambdas: Vec<f64>,
}

fn fix_phase(v: &mut [C64]) {
    let peak = v.iter().fold(0.0f64, |a, b| a.max(b.norm()));
    if let Some(first) = v.iter().find(|x| x.norm() > 1e-6 * peak) {
        let rot = first.conj() / first.norm();
        v.iter_mut().for_each(|x| *x *= rot);
    }
}

/// Rayleigh-Ritz on the span of the shifted elementary sequences of
/// `elementary`, keeping `order` vectors.
pub fn single_bem_basis(dopplers: &[i64], elementary: &DpssBasis, order: usize, freq_len: usize) -> Result<SingleBemBasis> {
    if dopplers.is_empty() {
        return Err(Error::EmptySupport);
    }
    let t = elementary.len();
    let k = elementary.order();
    let r = dopplers.len() * k;
    if order == 0 || order > r || r > t {
        return Err(Error::InvalidParameter(format!(
            "basis order {order} not available from a {r}-dimensional subspace of length {t}"
        )));
    }
    let w = elementary.spec.half_bandwidth;
    let v = CMat::from_fn(t, r, |n, j| {
        let q = dopplers[j / k];
        tone(q, n as i64, freq_len) * elementary.vectors[j % k][n]
    });
    let qm = v.qr().q();
    let mut cq = CMat::zeros(t, r);
    for j in 0..r {
        let col: Vec<C64> = qm.column(j).iter().cloned().collect();
        cq.set_column(j, &CVec::from_vec(multiband_apply(&col, dopplers, w, freq_len)));
    }
    let h = qm.adjoint() * cq;
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut idx: Vec<usize> = (0..r).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = Vec::with_capacity(order);
    let mut lambdas = Vec::with_capacity(order);
    for &j in idx.iter().take(order) {
        let mut x: Vec<C64> = (&qm * eig.eigenvectors.column(j)).iter().cloned().collect();
        fix_phase(&mut x);
        let cx = multiband_apply(&x, dopplers, w, freq_len);
        let rq: f64 = x.iter().zip(&cx).map(|(a, b)| (a.conj() * b).re).sum();
        vectors.push(x);
        lambdas.push(rq.max(0.0));
    }
    Ok(SingleBemBasis {
        dopplers: dopplers.to_vec(),
        half_bandwidth: w,
        freq_len,
        vectors,
        lambdas,
    })
}

impl SingleBemBasis {
    pub fn len(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn order(&self) -> usize {
        self.vectors.len()
    }

    /// Extended samples of vector `j` over `start..start+len`; in-window
    /// samples are the vector itself. `None` below the eigenvalue floor.
    pub fn extension(&self, j: usize, start: i64, len: usize, floor: f64) -> Option<Vec<C64>> {
        if self.lambdas[j] < floor {
            return None;
        }
        let t = self.len() as i64;
        let dmin = start - (t - 1);
        let kernel: Vec<C64> = (0..(len as i64 + t - 1))
            .map(|i| multiband_kernel(i + dmin, &self.dopplers, self.half_bandwidth, self.freq_len))
            .collect();
        let conv = convolve_complex(&self.vectors[j], &kernel);
        let inv = 1.0 / self.lambdas[j];
        Some(
            (0..len)
                .map(|i| {
                    let n = start + i as i64;
                    if (0..t).contains(&n) {
                        self.vectors[j][n as usize]
                    } else {
                        conv[i + t as usize - 1] * inv
                    }
                })
                .collect(),
        )
    }
}

/// Single-BEM bases keyed by Doppler pattern; the number of stored vectors
/// tracks codebook growth.
#[derive(Debug)]
pub struct SingleBemCache {
    pub freq_len: usize,
    pub order_per_bin: usize,
    elementary: DpssBasis,
    map: Mutex<BTreeMap<Vec<i64>, Arc<SingleBemBasis>>>,
}

/// Extra elementary sequences per bin kept in the Rayleigh-Ritz subspace.
pub const RITZ_EXTRA: usize = 4;

impl SingleBemCache {
    /// Cache for windows of `len` samples at half-bandwidth `1/(2 freq_len)`.
    pub fn new(len: usize, freq_len: usize, order_per_bin: usize) -> Result<Self> {
        let spec = crate::dpss::ProlateSpec::narrowband(len, freq_len, (order_per_bin + RITZ_EXTRA).min(len));
        Ok(Self {
            freq_len,
            order_per_bin,
            elementary: crate::dpss::compute_dpss(&spec)?,
            map: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.elementary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Basis for a Doppler pattern, computed on first use.
    pub fn get(&self, dopplers: &[i64]) -> Result<Arc<SingleBemBasis>> {
        let mut map = self.map.lock().expect("cache lock poisoned");
        if let Some(b) = map.get(dopplers) {
            return Ok(b.clone());
        }
        let order = self.order_per_bin * dopplers.len();
        let b = Arc::new(single_bem_basis(dopplers, &self.elementary, order, self.freq_len)?);
        map.insert(dopplers.to_vec(), b.clone());
        Ok(b)
    }

    /// Distinct Doppler patterns stored.
    pub fn patterns(&self) -> usize {
        self.map.lock().expect("cache lock poisoned").len()
    }

    /// Basis vectors stored over all patterns.
    pub fn entries(&self) -> usize {
        self.map
            .lock()
            .expect("cache lock poisoned")
            .values()
            .map(|b| b.order())
            .sum()
    }
}

/// Single-BEM estimate: one basis per active delay.
#[derive(Debug, Clone)]
pub struct SingleBemEstimate {
    pub delays: Vec<usize>,
    pub bases: Vec<Arc<SingleBemBasis>>,
    pub coefficients: Vec<Vec<C64>>,
    pub h_hat: TapTrajectories,
    pub min_norm_fallback: bool,
}

impl SingleBemEstimate {
    /// Extrapolated trajectories over `start..start+len`.
    pub fn extrapolate(&self, taps: usize, start: i64, len: usize, floor: f64) -> TapTrajectories {
        let mut h = TapTrajectories::zeros(taps, start, len);
        for ((&l, basis), coef) in self.delays.iter().zip(&self.bases).zip(&self.coefficients) {
            for (j, c) in coef.iter().enumerate() {
                if let Some(v) = basis.extension(j, start, len, floor) {
                    for (x, e) in h.row_mut(l).iter_mut().zip(v) {
                        *x += c * e;
                    }
                }
            }
        }
        h
    }
}

/// LMMSE estimate with one multi-band basis per active delay.
pub fn estimate_single_bem(
    sensing: &Sensing,
    support: &SupportMask,
    cache: &SingleBemCache,
    y: &[C64],
    params: &LmmseParams,
) -> Result<SingleBemEstimate> {
    let dims = sensing.waveform().dims();
    let t = sensing.waveform().span();
    if cache.len() != t {
        return Err(Error::LengthMismatch { expected: t, got: cache.len() });
    }
    let n = dims.frame_len;
    let w_shift = 0.5 / n as f64;
    let delays = support.active_delays();
    let mut bases = Vec::with_capacity(delays.len());
    let mut cols: Vec<Vec<C64>> = Vec::new();
    let mut prior = Vec::new();
    for &l in &delays {
        let dop = support.dopplers_at(l);
        let b = cache.get(&dop)?;
        for v in &b.vectors {
            cols.push(sensing.column(l, |tt| v[tt.clamp(0, t as i64 - 1) as usize]));
            let kv = multiband_apply(v, &dop, w_shift, n);
            let quad: f64 = v.iter().zip(&kv).map(|(a, c)| (a.conj() * c).re).sum();
            prior.push(params.paths as f64 * params.sigma_alpha_sq * n as f64 * quad.max(0.0));
        }
        bases.push(b);
    }
    let rows = sensing.rows();
    let m = CMat::from_fn(rows, cols.len(), |i, j| cols[j][i]);
    let sol = lmmse(&m, y, &prior, params.sigma_w_sq, &sensing.noise_scale(), params.form)?;
    let mut coefficients = Vec::with_capacity(delays.len());
    let mut h_hat = TapTrajectories::zeros(dims.delay_taps, 0, t);
    let mut off = 0;
    for (&l, b) in delays.iter().zip(&bases) {
        let c = sol.beta[off..off + b.order()].to_vec();
        off += b.order();
        for (cj, v) in c.iter().zip(&b.vectors) {
            for (x, e) in h_hat.row_mut(l).iter_mut().zip(v) {
                *x += cj * e;
            }
        }
        coefficients.push(c);
    }
    Ok(SingleBemEstimate {
        delays,
        bases,
        coefficients,
        h_hat,
        min_norm_fallback: sol.min_norm_fallback,
    })
}
