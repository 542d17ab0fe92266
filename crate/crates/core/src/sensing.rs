//! Measurement matrices, hierarchical hard thresholding pursuit and an
//! empirical hierarchical RIP probe.

use crate::channel::{GridDims, SupportMask};
use crate::dpss::{tone, DpssBasis};
use crate::error::{Error, Result};
use crate::linalg::{lstsq, select_columns, CMat, CVec};
use crate::waveform::{PilotPlan, Waveform, WaveformKind};
use crate::C64;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Grid point (and basis index for off-grid models) behind one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnIndex {
    pub delay: usize,
    pub doppler: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<usize>,
}

/// Observed pilot samples as a linear function of the channel unknowns.
#[derive(Debug, Clone)]
pub struct MeasurementMatrix {
    pub matrix: CMat,
    pub columns: Vec<ColumnIndex>,
    /// Noise variance of each row relative to one received sample.
    pub noise_scale: Vec<f64>,
}

impl MeasurementMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Root-mean-square column norm.
    pub fn rms_column_norm(&self) -> f64 {
        let n = self.matrix.ncols().max(1) as f64;
        (self.matrix.iter().map(|v| v.norm_sqr()).sum::<f64>() / n).sqrt()
    }

    /// Sub-matrix with the listed columns.
    pub fn select(&self, cols: &[usize]) -> MeasurementMatrix {
        MeasurementMatrix {
            matrix: select_columns(&self.matrix, cols),
            columns: cols.iter().map(|&c| self.columns[c]).collect(),
            noise_scale: self.noise_scale.clone(),
        }
    }
}

/// Row layout after the optional AFDM guard folding.
#[derive(Debug, Clone)]
struct RowMap {
    /// For every output row, the transform-domain indices summed into it.
    sources: Vec<Vec<usize>>,
}

/// Pilot transmission plus receiver-side sample selection for one
/// waveform and pilot plan.
#[derive(Debug, Clone)]
pub struct Sensing {
    wf: Waveform,
    plan: PilotPlan,
    stream: Vec<C64>,
    rows: RowMap,
}

impl Sensing {
    /// `fold` sums the two guard strips of every AFDM pilot region into the
    /// region interior, modulo `(L-1)P + 1`; ignored for other waveforms.
    pub fn new(wf: Waveform, plan: PilotPlan, fold: bool) -> Result<Self> {
        if plan.kind != wf.kind() || plan.frame_len != wf.dims().frame_len {
            return Err(Error::InvalidParameter("pilot plan does not match the waveform".into()));
        }
        let stream = wf.modulate(&plan.symbols())?;
        let dims = wf.dims();
        let n = dims.frame_len;
        let rows = match wf.config().scheme {
            crate::waveform::Scheme::Afdm { p_afdm, .. } if fold => {
                let q = dims.max_doppler as i64;
                let width = (dims.delay_taps - 1) * p_afdm + 1;
                let region = width as i64 - 1 + 2 * q + 1;
                let mut sources = Vec::new();
                for &m in &plan.positions {
                    let mut group = vec![Vec::new(); width];
                    for rel in -q..region - q {
                        let k = (m as i64 + rel).rem_euclid(n as i64) as usize;
                        group[rel.rem_euclid(width as i64) as usize].push(k);
                    }
                    sources.extend(group);
                }
                RowMap { sources }
            }
            _ => RowMap {
                sources: plan.observed.iter().map(|&k| vec![k]).collect(),
            },
        };
        Ok(Self {
            wf,
            plan,
            stream,
            rows,
        })
    }

    pub fn waveform(&self) -> &Waveform {
        &self.wf
    }

    pub fn plan(&self) -> &PilotPlan {
        &self.plan
    }

    /// Transmit stream holding the pilot frame.
    pub fn stream(&self) -> &[C64] {
        &self.stream
    }

    pub fn rows(&self) -> usize {
        self.rows.sources.len()
    }

    pub fn noise_scale(&self) -> Vec<f64> {
        self.rows.sources.iter().map(|s| s.len() as f64).collect()
    }

    /// Demodulates received times `0..span` and keeps the sensing rows.
    pub fn observe(&self, r: &[C64]) -> Result<Vec<C64>> {
        let y = self.wf.demodulate(r)?;
        Ok(self
            .rows
            .sources
            .iter()
            .map(|s| s.iter().map(|&k| y[k]).sum())
            .collect())
    }

    /// Observed rows for a single delay-`l` path with time-varying gain
    /// `gain(t)`, sampled at the waveform's model times.
    pub fn column<F: Fn(i64) -> C64>(&self, l: usize, gain: F) -> Vec<C64> {
        let pre = self.wf.prefix_len();
        let r: Vec<C64> = (0..self.wf.span())
            .map(|t| self.stream[t + pre - l] * gain(self.wf.model_time(t as i64)))
            .collect();
        self.observe(&r).expect("span matches by construction")
    }

    /// On-grid matrix over all `L (2Q+1)` points in flat grid order.
    pub fn ongrid(&self) -> MeasurementMatrix {
        let dims = self.wf.dims();
        let n = dims.frame_len;
        let columns: Vec<ColumnIndex> = (0..dims.num_points())
            .map(|i| {
                let (delay, doppler) = dims.point(i);
                ColumnIndex {
                    delay,
                    doppler,
                    basis: None,
                }
            })
            .collect();
        let data: Vec<Vec<C64>> = columns
            .iter()
            .map(|c| self.column(c.delay, |t| tone(c.doppler, t, n)))
            .collect();
        self.assemble(data, columns)
    }

    /// Off-grid matrix over the active points of `support`, columns ordered
    /// delay-major, then Doppler, then basis index.
    pub fn offgrid(&self, support: &SupportMask, basis: &DpssBasis) -> Result<MeasurementMatrix> {
        let pts = support.points();
        if pts.is_empty() {
            return Err(Error::EmptySupport);
        }
        self.offgrid_points(&pts, basis)
    }

    /// Off-grid matrix for every grid point; columns of a given support can
    /// be picked with [`offgrid_columns`].
    pub fn offgrid_dictionary(&self, basis: &DpssBasis) -> Result<MeasurementMatrix> {
        let dims = self.wf.dims();
        let pts: Vec<(usize, i64)> = (0..dims.num_points()).map(|i| dims.point(i)).collect();
        self.offgrid_points(&pts, basis)
    }

    fn offgrid_points(&self, pts: &[(usize, i64)], basis: &DpssBasis) -> Result<MeasurementMatrix> {
        if basis.len() != self.wf.span() {
            return Err(Error::LengthMismatch {
                expected: self.wf.span(),
                got: basis.len(),
            });
        }
        let n = self.wf.dims().frame_len;
        let mut columns = Vec::new();
        let mut data = Vec::new();
        let span = self.wf.span() as i64;
        for &(l, q) in pts {
            for (b, u) in basis.vectors.iter().enumerate() {
                columns.push(ColumnIndex {
                    delay: l,
                    doppler: q,
                    basis: Some(b),
                });
                data.push(self.column(l, |t| {
                    let t = t.clamp(0, span - 1);
                    tone(q, t, n) * u[t as usize]
                }));
            }
        }
        Ok(self.assemble(data, columns))
    }

    fn assemble(&self, data: Vec<Vec<C64>>, columns: Vec<ColumnIndex>) -> MeasurementMatrix {
        let rows = self.rows();
        let matrix = CMat::from_fn(rows, data.len(), |i, j| data[j][i]);
        MeasurementMatrix {
            matrix,
            columns,
            noise_scale: self.noise_scale(),
        }
    }
}

/// Column positions of the support's points inside an off-grid dictionary
/// with `order` basis vectors per point.
pub fn offgrid_columns(dims: &GridDims, support: &SupportMask, order: usize) -> Vec<usize> {
    support
        .points()
        .into_iter()
        .flat_map(|(l, q)| {
            let base = dims.point_index(l, q) * order;
            base..base + order
        })
        .collect()
}

/// On-grid measurement matrix with all grid columns.
pub fn build_measurement_ongrid(wf: &Waveform, plan: &PilotPlan, fold: bool) -> Result<MeasurementMatrix> {
    Ok(Sensing::new(wf.clone(), plan.clone(), fold)?.ongrid())
}

/// Off-grid measurement matrix restricted to the support.
pub fn build_measurement_offgrid(
    wf: &Waveform,
    plan: &PilotPlan,
    support: &SupportMask,
    basis: &DpssBasis,
    fold: bool,
) -> Result<MeasurementMatrix> {
    Sensing::new(wf.clone(), plan.clone(), fold)?.offgrid(support, basis)
}

/// Whether the waveform supports guard folding.
pub fn folding_applies(kind: WaveformKind) -> bool {
    kind == WaveformKind::Afdm
}

/// Hierarchical support: active blocks and the active entries in each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierSupport {
    pub block_len: usize,
    /// `(block, entries)` with blocks ascending and entries ascending.
    pub blocks: Vec<(usize, Vec<usize>)>,
}

impl HierSupport {
    /// Flat indices, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .flat_map(|(b, es)| es.iter().map(move |e| b * self.block_len + e))
            .collect()
    }

    pub fn satisfies(&self, s_d: usize, s_dd: usize) -> bool {
        self.blocks.len() <= s_d && self.blocks.iter().all(|(_, e)| e.len() <= s_dd)
    }
}

/// Keeps the `s_dd` largest entries of each block, then the `s_d` blocks
/// with the largest remaining norm. Ties go to the lower index.
pub fn hier_threshold(x: &[C64], block_len: usize, s_d: usize, s_dd: usize) -> HierSupport {
    let blocks = x.len() / block_len;
    let s_dd = s_dd.min(block_len);
    let mut cand: Vec<(usize, Vec<usize>, f64)> = (0..blocks)
        .map(|b| {
            let blk = &x[b * block_len..(b + 1) * block_len];
            let mut order: Vec<usize> = (0..block_len).collect();
            order.sort_by(|&i, &j| blk[j].norm_sqr().total_cmp(&blk[i].norm_sqr()).then(i.cmp(&j)));
            let mut keep: Vec<usize> = order[..s_dd].to_vec();
            keep.sort_unstable();
            let e: f64 = keep.iter().map(|&i| blk[i].norm_sqr()).sum();
            (b, keep, e)
        })
        .collect();
    cand.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    cand.truncate(s_d.min(blocks));
    cand.sort_by_key(|c| c.0);
    HierSupport {
        block_len,
        blocks: cand.into_iter().map(|(b, e, _)| (b, e)).collect(),
    }
}

/// Recovery outcome.
#[derive(Debug, Clone)]
pub struct HihtpResult {
    pub estimate: Vec<C64>,
    pub support: HierSupport,
    pub iterations: usize,
    /// Stopped because the support repeated.
    pub converged: bool,
    /// Some restricted solve fell back to the minimum-norm solution.
    pub min_norm_fallback: bool,
    /// Iterates after every least-squares step, when requested.
    pub history: Vec<Vec<C64>>,
}

/// Hierarchical hard thresholding pursuit with unit step size, starting
/// from zero.
pub fn hihtp(
    m: &CMat,
    y: &[C64],
    block_len: usize,
    s_d: usize,
    s_dd: usize,
    k_max: usize,
    record: bool,
) -> Result<HihtpResult> {
    if y.len() != m.nrows() {
        return Err(Error::LengthMismatch {
            expected: m.nrows(),
            got: y.len(),
        });
    }
    if block_len == 0 || !m.ncols().is_multiple_of(block_len) {
        return Err(Error::InvalidDims(format!(
            "{} columns are not a whole number of blocks of {block_len}",
            m.ncols()
        )));
    }
    if k_max == 0 {
        return Err(Error::InvalidParameter("need at least one iteration".into()));
    }
    let yv = CVec::from_column_slice(y);
    let mh = m.adjoint();
    let mut x = CVec::zeros(m.ncols());
    let mut prev: Option<HierSupport> = None;
    let mut fallback = false;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..k_max {
        let g = &x + &mh * (&yv - m * &x);
        let sup = hier_threshold(g.as_slice(), block_len, s_d, s_dd);
        if prev.as_ref() == Some(&sup) {
            converged = true;
            break;
        }
        let idx = sup.indices();
        let sol = lstsq(&select_columns(m, &idx), &yv)?;
        fallback |= sol.min_norm_fallback;
        x = CVec::zeros(m.ncols());
        for (k, &i) in idx.iter().enumerate() {
            x[i] = sol.x[k];
        }
        iterations += 1;
        if record {
            history.push(x.as_slice().to_vec());
        }
        prev = Some(sup);
    }
    Ok(HihtpResult {
        estimate: x.as_slice().to_vec(),
        support: prev.unwrap_or(HierSupport {
            block_len,
            blocks: Vec::new(),
        }),
        iterations,
        converged,
        min_norm_fallback: fallback,
        history,
    })
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Every support with exactly `s_d` blocks of exactly `s_dd` entries.
pub fn all_hier_supports(blocks: usize, block_len: usize, s_d: usize, s_dd: usize) -> Vec<HierSupport> {
    let entry_sets = combinations(block_len, s_dd);
    let mut out = Vec::new();
    for bs in combinations(blocks, s_d) {
        let mut choice = vec![0usize; s_d];
        loop {
            out.push(HierSupport {
                block_len,
                blocks: bs
                    .iter()
                    .zip(&choice)
                    .map(|(&b, &c)| (b, entry_sets[c].clone()))
                    .collect(),
            });
            let mut i = 0;
            while i < s_d {
                choice[i] += 1;
                if choice[i] < entry_sets.len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == s_d {
                break;
            }
        }
    }
    out
}

/// Best hierarchical support by exhaustive least squares.
pub fn exhaustive_search(
    m: &CMat,
    y: &[C64],
    block_len: usize,
    s_d: usize,
    s_dd: usize,
) -> Result<(HierSupport, Vec<C64>, f64)> {
    let yv = CVec::from_column_slice(y);
    let mut best: Option<(HierSupport, Vec<C64>, f64)> = None;
    for sup in all_hier_supports(m.ncols() / block_len, block_len, s_d, s_dd) {
        let idx = sup.indices();
        let a = select_columns(m, &idx);
        let sol = lstsq(&a, &yv)?;
        let res = (&yv - &a * &sol.x).norm();
        if best.as_ref().is_none_or(|b| res < b.2) {
            let mut x = vec![C64::new(0.0, 0.0); m.ncols()];
            for (k, &i) in idx.iter().enumerate() {
                x[i] = sol.x[k];
            }
            best = Some((sup, x, res));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no admissible support".into()))
}

/// `max |lambda - 1|` over the Gram matrix of the columns in `idx`.
pub fn support_isometry_defect(m: &CMat, idx: &[usize]) -> f64 {
    let a = select_columns(m, idx);
    let g = a.adjoint() * &a;
    let ev = g.symmetric_eigenvalues();
    ev.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max)
}

/// Empirical hierarchical RIP lower bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub delta: f64,
    /// Isometry defect of each sampled support.
    pub samples: Vec<f64>,
}

/// Samples `trials` random maximal hierarchical supports and returns the
/// largest isometry defect seen; a lower bound on the HiRIP constant.
pub fn hirip_probe<R: Rng + ?Sized>(
    m: &CMat,
    block_len: usize,
    s_d: usize,
    s_dd: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ProbeResult> {
    let blocks = m.ncols() / block_len;
    if trials == 0 || s_d == 0 || s_d > blocks || s_dd == 0 || s_dd > block_len {
        return Err(Error::InvalidParameter("probe needs trials and admissible sparsity".into()));
    }
    let samples: Vec<f64> = (0..trials)
        .map(|_| {
            let mut bs = sample(rng, blocks, s_d).into_vec();
            bs.sort_unstable();
            let mut idx = Vec::with_capacity(s_d * s_dd);
            for b in bs {
                let mut es = sample(rng, block_len, s_dd).into_vec();
                es.sort_unstable();
                idx.extend(es.into_iter().map(|e| b * block_len + e));
            }
            support_isometry_defect(m, &idx)
        })
        .collect();
    let delta = samples.iter().cloned().fold(0.0, f64::max);
    Ok(ProbeResult { delta, samples })
}

/// HiRIP constant by enumerating every maximal support.
pub fn hirip_exhaustive(m: &CMat, block_len: usize, s_d: usize, s_dd: usize) -> f64 {
    all_hier_supports(m.ncols() / block_len, block_len, s_d, s_dd)
        .iter()
        .map(|s| support_isometry_defect(m, &s.indices()))
        .fold(0.0, f64::max)
}
