//! Doubly sparse delay-Doppler channels.
//!
//! A channel lives on an `L x (2Q+1)` grid of integer delays `l` and Doppler
//! bins `q`. Tap `l` at time `n` is
//!
//! ```text
//! h[l, n] = sum_q I[l, q] sum_i a[l, q, i] exp(i 2 pi n (q + k_i) / N)
//! ```
//!
//! with one path per active point (`k_i = 0`) for on-grid channels and
//! `N_D` paths with uniform fractional shifts `k_i` for off-grid channels.

use crate::error::{Error, Result};
use crate::rng::complex_normal;
use crate::C64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;

/// Delay-Doppler grid size and frame length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    /// Number of delay taps `L`; the largest delay is `L - 1` samples.
    pub delay_taps: usize,
    /// Largest integer Doppler bin `Q`; bins span `-Q..=Q`.
    pub max_doppler: usize,
    /// Frame length `N` in samples.
    pub frame_len: usize,
}

impl GridDims {
    pub fn new(delay_taps: usize, max_doppler: usize, frame_len: usize) -> Result<Self> {
        let d = Self {
            delay_taps,
            max_doppler,
            frame_len,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay_taps == 0 {
            return Err(Error::InvalidDims("need at least one delay tap".into()));
        }
        if self.frame_len <= self.delay_taps {
            return Err(Error::InvalidDims(format!(
                "frame length {} must exceed delay taps {}",
                self.frame_len, self.delay_taps
            )));
        }
        if self.doppler_bins() > self.frame_len {
            return Err(Error::InvalidDims(format!(
                "{} Doppler bins exceed frame length {}",
                self.doppler_bins(),
                self.frame_len
            )));
        }
        Ok(())
    }

    /// `2Q + 1`.
    pub fn doppler_bins(&self) -> usize {
        2 * self.max_doppler + 1
    }

    /// `L (2Q + 1)`.
    pub fn num_points(&self) -> usize {
        self.delay_taps * self.doppler_bins()
    }

    /// Flat index of `(l, q)`, delay-major with Doppler ascending.
    pub fn point_index(&self, l: usize, q: i64) -> usize {
        l * self.doppler_bins() + (q + self.max_doppler as i64) as usize
    }

    /// Inverse of [`GridDims::point_index`].
    pub fn point(&self, idx: usize) -> (usize, i64) {
        let b = self.doppler_bins();
        (idx / b, (idx % b) as i64 - self.max_doppler as i64)
    }

    pub fn dopplers(&self) -> impl Iterator<Item = i64> {
        let q = self.max_doppler as i64;
        -q..=q
    }
}

/// Structure of the Doppler activations across delay taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportKind {
    /// One Doppler pattern shared by every active tap.
    Type1,
    /// Independent Doppler pattern per active tap.
    Type2,
    /// One contiguous run of Doppler bins per active tap.
    Type3,
}

/// Activation probabilities and support structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub kind: SupportKind,
    /// Probability that a delay tap is active.
    pub p_delay: f64,
    /// Probability that a Doppler bin of an active tap is active.
    pub p_doppler: f64,
    /// Run length for [`SupportKind::Type3`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_len: Option<usize>,
}

impl SparsityProfile {
    pub fn new(kind: SupportKind, p_delay: f64, p_doppler: f64) -> Self {
        Self {
            kind,
            p_delay,
            p_doppler,
            cluster_len: None,
        }
    }

    pub fn validate(&self, dims: &GridDims) -> Result<()> {
        for (name, p) in [("p_delay", self.p_delay), ("p_doppler", self.p_doppler)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} = {p} outside (0, 1]")));
            }
        }
        if self.kind == SupportKind::Type3 {
            match self.cluster_len {
                Some(c) if c >= 1 && c <= dims.doppler_bins() => {}
                Some(c) => {
                    return Err(Error::InvalidParameter(format!(
                        "cluster length {c} outside 1..={}",
                        dims.doppler_bins()
                    )))
                }
                None => {
                    return Err(Error::InvalidParameter(
                        "type3 support needs a cluster length".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Per-path gain variance that makes the expected channel power one.
    pub fn sigma_alpha_sq(&self, dims: &GridDims, paths_per_point: usize) -> f64 {
        1.0 / (paths_per_point as f64
            * dims.delay_taps as f64
            * self.p_delay
            * dims.doppler_bins() as f64
            * self.p_doppler)
    }
}

/// Mean number of active delay taps and of active Doppler bins per tap.
pub fn sparsity_levels(profile: &SparsityProfile, dims: &GridDims) -> (f64, f64) {
    (
        profile.p_delay * dims.delay_taps as f64,
        profile.p_doppler * dims.doppler_bins() as f64,
    )
}

/// Binary activation pattern over the delay-Doppler grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportMask {
    pub dims: GridDims,
    /// Row-major `L x (2Q+1)` activations.
    pub active: Vec<bool>,
}

impl SupportMask {
    pub fn empty(dims: GridDims) -> Self {
        Self {
            dims,
            active: vec![false; dims.num_points()],
        }
    }

    pub fn full(dims: GridDims) -> Self {
        Self {
            dims,
            active: vec![true; dims.num_points()],
        }
    }

    /// Mask with exactly the listed `(l, q)` points active.
    pub fn from_points(dims: GridDims, points: &[(usize, i64)]) -> Result<Self> {
        let mut m = Self::empty(dims);
        for &(l, q) in points {
            if l >= dims.delay_taps || q.unsigned_abs() as usize > dims.max_doppler {
                return Err(Error::InvalidParameter(format!(
                    "point ({l}, {q}) outside the grid"
                )));
            }
            m.set(l, q, true);
        }
        Ok(m)
    }

    pub fn is_active(&self, l: usize, q: i64) -> bool {
        self.active[self.dims.point_index(l, q)]
    }

    pub fn set(&mut self, l: usize, q: i64, on: bool) {
        let i = self.dims.point_index(l, q);
        self.active[i] = on;
    }

    /// Doppler bins active at delay `l`, ascending.
    pub fn dopplers_at(&self, l: usize) -> Vec<i64> {
        self.dims.dopplers().filter(|&q| self.is_active(l, q)).collect()
    }

    /// Delay taps with at least one active Doppler bin.
    pub fn active_delays(&self) -> Vec<usize> {
        (0..self.dims.delay_taps)
            .filter(|&l| self.dims.dopplers().any(|q| self.is_active(l, q)))
            .collect()
    }

    /// Active points in flat order (delay-major, Doppler ascending).
    pub fn points(&self) -> Vec<(usize, i64)> {
        (0..self.dims.num_points())
            .filter(|&i| self.active[i])
            .map(|i| self.dims.point(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Number of active taps and the largest per-tap Doppler count.
    pub fn realized_levels(&self) -> (usize, usize) {
        let delays = self.active_delays();
        let per = delays
            .iter()
            .map(|&l| self.dopplers_at(l).len())
            .max()
            .unwrap_or(0);
        (delays.len(), per)
    }

    /// Bit pattern of the Doppler activations at delay `l` (bit `q + Q`).
    pub fn doppler_pattern(&self, l: usize) -> u64 {
        let mut key = 0u64;
        for (j, q) in self.dims.dopplers().enumerate() {
            if self.is_active(l, q) {
                key |= 1 << j;
            }
        }
        key
    }
}

/// Draws an activation pattern.
pub fn sample_support<R: Rng + ?Sized>(
    profile: &SparsityProfile,
    dims: &GridDims,
    rng: &mut R,
) -> Result<SupportMask> {
    dims.validate()?;
    profile.validate(dims)?;
    let bins = dims.doppler_bins();
    let mut mask = SupportMask::empty(*dims);
    let delays: Vec<bool> = (0..dims.delay_taps)
        .map(|_| rng.gen_bool(profile.p_delay))
        .collect();
    let shared: Vec<bool> = match profile.kind {
        SupportKind::Type1 => (0..bins).map(|_| rng.gen_bool(profile.p_doppler)).collect(),
        _ => Vec::new(),
    };
    for (l, &on) in delays.iter().enumerate() {
        if !on {
            continue;
        }
        let row: Vec<bool> = match profile.kind {
            SupportKind::Type1 => shared.clone(),
            SupportKind::Type2 => (0..bins).map(|_| rng.gen_bool(profile.p_doppler)).collect(),
            SupportKind::Type3 => {
                let c = profile.cluster_len.unwrap_or(1);
                let start = rng.gen_range(0..=bins - c);
                (0..bins).map(|j| j >= start && j < start + c).collect()
            }
        };
        for (j, &a) in row.iter().enumerate() {
            mask.active[l * bins + j] = a;
        }
    }
    Ok(mask)
}

/// Tap trajectories `h[l, n]` over the absolute time range `start..start+len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapTrajectories {
    pub taps: usize,
    pub start: i64,
    pub len: usize,
    /// Row-major `taps x len` samples.
    pub data: Vec<C64>,
}

impl TapTrajectories {
    pub fn zeros(taps: usize, start: i64, len: usize) -> Self {
        Self {
            taps,
            start,
            len,
            data: vec![C64::new(0.0, 0.0); taps * len],
        }
    }

    pub fn row(&self, l: usize) -> &[C64] {
        &self.data[l * self.len..(l + 1) * self.len]
    }

    pub fn row_mut(&mut self, l: usize) -> &mut [C64] {
        &mut self.data[l * self.len..(l + 1) * self.len]
    }

    /// Sample at absolute time `n`.
    pub fn at(&self, l: usize, n: i64) -> C64 {
        self.data[l * self.len + (n - self.start) as usize]
    }

    /// `(1/len) sum_{l,n} |h[l, n]|^2`.
    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.len as f64
    }

    /// `(1/len) sum_l ||h_l - g_l||^2`.
    pub fn mse(&self, other: &TapTrajectories) -> Result<f64> {
        if self.taps != other.taps || self.len != other.len || self.start != other.start {
            return Err(Error::InvalidDims(format!(
                "trajectory shapes differ: {}x{}@{} vs {}x{}@{}",
                self.taps, self.len, self.start, other.taps, other.len, other.start
            )));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok(s / self.len as f64)
    }

    /// CSV dump: one row per tap, columns are interleaved re/im per time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["tap".to_string()];
        for n in 0..self.len as i64 {
            let t = self.start + n;
            header.push(format!("re_{t}"));
            header.push(format!("im_{t}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for l in 0..self.taps {
            let mut line = l.to_string();
            for v in self.row(l) {
                line.push_str(&format!(",{},{}", v.re, v.im));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// On-grid channel: one complex gain per active grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnGridChannel {
    pub dims: GridDims,
    /// Row-major `L x (2Q+1)` gains, zero off the support.
    pub gains: Vec<C64>,
    pub sigma_alpha_sq: f64,
}

impl OnGridChannel {
    pub fn gain(&self, l: usize, q: i64) -> C64 {
        self.gains[self.dims.point_index(l, q)]
    }

    /// Tap trajectories over `start..start+len`.
    pub fn trajectories(&self, start: i64, len: usize) -> TapTrajectories {
        let n = self.dims.frame_len as f64;
        let mut out = TapTrajectories::zeros(self.dims.delay_taps, start, len);
        for idx in 0..self.dims.num_points() {
            let a = self.gains[idx];
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            let (l, q) = self.dims.point(idx);
            let row = out.row_mut(l);
            for (i, v) in row.iter_mut().enumerate() {
                let t = start + i as i64;
                *v += a * C64::from_polar(1.0, TAU * (q * t).rem_euclid(self.dims.frame_len as i64) as f64 / n);
            }
        }
        out
    }
}

/// Draws i.i.d. circular Gaussian gains on the support and the trajectory
/// over `0..N`.
pub fn gen_ongrid<R: Rng + ?Sized>(
    support: &SupportMask,
    sigma_alpha_sq: f64,
    rng: &mut R,
) -> (OnGridChannel, TapTrajectories) {
    let dims = support.dims;
    let gains = support
        .active
        .iter()
        .map(|&a| {
            if a {
                complex_normal(rng, sigma_alpha_sq)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    let ch = OnGridChannel {
        dims,
        gains,
        sigma_alpha_sq,
    };
    let traj = ch.trajectories(0, dims.frame_len);
    (ch, traj)
}

/// Paths belonging to one active grid point of an off-grid channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffGridPoint {
    pub delay: usize,
    pub doppler: i64,
    pub gains: Vec<C64>,
    /// Fractional Doppler offsets in `(-1/2, 1/2]` bins.
    pub shifts: Vec<f64>,
}

/// Off-grid channel: `N_D` paths per active grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffGridChannel {
    pub dims: GridDims,
    pub paths_per_point: usize,
    pub sigma_alpha_sq: f64,
    /// Active points in flat grid order.
    pub points: Vec<OffGridPoint>,
}

impl OffGridChannel {
    /// Contribution `h[l, q, n]` of point `idx` over `start..start+len`.
    pub fn point_trajectory(&self, idx: usize, start: i64, len: usize) -> Vec<C64> {
        let p = &self.points[idx];
        let n = self.dims.frame_len as f64;
        let mut out = vec![C64::new(0.0, 0.0); len];
        for (a, k) in p.gains.iter().zip(&p.shifts) {
            let f = (p.doppler as f64 + k) / n;
            for (i, v) in out.iter_mut().enumerate() {
                let t = (start + i as i64) as f64;
                // reduce the phase before scaling to keep long ranges accurate
                let ph = (f * t).rem_euclid(1.0);
                *v += a * C64::from_polar(1.0, TAU * ph);
            }
        }
        out
    }

    pub fn trajectories(&self, start: i64, len: usize) -> TapTrajectories {
        let mut out = TapTrajectories::zeros(self.dims.delay_taps, start, len);
        for idx in 0..self.points.len() {
            let h = self.point_trajectory(idx, start, len);
            let l = self.points[idx].delay;
            for (v, x) in out.row_mut(l).iter_mut().zip(h) {
                *v += x;
            }
        }
        out
    }

    pub fn support(&self) -> SupportMask {
        let mut m = SupportMask::empty(self.dims);
        for p in &self.points {
            m.set(p.delay, p.doppler, true);
        }
        m
    }
}

/// Draws `paths_per_point` gains and uniform fractional shifts per active
/// point and the trajectory over `0..N`.
pub fn gen_offgrid<R: Rng + ?Sized>(
    support: &SupportMask,
    paths_per_point: usize,
    sigma_alpha_sq: f64,
    rng: &mut R,
) -> Result<(OffGridChannel, TapTrajectories)> {
    if paths_per_point == 0 {
        return Err(Error::InvalidParameter("need at least one path per point".into()));
    }
    let points = support
        .points()
        .into_iter()
        .map(|(delay, doppler)| {
            let mut gains = Vec::with_capacity(paths_per_point);
            let mut shifts = Vec::with_capacity(paths_per_point);
            for _ in 0..paths_per_point {
                gains.push(complex_normal(rng, sigma_alpha_sq));
                // 0.5 - U[0, 1) lies in (-1/2, 1/2]
                shifts.push(0.5 - rng.gen::<f64>());
            }
            OffGridPoint {
                delay,
                doppler,
                gains,
                shifts,
            }
        })
        .collect();
    let ch = OffGridChannel {
        dims: support.dims,
        paths_per_point,
        sigma_alpha_sq,
        points,
    };
    let traj = ch.trajectories(0, support.dims.frame_len);
    Ok((ch, traj))
}

/// Noise-free time-varying convolution `r_t = sum_l s_{t-l} h[l, t]`.
///
/// `s[0]` is the sample at time `-prefix`; trajectories must start at time
/// zero and the output covers the trajectory range.
pub fn convolve(traj: &TapTrajectories, s: &[C64], prefix: usize) -> Result<Vec<C64>> {
    if traj.start != 0 {
        return Err(Error::InvalidParameter("trajectories must start at time 0".into()));
    }
    if prefix + 1 < traj.taps {
        return Err(Error::InvalidParameter(format!(
            "prefix {prefix} shorter than the delay spread {}",
            traj.taps - 1
        )));
    }
    if s.len() != prefix + traj.len {
        return Err(Error::LengthMismatch {
            expected: prefix + traj.len,
            got: s.len(),
        });
    }
    let mut r = vec![C64::new(0.0, 0.0); traj.len];
    for l in 0..traj.taps {
        let h = traj.row(l);
        if h.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
            continue;
        }
        for (t, rt) in r.iter_mut().enumerate() {
            *rt += s[t + prefix - l] * h[t];
        }
    }
    Ok(r)
}

/// [`convolve`] plus circular Gaussian noise of variance `sigma_w_sq`.
pub fn apply_channel<R: Rng + ?Sized>(
    traj: &TapTrajectories,
    s: &[C64],
    prefix: usize,
    sigma_w_sq: f64,
    rng: &mut R,
) -> Result<Vec<C64>> {
    let mut r = convolve(traj, s, prefix)?;
    if sigma_w_sq > 0.0 {
        for v in r.iter_mut() {
            *v += complex_normal(rng, sigma_w_sq);
        }
    }
    Ok(r)
}

/// Replayable description of one channel draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub seed: u64,
    pub profile: SparsityProfile,
    pub support: SupportMask,
    pub model: ChannelModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "grid", rename_all = "lowercase")]
pub enum ChannelModel {
    On(OnGridChannel),
    Off(OffGridChannel),
}

impl ChannelRecord {
    pub fn dims(&self) -> GridDims {
        self.support.dims
    }

    pub fn trajectories(&self, start: i64, len: usize) -> TapTrajectories {
        match &self.model {
            ChannelModel::On(c) => c.trajectories(start, len),
            ChannelModel::Off(c) => c.trajectories(start, len),
        }
    }
}
