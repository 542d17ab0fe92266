//! Modulation chains, pilot plans and pilot overheads for SCM, OFDM, AFDM
//! and OTFS.
//!
//! Every chain maps `N` transform-domain symbols to a time stream made of a
//! prefix followed by the frame body. Time index zero is the first sample
//! after the leading prefix; the receiver works on times `0..span()`.
//!
//! AFDM uses `s_n = N^{-1/2} sum_m x_m exp(-i 2 pi (c1 n^2 + c2 m^2))
//! exp(i 2 pi n m / N)` with `c1 = P / (2N)`. A path with delay `l` and
//! integer Doppler `q` moves symbol `m` to index `(m + q + P l) mod N`.

use crate::channel::GridDims;
use crate::error::{Error, Result};
use crate::linalg::UnitaryFft;
use crate::rng::unit_phase;
use crate::C64;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Waveform family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveformKind {
    Scm,
    Ofdm,
    Afdm,
    Otfs,
}

impl std::fmt::Display for WaveformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WaveformKind::Scm => "SCM",
            WaveformKind::Ofdm => "OFDM",
            WaveformKind::Afdm => "AFDM",
            WaveformKind::Otfs => "OTFS",
        };
        f.write_str(s)
    }
}

/// How OFDM measurement matrices model the channel inside one symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OfdmModel {
    /// Channel frozen at each symbol's midpoint; inter-carrier interference
    /// is left unmodelled.
    #[default]
    Midpoint,
    /// Sample-by-sample channel, identical to the simulation.
    Exact,
}

/// Waveform-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scheme {
    Scm,
    Ofdm {
        n_fft: usize,
        n_cp: usize,
        #[serde(default)]
        model: OfdmModel,
    },
    Afdm {
        /// Index stride per delay tap, `2 N c1`.
        p_afdm: usize,
        #[serde(default)]
        c2: f64,
    },
    Otfs {
        /// Doppler bins (outer index).
        n_doppler: usize,
        /// Delay bins (inner index).
        n_delay: usize,
    },
}

impl Scheme {
    pub fn kind(&self) -> WaveformKind {
        match self {
            Scheme::Scm => WaveformKind::Scm,
            Scheme::Ofdm { .. } => WaveformKind::Ofdm,
            Scheme::Afdm { .. } => WaveformKind::Afdm,
            Scheme::Otfs { .. } => WaveformKind::Otfs,
        }
    }
}

/// Grid plus waveform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformConfig {
    pub dims: GridDims,
    pub scheme: Scheme,
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let n = self.dims.frame_len;
        let l = self.dims.delay_taps;
        match self.scheme {
            Scheme::Scm => {}
            Scheme::Ofdm { n_fft, n_cp, .. } => {
                if n_fft == 0 || !n.is_multiple_of(n_fft) {
                    return Err(Error::InvalidParameter(format!(
                        "FFT size {n_fft} does not divide frame length {n}"
                    )));
                }
                if n_cp + 1 < l {
                    return Err(Error::InvalidParameter(format!(
                        "cyclic prefix {n_cp} shorter than delay spread {}",
                        l - 1
                    )));
                }
            }
            Scheme::Afdm { .. } => {}
            Scheme::Otfs { n_doppler, n_delay } => {
                if n_doppler * n_delay != n {
                    return Err(Error::InvalidParameter(format!(
                        "OTFS grid {n_doppler}x{n_delay} does not tile frame length {n}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A validated waveform with its transforms planned.
#[derive(Debug, Clone)]
pub struct Waveform {
    cfg: WaveformConfig,
    fft: UnitaryFft,
    /// AFDM time-domain chirp `exp(-i 2 pi c1 n^2)` over `0..N`.
    chirp_time: Vec<C64>,
    /// AFDM symbol-domain chirp `exp(-i 2 pi c2 m^2)` over `0..N`.
    chirp_symbol: Vec<C64>,
}

fn afdm_time_chirp(n: usize, p: usize, t: i64) -> C64 {
    // c1 t^2 = P t^2 / (2N), reduced modulo one in integer arithmetic
    let den = 2 * n as i128;
    let num = (p as i128 * (t as i128) * (t as i128)).rem_euclid(den);
    C64::from_polar(1.0, -TAU * num as f64 / den as f64)
}

impl Waveform {
    pub fn new(cfg: WaveformConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.dims.frame_len;
        let fft_len = match cfg.scheme {
            Scheme::Ofdm { n_fft, .. } => n_fft,
            Scheme::Otfs { n_doppler, .. } => n_doppler,
            _ => n,
        };
        let (chirp_time, chirp_symbol) = match cfg.scheme {
            Scheme::Afdm { p_afdm, c2 } => (
                (0..n as i64).map(|t| afdm_time_chirp(n, p_afdm, t)).collect(),
                (0..n)
                    .map(|m| {
                        let ph = (c2 * (m * m) as f64).rem_euclid(1.0);
                        C64::from_polar(1.0, -TAU * ph)
                    })
                    .collect(),
            ),
            _ => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            cfg,
            fft: UnitaryFft::new(fft_len),
            chirp_time,
            chirp_symbol,
        })
    }

    pub fn config(&self) -> &WaveformConfig {
        &self.cfg
    }

    pub fn kind(&self) -> WaveformKind {
        self.cfg.scheme.kind()
    }

    pub fn dims(&self) -> GridDims {
        self.cfg.dims
    }

    /// Samples transmitted before time zero.
    pub fn prefix_len(&self) -> usize {
        match self.cfg.scheme {
            Scheme::Ofdm { n_cp, .. } => n_cp,
            _ => self.cfg.dims.delay_taps - 1,
        }
    }

    /// Received time samples the demodulator consumes.
    pub fn span(&self) -> usize {
        match self.cfg.scheme {
            Scheme::Ofdm { n_fft, n_cp, .. } => {
                let symbols = self.cfg.dims.frame_len / n_fft;
                symbols * (n_fft + n_cp) - n_cp
            }
            _ => self.cfg.dims.frame_len,
        }
    }

    pub fn stream_len(&self) -> usize {
        self.prefix_len() + self.span()
    }

    /// Number of OFDM symbols; one for the other schemes.
    pub fn symbols(&self) -> usize {
        match self.cfg.scheme {
            Scheme::Ofdm { n_fft, .. } => self.cfg.dims.frame_len / n_fft,
            _ => 1,
        }
    }

    /// Time at which the measurement model samples the channel for a
    /// received sample at time `t`.
    pub fn model_time(&self, t: i64) -> i64 {
        match self.cfg.scheme {
            Scheme::Ofdm {
                n_fft,
                n_cp,
                model: OfdmModel::Midpoint,
            } => {
                let s = (n_fft + n_cp) as i64;
                let j = t.div_euclid(s);
                j * s + (n_fft / 2) as i64
            }
            _ => t,
        }
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(Error::LengthMismatch { expected, got });
        }
        Ok(())
    }

    /// Transmit stream (prefix followed by the frame body).
    pub fn modulate(&self, x: &[C64]) -> Result<Vec<C64>> {
        let n = self.cfg.dims.frame_len;
        self.check_len(x.len(), n)?;
        let pre = self.prefix_len();
        match self.cfg.scheme {
            Scheme::Scm => Ok(with_cyclic_prefix(x, pre)),
            Scheme::Afdm { p_afdm, .. } => {
                let mut body: Vec<C64> = x.iter().zip(&self.chirp_symbol).map(|(a, c)| a * c).collect();
                self.fft.inverse(&mut body);
                body.iter_mut().zip(&self.chirp_time).for_each(|(v, c)| *v *= c);
                let mut s = Vec::with_capacity(n + pre);
                for t in -(pre as i64)..0 {
                    // chirp-periodic prefix: s_t = s_{t+N} exp(i 2 pi c1 (2 t N + N^2))
                    let tn = t + n as i64;
                    let ph = afdm_time_chirp(n, p_afdm, t) / afdm_time_chirp(n, p_afdm, tn);
                    s.push(body[tn as usize] * ph);
                }
                s.extend_from_slice(&body);
                Ok(s)
            }
            Scheme::Ofdm { n_fft, n_cp, .. } => {
                let mut s = Vec::with_capacity(self.stream_len() + n_cp);
                for sym in x.chunks(n_fft) {
                    let mut body = sym.to_vec();
                    self.fft.inverse(&mut body);
                    s.extend(with_cyclic_prefix(&body, n_cp));
                }
                Ok(s)
            }
            Scheme::Otfs { n_doppler, n_delay } => {
                let mut body = vec![C64::new(0.0, 0.0); n];
                let mut col = vec![C64::new(0.0, 0.0); n_doppler];
                for l in 0..n_delay {
                    for k in 0..n_doppler {
                        col[k] = x[k * n_delay + l];
                    }
                    self.fft.inverse(&mut col);
                    for k in 0..n_doppler {
                        body[k * n_delay + l] = col[k];
                    }
                }
                Ok(with_cyclic_prefix(&body, pre))
            }
        }
    }

    /// Transform-domain samples from the received times `0..span()`.
    pub fn demodulate(&self, r: &[C64]) -> Result<Vec<C64>> {
        self.check_len(r.len(), self.span())?;
        let n = self.cfg.dims.frame_len;
        match self.cfg.scheme {
            Scheme::Scm => Ok(r.to_vec()),
            Scheme::Afdm { .. } => {
                let mut y: Vec<C64> = r.iter().zip(&self.chirp_time).map(|(a, c)| a * c.conj()).collect();
                self.fft.forward(&mut y);
                y.iter_mut().zip(&self.chirp_symbol).for_each(|(v, c)| *v *= c.conj());
                Ok(y)
            }
            Scheme::Ofdm { n_fft, n_cp, .. } => {
                let mut y = Vec::with_capacity(n);
                let stride = n_fft + n_cp;
                for j in 0..n / n_fft {
                    let mut sym = r[j * stride..j * stride + n_fft].to_vec();
                    self.fft.forward(&mut sym);
                    y.extend(sym);
                }
                Ok(y)
            }
            Scheme::Otfs { n_doppler, n_delay } => {
                let mut y = vec![C64::new(0.0, 0.0); n];
                let mut col = vec![C64::new(0.0, 0.0); n_doppler];
                for l in 0..n_delay {
                    for k in 0..n_doppler {
                        col[k] = r[k * n_delay + l];
                    }
                    self.fft.forward(&mut col);
                    for k in 0..n_doppler {
                        y[k * n_delay + l] = col[k];
                    }
                }
                Ok(y)
            }
        }
    }
}

fn with_cyclic_prefix(body: &[C64], pre: usize) -> Vec<C64> {
    let n = body.len();
    let mut s = Vec::with_capacity(n + pre);
    s.extend_from_slice(&body[n - pre..]);
    s.extend_from_slice(body);
    s
}

/// DAFT-domain index `(k - q + P l) mod N`.
pub fn daft_index(k: i64, l: i64, q: i64, frame_len: usize, p_afdm: usize) -> usize {
    (k - q + p_afdm as i64 * l).rem_euclid(frame_len as i64) as usize
}

/// Pilot budget: pilot count for SCM and AFDM, pilot symbols times pilot
/// subcarriers for OFDM; OTFS always uses one pilot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotBudget {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcarriers: Option<usize>,
}

impl PilotBudget {
    pub fn count(count: usize) -> Self {
        Self {
            count,
            subcarriers: None,
        }
    }

    pub fn grid(symbols: usize, subcarriers: usize) -> Self {
        Self {
            count: symbols,
            subcarriers: Some(subcarriers),
        }
    }
}

/// How pilot positions are chosen from the admissible lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Evenly spread over the lattice.
    #[default]
    Spread,
    /// Uniformly random subset of the lattice.
    Random,
}

/// Pilot symbols, their reserved regions and the observed index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotPlan {
    pub kind: WaveformKind,
    pub frame_len: usize,
    /// Transform-domain pilot indices.
    pub positions: Vec<usize>,
    pub values: Vec<C64>,
    /// Half-open reserved ranges `[start, start + len)` taken modulo `N`.
    pub reserved: Vec<(usize, usize)>,
    /// Received transform-domain indices used for sensing, sorted.
    pub observed: Vec<usize>,
}

impl PilotPlan {
    /// Transmit symbol vector holding only the pilots.
    pub fn symbols(&self) -> Vec<C64> {
        let mut x = vec![C64::new(0.0, 0.0); self.frame_len];
        for (&m, &v) in self.positions.iter().zip(&self.values) {
            x[m] = v;
        }
        x
    }

    /// Whether index `m` is free for data.
    pub fn is_data(&self, m: usize) -> bool {
        !self.reserved.iter().any(|&(s, len)| {
            let off = (m + self.frame_len - s % self.frame_len) % self.frame_len;
            off < len
        })
    }

    pub fn pilot_energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

fn choose(count: usize, from: usize, placement: Placement, rng: &mut (impl Rng + ?Sized)) -> Vec<usize> {
    let mut idx: Vec<usize> = match placement {
        Placement::Spread => (0..count).map(|i| i * from / count).collect(),
        Placement::Random => sample(rng, from, count).into_vec(),
    };
    idx.sort_unstable();
    idx
}

fn lattice(n: usize, base: usize, count: usize, region: usize) -> Result<Vec<usize>> {
    let size = base * count.div_ceil(base);
    let pts: Vec<usize> = (0..size)
        .map(|j| ((j * n) as f64 / size as f64).round() as usize % n)
        .collect();
    let min_gap = (0..size)
        .map(|j| (pts[(j + 1) % size] + n - pts[j]) % n)
        .min()
        .unwrap_or(n);
    if min_gap < region {
        return Err(Error::Placement(format!(
            "{count} pilots need a {size}-point lattice with spacing {min_gap} < region {region}"
        )));
    }
    Ok(pts)
}

fn circular_range(start: i64, len: usize, n: usize) -> Vec<usize> {
    (0..len as i64).map(|i| (start + i).rem_euclid(n as i64) as usize).collect()
}

/// Places pilots and derives the observed set. Pilot magnitudes are set so
/// the pilot frame has unit average power per body sample.
pub fn plan_pilots<R: Rng + ?Sized>(
    cfg: &WaveformConfig,
    budget: &PilotBudget,
    placement: Placement,
    rng: &mut R,
) -> Result<PilotPlan> {
    cfg.validate()?;
    let n = cfg.dims.frame_len;
    let l = cfg.dims.delay_taps;
    let q = cfg.dims.max_doppler;
    let mut positions = Vec::new();
    let mut reserved = Vec::new();
    let mut observed = Vec::new();
    match cfg.scheme {
        Scheme::Scm => {
            let np = budget.count;
            if np == 0 {
                return Err(Error::Placement("need at least one pilot".into()));
            }
            let region = 2 * l - 1;
            let pts = lattice(n, 2 * q + 1, np, region)?;
            for j in choose(np, pts.len(), placement, rng) {
                let m = (pts[j] + l - 1) % n;
                positions.push(m);
                reserved.push(((m + n - (l - 1)) % n, region));
                observed.extend(circular_range(m as i64, l, n));
            }
        }
        Scheme::Afdm { p_afdm, .. } => {
            let np = budget.count;
            if np == 0 {
                return Err(Error::Placement("need at least one pilot".into()));
            }
            if p_afdm == 0 {
                return Err(Error::InvalidParameter("AFDM stride must be at least one".into()));
            }
            let region = (l - 1) * p_afdm + 2 * q + 1;
            let base = 2 * q.div_ceil(p_afdm) + 1;
            let pts = lattice(n, base, np, region)?;
            for j in choose(np, pts.len(), placement, rng) {
                let m = (pts[j] + q) % n;
                positions.push(m);
                let start = (m + n - q) % n;
                reserved.push((start, region));
                observed.extend(circular_range(start as i64, region, n));
            }
        }
        Scheme::Ofdm { n_fft, .. } => {
            let nt = budget.count;
            let nf = budget
                .subcarriers
                .ok_or_else(|| Error::Placement("OFDM budget needs a subcarrier count".into()))?;
            let symbols = n / n_fft;
            if nt == 0 || nt > symbols || nf == 0 || nf > n_fft {
                return Err(Error::Placement(format!(
                    "OFDM pilot grid {nt}x{nf} does not fit {symbols} symbols of {n_fft} subcarriers"
                )));
            }
            let ts = choose(nt, symbols, placement, rng);
            let fs = choose(nf, n_fft, placement, rng);
            for &t in &ts {
                for &f in &fs {
                    let m = t * n_fft + f;
                    positions.push(m);
                    reserved.push((m, 1));
                    observed.push(m);
                }
            }
        }
        Scheme::Otfs { n_doppler, n_delay } => {
            let kd = (4 * q + 1).min(n_doppler);
            let ld = (2 * l - 1).min(n_delay);
            let kp = n_doppler / 2;
            let lp = n_delay / 2;
            let k0 = if kd == n_doppler { 0 } else { kp - 2 * q };
            let l0 = if ld == n_delay { 0 } else { lp - (l - 1) };
            positions.push(kp * n_delay + lp);
            for k in k0..k0 + kd {
                reserved.push((k * n_delay + l0, ld));
                observed.extend((l0..l0 + ld).map(|d| k * n_delay + d));
            }
        }
    }
    observed.sort_unstable();
    let before = observed.len();
    observed.dedup();
    if observed.len() != before {
        return Err(Error::Placement("pilot regions overlap".into()));
    }
    let amp = (n as f64 / positions.len() as f64).sqrt();
    let values = positions.iter().map(|_| unit_phase(rng) * amp).collect();
    Ok(PilotPlan {
        kind: cfg.scheme.kind(),
        frame_len: n,
        positions,
        values,
        reserved,
        observed,
    })
}

/// Pilot, guard and prefix samples per frame, in closed form.
pub fn overhead(cfg: &WaveformConfig, budget: &PilotBudget) -> Result<usize> {
    let l = cfg.dims.delay_taps;
    let q = cfg.dims.max_doppler;
    Ok(match cfg.scheme {
        Scheme::Scm => l - 1 + (2 * l - 1) * budget.count,
        Scheme::Ofdm { .. } => {
            let nf = budget
                .subcarriers
                .ok_or_else(|| Error::InvalidParameter("OFDM budget needs a subcarrier count".into()))?;
            (l - 1 + nf) * budget.count
        }
        Scheme::Afdm { p_afdm, .. } => {
            l - 2 + (budget.count + 1) * ((l - 1) * p_afdm + 2 * q + 1)
        }
        Scheme::Otfs { n_doppler, n_delay } => {
            l - 1 + (4 * q + 1).min(n_doppler) * (2 * l - 1).min(n_delay)
        }
    })
}

/// Number of indices the plan observes, in closed form.
pub fn observed_len(cfg: &WaveformConfig, budget: &PilotBudget) -> usize {
    let l = cfg.dims.delay_taps;
    let q = cfg.dims.max_doppler;
    match cfg.scheme {
        Scheme::Scm => budget.count * l,
        Scheme::Ofdm { .. } => budget.count * budget.subcarriers.unwrap_or(0),
        Scheme::Afdm { p_afdm, .. } => budget.count * ((l - 1) * p_afdm + 2 * q + 1),
        Scheme::Otfs { n_doppler, n_delay } => (4 * q + 1).min(n_doppler) * (2 * l - 1).min(n_delay),
    }
}
