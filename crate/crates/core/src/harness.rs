//! Seeded Monte Carlo sweeps over waveforms, SNR and prediction horizon,
//! with CSV and JSON report emission.

use crate::channel::{
    convolve, gen_offgrid, gen_ongrid, sample_support, GridDims, OnGridChannel, SparsityProfile, SupportMask,
    TapTrajectories,
};
use crate::dpss::{bem_project, compute_dpss, DpssBasis, ProlateSpec};
use crate::error::{Error, Result};
use crate::estimate::{estimate_with_matrix, predict, reduced_rank_mmse_range, LmmseParams, PriorModel, SolveForm};
use crate::rng::{self, tag};
use crate::sensing::{hihtp, hirip_probe, Sensing};
use crate::waveform::{overhead, plan_pilots, PilotBudget, Placement, Scheme, Waveform, WaveformConfig, WaveformKind};
use crate::C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Version of the CSV and JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Column names of the metrics CSV, in order.
pub const CSV_HEADER: [&str; 18] = [
    "waveform",
    "kind",
    "overhead",
    "snr_db",
    "horizon",
    "trials",
    "coef_mse",
    "coef_mse_ci95",
    "chan_mse",
    "chan_mse_ci95",
    "chan_nmse",
    "chan_nmse_ci95",
    "oracle_diff",
    "oracle_diff_ci95",
    "hirip_delta",
    "hirip_delta_ci95",
    "support_hit",
    "support_hit_ci95",
];

/// What an experiment computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// On-grid channels recovered by HiHTP.
    OngridHihtp,
    /// Off-grid channels estimated by LMMSE on the known support.
    OffgridLmmse,
    /// Off-grid estimation followed by extrapolation, compared against the
    /// reduced-rank predictor.
    Predict,
    /// Closed-form pilot overheads only.
    Overhead,
    /// Empirical HiRIP lower bounds of normalised on-grid matrices.
    HiripProbe,
    /// Slepian eigenvalues of the configured window.
    DpssDump,
}

/// How HiHTP is told the sparsity levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityPolicy {
    /// Expected levels rounded up.
    #[default]
    Expected,
    /// Active delay count and largest per-delay Doppler count of the drawn
    /// support.
    Realized,
    /// Expected levels plus a margin on both.
    Margin(usize),
}

/// Channel generator used by the trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSource {
    /// Random supports and gains from the sparsity profile.
    #[default]
    Random,
    /// A single unit tap at zero delay and Doppler.
    Identity,
}

/// One waveform under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    /// Row label; defaults to the waveform name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub scheme: Scheme,
    pub budget: PilotBudget,
    #[serde(default)]
    pub placement: Placement,
    /// Fold AFDM guard strips into the pilot region.
    #[serde(default)]
    pub fold: bool,
}

impl WaveformSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.scheme.kind().to_string())
    }
}

/// Where reports are written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default = "default_stem")]
    pub stem: String,
}

fn default_stem() -> String {
    "report".into()
}

fn default_trials() -> usize {
    100
}

fn default_q_bem() -> usize {
    4
}

fn default_paths() -> usize {
    3
}

fn default_iters() -> usize {
    100
}

fn default_probe_trials() -> usize {
    200
}

fn default_true() -> bool {
    true
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dims: GridDims,
    pub profile: SparsityProfile,
    #[serde(default)]
    pub waveforms: Vec<WaveformSpec>,
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_q_bem")]
    pub q_bem: usize,
    /// Paths per active grid point in off-grid channels.
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Prediction horizons in samples.
    #[serde(default)]
    pub n_ext: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub sparsity: SparsityPolicy,
    #[serde(default = "default_iters")]
    pub hihtp_iters: usize,
    #[serde(default)]
    pub prior: PriorModel,
    /// Add receiver noise; without it every SNR point is noiseless.
    #[serde(default = "default_true")]
    pub noise: bool,
    #[serde(default)]
    pub channel: ChannelSource,
    #[serde(default = "default_probe_trials")]
    pub probe_trials: usize,
    /// Largest tolerated fraction of excluded trials.
    #[serde(default)]
    pub max_excluded_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.profile.validate(&self.dims)?;
        let needs_trials = !matches!(self.mode, Mode::Overhead | Mode::DpssDump);
        if needs_trials && self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let needs_snr = matches!(self.mode, Mode::OngridHihtp | Mode::OffgridLmmse | Mode::Predict);
        if needs_snr && self.snr_db.is_empty() {
            return Err(Error::Config("SNR grid is empty".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR values must be finite".into()));
        }
        if self.mode != Mode::DpssDump && self.waveforms.is_empty() {
            return Err(Error::Config("no waveforms configured".into()));
        }
        if self.q_bem == 0 || self.paths == 0 || self.hihtp_iters == 0 {
            return Err(Error::Config("q_bem, paths and hihtp_iters must be positive".into()));
        }
        if self.mode == Mode::Predict && self.n_ext.iter().all(|&h| h == 0) {
            return Err(Error::Config("predict mode needs a positive horizon".into()));
        }
        if !(0.0..=1.0).contains(&self.max_excluded_fraction) {
            return Err(Error::Config("max_excluded_fraction outside [0, 1]".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        for w in &self.waveforms {
            WaveformConfig {
                dims: self.dims,
                scheme: w.scheme,
            }
            .validate()?;
        }
        Ok(())
    }

    fn waveform_config(&self, w: &WaveformSpec) -> WaveformConfig {
        WaveformConfig {
            dims: self.dims,
            scheme: w.scheme,
        }
    }

    fn max_horizon(&self) -> usize {
        self.n_ext.iter().cloned().max().unwrap_or(0)
    }

    /// Sorted positive horizons.
    fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.n_ext.iter().cloned().filter(|&h| h > 0).collect();
        h.sort_unstable();
        h.dedup();
        h
    }
}

/// Mean and normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Stat {
    pub fn from_samples(x: &[f64]) -> Option<Stat> {
        let n = x.len();
        if n == 0 {
            return None;
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, ci95, n })
    }
}

/// Metrics of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub waveform: String,
    pub kind: WaveformKind,
    pub overhead: usize,
    pub snr_db: Option<f64>,
    /// Zero for the estimation window, otherwise the prediction horizon.
    pub horizon: usize,
    /// Squared coefficient error, summed over coefficients.
    pub coef_mse: Option<Stat>,
    /// `(1/len) sum_l ||h_l - h_hat_l||^2` over the window or horizon.
    pub chan_mse: Option<Stat>,
    /// Channel MSE divided by the true channel power over the same range.
    pub chan_nmse: Option<Stat>,
    /// Mean squared gap between the extrapolation and the reduced-rank
    /// predictor fed the true trajectories.
    pub oracle_diff: Option<Stat>,
    pub hirip_delta: Option<Stat>,
    /// Fraction of trials whose recovered support equals the true one.
    pub support_hit: Option<Stat>,
}

impl MetricRow {
    fn stats(&self) -> [Option<Stat>; 6] {
        [
            self.coef_mse,
            self.chan_mse,
            self.chan_nmse,
            self.oracle_diff,
            self.hirip_delta,
            self.support_hit,
        ]
    }

    fn trials(&self) -> usize {
        self.stats().iter().flatten().map(|s| s.n).max().unwrap_or(0)
    }
}

/// A trial dropped because of a numerical or configuration failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub trial: usize,
    pub error: String,
}

/// Slepian eigenvalues for a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpssSummary {
    pub len: usize,
    pub half_bandwidth: f64,
    pub lambdas: Vec<f64>,
}

/// Complete experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub seed: u64,
    /// How the noise variance follows from the SNR values.
    pub snr_definition: String,
    pub trials_completed: usize,
    pub trials_excluded: usize,
    pub exclusions: Vec<Exclusion>,
    pub rows: Vec<MetricRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpss: Option<DpssSummary>,
}

impl MetricsReport {
    pub fn excluded_fraction(&self) -> f64 {
        let total = self.trials_completed + self.trials_excluded;
        if total == 0 {
            0.0
        } else {
            self.trials_excluded as f64 / total as f64
        }
    }

    /// Whether the exclusion rate stays within the configured bound.
    pub fn within_exclusion_limit(&self) -> bool {
        self.excluded_fraction() <= self.config.max_excluded_fraction
    }

    /// Row for a waveform label, SNR and horizon.
    pub fn row(&self, waveform: &str, snr_db: Option<f64>, horizon: usize) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.waveform == waveform && r.snr_db == snr_db && r.horizon == horizon)
    }

    pub fn to_csv(&self) -> String {
        let mut s = CSV_HEADER.join(",");
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{},{}",
                r.waveform,
                r.kind,
                r.overhead,
                opt(r.snr_db),
                r.horizon,
                r.trials()
            );
            for st in r.stats() {
                let _ = write!(s, ",{},{}", opt(st.map(|x| x.mean)), opt(st.map(|x| x.ci95)));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `sigma_w^2 = 10^(-SNR/10)` for unit average pilot power per sample.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// `(1/len) sum_l ||h_l - h_hat_l||^2`.
pub fn mse_channel(h_true: &TapTrajectories, h_hat: &TapTrajectories) -> Result<f64> {
    h_true.mse(h_hat)
}

/// Writes `<stem>.csv`, `<stem>.json` and, for Slepian dumps,
/// `<stem>_dpss.csv` into `dir`.
pub fn emit(report: &MetricsReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut files = vec![
        (dir.join(format!("{stem}.csv")), report.to_csv()),
        (dir.join(format!("{stem}.json")), report.to_json()?),
    ];
    if let Some(d) = &report.dpss {
        let mut s = String::from("index,lambda\n");
        for (i, l) in d.lambdas.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        files.push((dir.join(format!("{stem}_dpss.csv")), s));
    }
    let mut out = Vec::new();
    for (path, body) in files {
        std::fs::write(&path, body).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        out.push(path);
    }
    Ok(out)
}

/// Per-waveform state shared by all trials.
struct Prepared {
    spec: WaveformSpec,
    cfg: WaveformConfig,
    wf: Waveform,
    overhead: usize,
    basis: Option<DpssBasis>,
}

/// Row layout: waveform-major, then SNR, then horizon.
#[derive(Debug, Clone, Copy)]
struct Slot {
    waveform: usize,
    snr: Option<usize>,
    horizon: usize,
}

const METRICS: usize = 6;
const COEF: usize = 0;
const CHAN: usize = 1;
const NCHAN: usize = 2;
const ORACLE: usize = 3;
const DELTA: usize = 4;
const HIT: usize = 5;

type TrialValues = Vec<[Option<f64>; METRICS]>;

fn slots(cfg: &ExperimentConfig) -> Vec<Slot> {
    let mut out = Vec::new();
    for w in 0..cfg.waveforms.len() {
        match cfg.mode {
            Mode::OngridHihtp | Mode::OffgridLmmse => {
                for s in 0..cfg.snr_db.len() {
                    out.push(Slot {
                        waveform: w,
                        snr: Some(s),
                        horizon: 0,
                    });
                }
            }
            Mode::Predict => {
                for s in 0..cfg.snr_db.len() {
                    for h in std::iter::once(0).chain(cfg.horizons()) {
                        out.push(Slot {
                            waveform: w,
                            snr: Some(s),
                            horizon: h,
                        });
                    }
                }
            }
            Mode::Overhead | Mode::HiripProbe => out.push(Slot {
                waveform: w,
                snr: None,
                horizon: 0,
            }),
            Mode::DpssDump => {}
        }
    }
    out
}

fn prepare(cfg: &ExperimentConfig) -> Result<Vec<Prepared>> {
    cfg.waveforms
        .iter()
        .map(|spec| {
            let wcfg = cfg.waveform_config(spec);
            let wf = Waveform::new(wcfg)?;
            let basis = match cfg.mode {
                Mode::OffgridLmmse | Mode::Predict => Some(compute_dpss(&ProlateSpec::narrowband(
                    wf.span(),
                    cfg.dims.frame_len,
                    cfg.q_bem,
                ))?),
                _ => None,
            };
            Ok(Prepared {
                spec: spec.clone(),
                cfg: wcfg,
                overhead: overhead(&wcfg, &spec.budget)?,
                wf,
                basis,
            })
        })
        .collect()
}

fn sparsity_inputs(cfg: &ExperimentConfig, support: &SupportMask) -> (usize, usize) {
    let dims = &cfg.dims;
    let expected = || {
        let (sd, sdd) = crate::channel::sparsity_levels(&cfg.profile, dims);
        (sd.ceil() as usize, sdd.ceil() as usize)
    };
    let (sd, sdd) = match cfg.sparsity {
        SparsityPolicy::Expected => expected(),
        SparsityPolicy::Margin(m) => {
            let (a, b) = expected();
            (a + m, b + m)
        }
        SparsityPolicy::Realized => {
            let delays = support.active_delays();
            let per = delays.iter().map(|&l| support.dopplers_at(l).len()).max().unwrap_or(0);
            (delays.len(), per)
        }
    };
    (sd.clamp(1, dims.delay_taps), sdd.clamp(1, dims.doppler_bins()))
}

fn draw_support(cfg: &ExperimentConfig, trial: usize) -> Result<SupportMask> {
    match cfg.channel {
        ChannelSource::Random => {
            sample_support(&cfg.profile, &cfg.dims, &mut rng::stream(cfg.seed, trial as u64, tag::SUPPORT))
        }
        ChannelSource::Identity => SupportMask::from_points(cfg.dims, &[(0, 0)]),
    }
}

/// Unit-variance noise for a stream of `len` samples; shared across SNR
/// points and waveforms of one trial.
fn base_noise(cfg: &ExperimentConfig, trial: usize, len: usize) -> Vec<C64> {
    let mut r = rng::stream(cfg.seed, trial as u64, tag::NOISE);
    (0..len).map(|_| rng::complex_normal(&mut r, 1.0)).collect()
}

fn sigma_w_sq(cfg: &ExperimentConfig, snr_db: f64) -> f64 {
    if cfg.noise {
        noise_variance(snr_db)
    } else {
        0.0
    }
}

fn add_noise(clean: &[C64], z: &[C64], sigma_sq: f64) -> Vec<C64> {
    let s = sigma_sq.sqrt();
    clean.iter().zip(z).map(|(c, n)| c + n * s).collect()
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn trial_ongrid(cfg: &ExperimentConfig, prep: &[Prepared], trial: usize) -> Result<TrialValues> {
    let dims = cfg.dims;
    let support = draw_support(cfg, trial)?;
    let ch = match cfg.channel {
        ChannelSource::Random => {
            let sigma = cfg.profile.sigma_alpha_sq(&dims, 1);
            gen_ongrid(&support, sigma, &mut rng::stream(cfg.seed, trial as u64, tag::GAINS)).0
        }
        ChannelSource::Identity => {
            let mut gains = vec![C64::new(0.0, 0.0); dims.num_points()];
            gains[dims.point_index(0, 0)] = C64::new(1.0, 0.0);
            OnGridChannel {
                dims,
                gains,
                sigma_alpha_sq: 1.0,
            }
        }
    };
    let (s_d, s_dd) = sparsity_inputs(cfg, &support);
    let true_idx: Vec<usize> = (0..dims.num_points()).filter(|&i| support.active[i]).collect();
    let mut out = Vec::new();
    for p in prep {
        let plan = plan_pilots(
            &p.cfg,
            &p.spec.budget,
            p.spec.placement,
            &mut rng::stream(cfg.seed, trial as u64, tag::PILOTS),
        )?;
        let sensing = Sensing::new(p.wf.clone(), plan, p.spec.fold)?;
        let mm = sensing.ongrid();
        let scale = mm.rms_column_norm();
        if !(scale > 0.0) {
            return Err(Error::Numerical("measurement matrix is zero".into()));
        }
        let mn = &mm.matrix / C64::new(scale, 0.0);
        let span = p.wf.span();
        let traj = ch.trajectories(0, span);
        let clean = convolve(&traj, sensing.stream(), p.wf.prefix_len())?;
        let z = base_noise(cfg, trial, span);
        let power = traj.power();
        for &snr in &cfg.snr_db {
            let y = sensing.observe(&add_noise(&clean, &z, sigma_w_sq(cfg, snr)))?;
            let res = hihtp(&mn, &y, dims.doppler_bins(), s_d, s_dd, cfg.hihtp_iters, false)?;
            let gains: Vec<C64> = res.estimate.iter().map(|v| v / scale).collect();
            let coef: f64 = gains.iter().zip(&ch.gains).map(|(a, b)| (a - b).norm_sqr()).sum();
            let est = OnGridChannel {
                dims,
                gains,
                sigma_alpha_sq: ch.sigma_alpha_sq,
            };
            let chan = mse_channel(&traj, &est.trajectories(0, span))?;
            let found: Vec<usize> = (0..dims.num_points())
                .filter(|&i| est.gains[i].norm() > 0.0)
                .collect();
            let hit = if found == true_idx { 1.0 } else { 0.0 };
            let mut v = [None; METRICS];
            v[COEF] = Some(coef);
            v[CHAN] = Some(chan);
            v[NCHAN] = ratio(chan, power);
            v[HIT] = Some(hit);
            out.push(v);
        }
    }
    Ok(out)
}

fn trial_offgrid(cfg: &ExperimentConfig, prep: &[Prepared], trial: usize) -> Result<TrialValues> {
    let dims = cfg.dims;
    let support = draw_support(cfg, trial)?;
    let (ch, _) = match cfg.channel {
        ChannelSource::Random => gen_offgrid(
            &support,
            cfg.paths,
            cfg.profile.sigma_alpha_sq(&dims, cfg.paths),
            &mut rng::stream(cfg.seed, trial as u64, tag::GAINS),
        )?,
        ChannelSource::Identity => {
            let (mut ch, t) = gen_offgrid(&support, 1, 1.0, &mut rng::stream(cfg.seed, trial as u64, tag::GAINS))?;
            ch.points[0].gains[0] = C64::new(1.0, 0.0);
            ch.points[0].shifts[0] = 0.0;
            (ch, t)
        }
    };
    let horizons = if cfg.mode == Mode::Predict { cfg.horizons() } else { Vec::new() };
    let max_h = if cfg.mode == Mode::Predict { cfg.max_horizon() } else { 0 };
    let params = |s2: f64| LmmseParams {
        paths: ch.paths_per_point,
        sigma_alpha_sq: ch.sigma_alpha_sq,
        sigma_w_sq: s2,
        prior: cfg.prior,
        form: SolveForm::Auto,
    };
    let mut out = Vec::new();
    for p in prep {
        let basis = p.basis.as_ref().expect("off-grid modes carry a basis");
        let span = p.wf.span();
        let plan = plan_pilots(
            &p.cfg,
            &p.spec.budget,
            p.spec.placement,
            &mut rng::stream(cfg.seed, trial as u64, tag::PILOTS),
        )?;
        let sensing = Sensing::new(p.wf.clone(), plan, p.spec.fold)?;
        let full = ch.trajectories(0, span + max_h);
        let mut window = TapTrajectories::zeros(dims.delay_taps, 0, span);
        for l in 0..dims.delay_taps {
            window.row_mut(l).copy_from_slice(&full.row(l)[..span]);
        }
        let clean = convolve(&window, sensing.stream(), p.wf.prefix_len())?;
        let z = base_noise(cfg, trial, span);
        let power = window.power();
        let mm = if support.count() > 0 {
            Some(sensing.offgrid(&support, basis)?)
        } else {
            None
        };
        // true per-point projections, in the matrix column order
        let mut beta_true = Vec::new();
        let mut oracle = TapTrajectories::zeros(dims.delay_taps, span as i64, max_h);
        for (idx, pt) in ch.points.iter().enumerate() {
            let h = ch.point_trajectory(idx, 0, span);
            beta_true.extend(bem_project(&h, pt.doppler, basis, dims.frame_len)?);
            if max_h > 0 {
                let rr = reduced_rank_mmse_range(&h, pt.doppler, basis, basis.order(), dims.frame_len, span as i64, max_h)?;
                for (o, v) in oracle.row_mut(pt.delay).iter_mut().zip(rr) {
                    *o += v;
                }
            }
        }
        let truth_ext = if max_h > 0 {
            let mut t = TapTrajectories::zeros(dims.delay_taps, span as i64, max_h);
            for l in 0..dims.delay_taps {
                t.row_mut(l).copy_from_slice(&full.row(l)[span..]);
            }
            Some(t)
        } else {
            None
        };
        for &snr in &cfg.snr_db {
            let s2 = sigma_w_sq(cfg, snr);
            let (beta_hat, columns, h_hat) = match &mm {
                Some(mm) => {
                    let y = sensing.observe(&add_noise(&clean, &z, s2))?;
                    let est = estimate_with_matrix(mm, &y, basis, dims, &params(s2))?;
                    (est.beta_hat, est.columns, est.h_hat)
                }
                None => (Vec::new(), Vec::new(), TapTrajectories::zeros(dims.delay_taps, 0, span)),
            };
            let coef: f64 = beta_hat
                .iter()
                .zip(&beta_true)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            let chan = mse_channel(&window, &h_hat)?;
            let mut v = [None; METRICS];
            v[COEF] = Some(coef);
            v[CHAN] = Some(chan);
            v[NCHAN] = ratio(chan, power);
            out.push(v);
            if let Some(truth) = &truth_ext {
                let pred = predict(&beta_hat, &columns, basis, dims, max_h)?;
                for &h in &horizons {
                    let mse = pred.horizon_mse(truth, h)?;
                    let gap = pred.horizon_mse(&oracle, h)?;
                    let zero = TapTrajectories::zeros(dims.delay_taps, span as i64, h);
                    let hp = truth_window(truth, h).mse(&zero)?;
                    let mut v = [None; METRICS];
                    v[CHAN] = Some(mse);
                    v[NCHAN] = ratio(mse, hp);
                    v[ORACLE] = Some(gap);
                    out.push(v);
                }
            }
        }
    }
    Ok(out)
}

fn truth_window(t: &TapTrajectories, len: usize) -> TapTrajectories {
    let mut w = TapTrajectories::zeros(t.taps, t.start, len);
    for l in 0..t.taps {
        w.row_mut(l).copy_from_slice(&t.row(l)[..len]);
    }
    w
}

fn trial_probe(cfg: &ExperimentConfig, prep: &[Prepared], trial: usize) -> Result<TrialValues> {
    let dims = cfg.dims;
    let (sd, sdd) = crate::channel::sparsity_levels(&cfg.profile, &dims);
    let s_d = (sd.ceil() as usize).clamp(1, dims.delay_taps);
    let s_dd = (sdd.ceil() as usize).clamp(1, dims.doppler_bins());
    let mut out = Vec::new();
    for p in prep {
        let plan = plan_pilots(
            &p.cfg,
            &p.spec.budget,
            p.spec.placement,
            &mut rng::stream(cfg.seed, trial as u64, tag::PILOTS),
        )?;
        let mm = Sensing::new(p.wf.clone(), plan, p.spec.fold)?.ongrid();
        let scale = mm.rms_column_norm();
        let mn = &mm.matrix / C64::new(scale, 0.0);
        let probe = hirip_probe(
            &mn,
            dims.doppler_bins(),
            s_d,
            s_dd,
            cfg.probe_trials,
            &mut rng::stream(cfg.seed, trial as u64, tag::PROBE),
        )?;
        let mut v = [None; METRICS];
        v[DELTA] = Some(probe.delta);
        out.push(v);
    }
    Ok(out)
}

fn run_trials(cfg: &ExperimentConfig, prep: &[Prepared]) -> Vec<std::result::Result<TrialValues, String>> {
    let f = |t: usize| {
        let r = match cfg.mode {
            Mode::OngridHihtp => trial_ongrid(cfg, prep, t),
            Mode::OffgridLmmse | Mode::Predict => trial_offgrid(cfg, prep, t),
            Mode::HiripProbe => trial_probe(cfg, prep, t),
            Mode::Overhead | Mode::DpssDump => Ok(Vec::new()),
        };
        r.map_err(|e| e.to_string())
    };
    (0..cfg.trials).into_par_iter().map(f).collect()
}

/// Runs the experiment. Trials are independent and may run in parallel;
/// results are merged in trial order, so the report depends only on the
/// configuration and seed.
pub fn run(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let layout = slots(cfg);
    let mut report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        seed: cfg.seed,
        snr_definition: "unit average pilot power per sample; noise variance 10^(-SNR/10)".into(),
        trials_completed: 0,
        trials_excluded: 0,
        exclusions: Vec::new(),
        rows: Vec::new(),
        dpss: None,
    };
    match cfg.mode {
        Mode::DpssDump => {
            let spec = ProlateSpec::narrowband(cfg.dims.frame_len, cfg.dims.frame_len, cfg.q_bem);
            let b = compute_dpss(&spec)?;
            report.dpss = Some(DpssSummary {
                len: spec.len,
                half_bandwidth: spec.half_bandwidth,
                lambdas: b.lambdas,
            });
            return Ok(report);
        }
        Mode::Overhead => {
            report.rows = layout.iter().map(|s| empty_row(cfg, &prep, s)).collect();
            return Ok(report);
        }
        _ => {}
    }
    let results = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_trials(cfg, &prep)),
        None => run_trials(cfg, &prep),
    };
    let mut samples: Vec<[Vec<f64>; METRICS]> = vec![Default::default(); layout.len()];
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(vals) if vals.len() == layout.len() => {
                report.trials_completed += 1;
                for (acc, v) in samples.iter_mut().zip(vals) {
                    for m in 0..METRICS {
                        if let Some(x) = v[m] {
                            acc[m].push(x);
                        }
                    }
                }
            }
            Ok(vals) => {
                report.trials_excluded += 1;
                report.exclusions.push(Exclusion {
                    trial: t,
                    error: format!("trial produced {} values for {} rows", vals.len(), layout.len()),
                });
            }
            Err(e) => {
                report.trials_excluded += 1;
                report.exclusions.push(Exclusion { trial: t, error: e });
            }
        }
    }
    for (s, acc) in layout.iter().zip(&samples) {
        let mut row = empty_row(cfg, &prep, s);
        let st = |m: usize| Stat::from_samples(&acc[m]);
        row.coef_mse = st(COEF);
        row.chan_mse = st(CHAN);
        row.chan_nmse = st(NCHAN);
        row.oracle_diff = st(ORACLE);
        row.hirip_delta = st(DELTA);
        row.support_hit = st(HIT);
        report.rows.push(row);
    }
    Ok(report)
}

fn empty_row(cfg: &ExperimentConfig, prep: &[Prepared], s: &Slot) -> MetricRow {
    let p = &prep[s.waveform];
    MetricRow {
        waveform: p.spec.label(),
        kind: p.spec.scheme.kind(),
        overhead: p.overhead,
        snr_db: s.snr.map(|i| cfg.snr_db[i]),
        horizon: s.horizon,
        coef_mse: None,
        chan_mse: None,
        chan_nmse: None,
        oracle_diff: None,
        hirip_delta: None,
        support_hit: None,
    }
}
