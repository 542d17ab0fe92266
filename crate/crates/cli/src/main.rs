use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsltv_core::channel::{
    apply_channel, gen_offgrid, gen_ongrid, sample_support, ChannelModel, ChannelRecord, GridDims, OnGridChannel,
    SparsityProfile, SupportKind, TapTrajectories,
};
use dsltv_core::dpss::{compute_dpss, ProlateSpec};
use dsltv_core::estimate::{estimate_offgrid, predict, LmmseParams, PriorModel, SolveForm};
use dsltv_core::harness::{self, noise_variance, ExperimentConfig, WaveformSpec};
use dsltv_core::rng::{self, tag};
use dsltv_core::sensing::{hihtp, hirip_probe, Sensing};
use dsltv_core::waveform::{overhead, plan_pilots, PilotBudget, Placement, Scheme, Waveform, WaveformConfig};
use dsltv_core::C64;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dsltv", version, about = "Doubly sparse time-varying channel simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stem: Option<String>,
    },
    /// Closed-form pilot overhead of one waveform.
    Overhead {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        wave: WaveArgs,
    },
    /// Slepian eigenvalues and sequences as CSV.
    Dpss {
        #[arg(long)]
        n: usize,
        /// Half-bandwidth; defaults to 1/(2n).
        #[arg(long)]
        w: Option<f64>,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Empirical HiRIP lower bounds of the normalised on-grid matrix.
    HiripProbe {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        wave: WaveArgs,
        #[arg(long)]
        s_d: usize,
        #[arg(long)]
        s_dd: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a channel realisation and write it as JSON.
    GenChannel {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = KindArg::Type1)]
        kind: KindArg,
        #[arg(long)]
        p_delay: f64,
        #[arg(long)]
        p_doppler: f64,
        #[arg(long)]
        cluster_len: Option<usize>,
        /// Paths per point; draws an off-grid channel when given.
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the trajectories over the frame as CSV.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Estimate a stored channel from noisy pilots.
    Estimate {
        #[command(flatten)]
        est: EstimateArgs,
    },
    /// Estimate a stored off-grid channel and extrapolate it.
    Predict {
        #[command(flatten)]
        est: EstimateArgs,
        #[arg(long)]
        horizon: usize,
    },
}

#[derive(Args)]
struct GridArgs {
    /// Delay taps.
    #[arg(long)]
    l: usize,
    /// Largest Doppler bin.
    #[arg(long)]
    q: usize,
    /// Frame length.
    #[arg(long)]
    n: usize,
}

impl GridArgs {
    fn dims(&self) -> Result<GridDims> {
        Ok(GridDims::new(self.l, self.q, self.n)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WaveKind {
    Scm,
    Ofdm,
    Afdm,
    Otfs,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Type1,
    Type2,
    Type3,
}

#[derive(Args)]
struct WaveArgs {
    #[arg(long, value_enum)]
    waveform: WaveKind,
    /// Pilot count, or pilot symbols for OFDM.
    #[arg(long, default_value_t = 1)]
    pilots: usize,
    /// OFDM pilot subcarriers per pilot symbol.
    #[arg(long)]
    subcarriers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    p_afdm: usize,
    #[arg(long, default_value_t = 0.0)]
    c2: f64,
    #[arg(long, default_value_t = 64)]
    n_fft: usize,
    #[arg(long)]
    n_cp: Option<usize>,
    #[arg(long, default_value_t = 16)]
    n_doppler: usize,
    #[arg(long)]
    n_delay: Option<usize>,
    #[arg(long)]
    fold: bool,
}

impl WaveArgs {
    fn spec(&self, dims: &GridDims) -> WaveformSpec {
        let scheme = match self.waveform {
            WaveKind::Scm => Scheme::Scm,
            WaveKind::Ofdm => Scheme::Ofdm {
                n_fft: self.n_fft,
                n_cp: self.n_cp.unwrap_or(dims.delay_taps - 1),
                model: Default::default(),
            },
            WaveKind::Afdm => Scheme::Afdm {
                p_afdm: self.p_afdm,
                c2: self.c2,
            },
            WaveKind::Otfs => Scheme::Otfs {
                n_doppler: self.n_doppler,
                n_delay: self.n_delay.unwrap_or(dims.frame_len / self.n_doppler.max(1)),
            },
        };
        let budget = match self.subcarriers {
            Some(s) => PilotBudget::grid(self.pilots, s),
            None => PilotBudget::count(self.pilots),
        };
        WaveformSpec {
            label: None,
            scheme,
            budget,
            placement: Placement::Spread,
            fold: self.fold,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Channel JSON written by `gen-channel`.
    #[arg(long)]
    channel: PathBuf,
    /// Waveform JSON: scheme, budget, optional placement and fold.
    #[arg(long)]
    waveform: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 4)]
    q_bem: usize,
    /// HiHTP sparsity inputs for on-grid channels; the drawn support's
    /// levels when absent.
    #[arg(long)]
    s_d: Option<usize>,
    #[arg(long)]
    s_dd: Option<usize>,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn traj_csv(t: &TapTrajectories) -> Result<String> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn per_tap_csv(truth: &TapTrajectories, est: &TapTrajectories) -> String {
    let mut s = String::from("tap,mse,power\n");
    for l in 0..truth.taps {
        let e: f64 = truth.row(l).iter().zip(est.row(l)).map(|(a, b)| (a - b).norm_sqr()).sum();
        let p: f64 = truth.row(l).iter().map(|a| a.norm_sqr()).sum();
        let _ = writeln!(s, "{l},{},{}", e / truth.len as f64, p / truth.len as f64);
    }
    s
}

fn cmd_run(config: &Path, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>, stem: Option<String>) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let report = harness::run(&cfg)?;
    let dir = out
        .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let stem = stem
        .or_else(|| cfg.output.as_ref().map(|o| o.stem.clone()))
        .unwrap_or_else(|| "report".into());
    for p in harness::emit(&report, &dir, &stem)? {
        println!("wrote {}", p.display());
    }
    println!(
        "trials completed {}, excluded {}",
        report.trials_completed, report.trials_excluded
    );
    for e in &report.exclusions {
        eprintln!("trial {}: {}", e.trial, e.error);
    }
    if !report.within_exclusion_limit() {
        eprintln!(
            "excluded fraction {:.3} exceeds limit {:.3}",
            report.excluded_fraction(),
            cfg.max_excluded_fraction
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_dpss(n: usize, w: Option<f64>, count: usize, out: &Path) -> Result<()> {
    let spec = ProlateSpec {
        len: n,
        half_bandwidth: w.unwrap_or(0.5 / n as f64),
        count,
    };
    let b = compute_dpss(&spec)?;
    let mut lam = String::from("index,lambda\n");
    for (i, l) in b.lambdas.iter().enumerate() {
        let _ = writeln!(lam, "{i},{l}");
    }
    let mut seq = String::from("n");
    for i in 0..count {
        let _ = write!(seq, ",u{i}");
    }
    seq.push('\n');
    for t in 0..n {
        let _ = write!(seq, "{t}");
        for v in &b.vectors {
            let _ = write!(seq, ",{}", v[t]);
        }
        seq.push('\n');
    }
    let (lp, sp) = (out.join("dpss_lambdas.csv"), out.join("dpss_basis.csv"));
    write_file(&lp, &lam)?;
    write_file(&sp, &seq)?;
    println!("wrote {}\nwrote {}", lp.display(), sp.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe(grid: &GridArgs, wave: &WaveArgs, s_d: usize, s_dd: usize, trials: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let dims = grid.dims()?;
    let spec = wave.spec(&dims);
    let cfg = WaveformConfig {
        dims,
        scheme: spec.scheme,
    };
    let plan = plan_pilots(&cfg, &spec.budget, spec.placement, &mut rng::stream(seed, 0, tag::PILOTS))?;
    let mm = Sensing::new(Waveform::new(cfg)?, plan, spec.fold)?.ongrid();
    let m = &mm.matrix / C64::new(mm.rms_column_norm(), 0.0);
    let probe = hirip_probe(&m, dims.doppler_bins(), s_d, s_dd, trials, &mut rng::stream(seed, 0, tag::PROBE))?;
    let mut s = String::from("sample,delta\n");
    for (i, d) in probe.samples.iter().enumerate() {
        let _ = writeln!(s, "{i},{d}");
    }
    match out {
        Some(p) => {
            write_file(&p, &s)?;
            println!("max delta {} written to {}", probe.delta, p.display());
        }
        None => print!("{s}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(
    grid: &GridArgs,
    kind: KindArg,
    p_delay: f64,
    p_doppler: f64,
    cluster_len: Option<usize>,
    paths: Option<usize>,
    seed: u64,
    out: &Path,
    traj: Option<PathBuf>,
) -> Result<()> {
    let dims = grid.dims()?;
    let kind = match kind {
        KindArg::Type1 => SupportKind::Type1,
        KindArg::Type2 => SupportKind::Type2,
        KindArg::Type3 => SupportKind::Type3,
    };
    let profile = SparsityProfile {
        cluster_len,
        ..SparsityProfile::new(kind, p_delay, p_doppler)
    };
    let support = sample_support(&profile, &dims, &mut rng::stream(seed, 0, tag::SUPPORT))?;
    let mut g = rng::stream(seed, 0, tag::GAINS);
    let model = match paths {
        Some(p) => ChannelModel::Off(gen_offgrid(&support, p, profile.sigma_alpha_sq(&dims, p), &mut g)?.0),
        None => ChannelModel::On(gen_ongrid(&support, profile.sigma_alpha_sq(&dims, 1), &mut g).0),
    };
    let rec = ChannelRecord {
        seed,
        profile,
        support,
        model,
    };
    write_file(out, &serde_json::to_string_pretty(&rec)?)?;
    println!("wrote {} ({} active points)", out.display(), rec.support.count());
    if let Some(p) = traj {
        write_file(&p, &traj_csv(&rec.trajectories(0, dims.frame_len))?)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs, horizon: Option<usize>) -> Result<()> {
    let rec: ChannelRecord = read_json(&a.channel)?;
    let spec: WaveformSpec = read_json(&a.waveform)?;
    let dims = rec.dims();
    let cfg = WaveformConfig {
        dims,
        scheme: spec.scheme,
    };
    let wf = Waveform::new(cfg)?;
    let plan = plan_pilots(&cfg, &spec.budget, spec.placement, &mut rng::stream(a.seed, 0, tag::PILOTS))?;
    let sensing = Sensing::new(wf.clone(), plan, spec.fold)?;
    let span = wf.span();
    let truth = rec.trajectories(0, span);
    let s2 = noise_variance(a.snr_db);
    let r = apply_channel(&truth, sensing.stream(), wf.prefix_len(), s2, &mut rng::stream(a.seed, 0, tag::NOISE))?;
    let y = sensing.observe(&r)?;
    let (h_hat, pred) = match &rec.model {
        ChannelModel::On(ch) => {
            if horizon.is_some() {
                bail!("prediction needs an off-grid channel");
            }
            let (rd, rdd) = rec.support.realized_levels();
            let mm = sensing.ongrid();
            let scale = mm.rms_column_norm();
            let m = &mm.matrix / C64::new(scale, 0.0);
            let res = hihtp(
                &m,
                &y,
                dims.doppler_bins(),
                a.s_d.unwrap_or(rd).max(1),
                a.s_dd.unwrap_or(rdd).max(1),
                a.iters,
                false,
            )?;
            let est = OnGridChannel {
                dims,
                gains: res.estimate.iter().map(|v| v / scale).collect(),
                sigma_alpha_sq: ch.sigma_alpha_sq,
            };
            (est.trajectories(0, span), None)
        }
        ChannelModel::Off(ch) => {
            let basis = compute_dpss(&ProlateSpec::narrowband(span, dims.frame_len, a.q_bem))?;
            let params = LmmseParams {
                paths: ch.paths_per_point,
                sigma_alpha_sq: ch.sigma_alpha_sq,
                sigma_w_sq: s2,
                prior: PriorModel::Exact,
                form: SolveForm::Auto,
            };
            let est = estimate_offgrid(&sensing, &rec.support, &basis, &y, &params)?;
            let pred = match horizon {
                Some(h) if h > 0 => Some(predict(&est.beta_hat, &est.columns, &basis, dims, h)?),
                _ => None,
            };
            (est.h_hat, pred)
        }
    };
    let mse = truth.mse(&h_hat)?;
    write_file(&a.out.join("estimate_mse.csv"), &per_tap_csv(&truth, &h_hat))?;
    write_file(&a.out.join("estimate_traj.csv"), &traj_csv(&h_hat)?)?;
    println!("channel mse {mse} over {span} samples");
    if let Some(p) = pred {
        let future = rec.trajectories(span as i64, p.h.len);
        write_file(&a.out.join("predict_mse.csv"), &per_tap_csv(&future, &p.h))?;
        write_file(&a.out.join("predict_traj.csv"), &traj_csv(&p.h)?)?;
        println!("prediction mse {} over {} samples", future.mse(&p.h)?, p.h.len);
        if !p.excluded.is_empty() {
            eprintln!("basis indices {:?} below the eigenvalue floor were dropped", p.excluded);
        }
    }
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run {
            config,
            seed,
            workers,
            out,
            stem,
        } => cmd_run(&config, seed, workers, out, stem),
        Cmd::Overhead { grid, wave } => (|| {
            let dims = grid.dims()?;
            let spec = wave.spec(&dims);
            let cfg = WaveformConfig {
                dims,
                scheme: spec.scheme,
            };
            println!("{}", overhead(&cfg, &spec.budget)?);
            Ok(ExitCode::SUCCESS)
        })(),
        Cmd::Dpss { n, w, count, out } => cmd_dpss(n, w, count, &out).map(|_| ExitCode::SUCCESS),
        Cmd::HiripProbe {
            grid,
            wave,
            s_d,
            s_dd,
            trials,
            seed,
            out,
        } => cmd_probe(&grid, &wave, s_d, s_dd, trials, seed, out).map(|_| ExitCode::SUCCESS),
        Cmd::GenChannel {
            grid,
            kind,
            p_delay,
            p_doppler,
            cluster_len,
            paths,
            seed,
            out,
            traj,
        } => cmd_gen(&grid, kind, p_delay, p_doppler, cluster_len, paths, seed, &out, traj).map(|_| ExitCode::SUCCESS),
        Cmd::Estimate { est } => cmd_estimate(&est, None).map(|_| ExitCode::SUCCESS),
        Cmd::Predict { est, horizon } => cmd_estimate(&est, Some(horizon)).map(|_| ExitCode::SUCCESS),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
