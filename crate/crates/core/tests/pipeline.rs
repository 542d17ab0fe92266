//! End-to-end behaviour across modules.

use dsltv_core::channel::{apply_channel, gen_offgrid, sample_support, GridDims, SparsityProfile, SupportKind};
use dsltv_core::dpss::{compute_dpss, ProlateSpec};
use dsltv_core::estimate::{estimate_offgrid, estimate_single_bem, LmmseParams, PriorModel, SingleBemCache, SolveForm};
use dsltv_core::harness::{self, noise_variance, ExperimentConfig};
use dsltv_core::linalg::{CMat, CVec};
use dsltv_core::rng::{self, complex_normal, tag};
use dsltv_core::sensing::{hihtp, Sensing};
use dsltv_core::waveform::{plan_pilots, PilotBudget, Placement, Scheme, Waveform, WaveformConfig};
use dsltv_core::C64;

fn small_run(mode: &str, extra: serde_json::Value) -> harness::MetricsReport {
    let mut v = serde_json::json!({
        "mode": mode,
        "dims": {"delay_taps": 8, "max_doppler": 3, "frame_len": 512},
        "profile": {"kind": "type1", "p_delay": 0.3, "p_doppler": 0.3},
        "waveforms": [{"label": "afdm", "scheme": {"kind": "afdm", "p_afdm": 1, "c2": 0.0},
                       "budget": {"count": 10}, "placement": "random"}],
        "snr_db": [0.0, 10.0, 20.0, 30.0],
        "trials": 40,
        "seed": 21,
        "sparsity": "realized"
    });
    for (k, val) in extra.as_object().unwrap() {
        v[k] = val.clone();
    }
    harness::run(&ExperimentConfig::from_json(&v.to_string()).unwrap()).unwrap()
}

fn chan_means(r: &harness::MetricsReport) -> Vec<f64> {
    r.rows
        .iter()
        .filter(|x| x.horizon == 0)
        .map(|x| x.chan_mse.unwrap().mean)
        .collect()
}

#[test]
fn ongrid_error_falls_with_snr() {
    let m = chan_means(&small_run("ongrid-hihtp", serde_json::json!({})));
    assert!(m.windows(2).all(|w| w[1] < w[0]), "{m:?}");
}

#[test]
fn offgrid_error_falls_with_snr() {
    let m = chan_means(&small_run("offgrid-lmmse", serde_json::json!({})));
    assert!(m.windows(2).all(|w| w[1] < w[0]), "{m:?}");
}

#[test]
fn prediction_error_grows_with_horizon() {
    let r = small_run("predict", serde_json::json!({"n_ext": [32, 128], "snr_db": [30.0]}));
    let at = |h| r.row("afdm", Some(30.0), h).unwrap().chan_mse.unwrap().mean;
    assert!(at(0) < at(32) && at(32) < at(128), "{} {} {}", at(0), at(32), at(128));
}

#[test]
fn support_sampling_matches_activation_probabilities() {
    let dims = GridDims::new(20, 7, 256).unwrap();
    let p = SparsityProfile::new(SupportKind::Type2, 0.3, 0.25);
    let mut r = rng::stream(5, 0, tag::SUPPORT);
    let draws = 4000;
    let (mut delays, mut per, mut active) = (0usize, 0usize, 0usize);
    for _ in 0..draws {
        let s = sample_support(&p, &dims, &mut r).unwrap();
        let d = s.active_delays();
        delays += d.len();
        for l in d {
            per += s.dopplers_at(l).len();
            active += 1;
        }
    }
    let mean_delays = delays as f64 / draws as f64;
    let mean_per = per as f64 / active as f64;
    // a delay only counts when at least one of its 15 bins is on
    let any = 1.0 - 0.75f64.powi(15);
    let want_delays = 20.0 * 0.3 * any;
    let want_per = 15.0 * 0.25 / any;
    // standard errors are about 0.032 and 0.011
    assert!((mean_delays - want_delays).abs() < 0.13, "{mean_delays} vs {want_delays}");
    assert!((mean_per - want_per).abs() < 0.045, "{mean_per} vs {want_per}");
}

#[test]
fn hihtp_residual_is_non_increasing_on_well_conditioned_matrices() {
    let (rows, blocks, block_len) = (64, 6, 4);
    for seed in 0..10 {
        let mut r = rng::stream(seed, 0, 0);
        let m = CMat::from_fn(rows, blocks * block_len, |_, _| complex_normal(&mut r, 1.0 / rows as f64));
        let mut x = vec![C64::new(0.0, 0.0); blocks * block_len];
        for i in [1usize, 2, 6, 7, 17, 18] {
            x[i] = complex_normal(&mut r, 1.0);
        }
        let y: Vec<C64> = (&m * CVec::from_column_slice(&x)).iter().map(|v| v + complex_normal(&mut r, 1e-4)).collect();
        let res = hihtp(&m, &y, block_len, 3, 2, 50, true).unwrap();
        let yv = CVec::from_column_slice(&y);
        let norms: Vec<f64> = res
            .history
            .iter()
            .map(|h| (&yv - &m * CVec::from_column_slice(h)).norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{norms:?}");
        assert!(res.converged);
    }
}

#[test]
fn single_and_shifted_bases_agree_at_high_snr() {
    let dims = GridDims::new(6, 3, 512).unwrap();
    let cfg = WaveformConfig { dims, scheme: Scheme::Afdm { p_afdm: 1, c2: 0.0 } };
    let wf = Waveform::new(cfg).unwrap();
    let profile = SparsityProfile::new(SupportKind::Type2, 0.5, 0.3);
    let basis = compute_dpss(&ProlateSpec::narrowband(512, 512, 4)).unwrap();
    let cache = SingleBemCache::new(512, 512, 4).unwrap();
    let s2 = noise_variance(40.0);
    let mut checked = 0;
    for trial in 0..8u64 {
        let support = sample_support(&profile, &dims, &mut rng::stream(31, trial, tag::SUPPORT)).unwrap();
        if support.count() == 0 {
            continue;
        }
        let sigma = profile.sigma_alpha_sq(&dims, 3);
        let (ch, _) = gen_offgrid(&support, 3, sigma, &mut rng::stream(31, trial, tag::GAINS)).unwrap();
        let plan = plan_pilots(&cfg, &PilotBudget::count(12), Placement::Random, &mut rng::stream(31, trial, tag::PILOTS)).unwrap();
        let sensing = Sensing::new(wf.clone(), plan, false).unwrap();
        let truth = ch.trajectories(0, wf.span());
        let r = apply_channel(&truth, sensing.stream(), wf.prefix_len(), s2, &mut rng::stream(31, trial, tag::NOISE)).unwrap();
        let y = sensing.observe(&r).unwrap();
        let params = LmmseParams { paths: 3, sigma_alpha_sq: sigma, sigma_w_sq: s2, prior: PriorModel::Exact, form: SolveForm::Auto };
        let shifted = estimate_offgrid(&sensing, &support, &basis, &y, &params).unwrap();
        let single = estimate_single_bem(&sensing, &support, &cache, &y, &params).unwrap();
        let power = truth.power();
        let e1 = truth.mse(&shifted.h_hat).unwrap() / power;
        let e2 = truth.mse(&single.h_hat).unwrap() / power;
        assert!(e1 < 1e-2 && e2 < 1e-2, "trial {trial}: {e1} {e2}");
        checked += 1;
    }
    assert!(checked >= 5);
    assert!(cache.patterns() > 0);
}
