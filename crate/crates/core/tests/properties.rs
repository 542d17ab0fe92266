//! Randomised invariants.

use dsltv_core::channel::{gen_offgrid, GridDims, SupportMask, TapTrajectories};
use dsltv_core::dpss::{compute_dpss, ProlateSpec};
use dsltv_core::estimate::{coefficient_error_bound, lmmse, reconstruct, SolveForm};
use dsltv_core::linalg::CMat;
use dsltv_core::rng::{self, complex_normal};
use dsltv_core::sensing::{hier_threshold, hihtp, offgrid_columns, ColumnIndex};
use dsltv_core::waveform::{Scheme, Waveform, WaveformConfig};
use dsltv_core::C64;
use proptest::prelude::*;
use rand::Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMat {
    let mut r = rng::stream(seed, 0, 0);
    CMat::from_fn(rows, cols, |_, _| complex_normal(&mut r, 1.0 / rows as f64))
}

fn random_vec(len: usize, seed: u64) -> Vec<C64> {
    let mut r = rng::stream(seed, 1, 0);
    (0..len).map(|_| complex_normal(&mut r, 1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn threshold_output_is_hierarchically_sparse(
        blocks in 1usize..6, block_len in 1usize..6, seed in any::<u64>(), sd in 1usize..6, sdd in 1usize..6,
    ) {
        let s_d = sd.min(blocks);
        let s_dd = sdd.min(block_len);
        let x = random_vec(blocks * block_len, seed);
        let sup = hier_threshold(&x, block_len, s_d, s_dd);
        prop_assert!(sup.satisfies(s_d, s_dd));
        prop_assert_eq!(sup.blocks.len(), s_d);
        // thresholding the kept entries again selects the same support
        let mut kept = vec![C64::new(0.0, 0.0); x.len()];
        for i in sup.indices() {
            kept[i] = x[i];
        }
        prop_assert_eq!(hier_threshold(&kept, block_len, s_d, s_dd), sup);
    }

    #[test]
    fn hihtp_estimate_respects_sparsity(seed in any::<u64>(), rows in 6usize..20) {
        let (blocks, block_len, s_d, s_dd) = (4, 3, 2, 1);
        let m = random_matrix(rows, blocks * block_len, seed);
        let y = random_vec(rows, seed ^ 7);
        let res = hihtp(&m, &y, block_len, s_d, s_dd, 30, false).unwrap();
        prop_assert!(res.support.satisfies(s_d, s_dd));
        let nonzero: Vec<usize> = (0..res.estimate.len()).filter(|&i| res.estimate[i].norm() > 0.0).collect();
        let allowed = res.support.indices();
        prop_assert!(nonzero.iter().all(|i| allowed.contains(i)));
    }

    #[test]
    fn lmmse_is_linear_in_the_observation(seed in any::<u64>(), rows in 4usize..16, cols in 2usize..10, a in -2.0f64..2.0) {
        let m = random_matrix(rows, cols, seed);
        let prior: Vec<f64> = (0..cols).map(|i| 0.5 + (i % 3) as f64).collect();
        let scale = vec![1.0; rows];
        let y1 = random_vec(rows, seed ^ 1);
        let y2 = random_vec(rows, seed ^ 2);
        let c = C64::new(a, 0.5);
        let y: Vec<C64> = y1.iter().zip(&y2).map(|(p, q)| p + c * q).collect();
        for form in [SolveForm::Gram, SolveForm::Covariance] {
            let x = lmmse(&m, &y, &prior, 0.1, &scale, form).unwrap().beta;
            let x1 = lmmse(&m, &y1, &prior, 0.1, &scale, form).unwrap().beta;
            let x2 = lmmse(&m, &y2, &prior, 0.1, &scale, form).unwrap().beta;
            for i in 0..cols {
                prop_assert!((x[i] - x1[i] - c * x2[i]).norm() < 1e-9 * (1.0 + x[i].norm()));
            }
        }
    }

    #[test]
    fn channel_mse_is_quadratic_in_scale(seed in any::<u64>(), a in 0.1f64..10.0) {
        let mut t = TapTrajectories::zeros(3, 0, 32);
        let mut u = TapTrajectories::zeros(3, 0, 32);
        let mut r = rng::stream(seed, 0, 0);
        for l in 0..3 {
            for (x, y) in t.row_mut(l).iter_mut().zip(u.row_mut(l).iter_mut()) {
                *x = complex_normal(&mut r, 1.0);
                *y = complex_normal(&mut r, 1.0);
            }
        }
        let base = t.mse(&u).unwrap();
        let mut ts = t.clone();
        let mut us = u.clone();
        for l in 0..3 {
            ts.row_mut(l).iter_mut().for_each(|v| *v *= a);
            us.row_mut(l).iter_mut().for_each(|v| *v *= a);
        }
        prop_assert!((ts.mse(&us).unwrap() - a * a * base).abs() <= 1e-10 * a * a * base.max(1e-300));
        prop_assert_eq!(t.mse(&t).unwrap(), 0.0);
    }

    #[test]
    fn prolate_sequences_are_orthonormal(len in 16usize..200, nw in 0.3f64..4.0, count in 1usize..6) {
        let w = (nw / len as f64).min(0.45);
        let b = compute_dpss(&ProlateSpec { len, half_bandwidth: w, count: count.min(len) }).unwrap();
        for i in 0..b.order() {
            for j in 0..b.order() {
                let d: f64 = b.vectors[i].iter().zip(&b.vectors[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-9);
            }
        }
        prop_assert!(b.lambdas.windows(2).all(|p| p[1] <= p[0] + 1e-12));
        prop_assert!(b.lambdas.iter().all(|&l| l > 0.0 && l < 1.0 + 1e-12));
    }

    #[test]
    fn reconstruction_error_matches_coefficient_error(seed in any::<u64>(), taps in 1usize..4) {
        let dims = GridDims::new(taps, 2, 64).unwrap();
        let basis = compute_dpss(&ProlateSpec::narrowband(64, 64, 3)).unwrap();
        let mut r = rng::stream(seed, 0, 0);
        let mut support = SupportMask::empty(dims);
        for l in 0..taps {
            for q in -2..=2 {
                support.set(l, q, r.gen_bool(0.5));
            }
        }
        prop_assume!(support.count() > 0);
        let cols = offgrid_columns(&dims, &support, basis.order());
        let index: Vec<ColumnIndex> = support
            .points()
            .into_iter()
            .flat_map(|(l, q)| (0..basis.order()).map(move |b| ColumnIndex { delay: l, doppler: q, basis: Some(b) }))
            .collect();
        prop_assert_eq!(index.len(), cols.len());
        let beta: Vec<C64> = (0..cols.len()).map(|_| complex_normal(&mut r, 1.0)).collect();
        let beta_hat: Vec<C64> = (0..cols.len()).map(|_| complex_normal(&mut r, 1.0)).collect();
        let h = reconstruct(&beta, &index, &basis, dims).unwrap();
        let hh = reconstruct(&beta_hat, &index, &basis, dims).unwrap();
        let err: Vec<C64> = beta.iter().zip(&beta_hat).map(|(a, b)| a - b).collect();
        let bound = coefficient_error_bound(&err, &index, 64);
        prop_assert!(h.mse(&hh).unwrap() <= bound * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn modulation_round_trips(seed in any::<u64>(), pick in 0usize..4) {
        let dims = GridDims::new(4, 2, 64).unwrap();
        let scheme = match pick {
            0 => Scheme::Scm,
            1 => Scheme::Ofdm { n_fft: 16, n_cp: 3, model: Default::default() },
            2 => Scheme::Afdm { p_afdm: 1, c2: 0.01 },
            _ => Scheme::Otfs { n_doppler: 8, n_delay: 8 },
        };
        let wf = Waveform::new(WaveformConfig { dims, scheme }).unwrap();
        let x = random_vec(dims.frame_len, seed);
        let s = wf.modulate(&x).unwrap();
        let back = wf.demodulate(&s[wf.prefix_len()..]).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn streams_replay_from_their_coordinates(seed in any::<u64>(), trial in any::<u64>(), tag in 0u64..8) {
        let a: Vec<u64> = (0..4).map({ let mut r = rng::stream(seed, trial, tag); move |_| r.gen() }).collect();
        let b: Vec<u64> = (0..4).map({ let mut r = rng::stream(seed, trial, tag); move |_| r.gen() }).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn offgrid_gain_variance_matches_profile() {
    let dims = GridDims::new(1, 1, 16).unwrap();
    let support = SupportMask::from_points(dims, &[(0, 0)]).unwrap();
    let mut r = rng::stream(11, 0, 0);
    let (n, sigma) = (20_000, 0.3);
    let mut acc = 0.0;
    for _ in 0..n {
        let (ch, _) = gen_offgrid(&support, 2, sigma, &mut r).unwrap();
        acc += ch.points[0].gains.iter().map(|g| g.norm_sqr()).sum::<f64>();
    }
    let mean = acc / n as f64;
    // two paths of variance sigma; relative standard error about 0.5%
    assert!((mean - 2.0 * sigma).abs() < 0.03 * 2.0 * sigma, "{mean}");
}
