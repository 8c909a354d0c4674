#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::geometry::{Ccm, Curvature};

fn point(kappa: Curvature, coords: Vec<f64>) -> CcmPoint {
    CcmPoint::new(kappa, coords).unwrap()
}

fn embedding(points: Vec<CcmPoint>) -> Embedding {
    let raw = points.iter().flat_map(|p| p.coords().to_vec()).collect();
    Embedding { raw, projected: points }
}

fn flat_ensemble(members: usize, dim: usize) -> Ensemble {
    Ensemble::new(vec![Ccm::new(Curvature::FLAT, dim); members]).unwrap()
}

fn gaussian_points(rng: &mut ChaCha8Rng, count: usize, members: usize, ambient: usize, shift: f64) -> Vec<Embedding> {
    (0..count)
        .map(|_| {
            embedding(
                (0..members)
                    .map(|_| {
                        point(
                            Curvature::FLAT,
                            (0..ambient)
                                .map(|_| rng.sample::<f64, _>(StandardNormal) + shift)
                                .collect(),
                        )
                    })
                    .collect(),
            )
        })
        .collect()
}

fn quick_config(variant: Variant, ensemble: Ensemble, n: usize) -> DetectorConfig {
    DetectorConfig {
        mc_runs: 20_000,
        ..DetectorConfig::new(variant, ensemble, n)
    }
}

fn identity_test(mean: Vec<f64>) -> CusumTest {
    let d = mean.len();
    let cov = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    CusumTest::new(vec![0], mean, cov, 0.5, 5.0, 0.01).unwrap()
}

#[test]
fn local_statistic_examples() {
    let t = identity_test(vec![0.0]);
    assert_eq!(t.local_statistic(&[vec![2.0], vec![2.0]]).unwrap(), 4.0);
    assert_eq!(t.local_statistic(&[vec![-1.0], vec![1.0]]).unwrap(), 0.0);
    let t = identity_test(vec![0.0, 0.0]);
    assert!((t.local_statistic(&[vec![3.0, 4.0]]).unwrap() - 25.0).abs() < 1e-12);
    assert!(matches!(
        t.local_statistic(&[vec![1.0]]),
        Err(CdtError::Dimension { .. })
    ));
}

#[test]
fn change_point_and_delay_examples() {
    let mut state = DetectorState {
        accumulators: vec![0.0],
        alarms: vec![],
        test_alarms: vec![vec![]],
        windows: 0,
        tau_hat: None,
    };
    assert_eq!(estimate_change_point(&state, 5), None);
    state.alarms = vec![7, 9];
    assert_eq!(estimate_change_point(&state, 5), Some(35));
    state.alarms = vec![1];
    assert_eq!(estimate_change_point(&state, 5), Some(5));

    assert!((detection_delay_bound(10.0, 0.3 + 5.0, 0.3).unwrap() - 2.0).abs() < 1e-12);
    assert!(matches!(
        detection_delay_bound(10.0, 0.3, 0.3),
        Err(CdtError::Undetectable { .. })
    ));
    let full = detection_delay_bound(4.0, 3.0, 1.0).unwrap();
    let half = detection_delay_bound(4.0, 2.0, 1.0).unwrap();
    assert!((half - 2.0 * full).abs() < 1e-12);
}

#[test]
fn config_validation_and_default_window() {
    assert_eq!(DetectorConfig::default_window(5000), 5);
    assert_eq!(DetectorConfig::default_window(1000), 1);
    assert_eq!(DetectorConfig::default_window(1001), 2);
    assert_eq!(DetectorConfig::default_window(0), 1);
    let base = DetectorConfig::new(Variant::Distance, Ensemble::standard(2), 5);
    assert!(base.validate().is_ok());
    for bad in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(DetectorConfig {
            alpha: bad,
            ..base.clone()
        }
        .validate()
        .is_err());
    }
    assert!(DetectorConfig { window_n: 0, ..base }.validate().is_err());
}

#[test]
fn too_little_training_data_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let train = gaussian_points(&mut rng, 29 * 5 + 4, 1, 2, 0.0);
    let err = fit_detector(&quick_config(Variant::Distance, flat_ensemble(1, 1), 5), &train).unwrap_err();
    assert!(matches!(err, CdtError::InsufficientData { windows: 29, .. }));
}

#[test]
fn identical_training_points_give_a_usable_detector() {
    let ens = Ensemble::standard(2);
    let z = vec![
        point(Curvature::HYPERBOLIC, vec![0.3, -0.2, (1.0f64 + 0.13).sqrt()]),
        point(Curvature::FLAT, vec![0.5, 1.0, -2.0]),
        point(Curvature::SPHERICAL, vec![0.6, 0.0, 0.8]),
    ];
    let train = vec![embedding(z.clone()); 200];
    for variant in [Variant::Distance, Variant::Riemannian] {
        let det = fit_detector(&quick_config(variant, ens.clone(), 5), &train).unwrap();
        for (m, mu) in det.mu0.iter().enumerate() {
            for (a, b) in mu.coords().iter().zip(z[m].coords()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(det.tests.iter().all(|t| t.h > 0.0));
        let (state, trace) = det.process_stream(&vec![embedding(z.clone()); 50]).unwrap();
        assert_eq!(state.windows, 10);
        assert!(state.alarms.is_empty());
        assert!(trace.iter().all(|r| r.s_w < 1e-6 && r.big_s_w == 0.0));
    }
}

#[test]
fn short_stream_yields_empty_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train = gaussian_points(&mut rng, 300, 1, 3, 0.0);
    let det = fit_detector(&quick_config(Variant::Riemannian, flat_ensemble(1, 2), 5), &train).unwrap();
    let (state, trace) = det.process_stream(&train[..4]).unwrap();
    assert!(trace.is_empty() && state.alarms.is_empty() && state.tau_hat.is_none());
    // A trailing partial window is dropped.
    let (state, trace) = det.process_stream(&train[..13]).unwrap();
    assert_eq!((state.windows, trace.len()), (2, 2));
}

#[test]
fn fitted_drift_matches_the_chi_square_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ens = Ensemble::new(vec![Ccm::new(Curvature::SPHERICAL, 2)]).unwrap();
    let train: Vec<Embedding> = (0..1000)
        .map(|_| {
            let v: Vec<f64> = (0..2).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut c = vec![v[0], v[1], 1.0];
            let r = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= r);
            embedding(vec![point(Curvature::SPHERICAL, c)])
        })
        .collect();
    for n in [5, 10, 25] {
        let det = fit_detector(&quick_config(Variant::Riemannian, ens.clone(), n), &train).unwrap();
        assert_eq!(det.tests[0].dim(), 2);
        assert!(
            (det.tests[0].q - 2.7726 / n as f64).abs() < 1e-4 / n as f64,
            "{}",
            det.tests[0].q
        );
    }
}

#[test]
fn bonferroni_and_member_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = gaussian_points(&mut rng, 500, 3, 3, 0.0);
    let ens = flat_ensemble(3, 2);
    let d = fit_detector(&quick_config(Variant::Distance, ens.clone(), 5), &train).unwrap();
    assert_eq!(d.tests.len(), 1);
    assert_eq!(d.tests[0].members, vec![0, 1, 2]);
    assert_eq!(d.tests[0].dim(), 3);
    assert_eq!(d.tests[0].alpha, 0.01);
    let r = fit_detector(&quick_config(Variant::Riemannian, ens, 5), &train).unwrap();
    assert_eq!(r.tests.len(), 3);
    for (m, t) in r.tests.iter().enumerate() {
        assert_eq!(t.members, vec![m]);
        assert_eq!(t.dim(), 3);
        assert!((t.alpha - 0.01 / 3.0).abs() < 1e-15);
    }
}

/// Draws i.i.d. Gaussian vectors with the given moments.
fn gaussian_u(rng: &mut ChaCha8Rng, mean: &[f64], cov: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    let d = mean.len();
    let l = DMatrix::from_fn(d, d, |i, j| cov[i][j]).cholesky().unwrap().unpack();
    (0..count)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &l * z;
            (0..d).map(|k| mean[k] + x[k]).collect()
        })
        .collect()
}

fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let m = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max((i as f64 + 1.0) / m - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn scaled_statistic_follows_chi_square_for_large_windows() {
    let mean = vec![1.0, -2.0, 0.5];
    let cov = vec![vec![2.0, 0.3, 0.0], vec![0.3, 1.0, -0.2], vec![0.0, -0.2, 0.5]];
    let test = CusumTest::new(vec![0], mean.clone(), cov.clone(), 0.0, 1.0, 0.01).unwrap();
    let law = ChiSquared::new(3.0).unwrap();
    let n = 25;
    let windows = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let us = gaussian_u(&mut rng, &mean, &cov, n * windows);
    let scaled: Vec<f64> = us
        .chunks_exact(n)
        .map(|w| n as f64 * test.local_statistic(w).unwrap())
        .collect();
    let d = ks_distance(scaled, |x| law.cdf(x));
    // Asymptotic critical value of the one-sample KS test at level 0.01.
    assert!(d < 1.628 / (windows as f64).sqrt(), "KS distance {d}");
}

#[test]
fn h0_alarm_rate_is_calibrated() {
    let mean = vec![0.0, 3.0];
    let cov = vec![vec![1.0, 0.4], vec![0.4, 2.0]];
    let n = 5;
    let alpha = 0.01;
    let q = ChiSquared::new(2.0).unwrap().inverse_cdf(0.75) / n as f64;
    let h = estimate_threshold(2, n, q, alpha, 100_000, 11).unwrap();
    let test = CusumTest::new(vec![0], mean.clone(), cov.clone(), q, h, alpha).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let us = gaussian_u(&mut rng, &mean, &cov, n * 100_000);
    let stats: Vec<f64> = us.chunks_exact(n).map(|w| test.local_statistic(w).unwrap()).collect();
    let rate = alarm_rate(&stats, q, h);
    assert!((alpha / 2.0..=2.0 * alpha).contains(&rate), "{rate}");
}

#[test]
fn bonferroni_keeps_the_ensemble_rate_below_alpha() {
    let (c, n, alpha) = (3usize, 5usize, 0.01);
    let q = ChiSquared::new(2.0).unwrap().inverse_cdf(0.75) / n as f64;
    let h = estimate_threshold(2, n, q, alpha / c as f64, 100_000, 12).unwrap();
    let windows = 100_000;
    let streams: Vec<Vec<f64>> = (0..c)
        .map(|m| null_statistics(2, n, windows, 100 + m as u64).unwrap())
        .collect();
    let mut acc = vec![0.0; c];
    let mut alarms = 0usize;
    for w in 0..windows {
        let mut any = false;
        for m in 0..c {
            any |= cusum_update(&mut acc[m], streams[m][w], q, h);
        }
        alarms += usize::from(any);
    }
    let rate = alarms as f64 / windows as f64;
    // Three binomial standard errors of slack.
    let slack = 3.0 * (alpha * (1.0 - alpha) / windows as f64).sqrt();
    assert!(rate <= alpha + slack, "{rate}");
    assert!(rate > alpha / 2.0, "{rate}");
}

/// Direct Euclidean reference: arithmetic means, window-mean moments and a
/// Gauss–Jordan solve.
fn euclidean_reference(train: &[Vec<f64>], stream: &[Vec<f64>], n: usize, ridge: f64) -> Vec<f64> {
    let d = train[0].len();
    let wm: Vec<Vec<f64>> = train
        .chunks_exact(n)
        .map(|w| (0..d).map(|k| w.iter().map(|u| u[k]).sum::<f64>() / n as f64).collect())
        .collect();
    let m = wm.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| wm.iter().map(|u| u[k]).sum::<f64>() / m).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            cov[i][j] = n as f64 * wm.iter().map(|u| (u[i] - mean[i]) * (u[j] - mean[j])).sum::<f64>() / (m - 1.0);
        }
        cov[i][i] += ridge;
    }
    stream
        .chunks_exact(n)
        .map(|w| {
            let diff: Vec<f64> = (0..d)
                .map(|k| mean[k] - w.iter().map(|u| u[k]).sum::<f64>() / n as f64)
                .collect();
            let mut a: Vec<Vec<f64>> = cov
                .iter()
                .zip(&diff)
                .map(|(r, b)| r.iter().copied().chain([*b]).collect())
                .collect();
            for col in 0..d {
                let piv = (col..d)
                    .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                    .unwrap();
                a.swap(col, piv);
                for r in 0..d {
                    if r != col {
                        let f = a[r][col] / a[col][col];
                        for k in col..=d {
                            a[r][k] -= f * a[col][k];
                        }
                    }
                }
            }
            (0..d).map(|k| diff[k] * a[k][d] / a[k][k]).sum()
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn flat_detectors_match_a_direct_euclidean_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (members, ambient, n) = (2, 3, 5);
    let train = gaussian_points(&mut rng, 400, members, ambient, 0.0);
    let stream = gaussian_points(&mut rng, 200, members, ambient, 0.3);
    let ens = flat_ensemble(members, ambient - 1);
    let coords = |e: &Embedding, m: usize| e.projected[m].coords().to_vec();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);

    let det = fit_detector(&quick_config(Variant::Distance, ens.clone(), n), &train).unwrap();
    let (_, trace) = det.process_stream(&stream).unwrap();
    let means: Vec<Vec<f64>> = (0..members)
        .map(|m| {
            (0..ambient)
                .map(|k| train.iter().map(|e| coords(e, m)[k]).sum::<f64>() / train.len() as f64)
                .collect()
        })
        .collect();
    let dist = |e: &Embedding| -> Vec<f64> { (0..members).map(|m| euclid(&coords(e, m), &means[m])).collect() };
    let expected = euclidean_reference(
        &train.iter().map(dist).collect::<Vec<_>>(),
        &stream.iter().map(dist).collect::<Vec<_>>(),
        n,
        1e-6,
    );
    assert_eq!(trace.len(), expected.len());
    for (row, e) in trace.iter().zip(&expected) {
        assert!(close(row.s_w, *e), "{} vs {e}", row.s_w);
    }

    let det = fit_detector(&quick_config(Variant::Riemannian, ens, n), &train).unwrap();
    let (_, trace) = det.process_stream(&stream).unwrap();
    for m in 0..members {
        let offset = |e: &Embedding| -> Vec<f64> { coords(e, m).iter().zip(&means[m]).map(|(a, b)| a - b).collect() };
        let expected = euclidean_reference(
            &train.iter().map(offset).collect::<Vec<_>>(),
            &stream.iter().map(offset).collect::<Vec<_>>(),
            n,
            1e-6,
        );
        let rows: Vec<&TraceRow> = trace.iter().filter(|r| r.member == m).collect();
        assert_eq!(rows.len(), expected.len());
        for (row, e) in rows.iter().zip(&expected) {
            assert!(close(row.s_w, *e), "member {m}: {} vs {e}", row.s_w);
        }
    }
}

#[test]
fn a_shift_is_detected_after_the_change() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let train = gaussian_points(&mut rng, 500, 1, 3, 0.0);
    let mut stream = gaussian_points(&mut rng, 500, 1, 3, 0.0);
    stream.extend(gaussian_points(&mut rng, 500, 1, 3, 1.0));
    for variant in [Variant::Distance, Variant::Riemannian] {
        let det = fit_detector(&quick_config(variant, flat_ensemble(1, 2), 5), &train).unwrap();
        let (state, _) = det.process_stream(&stream).unwrap();
        let after = state.alarms.iter().filter(|&&w| w > 100).count();
        let before = state.alarms.iter().filter(|&&w| w <= 100).count();
        assert!(after > 5 * before.max(1), "{variant:?}: {before} before, {after} after");
    }
}

#[test]
fn r_cdt_resets_only_the_alarming_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train = gaussian_points(&mut rng, 500, 2, 2, 0.0);
    let det = fit_detector(&quick_config(Variant::Riemannian, flat_ensemble(2, 1), 5), &train).unwrap();
    let mut state = DetectorState::new(&det);
    // Member 0 shifted far away, member 1 on the mean.
    let far = embedding(vec![point(Curvature::FLAT, vec![50.0, 50.0]), det.mu0[1].clone()]);
    let rows = det.push_window(&mut state, &vec![far; 5], 0).unwrap();
    assert!(rows[0].alarm && !rows[1].alarm);
    assert_eq!(state.accumulators[0], 0.0);
    assert_eq!(state.alarms, vec![1]);
    assert_eq!(state.test_alarms, vec![vec![1], vec![]]);
    assert_eq!(state.tau_hat, Some(5));
}

#[test]
fn geometry_errors_carry_the_stream_position() {
    let ens = Ensemble::new(vec![Ccm::new(Curvature::SPHERICAL, 2)]).unwrap();
    let north = point(Curvature::SPHERICAL, vec![0.0, 0.0, 1.0]);
    let south = point(Curvature::SPHERICAL, vec![0.0, 0.0, -1.0]);
    let det = fit_detector(
        &quick_config(Variant::Riemannian, ens, 5),
        &vec![embedding(vec![north.clone()]); 200],
    )
    .unwrap();
    let mut stream = vec![embedding(vec![north]); 10];
    stream[7] = embedding(vec![south]);
    match det.process_stream(&stream) {
        Err(CdtError::Geometry { index, .. }) => assert_eq!(index, 7),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn checkpoint_roundtrip_reproduces_the_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train = gaussian_points(&mut rng, 300, 3, 3, 0.0);
    let stream = gaussian_points(&mut rng, 300, 3, 3, 0.5);
    for variant in [Variant::Distance, Variant::Riemannian] {
        let det = fit_detector(&quick_config(variant, flat_ensemble(3, 2), 5), &train).unwrap();
        let mut buf = Vec::new();
        save_detector(&det, &mut buf).unwrap();
        let loaded = load_detector(buf.as_slice()).unwrap();
        let (s1, t1) = det.process_stream(&stream).unwrap();
        let (s2, t2) = loaded.process_stream(&stream).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
    }
    let det = fit_detector(&quick_config(Variant::Distance, flat_ensemble(3, 2), 5), &train).unwrap();
    let mut ckpt = DetectorCheckpoint::from_detector(&det);
    ckpt.version = 2;
    assert!(matches!(ckpt.into_detector(), Err(CdtError::Checkpoint(_))));
}

#[test]
fn trace_csv_has_the_expected_columns() {
    let rows = vec![
        TraceRow {
            window_index: 1,
            member: 0,
            s_w: 0.25,
            big_s_w: 0.0,
            alarm: false,
        },
        TraceRow {
            window_index: 2,
            member: 0,
            s_w: 9.5,
            big_s_w: 9.0,
            alarm: true,
        },
    ];
    let mut buf = Vec::new();
    write_trace_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("window_index,member,s_w,S_w,alarm"));
    assert_eq!(lines.next(), Some("1,0,0.25,0.0,false"));
    assert_eq!(lines.next(), Some("2,0,9.5,9.0,true"));
}

#[test]
fn empirical_drift_mode_is_available() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let train = gaussian_points(&mut rng, 1000, 1, 3, 0.0);
    let config = DetectorConfig {
        drift_mode: DriftMode::Empirical,
        ..quick_config(Variant::Riemannian, flat_ensemble(1, 2), 5)
    };
    let det = fit_detector(&config, &train).unwrap();
    let chi = ChiSquared::new(3.0).unwrap().inverse_cdf(0.75) / 5.0;
    // Gaussian training data: the empirical quantile is near the χ² one.
    assert!((det.tests[0].q - chi).abs() < 0.3 * chi, "{} vs {chi}", det.tests[0].q);
    assert!(det.tests[0].h > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accumulator_is_never_negative(draws in prop::collection::vec(0.0f64..5.0, 1..200), q in 0.0f64..3.0, h in 0.1f64..10.0) {
        let mut s = 0.0;
        for d in draws {
            cusum_update(&mut s, d, q, h);
            prop_assert!(s >= 0.0 && s <= h);
        }
    }

    #[test]
    fn statistic_is_scale_invariant(seed in 0u64..1000, scale in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = vec![vec![1.0, 0.5], vec![0.5, 2.0]];
        let train = gaussian_u(&mut rng, &[1.0, 2.0], &cov, 200);
        let stream = gaussian_u(&mut rng, &[1.5, 2.0], &cov, 50);
        let config = DetectorConfig {
            ridge: 0.0,
            ..quick_config(Variant::Riemannian, flat_ensemble(1, 1), 5)
        };
        let scaled = |us: &[Vec<f64>]| -> Vec<Vec<f64>> { us.iter().map(|u| u.iter().map(|v| v * scale).collect()).collect() };
        let a = fit_test(&config, vec![0], &train, 0.01, 1).unwrap();
        let b = fit_test(&config, vec![0], &scaled(&train), 0.01, 1).unwrap();
        prop_assert_eq!(a.h, b.h);
        let ss = scaled(&stream);
        for (wa, wb) in stream.chunks_exact(5).zip(ss.chunks_exact(5)) {
            let (sa, sb) = (a.local_statistic(wa).unwrap(), b.local_statistic(wb).unwrap());
            prop_assert!((sa - sb).abs() <= 1e-9 * sa.max(1.0), "{} vs {}", sa, sb);
        }
    }
}
