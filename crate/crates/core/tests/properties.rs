use kerrpulse::events::{read_stream, write_stream, TimeTag, TimeTagStream};
use kerrpulse::model::{DetectionModel, TimeGrid};
use kerrpulse::multiphoton::detection::clicked_ports_pmf;
use kerrpulse::multiphoton::{correct_p1, detection_probs, permanent, rn_from_xi, Convention, CorrectionOrder, PairNumberDistribution};
use kerrpulse::observables::g2_from_xi;
use kerrpulse::schmidt::{decompose_matrix, output_squeezing, purity_bound, xi_from_singular};
use kerrpulse::stats::{energy_distance, fidelity};
use kerrpulse::C64;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn leibniz(a: &DMatrix<C64>) -> C64 {
    fn go(a: &DMatrix<C64>, row: usize, used: &mut Vec<bool>) -> C64 {
        if row == a.nrows() {
            return C64::new(1.0, 0.0);
        }
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..a.ncols() {
            if !used[c] {
                used[c] = true;
                acc += a[(row, c)] * go(a, row + 1, used);
                used[c] = false;
            }
        }
        acc
    }
    go(a, 0, &mut vec![false; a.ncols()])
}

fn complex_matrix(n: usize) -> impl Strategy<Value = DMatrix<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n * n).prop_map(move |v| DMatrix::from_iterator(n, n, v.into_iter().map(|(r, i)| C64::new(r, i))))
}

fn distribution(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.0..1.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn cloud(n: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b)| [a, b]), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permanent_matches_leibniz(a in (1usize..=5).prop_flat_map(complex_matrix)) {
        let p = permanent(&a).unwrap();
        let l = leibniz(&a);
        prop_assert!((p - l).norm() <= 1e-12 * l.norm().max(1.0));
        let t = permanent(&a.transpose()).unwrap();
        prop_assert!((p - t).norm() <= 1e-12 * l.norm().max(1.0));
    }

    #[test]
    fn permanent_is_row_multilinear(a in complex_matrix(4), s in -3.0..3.0f64) {
        let mut b = a.clone();
        b.row_mut(2).scale_mut(s);
        let (pa, pb) = (permanent(&a).unwrap(), permanent(&b).unwrap());
        prop_assert!((pb - pa * s).norm() <= 1e-12 * pa.norm().max(1.0) * s.abs().max(1.0));
    }

    #[test]
    fn energy_distance_is_a_symmetric_nonnegative_metric(x in cloud(12), y in cloud(9), c in 0.1..10.0f64) {
        let d = energy_distance(&x, &y).unwrap();
        prop_assert!(d >= -1e-12);
        prop_assert!((d - energy_distance(&y, &x).unwrap()).abs() < 1e-10);
        let scale = |v: &[[f64; 2]]| v.iter().map(|p| [c * p[0], c * p[1]]).collect::<Vec<_>>();
        prop_assert!((energy_distance(&scale(&x), &scale(&y)).unwrap() - c * d).abs() < 1e-9 * c.max(1.0) * d.max(1.0));
    }

    #[test]
    fn fidelity_is_bounded_symmetric_and_scale_free(p in distribution(4, 5), q in distribution(4, 5), a in 0.01..100.0f64) {
        prop_assume!(p.norm() > 1e-6 && q.norm() > 1e-6);
        let f = fidelity(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - fidelity(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!((f - fidelity(&(&p * a), &q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn purity_bound_lies_in_unit_interval(p in distribution(6, 6)) {
        prop_assume!(p.sum() > 1e-6);
        let b = purity_bound(&p).unwrap();
        prop_assert!(b > 0.0 && b <= 1.0 + 1e-12);
    }

    #[test]
    fn separable_intensity_has_unit_bound(u in prop::collection::vec(0.01..1.0f64, 7), v in prop::collection::vec(0.01..1.0f64, 7)) {
        let m = DMatrix::from_fn(7, 7, |i, j| u[i] * v[j]);
        prop_assert!((purity_bound(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schmidt_decomposition_reconstructs_and_is_phase_blind(m in complex_matrix(6), phase in 0.0..6.3f64) {
        let grid = TimeGrid::new(0.0, 50.0, 6).unwrap();
        let d = decompose_matrix(&m, &grid).unwrap();
        let diag = nalgebra::DVector::from_iterator(d.d_vals.len(), d.d_vals.iter().map(|v| C64::new(*v, 0.0)));
        let back = &d.p_s * DMatrix::from_diagonal(&diag) * d.p_i.adjoint();
        prop_assert!((&back - &m).norm() < 1e-10 * m.norm().max(1.0));
        for (x, s) in d.xi.iter().zip(&d.d_vals) {
            prop_assert!((x - xi_from_singular(*s, grid.dt)).abs() < 1e-14);
        }
        let rotated = decompose_matrix(&(&m * C64::from_polar(1.0, phase)), &grid).unwrap();
        prop_assert!((rotated.schmidt_number() - d.schmidt_number()).abs() < 1e-9 * d.schmidt_number());
        prop_assert!(d.purity() > 0.0 && d.purity() <= 1.0 + 1e-12);
    }

    #[test]
    fn singular_value_map_inverts(xi in 0.0..4.0f64, dt in 1.0..200.0f64) {
        let d = (2.0 * xi).sinh() / (2.0 * dt);
        prop_assert!((xi_from_singular(d, dt) - xi).abs() < 1e-12 * xi.max(1.0));
    }

    #[test]
    fn g2_between_one_and_two(xi in prop::collection::vec(0.01..2.0f64, 1..8)) {
        let g = g2_from_xi(&xi).unwrap();
        prop_assert!(g >= 1.0 + 1.0 / xi.len() as f64 - 1e-12 && g <= 2.0 + 1e-12);
    }

    #[test]
    fn pair_number_law_is_normalised(xi in prop::collection::vec(0.0..0.8f64, 1..6)) {
        let r = rn_from_xi(xi.iter().cloned(), 60);
        prop_assert!((r.r.iter().sum::<f64>() + r.tail - 1.0).abs() < 1e-12);
        let mean: f64 = xi.iter().map(|x| x.sinh().powi(2)).sum();
        prop_assert!((r.mean() - mean).abs() < 1e-6 * mean.max(1e-3));
    }

    #[test]
    fn output_squeezing_is_monotone_and_capped(a in 0.0..5.0f64, b in 0.0..5.0f64, p_e in 0.05..0.99f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (ol, oh) = (output_squeezing(lo, p_e).unwrap().0, output_squeezing(hi, p_e).unwrap().0);
        prop_assert!(ol <= oh + 1e-15);
        prop_assert!(oh <= -0.5 * (1.0 - p_e).ln() + 1e-12);
        prop_assert!(oh <= hi + 1e-15);
    }

    #[test]
    fn detection_hierarchy(eta in prop::collection::vec(0.0..0.3f64, 1..4), n in 0usize..10) {
        let model = DetectionModel::new(eta.clone(), eta.clone()).unwrap();
        let det = detection_probs(&model, 10).unwrap();
        prop_assert!(det.h3[n] <= det.h2[n] + 1e-15 && det.h2[n] <= det.h1[n] + 1e-15);
        if n > 0 {
            prop_assert!(det.h1[n] + 1e-15 >= det.h1[n - 1]);
        }
        let pmf = clicked_ports_pmf(n, &eta);
        prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(pmf.iter().all(|p| *p >= -1e-15));
    }

    #[test]
    fn two_pair_correction_recovers_single_pair_law(p1 in distribution(5, 5), p2 in distribution(5, 5), r2 in 0.001..0.2f64, eta in 0.02..0.4f64) {
        prop_assume!(p1.sum() > 1e-3 && p2.sum() > 1e-3);
        let (p1, p2) = (&p1 / p1.sum(), &p2 / p2.sum());
        let rn = PairNumberDistribution { r: vec![1.0 - 0.2 - r2, 0.2, r2], tail: 0.0 };
        let det = detection_probs(&DetectionModel::balanced(eta, eta, 2).unwrap(), 2).unwrap();
        let (w1, w2) = (&det.w1, &det.w2);
        let two = &p1 * (w1[1] * 0.2) + &p2 * (w1[2] * r2);
        let four = &p2 * (w2[2] * r2);
        let out = correct_p1(&two, &four, None, &det, &rn, CorrectionOrder::FourFold, Convention::AllPairings).unwrap();
        prop_assert!((&out.p1_estimate - &p1 * 0.2).amax() < 1e-12);
        prop_assert!(out.alpha_opt < 0.0);
    }

    #[test]
    fn streams_round_trip(gaps in prop::collection::vec((0u64..3, 0u32..4, 0.0..5000.0f64), 0..40)) {
        let mut pulse = 0;
        let records: Vec<TimeTag> = gaps.iter().map(|(g, c, t)| { pulse += g; TimeTag { pulse, channel: *c, time_ps: *t } }).collect();
        let s = TimeTagStream { n_pulses: pulse + 1, records, malformed: 0 };
        let mut buf = Vec::new();
        write_stream(&s, &mut buf).unwrap();
        prop_assert_eq!(read_stream(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn grid_points_fall_in_their_own_bins(t0 in -1000.0..1000.0f64, dt in 1.0..200.0f64, n in 1usize..200) {
        let g = TimeGrid::new(t0, dt, n).unwrap();
        for k in 0..n {
            prop_assert_eq!(g.bin_of(g.t(k)), Some(k));
        }
    }
}
