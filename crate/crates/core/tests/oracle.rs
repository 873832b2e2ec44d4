use kerrpulse::fockoracle::{evolve_fock, fock_two_time, pair_number_distribution};
use kerrpulse::model::{PumpPulse, ResonatorParams, TimeGrid};
use kerrpulse::moments::{evolve_moments, two_time_correlators};
use kerrpulse::pump::{pump_grid, solve_pump};

fn low_gain() -> (ResonatorParams, PumpPulse) {
    (ResonatorParams::reference_device(), PumpPulse::from_energy_pj(40.0, 800.0))
}

#[test]
fn single_time_moments_match_fock_space() {
    let (params, pulse) = low_gain();
    let grid = pump_grid(&params, &pulse, 20.0, 8.0);
    let traj = solve_pump(&params, &pulse, &grid).unwrap();
    let mom = evolve_moments(&traj, &params).unwrap();
    let fock = evolve_fock(&traj, &params, 6).unwrap();
    let nmax = mom.max_n();
    assert!(nmax > 1e-3, "pair generation too weak to compare: {nmax}");
    for k in 0..grid.n_points {
        assert!((mom.n_s[k] - fock.n_s[k]).abs() < 1e-3 * nmax, "n_s at {}", grid.t(k));
        assert!((mom.n_i[k] - fock.n_i[k]).abs() < 1e-3 * nmax);
        let scale = mom.m_si.iter().map(|m| m.norm()).fold(0.0, f64::max);
        assert!((mom.m_si[k] - fock.m_si[k]).norm() < 1e-3 * scale, "m at {}", grid.t(k));
        assert!((fock.trace[k] - 1.0).abs() < 1e-8);
    }
    // thermal marginal inside the cavity
    let kpk = (0..grid.n_points).max_by(|a, b| mom.n_s[*a].total_cmp(&mom.n_s[*b])).unwrap();
    assert!((fock.g2_signal[kpk] - 2.0).abs() < 1e-2);
    // residual population after ring-down agrees with the moment tail
    let rn = pair_number_distribution(&fock.final_state);
    let tail = *mom.n_s.last().unwrap();
    assert!(((1.0 - rn[0]) - tail).abs() < 0.05 * tail, "residual {} vs {tail}", 1.0 - rn[0]);
    let emitted_mean: f64 = fock.emitted.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    assert!((fock.emitted.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    let integrated: f64 = mom.n_s.iter().map(|n| params.gamma_tot() * n * grid.dt).sum();
    assert!((emitted_mean - integrated).abs() < 2e-2 * integrated, "{emitted_mean} vs {integrated}");
}

#[test]
fn two_time_regression_matches_fock_space() {
    let (params, pulse) = low_gain();
    let grid = pump_grid(&params, &pulse, 20.0, 8.0);
    let traj = solve_pump(&params, &pulse, &grid).unwrap();
    let coarse = TimeGrid::new(0.0, 240.0, 14).unwrap();
    let tt = two_time_correlators(&traj, &params, &coarse).unwrap();
    let (fm, fc) = fock_two_time(&traj, &params, 5, &coarse).unwrap();
    let ms = tt.m_matrix.norm();
    let cs = tt.c_matrix.norm();
    assert!((&tt.m_matrix - &fm).norm() < 2e-3 * ms, "M mismatch {}", (&tt.m_matrix - &fm).norm() / ms);
    assert!((&tt.c_matrix - &fc).norm() < 2e-3 * cs, "C mismatch {}", (&tt.c_matrix - &fc).norm() / cs);
    // C is Hermitian
    assert!((&tt.c_matrix - tt.c_matrix.adjoint()).norm() < 1e-12 * cs);
}
