use chargenoise::spectrum::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dense(h: &Tridiagonal) -> DMatrix<f64> {
    let n = h.dim();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = h.diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = h.off[i];
            m[(i + 1, i)] = h.off[i];
        }
    }
    m
}

fn device_bands() -> Vec<ParityBands> {
    let p = TransmonParams::tantalum_device();
    let table = spectrum_scan(&p, &uniform_grid(41), 3, DEFAULT_N_CUT).unwrap();
    [(0, 1), (1, 2), (2, 3)].iter().map(|&(i, j)| parity_bands(&table, i, j).unwrap()).collect()
}

#[test]
fn charging_limit_matches_parabola_enumeration() {
    let p = TransmonParams::new(0.0, 0.25).unwrap();
    for &ng in &[0.0, 0.1, 0.25, 0.37, 0.5, 0.8] {
        let n_cut = 8;
        let got = eigenvalues(&build_hamiltonian(&p, GateCharge(ng), n_cut).unwrap(), 5).unwrap();
        let mut expect: Vec<f64> =
            (-(n_cut as i64)..=n_cut as i64).map(|n| 4.0 * p.e_c * (n as f64 - ng).powi(2)).collect();
        expect.sort_by(f64::total_cmp);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-13 * e.abs().max(1.0), "n_g {ng}: {g} vs {e}");
        }
    }
}

#[test]
fn device_levels_converged_in_basis_size() {
    let p = TransmonParams::tantalum_device();
    for &ng in &[0.0, 0.21, 0.5] {
        let a = eigenvalues(&build_hamiltonian(&p, GateCharge(ng), 15).unwrap(), 5).unwrap();
        let b = eigenvalues(&build_hamiltonian(&p, GateCharge(ng), 25).unwrap(), 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn device_dispersion_hierarchy() {
    let b = device_bands();
    assert!(b[0].eps < b[1].eps && b[1].eps < b[2].eps, "{b:?}");
}

#[test]
fn periodic_and_reflected_spectrum() {
    let p = TransmonParams::tantalum_device();
    let at = |ng: f64| eigenvalues(&build_hamiltonian(&p, GateCharge(ng), 15).unwrap(), 4).unwrap();
    for &ng in &[0.13, 0.31, 0.47] {
        let (a, b, c) = (at(ng), at(ng + 1.0), at(-ng));
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-9 && (a[k] - c[k]).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bisection_matches_dense_eigensolver(e_j in 0.0f64..40.0, e_c in 0.05f64..1.0, ng in -1.0f64..1.0, n_cut in 5usize..14) {
        let p = TransmonParams::new(e_j, e_c).unwrap();
        let h = build_hamiltonian(&p, GateCharge(ng), n_cut).unwrap();
        let got = eigenvalues(&h, 6).unwrap();
        let mut oracle: Vec<f64> = dense(&h).symmetric_eigenvalues().iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        let scale = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (g, o) in got.iter().zip(&oracle) {
            prop_assert!((g - o).abs() <= 1e-11 * scale, "{} vs {}", g, o);
        }
    }

    #[test]
    fn dispersion_hierarchy_across_transmon_regime(ratio in 10.0f64..60.0) {
        let p = TransmonParams::new(ratio * 0.2, 0.2).unwrap();
        let table = spectrum_scan(&p, &uniform_grid(9), 3, 20).unwrap();
        let e: Vec<f64> = [(0, 1), (1, 2), (2, 3)].iter().map(|&(i, j)| parity_bands(&table, i, j).unwrap().eps).collect();
        prop_assert!(e[0] < e[1] && e[1] < e[2], "{:?}", e);
    }

    #[test]
    fn inversion_round_trip(q in 1e-4f64..0.5) {
        for b in device_bands() {
            let inv = offset_from_splitting(b.splitting(OffsetChargeE::new(q)), &b).unwrap();
            prop_assert!(!inv.clamped);
            prop_assert!((inv.q.value() - q).abs() < 1e-12, "{} vs {}", inv.q.value(), q);
        }
    }

    #[test]
    fn folding_lands_in_half_interval(q in -50.0f64..50.0) {
        let f = fold_offset(q);
        prop_assert!((0.0..=0.5).contains(&f));
        prop_assert!((fold_offset(-q) - f).abs() < 1e-12);
        prop_assert!((fold_offset(q + 1.0) - f).abs() < 1e-9);
    }
}
