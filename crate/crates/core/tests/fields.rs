use std::collections::BTreeMap;

use chargenoise::fields::*;

fn solve_all(g: &GridGeometry, tol: f64) -> BTreeMap<String, PotentialField> {
    let cfg = SolverConfig { tol, ..Default::default() };
    g.electrodes.iter().map(|e| (e.name.clone(), solve_weighting_potential(g, &e.name, &cfg).unwrap())).collect()
}

fn geometries(cells: usize) -> (GridGeometry, GridGeometry) {
    build_device_geometries(&DeviceGeometryConfig { cells, ..Default::default() }).unwrap()
}

/// Node nearest to a physical point.
fn node(g: &GridGeometry, x: f64, y: f64, z: f64) -> [usize; 3] {
    let c = (g.nx - 1) as f64 / 2.0;
    [
        (x / g.spacing + c).round() as usize,
        (y / g.spacing + c).round() as usize,
        (z / g.spacing + g.surface_k as f64).round() as usize,
    ]
}

#[test]
fn weighting_potentials_obey_maximum_principle() {
    let (d, s) = geometries(32);
    for g in [&d, &s] {
        for f in solve_all(g, 1e-8).values() {
            assert!(f.values.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)), "{}", f.electrode);
        }
    }
}

#[test]
fn differential_map_is_antisymmetric_across_the_mirror() {
    let (d, _) = geometries(32);
    let w = solve_all(&d, 1e-10);
    let map = induced_charge_map(&d, &w, &[("paddle_a", 1.0), ("paddle_b", -1.0)]).unwrap();
    let scale = map.max_abs();
    for k in 1..=map.nz {
        for j in 0..map.ny {
            for i in 0..map.nx {
                let sum = map.at(i, j, k) + map.at(map.nx - 1 - i, j, k);
                assert!(sum.abs() <= 1e-6 * scale, "({i},{j},{k}) {sum}");
            }
            assert!(map.at(map.nx / 2, j, k).abs() <= 1e-6 * scale);
        }
    }
}

#[test]
fn charge_next_to_an_electrode_is_nearly_fully_imaged() {
    // Plate wide compared with the one-cell source distance.
    let g = GridGeometry {
        nx: 61,
        ny: 61,
        nz: 61,
        spacing: 1e-4,
        surface_k: 40,
        substrate_permittivity: 10.0,
        electrodes: vec![Electrode {
            name: "plate".into(),
            boxes: vec![NodeBox { x: [6, 54], y: [6, 54], z: [40, 40] }],
        }],
        boundary: Boundary::Dirichlet,
    };
    let cfg = SolverConfig { tol: 1e-9, ..Default::default() };
    let f = solve_weighting_potential(&g, "plate", &cfg).unwrap();
    assert!(f.at(30, 30, 39) > 0.9, "{}", f.at(30, 30, 39));
    let direct = direct_induced_charge(&g, [30, 30, 39], &[("plate", 1.0)], &cfg).unwrap();
    assert!(direct < -0.9, "{direct}");
}

#[test]
fn refinement_changes_probe_potential_by_under_two_percent() {
    let coarse = geometries(32).0;
    let fine = geometries(64).0;
    let cfg = SolverConfig { tol: 1e-9, ..Default::default() };
    let fc = solve_weighting_potential(&coarse, "paddle_a", &cfg).unwrap();
    let ff = solve_weighting_potential(&fine, "paddle_a", &cfg).unwrap();
    for (x, y, z) in [(-0.4e-3, 0.0, -0.3e-3), (-0.2e-3, 0.2e-3, -0.6e-3), (0.3e-3, 0.0, -0.4e-3)] {
        let [a, b, c] = node(&coarse, x, y, z);
        let [p, q, r] = node(&fine, x, y, z);
        let (vc, vf) = (fc.at(a, b, c), ff.at(p, q, r));
        assert!((vc - vf).abs() < 0.02 * vf.abs(), "({x},{y},{z}): {vc} vs {vf}");
    }
}

#[test]
fn reciprocity_agrees_with_direct_solve() {
    let (_, s) = geometries(32);
    let cfg = SolverConfig { tol: 1e-9, ..Default::default() };
    let w = solve_weighting_potential(&s, "island", &cfg).unwrap();
    for src in [node(&s, 0.0, 0.0, -0.2e-3), node(&s, 0.4e-3, -0.3e-3, -0.5e-3)] {
        let direct = direct_induced_charge(&s, src, &[("island", 1.0)], &cfg).unwrap();
        let reciprocal = -w.at(src[0], src[1], src[2]);
        assert!((direct - reciprocal).abs() < 0.03 * reciprocal.abs(), "{direct} vs {reciprocal}");
    }
}

#[test]
fn threshold_limits() {
    let (_, s) = geometries(24);
    let w = solve_all(&s, 1e-8);
    let map = induced_charge_map(&s, &w, &[("island", 1.0)]).unwrap();
    assert_eq!(sensitive_volume(&map, 1.0).cells, 0);
    let all = sensitive_volume(&map, f64::MIN_POSITIVE);
    assert!((all.volume_m3 - substrate_volume(&map)).abs() <= 1e-12 * substrate_volume(&map));
    // Grounded box faces carry no induced charge.
    for k in 1..=map.nz {
        for t in 0..map.nx {
            assert_eq!(map.at(t, 0, k), 0.0);
            assert_eq!(map.at(0, t, k), 0.0);
        }
    }
}

#[test]
fn larger_devices_have_larger_sensitive_volume() {
    let base = DeviceGeometryConfig { cells: 32, ..Default::default() };
    let volumes = |cfg: &DeviceGeometryConfig| {
        let (d, s) = build_device_geometries(cfg).unwrap();
        let md = induced_charge_map(&d, &solve_all(&d, 1e-7), &[("paddle_a", 1.0), ("paddle_b", -1.0)]).unwrap();
        let ms = induced_charge_map(&s, &solve_all(&s, 1e-7), &[("island", 1.0)]).unwrap();
        (sensitive_volume(&md, 1e-2).volume_m3, sensitive_volume(&ms, 1e-2).volume_m3)
    };
    let (d1, s1) = volumes(&base);
    let (d2, s2) = volumes(&base.scaled_lateral(2.0));
    assert!(d2 > d1, "{d2} vs {d1}");
    assert!(s2 > s1, "{s2} vs {s1}");
}
