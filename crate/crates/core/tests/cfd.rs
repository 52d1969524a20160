mod common;

use cnnflow::cfd::{
    generate_dataset, init_cavity, read_manifest, read_ncfd, residual_heat, residual_mass, residual_momentum,
    step_flow, CavitySolver, FlowState, ResidualEvaluator, SolverParams, NCFD_HEADER_BYTES,
};
use cnnflow::harness::SOLVER_PAIR_RESIDUAL_BOUNDS;
use cnnflow::Error;
use rand::Rng;

/// Per-cell divergence of the node velocity: central difference across the
/// cell, each face value the mean of its two nodes.
fn box_divergence(s: &FlowState, dx: f64, dy: f64) -> Vec<f64> {
    let (nx, ny) = (s.nx, s.ny);
    let at = |f: &[f64], i: usize, j: usize| f[i + j * nx];
    let mut out = Vec::with_capacity((nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let ddx = (at(&s.u_x, i + 1, j) + at(&s.u_x, i + 1, j + 1) - at(&s.u_x, i, j) - at(&s.u_x, i, j + 1))
                / (2.0 * dx);
            let ddy = (at(&s.u_y, i, j + 1) + at(&s.u_y, i + 1, j + 1) - at(&s.u_y, i, j) - at(&s.u_y, i + 1, j))
                / (2.0 * dy);
            out.push(ddx + ddy);
        }
    }
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn walls_hold(s: &FlowState, p: &SolverParams) {
    let (nx, ny) = (s.nx, s.ny);
    for j in 0..ny {
        assert_eq!(s.t[j * nx], p.t_hot);
        assert_eq!(s.t[nx - 1 + j * nx], p.t_cold);
    }
    for i in 1..nx - 1 {
        assert_eq!(s.t[i], s.t[i + nx], "bottom wall adiabatic at i={i}");
        assert_eq!(s.t[i + (ny - 1) * nx], s.t[i + (ny - 2) * nx], "top wall adiabatic at i={i}");
    }
    for j in 0..ny {
        for i in 0..nx {
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                let k = i + j * nx;
                assert_eq!((s.u_x[k], s.u_y[k]), (0.0, 0.0), "no-slip at ({i}, {j})");
            }
        }
    }
}

fn uniform_state(p: &SolverParams, t: f64, u: (f64, f64), pressure: f64) -> FlowState {
    let n = p.nx * p.ny;
    FlowState::new(p.nx, p.ny, vec![u.0; n], vec![u.1; n], vec![t; n], vec![pressure; n]).unwrap()
}

fn small() -> SolverParams {
    SolverParams::default().with_grid(16, 12)
}

#[test]
fn init_cavity_sets_rest_and_wall_temperatures() {
    let p = SolverParams::default();
    let s = init_cavity(&p).unwrap();
    let (nx, ny) = (s.nx, s.ny);
    assert!(s.u_x.iter().chain(&s.u_y).all(|&v| v == 0.0));
    assert!(s.p.iter().all(|&v| v == p.p_ref));
    for j in 0..ny {
        assert_eq!(s.t[j * nx], 307.75);
        assert_eq!(s.t[nx - 1 + j * nx], 288.15);
        for i in 1..nx - 1 {
            assert_eq!(s.t[i + j * nx], 293.0);
        }
    }
}

#[test]
fn isothermal_rest_is_a_fixed_point() {
    let mut p = small();
    p.t_hot = p.t_ref;
    p.t_cold = p.t_ref;
    let rest = uniform_state(&p, p.t_ref, (0.0, 0.0), p.p_ref);
    let mut solver = CavitySolver::new(p.clone()).unwrap();
    let mut s = rest.clone();
    for _ in 0..20 {
        s = solver.step(&s).unwrap();
    }
    for (a, b) in [(&s.u_x, &rest.u_x), (&s.u_y, &rest.u_y), (&s.t, &rest.t), (&s.p, &rest.p)] {
        let d = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d < 1e-12, "drift {d}");
    }
}

#[test]
fn first_step_raises_a_plume_at_the_hot_wall() {
    let p = SolverParams::default();
    let s = step_flow(&init_cavity(&p).unwrap(), &p).unwrap();
    let (nx, ny) = (s.nx, s.ny);
    let column: Vec<f64> = (1..=3).flat_map(|i| (0..ny).map(move |j| i + j * nx)).map(|k| s.u_y[k]).collect();
    let mean = column.iter().sum::<f64>() / column.len() as f64;
    assert!(mean > 0.0, "mean u_y near the hot wall {mean}");
}

#[test]
fn every_step_is_divergence_free_bounded_and_honors_walls() {
    let p = SolverParams::default();
    let mut s = init_cavity(&p).unwrap();
    let mut solver = CavitySolver::new(p.clone()).unwrap();
    for step in 1..=150 {
        s = solver.step(&s).unwrap();
        let div = max_abs(&box_divergence(&s, p.dx(), p.dy()));
        assert!(div < 1e-8, "step {step}: divergence {div}");
        walls_hold(&s, &p);
        for &t in &s.t {
            assert!(t >= p.t_cold - 1e-9 && t <= p.t_hot + 1e-9, "step {step}: T = {t}");
        }
    }
    assert_eq!(solver.steps(), 150);
}

#[test]
fn cfl_violation_is_a_stability_error() {
    let p = small();
    let mut s = init_cavity(&p).unwrap();
    let k = p.nx / 2 + (p.ny / 2) * p.nx;
    s.u_x[k] = 0.6 * p.dx() / p.dt;
    match step_flow(&s, &p) {
        Err(Error::Stability { cfl, limit, .. }) => {
            assert!(cfl > limit);
            assert_eq!(limit, 0.5);
        }
        other => panic!("expected a stability error, got {other:?}"),
    }
}

#[test]
fn grid_mismatch_is_a_dimension_error() {
    let p = small();
    let other = SolverParams::default().with_grid(8, 8);
    let s = init_cavity(&other).unwrap();
    assert!(matches!(step_flow(&s, &p), Err(Error::Dimension(_))));
    let ok = init_cavity(&p).unwrap();
    assert!(matches!(residual_mass(&ok, &s, &p), Err(Error::Dimension(_))));
    assert!(matches!(residual_momentum(&s, &ok, &p), Err(Error::Dimension(_))));
    assert!(matches!(residual_heat(&s, &s, &p), Err(Error::Dimension(_))));
}

#[test]
fn invalid_parameters_name_the_field() {
    let mut p = small();
    p.dt = 0.0;
    match init_cavity(&p) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "dt"),
        other => panic!("expected a config error, got {other:?}"),
    }
    let mut p = small();
    p.t_hot = p.t_cold;
    assert!(matches!(init_cavity(&p), Err(Error::Config { .. })));
}

#[test]
fn dataset_file_layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = small();
    let path = dir.path().join("cavity.ncfd");
    let manifest = generate_dataset(&p, 7, 2..5, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let (nx, ny) = (p.nx, p.ny);
    assert_eq!(&bytes[..4], b"NCFD");
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    assert_eq!(u32_at(4), 1);
    assert_eq!(u32_at(8) as usize, nx);
    assert_eq!(u32_at(12) as usize, ny);
    assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), p.dt);
    assert_eq!(u32_at(24), 7);
    assert_eq!(bytes.len() as u64, NCFD_HEADER_BYTES + 7 * (3 * nx * ny * 8) as u64);

    // Record k is the state after k + 1 steps.
    let mut solver = CavitySolver::new(p.clone()).unwrap();
    let mut s = init_cavity(&p).unwrap();
    let mut states = Vec::new();
    for _ in 0..7 {
        s = solver.step(&s).unwrap();
        states.push(s.clone());
    }
    let data = read_ncfd(&path).unwrap();
    assert_eq!((data.nx, data.ny, data.dt, data.records.len()), (nx, ny, p.dt, 7));
    for (k, (rec, st)) in data.records.iter().zip(&states).enumerate() {
        assert_eq!(rec, &st.to_tensor(), "record {k}");
        let off = manifest.record_offset(k) as usize;
        let first = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        assert_eq!(first, st.u_x[0]);
        let t_off = off + 2 * nx * ny * 8 + 8 * (nx / 2 + nx * (ny / 2));
        let t = f64::from_le_bytes(bytes[t_off..t_off + 8].try_into().unwrap());
        assert_eq!(t, st.t[nx / 2 + nx * (ny / 2)]);
    }

    let text = std::fs::read_to_string(dir.path().join("cavity.toml")).unwrap();
    let doc: toml::Table = text.parse().unwrap();
    for key in ["nx", "ny", "dt", "count", "train_start", "train_count", "data_file", "bounds"] {
        assert!(doc.contains_key(key), "manifest lacks `{key}`");
    }
    let read = read_manifest(&dir.path().join("cavity.toml")).unwrap();
    assert_eq!(read, manifest);
    assert_eq!(read.data_path(&dir.path().join("cavity.toml")), path);

    // Bounds cover the training records only.
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    let mut uy_max = f64::NEG_INFINITY;
    for st in &states[2..5] {
        for &t in &st.t {
            t_min = t_min.min(t);
            t_max = t_max.max(t);
        }
        for &v in &st.u_y {
            uy_max = uy_max.max(v);
        }
    }
    assert_eq!((read.bounds.t.min, read.bounds.t.max), (t_min, t_max));
    assert_eq!(read.bounds.u_y.max, uy_max);
}

#[test]
fn dataset_generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = small();
    p.perturbation = 0.05;
    p.seed = 11;
    let a = dir.path().join("a.ncfd");
    let b = dir.path().join("b.ncfd");
    generate_dataset(&p, 5, 0..3, &a).unwrap();
    generate_dataset(&p, 5, 0..3, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    p.seed = 12;
    generate_dataset(&p, 5, 0..3, &b).unwrap();
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn dataset_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let p = small();
    let path = dir.path().join("x.ncfd");
    assert!(matches!(generate_dataset(&p, 0, 0..0, &path), Err(Error::Config { .. })));
    assert!(matches!(generate_dataset(&p, 4, 2..6, &path), Err(Error::Config { .. })));
    assert!(matches!(
        generate_dataset(&p, 2, 0..1, &dir.path().join("missing/x.ncfd")),
        Err(Error::Io { .. })
    ));
    std::fs::write(&path, b"NCFX").unwrap();
    assert!(matches!(read_ncfd(&path), Err(Error::Format { .. })));
}

#[test]
fn mass_residual_of_uniform_and_ramp_fields() {
    let p = small();
    let uniform = uniform_state(&p, 293.0, (0.3, -0.2), p.p_ref);
    let r = residual_mass(&uniform, &uniform, &p).unwrap();
    assert!(r.norm < 1e-12, "uniform velocity residual {}", r.norm);

    let mut ramp = uniform_state(&p, 293.0, (0.0, 0.0), p.p_ref);
    for j in 0..p.ny {
        for i in 0..p.nx {
            ramp.u_x[i + j * p.nx] = i as f64 * p.dx();
        }
    }
    let r = residual_mass(&uniform, &ramp, &p).unwrap();
    assert_eq!(r.values.len(), (p.nx - 1) * (p.ny - 1));
    for v in &r.values {
        assert!((v - p.rho).abs() < 1e-12, "ramp residual {v}");
    }
}

#[test]
fn mass_residual_matches_the_divergence_oracle() {
    let p = small();
    let mut rng = common::rng(3);
    let prev = init_cavity(&p).unwrap();
    let mut next = prev.clone();
    for v in next.u_x.iter_mut().chain(next.u_y.iter_mut()) {
        *v = rng.gen_range(-0.1..0.1);
    }
    let r = residual_mass(&prev, &next, &p).unwrap();
    for (got, d) in r.values.iter().zip(box_divergence(&next, p.dx(), p.dy())) {
        assert!((got - p.rho * d.abs()).abs() < 1e-12);
    }
}

#[test]
fn momentum_residual_vanishes_at_hydrostatic_rest() {
    let p = small();
    let mut s = uniform_state(&p, p.t_ref + 5.0, (0.0, 0.0), p.p_ref);
    for j in 0..p.ny {
        for i in 0..p.nx {
            s.p[i + j * p.nx] = p.p_ref - p.rho * p.g * j as f64 * p.dy();
        }
    }
    let r = residual_momentum(&s, &s, &p).unwrap();
    assert!(r.norm < 1e-9, "rest residual {}", r.norm);
}

fn solver_pairs(p: &SolverParams, n: usize) -> Vec<(FlowState, FlowState)> {
    let mut s = init_cavity(p).unwrap();
    let mut solver = CavitySolver::new(p.clone()).unwrap();
    (0..n)
        .map(|_| {
            let next = solver.step(&s).unwrap();
            let pair = (s.clone(), next.clone());
            s = next;
            pair
        })
        .collect()
}

#[test]
fn solver_pairs_stay_within_the_frozen_bounds() {
    let p = SolverParams::default();
    let ev = ResidualEvaluator::new(&p).unwrap();
    for (k, (a, b)) in solver_pairs(&p, 120).iter().enumerate() {
        let m = ev.mass(a, b).unwrap().norm;
        let u = ev.momentum(a, b).unwrap().norm;
        let h = ev.heat(a, b).unwrap().norm;
        assert!(m < 1e-6 && m <= SOLVER_PAIR_RESIDUAL_BOUNDS.mass, "step {k}: mass {m}");
        assert!(u <= SOLVER_PAIR_RESIDUAL_BOUNDS.momentum, "step {k}: momentum {u}");
        assert!(h <= SOLVER_PAIR_RESIDUAL_BOUNDS.heat, "step {k}: heat {h}");
    }
}

#[test]
fn velocity_noise_spikes_the_momentum_residual() {
    let p = SolverParams::default();
    let pairs = solver_pairs(&p, 40);
    let (a, b) = pairs.last().unwrap();
    let clean = residual_momentum(a, b, &p).unwrap().norm;
    let mut rng = common::rng(7);
    // Uniform on [-√3σ, √3σ] has standard deviation σ = 0.1 m/s.
    let half = 0.1 * 3f64.sqrt();
    let mut noisy = b.clone();
    for j in 1..p.ny - 1 {
        for i in 1..p.nx - 1 {
            let k = i + j * p.nx;
            noisy.u_x[k] += rng.gen_range(-half..half);
            noisy.u_y[k] += rng.gen_range(-half..half);
        }
    }
    let corrupted = residual_momentum(a, &noisy, &p).unwrap().norm;
    assert!(corrupted > 10.0 * clean, "noisy {corrupted} vs clean {clean}");
    assert!(corrupted > 10.0 * SOLVER_PAIR_RESIDUAL_BOUNDS.momentum);
}

#[test]
fn heat_residual_of_uniform_state_and_a_local_spike() {
    let p = small();
    let s = uniform_state(&p, 300.0, (0.0, 0.0), p.p_ref);
    assert_eq!(residual_heat(&s, &s, &p).unwrap().norm, 0.0);

    let (i0, j0) = (6, 5);
    let mut hot = s.clone();
    hot.t[i0 + j0 * p.nx] += 1.0;
    let r = residual_heat(&s, &hot, &p).unwrap();
    let expected = p.rho * p.cp / p.dt;
    assert!((r.at(i0, j0) - expected).abs() < 1e-9 * expected);
    assert_eq!(r.norm, r.at(i0, j0));
    for j in 0..p.ny {
        for i in 0..p.nx {
            if i.abs_diff(i0) > 1 || j.abs_diff(j0) > 1 {
                assert_eq!(r.at(i, j), 0.0, "residual leaks to ({i}, {j})");
            }
        }
    }
}

#[test]
fn residuals_ignore_a_constant_pressure_shift() {
    let p = SolverParams::default();
    let pairs = solver_pairs(&p, 10);
    let (a, b) = pairs.last().unwrap();
    let mut a2 = a.clone();
    let mut b2 = b.clone();
    for v in a2.p.iter_mut().chain(b2.p.iter_mut()) {
        *v += 1234.5;
    }
    let ev = ResidualEvaluator::new(&p).unwrap();
    assert_eq!(ev.mass(a, b).unwrap(), ev.mass(&a2, &b2).unwrap());
    assert_eq!(ev.momentum(a, b).unwrap(), ev.momentum(&a2, &b2).unwrap());
    assert_eq!(ev.heat(a, b).unwrap(), ev.heat(&a2, &b2).unwrap());
}
