//! End-to-end acceptance checks. Each test prints a single pass line; a
//! failed assertion marks the criterion failed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use utmflow::airspace::{AirspaceGeometry, FloorDefinition, FloorSurface, UnplannedRegion};
use utmflow::boundary_control::{
    simulate_lqr_recovery, solve_riccati, step_stream_control, LqrProblem, LqrSolution,
    StreamErrorField,
};
use utmflow::fdsolver::{assemble_partitioned, build_grid, NodeClass};
use utmflow::flowfield::{obstacle_radius, FlowElement, FlowField};
use utmflow::linalg;
use utmflow::microscopic::{
    build_weight_matrix, containment_fixed_point, global_desired_positions, step_agents,
    ten_agent_example, ten_agent_material_positions, Cluster, ClusterState, VrbPose,
    VrbPoseRate,
};
use utmflow::scenario::{run_scenario, RecoveryMode, ScenarioSpec};

fn flat_floor() -> FloorDefinition {
    FloorDefinition {
        index: 1,
        surface: FloorSurface::Flat { z: 100.0 },
        gamma: vec![],
        xi: false,
    }
}

fn pass(criterion: u32, detail: &str, start: Instant) {
    println!(
        "criterion {criterion}: PASS — {detail} ({:.2}s)",
        start.elapsed().as_secs_f64()
    );
}

/// 1: the psi = 0 locus of the uniform+doublet pair is the radius-10 circle.
#[test]
fn criterion_01_obstacle_radius_locus() {
    let t0 = Instant::now();
    let u_inf = 40.0;
    let delta = 4000.0;
    assert!((obstacle_radius(u_inf, delta).unwrap() - 10.0).abs() < 1e-12);
    let field = FlowField::new(
        flat_floor(),
        vec![
            FlowElement::Uniform { u_inf, theta0: 0.0 },
            FlowElement::Doublet { delta, center: [0.0, 0.0], theta0: 0.0 },
        ],
    )
    .unwrap();
    let mut worst = 0.0f64;
    for k in 0..360 {
        let th = (k as f64).to_radians();
        let (c, s) = (th.cos(), th.sin());
        if s.abs() < 1e-3 {
            // the locus contains the symmetry axis; the circle point lies on it
            let psi = field.stream_at([10.0 * c, 10.0 * s], 0.0).unwrap();
            assert!(psi.abs() < 1e-9, "psi on axis point: {psi}");
            continue;
        }
        // psi is monotone in radius along a ray off the axis
        let eval = |rho: f64| field.stream_at([rho * c, rho * s], 0.0).unwrap();
        let (mut lo, mut hi) = (8.0, 12.0);
        assert!(eval(lo) * eval(hi) < 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if eval(lo) * eval(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let rho = 0.5 * (lo + hi);
        worst = worst.max((rho - 10.0).abs());
    }
    assert!(worst < 1e-6, "worst radial error {worst}");
    pass(1, &format!("psi=0 locus within {worst:.2e} m of the circle"), t0);
}

/// 2: harmonicity and the conjugate-pair relation at 1000 random points.
#[test]
fn criterion_02_harmonicity_and_conjugacy() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    let mut worst_lap = 0.0f64;
    let mut worst_cr = 0.0f64;
    while checked < 1000 {
        // one uniform plus a random mix of the other kinds
        let mut elements = vec![FlowElement::Uniform {
            u_inf: rng.random_range(5.0..60.0),
            theta0: rng.random_range(-3.0..3.0),
        }];
        let mut centers: Vec<[f64; 2]> = Vec::new();
        for _ in 0..rng.random_range(1..=4) {
            let center = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
            let delta = rng.random_range(10.0..4000.0);
            let el = match rng.random_range(0..3) {
                0 => FlowElement::Source { delta, center },
                1 => FlowElement::Sink { delta, center },
                _ => FlowElement::Doublet {
                    delta,
                    center,
                    theta0: rng.random_range(-3.0..3.0),
                },
            };
            centers.push(center);
            elements.push(el);
        }
        let field = FlowField::new(flat_floor(), elements).unwrap();
        for _ in 0..5 {
            let p = [rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)];
            // stay away from singular centers and the source/sink branch cuts
            if centers
                .iter()
                .any(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() < 5.0)
            {
                continue;
            }
            let h = 1e-2;
            let phi = |q: [f64; 2]| field.potential_at(q, 0.0).unwrap();
            let lap = (phi([p[0] + h, p[1]])
                + phi([p[0] - h, p[1]])
                + phi([p[0], p[1] + h])
                + phi([p[0], p[1] - h])
                - 4.0 * phi(p))
                / (h * h);
            let scale = 1.0 + phi(p).abs();
            worst_lap = worst_lap.max(lap.abs() / scale);
            assert!(lap.abs() / scale < 1e-4, "laplacian {lap} at {p:?}");

            let gp = field.grad_potential(p).unwrap();
            let gs = field.grad_stream(p).unwrap();
            let gn = 1.0 + (gp[0] * gp[0] + gp[1] * gp[1]).sqrt();
            let cr = ((gp[0] - gs[1]).abs()).max((gp[1] + gs[0]).abs()) / gn;
            worst_cr = worst_cr.max(cr);
            assert!(cr < 1e-9, "conjugate mismatch {cr} at {p:?}");
            checked += 1;
        }
    }
    pass(
        2,
        &format!("1000 points, worst laplacian {worst_lap:.2e}, worst pair defect {worst_cr:.2e}"),
        t0,
    );
}

/// 3: every assembled partition is Hurwitz with contracting decomposition.
#[test]
fn criterion_03_stability_suite() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut accepted = 0usize;
    while accepted < 20 {
        let h = 5.0;
        let nx = rng.random_range(11..=41);
        let ny = rng.random_range(11..=41);
        let (w, d) = ((nx - 1) as f64 * h, (ny - 1) as f64 * h);
        let mut regions = Vec::new();
        if rng.random_bool(0.7) && w > 80.0 && d > 80.0 {
            regions.push(UnplannedRegion::Rectangle {
                center: [
                    rng.random_range(0.3 * w..0.7 * w),
                    rng.random_range(0.3 * d..0.7 * d),
                ],
                half_extents: [rng.random_range(6.0..15.0), rng.random_range(6.0..15.0)],
            });
        }
        let geometry = match AirspaceGeometry::new(
            [0.0, 0.0],
            [w, d],
            vec![FloorDefinition {
                index: 1,
                surface: FloorSurface::Flat { z: 100.0 },
                gamma: vec![false; regions.len()],
                xi: !regions.is_empty(),
            }],
            regions,
        ) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let Ok(grid) = build_grid(&geometry, h, 1) else { continue };
        let Ok(pl) = assemble_partitioned(&grid) else { continue };
        let max_re = pl.max_real_eig().unwrap();
        assert!(max_re < 0.0, "A_c not Hurwitz: max Re = {max_re}");
        let (_, rho_d) = pl.appendix_decomposition().unwrap();
        assert!(rho_d < 1.0, "rho(D) = {rho_d}");
        accepted += 1;
    }
    pass(3, "20 geometries Hurwitz with rho(D) < 1", t0);
}

/// 4: steady FD error shrinks by >= 3.5 when the spacing halves.
#[test]
fn criterion_04_fd_convergence() {
    let t0 = Instant::now();
    // smooth test problem: the exclusion circle sits outside the domain, so
    // the solution is smooth up to the boundary and second order is visible
    let field = FlowField::new(
        flat_floor(),
        vec![
            FlowElement::Uniform { u_inf: 40.0, theta0: 0.0 },
            FlowElement::Doublet { delta: 4000.0, center: [0.0, 0.0], theta0: 0.0 },
        ],
    )
    .unwrap();
    let geometry = AirspaceGeometry::new(
        [20.0, -40.0],
        [100.0, 40.0],
        vec![flat_floor()],
        vec![],
    )
    .unwrap();
    let mut errors = Vec::new();
    for h in [4.0, 2.0, 1.0] {
        let grid = build_grid(&geometry, h, 1).unwrap();
        let pl = assemble_partitioned(&grid).unwrap();
        let mut bv = Array1::zeros(pl.m_cb);
        for k in 0..pl.m_cb {
            bv[k] = field.potential_at(grid.coord(pl.order[k]), 0.0).unwrap();
        }
        let steady = pl.solve_steady(&bv).unwrap();
        let lattice = pl.scatter(&steady);
        let mut err = 0.0f64;
        for idx in 0..grid.m() {
            if grid.classes[idx] == NodeClass::Interior {
                let exact = field.potential_at(grid.coord(idx), 0.0).unwrap();
                err = err.max((lattice[idx] - exact).abs());
            }
        }
        errors.push(err);
    }
    let r1 = errors[0] / errors[1];
    let r2 = errors[1] / errors[2];
    assert!(r1 >= 3.5, "h=4 -> h=2 reduction only {r1:.3}");
    assert!(r2 >= 3.5, "h=2 -> h=1 reduction only {r2:.3}");
    pass(4, &format!("error reductions {r1:.2} and {r2:.2} under h-halving"), t0);
}

/// 5: Riccati oracle plus the residual invariant on random stable systems.
#[test]
fn criterion_05_riccati_oracle() {
    let t0 = Instant::now();
    // scalar: P^2 + 2P - 1 = 0 with the stabilizing root sqrt(2) - 1
    let problem = LqrProblem::new(
        ndarray::array![[-1.0]],
        ndarray::array![[1.0]],
        ndarray::array![[1.0]],
        ndarray::array![[1.0]],
    )
    .unwrap();
    let sol = solve_riccati(&problem).unwrap();
    let exact = 2.0f64.sqrt() - 1.0;
    let err = (sol.p_e[[0, 0]] - exact).abs();
    assert!(err < 1e-10, "scalar P error {err:.3e}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..20 {
        let n = rng.random_range(2..=40);
        let m = rng.random_range(1..=n);
        let mut a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        // shift until Hurwitz
        let shift = linalg::max_real_eig(&a).unwrap() + rng.random_range(0.2..1.0);
        for i in 0..n {
            a[[i, i]] -= shift;
        }
        assert!(linalg::is_hurwitz(&a).unwrap());
        let b = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let we = c.t().dot(&c);
        let wu = Array2::eye(m);
        let problem = LqrProblem::new(a.clone(), b.clone(), we.clone(), wu).unwrap();
        let sol = solve_riccati(&problem).unwrap();
        let residual = a.t().dot(&sol.p_e) + sol.p_e.dot(&a)
            - sol.p_e.dot(&b).dot(&sol.k_e)
            + &we;
        let r = residual.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
        let bound = 1e-8 * we.iter().fold(0.0f64, |mx, v| mx.max(v.abs())) * n as f64;
        assert!(r < bound.max(1e-8), "case {case}: residual {r:.3e}");
    }
    pass(5, &format!("scalar P within {err:.1e}; 20 random systems hold the residual bound"), t0);
}

fn popup_geometries() -> (AirspaceGeometry, AirspaceGeometry) {
    let before = AirspaceGeometry::new(
        [-100.0, -100.0],
        [100.0, 100.0],
        vec![flat_floor()],
        vec![],
    )
    .unwrap();
    let after = AirspaceGeometry::new(
        [-100.0, -100.0],
        [100.0, 100.0],
        vec![FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 100.0 },
            gamma: vec![false],
            xi: true,
        }],
        vec![UnplannedRegion::Rectangle {
            center: [0.0, 0.0],
            half_extents: [12.0, 12.0],
        }],
    )
    .unwrap();
    (before, after)
}

/// 6: 41x41 pop-up recovery under the LQR closed loop.
#[test]
fn criterion_06_popup_lqr_recovery() {
    let t0 = Instant::now();
    let (before, after) = popup_geometries();
    let field = FlowField::from_geometry(&before, 1, 40.0, 0.0).unwrap();
    let old_grid = build_grid(&before, 5.0, 1).unwrap();
    let new_grid = build_grid(&after, 5.0, 1).unwrap();
    let pl_old = assemble_partitioned(&old_grid).unwrap();
    let pl_new = assemble_partitioned(&new_grid).unwrap();
    let mut bv = Array1::zeros(pl_old.m_cb);
    for k in 0..pl_old.m_cb {
        bv[k] = field.potential_at(old_grid.coord(pl_old.order[k]), 0.0).unwrap();
    }
    let problem = LqrProblem::from_laplacian(&pl_new).unwrap();
    let sol = solve_riccati(&problem).unwrap();

    let dt = 0.5;
    let horizon = 2400.0;
    let closed = simulate_lqr_recovery(&pl_old, &pl_new, &bv, &sol, dt, horizon, &[]).unwrap();
    let initial = closed.error_norms[0];
    for w in closed.lyapunov.windows(2) {
        assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "Lyapunov rose");
    }
    let final_frac = closed.error_norms.last().unwrap() / initial;
    assert!(final_frac < 0.01, "final error fraction {final_frac:.4}");

    // open loop: zero gain, same quadratic metric
    let open_sol = LqrSolution {
        p_e: sol.p_e.clone(),
        k_e: Array2::zeros(sol.k_e.dim()),
        residual: 0.0,
        iterations: 0,
    };
    let open =
        simulate_lqr_recovery(&pl_old, &pl_new, &bv, &open_sol, 2.0, 4000.0, &[]).unwrap();
    let settle = |trace: &utmflow::boundary_control::RecoveryTrace| {
        trace
            .error_norms
            .iter()
            .position(|v| *v < 0.02 * initial)
            .map(|i| trace.times[i])
    };
    let closed_settle = settle(&closed).expect("closed loop settles");
    match settle(&open) {
        Some(open_settle) => assert!(
            closed_settle < open_settle,
            "closed {closed_settle} not faster than open {open_settle}"
        ),
        None => {} // open loop never reached 2% in a 4000 s window
    }
    pass(
        6,
        &format!(
            "recovered to {:.2}% of initial; closed 2% settle at {closed_settle:.0}s",
            100.0 * final_frac
        ),
        t0,
    );
}

/// 7: analytic stream boundary laws: V never rises and the error vanishes.
#[test]
fn criterion_07_stream_boundary_control() {
    let t0 = Instant::now();
    let geometry = AirspaceGeometry::new(
        [-20.0, -20.0],
        [20.0, 20.0],
        vec![FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 100.0 },
            gamma: vec![true],
            xi: true,
        }],
        vec![UnplannedRegion::CircleFromDoublet {
            center: [0.0, 0.0],
            radius: 5.0,
        }],
    )
    .unwrap();
    let grid = build_grid(&geometry, 2.0, 1).unwrap();
    let mut psi = vec![0.0; grid.m()];
    for idx in 0..grid.m() {
        if grid.classes[idx] != NodeClass::Unplanned {
            let [x, y] = grid.coord(idx);
            psi[idx] = (-((x + 10.0).powi(2) + (y - 5.0).powi(2)) / 60.0).exp();
        }
    }
    let mut field = StreamErrorField::new(psi, vec![0.0; grid.m()], 1.0, 1.0).unwrap();
    let e0 = field.error().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dt = grid.spacing * grid.spacing / 8.0;
    let mut v_prev = field.lyapunov(&grid);
    let mut steps = 0usize;
    loop {
        field = step_stream_control(&field, &grid, dt).unwrap();
        steps += 1;
        let v = field.lyapunov(&grid);
        assert!(v <= v_prev + 1e-12, "V rose at step {steps}");
        v_prev = v;
        let e = field.error().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if e < 1e-6 * e0 {
            break;
        }
        assert!(steps < 200_000, "did not reach 1e-6 of initial; at {e:.3e}");
    }
    pass(7, &format!("error below 1e-6 of initial after {steps} steps, V monotone"), t0);
}

/// 8: published ten-agent weights and 50 random graphs are all stable.
#[test]
fn criterion_08_weight_matrix_suite() {
    let t0 = Instant::now();
    let cluster = ten_agent_example(ten_agent_material_positions(5.0), 4.0, 4.0).unwrap();
    let wm = build_weight_matrix(&cluster).unwrap();
    assert!(linalg::is_hurwitz(&wm.l).unwrap());
    assert!(linalg::is_hurwitz(&wm.w).unwrap());
    let nf = wm.l.nrows();
    let rho = linalg::spectral_radius(&(&wm.l + &Array2::<f64>::eye(nf))).unwrap();
    assert!(rho < 1.0, "published graph: rho(L+I) = {rho}");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..50 {
        let d = 2usize;
        let n = rng.random_range(6..=14);
        let mut neighbors: Vec<Vec<(usize, f64)>> = vec![vec![]; n];
        let mut positions: Vec<[f64; 3]> = vec![
            [10.0, 0.0, 0.0],
            [-5.0, 8.66, 0.0],
            [-5.0, -8.66, 0.0],
        ];
        for j in (d + 1)..n {
            // in-neighbors drawn from earlier agents keeps every follower
            // connected to the leading simplex through a directed path
            let count = rng.random_range(2..=3.min(j));
            let mut picks = Vec::new();
            while picks.len() < count {
                let h = rng.random_range(0..j);
                if !picks.contains(&h) {
                    picks.push(h);
                }
            }
            let raw: Vec<f64> = picks.iter().map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            neighbors[j] = picks
                .iter()
                .zip(&raw)
                .map(|(&h, &w)| (h, w / total))
                .collect();
            // consistent material position: the same convex combination
            let mut p = [0.0f64; 3];
            for &(h, w) in &neighbors[j] {
                for c in 0..3 {
                    p[c] += w * positions[h][c];
                }
            }
            positions.push(p);
        }
        let cluster = Cluster::new(case, d, neighbors, positions, 4.0, 4.0).unwrap();
        let wm = build_weight_matrix(&cluster).unwrap();
        assert!(linalg::is_hurwitz(&wm.l).unwrap(), "case {case}: L not Hurwitz");
        assert!(linalg::is_hurwitz(&wm.w).unwrap(), "case {case}: W not Hurwitz");
        let nf = wm.l.nrows();
        let rho = linalg::spectral_radius(&(&wm.l + &Array2::<f64>::eye(nf))).unwrap();
        assert!(rho < 1.0, "case {case}: rho(L+I) = {rho}");
    }
    pass(8, "published weights plus 50 random graphs all stable", t0);
}

/// 9: followers converge to the directly solved containment fixed point.
#[test]
fn criterion_09_containment_fixed_point() {
    let t0 = Instant::now();
    let cluster = ten_agent_example(ten_agent_material_positions(5.0), 4.0, 4.0).unwrap();
    let wm = build_weight_matrix(&cluster).unwrap();
    let pose = VrbPose::identity([5.0, -3.0, 100.0]);
    let mut state = ClusterState::at_rest(&cluster, &pose);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = cluster.dimension;
    for j in (d + 1)..cluster.agents() {
        for c in 0..3 {
            state.positions[j][c] += rng.random_range(-10.0..10.0);
        }
    }
    let rate = VrbPoseRate::zero();
    for _ in 0..7000 {
        state = step_agents(&cluster, &state, &pose, &rate, 0.02).unwrap();
    }
    let desired = global_desired_positions(&cluster, &pose);
    let fixed = containment_fixed_point(&wm, &desired[..=d]).unwrap();
    let mut worst = 0.0f64;
    for (j, target) in fixed.iter().enumerate() {
        let p = state.positions[d + 1 + j];
        for c in 0..3 {
            worst = worst.max((p[c] - target[c]).abs());
        }
    }
    assert!(worst < 1e-6, "worst per-axis gap {worst:.3e}");
    pass(9, &format!("followers within {worst:.1e} of the fixed point"), t0);
}

fn repo_path(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// 10: ten-agent cluster rides the 375 m^2/s channel over the paraboloid.
#[test]
fn criterion_10_ten_agent_channel() {
    let t0 = Instant::now();
    let spec = ScenarioSpec::load(&repo_path("scenarios/ten_agent.toml")).unwrap();
    let result = run_scenario(&spec, RecoveryMode::Lqr).unwrap();
    let cr = &result.clusters[0];

    // channel holding
    let mut worst_psi = 0.0f64;
    for p in &cr.reference.points {
        let rho2 = (p[0] - 25.0).powi(2) + p[1] * p[1];
        let psi = 40.0 * p[1] * (1.0 - 100.0 / rho2);
        worst_psi = worst_psi.max((psi - 375.0).abs());
    }
    assert!(worst_psi < 1e-4, "worst channel deviation {worst_psi:.3e}");

    // pose orthogonality along the same reference
    let mut pose: Option<VrbPose> = None;
    for i in 0..cr.reference.points.len() {
        let r = cr.reference.points[i];
        let v = if i + 1 < cr.reference.points.len() {
            let h = cr.reference.times[i + 1] - cr.reference.times[i];
            let q = cr.reference.points[i + 1];
            [(q[0] - r[0]) / h, (q[1] - r[1]) / h, (q[2] - r[2]) / h]
        } else {
            break;
        };
        let p = utmflow::microscopic::vrb_pose_from_velocity(r, v, pose.as_ref()).unwrap();
        assert!(p.orthogonality_defect() < 1e-12, "Q defect at sample {i}");
        pose = Some(p);
    }

    // follower 7 deviation: bounded throughout, decaying after the freeze
    let freeze = cr.pose_frozen_at.expect("pose froze after exit");
    let dev7: Vec<(f64, f64)> = cr
        .times
        .iter()
        .zip(&cr.deviations)
        .map(|(t, d)| (*t, d[7]))
        .collect();
    let max_dev = dev7.iter().fold(0.0f64, |m, (_, d)| m.max(*d));
    assert!(max_dev < 2.0, "follower 7 deviation reached {max_dev}");
    let at_freeze = dev7
        .iter()
        .find(|(t, _)| *t >= freeze)
        .map(|(_, d)| *d)
        .unwrap();
    let final_dev = dev7.last().unwrap().1;
    assert!(
        final_dev < at_freeze.max(1e-9) && final_dev < 1e-3,
        "deviation did not decay: {at_freeze} -> {final_dev}"
    );
    pass(
        10,
        &format!(
            "channel held to {worst_psi:.1e}; follower 7 peaked at {max_dev:.2} m and decayed to {final_dev:.1e}"
        ),
        t0,
    );
}

/// 11: identical CLI invocations produce byte-identical outputs.
#[test]
fn criterion_11_determinism() {
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_utmflow");
    let spec = repo_path("scenarios/ten_agent.toml");
    let run = |dir: &Path| {
        let status = Command::new(bin)
            .current_dir(dir)
            .arg("micro")
            .arg(&spec)
            .args(["--out", "out"])
            .env("UTMFLOW_LOG", "quiet")
            .status()
            .unwrap();
        assert!(status.success());
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run(d1.path());
    run(d2.path());
    let mut names: Vec<String> = std::fs::read_dir(d1.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    let other: Vec<String> = {
        let mut v: Vec<String> = std::fs::read_dir(d2.path().join("out"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(names, other);
    for name in &names {
        let a = std::fs::read(d1.path().join("out").join(name)).unwrap();
        let b = std::fs::read(d2.path().join("out").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    pass(11, &format!("{} files byte-identical across re-runs", names.len()), t0);
}

/// Scenario-level determinism without the CLI, and an in-library re-run of
/// a pop-up recovery (same seed surface as criterion 11, different path).
#[test]
fn criterion_11b_library_determinism() {
    let t0 = Instant::now();
    let spec = ScenarioSpec::load(&repo_path("scenarios/popup_recovery.toml")).unwrap();
    let r1 = run_scenario(&spec, RecoveryMode::Lqr).unwrap();
    let r2 = run_scenario(&spec, RecoveryMode::Lqr).unwrap();
    assert_eq!(r1.events[0].trace.error_norms, r2.events[0].trace.error_norms);
    assert_eq!(r1.events[0].trace.lyapunov, r2.events[0].trace.lyapunov);
    pass(11, "library-level recovery traces bitwise equal", t0);
}
