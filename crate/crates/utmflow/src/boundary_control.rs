//! Resilient macroscopic coordination after a pop-up reclassification:
//! LQR boundary control of the discretized error dynamics, plus the analytic
//! stream-function boundary laws realized on the lattice.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

use crate::fdsolver::{Grid, NodeClass, PartitionedLaplacian};
use crate::flowfield::{FlowElement, FlowField};
use crate::linalg;
use crate::tolerances::{OBSTACLE_STREAM_SPREAD, RICCATI_RESIDUAL_REL, RICCATI_SYMMETRY_REL};
use crate::{Error, Result};

fn inf_norm(a: &Array2<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

fn check_symmetric(name: &str, a: &Array2<f64>) -> Result<()> {
    let scale = inf_norm(a).max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-10 * scale {
                return Err(Error::Validation(format!("{name} must be symmetric")));
            }
        }
    }
    Ok(())
}

/// LQR problem on the error dynamics `E' = A_c E + B_c U`.
#[derive(Debug, Clone)]
pub struct LqrProblem {
    pub a_c: Array2<f64>,
    pub b_c: Array2<f64>,
    /// State weight, `(m - m_cb)` square, symmetric PSD.
    pub we: Array2<f64>,
    /// Control weight, `m_cb` square, symmetric PD.
    pub wu: Array2<f64>,
}

impl LqrProblem {
    pub fn new(
        a_c: Array2<f64>,
        b_c: Array2<f64>,
        we: Array2<f64>,
        wu: Array2<f64>,
    ) -> Result<Self> {
        let n = a_c.nrows();
        let m = b_c.ncols();
        if a_c.ncols() != n || b_c.nrows() != n || we.dim() != (n, n) || wu.dim() != (m, m) {
            return Err(Error::Config("LQR problem dimension mismatch".into()));
        }
        check_symmetric("We", &we)?;
        check_symmetric("Wu", &wu)?;
        let (we_eigs, _) = we
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Numerical(format!("dsyev on We failed: {e}")))?;
        if we_eigs.iter().any(|l| *l < -1e-12) {
            return Err(Error::Validation(
                "We must be positive semi-definite".into(),
            ));
        }
        let (wu_eigs, _) = wu
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Numerical(format!("dsyev on Wu failed: {e}")))?;
        if wu_eigs.iter().any(|l| *l <= 1e-12) {
            return Err(Error::Validation("Wu must be positive definite".into()));
        }
        Ok(Self { a_c, b_c, we, wu })
    }

    /// Problem over a partitioned Laplacian with identity weights.
    pub fn from_laplacian(pl: &PartitionedLaplacian) -> Result<Self> {
        Self::new(
            pl.a_c.clone(),
            pl.b_c.clone(),
            Array2::eye(pl.state_dim()),
            Array2::eye(pl.m_cb),
        )
    }
}

/// Riccati solution and the induced feedback gain `U = -K_e E`.
#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub p_e: Array2<f64>,
    pub k_e: Array2<f64>,
    /// Infinity norm of the Riccati residual at acceptance.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `A^T P + P A - P B Wu^-1 B^T P + We = 0` by Newton-Kleinman.
///
/// `A_c` Hurwitz makes the zero gain stabilizing, so the iteration is seeded
/// with `K = 0`; each step solves one Lyapunov equation.
pub fn solve_riccati(problem: &LqrProblem) -> Result<LqrSolution> {
    let n = problem.a_c.nrows();
    let m = problem.b_c.ncols();
    let we_norm = inf_norm(&problem.we);
    if we_norm == 0.0 {
        // zero state cost: P = 0 solves the equation exactly
        return Ok(LqrSolution {
            p_e: Array2::zeros((n, n)),
            k_e: Array2::zeros((m, n)),
            residual: 0.0,
            iterations: 0,
        });
    }
    let tol = RICCATI_RESIDUAL_REL * we_norm;
    let bt = problem.b_c.t().to_owned();
    let mut k = Array2::<f64>::zeros((m, n));
    let mut last_residual = f64::INFINITY;
    let mut crossed = false;
    for iter in 0..200 {
        let a_k = &problem.a_c - &problem.b_c.dot(&k);
        let q_k = &problem.we + &k.t().dot(&problem.wu).dot(&k);
        let p = linalg::solve_lyapunov(&a_k, &q_k)?;
        // K = Wu^-1 B^T P
        k = linalg::solve_multi(&problem.wu, &bt.dot(&p))?;
        let residual_mat =
            problem.a_c.t().dot(&p) + p.dot(&problem.a_c) - p.dot(&problem.b_c).dot(&k)
                + &problem.we;
        last_residual = inf_norm(&residual_mat);
        if last_residual < tol && !crossed {
            // quadratic convergence: one polishing pass once below the gate
            crossed = true;
            continue;
        }
        if last_residual < tol {
            let p_norm = inf_norm(&p).max(1.0);
            let sym_defect = inf_norm(&(&p - &p.t().to_owned()));
            if sym_defect > RICCATI_SYMMETRY_REL * p_norm {
                return Err(Error::Numerical(format!(
                    "Riccati solution asymmetric: defect {sym_defect}"
                )));
            }
            let closed = &problem.a_c - &problem.b_c.dot(&k);
            if !linalg::is_hurwitz(&closed)? {
                return Err(Error::Numerical(
                    "closed-loop matrix not Hurwitz".into(),
                ));
            }
            return Ok(LqrSolution {
                p_e: p,
                k_e: k,
                residual: last_residual,
                iterations: iter + 1,
            });
        }
    }
    Err(Error::Numerical(format!(
        "Riccati iteration did not converge in 200 steps; residual {last_residual}, bound {tol}"
    )))
}

/// Error-trajectory record from a recovery simulation.
#[derive(Debug, Clone)]
pub struct RecoveryTrace {
    pub times: Vec<f64>,
    /// `||E(t)||_2` samples.
    pub error_norms: Vec<f64>,
    /// Quadratic Lyapunov value `E^T P_e E` samples.
    pub lyapunov: Vec<f64>,
    /// Full error state at the final sample.
    pub final_error: Array1<f64>,
    /// Full error states at the requested sample times.
    pub sampled_states: Vec<(f64, Array1<f64>)>,
}

/// Simulates closed-loop recovery after a pop-up reclassification.
///
/// The initial error is the old steady interior potential minus the new one,
/// expressed in the new partition ordering; the loop `E' = (A_c - B_c K_e) E`
/// is integrated with fixed-step RK4.
pub fn simulate_lqr_recovery(
    pl_old: &PartitionedLaplacian,
    pl_new: &PartitionedLaplacian,
    boundary_values: &Array1<f64>,
    sol: &LqrSolution,
    dt: f64,
    horizon: f64,
    sample_times: &[f64],
) -> Result<RecoveryTrace> {
    if pl_old.m != pl_new.m || pl_old.m_cb != pl_new.m_cb {
        return Err(Error::Config(
            "old and new grids must share node count and boundary ring".into(),
        ));
    }
    if sol.k_e.dim() != (pl_new.m_cb, pl_new.state_dim()) {
        return Err(Error::Config("gain dimensions do not match the grid".into()));
    }
    if dt <= 0.0 || horizon < 0.0 {
        return Err(Error::Config("dt and horizon must be positive".into()));
    }
    let old_lattice = pl_old.scatter(&pl_old.solve_steady(boundary_values)?);
    let new_steady = pl_new.solve_steady(boundary_values)?;
    let n = pl_new.state_dim();
    let mut e = Array1::<f64>::zeros(n);
    for kidx in 0..n {
        let lattice_idx = pl_new.order[pl_new.m_cb + kidx];
        e[kidx] = old_lattice[lattice_idx] - new_steady.interior[kidx];
    }
    let closed = &pl_new.a_c - &pl_new.b_c.dot(&sol.k_e);
    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut error_norms = Vec::with_capacity(steps + 1);
    let mut lyapunov = Vec::with_capacity(steps + 1);
    let record = |t: f64,
                  e: &Array1<f64>,
                  times: &mut Vec<f64>,
                  norms: &mut Vec<f64>,
                  lyap: &mut Vec<f64>| {
        times.push(t);
        norms.push(e.iter().map(|v| v * v).sum::<f64>().sqrt());
        lyap.push(e.dot(&sol.p_e.dot(e)));
    };
    let mut sampled_states: Vec<(f64, Array1<f64>)> = Vec::new();
    let sample = |t: f64, e: &Array1<f64>, states: &mut Vec<(f64, Array1<f64>)>| {
        for &st in sample_times {
            if (st - t).abs() <= dt / 2.0 + 1e-12
                && states.iter().all(|(s, _)| (*s - st).abs() > 1e-12)
            {
                states.push((st, e.clone()));
            }
        }
    };
    record(0.0, &e, &mut times, &mut error_norms, &mut lyapunov);
    sample(0.0, &e, &mut sampled_states);
    for step in 0..steps {
        let f = |x: &Array1<f64>| closed.dot(x);
        let k1 = f(&e);
        let k2 = f(&(&e + &(&k1 * (dt / 2.0))));
        let k3 = f(&(&e + &(&k2 * (dt / 2.0))));
        let k4 = f(&(&e + &(&k3 * dt)));
        e = &e + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
        record(
            (step + 1) as f64 * dt,
            &e,
            &mut times,
            &mut error_norms,
            &mut lyapunov,
        );
        sample((step + 1) as f64 * dt, &e, &mut sampled_states);
    }
    sampled_states.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(RecoveryTrace {
        times,
        error_norms,
        lyapunov,
        final_error: e,
        sampled_states,
    })
}

/// Nodal stream state for the analytic boundary laws, lattice order.
#[derive(Debug, Clone)]
pub struct StreamErrorField {
    pub psi_actual: Vec<f64>,
    pub psi_reference: Vec<f64>,
    /// Outer-boundary gain.
    pub k_p: f64,
    /// Obstacle-boundary gain, shared by every unplanned region.
    pub k_u: f64,
}

impl StreamErrorField {
    pub fn new(
        psi_actual: Vec<f64>,
        psi_reference: Vec<f64>,
        k_p: f64,
        k_u: f64,
    ) -> Result<Self> {
        if psi_actual.len() != psi_reference.len() {
            return Err(Error::Config("stream field length mismatch".into()));
        }
        if k_p <= 0.0 || k_u <= 0.0 {
            return Err(Error::Config("control gains must be strictly positive".into()));
        }
        Ok(Self {
            psi_actual,
            psi_reference,
            k_p,
            k_u,
        })
    }

    pub fn error(&self) -> Vec<f64> {
        self.psi_actual
            .iter()
            .zip(&self.psi_reference)
            .map(|(a, r)| a - r)
            .collect()
    }

    /// Discrete Lyapunov functional `V = 1/2 sum ||grad E||^2 h^2`, taken as
    /// half the sum of squared error differences over lattice edges.
    pub fn lyapunov(&self, grid: &Grid) -> f64 {
        let e = self.error();
        let mut v = 0.0;
        for idx in 0..grid.m() {
            let i = idx % grid.nx;
            let j = idx / grid.nx;
            if i + 1 < grid.nx {
                let d = e[idx + 1] - e[idx];
                v += d * d;
            }
            if j + 1 < grid.ny {
                let d = e[idx + grid.nx] - e[idx];
                v += d * d;
            }
        }
        0.5 * v
    }
}

/// One-sided second-order derivative along `step` starting at `idx`,
/// `(-3 e_0 + 4 e_1 - e_2) / (2h)` with nodes marching inward.
fn one_sided(e: &[f64], idx: usize, step: isize, h: f64) -> f64 {
    let i1 = (idx as isize + step) as usize;
    let i2 = (idx as isize + 2 * step) as usize;
    (-3.0 * e[idx] + 4.0 * e[i1] - e[i2]) / (2.0 * h)
}

/// Outward-normal error derivative at an outer boundary node.
fn outer_normal_derivative(grid: &Grid, e: &[f64], idx: usize) -> f64 {
    let i = idx % grid.nx;
    let j = idx / grid.nx;
    let h = grid.spacing;
    let mut nx = 0.0f64;
    let mut ny = 0.0f64;
    if i == 0 {
        nx = -1.0;
    } else if i == grid.nx - 1 {
        nx = 1.0;
    }
    if j == 0 {
        ny = -1.0;
    } else if j == grid.ny - 1 {
        ny = 1.0;
    }
    let norm = (nx * nx + ny * ny).sqrt();
    nx /= norm;
    ny /= norm;
    let mut dot = 0.0;
    if nx != 0.0 {
        // derivative along +x, computed one-sided into the domain
        let step: isize = if i == 0 { 1 } else { -1 };
        let d_inward = one_sided(e, idx, step, h);
        let d_x = if i == 0 { d_inward } else { -d_inward };
        dot += nx * d_x;
    }
    if ny != 0.0 {
        let step: isize = if j == 0 { grid.nx as isize } else { -(grid.nx as isize) };
        let d_inward = one_sided(e, idx, step, h);
        let d_y = if j == 0 { d_inward } else { -d_inward };
        dot += ny * d_y;
    }
    dot
}

/// Outward-normal (into the obstacle) error derivative at an unplanned node
/// that borders the interior. Returns `None` for nodes buried inside the
/// region.
fn obstacle_normal_derivative(grid: &Grid, e: &[f64], idx: usize) -> Option<f64> {
    let i = idx % grid.nx;
    let j = idx / grid.nx;
    let h = grid.spacing;
    let mut nx = 0.0f64;
    let mut ny = 0.0f64;
    let mut dx = 0.0;
    let mut dy = 0.0;
    let planned = |k: usize| grid.classes[k] != NodeClass::Unplanned;
    if i >= 2 && planned(idx - 1) {
        nx += 1.0;
        dx = -one_sided(e, idx, -1, h);
    }
    if i + 2 < grid.nx && planned(idx + 1) {
        nx -= 1.0;
        dx = one_sided(e, idx, 1, h);
    }
    if j >= 2 && planned(idx - grid.nx) {
        ny += 1.0;
        dy = -one_sided(e, idx, -(grid.nx as isize), h);
    }
    if j + 2 < grid.ny && planned(idx + grid.nx) {
        ny -= 1.0;
        dy = one_sided(e, idx, grid.nx as isize, h);
    }
    let norm = (nx * nx + ny * ny).sqrt();
    if norm == 0.0 {
        return None;
    }
    Some((nx * dx + ny * dy) / norm)
}

/// Error rates for every node under the interior heat equation and the
/// boundary control laws; buried unplanned nodes are pinned.
fn error_rates(field: &StreamErrorField, grid: &Grid, e: &[f64]) -> Vec<f64> {
    let h2 = grid.spacing * grid.spacing;
    let mut rates = vec![0.0; grid.m()];
    for idx in 0..grid.m() {
        match grid.classes[idx] {
            NodeClass::Interior => {
                let mut acc = -4.0 * e[idx];
                for nb in grid.neighbors(idx) {
                    acc += e[nb];
                }
                rates[idx] = acc / h2;
            }
            NodeClass::BoundaryControl => {
                rates[idx] = -field.k_p * outer_normal_derivative(grid, e, idx);
            }
            NodeClass::Unplanned => {
                // the obstacle boundary is a streamline of both the actual
                // and reference fields at the same constant value, so its
                // error is pinned; see `obstacle_actuation` for the feedback
                // effort that holds it there
                rates[idx] = 0.0;
            }
        }
    }
    rates
}

/// Actuation `U_u = -k_u (grad E . n_u)` required at each obstacle-border
/// node to hold the obstacle stream value, as `(lattice index, value)` pairs.
pub fn obstacle_actuation(field: &StreamErrorField, grid: &Grid) -> Vec<(usize, f64)> {
    let e = field.error();
    let mut out = Vec::new();
    for idx in 0..grid.m() {
        if grid.classes[idx] == NodeClass::Unplanned {
            if let Some(dn) = obstacle_normal_derivative(grid, &e, idx) {
                out.push((idx, -field.k_u * dn));
            }
        }
    }
    out
}

/// Advances the stream error field one explicit step of size `dt`.
///
/// Interior nodes follow the discrete heat equation; outer and obstacle
/// boundary nodes follow the feedback laws with one-sided normal derivatives.
pub fn step_stream_control(
    field: &StreamErrorField,
    grid: &Grid,
    dt: f64,
) -> Result<StreamErrorField> {
    if field.psi_actual.len() != grid.m() {
        return Err(Error::Config("stream field does not match the grid".into()));
    }
    let bound = grid.spacing * grid.spacing / 4.0;
    if dt <= 0.0 || dt > bound {
        return Err(Error::StepSize { dt, bound });
    }
    let e = field.error();
    let rates = error_rates(field, grid, &e);
    let psi_actual = (0..grid.m())
        .map(|idx| {
            if grid.classes[idx] == NodeClass::Unplanned {
                field.psi_reference[idx]
            } else {
                field.psi_reference[idx] + e[idx] + dt * rates[idx]
            }
        })
        .collect();
    Ok(StreamErrorField {
        psi_actual,
        psi_reference: field.psi_reference.clone(),
        k_p: field.k_p,
        k_u: field.k_u,
    })
}

/// Discrete estimate of the Lyapunov rate: minus the interior dissipation
/// minus the boundary feedback terms. Non-positive by construction; exported
/// so runs can log it alongside V.
pub fn stream_vdot_estimate(field: &StreamErrorField, grid: &Grid) -> f64 {
    let e = field.error();
    let h = grid.spacing;
    let h2 = h * h;
    let mut vdot = 0.0;
    for idx in 0..grid.m() {
        match grid.classes[idx] {
            NodeClass::Interior => {
                let mut acc = -4.0 * e[idx];
                for nb in grid.neighbors(idx) {
                    acc += e[nb];
                }
                let rate = acc / h2;
                vdot -= rate * rate * h2;
            }
            NodeClass::BoundaryControl => {
                let dn = outer_normal_derivative(grid, &e, idx);
                vdot -= field.k_p * dn * dn * h;
            }
            NodeClass::Unplanned => {
                // pinned: its error rate is zero, so the boundary term drops
            }
        }
    }
    vdot
}

/// Samples every obstacle boundary of `field` and reports whether the stream
/// function is constant along each, within the registered spread tolerance.
pub fn check_proposition1(field: &FlowField, samples: usize) -> Result<bool> {
    let mut boundaries: Vec<Vec<[f64; 2]>> = Vec::new();
    for region in &field.regions {
        boundaries.push(region_boundary(region, samples));
    }
    if boundaries.is_empty() {
        // fall back to circles implied by doublet elements
        let u = field.u_inf();
        for el in &field.elements {
            if let FlowElement::Doublet { delta, center, .. } = el {
                let r = (delta / u).sqrt();
                boundaries.push(circle_points(*center, r, samples));
            }
        }
    }
    if boundaries.is_empty() {
        return Err(Error::Validation(
            "proposition check needs at least one obstacle".into(),
        ));
    }
    for pts in boundaries {
        let mut values = Vec::with_capacity(pts.len());
        for p in pts {
            values.push(field.stream_at(p, 0.0)?);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let spread = values.iter().fold(0.0f64, |m, v| m.max(*v - mean))
            - values.iter().fold(0.0f64, |m, v| m.min(*v - mean));
        if spread >= OBSTACLE_STREAM_SPREAD * (1.0 + mean.abs()) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn circle_points(center: [f64; 2], radius: f64, samples: usize) -> Vec<[f64; 2]> {
    (0..samples.max(1))
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / samples.max(1) as f64;
            [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
        })
        .collect()
}

fn region_boundary(region: &crate::airspace::UnplannedRegion, samples: usize) -> Vec<[f64; 2]> {
    use crate::airspace::UnplannedRegion::*;
    match region {
        CircleFromDoublet { center, radius } => circle_points(*center, *radius, samples),
        SourceSinkOval { center, half_extents, .. } => (0..samples.max(1))
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / samples.max(1) as f64;
                [
                    center[0] + half_extents[0] * th.cos(),
                    center[1] + half_extents[1] * th.sin(),
                ]
            })
            .collect(),
        Rectangle { center, half_extents } => {
            let n = samples.max(1);
            (0..n)
                .map(|k| {
                    let t = 4.0 * k as f64 / n as f64;
                    let (hx, hy) = (half_extents[0], half_extents[1]);
                    let (dx, dy) = match t {
                        t if t < 1.0 => (-hx + 2.0 * hx * t, -hy),
                        t if t < 2.0 => (hx, -hy + 2.0 * hy * (t - 1.0)),
                        t if t < 3.0 => (hx - 2.0 * hx * (t - 2.0), hy),
                        t => (-hx, hy - 2.0 * hy * (t - 3.0)),
                    };
                    [center[0] + dx, center[1] + dy]
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::{
        AirspaceGeometry, FloorDefinition, FloorSurface, UnplannedRegion,
    };
    use crate::fdsolver::{assemble_partitioned, build_grid};
    use crate::tolerances::LYAPUNOV_DECAY_SLACK;
    use ndarray::array;

    #[test]
    fn scalar_riccati_matches_closed_form() {
        let problem = LqrProblem::new(
            array![[-1.0]],
            array![[1.0]],
            array![[1.0]],
            array![[1.0]],
        )
        .unwrap();
        let sol = solve_riccati(&problem).unwrap();
        let expected = 2.0f64.sqrt() - 1.0;
        // the iteration stops at the 1e-8 residual gate
        assert!((sol.p_e[[0, 0]] - expected).abs() < 1e-7);
        assert!((sol.k_e[[0, 0]] - expected).abs() < 1e-7);
    }

    #[test]
    fn zero_state_weight_gives_zero_solution() {
        let problem = LqrProblem::new(
            array![[-1.0, 0.2], [0.0, -2.0]],
            array![[1.0], [0.5]],
            Array2::zeros((2, 2)),
            array![[1.0]],
        )
        .unwrap();
        let sol = solve_riccati(&problem).unwrap();
        assert!(sol.p_e.iter().all(|v| *v == 0.0));
        assert!(sol.k_e.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn feedback_speeds_up_slowest_mode() {
        let a = array![[-0.5, 0.3], [0.1, -0.8]];
        let b = array![[1.0, 0.0], [0.0, 1.0]];
        let problem =
            LqrProblem::new(a.clone(), b.clone(), Array2::eye(2), Array2::eye(2)).unwrap();
        let sol = solve_riccati(&problem).unwrap();
        assert!(sol.residual < 1e-8);
        let open_slowest = linalg::max_real_eig(&a).unwrap();
        let closed = &a - &b.dot(&sol.k_e);
        let closed_slowest = linalg::max_real_eig(&closed).unwrap();
        assert!(closed_slowest < open_slowest);
    }

    #[test]
    fn indefinite_weight_rejected() {
        let r = LqrProblem::new(
            array![[-1.0]],
            array![[1.0]],
            array![[-1.0]],
            array![[1.0]],
        );
        assert!(matches!(r, Err(Error::Validation(_))));
        let r = LqrProblem::new(
            array![[-1.0]],
            array![[1.0]],
            array![[1.0]],
            array![[0.0]],
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    fn popup_pair() -> (
        crate::fdsolver::Grid,
        PartitionedLaplacian,
        PartitionedLaplacian,
        Array1<f64>,
    ) {
        let base = AirspaceGeometry::new(
            [-10.0, -10.0],
            [10.0, 10.0],
            vec![FloorDefinition {
                index: 1,
                surface: FloorSurface::Flat { z: 0.0 },
                gamma: vec![],
                xi: false,
            }],
            vec![],
        )
        .unwrap();
        let bumped = AirspaceGeometry::new(
            [-10.0, -10.0],
            [10.0, 10.0],
            vec![FloorDefinition {
                index: 1,
                surface: FloorSurface::Flat { z: 0.0 },
                gamma: vec![false],
                xi: true,
            }],
            vec![UnplannedRegion::Rectangle {
                center: [2.0, 0.0],
                half_extents: [2.5, 1.5],
            }],
        )
        .unwrap();
        let grid_old = build_grid(&base, 2.0, 1).unwrap();
        let grid_new = build_grid(&bumped, 2.0, 1).unwrap();
        let pl_old = assemble_partitioned(&grid_old).unwrap();
        let pl_new = assemble_partitioned(&grid_new).unwrap();
        let bv = Array1::from_iter(pl_old.order[..pl_old.m_cb].iter().map(|&idx| {
            let [x, y] = grid_old.coord(idx);
            x + 0.3 * y
        }));
        (grid_new, pl_old, pl_new, bv)
    }

    #[test]
    fn identical_grids_give_zero_error() {
        let (_, pl_old, _, bv) = popup_pair();
        let problem = LqrProblem::from_laplacian(&pl_old).unwrap();
        let sol = solve_riccati(&problem).unwrap();
        let trace =
            simulate_lqr_recovery(&pl_old, &pl_old, &bv, &sol, 0.05, 1.0, &[]).unwrap();
        assert!(trace.error_norms.iter().all(|v| *v < 1e-13));
    }

    #[test]
    fn recovery_decays_and_lyapunov_monotone() {
        let (_, pl_old, pl_new, bv) = popup_pair();
        let problem = LqrProblem::from_laplacian(&pl_new).unwrap();
        let sol = solve_riccati(&problem).unwrap();
        let trace =
            simulate_lqr_recovery(&pl_old, &pl_new, &bv, &sol, 0.01, 60.0, &[]).unwrap();
        let initial = trace.error_norms[0];
        assert!(initial > 0.0);
        assert!(*trace.error_norms.last().unwrap() < 0.01 * initial);
        for w in trace.lyapunov.windows(2) {
            assert!(w[1] <= w[0] + LYAPUNOV_DECAY_SLACK);
        }
    }

    #[test]
    fn closed_loop_settles_faster_than_open() {
        let (_, pl_old, pl_new, bv) = popup_pair();
        let problem = LqrProblem::from_laplacian(&pl_new).unwrap();
        let sol = solve_riccati(&problem).unwrap();
        let open = LqrSolution {
            p_e: Array2::zeros((pl_new.state_dim(), pl_new.state_dim())),
            k_e: Array2::zeros((pl_new.m_cb, pl_new.state_dim())),
            residual: 0.0,
            iterations: 0,
        };
        let dt = 0.01;
        let horizon = 40.0;
        let closed_trace =
            simulate_lqr_recovery(&pl_old, &pl_new, &bv, &sol, dt, horizon, &[]).unwrap();
        let open_trace =
            simulate_lqr_recovery(&pl_old, &pl_new, &bv, &open, dt, horizon, &[]).unwrap();
        let settle = |trace: &RecoveryTrace| {
            let init = trace.error_norms[0];
            trace
                .error_norms
                .iter()
                .rposition(|v| *v > 0.02 * init)
                .map(|i| i + 1)
                .unwrap_or(0)
        };
        assert!(settle(&closed_trace) < settle(&open_trace));
    }

    fn plain_grid(span: f64, h: f64) -> crate::fdsolver::Grid {
        let g = AirspaceGeometry::new(
            [-span, -span],
            [span, span],
            vec![FloorDefinition {
                index: 1,
                surface: FloorSurface::Flat { z: 0.0 },
                gamma: vec![true],
                xi: true,
            }],
            vec![UnplannedRegion::CircleFromDoublet {
                center: [0.0, 0.0],
                radius: 1.4 * h,
            }],
        )
        .unwrap();
        build_grid(&g, h, 1).unwrap()
    }

    #[test]
    fn zero_error_is_an_equilibrium() {
        let grid = plain_grid(5.0, 1.0);
        let psi: Vec<f64> = (0..grid.m()).map(|i| grid.coord(i)[1] * 3.0).collect();
        let field = StreamErrorField::new(psi.clone(), psi, 1.0, 1.0).unwrap();
        let next = step_stream_control(&field, &grid, 0.2).unwrap();
        for (a, r) in next.psi_actual.iter().zip(&next.psi_reference) {
            assert!((a - r).abs() < 1e-14);
        }
    }

    #[test]
    fn bump_error_has_non_increasing_lyapunov() {
        let grid = plain_grid(5.0, 1.0);
        let psi_ref: Vec<f64> = (0..grid.m()).map(|i| grid.coord(i)[1]).collect();
        let mut psi = psi_ref.clone();
        // a single interior bump off-center
        let bump = 3 * grid.nx + 3;
        assert_eq!(grid.classes[bump], NodeClass::Interior);
        psi[bump] += 2.0;
        let mut field = StreamErrorField::new(psi, psi_ref, 1.0, 1.0).unwrap();
        let mut v_prev = field.lyapunov(&grid);
        let v0 = v_prev;
        for _ in 0..4000 {
            assert!(stream_vdot_estimate(&field, &grid) <= 1e-10);
            field = step_stream_control(&field, &grid, 0.1).unwrap();
            let v = field.lyapunov(&grid);
            assert!(v <= v_prev + LYAPUNOV_DECAY_SLACK, "V grew: {v} > {v_prev}");
            v_prev = v;
        }
        let e_max = field.error().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(e_max < 1e-6 * 2.0, "residual error {e_max}, V0 {v0} V {v_prev}");
    }

    #[test]
    fn stream_step_rejects_unstable_dt() {
        let grid = plain_grid(5.0, 1.0);
        let psi: Vec<f64> = vec![0.0; grid.m()];
        let field = StreamErrorField::new(psi.clone(), psi, 1.0, 1.0).unwrap();
        assert!(matches!(
            step_stream_control(&field, &grid, 0.3),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn proposition1_true_for_uniform_doublet() {
        let floor = FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 0.0 },
            gamma: vec![],
            xi: false,
        };
        let field = FlowField::new(
            floor,
            vec![
                FlowElement::Uniform { u_inf: 40.0, theta0: 0.0 },
                FlowElement::Doublet {
                    delta: 4000.0,
                    center: [0.0, 0.0],
                    theta0: 0.0,
                },
            ],
        )
        .unwrap();
        assert!(check_proposition1(&field, 720).unwrap());
        assert!(check_proposition1(&field, 1).unwrap());
    }

    #[test]
    fn proposition1_false_for_unexcluded_rectangle() {
        let floor = FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 0.0 },
            gamma: vec![false],
            xi: true,
        };
        let mut field = FlowField::new(
            floor,
            vec![FlowElement::Uniform { u_inf: 40.0, theta0: 0.0 }],
        )
        .unwrap();
        field.regions = vec![UnplannedRegion::Rectangle {
            center: [0.0, 0.0],
            half_extents: [5.0, 3.0],
        }];
        assert!(!check_proposition1(&field, 64).unwrap());
    }

    #[test]
    fn proposition1_requires_an_obstacle() {
        let floor = FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 0.0 },
            gamma: vec![],
            xi: false,
        };
        let field = FlowField::new(
            floor,
            vec![FlowElement::Uniform { u_inf: 40.0, theta0: 0.0 }],
        )
        .unwrap();
        assert!(matches!(
            check_proposition1(&field, 16),
            Err(Error::Validation(_))
        ));
    }
}
