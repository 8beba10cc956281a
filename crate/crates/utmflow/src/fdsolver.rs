//! Numerical macroscopic coordination: a 5-point lattice Laplacian over the
//! sector, partitioned into boundary-control / interior / unplanned blocks,
//! with steady and dynamic nodal solves and the stability structure used by
//! the boundary controller.

use ndarray::{Array1, Array2};

use crate::airspace::AirspaceGeometry;
use crate::linalg;
use crate::tolerances::STEADY_RESIDUAL_REL;
use crate::{Error, Result};

/// Classification of one lattice node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    /// On the outer border, Dirichlet-controlled.
    BoundaryControl,
    /// Planned interior node.
    Interior,
    /// Inside an unplanned region; pinned to zero.
    Unplanned,
}

/// Regular rectangular lattice over the outer rectangle, 4-connected.
#[derive(Debug, Clone)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
    pub origin: [f64; 2],
    /// Node classes in lattice order, index `= j * nx + i`.
    pub classes: Vec<NodeClass>,
    pub floor_index: usize,
}

impl Grid {
    pub fn m(&self) -> usize {
        self.nx * self.ny
    }

    pub fn m_cb(&self) -> usize {
        self.classes
            .iter()
            .filter(|c| **c == NodeClass::BoundaryControl)
            .count()
    }

    pub fn m_ci(&self) -> usize {
        self.classes.iter().filter(|c| **c == NodeClass::Interior).count()
    }

    pub fn m_u(&self) -> usize {
        self.classes.iter().filter(|c| **c == NodeClass::Unplanned).count()
    }

    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.nx;
        let j = idx / self.nx;
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
        ]
    }

    /// Lattice neighbors of `idx` (up to four).
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let i = idx % self.nx;
        let j = idx / self.nx;
        let mut out = Vec::with_capacity(4);
        if i > 0 {
            out.push(idx - 1);
        }
        if i + 1 < self.nx {
            out.push(idx + 1);
        }
        if j > 0 {
            out.push(idx - self.nx);
        }
        if j + 1 < self.ny {
            out.push(idx + self.nx);
        }
        out
    }
}

/// Builds the lattice for `floor` with the given spacing and classifies every
/// node against the active unplanned regions.
pub fn build_grid(geometry: &AirspaceGeometry, spacing: f64, floor: usize) -> Result<Grid> {
    if spacing <= 0.0 {
        return Err(Error::Config("grid spacing must be positive".into()));
    }
    let width = geometry.outer_max[0] - geometry.outer_min[0];
    let height = geometry.outer_max[1] - geometry.outer_min[1];
    let nx_f = width / spacing;
    let ny_f = height / spacing;
    if (nx_f - nx_f.round()).abs() > 1e-9 || (ny_f - ny_f.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "spacing {spacing} does not evenly divide the outer rectangle {width} x {height}"
        )));
    }
    let nx = nx_f.round() as usize + 1;
    let ny = ny_f.round() as usize + 1;
    if nx < 3 || ny < 3 {
        return Err(Error::Config(
            "degenerate geometry: lattice needs at least 3 nodes per side".into(),
        ));
    }
    let regions = geometry.active_regions(floor)?.to_vec();
    let mut classes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = geometry.outer_min[0] + i as f64 * spacing;
            let y = geometry.outer_min[1] + j as f64 * spacing;
            let class = if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                NodeClass::BoundaryControl
            } else if regions.iter().any(|r| r.contains_interior(x, y)) {
                NodeClass::Unplanned
            } else {
                NodeClass::Interior
            };
            classes.push(class);
        }
    }
    let grid = Grid {
        nx,
        ny,
        spacing,
        origin: geometry.outer_min,
        classes,
        floor_index: floor,
    };
    // every active region must be resolved by at least one node
    for (k, region) in regions.iter().enumerate() {
        let hit = (0..grid.m()).any(|idx| {
            let [x, y] = grid.coord(idx);
            region.contains_interior(x, y)
        });
        if !hit {
            return Err(Error::Config(format!(
                "spacing {spacing} is larger than unplanned region {k}; no node falls inside"
            )));
        }
    }
    Ok(grid)
}

/// Block partition of the lattice Laplacian under the interface permutation.
///
/// Node ordering is (boundary-control, interior, unplanned), each group in
/// lattice order; `order[k]` is the lattice index of partitioned node `k`.
#[derive(Debug, Clone)]
pub struct PartitionedLaplacian {
    pub m: usize,
    pub m_cb: usize,
    pub m_ci: usize,
    pub m_u: usize,
    pub spacing: f64,
    /// Partitioned index -> lattice index (defines the permutation S).
    pub order: Vec<usize>,
    /// Lattice index -> partitioned index.
    pub inverse_order: Vec<usize>,
    /// `(m - m_cb) x (m - m_cb)` system block; Hurwitz.
    pub a_c: Array2<f64>,
    /// `(m - m_cb) x m_cb` boundary coupling block.
    pub b_c: Array2<f64>,
    /// Diagonal of the decoupled boundary block, strictly positive.
    pub l_cb_diag: Array1<f64>,
}

/// Assembles the partitioned 5-point Laplacian for a grid.
///
/// Fails when the planned subgraph (boundary plus interior nodes) is not
/// 4-connected, the hypothesis under which the system block is Hurwitz.
pub fn assemble_partitioned(grid: &Grid) -> Result<PartitionedLaplacian> {
    let m = grid.m();
    let planned: Vec<usize> = (0..m)
        .filter(|&i| grid.classes[i] != NodeClass::Unplanned)
        .collect();
    check_planned_connectivity(grid, &planned)?;

    let mut order = Vec::with_capacity(m);
    for class in [NodeClass::BoundaryControl, NodeClass::Interior, NodeClass::Unplanned] {
        order.extend((0..m).filter(|&i| grid.classes[i] == class));
    }
    let mut inverse_order = vec![0usize; m];
    for (k, &idx) in order.iter().enumerate() {
        inverse_order[idx] = k;
    }

    let m_cb = grid.m_cb();
    let m_ci = grid.m_ci();
    let m_u = grid.m_u();
    let n = m - m_cb;
    let w = 1.0 / (grid.spacing * grid.spacing);

    let mut a_c = Array2::<f64>::zeros((n, n));
    let mut b_c = Array2::<f64>::zeros((n, m_cb));
    let mut l_cb_diag = Array1::<f64>::zeros(m_cb);

    for (k, &idx) in order.iter().enumerate() {
        match grid.classes[idx] {
            NodeClass::BoundaryControl => {
                l_cb_diag[k] = grid.neighbors(idx).len() as f64 * w;
            }
            NodeClass::Interior => {
                let row = k - m_cb;
                let neighbors = grid.neighbors(idx);
                a_c[[row, row]] = -(neighbors.len() as f64) * w;
                for nb in neighbors {
                    let kn = inverse_order[nb];
                    if kn < m_cb {
                        b_c[[row, kn]] += w;
                    } else {
                        a_c[[row, kn - m_cb]] += w;
                    }
                }
            }
            NodeClass::Unplanned => {
                // independent unplanned block: identity row, pinned to zero
                let row = k - m_cb;
                a_c[[row, row]] = -1.0;
            }
        }
    }

    Ok(PartitionedLaplacian {
        m,
        m_cb,
        m_ci,
        m_u,
        spacing: grid.spacing,
        order,
        inverse_order,
        a_c,
        b_c,
        l_cb_diag,
    })
}

fn check_planned_connectivity(grid: &Grid, planned: &[usize]) -> Result<()> {
    if planned.is_empty() {
        return Err(Error::Connectivity("no planned nodes".into()));
    }
    let m = grid.m();
    let mut seen = vec![false; m];
    let mut stack = vec![planned[0]];
    seen[planned[0]] = true;
    let mut count = 0usize;
    while let Some(idx) = stack.pop() {
        count += 1;
        for nb in grid.neighbors(idx) {
            if !seen[nb] && grid.classes[nb] != NodeClass::Unplanned {
                seen[nb] = true;
                stack.push(nb);
            }
        }
    }
    if count != planned.len() {
        return Err(Error::Connectivity(format!(
            "{} of {} planned nodes reachable",
            count,
            planned.len()
        )));
    }
    Ok(())
}

/// Nodal potential split into boundary and interior/unplanned parts, in
/// partitioned ordering.
#[derive(Debug, Clone)]
pub struct NodalPotential {
    pub boundary: Array1<f64>,
    pub interior: Array1<f64>,
}

impl PartitionedLaplacian {
    /// Dimension of the interior/unplanned state, `m - m_cb`.
    pub fn state_dim(&self) -> usize {
        self.m - self.m_cb
    }

    /// Largest eigenvalue real part of the system block.
    pub fn max_real_eig(&self) -> Result<f64> {
        linalg::max_real_eig(&self.a_c)
    }

    /// Scaled decomposition of the system block `A_c = G * (-I + D)` with
    /// `G` the diagonal magnitudes. Returns `(G, rho(D))`; `rho(D) < 1`
    /// certifies the Hurwitz property through the M-matrix argument.
    pub fn appendix_decomposition(&self) -> Result<(Array1<f64>, f64)> {
        let n = self.state_dim();
        let mut g = Array1::<f64>::zeros(n);
        for i in 0..n {
            g[i] = -self.a_c[[i, i]];
            if g[i] <= 0.0 {
                return Err(Error::Numerical(format!(
                    "system block diagonal must be negative, row {i}"
                )));
            }
        }
        let mut d = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[[i, j]] = self.a_c[[i, j]] / g[i];
                }
            }
        }
        let rho = linalg::spectral_radius(&d)?;
        Ok((g, rho))
    }

    /// Solves the steady problem `A_c phi_I + B_c phi_cb = 0` directly.
    pub fn solve_steady(&self, boundary_values: &Array1<f64>) -> Result<NodalPotential> {
        if boundary_values.len() != self.m_cb {
            return Err(Error::Config(format!(
                "expected {} boundary values, got {}",
                self.m_cb,
                boundary_values.len()
            )));
        }
        let rhs = self.b_c.dot(boundary_values).mapv(|x| -x);
        let phi = linalg::solve_vec(&self.a_c, &rhs)?;
        let residual = self.a_c.dot(&phi) + self.b_c.dot(boundary_values);
        let rmax = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rmax > STEADY_RESIDUAL_REL * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
            return Err(Error::Numerical(format!(
                "steady solve residual {rmax} exceeds {STEADY_RESIDUAL_REL} x {scale}"
            )));
        }
        Ok(NodalPotential {
            boundary: boundary_values.clone(),
            interior: phi,
        })
    }

    /// One implicit-trapezoidal step of the parabolic nodal dynamics
    /// `phi_I' = A_c phi_I + B_c phi_cb`. Unconditionally stable.
    pub fn step_dynamic(
        &self,
        phi_i: &Array1<f64>,
        boundary_values: &Array1<f64>,
        dt: f64,
    ) -> Result<Array1<f64>> {
        if dt <= 0.0 {
            return Err(Error::StepSize { dt, bound: f64::INFINITY });
        }
        let n = self.state_dim();
        let eye = Array2::<f64>::eye(n);
        let lhs = &eye - &(&self.a_c * (dt / 2.0));
        let rhs_mat = &eye + &(&self.a_c * (dt / 2.0));
        let forcing = self.b_c.dot(boundary_values) * dt;
        let rhs = rhs_mat.dot(phi_i) + forcing;
        linalg::solve_vec(&lhs, &rhs)
    }

    /// One forward-Euler step; rejects `dt` beyond the stability bound
    /// `2 / |lambda|_max` (Gershgorin estimate of the extreme eigenvalue).
    pub fn step_dynamic_explicit(
        &self,
        phi_i: &Array1<f64>,
        boundary_values: &Array1<f64>,
        dt: f64,
    ) -> Result<Array1<f64>> {
        let n = self.state_dim();
        let mut lam_max = 0.0f64;
        for i in 0..n {
            let row_abs: f64 = (0..n).map(|j| self.a_c[[i, j]].abs()).sum();
            lam_max = lam_max.max(row_abs);
        }
        let bound = 2.0 / lam_max;
        if dt <= 0.0 || dt >= bound {
            return Err(Error::StepSize { dt, bound });
        }
        Ok(phi_i + &((self.a_c.dot(phi_i) + self.b_c.dot(boundary_values)) * dt))
    }

    /// Scatters a partitioned solution back to lattice order.
    pub fn scatter(&self, potential: &NodalPotential) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for k in 0..self.m_cb {
            out[self.order[k]] = potential.boundary[k];
        }
        for k in 0..self.state_dim() {
            out[self.order[self.m_cb + k]] = potential.interior[k];
        }
        out
    }
}

/// Discrete boundary-flux diagnostic of a lattice-ordered solution.
#[derive(Debug, Clone, Copy)]
pub struct FluxReport {
    /// Outward flux through the outer border.
    pub outer: f64,
    /// Outward flux through the unplanned cut (into the obstacles).
    pub obstacle: f64,
    /// Sum of the two; zero for any discrete-harmonic solution.
    pub total: f64,
}

/// Sums the discrete normal flux of `values` (lattice order) across the cut
/// edges separating interior nodes from boundary-control and unplanned nodes.
pub fn net_boundary_flux(grid: &Grid, values: &[f64]) -> FluxReport {
    let mut outer = 0.0;
    let mut obstacle = 0.0;
    for idx in 0..grid.m() {
        if grid.classes[idx] != NodeClass::Interior {
            continue;
        }
        for nb in grid.neighbors(idx) {
            match grid.classes[nb] {
                NodeClass::BoundaryControl => outer += values[nb] - values[idx],
                NodeClass::Unplanned => obstacle += values[nb] - values[idx],
                NodeClass::Interior => {}
            }
        }
    }
    FluxReport {
        outer,
        obstacle,
        total: outer + obstacle,
    }
}
