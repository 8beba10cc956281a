//! Pop-up reclassification recovered by LQR boundary control: solves the
//! Riccati equation for the new partition and simulates the closed loop.

use ndarray::Array1;
use utmflow::airspace::{AirspaceGeometry, FloorDefinition, FloorSurface, UnplannedRegion};
use utmflow::boundary_control::{simulate_lqr_recovery, solve_riccati, LqrProblem};
use utmflow::fdsolver::{assemble_partitioned, build_grid};

fn geometry(popup: bool) -> utmflow::Result<AirspaceGeometry> {
    let regions = if popup {
        vec![UnplannedRegion::Rectangle {
            center: [0.0, 0.0],
            half_extents: [12.0, 12.0],
        }]
    } else {
        vec![]
    };
    AirspaceGeometry::new(
        [-50.0, -50.0],
        [50.0, 50.0],
        vec![FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 100.0 },
            gamma: vec![false; regions.len()],
            xi: popup,
        }],
        regions,
    )
}

fn main() -> utmflow::Result<()> {
    let old_grid = build_grid(&geometry(false)?, 5.0, 1)?;
    let new_grid = build_grid(&geometry(true)?, 5.0, 1)?;
    let pl_old = assemble_partitioned(&old_grid)?;
    let pl_new = assemble_partitioned(&new_grid)?;

    let problem = LqrProblem::from_laplacian(&pl_new)?;
    let sol = solve_riccati(&problem)?;
    println!(
        "Riccati: {} iterations, residual {:.3e}",
        sol.iterations, sol.residual
    );

    // Dirichlet data: a tilted plane
    let mut bv = Array1::zeros(pl_old.m_cb);
    for k in 0..pl_old.m_cb {
        let [x, y] = old_grid.coord(pl_old.order[k]);
        bv[k] = x + 0.3 * y;
    }
    let trace = simulate_lqr_recovery(&pl_old, &pl_new, &bv, &sol, 0.05, 40.0, &[])?;
    let initial = trace.error_norms[0];
    for (t, n) in trace.times.iter().zip(&trace.error_norms).step_by(100) {
        println!("t = {t:5.1}  ||E|| = {:.4e}  ({:.2}% of initial)", n, 100.0 * n / initial);
    }
    Ok(())
}
