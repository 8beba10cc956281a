//! Steady finite-difference solve of the sector potential with an obstacle,
//! plus the discrete flux-balance check.

use ndarray::Array1;
use utmflow::airspace::{AirspaceGeometry, FloorDefinition, FloorSurface, UnplannedRegion};
use utmflow::fdsolver::{assemble_partitioned, build_grid, net_boundary_flux};
use utmflow::flowfield::FlowField;

fn main() -> utmflow::Result<()> {
    let geometry = AirspaceGeometry::new(
        [-100.0, -100.0],
        [100.0, 100.0],
        vec![FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 100.0 },
            gamma: vec![true],
            xi: true,
        }],
        vec![UnplannedRegion::CircleFromDoublet {
            center: [0.0, 0.0],
            radius: 20.0,
        }],
    )?;
    let field = FlowField::from_geometry(&geometry, 1, 40.0, 0.0)?;
    let grid = build_grid(&geometry, 5.0, 1)?;
    let pl = assemble_partitioned(&grid)?;
    println!(
        "grid {}x{}: {} boundary nodes, {} state nodes ({} unplanned)",
        grid.nx,
        grid.ny,
        pl.m_cb,
        pl.state_dim(),
        pl.m_u
    );

    let mut bv = Array1::zeros(pl.m_cb);
    for k in 0..pl.m_cb {
        let p = grid.coord(pl.order[k]);
        bv[k] = field.potential_at(p, 0.0)?;
    }
    let steady = pl.solve_steady(&bv)?;
    let lattice = pl.scatter(&steady);
    let flux = net_boundary_flux(&grid, &lattice);
    println!(
        "flux: outer {:+.6e}, obstacle {:+.6e}, total {:+.3e}",
        flux.outer, flux.obstacle, flux.total
    );

    let (_, rho_d) = pl.appendix_decomposition()?;
    println!("max Re(eig A_c) = {:.4}, rho(D) = {:.4}", pl.max_real_eig()?, rho_d);
    Ok(())
}
