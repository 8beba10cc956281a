//! Analytic stream-function boundary laws relaxing a perturbed field back
//! to its reference; prints the discrete Lyapunov functional on the way down.

use utmflow::airspace::{AirspaceGeometry, FloorDefinition, FloorSurface, UnplannedRegion};
use utmflow::boundary_control::{
    obstacle_actuation, step_stream_control, stream_vdot_estimate, StreamErrorField,
};
use utmflow::fdsolver::{build_grid, NodeClass};

fn main() -> utmflow::Result<()> {
    let geometry = AirspaceGeometry::new(
        [-50.0, -50.0],
        [50.0, 50.0],
        vec![FloorDefinition {
            index: 1,
            surface: FloorSurface::Flat { z: 100.0 },
            gamma: vec![true],
            xi: true,
        }],
        vec![UnplannedRegion::CircleFromDoublet {
            center: [0.0, 0.0],
            radius: 12.0,
        }],
    )?;
    let grid = build_grid(&geometry, 2.5, 1)?;

    // reference: zero; actual: a smooth bump over the planned nodes
    let mut psi = vec![0.0; grid.m()];
    for idx in 0..grid.m() {
        if grid.classes[idx] != NodeClass::Unplanned {
            let [x, y] = grid.coord(idx);
            psi[idx] = 2.0 * (-((x + 20.0).powi(2) + y * y) / 300.0).exp();
        }
    }
    let mut field = StreamErrorField::new(psi, vec![0.0; grid.m()], 1.0, 1.0)?;

    let dt = grid.spacing * grid.spacing / 8.0;
    for step in 0..=4000 {
        if step % 800 == 0 {
            let e_max = field.error().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            println!(
                "step {step:>4}: V = {:.6e}, Vdot <= {:+.3e}, ||E||inf = {:.3e}",
                field.lyapunov(&grid),
                stream_vdot_estimate(&field, &grid),
                e_max
            );
        }
        if step < 4000 {
            field = step_stream_control(&field, &grid, dt)?;
        }
    }
    let act = obstacle_actuation(&field, &grid);
    let peak = act.iter().fold(0.0f64, |m, (_, u)| m.max(u.abs()));
    println!("peak residual obstacle actuation: {peak:.3e}");
    Ok(())
}
