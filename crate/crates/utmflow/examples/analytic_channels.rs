//! Builds the analytic field for a sector with a circular exclusion and
//! traces a few traffic channels around it.

use utmflow::airspace::{AirspaceGeometry, FloorDefinition, FloorSurface, UnplannedRegion};
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
            radius: 10.0,
        }],
    )?;
    let field = FlowField::from_geometry(&geometry, 1, 40.0, 0.0)?;

    // the psi = 0 channel hugs the obstacle: check a few boundary angles
    for deg in [0, 45, 90, 135, 180] {
        let th = (deg as f64).to_radians();
        let p = [10.0 * th.cos(), 10.0 * th.sin()];
        println!("psi({deg:>3} deg on circle) = {:+.3e}", field.stream_at(p, 0.0)?);
    }

    for y0 in [-40.0, -15.0, 15.0, 40.0] {
        let line = field.trace_streamline([-100.0, y0], 0.0, 1.0, 800.0)?;
        let last = line.polyline.last().unwrap();
        println!(
            "channel from y = {y0:>5}: {} points, ends at ({:.1}, {:.1})",
            line.polyline.len(),
            last[0],
            last[1]
        );
    }
    Ok(())
}
