//! Randomized invariant checks over the geometric and analytic layers.

use approx::assert_relative_eq;
use proptest::prelude::*;

use utmflow::airspace::{AirspaceGeometry, FloorDefinition, FloorSurface};
use utmflow::flowfield::{FlowElement, FlowField};
use utmflow::microscopic::{vrb_pose_from_velocity, VrbPose};

fn flat_floor() -> FloorDefinition {
    FloorDefinition {
        index: 1,
        surface: FloorSurface::Flat { z: 100.0 },
        gamma: vec![],
        xi: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The stream function is constant (zero) on the carved circle for any
    /// free-stream direction and strength.
    #[test]
    fn obstacle_circle_is_a_streamline(
        u_inf in 5.0f64..80.0,
        theta0 in -3.0f64..3.0,
        radius in 2.0f64..40.0,
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let delta = u_inf * radius * radius;
        let field = FlowField::new(
            flat_floor(),
            vec![
                FlowElement::Uniform { u_inf, theta0 },
                FlowElement::Doublet { delta, center: [0.0, 0.0], theta0 },
            ],
        ).unwrap();
        let p = [radius * angle.cos(), radius * angle.sin()];
        let psi = field.stream_at(p, 0.0).unwrap();
        prop_assert!(psi.abs() < 1e-8 * (1.0 + u_inf * radius));
    }

    /// Gradients of the conjugate pair are orthogonal with equal magnitude
    /// wherever both are defined.
    #[test]
    fn conjugate_gradients_orthogonal(
        u_inf in 5.0f64..80.0,
        delta in 10.0f64..2000.0,
        x in -80.0f64..80.0,
        y in 10.0f64..80.0,
    ) {
        let field = FlowField::new(
            flat_floor(),
            vec![
                FlowElement::Uniform { u_inf, theta0: 0.0 },
                FlowElement::Source { delta, center: [0.0, 0.0] },
            ],
        ).unwrap();
        let gp = field.grad_potential([x, y]).unwrap();
        let gs = field.grad_stream([x, y]).unwrap();
        let dot = gp[0] * gs[0] + gp[1] * gs[1];
        let np = (gp[0] * gp[0] + gp[1] * gp[1]).sqrt();
        let ns = (gs[0] * gs[0] + gs[1] * gs[1]).sqrt();
        prop_assert!(dot.abs() < 1e-9 * (1.0 + np * ns));
        assert_relative_eq!(np, ns, max_relative = 1e-12);
    }

    /// Outward normals on the outer rectangle are unit length and point
    /// away from the interior.
    #[test]
    fn outward_normals_unit_and_outward(
        t in 0.0f64..1.0,
        side in 0usize..4,
    ) {
        let geometry = AirspaceGeometry::new(
            [0.0, 0.0],
            [200.0, 100.0],
            vec![flat_floor()],
            vec![],
        ).unwrap();
        let p = match side {
            0 => [200.0 * t, 0.0],
            1 => [200.0 * t, 100.0],
            2 => [0.0, 100.0 * t],
            _ => [200.0, 100.0 * t],
        };
        let n = geometry.outward_normal(p).unwrap();
        assert_relative_eq!((n[0] * n[0] + n[1] * n[1]).sqrt(), 1.0, epsilon = 1e-12);
        let inner = [p[0] - 0.5 * n[0], p[1] - 0.5 * n[1], 0.0];
        let outer = [p[0] + 0.5 * n[0], p[1] + 0.5 * n[1], 0.0];
        prop_assert!(geometry.contains_planned(inner, 1).unwrap());
        prop_assert!(!geometry.contains_planned(outer, 1).unwrap());
    }

    /// Poses derived from any non-degenerate velocity have orthonormal
    /// rotation matrices and preserve lengths.
    #[test]
    fn derived_pose_is_orthonormal(
        vx in -20.0f64..20.0,
        vy in -20.0f64..20.0,
        vz in -5.0f64..5.0,
        px in -10.0f64..10.0,
        py in -10.0f64..10.0,
        pz in -10.0f64..10.0,
    ) {
        let speed = (vx * vx + vy * vy + vz * vz).sqrt();
        prop_assume!(speed > 1e-6);
        let pose = vrb_pose_from_velocity([0.0, 0.0, 0.0], [vx, vy, vz], None).unwrap();
        prop_assert!(pose.orthogonality_defect() < 1e-12);
        let image = rotate_by(&pose, [px, py, pz]);
        let n0 = (px * px + py * py + pz * pz).sqrt();
        let n1 = (image[0] * image[0] + image[1] * image[1] + image[2] * image[2]).sqrt();
        assert_relative_eq!(n0, n1, epsilon = 1e-9);
    }
}

// body-to-world: rows of q are the body axes in world coordinates
fn rotate_by(pose: &VrbPose, p: [f64; 3]) -> [f64; 3] {
    let q = &pose.q;
    [
        q[0][0] * p[0] + q[1][0] * p[1] + q[2][0] * p[2],
        q[0][1] * p[0] + q[1][1] * p[1] + q[2][1] * p[2],
        q[0][2] * p[0] + q[1][2] * p[1] + q[2][2] * p[2],
    ]
}
