//! Central registry of numeric tolerances.
//!
//! Every threshold used by the library and its verification suite is named
//! here so that runs can report exactly which tolerances were in force.

/// Boundary membership tolerance in meters.
pub const BOUNDARY_MEMBERSHIP_M: f64 = 1e-9;

/// Unit-norm tolerance for boundary normals.
pub const NORMAL_UNIT_NORM: f64 = 1e-12;

/// Guard radius around flow element centers, meters.
pub const SINGULARITY_GUARD_M: f64 = 1e-9;

/// Relative level drift allowed on a traced streamline vertex.
pub const STREAMLINE_LEVEL_REL: f64 = 1e-6;

/// Relative residual bound for the steady nodal solve.
pub const STEADY_RESIDUAL_REL: f64 = 1e-10;

/// Relative residual bound for an algebraic Riccati solution.
pub const RICCATI_RESIDUAL_REL: f64 = 1e-8;

/// Symmetry defect allowed in a Riccati solution, relative.
pub const RICCATI_SYMMETRY_REL: f64 = 1e-12;

/// Spread allowed for the stream function along an obstacle boundary,
/// relative to 1 + |mean|.
pub const OBSTACLE_STREAM_SPREAD: f64 = 1e-8;

/// Relative tolerance on the zero-net-flux diagnostic.
pub const NET_FLUX_REL: f64 = 1e-8;

/// Absolute slack for monotone-decay checks of quadratic Lyapunov values.
pub const LYAPUNOV_DECAY_SLACK: f64 = 1e-10;

/// Returns every named tolerance as `(name, value)` pairs for run manifests.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("boundary_membership_m", BOUNDARY_MEMBERSHIP_M),
        ("normal_unit_norm", NORMAL_UNIT_NORM),
        ("singularity_guard_m", SINGULARITY_GUARD_M),
        ("streamline_level_rel", STREAMLINE_LEVEL_REL),
        ("steady_residual_rel", STEADY_RESIDUAL_REL),
        ("riccati_residual_rel", RICCATI_RESIDUAL_REL),
        ("riccati_symmetry_rel", RICCATI_SYMMETRY_REL),
        ("obstacle_stream_spread", OBSTACLE_STREAM_SPREAD),
        ("net_flux_rel", NET_FLUX_REL),
        ("lyapunov_decay_slack", LYAPUNOV_DECAY_SLACK),
    ]
}
