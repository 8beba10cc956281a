//! Analytic macroscopic coordination: composed potential/stream functions of
//! ideal-flow elements, nominal velocity fields, and streamline tracing.

use std::sync::Arc;

use crate::airspace::{AirspaceGeometry, FloorDefinition, UnplannedRegion};
use crate::tolerances::{SINGULARITY_GUARD_M, STREAMLINE_LEVEL_REL};
use crate::{Error, Result};

/// Positive scalar cost field `K(r, t)` in (m/s)·s per potential unit.
pub type CostFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

/// One ideal-flow building block of a floor's field.
///
/// The doublet is the dipole form `phi = delta * ((r - r0) . n) / |r - r0|^2`,
/// which carves a circle of radius `sqrt(delta / u_inf)` out of a uniform
/// stream of speed `u_inf`.
#[derive(Debug, Clone)]
pub enum FlowElement {
    Uniform { u_inf: f64, theta0: f64 },
    Source { delta: f64, center: [f64; 2] },
    Sink { delta: f64, center: [f64; 2] },
    Doublet { delta: f64, center: [f64; 2], theta0: f64 },
}

impl FlowElement {
    pub fn strength(&self) -> f64 {
        match self {
            FlowElement::Uniform { u_inf, .. } => *u_inf,
            FlowElement::Source { delta, .. }
            | FlowElement::Sink { delta, .. }
            | FlowElement::Doublet { delta, .. } => *delta,
        }
    }

    pub fn center(&self) -> Option<[f64; 2]> {
        match self {
            FlowElement::Uniform { .. } => None,
            FlowElement::Source { center, .. }
            | FlowElement::Sink { center, .. }
            | FlowElement::Doublet { center, .. } => Some(*center),
        }
    }

    fn potential(&self, p: [f64; 2]) -> f64 {
        match self {
            FlowElement::Uniform { u_inf, theta0 } => {
                u_inf * (p[0] * theta0.cos() + p[1] * theta0.sin())
            }
            FlowElement::Source { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                delta * (x * x + y * y).sqrt().ln()
            }
            FlowElement::Sink { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                -delta * (x * x + y * y).sqrt().ln()
            }
            FlowElement::Doublet { delta, center, theta0 } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let rho2 = x * x + y * y;
                delta * (x * theta0.cos() + y * theta0.sin()) / rho2
            }
        }
    }

    fn stream(&self, p: [f64; 2]) -> f64 {
        match self {
            FlowElement::Uniform { u_inf, theta0 } => {
                u_inf * (p[1] * theta0.cos() - p[0] * theta0.sin())
            }
            FlowElement::Source { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                delta * y.atan2(x)
            }
            FlowElement::Sink { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                -delta * y.atan2(x)
            }
            FlowElement::Doublet { delta, center, theta0 } => {
                // harmonic conjugate of the dipole potential
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let rho2 = x * x + y * y;
                delta * (x * theta0.sin() - y * theta0.cos()) / rho2
            }
        }
    }

    fn grad_potential(&self, p: [f64; 2]) -> [f64; 2] {
        match self {
            FlowElement::Uniform { u_inf, theta0 } => {
                [u_inf * theta0.cos(), u_inf * theta0.sin()]
            }
            FlowElement::Source { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let rho2 = x * x + y * y;
                [delta * x / rho2, delta * y / rho2]
            }
            FlowElement::Sink { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let rho2 = x * x + y * y;
                [-delta * x / rho2, -delta * y / rho2]
            }
            FlowElement::Doublet { delta, center, theta0 } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let (c, s) = (theta0.cos(), theta0.sin());
                let rho2 = x * x + y * y;
                let axial = c * x + s * y;
                [
                    delta * (c * rho2 - 2.0 * x * axial) / (rho2 * rho2),
                    delta * (s * rho2 - 2.0 * y * axial) / (rho2 * rho2),
                ]
            }
        }
    }

    fn grad_stream(&self, p: [f64; 2]) -> [f64; 2] {
        match self {
            FlowElement::Uniform { u_inf, theta0 } => {
                [-u_inf * theta0.sin(), u_inf * theta0.cos()]
            }
            FlowElement::Source { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let rho2 = x * x + y * y;
                [-delta * y / rho2, delta * x / rho2]
            }
            FlowElement::Sink { delta, center } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let rho2 = x * x + y * y;
                [delta * y / rho2, -delta * x / rho2]
            }
            FlowElement::Doublet { delta, center, theta0 } => {
                let (x, y) = (p[0] - center[0], p[1] - center[1]);
                let (c, s) = (theta0.cos(), theta0.sin());
                let rho2 = x * x + y * y;
                let trans = s * x - c * y;
                [
                    delta * (s * rho2 - 2.0 * x * trans) / (rho2 * rho2),
                    delta * (-c * rho2 - 2.0 * y * trans) / (rho2 * rho2),
                ]
            }
        }
    }
}

/// Radius of the circle excluded by a uniform+doublet composition.
pub fn obstacle_radius(u_inf: f64, delta: f64) -> Result<f64> {
    if u_inf <= 0.0 || delta <= 0.0 {
        return Err(Error::Domain(format!(
            "obstacle_radius requires positive arguments, got u_inf = {u_inf}, delta = {delta}"
        )));
    }
    Ok((delta / u_inf).sqrt())
}

/// Appends the floor height: `(x, y) -> (x, y, z_f(x, y))`.
pub fn lift_to_floor(floor: &FloorDefinition, point2d: [f64; 2]) -> [f64; 3] {
    [
        point2d[0],
        point2d[1],
        floor.surface.height(point2d[0], point2d[1]),
    ]
}

/// A traced level curve of the stream function.
#[derive(Debug, Clone)]
pub struct Streamline {
    pub level: f64,
    pub polyline: Vec<[f64; 2]>,
    pub floor_index: usize,
}

/// Composed per-floor flow field. Immutable; evaluations are pure.
#[derive(Clone)]
pub struct FlowField {
    pub floor: FloorDefinition,
    pub elements: Vec<FlowElement>,
    cost: CostFn,
    /// Regions declared on this floor, for membership checks and the
    /// obstacle-boundary stream diagnostic. May be empty for raw fields.
    pub regions: Vec<UnplannedRegion>,
    /// Outer rectangle when known; streamline tracing stops on exit.
    pub outer: Option<([f64; 2], [f64; 2])>,
}

impl FlowField {
    /// Builds a field from explicit elements with unit cost.
    pub fn new(floor: FloorDefinition, elements: Vec<FlowElement>) -> Result<Self> {
        let field = FlowField {
            floor,
            elements,
            cost: Arc::new(|_, _| 1.0),
            regions: Vec::new(),
            outer: None,
        };
        field.validate()?;
        Ok(field)
    }

    /// Composes the field for one floor of `geometry`: one uniform element
    /// plus, when the floor's xi flag is set, a doublet (gamma true) or a
    /// separated sink/source pair (gamma false) per unplanned region.
    ///
    /// Circle regions derive their doublet strength from the radius formula;
    /// rectangle regions contribute no elements (they are grid-only).
    pub fn from_geometry(
        geometry: &AirspaceGeometry,
        floor_index: usize,
        u_inf: f64,
        theta0: f64,
    ) -> Result<Self> {
        let floor = geometry.floor(floor_index)?.clone();
        let mut elements = vec![FlowElement::Uniform { u_inf, theta0 }];
        let mut regions = Vec::new();
        if floor.xi {
            for (i, region) in geometry.unplanned.iter().enumerate() {
                regions.push(region.clone());
                let gamma = floor.gamma[i];
                match region {
                    UnplannedRegion::CircleFromDoublet { center, radius } => {
                        if gamma {
                            elements.push(FlowElement::Doublet {
                                delta: u_inf * radius * radius,
                                center: *center,
                                theta0,
                            });
                        }
                    }
                    UnplannedRegion::SourceSinkOval {
                        center,
                        delta,
                        separation,
                        ..
                    } => {
                        if !gamma {
                            let (c, s) = (theta0.cos(), theta0.sin());
                            let off = separation / 2.0;
                            elements.push(FlowElement::Source {
                                delta: *delta,
                                center: [center[0] - off * c, center[1] - off * s],
                            });
                            elements.push(FlowElement::Sink {
                                delta: *delta,
                                center: [center[0] + off * c, center[1] + off * s],
                            });
                        }
                    }
                    UnplannedRegion::Rectangle { .. } => {}
                }
            }
        }
        let field = FlowField {
            floor,
            elements,
            cost: Arc::new(|_, _| 1.0),
            regions,
            outer: Some((geometry.outer_min, geometry.outer_max)),
        };
        field.validate()?;
        Ok(field)
    }

    pub fn with_cost(mut self, cost: CostFn) -> Self {
        self.cost = cost;
        self
    }

    fn validate(&self) -> Result<()> {
        let n_uniform = self
            .elements
            .iter()
            .filter(|e| matches!(e, FlowElement::Uniform { .. }))
            .count();
        if n_uniform != 1 {
            return Err(Error::Validation(format!(
                "exactly one Uniform element required per floor, found {n_uniform}"
            )));
        }
        for e in &self.elements {
            if e.strength() <= 0.0 {
                return Err(Error::Validation(
                    "flow element strengths must be strictly positive".into(),
                ));
            }
        }
        Ok(())
    }

    fn uniform(&self) -> &FlowElement {
        self.elements
            .iter()
            .find(|e| matches!(e, FlowElement::Uniform { .. }))
            .expect("validated: one uniform element")
    }

    pub fn u_inf(&self) -> f64 {
        self.uniform().strength()
    }

    fn guard_singularity(&self, point: [f64; 2]) -> Result<()> {
        for e in &self.elements {
            if let Some(c) = e.center() {
                let d = ((point[0] - c[0]).powi(2) + (point[1] - c[1]).powi(2)).sqrt();
                if d <= SINGULARITY_GUARD_M {
                    return Err(Error::Singularity {
                        x: c[0],
                        y: c[1],
                        guard: SINGULARITY_GUARD_M,
                    });
                }
            }
        }
        Ok(())
    }

    /// True iff `point` lies strictly inside the unplanned set carved out by
    /// this field (declared regions plus every doublet circle).
    pub fn in_unplanned(&self, point: [f64; 2]) -> bool {
        if self
            .regions
            .iter()
            .any(|r| r.contains_interior(point[0], point[1]))
        {
            return true;
        }
        let u = self.u_inf();
        self.elements.iter().any(|e| {
            if let FlowElement::Doublet { delta, center, .. } = e {
                let dx = point[0] - center[0];
                let dy = point[1] - center[1];
                dx * dx + dy * dy < (delta / u) * (1.0 - 1e-12)
            } else {
                false
            }
        })
    }

    pub fn potential_at(&self, point: [f64; 2], _time: f64) -> Result<f64> {
        self.guard_singularity(point)?;
        Ok(self.elements.iter().map(|e| e.potential(point)).sum())
    }

    pub fn stream_at(&self, point: [f64; 2], _time: f64) -> Result<f64> {
        self.guard_singularity(point)?;
        Ok(self.elements.iter().map(|e| e.stream(point)).sum())
    }

    /// Analytic gradient of the composed potential.
    pub fn grad_potential(&self, point: [f64; 2]) -> Result<[f64; 2]> {
        self.guard_singularity(point)?;
        let mut g = [0.0, 0.0];
        for e in &self.elements {
            let ge = e.grad_potential(point);
            g[0] += ge[0];
            g[1] += ge[1];
        }
        Ok(g)
    }

    /// Analytic gradient of the composed stream function.
    pub fn grad_stream(&self, point: [f64; 2]) -> Result<[f64; 2]> {
        self.guard_singularity(point)?;
        let mut g = [0.0, 0.0];
        for e in &self.elements {
            let ge = e.grad_stream(point);
            g[0] += ge[0];
            g[1] += ge[1];
        }
        Ok(g)
    }

    /// Nominal velocity `V = grad(phi) / K`.
    pub fn velocity_at(&self, point: [f64; 2], time: f64) -> Result<[f64; 2]> {
        if self.in_unplanned(point) {
            return Err(Error::Domain(format!(
                "point ({}, {}) lies inside the unplanned set",
                point[0], point[1]
            )));
        }
        let k = (self.cost)(point, time);
        if k <= 0.0 {
            return Err(Error::Domain(format!(
                "cost K must be positive, got {k} at ({}, {})",
                point[0], point[1]
            )));
        }
        let g = self.grad_potential(point)?;
        Ok([g[0] / k, g[1] / k])
    }

    /// Traces the stream-function level curve through `seed` along the flow
    /// direction with fixed-step 4th-order integration; each step is
    /// followed by one Newton projection back onto the level set.
    pub fn trace_streamline(
        &self,
        seed: [f64; 2],
        time: f64,
        arc_step: f64,
        max_arc: f64,
    ) -> Result<Streamline> {
        if arc_step <= 0.0 {
            return Err(Error::Domain("arc_step must be positive".into()));
        }
        if self.in_unplanned(seed) {
            return Err(Error::Domain("streamline seed lies in the unplanned set".into()));
        }
        let level = self.stream_at(seed, time)?;
        let mut polyline = vec![seed];
        let mut p = seed;
        let dir = |q: [f64; 2]| -> Option<[f64; 2]> {
            let g = self.grad_potential(q).ok()?;
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if n < 1e-12 {
                None
            } else {
                Some([g[0] / n, g[1] / n])
            }
        };
        let n_steps = (max_arc / arc_step).ceil() as usize;
        for _ in 0..n_steps {
            // RK4 on dp/ds = V / |V|
            let k1 = match dir(p) {
                Some(d) => d,
                None => break,
            };
            let k2 = match dir([p[0] + 0.5 * arc_step * k1[0], p[1] + 0.5 * arc_step * k1[1]]) {
                Some(d) => d,
                None => break,
            };
            let k3 = match dir([p[0] + 0.5 * arc_step * k2[0], p[1] + 0.5 * arc_step * k2[1]]) {
                Some(d) => d,
                None => break,
            };
            let k4 = match dir([p[0] + arc_step * k3[0], p[1] + arc_step * k3[1]]) {
                Some(d) => d,
                None => break,
            };
            let mut q = [
                p[0] + arc_step / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                p[1] + arc_step / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ];
            // one Newton step back onto the level set
            if let Ok(g) = self.grad_stream(q) {
                let g2 = g[0] * g[0] + g[1] * g[1];
                if g2 > 1e-12 {
                    let e = self.stream_at(q, time)? - level;
                    q[0] -= e * g[0] / g2;
                    q[1] -= e * g[1] / g2;
                }
            }
            // stop conditions: singularity proximity, unplanned entry, exit of the rectangle
            let near_singularity = self.elements.iter().any(|e| {
                e.center().is_some_and(|c| {
                    ((q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2)).sqrt() < 1e-6
                })
            });
            if near_singularity || self.in_unplanned(q) {
                break;
            }
            if let Some((lo, hi)) = self.outer {
                if q[0] < lo[0] || q[0] > hi[0] || q[1] < lo[1] || q[1] > hi[1] {
                    break;
                }
            }
            let drift = (self.stream_at(q, time)? - level).abs();
            debug_assert!(drift <= STREAMLINE_LEVEL_REL * level.abs().max(1.0) * 10.0);
            polyline.push(q);
            p = q;
        }
        Ok(Streamline {
            level,
            polyline,
            floor_index: self.floor.index,
        })
    }
}
