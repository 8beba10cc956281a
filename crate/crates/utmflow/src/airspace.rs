//! Finite airspace sector: outer rectangle, floor surfaces, and the
//! planned/unplanned partition with membership and boundary-normal queries.

use serde::{Deserialize, Serialize};

use crate::tolerances::{BOUNDARY_MEMBERSHIP_M, NORMAL_UNIT_NORM};
use crate::{Error, Result};

/// Height surface of a floor, evaluable anywhere inside the outer rectangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FloorSurface {
    /// Constant altitude `z`.
    Flat { z: f64 },
    /// `z = z0 - curvature * ((x - peak_x)^2 + (y - peak_y)^2)`.
    Paraboloid { peak: [f64; 2], z0: f64, curvature: f64 },
}

impl FloorSurface {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            FloorSurface::Flat { z } => *z,
            FloorSurface::Paraboloid { peak, z0, curvature } => {
                let dx = x - peak[0];
                let dy = y - peak[1];
                z0 - curvature * (dx * dx + dy * dy)
            }
        }
    }
}

/// One motion surface of the airspace with its exclusion flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorDefinition {
    /// 1-based floor index.
    pub index: usize,
    pub surface: FloorSurface,
    /// Per-region exclusion style: `true` selects the doublet composition,
    /// `false` the sink/source pair. Ignored when `xi` is false.
    pub gamma: Vec<bool>,
    /// Whether this floor carries any unplanned space at all.
    pub xi: bool,
}

/// An excluded (no-fly) region of the sector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UnplannedRegion {
    /// Circle carved by a uniform+doublet composition.
    CircleFromDoublet { center: [f64; 2], radius: f64 },
    /// Axis-aligned rectangle (pop-up regions take this shape).
    Rectangle { center: [f64; 2], half_extents: [f64; 2] },
    /// Oval carved by a source/sink pair of strength `delta`, with the pair
    /// split `separation` meters apart along the flow direction. The
    /// half-extents bound the oval for membership queries.
    SourceSinkOval {
        center: [f64; 2],
        delta: f64,
        separation: f64,
        half_extents: [f64; 2],
    },
}

impl UnplannedRegion {
    pub fn characteristic_point(&self) -> [f64; 2] {
        match self {
            UnplannedRegion::CircleFromDoublet { center, .. }
            | UnplannedRegion::Rectangle { center, .. }
            | UnplannedRegion::SourceSinkOval { center, .. } => *center,
        }
    }

    /// True iff `(x, y)` lies strictly inside the region.
    pub fn contains_interior(&self, x: f64, y: f64) -> bool {
        match self {
            UnplannedRegion::CircleFromDoublet { center, radius } => {
                let dx = x - center[0];
                let dy = y - center[1];
                dx * dx + dy * dy < radius * radius * (1.0 - 1e-12)
            }
            UnplannedRegion::Rectangle { center, half_extents } => {
                (x - center[0]).abs() < half_extents[0] && (y - center[1]).abs() < half_extents[1]
            }
            UnplannedRegion::SourceSinkOval { center, half_extents, .. } => {
                let dx = (x - center[0]) / half_extents[0];
                let dy = (y - center[1]) / half_extents[1];
                dx * dx + dy * dy < 1.0 - 1e-12
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            UnplannedRegion::CircleFromDoublet { radius, .. } => *radius > 0.0,
            UnplannedRegion::Rectangle { half_extents, .. } => {
                half_extents[0] > 0.0 && half_extents[1] > 0.0
            }
            UnplannedRegion::SourceSinkOval {
                delta,
                separation,
                half_extents,
                ..
            } => *delta > 0.0 && *separation > 0.0 && half_extents[0] > 0.0 && half_extents[1] > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(
                "unplanned region parameters must be strictly positive".into(),
            ))
        }
    }
}

/// The finite sector: outer rectangle, floors, and unplanned regions.
///
/// Immutable after construction; all queries are `&self`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirspaceGeometry {
    pub outer_min: [f64; 2],
    pub outer_max: [f64; 2],
    pub floors: Vec<FloorDefinition>,
    #[serde(default)]
    pub unplanned: Vec<UnplannedRegion>,
}

impl AirspaceGeometry {
    pub fn new(
        outer_min: [f64; 2],
        outer_max: [f64; 2],
        floors: Vec<FloorDefinition>,
        unplanned: Vec<UnplannedRegion>,
    ) -> Result<Self> {
        let g = AirspaceGeometry {
            outer_min,
            outer_max,
            floors,
            unplanned,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_min[0] >= self.outer_max[0] || self.outer_min[1] >= self.outer_max[1] {
            return Err(Error::Validation(
                "outer_min must be component-wise below outer_max".into(),
            ));
        }
        for (i, region) in self.unplanned.iter().enumerate() {
            region.validate()?;
            let [x, y] = region.characteristic_point();
            if x <= self.outer_min[0]
                || x >= self.outer_max[0]
                || y <= self.outer_min[1]
                || y >= self.outer_max[1]
            {
                return Err(Error::Validation(format!(
                    "characteristic point of unplanned region {i} lies outside the outer rectangle"
                )));
            }
        }
        for floor in &self.floors {
            if floor.xi && floor.gamma.len() != self.unplanned.len() {
                return Err(Error::Validation(format!(
                    "floor {}: gamma flags must match the number of unplanned regions",
                    floor.index
                )));
            }
        }
        Ok(())
    }

    pub fn floor(&self, floor: usize) -> Result<&FloorDefinition> {
        self.floors
            .iter()
            .find(|f| f.index == floor)
            .ok_or_else(|| Error::Domain(format!("invalid floor index {floor}")))
    }

    /// Regions active on `floor`: all of them when the floor's xi flag is
    /// set, none otherwise.
    pub fn active_regions(&self, floor: usize) -> Result<&[UnplannedRegion]> {
        let f = self.floor(floor)?;
        if f.xi {
            Ok(&self.unplanned)
        } else {
            Ok(&[])
        }
    }

    /// True iff the (x, y) projection of `point` lies in the closed outer
    /// rectangle and outside every unplanned region active on `floor`.
    pub fn contains_planned(&self, point: [f64; 3], floor: usize) -> Result<bool> {
        let regions = self.active_regions(floor)?;
        let (x, y) = (point[0], point[1]);
        let inside_rect = x >= self.outer_min[0]
            && x <= self.outer_max[0]
            && y >= self.outer_min[1]
            && y <= self.outer_max[1];
        if !inside_rect {
            return Ok(false);
        }
        Ok(!regions.iter().any(|r| r.contains_interior(x, y)))
    }

    /// Outward unit normal at a point on the outer rectangle or on an
    /// unplanned region boundary (tolerance [`BOUNDARY_MEMBERSHIP_M`]).
    ///
    /// Rectangle corners average the two face normals and renormalize.
    pub fn outward_normal(&self, point: [f64; 2]) -> Result<[f64; 2]> {
        let [x, y] = point;
        let tol = BOUNDARY_MEMBERSHIP_M;

        // outer rectangle faces (outward = away from the interior)
        let mut n = [0.0f64, 0.0f64];
        let mut on_outer = false;
        if (x - self.outer_min[0]).abs() <= tol {
            n[0] -= 1.0;
            on_outer = true;
        }
        if (x - self.outer_max[0]).abs() <= tol {
            n[0] += 1.0;
            on_outer = true;
        }
        if (y - self.outer_min[1]).abs() <= tol {
            n[1] -= 1.0;
            on_outer = true;
        }
        if (y - self.outer_max[1]).abs() <= tol {
            n[1] += 1.0;
            on_outer = true;
        }
        if on_outer {
            return Ok(normalize(n));
        }

        for region in &self.unplanned {
            if let Some(n) = region_normal(region, point, tol) {
                return Ok(n);
            }
        }
        Err(Error::NotOnBoundary(x, y))
    }

    /// Unit tangent at a boundary point: the outward normal rotated +90 deg.
    pub fn boundary_tangent(&self, point: [f64; 2]) -> Result<[f64; 2]> {
        let n = self.outward_normal(point)?;
        Ok([-n[1], n[0]])
    }
}

fn region_normal(region: &UnplannedRegion, point: [f64; 2], tol: f64) -> Option<[f64; 2]> {
    let [x, y] = point;
    match region {
        UnplannedRegion::CircleFromDoublet { center, radius } => {
            let dx = x - center[0];
            let dy = y - center[1];
            let d = (dx * dx + dy * dy).sqrt();
            if (d - radius).abs() <= tol {
                Some(normalize([dx, dy]))
            } else {
                None
            }
        }
        UnplannedRegion::Rectangle { center, half_extents } => {
            let dx = x - center[0];
            let dy = y - center[1];
            let on_x_face = (dx.abs() - half_extents[0]).abs() <= tol && dy.abs() <= half_extents[1] + tol;
            let on_y_face = (dy.abs() - half_extents[1]).abs() <= tol && dx.abs() <= half_extents[0] + tol;
            if !on_x_face && !on_y_face {
                return None;
            }
            let mut n = [0.0, 0.0];
            if on_x_face {
                n[0] = dx.signum();
            }
            if on_y_face {
                n[1] = dy.signum();
            }
            Some(normalize(n))
        }
        UnplannedRegion::SourceSinkOval { center, half_extents, .. } => {
            let dx = (x - center[0]) / half_extents[0];
            let dy = (y - center[1]) / half_extents[1];
            let v = dx * dx + dy * dy;
            // implicit-surface tolerance scaled to the semi-axes
            let scale = half_extents[0].min(half_extents[1]);
            if (v.sqrt() - 1.0).abs() * scale <= tol {
                // gradient of the implicit function
                Some(normalize([
                    2.0 * dx / half_extents[0],
                    2.0 * dy / half_extents[1],
                ]))
            } else {
                None
            }
        }
    }
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    debug_assert!(n > 0.0);
    let out = [v[0] / n, v[1] / n];
    debug_assert!(((out[0] * out[0] + out[1] * out[1]).sqrt() - 1.0).abs() < NORMAL_UNIT_NORM);
    out
}
