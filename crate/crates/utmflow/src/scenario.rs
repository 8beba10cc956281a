//! Orchestration: scenario configuration, macroscopic reference integration,
//! speed-class assignment, pop-up event scheduling, and per-cluster
//! microscopic stepping, with deterministic column-text export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::airspace::{AirspaceGeometry, UnplannedRegion};
use crate::boundary_control::{
    simulate_lqr_recovery, solve_riccati, step_stream_control, stream_vdot_estimate,
    LqrProblem, LqrSolution, RecoveryTrace, StreamErrorField,
};
use crate::fdsolver::{
    assemble_partitioned, build_grid, net_boundary_flux, FluxReport, Grid, NodeClass,
    PartitionedLaplacian,
};
use crate::flowfield::FlowField;
use crate::microscopic::{
    global_desired_positions, step_agents, ten_agent_example,
    ten_agent_material_positions, vrb_pose_from_velocity, Cluster, ClusterState,
    VrbPose, VrbPoseRate,
};
use crate::tolerances::{BOUNDARY_MEMBERSHIP_M, NET_FLUX_REL};
use crate::{Error, Result};

fn default_beta() -> f64 {
    4.0
}

fn default_admission() -> f64 {
    0.05
}

fn default_scale() -> f64 {
    1.0
}

/// Complete scenario description, read from strict TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub geometry: AirspaceGeometry,
    pub flow: FlowSpec,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub speed_classes: Vec<SpeedClass>,
    #[serde(default)]
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub sim: SimSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    /// Floor index the scenario runs on.
    pub floor: usize,
    pub u_inf: f64,
    #[serde(default)]
    pub theta0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub spacing: f64,
    /// Dirichlet data on the outer ring.
    #[serde(default)]
    pub boundary: BoundaryData,
}

/// Where the outer-ring nodal values come from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryData {
    /// Analytic stream function of the floor's flow field.
    #[default]
    Stream,
    /// Analytic potential of the floor's flow field.
    Potential,
    /// A fixed value everywhere on the ring.
    Constant { value: f64 },
}

/// Nominal-speed class owning a stream-function band.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedClass {
    /// Nominal speed, m/s.
    pub speed: f64,
    /// Assigned stream band `[psi_lo, psi_hi]`, m^2/s.
    pub band: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub id: usize,
    #[serde(default)]
    pub entry_time: f64,
    /// Entry point on the outer boundary, meters.
    pub entry_point: [f64; 2],
    /// Nominal speed, m/s.
    pub speed: f64,
    pub graph: GraphSpec,
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    /// One leader, no followers.
    Single,
    /// The ten-agent worked example with published weights.
    TenAgent {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Explicit leader/follower graph.
    Custom {
        dimension: usize,
        material_positions: Vec<[f64; 3]>,
        followers: Vec<FollowerSpec>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerSpec {
    pub agent: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    /// Pop-up time, s.
    pub time: f64,
    pub region: UnplannedRegion,
    /// Recovery integration step; defaults to the scenario dt.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Recovery horizon; defaults to the remaining scenario horizon.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// State-weight scale: We = we_scale * I.
    #[serde(default = "default_scale")]
    pub we_scale: f64,
    /// Control-weight scale: Wu = wu_scale * I. Smaller means more
    /// aggressive boundary actuation and faster settling.
    #[serde(default = "default_scale")]
    pub wu_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    /// Global integration step, s.
    pub dt: f64,
    /// Scenario horizon, s.
    pub horizon: f64,
    /// Fraction of the initial recovery error below which paused cluster
    /// entries resume.
    #[serde(default = "default_admission")]
    pub admission_threshold: f64,
    /// Times at which nodal field snapshots are recorded.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text)
            .map_err(|e| Error::Config(format!("scenario parse error: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.geometry.floor(self.flow.floor)?;
        if self.flow.u_inf <= 0.0 {
            return Err(Error::Validation("u_inf must be strictly positive".into()));
        }
        if self.sim.dt <= 0.0 || self.sim.horizon <= 0.0 {
            return Err(Error::Validation("dt and horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sim.admission_threshold) {
            return Err(Error::Validation(
                "admission_threshold must lie in [0, 1)".into(),
            ));
        }
        for t in &self.sim.snapshot_times {
            if *t < 0.0 || *t > self.sim.horizon {
                return Err(Error::Validation(format!(
                    "snapshot time {t} outside the horizon"
                )));
            }
        }
        for ev in &self.events {
            if ev.time < 0.0 || ev.time > self.sim.horizon {
                return Err(Error::Validation(format!(
                    "event time {} outside the horizon",
                    ev.time
                )));
            }
            if ev.we_scale < 0.0 || ev.wu_scale <= 0.0 {
                return Err(Error::Validation(
                    "we_scale must be >= 0 and wu_scale > 0".into(),
                ));
            }
            // the pop-up appends a gamma flag, so affected floors must
            // already carry unplanned bookkeeping when regions exist
            if !self.geometry.unplanned.is_empty() {
                let floor = self.geometry.floor(self.flow.floor)?;
                if !floor.xi {
                    return Err(Error::Validation(
                        "pop-up events need the floor's xi flag set when regions exist"
                            .into(),
                    ));
                }
            }
        }
        // disjoint speed-class bands
        let mut bands: Vec<[f64; 2]> = self.speed_classes.iter().map(|c| c.band).collect();
        bands.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for w in bands.windows(2) {
            if w[1][0] < w[0][1] {
                return Err(Error::Validation(format!(
                    "speed-class bands [{}, {}] and [{}, {}] overlap",
                    w[0][0], w[0][1], w[1][0], w[1][1]
                )));
            }
        }
        for c in &self.clusters {
            self.check_entry_point(c)?;
            if c.entry_time < 0.0 || c.entry_time > self.sim.horizon {
                return Err(Error::Validation(format!(
                    "cluster {}: entry time outside the horizon",
                    c.id
                )));
            }
            if !self.speed_classes.is_empty() {
                let hits = self
                    .speed_classes
                    .iter()
                    .filter(|cl| (cl.speed - c.speed).abs() < 1e-9)
                    .count();
                if hits != 1 {
                    return Err(Error::Config(format!(
                        "cluster {}: speed {} matches {hits} classes, expected 1",
                        c.id, c.speed
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_entry_point(&self, c: &ClusterSpec) -> Result<()> {
        let [x, y] = c.entry_point;
        let [x0, y0] = self.geometry.outer_min;
        let [x1, y1] = self.geometry.outer_max;
        let inside = x >= x0 - BOUNDARY_MEMBERSHIP_M
            && x <= x1 + BOUNDARY_MEMBERSHIP_M
            && y >= y0 - BOUNDARY_MEMBERSHIP_M
            && y <= y1 + BOUNDARY_MEMBERSHIP_M;
        let on_edge = (x - x0).abs() <= BOUNDARY_MEMBERSHIP_M
            || (x - x1).abs() <= BOUNDARY_MEMBERSHIP_M
            || (y - y0).abs() <= BOUNDARY_MEMBERSHIP_M
            || (y - y1).abs() <= BOUNDARY_MEMBERSHIP_M;
        if !inside || !on_edge {
            return Err(Error::Validation(format!(
                "cluster {}: entry point ({x}, {y}) is not on the outer boundary",
                c.id
            )));
        }
        let floor = self.geometry.floor(self.flow.floor)?;
        for region in self.geometry.active_regions(floor.index)? {
            if region.contains_interior(x, y) {
                return Err(Error::Config(format!(
                    "cluster {}: entry point lies in the unplanned set",
                    c.id
                )));
            }
        }
        Ok(())
    }

    /// Builds the runtime cluster from a cluster spec.
    pub fn build_cluster(&self, c: &ClusterSpec) -> Result<Cluster> {
        match &c.graph {
            GraphSpec::Single => Cluster::new(
                c.id,
                0,
                vec![vec![]],
                vec![[0.0; 3]],
                c.beta1,
                c.beta2,
            ),
            GraphSpec::TenAgent { scale } => {
                let mut cluster = ten_agent_example(
                    ten_agent_material_positions(*scale),
                    c.beta1,
                    c.beta2,
                )?;
                cluster.id = c.id;
                Ok(cluster)
            }
            GraphSpec::Custom {
                dimension,
                material_positions,
                followers,
            } => {
                let n = material_positions.len();
                let mut neighbors = vec![Vec::new(); n];
                for f in followers {
                    if f.agent >= n || f.neighbors.len() != f.weights.len() {
                        return Err(Error::Config(format!(
                            "cluster {}: malformed follower entry for agent {}",
                            c.id, f.agent
                        )));
                    }
                    neighbors[f.agent] = f
                        .neighbors
                        .iter()
                        .zip(&f.weights)
                        .map(|(&h, &w)| (h, w))
                        .collect();
                }
                Cluster::new(
                    c.id,
                    *dimension,
                    neighbors,
                    material_positions.clone(),
                    c.beta1,
                    c.beta2,
                )
            }
        }
    }
}

/// Macroscopic reference trajectory of one cluster.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub t0: f64,
    /// Sample times, including t0.
    pub times: Vec<f64>,
    /// Sampled positions lifted onto the floor surface.
    pub points: Vec<[f64; 3]>,
    /// Planar velocities at the samples, m/s.
    pub velocities: Vec<[f64; 2]>,
    /// Exit time and point when the trajectory leaves the sector.
    pub exit: Option<(f64, [f64; 3])>,
}

/// Integrates the reference `r' = V(r)` from an entry point on the outer
/// boundary until exit or the horizon, with fixed-step RK4. Deterministic:
/// identical inputs give bit-identical output.
pub fn integrate_reference(
    field: &FlowField,
    entry: [f64; 2],
    t0: f64,
    dt: f64,
    horizon: f64,
) -> Result<ReferenceTrajectory> {
    if dt <= 0.0 {
        return Err(Error::Config("reference dt must be positive".into()));
    }
    if field.in_unplanned(entry) {
        return Err(Error::Config(format!(
            "entry point ({}, {}) lies in the unplanned set",
            entry[0], entry[1]
        )));
    }
    let (outer_min, outer_max) = field
        .outer
        .ok_or_else(|| Error::Config("field carries no outer rectangle".into()))?;
    let lift = |p: [f64; 2]| -> [f64; 3] {
        [p[0], p[1], field.floor.surface.height(p[0], p[1])]
    };
    let inside = |p: [f64; 2]| -> bool {
        p[0] >= outer_min[0]
            && p[0] <= outer_max[0]
            && p[1] >= outer_min[1]
            && p[1] <= outer_max[1]
    };
    let mut times = vec![t0];
    let mut points = vec![lift(entry)];
    let mut velocities = vec![field.velocity_at(entry, t0)?];
    let mut p = entry;
    let mut t = t0;
    let steps = ((horizon - 0.0) / dt).ceil() as usize;
    let mut exit = None;
    for _ in 0..steps {
        if t - t0 >= horizon {
            break;
        }
        let k1 = field.velocity_at(p, t)?;
        let mid1 = [p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]];
        let k2 = velocity_clamped(field, mid1, t + 0.5 * dt, k1)?;
        let mid2 = [p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]];
        let k3 = velocity_clamped(field, mid2, t + 0.5 * dt, k2)?;
        let end = [p[0] + dt * k3[0], p[1] + dt * k3[1]];
        let k4 = velocity_clamped(field, end, t + dt, k3)?;
        let q = [
            p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if !inside(q) {
            // linear interpolation of the boundary crossing on p -> q
            let mut alpha = 1.0f64;
            for c in 0..2 {
                for bound in [outer_min[c], outer_max[c]] {
                    let d = q[c] - p[c];
                    if d.abs() > 0.0 {
                        let a = (bound - p[c]) / d;
                        if a > 1e-12 && a < alpha && {
                            let other = 1 - c;
                            let v = p[other] + a * (q[other] - p[other]);
                            v >= outer_min[other] - 1e-9 && v <= outer_max[other] + 1e-9
                        } {
                            alpha = a;
                        }
                    }
                }
            }
            let xp = [p[0] + alpha * (q[0] - p[0]), p[1] + alpha * (q[1] - p[1])];
            let te = t + alpha * dt;
            times.push(te);
            points.push(lift(xp));
            velocities.push(*velocities.last().unwrap());
            exit = Some((te, lift(xp)));
            break;
        }
        if field.in_unplanned(q) {
            return Err(Error::Numerical(format!(
                "reference trajectory entered the unplanned set at t = {}",
                t + dt
            )));
        }
        p = q;
        t += dt;
        times.push(t);
        points.push(lift(p));
        velocities.push(field.velocity_at(p, t)?);
    }
    Ok(ReferenceTrajectory {
        t0,
        times,
        points,
        velocities,
        exit,
    })
}

/// Velocity with a graceful fallback for RK stage points that poke just
/// outside the sector or against an obstacle face.
fn velocity_clamped(
    field: &FlowField,
    p: [f64; 2],
    t: f64,
    fallback: [f64; 2],
) -> Result<[f64; 2]> {
    match field.velocity_at(p, t) {
        Ok(v) => Ok(v),
        Err(Error::Domain(_)) => Ok(fallback),
        Err(e) => Err(e),
    }
}

/// Speed-class assignment of one cluster.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub cluster_id: usize,
    /// Index into the scenario's class list; `None` without classes.
    pub class_index: Option<usize>,
    /// Stream sub-band owned by this cluster.
    pub band: Option<[f64; 2]>,
    /// Per-channel cost constant making the entry speed nominal.
    pub k: f64,
    /// Stream value at the entry point, m^2/s.
    pub psi_entry: f64,
}

/// Assigns each cluster its speed class, a disjoint stream sub-band (split
/// by entry order when classes are shared), and the cost constant K.
pub fn assign_speed_class(
    field: &FlowField,
    clusters: &[ClusterSpec],
    classes: &[SpeedClass],
) -> Result<Vec<Assignment>> {
    let mut assignments = Vec::with_capacity(clusters.len());
    // deterministic sub-band split: clusters of one class ordered by entry
    // time, then id
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        clusters[a]
            .entry_time
            .total_cmp(&clusters[b].entry_time)
            .then(clusters[a].id.cmp(&clusters[b].id))
    });
    let mut class_members: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for &ci in &order {
        if !classes.is_empty() {
            let idx = classes
                .iter()
                .position(|cl| (cl.speed - clusters[ci].speed).abs() < 1e-9)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "cluster {}: speed {} matches no class",
                        clusters[ci].id, clusters[ci].speed
                    ))
                })?;
            class_members[idx].push(ci);
        }
    }
    for (ci, c) in clusters.iter().enumerate() {
        let g = field.grad_potential(c.entry_point)?;
        let grad_norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if grad_norm <= 1e-12 {
            return Err(Error::Config(format!(
                "cluster {}: entry point sits at a stagnation point",
                c.id
            )));
        }
        let k = grad_norm / c.speed;
        let psi_entry = field.stream_at(c.entry_point, 0.0)?;
        let (class_index, band) = if classes.is_empty() {
            (None, None)
        } else {
            let idx = classes
                .iter()
                .position(|cl| (cl.speed - c.speed).abs() < 1e-9)
                .expect("validated above");
            let members = &class_members[idx];
            let slot = members.iter().position(|&m| m == ci).unwrap();
            let [lo, hi] = classes[idx].band;
            let w = (hi - lo) / members.len() as f64;
            (
                Some(idx),
                Some([lo + slot as f64 * w, lo + (slot + 1) as f64 * w]),
            )
        };
        assignments.push(Assignment {
            cluster_id: c.id,
            class_index,
            band,
            k,
            psi_entry,
        });
    }
    Ok(assignments)
}

/// Which recovery law handles pop-up events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryMode {
    Lqr,
    Analytic,
}

/// Result of one pop-up event.
#[derive(Debug, Clone)]
pub struct EventRun {
    pub time: f64,
    /// Closed-loop LQR error trace (absolute times).
    pub trace: RecoveryTrace,
    /// First time the error norm fell below the admission threshold.
    pub recovered_at: Option<f64>,
    pub solution_iterations: usize,
    /// Analytic stream-control series when that mode is selected.
    pub stream: Option<StreamRun>,
}

/// Analytic stream-boundary-control series for one event.
#[derive(Debug, Clone)]
pub struct StreamRun {
    pub times: Vec<f64>,
    /// Discrete Lyapunov functional samples.
    pub v_series: Vec<f64>,
    /// V-rate estimates (non-positive).
    pub vdot_series: Vec<f64>,
    /// Error sup-norm samples.
    pub e_inf_series: Vec<f64>,
}

/// One cluster's executed run.
#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub id: usize,
    /// Actual start after any admission delay.
    pub start_time: f64,
    pub reference: ReferenceTrajectory,
    pub times: Vec<f64>,
    /// Per sample, per agent positions.
    pub agent_positions: Vec<Vec<[f64; 3]>>,
    /// Per sample, per agent deviation from the rigid-body image, meters.
    pub deviations: Vec<Vec<f64>>,
    /// Pose angle series `(theta1, theta2)`.
    pub theta: Vec<(f64, f64)>,
    /// Time at which the pose froze (reference exit), if it did.
    pub pose_frozen_at: Option<f64>,
}

/// Macroscopic grid artifacts of a run.
#[derive(Debug, Clone)]
pub struct MacroRun {
    pub grid: Grid,
    /// Steady nodal solution in lattice order.
    pub steady_lattice: Vec<f64>,
    pub flux: FluxReport,
    /// `(time, lattice values)` snapshots.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

/// Everything a scenario produces.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub assignments: Vec<Assignment>,
    pub macro_run: Option<MacroRun>,
    pub events: Vec<EventRun>,
    pub clusters: Vec<ClusterRun>,
}

fn boundary_values(
    field: &FlowField,
    grid: &Grid,
    pl: &PartitionedLaplacian,
    data: &BoundaryData,
) -> Result<Array1<f64>> {
    let mut bv = Array1::zeros(pl.m_cb);
    for k in 0..pl.m_cb {
        let [x, y] = grid.coord(pl.order[k]);
        bv[k] = match data {
            BoundaryData::Stream => field.stream_at([x, y], 0.0)?,
            BoundaryData::Potential => field.potential_at([x, y], 0.0)?,
            BoundaryData::Constant { value } => *value,
        };
    }
    Ok(bv)
}

fn geometry_with_popup(
    geometry: &AirspaceGeometry,
    floor_index: usize,
    region: &UnplannedRegion,
) -> Result<AirspaceGeometry> {
    let mut g = geometry.clone();
    g.unplanned.push(region.clone());
    for floor in &mut g.floors {
        if floor.xi {
            floor.gamma.push(false);
        } else if floor.index == floor_index {
            floor.xi = true;
            floor.gamma = vec![false; g.unplanned.len()];
        }
    }
    g.validate()?;
    Ok(g)
}

/// Stream range of a region boundary, for admission decisions.
fn region_stream_range(field: &FlowField, region: &UnplannedRegion) -> Result<[f64; 2]> {
    let pts: Vec<[f64; 2]> = match region {
        UnplannedRegion::CircleFromDoublet { center, radius } => (0..32)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            })
            .collect(),
        UnplannedRegion::Rectangle { center, half_extents } => {
            let mut v = Vec::new();
            for sx in [-1.0, 0.0, 1.0] {
                for sy in [-1.0, 0.0, 1.0] {
                    if sx != 0.0 || sy != 0.0 {
                        v.push([
                            center[0] + sx * half_extents[0],
                            center[1] + sy * half_extents[1],
                        ]);
                    }
                }
            }
            v
        }
        UnplannedRegion::SourceSinkOval { center, half_extents, .. } => (0..32)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
                [
                    center[0] + half_extents[0] * th.cos(),
                    center[1] + half_extents[1] * th.sin(),
                ]
            })
            .collect(),
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in pts {
        let psi = field.stream_at(p, 0.0)?;
        lo = lo.min(psi);
        hi = hi.max(psi);
    }
    Ok([lo, hi])
}

fn simulate_stream_recovery(
    grid: &Grid,
    psi_reference: Vec<f64>,
    psi_initial: Vec<f64>,
    horizon: f64,
    t_offset: f64,
) -> Result<StreamRun> {
    let dt = grid.spacing * grid.spacing / 8.0;
    let mut field = StreamErrorField::new(psi_initial, psi_reference, 1.0, 1.0)?;
    let steps = (horizon / dt).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut v_series = Vec::with_capacity(steps + 1);
    let mut vdot_series = Vec::with_capacity(steps + 1);
    let mut e_inf_series = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        times.push(t_offset + s as f64 * dt);
        v_series.push(field.lyapunov(grid));
        vdot_series.push(stream_vdot_estimate(&field, grid));
        e_inf_series.push(
            field
                .error()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())),
        );
        if s < steps {
            field = step_stream_control(&field, grid, dt)?;
        }
    }
    Ok(StreamRun {
        times,
        v_series,
        vdot_series,
        e_inf_series,
    })
}

/// Runs a scenario end to end: macroscopic setup, event handling, and
/// per-cluster microscopic stepping. Deterministic given the spec.
pub fn run_scenario(spec: &ScenarioSpec, mode: RecoveryMode) -> Result<ScenarioResult> {
    spec.validate()?;
    let field = FlowField::from_geometry(
        &spec.geometry,
        spec.flow.floor,
        spec.flow.u_inf,
        spec.flow.theta0,
    )?;
    let assignments = assign_speed_class(&field, &spec.clusters, &spec.speed_classes)?;

    // macroscopic grid artifacts
    let mut macro_run = None;
    let mut events = Vec::new();
    if let Some(gs) = &spec.grid {
        let grid = build_grid(&spec.geometry, gs.spacing, spec.flow.floor)?;
        let pl = assemble_partitioned(&grid)?;
        let bv = boundary_values(&field, &grid, &pl, &gs.boundary)?;
        let steady = pl.solve_steady(&bv)?;
        let steady_lattice = pl.scatter(&steady);
        let flux = net_boundary_flux(&grid, &steady_lattice);
        let scale = (flux.outer.abs() + flux.obstacle.abs()).max(1.0);
        if flux.total.abs() > NET_FLUX_REL * scale {
            return Err(Error::Numerical(format!(
                "net boundary flux {} exceeds the conservation tolerance",
                flux.total
            )));
        }
        let mut snapshots: Vec<(f64, Vec<f64>)> = Vec::new();

        let mut current_pl = pl;
        let mut current_grid = grid.clone();
        let mut current_geometry = spec.geometry.clone();
        for ev in &spec.events {
            let new_geometry =
                geometry_with_popup(&current_geometry, spec.flow.floor, &ev.region)?;
            let new_grid = build_grid(&new_geometry, gs.spacing, spec.flow.floor)?;
            let new_pl = assemble_partitioned(&new_grid)?;
            let problem = LqrProblem::new(
                new_pl.a_c.clone(),
                new_pl.b_c.clone(),
                ndarray::Array2::eye(new_pl.state_dim()) * ev.we_scale,
                ndarray::Array2::eye(new_pl.m_cb) * ev.wu_scale,
            )?;
            let sol: LqrSolution = solve_riccati(&problem)?;
            let dt = ev.dt.unwrap_or(spec.sim.dt);
            let horizon = ev.horizon.unwrap_or(spec.sim.horizon - ev.time);
            let wanted: Vec<f64> = spec
                .sim
                .snapshot_times
                .iter()
                .filter(|t| **t >= ev.time)
                .map(|t| t - ev.time)
                .collect();
            let mut trace = simulate_lqr_recovery(
                &current_pl,
                &new_pl,
                &bv,
                &sol,
                dt,
                horizon,
                &wanted,
            )?;
            for s in trace.sampled_states.iter_mut() {
                s.0 += ev.time;
            }
            for t in trace.times.iter_mut() {
                *t += ev.time;
            }
            let initial = trace.error_norms[0];
            let recovered_at = trace
                .error_norms
                .iter()
                .position(|v| *v < spec.sim.admission_threshold * initial)
                .map(|i| trace.times[i]);
            let new_steady = new_pl.solve_steady(&bv)?;
            let new_steady_lattice = new_pl.scatter(&new_steady);
            // snapshots inside this event's window
            for (st, state) in &trace.sampled_states {
                if snapshots.iter().all(|(t, _)| (*t - *st).abs() > 1e-12) {
                    let mut lattice = new_steady_lattice.clone();
                    for k in 0..new_pl.state_dim() {
                        lattice[new_pl.order[new_pl.m_cb + k]] += state[k];
                    }
                    snapshots.push((*st, lattice));
                }
            }
            let stream = if mode == RecoveryMode::Analytic {
                let old_steady_lattice = {
                    // previous steady field carried over as the actual state
                    let old_steady = current_pl.solve_steady(&bv)?;
                    current_pl.scatter(&old_steady)
                };
                // pinned obstacle values: the new reference has zeros there
                let mut psi_init = old_steady_lattice;
                for idx in 0..new_grid.m() {
                    if new_grid.classes[idx] == NodeClass::Unplanned {
                        psi_init[idx] = new_steady_lattice[idx];
                    }
                }
                Some(simulate_stream_recovery(
                    &new_grid,
                    new_steady_lattice.clone(),
                    psi_init,
                    horizon.min(400.0 * gs.spacing * gs.spacing / 8.0),
                    ev.time,
                )?)
            } else {
                None
            };
            events.push(EventRun {
                time: ev.time,
                trace,
                recovered_at,
                solution_iterations: sol.iterations,
                stream,
            });
            current_pl = new_pl;
            current_grid = new_grid;
            current_geometry = new_geometry;
        }
        // snapshots before any event come from the initial steady field
        for &st in &spec.sim.snapshot_times {
            if snapshots.iter().all(|(t, _)| (*t - st).abs() > 1e-12) {
                snapshots.push((st, steady_lattice.clone()));
            }
        }
        snapshots.sort_by(|a, b| a.0.total_cmp(&b.0));
        let _ = &current_grid;
        macro_run = Some(MacroRun {
            grid,
            steady_lattice,
            flux,
            snapshots,
        });
    } else if !spec.events.is_empty() {
        return Err(Error::Config(
            "events require a [grid] section for the recovery solve".into(),
        ));
    }

    // cluster execution
    let mut clusters = Vec::new();
    for (c, a) in spec.clusters.iter().zip(&assignments) {
        let run = run_cluster(spec, &field, c, a, &events)?;
        clusters.push(run);
    }

    Ok(ScenarioResult {
        assignments,
        macro_run,
        events,
        clusters,
    })
}

fn run_cluster(
    spec: &ScenarioSpec,
    field: &FlowField,
    c: &ClusterSpec,
    a: &Assignment,
    events: &[EventRun],
) -> Result<ClusterRun> {
    // admission: pop-ups pause entries into affected bands
    let mut start_time = c.entry_time;
    for (ev_spec, ev_run) in spec.events.iter().zip(events) {
        if c.entry_time >= ev_spec.time {
            let affected = match (a.band, region_stream_range(field, &ev_spec.region)) {
                (Some([lo, hi]), Ok([rlo, rhi])) => rlo <= hi && lo <= rhi,
                _ => true,
            };
            if affected {
                let resume = ev_run.recovered_at.unwrap_or(spec.sim.horizon);
                start_time = start_time.max(resume);
            }
        }
    }
    let k = a.k;
    let field_k = field.clone().with_cost(Arc::new(move |_, _| k));
    let horizon = spec.sim.horizon - start_time;
    if horizon <= 0.0 {
        return Err(Error::Config(format!(
            "cluster {}: no horizon left after admission delay",
            c.id
        )));
    }
    let reference =
        integrate_reference(&field_k, c.entry_point, start_time, spec.sim.dt, horizon)?;
    let cluster = spec.build_cluster(c)?;

    // pose series along the reference; frozen after exit
    let n_ref = reference.points.len();
    let mut pose = vrb_pose_from_velocity(
        reference.points[0],
        vel3(&reference, 0, spec.sim.dt),
        None,
    )?;
    let mut state = ClusterState::at_rest(&cluster, &pose);
    let total_steps = (horizon / spec.sim.dt).floor() as usize;
    let mut times = Vec::with_capacity(total_steps + 1);
    let mut agent_positions = Vec::with_capacity(total_steps + 1);
    let mut deviations = Vec::with_capacity(total_steps + 1);
    let mut theta = Vec::with_capacity(total_steps + 1);
    let mut pose_frozen_at = None;
    let record = |t: f64,
                  state: &ClusterState,
                  pose: &VrbPose,
                  times: &mut Vec<f64>,
                  agent_positions: &mut Vec<Vec<[f64; 3]>>,
                  deviations: &mut Vec<Vec<f64>>,
                  theta: &mut Vec<(f64, f64)>| {
        times.push(t);
        agent_positions.push(state.positions.clone());
        let desired = global_desired_positions(&cluster, pose);
        deviations.push(
            state
                .positions
                .iter()
                .zip(&desired)
                .map(|(p, d)| {
                    ((p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2) + (p[2] - d[2]).powi(2))
                        .sqrt()
                })
                .collect(),
        );
        theta.push((pose.theta1, pose.theta2));
    };
    record(
        start_time,
        &state,
        &pose,
        &mut times,
        &mut agent_positions,
        &mut deviations,
        &mut theta,
    );
    for step in 0..total_steps {
        let t = start_time + step as f64 * spec.sim.dt;
        let (next_pose, rate) = if step + 1 < n_ref {
            let np = vrb_pose_from_velocity(
                reference.points[step + 1],
                vel3(&reference, step + 1, spec.sim.dt),
                Some(&pose),
            )?;
            let rate = VrbPoseRate::from_difference(&pose, &np, spec.sim.dt)?;
            (np, rate)
        } else {
            if pose_frozen_at.is_none() {
                pose_frozen_at = Some(t);
            }
            (pose.clone(), VrbPoseRate::zero())
        };
        state = step_agents(&cluster, &state, &next_pose, &rate, spec.sim.dt)?;
        pose = next_pose;
        record(
            t + spec.sim.dt,
            &state,
            &pose,
            &mut times,
            &mut agent_positions,
            &mut deviations,
            &mut theta,
        );
    }
    Ok(ClusterRun {
        id: c.id,
        start_time,
        reference,
        times,
        agent_positions,
        deviations,
        theta,
        pose_frozen_at,
    })
}

/// Three-dimensional reference velocity at sample `i` by forward difference
/// of the lifted points (captures the floor-surface vertical rate).
fn vel3(reference: &ReferenceTrajectory, i: usize, dt: f64) -> [f64; 3] {
    let n = reference.points.len();
    if n < 2 {
        let v = reference.velocities[0];
        return [v[0], v[1], 0.0];
    }
    let (a, b, h) = if i + 1 < n {
        (
            reference.points[i],
            reference.points[i + 1],
            reference.times[i + 1] - reference.times[i],
        )
    } else {
        (
            reference.points[n - 2],
            reference.points[n - 1],
            reference.times[n - 1] - reference.times[n - 2],
        )
    };
    let h = if h.abs() > 1e-12 { h } else { dt };
    [
        (b[0] - a[0]) / h,
        (b[1] - a[1]) / h,
        (b[2] - a[2]) / h,
    ]
}

// ---------------------------------------------------------------------------
// deterministic column-text export

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

/// Writes every series of a result as comma-separated text with unit-bearing
/// headers; returns the created paths. Byte-identical across re-runs.
/// `snapshot_times` additionally selects per-cluster formation snapshots.
pub fn export_result(
    result: &ScenarioResult,
    snapshot_times: &[f64],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();

    let mut s = String::from("cluster,class,psi_lo_m2s,psi_hi_m2s,k_cost,psi_entry_m2s\n");
    for a in &result.assignments {
        let class = a
            .class_index
            .map(|i| i.to_string())
            .unwrap_or_else(|| "-".into());
        let (lo, hi) = match a.band {
            Some([lo, hi]) => (fmt(lo), fmt(hi)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            a.cluster_id,
            class,
            lo,
            hi,
            fmt(a.k),
            fmt(a.psi_entry)
        );
    }
    paths.push(write_file(dir, "assignments.csv", &s)?);

    if let Some(m) = &result.macro_run {
        let mut s = String::from("node,x_m,y_m,class,phi\n");
        for idx in 0..m.grid.m() {
            let [x, y] = m.grid.coord(idx);
            let class = match m.grid.classes[idx] {
                NodeClass::BoundaryControl => "cb",
                NodeClass::Interior => "ci",
                NodeClass::Unplanned => "u",
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                idx,
                fmt(x),
                fmt(y),
                class,
                fmt(m.steady_lattice[idx])
            );
        }
        paths.push(write_file(dir, "steady_field.csv", &s)?);

        let mut s = String::from("outer_flux,obstacle_flux,total_flux\n");
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt(m.flux.outer),
            fmt(m.flux.obstacle),
            fmt(m.flux.total)
        );
        paths.push(write_file(dir, "flux.csv", &s)?);

        for (t, lattice) in &m.snapshots {
            let mut s = String::from("node,x_m,y_m,phi\n");
            for idx in 0..m.grid.m() {
                let [x, y] = m.grid.coord(idx);
                let _ = writeln!(s, "{},{},{},{}", idx, fmt(x), fmt(y), fmt(lattice[idx]));
            }
            let name = format!("snapshot_t{:.3}.csv", t);
            paths.push(write_file(dir, &name, &s)?);
        }
    }

    for (i, ev) in result.events.iter().enumerate() {
        let mut s = String::from("t_s,error_norm,lyapunov\n");
        for k in 0..ev.trace.times.len() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt(ev.trace.times[k]),
                fmt(ev.trace.error_norms[k]),
                fmt(ev.trace.lyapunov[k])
            );
        }
        paths.push(write_file(dir, &format!("event_{i}_error.csv"), &s)?);
        if let Some(st) = &ev.stream {
            let mut s = String::from("t_s,v,vdot_estimate,e_inf\n");
            for k in 0..st.times.len() {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    fmt(st.times[k]),
                    fmt(st.v_series[k]),
                    fmt(st.vdot_series[k]),
                    fmt(st.e_inf_series[k])
                );
            }
            paths.push(write_file(dir, &format!("event_{i}_stream.csv"), &s)?);
        }
    }

    for cr in &result.clusters {
        let mut s = String::from("t_s,x_m,y_m,z_m\n");
        for k in 0..cr.reference.times.len() {
            let p = cr.reference.points[k];
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt(cr.reference.times[k]),
                fmt(p[0]),
                fmt(p[1]),
                fmt(p[2])
            );
        }
        paths.push(write_file(dir, &format!("reference_{}.csv", cr.id), &s)?);

        let mut s = String::from("t_s,agent,x_m,y_m,z_m,deviation_m\n");
        for k in 0..cr.times.len() {
            for (j, p) in cr.agent_positions[k].iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    fmt(cr.times[k]),
                    j,
                    fmt(p[0]),
                    fmt(p[1]),
                    fmt(p[2]),
                    fmt(cr.deviations[k][j])
                );
            }
        }
        paths.push(write_file(dir, &format!("agents_{}.csv", cr.id), &s)?);

        let mut s = String::from("t_s,theta1_rad,theta2_rad\n");
        for k in 0..cr.times.len() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt(cr.times[k]),
                fmt(cr.theta[k].0),
                fmt(cr.theta[k].1)
            );
        }
        paths.push(write_file(dir, &format!("pose_{}.csv", cr.id), &s)?);

        for &st in snapshot_times {
            // nearest recorded sample within half a step
            let Some(k) = cr
                .times
                .iter()
                .position(|t| (*t - st).abs() <= half_step(&cr.times) + 1e-12)
            else {
                continue;
            };
            let mut s = String::from("agent,x_m,y_m,z_m,deviation_m\n");
            for (j, p) in cr.agent_positions[k].iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    j,
                    fmt(p[0]),
                    fmt(p[1]),
                    fmt(p[2]),
                    fmt(cr.deviations[k][j])
                );
            }
            let name = format!("formation_{}_t{:.3}.csv", cr.id, st);
            paths.push(write_file(dir, &name, &s)?);
        }
    }

    Ok(paths)
}

fn half_step(times: &[f64]) -> f64 {
    if times.len() < 2 {
        return 0.0;
    }
    (times[1] - times[0]) / 2.0
}
