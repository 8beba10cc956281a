//! Decentralized cluster coordination: leader/follower communication graphs,
//! weight matrices, virtual-rigid-body poses derived from the macroscopic
//! velocity, and double-integrator agent stepping.

use ndarray::{Array1, Array2};

use crate::linalg;
use crate::{Error, Result};

/// A d-dimensional cluster of agents guided by `d + 1` leaders.
///
/// Agents are indexed `0..n`; leaders are `0..=d`, followers the rest. Each
/// follower holds a convex weighting over its in-neighbors.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: usize,
    /// Cluster dimension `d` in `0..=3`.
    pub dimension: usize,
    /// In-neighbor lists per agent: `(neighbor index, weight)`. Leaders have
    /// empty lists.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Constant material (body-frame) positions, meters.
    pub material_positions: Vec<[f64; 3]>,
    pub beta1: f64,
    pub beta2: f64,
    /// Followers whose material position is not the weighted combination of
    /// their in-neighbors' material positions; they settle on the containment
    /// fixed point instead of the rigid-body image.
    pub material_mismatch: Vec<usize>,
}

impl Cluster {
    pub fn new(
        id: usize,
        dimension: usize,
        neighbors: Vec<Vec<(usize, f64)>>,
        material_positions: Vec<[f64; 3]>,
        beta1: f64,
        beta2: f64,
    ) -> Result<Self> {
        let n = neighbors.len();
        if dimension > 3 {
            return Err(Error::Validation(format!(
                "cluster {id}: dimension {dimension} out of range"
            )));
        }
        if n < dimension + 1 {
            return Err(Error::Validation(format!(
                "cluster {id}: {n} agents cannot host {} leaders",
                dimension + 1
            )));
        }
        if material_positions.len() != n {
            return Err(Error::Validation(format!(
                "cluster {id}: {} material positions for {n} agents",
                material_positions.len()
            )));
        }
        if beta1 <= 0.0 || beta2 <= 0.0 {
            return Err(Error::Validation(format!(
                "cluster {id}: gains must be strictly positive"
            )));
        }
        let leaders = dimension + 1;
        for (j, nb) in neighbors.iter().enumerate() {
            if j < leaders {
                if !nb.is_empty() {
                    return Err(Error::Validation(format!(
                        "cluster {id}: leader {j} must not have in-neighbors"
                    )));
                }
                continue;
            }
            if nb.is_empty() {
                return Err(Error::Validation(format!(
                    "cluster {id}: follower {j} has no in-neighbors"
                )));
            }
            let mut sum = 0.0;
            for &(h, w) in nb {
                if h >= n || h == j {
                    return Err(Error::Validation(format!(
                        "cluster {id}: follower {j} references invalid neighbor {h}"
                    )));
                }
                if w <= 0.0 {
                    return Err(Error::Validation(format!(
                        "cluster {id}: follower {j} has non-positive weight on {h}"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "cluster {id}: follower {j} weights sum to {sum}, expected 1"
                )));
            }
        }
        // every follower reachable from the leader set
        let mut reached: Vec<bool> = (0..n).map(|j| j < leaders).collect();
        loop {
            let mut changed = false;
            for j in leaders..n {
                if !reached[j] && neighbors[j].iter().any(|&(h, _)| reached[h]) {
                    reached[j] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(j) = reached.iter().position(|r| !*r) {
            return Err(Error::Connectivity(format!(
                "cluster {id}: follower {j} unreachable from the leader set"
            )));
        }
        // leaders must span a d-dimensional simplex
        if dimension > 0 {
            let mut diff = Array2::<f64>::zeros((dimension, 3));
            for k in 1..=dimension {
                for c in 0..3 {
                    diff[[k - 1, c]] =
                        material_positions[k][c] - material_positions[0][c];
                }
            }
            if matrix_rank(&diff) != dimension {
                return Err(Error::Validation(format!(
                    "cluster {id}: leader positions do not span a {dimension}-simplex"
                )));
            }
        }
        let mut material_mismatch = Vec::new();
        for j in leaders..n {
            let mut combo = [0.0f64; 3];
            for &(h, w) in &neighbors[j] {
                for c in 0..3 {
                    combo[c] += w * material_positions[h][c];
                }
            }
            let dev = (0..3)
                .map(|c| (combo[c] - material_positions[j][c]).abs())
                .fold(0.0f64, f64::max);
            if dev > 1e-9 {
                material_mismatch.push(j);
            }
        }
        Ok(Self {
            id,
            dimension,
            neighbors,
            material_positions,
            beta1,
            beta2,
            material_mismatch,
        })
    }

    pub fn agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn leader_count(&self) -> usize {
        self.dimension + 1
    }

    pub fn is_leader(&self, j: usize) -> bool {
        j < self.leader_count()
    }
}

fn matrix_rank(a: &Array2<f64>) -> usize {
    // Gram-based rank for the tiny leader-difference matrices
    let g = a.dot(&a.t());
    let evs = match linalg::eigvals(&g) {
        Ok(v) => v,
        Err(_) => return 0,
    };
    let max = evs.iter().map(|z| z.re).fold(0.0f64, f64::max);
    evs.iter().filter(|z| z.re > 1e-12 * max.max(1.0)).count()
}

/// Partitioned cluster weight matrix `W = [-I, 0; Omega, L]`.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub w: Array2<f64>,
    pub omega: Array2<f64>,
    pub l: Array2<f64>,
}

/// Assembles and certifies the weight matrix of a cluster.
pub fn build_weight_matrix(cluster: &Cluster) -> Result<WeightMatrix> {
    let n = cluster.agents();
    let leaders = cluster.leader_count();
    let mut w = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        w[[j, j]] = -1.0;
        for &(h, wt) in &cluster.neighbors[j] {
            w[[j, h]] = wt;
        }
    }
    let followers = n - leaders;
    let omega = w
        .slice(ndarray::s![leaders.., ..leaders])
        .to_owned();
    let l = w.slice(ndarray::s![leaders.., leaders..]).to_owned();
    if followers > 0 {
        if !linalg::is_hurwitz(&l)? {
            return Err(Error::Numerical(format!(
                "cluster {}: follower block is not Hurwitz",
                cluster.id
            )));
        }
    }
    if !linalg::is_hurwitz(&w)? {
        return Err(Error::Numerical(format!(
            "cluster {}: weight matrix is not Hurwitz",
            cluster.id
        )));
    }
    Ok(WeightMatrix { w, omega, l })
}

/// Virtual-rigid-body pose: reference position plus body rotation.
#[derive(Debug, Clone)]
pub struct VrbPose {
    pub r: [f64; 3],
    pub q: [[f64; 3]; 3],
    pub theta1: f64,
    pub theta2: f64,
}

/// Pose time-derivative used to form leader desired velocities.
#[derive(Debug, Clone)]
pub struct VrbPoseRate {
    pub r_dot: [f64; 3],
    pub q_dot: [[f64; 3]; 3],
}

impl VrbPoseRate {
    pub fn zero() -> Self {
        Self {
            r_dot: [0.0; 3],
            q_dot: [[0.0; 3]; 3],
        }
    }

    /// First-order pose rate from two consecutive poses.
    pub fn from_difference(prev: &VrbPose, next: &VrbPose, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::Config("pose-rate dt must be positive".into()));
        }
        let mut q_dot = [[0.0; 3]; 3];
        let mut r_dot = [0.0; 3];
        for a in 0..3 {
            r_dot[a] = (next.r[a] - prev.r[a]) / dt;
            for b in 0..3 {
                q_dot[a][b] = (next.q[a][b] - prev.q[a][b]) / dt;
            }
        }
        Ok(Self { r_dot, q_dot })
    }
}

fn rotation_from_angles(theta1: f64, theta2: f64) -> [[f64; 3]; 3] {
    let (s1, c1) = theta1.sin_cos();
    let (s2, c2) = theta2.sin_cos();
    [
        [c1 * c2, c1 * s2, -s1],
        [-s2, c2, 0.0],
        [s1 * c2, s1 * s2, c1],
    ]
}

impl VrbPose {
    pub fn identity(r: [f64; 3]) -> Self {
        Self {
            r,
            q: rotation_from_angles(0.0, 0.0),
            theta1: 0.0,
            theta2: 0.0,
        }
    }

    /// Orthogonality defect `max |QQ^T - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| self.q[a][k] * self.q[b][k]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                defect = defect.max((dot - expect).abs());
            }
        }
        defect
    }
}

/// Pose whose body x-axis tracks the macroscopic velocity direction.
///
/// Near-stagnation velocities hold the previous rotation (the reference may
/// legitimately sit at a stagnation point); without a previous pose that is a
/// domain error.
pub fn vrb_pose_from_velocity(
    r: [f64; 3],
    v: [f64; 3],
    previous: Option<&VrbPose>,
) -> Result<VrbPose> {
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if speed <= 1e-9 {
        return match previous {
            Some(p) => Ok(VrbPose {
                r,
                q: p.q,
                theta1: p.theta1,
                theta2: p.theta2,
            }),
            None => Err(Error::Domain(
                "near-zero macroscopic velocity with no previous pose".into(),
            )),
        };
    }
    let theta1 = (-v[2] / speed).asin();
    let theta2 = v[1].atan2(v[0]);
    Ok(VrbPose {
        r,
        q: rotation_from_angles(theta1, theta2),
        theta1,
        theta2,
    })
}

/// Applies the pose attitude to a body-frame vector. The rows of `q` are the
/// body axes expressed in world coordinates, so body-to-world is `q^T p`.
fn rotate(q: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    [
        q[0][0] * p[0] + q[1][0] * p[1] + q[2][0] * p[2],
        q[0][1] * p[0] + q[1][1] * p[1] + q[2][1] * p[2],
        q[0][2] * p[0] + q[1][2] * p[1] + q[2][2] * p[2],
    ]
}

/// Rigid-body images of every agent's material position under the pose.
pub fn global_desired_positions(cluster: &Cluster, pose: &VrbPose) -> Vec<[f64; 3]> {
    cluster
        .material_positions
        .iter()
        .map(|&p0| {
            let rp = rotate(&pose.q, p0);
            [rp[0] + pose.r[0], rp[1] + pose.r[1], rp[2] + pose.r[2]]
        })
        .collect()
}

/// Positions and velocities of every agent in a cluster.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
}

impl ClusterState {
    pub fn new(positions: Vec<[f64; 3]>, velocities: Vec<[f64; 3]>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::Config("state position/velocity length mismatch".into()));
        }
        Ok(Self { positions, velocities })
    }

    /// State resting at the rigid-body image of a pose.
    pub fn at_rest(cluster: &Cluster, pose: &VrbPose) -> Self {
        let positions = global_desired_positions(cluster, pose);
        let velocities = vec![[0.0; 3]; cluster.agents()];
        Self { positions, velocities }
    }
}

/// Local desired position of one agent: leaders take the rigid-body image,
/// followers the convex combination of in-neighbor actual positions.
pub fn local_desired_position(
    cluster: &Cluster,
    state: &ClusterState,
    pose: &VrbPose,
    j: usize,
) -> Result<[f64; 3]> {
    if j >= cluster.agents() {
        return Err(Error::Config(format!("agent {j} out of range")));
    }
    if cluster.is_leader(j) {
        let rp = rotate(&pose.q, cluster.material_positions[j]);
        return Ok([rp[0] + pose.r[0], rp[1] + pose.r[1], rp[2] + pose.r[2]]);
    }
    let mut out = [0.0; 3];
    for &(h, w) in &cluster.neighbors[j] {
        for c in 0..3 {
            out[c] += w * state.positions[h][c];
        }
    }
    Ok(out)
}

fn accelerations(
    cluster: &Cluster,
    positions: &[[f64; 3]],
    velocities: &[[f64; 3]],
    desired_leader_pos: &[[f64; 3]],
    desired_leader_vel: &[[f64; 3]],
) -> Vec<[f64; 3]> {
    let n = cluster.agents();
    let mut acc = vec![[0.0f64; 3]; n];
    for j in 0..n {
        let (pd, vd) = if cluster.is_leader(j) {
            (desired_leader_pos[j], desired_leader_vel[j])
        } else {
            let mut pd = [0.0; 3];
            let mut vd = [0.0; 3];
            for &(h, w) in &cluster.neighbors[j] {
                for c in 0..3 {
                    pd[c] += w * positions[h][c];
                    vd[c] += w * velocities[h][c];
                }
            }
            (pd, vd)
        };
        for c in 0..3 {
            acc[j][c] = cluster.beta1 * (vd[c] - velocities[j][c])
                + cluster.beta2 * (pd[c] - positions[j][c]);
        }
    }
    acc
}

/// Advances all agents one RK4 step of the double-integrator protocol.
///
/// Leader desired motion comes from the pose and its rate; follower desired
/// motion is the weighted combination of in-neighbor states, so the protocol
/// stays strictly local.
pub fn step_agents(
    cluster: &Cluster,
    state: &ClusterState,
    pose: &VrbPose,
    pose_rate: &VrbPoseRate,
    dt: f64,
) -> Result<ClusterState> {
    let n = cluster.agents();
    if state.positions.len() != n {
        return Err(Error::Config("state does not match the cluster".into()));
    }
    if dt <= 0.0 {
        return Err(Error::Config("dt must be positive".into()));
    }
    let leader_pos: Vec<[f64; 3]> = global_desired_positions(cluster, pose);
    let leader_vel: Vec<[f64; 3]> = cluster
        .material_positions
        .iter()
        .map(|&p0| {
            let qp = rotate(&pose_rate.q_dot, p0);
            [
                qp[0] + pose_rate.r_dot[0],
                qp[1] + pose_rate.r_dot[1],
                qp[2] + pose_rate.r_dot[2],
            ]
        })
        .collect();

    type Stage = (Vec<[f64; 3]>, Vec<[f64; 3]>);
    let deriv = |p: &[[f64; 3]], v: &[[f64; 3]]| -> Stage {
        (
            v.to_vec(),
            accelerations(cluster, p, v, &leader_pos, &leader_vel),
        )
    };
    let advance = |p: &[[f64; 3]], v: &[[f64; 3]], dp: &Stage, h: f64| -> Stage {
        let mut np = p.to_vec();
        let mut nv = v.to_vec();
        for j in 0..n {
            for c in 0..3 {
                np[j][c] += h * dp.0[j][c];
                nv[j][c] += h * dp.1[j][c];
            }
        }
        (np, nv)
    };
    let k1 = deriv(&state.positions, &state.velocities);
    let (p2, v2) = advance(&state.positions, &state.velocities, &k1, dt / 2.0);
    let k2 = deriv(&p2, &v2);
    let (p3, v3) = advance(&state.positions, &state.velocities, &k2, dt / 2.0);
    let k3 = deriv(&p3, &v3);
    let (p4, v4) = advance(&state.positions, &state.velocities, &k3, dt);
    let k4 = deriv(&p4, &v4);
    let mut positions = state.positions.clone();
    let mut velocities = state.velocities.clone();
    for j in 0..n {
        for c in 0..3 {
            positions[j][c] += dt / 6.0
                * (k1.0[j][c] + 2.0 * k2.0[j][c] + 2.0 * k3.0[j][c] + k4.0[j][c]);
            velocities[j][c] += dt / 6.0
                * (k1.1[j][c] + 2.0 * k2.1[j][c] + 2.0 * k3.1[j][c] + k4.1[j][c]);
        }
    }
    Ok(ClusterState { positions, velocities })
}

/// Steady follower positions under stationary leaders: `-L^-1 Omega p_L`
/// applied per axis.
pub fn containment_fixed_point(
    wm: &WeightMatrix,
    leader_positions: &[[f64; 3]],
) -> Result<Vec<[f64; 3]>> {
    let followers = wm.l.nrows();
    let leaders = wm.omega.ncols();
    if leader_positions.len() != leaders {
        return Err(Error::Config("leader position count mismatch".into()));
    }
    let mut out = vec![[0.0f64; 3]; followers];
    for c in 0..3 {
        let pl = Array1::from_iter(leader_positions.iter().map(|p| p[c]));
        let rhs = wm.omega.dot(&pl).mapv(|x| -x);
        let sol = linalg::solve_vec(&wm.l, &rhs)?;
        for j in 0..followers {
            out[j][c] = sol[j];
        }
    }
    Ok(out)
}

/// Collective closed-loop matrices `(A_SYS, B_SYS)` with the axis-major
/// vectorization (x block, then y, then z; positions before velocities).
pub fn collective_matrices(cluster: &Cluster) -> Result<(Array2<f64>, Array2<f64>)> {
    let wm = build_weight_matrix(cluster)?;
    let n = cluster.agents();
    let leaders = cluster.leader_count();
    let mut a_axis = Array2::<f64>::zeros((2 * n, 2 * n));
    for j in 0..n {
        a_axis[[j, n + j]] = 1.0;
        for h in 0..n {
            a_axis[[n + j, h]] = cluster.beta2 * wm.w[[j, h]];
            a_axis[[n + j, n + h]] = cluster.beta1 * wm.w[[j, h]];
        }
    }
    let mut b_axis = Array2::<f64>::zeros((2 * n, leaders));
    for j in 0..leaders {
        b_axis[[n + j, j]] = 1.0;
    }
    let a_sys = kron_i3(&a_axis);
    let b_sys = kron_i3(&b_axis);
    if !linalg::is_hurwitz(&a_sys)? {
        return Err(Error::Numerical(format!(
            "cluster {}: collective matrix is not Hurwitz",
            cluster.id
        )));
    }
    Ok((a_sys, b_sys))
}

fn kron_i3(a: &Array2<f64>) -> Array2<f64> {
    let (r, c) = a.dim();
    let mut out = Array2::<f64>::zeros((3 * r, 3 * c));
    for k in 0..3 {
        for i in 0..r {
            for j in 0..c {
                out[[k * r + i, k * c + j]] = a[[i, j]];
            }
        }
    }
    out
}

/// The ten-agent planar cluster used throughout the worked examples: three
/// leaders and seven followers with the published communication weights.
/// The follower-7 row is normalized to unit sum (printed as 1.10).
pub fn ten_agent_example(
    material_positions: Vec<[f64; 3]>,
    beta1: f64,
    beta2: f64,
) -> Result<Cluster> {
    let mut neighbors = vec![Vec::new(); 10];
    neighbors[3] = vec![(0, 0.50), (6, 0.25), (9, 0.25)];
    neighbors[4] = vec![(1, 0.50), (7, 0.25), (8, 0.25)];
    neighbors[5] = vec![(2, 0.50), (8, 0.25), (9, 0.25)];
    neighbors[6] = vec![(3, 0.40), (7, 0.30), (9, 0.30)];
    neighbors[7] = vec![(4, 0.29), (6, 0.35), (8, 0.36)];
    neighbors[8] = vec![(4, 0.31), (5, 0.40), (7, 0.29)];
    neighbors[9] = vec![(3, 0.45), (5, 0.25), (6, 0.30)];
    Cluster::new(0, 2, neighbors, material_positions, beta1, beta2)
}

/// Planar material layout for the ten-agent cluster: leaders at an outer
/// triangle, followers spread inside it consistently with the weights.
pub fn ten_agent_material_positions(scale: f64) -> Vec<[f64; 3]> {
    let leaders = [
        [scale, 0.0, 0.0],
        [-0.5 * scale, 0.866 * scale, 0.0],
        [-0.5 * scale, -0.866 * scale, 0.0],
    ];
    // followers at the containment fixed point of the leader triangle, so
    // the rigid-body image and the local protocol agree at steady state
    let mut neighbors = vec![Vec::new(); 10];
    neighbors[3] = vec![(0, 0.50), (6, 0.25), (9, 0.25)];
    neighbors[4] = vec![(1, 0.50), (7, 0.25), (8, 0.25)];
    neighbors[5] = vec![(2, 0.50), (8, 0.25), (9, 0.25)];
    neighbors[6] = vec![(3, 0.40), (7, 0.30), (9, 0.30)];
    neighbors[7] = vec![(4, 0.29), (6, 0.35), (8, 0.36)];
    neighbors[8] = vec![(4, 0.31), (5, 0.40), (7, 0.29)];
    neighbors[9] = vec![(3, 0.45), (5, 0.25), (6, 0.30)];
    let mut w = Array2::<f64>::zeros((7, 10));
    for j in 3..10 {
        w[[j - 3, j]] = -1.0;
        for &(h, wt) in &neighbors[j] {
            w[[j - 3, h]] = wt;
        }
    }
    let omega = w.slice(ndarray::s![.., ..3]).to_owned();
    let l = w.slice(ndarray::s![.., 3..]).to_owned();
    let mut out: Vec<[f64; 3]> = leaders.to_vec();
    let mut follower = vec![[0.0f64; 3]; 7];
    for c in 0..2 {
        let pl = Array1::from_iter(leaders.iter().map(|p| p[c]));
        let rhs = omega.dot(&pl).mapv(|x| -x);
        let sol = linalg::solve_vec(&l, &rhs).expect("follower block is regular");
        for j in 0..7 {
            follower[j][c] = sol[j];
        }
    }
    out.extend(follower);
    out
}
