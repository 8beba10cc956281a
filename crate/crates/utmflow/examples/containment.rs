//! Ten-agent containment: followers converge into the leaders' hull at the
//! protocol fixed point while the cluster holds a fixed pose.

use utmflow::microscopic::{
    build_weight_matrix, containment_fixed_point, step_agents, ten_agent_example,
    ten_agent_material_positions, ClusterState, VrbPose, VrbPoseRate,
};

fn main() -> utmflow::Result<()> {
    let cluster = ten_agent_example(ten_agent_material_positions(5.0), 4.0, 4.0)?;
    let wm = build_weight_matrix(&cluster)?;

    let pose = VrbPose::identity([0.0, 0.0, 100.0]);
    let mut state = ClusterState::at_rest(&cluster, &pose);
    // scatter the followers before letting the protocol pull them back
    for j in (cluster.dimension + 1)..cluster.material_positions.len() {
        state.positions[j][0] += 3.0 * (j as f64 - 6.0);
        state.positions[j][1] -= 2.0;
    }

    let rate = VrbPoseRate::zero();
    let dt = 0.02;
    for step in 0..=6000 {
        if step % 1500 == 0 {
            let worst = worst_follower_error(&cluster, &wm, &state, &pose);
            println!("t = {:6.1}s  worst follower error = {worst:.3e} m", step as f64 * dt);
        }
        if step < 6000 {
            state = step_agents(&cluster, &state, &pose, &rate, dt)?;
        }
    }
    Ok(())
}

fn worst_follower_error(
    cluster: &utmflow::microscopic::Cluster,
    wm: &utmflow::microscopic::WeightMatrix,
    state: &ClusterState,
    pose: &VrbPose,
) -> f64 {
    let d = cluster.dimension;
    let desired = utmflow::microscopic::global_desired_positions(cluster, pose);
    let leaders: Vec<[f64; 3]> = desired[..=d].to_vec();
    let fixed = containment_fixed_point(wm, &leaders).unwrap();
    let mut worst = 0.0f64;
    for (j, target) in fixed.iter().enumerate() {
        let p = state.positions[d + 1 + j];
        let e = ((p[0] - target[0]).powi(2)
            + (p[1] - target[1]).powi(2)
            + (p[2] - target[2]).powi(2))
        .sqrt();
        worst = worst.max(e);
    }
    worst
}
