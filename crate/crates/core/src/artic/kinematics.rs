use nalgebra::{Matrix4, Rotation3, Translation3, Unit, Vector3};
use rand::Rng;

use super::ArticTree;

/// Translation along and rotation about one joint axis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointState {
    pub t: f64,
    pub r: f64,
}

/// `Tr(o) · Rot(d, r) · Tr(-o) · Tr(d t)`: slide along the axis, then turn
/// about the axis line through `o` (right-hand rule).
pub fn joint_transform(joint: &[f64; 6], state: JointState) -> Matrix4<f64> {
    let o = Vector3::new(joint[0], joint[1], joint[2]);
    let d = Vector3::new(joint[3], joint[4], joint[5]);
    let slide = Translation3::from(d * state.t).to_homogeneous();
    if state.r == 0.0 {
        return slide;
    }
    let Some(axis) = Unit::try_new(d, 1e-12) else {
        return slide;
    };
    let rot = Rotation3::from_axis_angle(&axis, state.r).to_homogeneous();
    Translation3::from(o).to_homogeneous() * rot * Translation3::from(-o).to_homogeneous() * slide
}

/// Global transform of every node. The root never moves.
pub fn pose(tree: &ArticTree, states: &[JointState]) -> Vec<Matrix4<f64>> {
    let mut out: Vec<Matrix4<f64>> = Vec::with_capacity(tree.len());
    for (i, n) in tree.nodes.iter().enumerate() {
        let m = match n.parent {
            None => Matrix4::identity(),
            Some(p) => out[p] * joint_transform(&n.joint, states.get(i).copied().unwrap_or_default()),
        };
        out.push(m);
    }
    out
}

/// Per-node states interpolated linearly between the lower and upper limits.
pub fn openness_states(tree: &ArticTree, rho: f64) -> Vec<JointState> {
    tree.nodes
        .iter()
        .map(|n| {
            let [t0, t1, r0, r1] = n.limit;
            JointState {
                t: t0 + rho * (t1 - t0),
                r: r0 + rho * (r1 - r0),
            }
        })
        .collect()
}

pub fn pose_at_openness(tree: &ArticTree, rho: f64) -> Vec<Matrix4<f64>> {
    pose(tree, &openness_states(tree, rho))
}

/// Independent uniform draws inside each joint's limits.
pub fn sample_states<R: Rng + ?Sized>(tree: &ArticTree, rng: &mut R) -> Vec<JointState> {
    tree.nodes
        .iter()
        .map(|n| {
            let [t0, t1, r0, r1] = n.limit;
            JointState {
                t: t0 + rng.gen::<f64>() * (t1 - t0),
                r: r0 + rng.gen::<f64>() * (r1 - r0),
            }
        })
        .collect()
}
