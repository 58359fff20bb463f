use std::fmt::Write as _;

use super::{validate_tree, ArticTree, JointKind};
use crate::error::{Error, Result};

const EFFORT: f64 = 100.0;
const VELOCITY: f64 = 1.0;

fn xyz(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// URDF 1.0 text for `tree`. `meshes[i]` is the relative path of node `i`'s
/// OBJ file in rest-pose global coordinates, or `None` for no visual.
///
/// Each link frame sits at its joint origin with identity orientation, so
/// visuals are offset by `-o` and joint origins are `o - o_parent`. Joints
/// that both slide and turn are split into a prismatic joint into a
/// massless `*_slide` link followed by a revolute joint; the two motions
/// share one axis and therefore commute.
pub fn export_urdf(tree: &ArticTree, name: &str, meshes: &[Option<String>]) -> Result<String> {
    if let Some(v) = validate_tree(tree).first() {
        return Err(Error::InvalidTree(v.to_string()));
    }
    let origin = |i: usize| {
        if tree.nodes[i].parent.is_none() {
            [0.0; 3]
        } else {
            tree.nodes[i].origin()
        }
    };
    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\"?>");
    let _ = writeln!(s, "<robot name=\"{}\">", escape(name));
    for (i, n) in tree.nodes.iter().enumerate() {
        let o = origin(i);
        let _ = writeln!(s, "  <link name=\"link_{i}\">");
        let _ = writeln!(s, "    <!-- {} -->", escape(&n.label).replace("--", "- -"));
        if let Some(Some(path)) = meshes.get(i) {
            let _ = writeln!(s, "    <visual>");
            let _ = writeln!(s, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", xyz(o.map(|v| -v)));
            let _ = writeln!(s, "      <geometry>");
            let _ = writeln!(s, "        <mesh filename=\"{}\"/>", escape(path));
            let _ = writeln!(s, "      </geometry>");
            let _ = writeln!(s, "    </visual>");
        }
        let _ = writeln!(s, "  </link>");
        if n.parent.is_some() && n.joint_kind() == JointKind::Mixed {
            let _ = writeln!(s, "  <link name=\"link_{i}_slide\"/>");
        }
    }
    for (i, n) in tree.nodes.iter().enumerate() {
        let Some(p) = n.parent else { continue };
        let (o, op) = (origin(i), origin(p));
        let rel = [o[0] - op[0], o[1] - op[1], o[2] - op[2]];
        let [t0, t1, r0, r1] = n.limit;
        let axis = n.direction();
        let parent = format!("link_{p}");
        let child = format!("link_{i}");
        match n.joint_kind() {
            JointKind::Fixed => joint(&mut s, &format!("joint_{i}"), "fixed", &parent, &child, rel, None),
            JointKind::Revolute => joint(&mut s, &format!("joint_{i}"), "revolute", &parent, &child, rel, Some((axis, r0, r1))),
            JointKind::Prismatic => joint(&mut s, &format!("joint_{i}"), "prismatic", &parent, &child, rel, Some((axis, t0, t1))),
            JointKind::Mixed => {
                let mid = format!("link_{i}_slide");
                joint(&mut s, &format!("joint_{i}_slide"), "prismatic", &parent, &mid, rel, Some((axis, t0, t1)));
                joint(&mut s, &format!("joint_{i}"), "revolute", &mid, &child, [0.0; 3], Some((axis, r0, r1)));
            }
        }
    }
    let _ = writeln!(s, "</robot>");
    Ok(s)
}

fn joint(
    s: &mut String,
    name: &str,
    kind: &str,
    parent: &str,
    child: &str,
    origin: [f64; 3],
    motion: Option<([f64; 3], f64, f64)>,
) {
    let _ = writeln!(s, "  <joint name=\"{name}\" type=\"{kind}\">");
    let _ = writeln!(s, "    <parent link=\"{parent}\"/>");
    let _ = writeln!(s, "    <child link=\"{child}\"/>");
    let _ = writeln!(s, "    <origin xyz=\"{}\" rpy=\"0 0 0\"/>", xyz(origin));
    if let Some((axis, lo, hi)) = motion {
        let _ = writeln!(s, "    <axis xyz=\"{}\"/>", xyz(axis));
        let _ = writeln!(
            s,
            "    <limit lower=\"{lo}\" upper=\"{hi}\" effort=\"{EFFORT}\" velocity=\"{VELOCITY}\"/>"
        );
    }
    let _ = writeln!(s, "  </joint>");
}
