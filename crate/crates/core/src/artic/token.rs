use super::PartNode;
use crate::error::{Error, Result};

/// `1 + 6 + d_z + 6 + 4`.
pub fn token_len(d_z: usize) -> usize {
    1 + 6 + d_z + 6 + 4
}

/// `[parent, bbox, z, joint, limit]`, with the root's parent written as -1.
pub fn pack_token(node: &PartNode, d_z: usize) -> Result<Vec<f64>> {
    if node.z.len() != d_z {
        return Err(Error::Dimension {
            what: "latent",
            expected: d_z,
            got: node.z.len(),
        });
    }
    let mut out = Vec::with_capacity(token_len(d_z));
    out.push(node.parent.map_or(-1.0, |p| p as f64));
    out.extend_from_slice(&node.bbox);
    out.extend_from_slice(&node.z);
    out.extend_from_slice(&node.joint);
    out.extend_from_slice(&node.limit);
    Ok(out)
}

pub fn unpack_token(token: &[f64], d_z: usize, label: &str) -> Result<PartNode> {
    if token.len() != token_len(d_z) {
        return Err(Error::Dimension {
            what: "token",
            expected: token_len(d_z),
            got: token.len(),
        });
    }
    let fa = token[0];
    let parent = if fa == -1.0 {
        None
    } else if fa >= 0.0 && fa.fract() == 0.0 {
        Some(fa as usize)
    } else {
        return Err(Error::parse(format!("parent slot {fa} is not an index")));
    };
    let mut bbox = [0.0; 6];
    bbox.copy_from_slice(&token[1..7]);
    let z = token[7..7 + d_z].to_vec();
    let mut joint = [0.0; 6];
    joint.copy_from_slice(&token[7 + d_z..13 + d_z]);
    let mut limit = [0.0; 4];
    limit.copy_from_slice(&token[13 + d_z..17 + d_z]);
    Ok(PartNode {
        parent,
        label: label.to_string(),
        bbox,
        z,
        joint,
        limit,
    })
}
