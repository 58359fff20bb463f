use std::fmt;

use super::ArticTree;

const UNIT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    MissingRoot,
    MultipleRoots,
    ForwardParent,
    NonFinite,
    BboxOrder,
    NonUnitDirection,
    LimitOrder,
    LatentWidth,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::MissingRoot => "missing root",
            Rule::MultipleRoots => "multiple roots",
            Rule::ForwardParent => "forward parent reference",
            Rule::NonFinite => "non-finite value",
            Rule::BboxOrder => "bbox min exceeds max",
            Rule::NonUnitDirection => "non-unit direction",
            Rule::LimitOrder => "limit lower bound exceeds upper",
            Rule::LatentWidth => "latent width differs from node 0",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub node: usize,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at node {}", self.rule, self.node)
    }
}

/// Every broken invariant, in node order. An empty tree has no root.
pub fn validate_tree(tree: &ArticTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |node, rule| out.push(Violation { node, rule });
    if tree.nodes.is_empty() {
        push(0, Rule::MissingRoot);
        return out;
    }
    let d_z = tree.nodes[0].z.len();
    let mut seen_root = false;
    for (i, n) in tree.nodes.iter().enumerate() {
        match n.parent {
            None if seen_root => push(i, Rule::MultipleRoots),
            None => seen_root = true,
            Some(p) if p >= i => push(i, Rule::ForwardParent),
            Some(_) => {}
        }
        let finite = n.bbox.iter().chain(&n.z).chain(&n.joint).chain(&n.limit).all(|v| v.is_finite());
        if !finite {
            push(i, Rule::NonFinite);
            continue;
        }
        if (0..3).any(|k| n.bbox[k] > n.bbox[k + 3]) {
            push(i, Rule::BboxOrder);
        }
        let d = n.direction();
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            push(i, Rule::NonUnitDirection);
        }
        if n.limit[0] > n.limit[1] || n.limit[2] > n.limit[3] {
            push(i, Rule::LimitOrder);
        }
        if n.z.len() != d_z {
            push(i, Rule::LatentWidth);
        }
    }
    if !seen_root {
        push(0, Rule::MissingRoot);
    }
    out
}
