use serde::{Deserialize, Serialize};

use crate::artic::ArticTree;
use crate::dataset::canonical_cmp;
use crate::error::{Error, Result};

/// What a context token should produce in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Emit this node as a child.
    Child(usize),
    /// Stop producing children.
    Terminal,
    /// Already stopped; present as context only.
    Closed,
}

/// One teacher-forced round: the nodes visible as context (after the start
/// token) and a target for the start token followed by each of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Round {
    pub round: usize,
    pub context: Vec<usize>,
    pub targets: Vec<Target>,
}

/// Children of every node in canonical order (bbox centers compared by z,
/// then y, then x).
pub fn ordered_children(tree: &ArticTree) -> Vec<Vec<usize>> {
    (0..tree.len())
        .map(|i| {
            let mut c = tree.children(i);
            c.sort_by(|&a, &b| canonical_cmp(&tree.nodes[a].bbox, &tree.nodes[b].bbox).then(a.cmp(&b)));
            c
        })
        .collect()
}

/// Round in which each node is emitted: the root in round 1, and the k-th
/// child of a node `k` rounds after its parent.
pub fn emission_rounds(tree: &ArticTree) -> Vec<usize> {
    let children = ordered_children(tree);
    let mut round = vec![0; tree.len()];
    if tree.is_empty() {
        return round;
    }
    round[0] = 1;
    // Parents precede children, so one forward pass suffices.
    for i in 0..tree.len() {
        for (k, &c) in children[i].iter().enumerate() {
            round[c] = round[i] + k + 1;
        }
    }
    round
}

/// Every round needed to rebuild `tree` one child per open token per
/// round, ending with the round in which the last token turns terminal.
pub fn teacher_forcing_rounds(tree: &ArticTree) -> Result<Vec<Round>> {
    if tree.is_empty() {
        return Err(Error::InvalidTree("no nodes to teach".into()));
    }
    let children = ordered_children(tree);
    let emitted = emission_rounds(tree);
    let last = (0..tree.len())
        .map(|i| emitted[i] + children[i].len() + 1)
        .max()
        .unwrap_or(2)
        .max(2);
    let mut rounds = Vec::with_capacity(last);
    for r in 1..=last {
        let context: Vec<usize> = (0..tree.len()).filter(|&i| emitted[i] < r).collect();
        let mut targets = Vec::with_capacity(context.len() + 1);
        targets.push(match r {
            1 => Target::Child(0),
            2 => Target::Terminal,
            _ => Target::Closed,
        });
        for &i in &context {
            let k = r - emitted[i];
            targets.push(match k.cmp(&(children[i].len() + 1)) {
                std::cmp::Ordering::Less => Target::Child(children[i][k - 1]),
                std::cmp::Ordering::Equal => Target::Terminal,
                std::cmp::Ordering::Greater => Target::Closed,
            });
        }
        rounds.push(Round { round: r, context, targets });
    }
    Ok(rounds)
}
