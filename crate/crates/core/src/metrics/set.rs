use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::id::{instantiation_distance, IdSignature};

/// Distribution-level scores of a generated set against a reference set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    /// Mean over references of the distance to the closest generated item.
    pub mmd: f64,
    /// Share of references that are the nearest reference of some
    /// generated item.
    pub cov: f64,
    /// Leave-one-out 1-NN accuracy over the pooled, labeled sets. A tie
    /// between the nearest same-set and other-set distance counts as a
    /// misclassification.
    pub nna: f64,
}

/// Dense row-major distance matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrices {
    pub gen_ref: Vec<Vec<f64>>,
    pub gen_gen: Vec<Vec<f64>>,
    pub ref_ref: Vec<Vec<f64>>,
}

fn matrix<F: Fn(usize, usize) -> f64 + Sync>(rows: usize, cols: usize, f: F) -> Vec<Vec<f64>> {
    (0..rows)
        .into_par_iter()
        .map(|i| (0..cols).map(|j| f(i, j)).collect())
        .collect()
}

pub fn id_matrices(gen: &[IdSignature], refs: &[IdSignature]) -> DistanceMatrices {
    DistanceMatrices {
        gen_ref: matrix(gen.len(), refs.len(), |i, j| instantiation_distance(&gen[i], &refs[j])),
        gen_gen: matrix(gen.len(), gen.len(), |i, j| instantiation_distance(&gen[i], &gen[j])),
        ref_ref: matrix(refs.len(), refs.len(), |i, j| instantiation_distance(&refs[i], &refs[j])),
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best
}

pub fn set_metrics(d: &DistanceMatrices) -> SetMetrics {
    let (ng, nr) = (d.gen_gen.len(), d.ref_ref.len());
    if ng == 0 || nr == 0 {
        return SetMetrics {
            mmd: f64::NAN,
            cov: 0.0,
            nna: f64::NAN,
        };
    }
    let mmd = (0..nr)
        .map(|r| (0..ng).map(|g| d.gen_ref[g][r]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / nr as f64;
    let mut matched = vec![false; nr];
    for g in 0..ng {
        if let Some((r, _)) = argmin(d.gen_ref[g].iter().copied()) {
            matched[r] = true;
        }
    }
    let cov = matched.iter().filter(|&&m| m).count() as f64 / nr as f64;
    let mut correct = 0usize;
    for g in 0..ng {
        let same = (0..ng).filter(|&o| o != g).map(|o| d.gen_gen[g][o]).fold(f64::INFINITY, f64::min);
        let other = d.gen_ref[g].iter().copied().fold(f64::INFINITY, f64::min);
        correct += usize::from(same < other);
    }
    for r in 0..nr {
        let same = (0..nr).filter(|&o| o != r).map(|o| d.ref_ref[r][o]).fold(f64::INFINITY, f64::min);
        let other = (0..ng).map(|g| d.gen_ref[g][r]).fold(f64::INFINITY, f64::min);
        correct += usize::from(same < other);
    }
    SetMetrics {
        mmd,
        cov,
        nna: correct as f64 / (ng + nr) as f64,
    }
}
