use std::f64::consts::FRAC_PI_2;

use artkit::artic::{ArticTree, JointState, PartNode};
use artkit::dataset::{generate_corpus, PartShape};
use artkit::metrics::*;
use artkit_geometry::sdf::Cuboid;
use artkit_geometry::{sample_surface, Mesh, VoxelGrid};
use artkit_tensor::Rng;
use rand::Rng as _;

const UP: [f64; 6] = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];

fn part(parent: Option<usize>, bbox: [f64; 6], joint: [f64; 6], limit: [f64; 4]) -> PartNode {
    PartNode {
        parent,
        label: "box".into(),
        bbox,
        z: Vec::new(),
        joint,
        limit,
    }
}

fn boxes(name: &str, nodes: Vec<PartNode>) -> ObjectGeometry {
    let parts = nodes.iter().map(|_| PartGeometry::Analytic(PartShape::Box { rounding: 0.0 })).collect();
    ObjectGeometry::new(name, ArticTree::new(nodes), parts).unwrap()
}

fn cfg() -> EvalConfig {
    EvalConfig {
        voxel_res: 64,
        surface_samples: 1024,
        ..EvalConfig::default()
    }
}

#[test]
fn viou_of_identical_and_disjoint_grids() {
    let a = VoxelGrid::from_sdf(&Cuboid::from_bounds([-0.5; 3], [0.0; 3]), [-1.0; 3], 2.0 / 32.0, 32).unwrap();
    let b = VoxelGrid::from_sdf(&Cuboid::from_bounds([0.2; 3], [0.9; 3]), [-1.0; 3], 2.0 / 32.0, 32).unwrap();
    assert_eq!(viou(&a, &a).unwrap(), 1.0);
    assert_eq!(viou(&a, &b).unwrap(), 0.0);
    let empty = VoxelGrid::empty([-1.0; 3], 2.0 / 32.0, 32).unwrap();
    assert_eq!(viou(&empty, &empty).unwrap(), 0.0);
    let other = VoxelGrid::empty([0.0; 3], 2.0 / 32.0, 32).unwrap();
    assert!(viou(&a, &other).is_err());
}

#[test]
fn half_overlapping_cubes_have_iou_one_third() {
    let (origin, cell) = VoxelGrid::frame([-0.5; 3], [1.0, 0.5, 0.5], 128).unwrap();
    let a = VoxelGrid::from_sdf(&Cuboid::from_bounds([-0.5; 3], [0.5; 3]), origin, cell, 128).unwrap();
    let b = VoxelGrid::from_sdf(&Cuboid::from_bounds([0.0, -0.5, -0.5], [1.0, 0.5, 0.5]), origin, cell, 128).unwrap();
    let v = viou(&a, &b).unwrap();
    assert!((v - 1.0 / 3.0).abs() < 0.02 / 3.0, "{v}");
}

#[test]
fn por_corner_cases() {
    let single = boxes("one", vec![part(None, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0], UP, [0.0; 4])]);
    assert_eq!(por(&single, &cfg()).unwrap(), 0.0);
    let apart = boxes(
        "apart",
        vec![part(None, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0], UP, [0.0; 4]), part(Some(0), [2.0, 0.0, 0.0, 3.0, 1.0, 1.0], UP, [0.0; 4])],
    );
    assert_eq!(por(&apart, &cfg()).unwrap(), 0.0);
    let same = boxes(
        "same",
        vec![part(None, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0], UP, [0.0; 4]), part(Some(0), [0.0, 0.0, 0.0, 1.0, 1.0, 1.0], UP, [0.0; 4])],
    );
    assert_eq!(por(&same, &cfg()).unwrap(), 1.0);
}

#[test]
fn sliding_into_a_neighbour_is_measured() {
    // A cube slides by t ∈ [0, 1] into its neighbour: IoU (t) / (2 - t),
    // whose mean over a uniform t is 2 ln 2 - 1.
    let obj = boxes(
        "slide",
        vec![
            part(None, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0], UP, [0.0; 4]),
            part(Some(0), [1.0, 0.0, 0.0, 2.0, 1.0, 1.0], [0.0, 0.0, 0.0, -1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]),
        ],
    );
    let half = mean_interpenetration(&obj, &[JointState::default(), JointState { t: 0.5, r: 0.0 }], 96).unwrap();
    assert!((half - 1.0 / 3.0).abs() < 0.02, "{half}");
    let c = EvalConfig {
        joint_states: 400,
        voxel_res: 48,
        ..cfg()
    };
    let p = por(&obj, &c).unwrap();
    assert!((p - (2.0 * 2f64.ln() - 1.0)).abs() < 0.03, "{p}");
}

fn shifted(obj: &ObjectGeometry, by: [f64; 3]) -> ObjectGeometry {
    let mut t = obj.tree.clone();
    for n in &mut t.nodes {
        for k in 0..3 {
            n.bbox[k] += by[k];
            n.bbox[k + 3] += by[k];
            n.joint[k] += by[k];
        }
    }
    ObjectGeometry::new(obj.name.clone(), t, obj.parts.clone()).unwrap()
}

#[test]
fn por_is_in_range_and_moves_with_the_object() {
    let door = boxes(
        "door",
        vec![
            part(None, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0], UP, [0.0; 4]),
            part(Some(0), [0.0, -0.1, 0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -FRAC_PI_2, FRAC_PI_2]),
        ],
    );
    let a = por(&door, &cfg()).unwrap();
    let b = por(&shifted(&door, [3.0, -1.5, 0.25]), &cfg()).unwrap();
    assert!(a > 0.0 && a < 1.0, "{a}");
    assert!((a - b).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn corpus_objects_do_not_overlap_at_rest() {
    for obj in generate_corpus(40, 3).unwrap() {
        let g = ObjectGeometry::from_corpus(&obj);
        let rest = vec![JointState::default(); g.tree.len()];
        assert_eq!(mean_interpenetration(&g, &rest, 64).unwrap(), 0.0, "{}", obj.id);
    }
}

#[test]
fn instantiation_distance_basics() {
    let objs = generate_corpus(3, 1).unwrap();
    let c = cfg();
    let sigs: Vec<IdSignature> = objs.iter().map(|o| id_signature(&ObjectGeometry::from_corpus(o), &c).unwrap()).collect();
    let again = id_signature(&ObjectGeometry::from_corpus(&objs[0]), &c).unwrap();
    assert!(instantiation_distance(&sigs[0], &again) < 1e-3);
    let (ab, ba) = (instantiation_distance(&sigs[0], &sigs[1]), instantiation_distance(&sigs[1], &sigs[0]));
    assert!((ab - ba).abs() < 1e-12);
    assert!(ab > 1e-3);
    // Uniform scaling is normalized away.
    let mut big = ObjectGeometry::from_corpus(&objs[1]);
    for n in &mut big.tree.nodes {
        n.bbox = n.bbox.map(|v| 2.5 * v);
        for v in &mut n.joint[..3] {
            *v *= 2.5;
        }
        n.limit[0] *= 2.5;
        n.limit[1] *= 2.5;
    }
    let scaled = id_signature(&big, &c).unwrap();
    assert!(instantiation_distance(&sigs[1], &scaled) < 1e-3);
}

#[test]
fn chamfer_grows_with_offset() {
    let cube = artkit_geometry::marching_cubes(&Cuboid::from_bounds([-0.5; 3], [0.5; 3]), [-0.75; 3], [0.75; 3], 24, 0.0).unwrap();
    let sig = |mesh: &Mesh| {
        let mut rng = Rng::seed(4);
        IdSignature::new("cube", vec![sample_surface(mesh, 2048, &mut rng).unwrap()]).unwrap()
    };
    let base = sig(&cube);
    let mut last = instantiation_distance(&base, &base);
    for t in [0.1, 0.2, 0.3] {
        let mut m = cube.clone();
        m.map_box([-0.5; 3], [0.5; 3], [t - 0.5, -0.5, -0.5], [t + 0.5, 0.5, 0.5]);
        let d = instantiation_distance(&base, &sig(&m));
        assert!(d > last, "{t}: {d} <= {last}");
        last = d;
    }
}

#[test]
fn empty_geometry_names_the_object() {
    let parts = vec![PartGeometry::Grid(std::sync::Arc::new(artkit_geometry::ScalarGrid::sample(&|_: [f64; 3]| 1.0, [-1.0; 3], [1.0; 3], 8).unwrap()))];
    let obj = ObjectGeometry::new("ghost", ArticTree::new(vec![part(None, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0], UP, [0.0; 4])]), parts).unwrap();
    let e = id_signature(&obj, &cfg()).err().unwrap().to_string();
    assert!(e.contains("ghost"), "{e}");
}

/// Pools both sets into one matrix and applies the definitions directly.
fn brute_force(d: &DistanceMatrices) -> SetMetrics {
    let (ng, nr) = (d.gen_gen.len(), d.ref_ref.len());
    let mut mmd = 0.0;
    for r in 0..nr {
        let mut best = f64::INFINITY;
        for g in 0..ng {
            if d.gen_ref[g][r] < best {
                best = d.gen_ref[g][r];
            }
        }
        mmd += best;
    }
    let mut hit = vec![0usize; nr];
    for g in 0..ng {
        let mut best = 0;
        for r in 1..nr {
            if d.gen_ref[g][r] < d.gen_ref[g][best] {
                best = r;
            }
        }
        hit[best] += 1;
    }
    let n = ng + nr;
    let dist = |a: usize, b: usize| match (a < ng, b < ng) {
        (true, true) => d.gen_gen[a][b],
        (true, false) => d.gen_ref[a][b - ng],
        (false, true) => d.gen_ref[b][a - ng],
        (false, false) => d.ref_ref[a - ng][b - ng],
    };
    let mut correct = 0;
    for a in 0..n {
        let nearest = (0..n).filter(|&b| b != a).map(|b| dist(a, b)).fold(f64::INFINITY, f64::min);
        let sets: Vec<bool> = (0..n).filter(|&b| b != a && dist(a, b) == nearest).map(|b| b < ng).collect();
        if sets.iter().all(|&s| s == (a < ng)) {
            correct += 1;
        }
    }
    SetMetrics {
        mmd: mmd / nr as f64,
        cov: hit.iter().filter(|&&h| h > 0).count() as f64 / nr as f64,
        nna: correct as f64 / n as f64,
    }
}

fn random_matrices(ng: usize, nr: usize, rng: &mut Rng, quantize: bool) -> DistanceMatrices {
    let mut draw = |r: usize, c: usize, sym: bool| {
        let mut m = vec![vec![0.0; c]; r];
        for i in 0..r {
            for j in 0..c {
                if sym && j < i {
                    m[i][j] = m[j][i];
                } else if !(sym && i == j) {
                    let v: f64 = rng.gen();
                    m[i][j] = if quantize { (v * 4.0).floor() } else { v };
                }
            }
        }
        m
    };
    DistanceMatrices {
        gen_ref: draw(ng, nr, false),
        gen_gen: draw(ng, ng, true),
        ref_ref: draw(nr, nr, true),
    }
}

#[test]
fn set_metrics_match_brute_force() {
    let mut rng = Rng::seed(11);
    for trial in 0..200 {
        let (ng, nr) = (1 + trial % 20, 2 + (trial * 7) % 19);
        let d = random_matrices(ng.max(2), nr, &mut rng, trial % 3 == 0);
        assert_eq!(set_metrics(&d), brute_force(&d), "trial {trial}");
    }
}

#[test]
fn identical_sets_have_zero_mmd_and_full_coverage() {
    let mut rng = Rng::seed(2);
    let pts: Vec<f64> = (0..12).map(|_| rng.gen::<f64>()).collect();
    let m: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| (a - b).abs()).collect()).collect();
    let d = DistanceMatrices {
        gen_ref: m.clone(),
        gen_gen: m.clone(),
        ref_ref: m,
    };
    let s = set_metrics(&d);
    assert_eq!(s.mmd, 0.0);
    assert_eq!(s.cov, 1.0);
    // Every item's twin in the other set is at distance zero.
    assert_eq!(s.nna, 0.0);
}

#[test]
fn a_single_far_item_covers_one_reference() {
    let refs = 7;
    let d = DistanceMatrices {
        gen_ref: vec![(0..refs).map(|r| 100.0 + r as f64).collect()],
        gen_gen: vec![vec![0.0]],
        ref_ref: (0..refs).map(|a| (0..refs).map(|b| (a as f64 - b as f64).abs()).collect()).collect(),
    };
    assert_eq!(set_metrics(&d).cov, 1.0 / refs as f64);
}

#[test]
fn ties_count_against_the_query() {
    let d = DistanceMatrices {
        gen_ref: vec![vec![1.0, 5.0], vec![5.0, 5.0]],
        gen_gen: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ref_ref: vec![vec![0.0, 5.0], vec![5.0, 0.0]],
    };
    // gen 0: same 1, other 1 (tie, wrong); gen 1: same 1 < 5 (right);
    // ref 0: same 5 > 1 (wrong); ref 1: same 5 = 5 (tie, wrong).
    assert_eq!(set_metrics(&d).nna, 0.25);
}
