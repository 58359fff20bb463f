use std::f64::consts::PI;

use artkit_geometry::sdf::{Cuboid, Cylinder, Sphere, Translated, Union};
use artkit_geometry::{
    chamfer, chamfer_brute_force, marching_cubes, read_points, sample_surface, write_points, Mesh, Point, Sdf,
    VoxelGrid,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere_mesh(res: usize) -> Mesh {
    marching_cubes(&Sphere { radius: 0.5 }, [-1.0; 3], [1.0; 3], res, 0.0).unwrap()
}

fn radius(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[test]
fn sphere_vertices_near_radius() {
    let m = sphere_mesh(64);
    let cell = 2.0 / 64.0;
    assert!(!m.is_empty());
    assert!(m.vertices.iter().all(|v| (radius(v) - 0.5).abs() <= 2.0 * cell));
}

#[test]
fn sphere_area_matches_analytic() {
    let area = sphere_mesh(64).area();
    let exact = 4.0 * PI * 0.25;
    assert!((area - exact).abs() / exact < 0.05, "{area} vs {exact}");
}

#[test]
fn extracted_surfaces_are_closed_and_outward() {
    let shapes: Vec<Box<dyn Sdf>> = vec![
        Box::new(Sphere { radius: 0.5 }),
        Box::new(Cylinder { radius: 0.3, half_height: 0.6 }),
        Box::new(Union(vec![
            Box::new(Translated { shape: Sphere { radius: 0.3 }, offset: [-0.35, 0.0, 0.0] }),
            Box::new(Translated { shape: Sphere { radius: 0.3 }, offset: [0.35, 0.05, 0.0] }),
        ])),
        // Saddle-rich field that exercises ambiguous faces.
        Box::new(|p: Point| (7.0 * p[0]).sin() * (7.0 * p[1]).sin() * (7.0 * p[2]).sin() - 0.1 + p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - 0.8),
    ];
    for s in &shapes {
        let mut m = marching_cubes(s.as_ref(), [-1.5; 3], [1.5; 3], 30, 0.0).unwrap();
        m.cleanup();
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
    }
}

#[test]
fn constant_positive_field_gives_empty_mesh() {
    let m = marching_cubes(&|_: Point| 1.0, [-1.0; 3], [1.0; 3], 16, 0.0).unwrap();
    assert!(m.is_empty());
}

#[test]
fn marching_cubes_is_deterministic() {
    assert_eq!(sphere_mesh(32), sphere_mesh(32));
}

#[test]
fn low_resolution_is_rejected() {
    assert!(marching_cubes(&Sphere { radius: 0.5 }, [-1.0; 3], [1.0; 3], 4, 0.0).is_err());
}

#[test]
fn samples_lie_on_triangles() {
    let m = sphere_mesh(16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = sample_surface(&m, 500, &mut rng).unwrap();
    // every sample must be on the plane of some triangle
    for p in &pts {
        let on_some = (0..m.triangles.len()).any(|t| {
            let [a, b, c] = m.corners(t);
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let d = ((p[0] - a[0]) * n[0] + (p[1] - a[1]) * n[1] + (p[2] - a[2]) * n[2]) / len;
            d.abs() < 1e-9
        });
        assert!(on_some);
    }
}

#[test]
fn sample_centroid_of_sphere_is_origin() {
    let m = marching_cubes(&Sphere { radius: 1.0 }, [-1.5; 3], [1.5; 3], 48, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = sample_surface(&m, 10_000, &mut rng).unwrap();
    let c = [0, 1, 2].map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64);
    assert!(radius(&c) < 0.05);
}

#[test]
fn sampling_is_deterministic_and_rejects_empty() {
    let m = sphere_mesh(16);
    let a = sample_surface(&m, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = sample_surface(&m, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
    assert!(sample_surface(&Mesh::default(), 4, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
}

fn sphere_voxel_volume(res: usize) -> f64 {
    let (o, c) = VoxelGrid::frame([-0.6; 3], [0.6; 3], res).unwrap();
    VoxelGrid::from_sdf(&Sphere { radius: 0.5 }, o, c, res).unwrap().volume()
}

#[test]
fn voxelized_sphere_volume() {
    let exact = 4.0 / 3.0 * PI * 0.125;
    let v = sphere_voxel_volume(128);
    assert!((v - exact).abs() / exact < 0.02);
    let errs: Vec<f64> = [32, 64, 128].iter().map(|&r| (sphere_voxel_volume(r) - exact).abs()).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn mesh_parity_agrees_with_field() {
    let shape = Cuboid { half: [0.4, 0.3, 0.2] };
    let m = marching_cubes(&shape, [-1.0; 3], [1.0; 3], 40, 0.0).unwrap();
    let (o, c) = VoxelGrid::frame([-0.5; 3], [0.5; 3], 32).unwrap();
    let a = VoxelGrid::from_sdf(&shape, o, c, 32).unwrap();
    let b = VoxelGrid::from_mesh(&m, o, c, 32).unwrap();
    let (inter, union) = a.overlap(&b).unwrap();
    assert!(inter as f64 / union as f64 > 0.9);
}

#[test]
fn chamfer_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let a: Vec<Point> = (0..200).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let b: Vec<Point> = (0..200).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let fast = chamfer(&a, &b).unwrap();
        let slow = chamfer_brute_force(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-12);
    }
}

#[test]
fn obj_and_points_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = sphere_mesh(8);
    m.write_obj(dir.path().join("s.obj")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("s.obj")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), m.triangles.len());
    let pts = vec![[0.5, -0.25, 1.0], [2.0, 0.0, -3.5]];
    write_points(dir.path().join("p.bin"), &pts).unwrap();
    assert_eq!(read_points(dir.path().join("p.bin")).unwrap(), pts);
}

fn cloud() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..40)
}

proptest! {
    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in cloud(), b in cloud()) {
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn union_is_min_of_parts(p in prop::array::uniform3(-2.0f64..2.0)) {
        let a = Translated { shape: Sphere { radius: 0.4 }, offset: [-0.6, 0.0, 0.0] };
        let b = Translated { shape: Cuboid { half: [0.3; 3] }, offset: [0.6, 0.0, 0.0] };
        let u = Union(vec![Box::new(a), Box::new(b)]);
        prop_assert!(u.distance(p) <= a.distance(p).min(b.distance(p)) + 1e-15);
    }

    #[test]
    fn box_sdf_is_exact_on_axes(h in 0.1f64..1.0, x in 0.0f64..3.0) {
        let b = Cuboid { half: [h; 3] };
        prop_assert!((b.distance([x, 0.0, 0.0]) - (x - h)).abs() < 1e-12);
    }
}

#[test]
fn sphere_at_origin() {
    assert_eq!(Sphere { radius: 0.5 }.distance([0.0; 3]), -0.5);
    assert_eq!(Cuboid { half: [0.5; 3] }.distance([1.0, 0.0, 0.0]), 0.5);
}
