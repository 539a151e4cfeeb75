mod common;

use common::{brute_closest, brute_ray, faces_clear_of_border, rng, unit};
use proptest::prelude::*;
use rand::Rng;
use surfdefect_core::evaluation::border_mask;
use surfdefect_core::mesh::{
    add_spherical_defect, example_mesh, generate_tablet, parse_stl, write_stl, Protrusion, SphericalDefect, StlFormat,
};
use surfdefect_core::raycast::{build_bvh, closest_point_correspondence, ray_correspondence};
use surfdefect_core::{Point, TriMesh, Vec3};

fn random_soup(seed: u64, n: usize, quantize: bool) -> TriMesh {
    let mut r = rng(seed);
    let c = |r: &mut rand_chacha::ChaCha8Rng| {
        let v: f64 = r.random_range(-1.0..1.0);
        if quantize {
            v as f32 as f64
        } else {
            v
        }
    };
    let mut vertices = Vec::with_capacity(3 * n);
    let mut faces = Vec::with_capacity(n);
    while faces.len() < n {
        let tri: Vec<Point> = (0..3).map(|_| Point::new(c(&mut r), c(&mut r), c(&mut r))).collect();
        if (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-4 {
            continue;
        }
        let base = vertices.len();
        vertices.extend(tri);
        faces.push([base, base + 1, base + 2]);
    }
    TriMesh::new(vertices, faces).unwrap()
}

fn bumpy_tablet() -> TriMesh {
    let flat = generate_tablet(0.06, 0.04, 0.002).unwrap();
    let d = SphericalDefect::hemisphere([0.005, -0.003], 0.008, Protrusion::Outward);
    add_spherical_defect(&flat, &d).unwrap()
}

#[test]
fn bvh_rays_match_brute_force() {
    let meshes = [random_soup(11, 300, false), bumpy_tablet()];
    let mut r = rng(5);
    let mut hits = 0;
    for (m, mesh) in meshes.iter().enumerate() {
        let bvh = build_bvh(mesh).unwrap();
        bvh.validate(mesh).unwrap();
        for _ in 0..5000 {
            let o = if m == 0 {
                Point::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5), r.random_range(-1.5..1.5))
            } else {
                Point::new(r.random_range(-0.05..0.05), r.random_range(-0.04..0.04), r.random_range(0.02..0.3))
            };
            let d = if m == 0 {
                unit(&mut r)
            } else {
                (Point::new(r.random_range(-0.04..0.04), r.random_range(-0.03..0.03), 0.0) - o).normalize()
            };
            let fast = bvh.intersect(mesh, &o, &d, 0.0, f64::INFINITY);
            let slow = brute_ray(mesh, &o, &d, 0.0, f64::INFINITY);
            match (fast, slow) {
                (None, None) => {}
                (Some(f), Some((j, t))) => {
                    hits += 1;
                    assert!((f.t - t).abs() <= 1e-9, "t {} vs {t}", f.t);
                    if f.face != j {
                        // Only acceptable on a shared edge or vertex: both faces reach the same point.
                        let other = brute_ray(&TriMesh::new(mesh.triangle(f.face).to_vec(), vec![[0, 1, 2]]).unwrap(), &o, &d, 0.0, f64::INFINITY);
                        assert!(other.is_some_and(|(_, t2)| (t2 - t).abs() <= 1e-9));
                        assert!(f.face < j, "ties go to the lowest face");
                    }
                    assert!((f.point - (o + d * f.t)).norm() <= 1e-12);
                }
                (f, s) => panic!("bvh {f:?} vs brute {s:?} for ray {o:?} {d:?}"),
            }
        }
    }
    assert!(hits > 2000, "too few hits to be meaningful: {hits}");
}

#[test]
fn bvh_closest_points_match_brute_force() {
    let mut r = rng(9);
    for mesh in [random_soup(12, 200, false), bumpy_tablet()] {
        let bvh = build_bvh(&mesh).unwrap();
        for _ in 0..1000 {
            let p = Point::new(r.random_range(-1.2..1.2), r.random_range(-1.2..1.2), r.random_range(-1.2..1.2)) * 0.05;
            let hit = bvh.closest_point(&mesh, &p).unwrap();
            let (_, d) = brute_closest(&mesh, &p);
            assert!((hit.distance - d).abs() <= 1e-12, "{} vs {d}", hit.distance);
            assert!(((hit.point - p).norm() - d).abs() <= 1e-12);
        }
    }
}

#[test]
fn points_on_the_surface_are_at_zero_distance() {
    let mesh = bumpy_tablet();
    let bvh = build_bvh(&mesh).unwrap();
    let mut r = rng(21);
    for _ in 0..2000 {
        let j = r.random_range(0..mesh.n_faces());
        let [a, b, c] = mesh.triangle(j);
        let (mut u, mut v): (f64, f64) = (r.random(), r.random());
        if u + v > 1.0 {
            (u, v) = (1.0 - u, 1.0 - v);
        }
        let p = a + (b - a) * u + (c - a) * v;
        let hit = bvh.closest_point(&mesh, &p).unwrap();
        assert!(hit.distance <= 1e-15, "face {j}: {}", hit.distance);
        assert!((hit.point - p).norm() <= 1e-15);
    }
}

#[test]
fn binary_stl_records_survive_round_trip() {
    let mesh = random_soup(3, 1000, true);
    let first = write_stl(&mesh, StlFormat::Binary, None);
    assert_eq!(first.len(), 84 + 50 * 1000);
    let parsed = parse_stl(&first).unwrap();
    assert_eq!(parsed.n_faces(), 1000);
    let second = write_stl(&parsed, StlFormat::Binary, None);
    assert_eq!(first[80..], second[80..]);
}

#[test]
fn example_mesh_round_trips_in_ascii() {
    let m = example_mesh();
    let text = write_stl(&m, StlFormat::Ascii, None);
    let s = String::from_utf8(text.clone()).unwrap();
    assert_eq!(s.matches("facet normal").count(), 3);
    let back = parse_stl(&text).unwrap();
    assert!(back.same_face_geometry(&m));
    for j in 0..3 {
        assert_eq!(back.face_normal(j).unwrap(), Vec3::z());
    }
}

#[test]
fn border_count_matches_counting_oracle() {
    let t = generate_tablet(0.16, 0.10, 0.005).unwrap();
    let mask = border_mask(&t, 0.006);
    let oracle = faces_clear_of_border(&t, 0.08, 0.05, 0.006);
    assert_eq!(mask.n_selected, oracle);
    // 29 × 17 vertex lattice clear of a 6 mm band → 28 × 16 cells of two triangles.
    assert_eq!(oracle, 28 * 16 * 2);
    for border in [0.0, 0.005, 0.01, 0.02] {
        assert_eq!(border_mask(&t, border).n_selected, faces_clear_of_border(&t, 0.08, 0.05, border));
    }
}

#[test]
fn correspondence_offset_along_normal_is_exact() {
    let t = bumpy_tablet();
    let bvh = build_bvh(&t).unwrap();
    let mut r = rng(2);
    for _ in 0..200 {
        let j = r.random_range(0..t.n_faces());
        let n = t.face_normal(j).unwrap();
        let [a, b, c] = t.triangle(j);
        let (u, v) = (r.random_range(0.1..0.4), r.random_range(0.1..0.4));
        let foot = a + (b - a) * u + (c - a) * v;
        let s = r.random_range(1e-5..1e-4);
        let p = foot + n * s;
        let camera = foot + n * 0.1;
        let c = ray_correspondence(&bvh, &t, &p, &camera).unwrap();
        if c.face_index == j {
            assert!((c.signed_offset - s).abs() <= 1e-12, "{} vs {s}", c.signed_offset);
            assert!((c.footpoint - foot).norm() <= 1e-12);
        }
        let cp = closest_point_correspondence(&bvh, &t, &p).unwrap();
        assert!(cp.border_distance >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bvh_agrees_with_scan_on_random_soups(seed in 0u64..10_000, n in 1usize..60) {
        let mesh = random_soup(seed, n, false);
        let bvh = build_bvh(&mesh).unwrap();
        let mut r = rng(seed ^ 0xabc);
        for _ in 0..50 {
            let o = Point::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            let d = unit(&mut r);
            let fast = bvh.intersect(&mesh, &o, &d, 0.0, f64::INFINITY).map(|h| h.t);
            let slow = brute_ray(&mesh, &o, &d, 0.0, f64::INFINITY).map(|h| h.1);
            match (fast, slow) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
                (a, b) => prop_assert_eq!(a, b),
            }
            let cp = bvh.closest_point(&mesh, &o).unwrap().distance;
            prop_assert!((cp - brute_closest(&mesh, &o).1).abs() <= 1e-12);
        }
    }

    #[test]
    fn stl_round_trip_preserves_face_geometry(seed in 0u64..10_000, n in 1usize..40, ascii in any::<bool>()) {
        let mesh = random_soup(seed, n, true);
        let fmt = if ascii { StlFormat::Ascii } else { StlFormat::Binary };
        let back = parse_stl(&write_stl(&mesh, fmt, None)).unwrap();
        prop_assert!(back.same_face_geometry(&mesh));
    }
}
