//! Renderer and back-projection against analytic or brute-force references.

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use matlift::demo::{checker_sphere, concat, strip_quad};
use matlift::lift::backproject;
use matlift::render::{render_view, Bvh};
use matlift::scene::{fibonacci_cameras, Mesh};

/// Möller–Trumbore over every triangle, nearest first, ties to the lower index.
fn brute_force(mesh: &Mesh, origin: DVec3, dir: DVec3) -> Option<(f64, u32)> {
    let mut best: Option<(f64, u32)> = None;
    for i in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(i);
        let (e1, e2) = (b - a, c - a);
        let p = dir.cross(e2);
        let det = e1.dot(p);
        if det.abs() < 1e-14 {
            continue;
        }
        let inv = 1.0 / det;
        let s = origin - a;
        let u = s.dot(p) * inv;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let q = s.cross(e1);
        let v = dir.dot(q) * inv;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        let t = e2.dot(q) * inv;
        if t >= 0.0 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, i as u32));
        }
    }
    best
}

#[test]
fn bvh_matches_brute_force_on_random_rays() {
    let mesh = concat(&[checker_sphere(100, 50, 3, false), strip_quad(1.5, -0.5, 2)]);
    assert!(mesh.triangles.len() >= 9_800, "{} triangles", mesh.triangles.len());
    let bvh = Bvh::build(&mesh).unwrap();
    assert!(bvh.validate());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut hits, mut misses) = (0, 0);
    for _ in 0..1000 {
        let origin = DVec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(2.0..3.0),
        );
        let target = DVec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
        );
        let dir = (target - origin).normalize();
        let got = bvh.intersect(origin, dir, 0.0).map(|h| (h.t, h.triangle));
        let want = brute_force(&mesh, origin, dir);
        match (got, want) {
            (Some((t, tri)), Some((bt, btri))) => {
                assert!((t - bt).abs() < 1e-6, "depth {t} vs {bt}");
                assert_eq!(tri, btri);
                hits += 1;
            }
            (None, None) => misses += 1,
            other => panic!("bvh and brute force disagree: {other:?}"),
        }
    }
    assert!(hits > 100 && misses > 10, "hits {hits} misses {misses}");
}

#[test]
fn sphere_backprojection_lies_on_the_sphere() {
    // 720 x 360 segments keep the tessellation within 1e-4 of the unit sphere
    let mesh = checker_sphere(720, 360, 1, false);
    let bvh = Bvh::build(&mesh).unwrap();
    let radius = 1.0;
    let cams = fibonacci_cameras(30, DVec3::ZERO, 3.0, 40f64.to_radians(), (512, 512)).unwrap();
    let mut views: Vec<_> = cams
        .iter()
        .enumerate()
        .map(|(i, c)| render_view(&mesh, &bvh, format!("v{i}"), c))
        .collect();
    for v in &mut views {
        v.similarity = Some(v.material_id.iter().map(|&m| (m >= 0) as u8 as f32).collect());
    }
    let cloud = backproject(&views, 1).unwrap();
    let fg: usize = views.iter().map(|v| v.foreground_count()).sum();
    assert_eq!(cloud.len(), fg);
    let worst = cloud
        .positions
        .iter()
        .map(|p| ((p[0] as f64).hypot(p[1] as f64).hypot(p[2] as f64) - radius).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-4 * radius, "max radial error {worst}");
}

#[test]
fn depth_is_valid_exactly_on_foreground() {
    let mesh = checker_sphere(48, 24, 3, false);
    let bvh = Bvh::build(&mesh).unwrap();
    let cams = fibonacci_cameras(5, DVec3::ZERO, 3.0, 40f64.to_radians(), (64, 64)).unwrap();
    for (i, c) in cams.iter().enumerate() {
        let v = render_view(&mesh, &bvh, format!("v{i}"), c);
        for (d, m) in v.depth.iter().zip(&v.material_id) {
            assert_eq!(d.is_finite(), *m >= 0);
        }
        let basis = c.basis();
        for y in 0..64 {
            for x in 0..64 {
                if v.is_foreground(x, y) {
                    let p = v.hit_point(x, y).unwrap();
                    let px = basis.project(c, p).unwrap();
                    assert!((px.x - (x as f64 + 0.5)).abs() < 0.5 && (px.y - (y as f64 + 0.5)).abs() < 0.5);
                }
            }
        }
    }
}
