//! Procedural assets with known ground-truth materials.

use std::f64::consts::PI;

use glam::{DVec2, DVec3};

use crate::scene::Mesh;

const LAT_BANDS: usize = 6;
const LON_BANDS: usize = 8;

/// Unit UV-sphere at the origin whose surface is a checkerboard of
/// 6 latitude × 8 longitude patches, patch `(i, j)` using material `(i + j) % materials`.
///
/// Each material therefore covers several disconnected regions.
pub fn checker_sphere(segments: usize, rings: usize, materials: usize, with_uv: bool) -> Mesh {
    let segments = segments.max(3);
    let rings = rings.max(2);
    let materials = materials.max(1);
    let mut vertices = Vec::with_capacity((rings + 1) * (segments + 1));
    let mut uvs = Vec::with_capacity(vertices.capacity());
    for r in 0..=rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..=segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(DVec3::new(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ));
            uvs.push(DVec2::new(
                s as f64 / segments as f64,
                1.0 - r as f64 / rings as f64,
            ));
        }
    }
    let idx = |r: usize, s: usize| (r * (segments + 1) + s) as u32;
    let mut triangles = Vec::new();
    let mut material_ids = Vec::new();
    for r in 0..rings {
        let band = r * LAT_BANDS / rings;
        for s in 0..segments {
            let sector = s * LON_BANDS / segments;
            let m = ((band + sector) % materials) as u32;
            let (v00, v01, v10, v11) = (idx(r, s), idx(r, s + 1), idx(r + 1, s), idx(r + 1, s + 1));
            if r == 0 {
                triangles.push([v00, v10, v11]);
                material_ids.push(m);
            } else if r == rings - 1 {
                triangles.push([v00, v10, v01]);
                material_ids.push(m);
            } else {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
                material_ids.extend([m, m]);
            }
        }
    }
    let names = (0..materials).map(|i| format!("material_{i}")).collect();
    Mesh::new(vertices, triangles, material_ids, with_uv.then_some(uvs), names)
        .expect("checker sphere is well formed")
}

/// The default demo asset: a 3-material checker sphere with uvs.
pub fn demo_asset() -> Mesh {
    checker_sphere(96, 48, 3, true)
}

/// Axis-aligned square in the plane `z = z`, split into `materials` vertical strips.
pub fn strip_quad(half_size: f64, z: f64, materials: usize) -> Mesh {
    let materials = materials.max(1);
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    let mut material_ids = Vec::new();
    for m in 0..materials {
        let x0 = -half_size + 2.0 * half_size * m as f64 / materials as f64;
        let x1 = -half_size + 2.0 * half_size * (m + 1) as f64 / materials as f64;
        let base = vertices.len() as u32;
        for (x, y) in [(x0, -half_size), (x1, -half_size), (x1, half_size), (x0, half_size)] {
            vertices.push(DVec3::new(x, y, z));
            uvs.push(DVec2::new(
                (x + half_size) / (2.0 * half_size),
                (y + half_size) / (2.0 * half_size),
            ));
        }
        triangles.push([base, base + 1, base + 2]);
        triangles.push([base, base + 2, base + 3]);
        material_ids.extend([m as u32, m as u32]);
    }
    let names = (0..materials).map(|i| format!("strip_{i}")).collect();
    Mesh::new(vertices, triangles, material_ids, Some(uvs), names)
        .expect("strip quad is well formed")
}

/// Concatenates meshes; material ids of later meshes are offset.
pub fn concat(meshes: &[Mesh]) -> Mesh {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut material_ids = Vec::new();
    let mut names = Vec::new();
    let mut uvs = Some(Vec::new());
    for mesh in meshes {
        let vbase = vertices.len() as u32;
        let mbase = names.len() as u32;
        vertices.extend_from_slice(&mesh.vertices);
        triangles.extend(mesh.triangles.iter().map(|t| t.map(|i| i + vbase)));
        material_ids.extend(mesh.material_ids.iter().map(|m| m + mbase));
        names.extend(mesh.material_names.iter().cloned());
        uvs = match (uvs, &mesh.uvs) {
            (Some(mut acc), Some(u)) => {
                acc.extend_from_slice(u);
                Some(acc)
            }
            _ => None,
        };
    }
    Mesh::new(vertices, triangles, material_ids, uvs, names).expect("concatenation is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checker_sphere_uses_every_material() {
        let mesh = checker_sphere(32, 16, 3, true);
        for m in 0..3 {
            assert!(mesh.material_ids.contains(&m));
        }
        assert!(mesh.vertices.iter().all(|v| (v.length() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn checker_sphere_winding_points_outward() {
        let mesh = checker_sphere(16, 8, 3, false);
        for i in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(i);
            let n = (b - a).cross(c - a);
            assert!(n.dot((a + b + c) / 3.0) > 0.0, "triangle {i}");
        }
    }
}
