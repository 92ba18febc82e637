//! Median-split bounding volume hierarchy over mesh triangles.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::scene::Mesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: DVec3::splat(f64::INFINITY),
        max: DVec3::splat(f64::NEG_INFINITY),
    };

    pub fn grow(&mut self, p: DVec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn merge(&mut self, other: &Aabb) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        self.min.cmple(other.min).all() && self.max.cmpge(other.max).all()
    }

    /// Entry distance of the ray into the box, if it enters within `[t_min, t_max]`.
    #[inline]
    fn hit(&self, origin: DVec3, inv_dir: DVec3, t_min: f64, t_max: f64) -> Option<f64> {
        let t0 = (self.min - origin) * inv_dir;
        let t1 = (self.max - origin) * inv_dir;
        let near = t0.min(t1).max_element().max(t_min);
        let far = t0.max(t1).min_element().min(t_max);
        (near <= far).then_some(near)
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// First child index for inner nodes, first slot in `order` for leaves.
    start: u32,
    /// Triangle count for leaves, 0 for inner nodes.
    count: u32,
}

/// Precomputed triangle in edge form.
#[derive(Debug, Clone, Copy)]
struct Tri {
    v0: DVec3,
    e1: DVec3,
    e2: DVec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals distance when the direction is unit length.
    pub t: f64,
    pub triangle: u32,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Leaf slots, pointing to triangle indices.
    order: Vec<u32>,
    tris: Vec<Tri>,
    normals: Vec<DVec3>,
    material_ids: Vec<u32>,
}

/// Möller–Trumbore, two-sided.
#[inline]
fn intersect_tri(tri: &Tri, origin: DVec3, dir: DVec3, t_min: f64) -> Option<(f64, f64, f64)> {
    let pvec = dir.cross(tri.e2);
    let det = tri.e1.dot(pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - tri.v0;
    let u = tvec.dot(pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(tri.e1);
    let v = dir.dot(qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = tri.e2.dot(qvec) * inv;
    (t >= t_min).then_some((t, u, v))
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        if mesh.triangles.is_empty() {
            return Err(Error::EmptyInput("mesh has no triangles"));
        }
        let mut tris = Vec::with_capacity(mesh.triangles.len());
        let mut normals = Vec::with_capacity(mesh.triangles.len());
        let mut boxes = Vec::with_capacity(mesh.triangles.len());
        let mut centroids = Vec::with_capacity(mesh.triangles.len());
        for i in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(i);
            let tri = Tri {
                v0: a,
                e1: b - a,
                e2: c - a,
            };
            normals.push(tri.e1.cross(tri.e2).normalize_or_zero());
            tris.push(tri);
            let mut bb = Aabb::EMPTY;
            for p in [a, b, c] {
                bb.grow(p);
            }
            boxes.push(bb);
            centroids.push((a + b + c) / 3.0);
        }
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = vec![Node {
            bounds: Aabb::EMPTY,
            start: 0,
            count: 0,
        }];
        let mut stack = vec![(0usize, 0usize, order.len())];
        while let Some((node, lo, hi)) = stack.pop() {
            let mut bounds = Aabb::EMPTY;
            let mut cbounds = Aabb::EMPTY;
            for &t in &order[lo..hi] {
                bounds.merge(&boxes[t as usize]);
                cbounds.grow(centroids[t as usize]);
            }
            nodes[node].bounds = bounds;
            let extent = cbounds.max - cbounds.min;
            if hi - lo <= LEAF_SIZE || extent.max_element() <= 0.0 {
                nodes[node].start = lo as u32;
                nodes[node].count = (hi - lo) as u32;
                continue;
            }
            let axis = if extent.x >= extent.y && extent.x >= extent.z {
                0
            } else if extent.y >= extent.z {
                1
            } else {
                2
            };
            let mid = lo + (hi - lo) / 2;
            order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                centroids[a as usize][axis]
                    .total_cmp(&centroids[b as usize][axis])
                    .then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(Node {
                bounds: Aabb::EMPTY,
                start: 0,
                count: 0,
            });
            nodes.push(Node {
                bounds: Aabb::EMPTY,
                start: 0,
                count: 0,
            });
            nodes[node].start = left as u32;
            stack.push((left, lo, mid));
            stack.push((left + 1, mid, hi));
        }
        Ok(Self {
            nodes,
            order,
            tris,
            normals,
            material_ids: mesh.material_ids.clone(),
        })
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn normal(&self, triangle: u32) -> DVec3 {
        self.normals[triangle as usize]
    }

    pub fn material(&self, triangle: u32) -> u32 {
        self.material_ids[triangle as usize]
    }

    /// Nearest hit with `t >= t_min`; equal distances resolve to the lower triangle index.
    pub fn intersect(&self, origin: DVec3, dir: DVec3, t_min: f64) -> Option<Hit> {
        let inv_dir = dir.recip();
        let mut best: Option<Hit> = None;
        let mut best_t = f64::INFINITY;
        let mut stack = [0u32; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds.hit(origin, inv_dir, t_min, best_t).is_none() {
                continue;
            }
            if node.count > 0 {
                let slots = node.start as usize..(node.start + node.count) as usize;
                for &ti in &self.order[slots] {
                    if let Some((t, u, v)) = intersect_tri(&self.tris[ti as usize], origin, dir, t_min) {
                        let better = match best {
                            None => true,
                            Some(b) => t < b.t || (t == b.t && ti < b.triangle),
                        };
                        if better {
                            best_t = t;
                            best = Some(Hit {
                                t,
                                triangle: ti,
                                u,
                                v,
                            });
                        }
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = self.nodes[l as usize].bounds.hit(origin, inv_dir, t_min, best_t);
                let dr = self.nodes[r as usize].bounds.hit(origin, inv_dir, t_min, best_t);
                // push the farther child first so the nearer one is popped next
                match (dl, dr) {
                    (Some(a), Some(b)) => {
                        let (first, second) = if a <= b { (r, l) } else { (l, r) };
                        stack[sp] = first;
                        stack[sp + 1] = second;
                        sp += 2;
                    }
                    (Some(_), None) => {
                        stack[sp] = l;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = r;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// Checks the structural invariants: every triangle in exactly one leaf,
    /// child boxes inside parent boxes.
    pub fn validate(&self) -> bool {
        let mut seen = vec![0u32; self.tris.len()];
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    seen[t as usize] += 1;
                }
            } else {
                for c in [node.start as usize, node.start as usize + 1] {
                    if !node.bounds.contains(&self.nodes[c].bounds) {
                        return false;
                    }
                    stack.push(c);
                }
            }
        }
        seen.iter().all(|&c| c == 1)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.count > 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;

    #[test]
    fn single_triangle_is_one_leaf() {
        let mesh = Mesh::new(
            vec![DVec3::ZERO, DVec3::X, DVec3::Y],
            vec![[0, 1, 2]],
            vec![0],
            None,
            vec!["m".into()],
        )
        .unwrap();
        let bvh = Bvh::build(&mesh).unwrap();
        assert_eq!(bvh.leaf_count(), 1);
        let hit = bvh
            .intersect(DVec3::new(0.2, 0.2, 1.0), -DVec3::Z, 0.0)
            .unwrap();
        assert!((hit.t - 1.0).abs() < 1e-12);
        assert!(bvh.intersect(DVec3::new(2.0, 2.0, 1.0), -DVec3::Z, 0.0).is_none());
    }

    #[test]
    fn structure_invariants_hold() {
        let bvh = Bvh::build(&demo::checker_sphere(40, 20, 3, false)).unwrap();
        assert!(bvh.validate());
        assert!(bvh.leaf_count() > 1);
    }

    #[test]
    fn empty_mesh_rejected() {
        let mesh = Mesh {
            vertices: vec![],
            triangles: vec![],
            material_ids: vec![],
            uvs: None,
            material_names: vec![],
            material_colors: vec![],
        };
        assert!(matches!(Bvh::build(&mesh), Err(Error::EmptyInput(_))));
    }
}
