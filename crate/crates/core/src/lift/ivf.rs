//! Inverted-file index with flat (exact) search inside probed clusters.
//!
//! Points are clustered with [`kmeans`]; a query visits the `n_probe` clusters
//! whose centroids are nearest and returns the exact L2 k nearest among their
//! points. Within a cluster the points are laid out as a kd-tree so the exact
//! search prunes subtrees that cannot improve the current k-th distance;
//! clusters whose bounding box is farther than that distance are skipped the
//! same way. Neither shortcut changes the result.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::cloud::SimilarityCloud;
use super::kmeans::{dist2, kmeans, nearest};
use crate::error::{Error, Result};

pub const DEFAULT_CLUSTERS: usize = 100;
pub const DEFAULT_PROBES: usize = 5;
const LEAF_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index into the indexed cloud.
    pub id: u32,
    pub distance: f32,
}

#[derive(Debug, Clone)]
struct KdNode {
    lo: u32,
    hi: u32,
    /// Children for inner nodes; `u32::MAX` marks a leaf.
    left: u32,
    right: u32,
    axis: u8,
    split: f32,
    /// Tight bounds of the node's points.
    min: [f32; 3],
    max: [f32; 3],
}

#[derive(Debug, Clone)]
struct Cluster {
    start: usize,
    len: usize,
    min: [f32; 3],
    max: [f32; 3],
    /// Root node in `IvfIndex::nodes`.
    root: u32,
}

/// Clustering and search trees; shared by indexes over the same positions.
#[derive(Debug)]
struct Layout {
    centroids: Vec<[f32; 3]>,
    clusters: Vec<Cluster>,
    /// Points regrouped by cluster.
    points: Vec<[f32; 3]>,
    ids: Vec<u32>,
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone)]
pub struct IvfIndex {
    cloud: Arc<SimilarityCloud>,
    layout: Arc<Layout>,
    /// Cloud values in layout order, so votes read them next to the points.
    values: Arc<Vec<f32>>,
    build_time: Duration,
}

fn gather_values(layout: &Layout, cloud: &SimilarityCloud) -> Arc<Vec<f32>> {
    Arc::new(layout.ids.iter().map(|&id| cloud.values[id as usize]).collect())
}

/// Reusable buffers for repeated queries on one thread.
#[derive(Debug)]
pub struct KnnScratch {
    probes: Vec<(f32, usize)>,
    top: TopK,
}

impl Default for KnnScratch {
    fn default() -> Self {
        Self {
            probes: Vec::new(),
            top: TopK::new(0),
        }
    }
}

/// Running k best `(squared distance, id, slot)` triples, sorted ascending
/// by distance then id.
#[derive(Debug)]
struct TopK {
    k: usize,
    items: Vec<(f32, u32, u32)>,
    /// k-th best distance, infinite until k items are held.
    worst: f32,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
            worst: f32::INFINITY,
        }
    }

    fn reset(&mut self, k: usize) {
        self.k = k;
        self.items.clear();
        self.worst = f32::INFINITY;
    }

    #[inline]
    fn worst(&self) -> f32 {
        self.worst
    }

    #[inline]
    fn offer(&mut self, d: f32, id: u32, slot: u32) {
        let full = self.items.len() == self.k;
        if full {
            let last = self.items[self.k - 1];
            if d > last.0 || (d == last.0 && id >= last.1) {
                return;
            }
            self.items.pop();
        }
        self.items.push((d, id, slot));
        // shift the new entry down to its place
        let mut i = self.items.len() - 1;
        while i > 0 {
            let prev = self.items[i - 1];
            if prev.0 < d || (prev.0 == d && prev.1 < id) {
                break;
            }
            self.items[i] = prev;
            i -= 1;
        }
        self.items[i] = (d, id, slot);
        if self.items.len() == self.k {
            self.worst = self.items[self.k - 1].0;
        }
    }
}

fn box_dist2(q: &[f32; 3], min: &[f32; 3], max: &[f32; 3]) -> f32 {
    let mut s = 0.0;
    for a in 0..3 {
        let d = if q[a] < min[a] {
            min[a] - q[a]
        } else if q[a] > max[a] {
            q[a] - max[a]
        } else {
            0.0
        };
        s += d * d;
    }
    s
}

fn build_tree(points: &mut [[f32; 3]], ids: &mut [u32], offset: usize, nodes: &mut Vec<KdNode>) -> u32 {
    let me = nodes.len() as u32;
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for p in points.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    nodes.push(KdNode {
        lo: offset as u32,
        hi: (offset + points.len()) as u32,
        left: u32::MAX,
        right: u32::MAX,
        axis: 0,
        split: 0.0,
        min: lo,
        max: hi,
    });
    if points.len() <= LEAF_POINTS {
        return me;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if hi[axis] <= lo[axis] {
        return me;
    }
    let mid = points.len() / 2;
    // sort an index permutation so ids follow their points
    let mut perm: Vec<usize> = (0..points.len()).collect();
    perm.select_nth_unstable_by(mid, |&i, &j| points[i][axis].total_cmp(&points[j][axis]));
    let p2: Vec<[f32; 3]> = perm.iter().map(|&i| points[i]).collect();
    let i2: Vec<u32> = perm.iter().map(|&i| ids[i]).collect();
    points.copy_from_slice(&p2);
    ids.copy_from_slice(&i2);
    let split = points[mid][axis];
    let (pl, pr) = points.split_at_mut(mid);
    let (il, ir) = ids.split_at_mut(mid);
    let left = build_tree(pl, il, offset, nodes);
    let right = build_tree(pr, ir, offset + mid, nodes);
    let node = &mut nodes[me as usize];
    node.left = left;
    node.right = right;
    node.axis = axis as u8;
    node.split = split;
    me
}

impl IvfIndex {
    /// Clusters the cloud positions and lays out the per-cluster search trees.
    ///
    /// `n_clusters` is clamped to the point count; clusters left empty after
    /// assignment are dropped.
    pub fn build(cloud: Arc<SimilarityCloud>, n_clusters: usize, seed: u64) -> Result<Self> {
        if n_clusters < 1 {
            return Err(Error::invalid("n_clusters must be at least 1"));
        }
        if cloud.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty cloud"));
        }
        let started = Instant::now();
        let centroids = kmeans(&cloud.positions, n_clusters, seed);
        let assignment: Vec<u32> = cloud
            .positions
            .par_iter()
            .map(|p| nearest(p, &centroids).0 as u32)
            .collect();
        let mut index = Self::from_assignment(cloud, centroids, &assignment);
        index.build_time = started.elapsed();
        Ok(index)
    }

    fn from_assignment(cloud: Arc<SimilarityCloud>, centroids: Vec<[f32; 3]>, assignment: &[u32]) -> Self {
        let mut counts = vec![0usize; centroids.len()];
        for &a in assignment {
            counts[a as usize] += 1;
        }
        // compact away empty clusters
        let mut remap = vec![u32::MAX; centroids.len()];
        let mut kept = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                remap[c] = kept.len() as u32;
                kept.push(c);
            }
        }
        let mut starts = vec![0usize; kept.len() + 1];
        for (slot, &c) in kept.iter().enumerate() {
            starts[slot + 1] = starts[slot] + counts[c];
        }
        let mut fill = starts.clone();
        let mut points = vec![[0f32; 3]; cloud.len()];
        let mut ids = vec![0u32; cloud.len()];
        for (i, &a) in assignment.iter().enumerate() {
            let slot = remap[a as usize] as usize;
            points[fill[slot]] = cloud.positions[i];
            ids[fill[slot]] = i as u32;
            fill[slot] += 1;
        }
        let mut nodes = Vec::new();
        let mut clusters = Vec::with_capacity(kept.len());
        for slot in 0..kept.len() {
            let (s, e) = (starts[slot], starts[slot + 1]);
            let mut min = [f32::INFINITY; 3];
            let mut max = [f32::NEG_INFINITY; 3];
            for p in &points[s..e] {
                for a in 0..3 {
                    min[a] = min[a].min(p[a]);
                    max[a] = max[a].max(p[a]);
                }
            }
            let root = build_tree(&mut points[s..e], &mut ids[s..e], s, &mut nodes);
            clusters.push(Cluster {
                start: s,
                len: e - s,
                min,
                max,
                root,
            });
        }
        let centroids = kept.iter().map(|&c| centroids[c]).collect();
        let layout = Layout {
            centroids,
            clusters,
            points,
            ids,
            nodes,
        };
        Self {
            values: gather_values(&layout, &cloud),
            cloud,
            layout: Arc::new(layout),
            build_time: Duration::ZERO,
        }
    }

    /// Same clustering over a cloud with identical positions but new values.
    pub fn with_cloud(&self, cloud: Arc<SimilarityCloud>) -> Result<Self> {
        if !Arc::ptr_eq(&cloud, &self.cloud) && cloud.positions != self.cloud.positions {
            return Err(Error::ShapeMismatch(
                "index geometry can only be reused for identical positions".into(),
            ));
        }
        Ok(Self {
            values: gather_values(&self.layout, &cloud),
            cloud,
            layout: self.layout.clone(),
            build_time: self.build_time,
        })
    }

    pub fn cloud(&self) -> &Arc<SimilarityCloud> {
        &self.cloud
    }

    pub fn len(&self) -> usize {
        self.layout.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.points.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.layout.clusters.len()
    }

    pub fn centroids(&self) -> &[[f32; 3]] {
        &self.layout.centroids
    }

    pub fn build_time(&self) -> Duration {
        self.build_time
    }

    /// Cloud point ids of every cluster.
    pub fn cluster_members(&self) -> Vec<Vec<u32>> {
        self.layout.clusters
            .iter()
            .map(|c| self.layout.ids[c.start..c.start + c.len].to_vec())
            .collect()
    }

    /// The `n_probe` clusters with nearest centroids, nearest first.
    fn probes(&self, q: &[f32; 3], n_probe: usize, best: &mut Vec<(f32, usize)>) {
        let centroids = &self.layout.centroids;
        let n = n_probe.clamp(1, centroids.len());
        // insertion into a short sorted list; n_probe is small in practice
        best.clear();
        for (i, c) in centroids.iter().enumerate() {
            let d = dist2(q, c);
            if best.len() == n && d >= best[n - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(od, _)| od <= d);
            best.insert(pos, (d, i));
            best.truncate(n);
        }
    }

    fn search_tree(&self, node: u32, q: &[f32; 3], top: &mut TopK) {
        let n = &self.layout.nodes[node as usize];
        if box_dist2(q, &n.min, &n.max) > top.worst() {
            return;
        }
        if n.left == u32::MAX {
            for i in n.lo as usize..n.hi as usize {
                let d = dist2(q, &self.layout.points[i]);
                if d <= top.worst() {
                    top.offer(d, self.layout.ids[i], i as u32);
                }
            }
            return;
        }
        let diff = q[n.axis as usize] - n.split;
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search_tree(near, q, top);
        self.search_tree(far, q, top);
    }

    /// Exact k nearest among the points of the `n_probe` nearest clusters,
    /// ascending by distance then id. Returns fewer than `k` when the probed
    /// clusters hold fewer points.
    pub fn knn_query(&self, q: [f32; 3], k: usize, n_probe: usize) -> Vec<Neighbor> {
        self.search(q, k, n_probe)
            .items
            .into_iter()
            .map(|(d, id, _)| Neighbor {
                id,
                distance: d.sqrt(),
            })
            .collect()
    }

    /// Similarity values of the same neighbors [`knn_query`](Self::knn_query) returns, in order.
    pub fn knn_values(&self, q: [f32; 3], k: usize, n_probe: usize) -> Vec<f32> {
        self.search(q, k, n_probe)
            .items
            .into_iter()
            .map(|(_, _, slot)| self.values[slot as usize])
            .collect()
    }

    fn search(&self, q: [f32; 3], k: usize, n_probe: usize) -> TopK {
        let mut scratch = KnnScratch::default();
        self.search_into(q, k, n_probe, &mut scratch);
        scratch.top
    }

    fn search_into(&self, q: [f32; 3], k: usize, n_probe: usize, scratch: &mut KnnScratch) {
        scratch.top.reset(k);
        if k == 0 || self.layout.clusters.is_empty() {
            return;
        }
        self.probes(&q, n_probe, &mut scratch.probes);
        for &(_, c) in &scratch.probes {
            let cluster = &self.layout.clusters[c];
            if box_dist2(&q, &cluster.min, &cluster.max) > scratch.top.worst() {
                continue;
            }
            self.search_tree(cluster.root, &q, &mut scratch.top);
        }
    }

    /// Calls `f` with the similarity values of the neighbors
    /// [`knn_values`](Self::knn_values) returns, reusing `scratch` between queries.
    pub fn with_knn_values<R>(
        &self,
        q: [f32; 3],
        k: usize,
        n_probe: usize,
        scratch: &mut KnnScratch,
        f: impl FnOnce(&mut dyn Iterator<Item = f32>) -> R,
    ) -> R {
        self.search_into(q, k, n_probe, scratch);
        let values = &self.values;
        f(&mut scratch.top.items.iter().map(|&(_, _, slot)| values[slot as usize]))
    }

    pub fn value(&self, id: u32) -> f32 {
        self.cloud.values[id as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud_of(points: Vec<[f32; 3]>) -> Arc<SimilarityCloud> {
        let n = points.len();
        Arc::new(SimilarityCloud {
            positions: points,
            values: vec![0.0; n],
            view_idx: vec![0; n],
        })
    }

    fn random_points(n: usize, seed: u64) -> Vec<[f32; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn singleton_clusters_when_k_equals_n() {
        let index = IvfIndex::build(cloud_of(random_points(100, 1)), 100, 0).unwrap();
        assert_eq!(index.cluster_count(), 100);
        for (c, members) in index.cluster_members().iter().enumerate() {
            assert_eq!(members.len(), 1);
            assert_eq!(index.centroids()[c], index.cloud.positions[members[0] as usize]);
        }
    }

    #[test]
    fn single_cluster_holds_everything() {
        let index = IvfIndex::build(cloud_of(random_points(500, 2)), 1, 0).unwrap();
        assert_eq!(index.cluster_count(), 1);
        assert_eq!(index.cluster_members()[0].len(), 500);
    }

    #[test]
    fn cluster_count_is_clamped() {
        let index = IvfIndex::build(cloud_of(random_points(7, 3)), 100, 0).unwrap();
        assert!(index.cluster_count() <= 7);
        assert!(IvfIndex::build(cloud_of(random_points(7, 3)), 0, 0).is_err());
        assert!(IvfIndex::build(cloud_of(vec![]), 4, 0).is_err());
    }

    #[test]
    fn separated_blobs_become_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = Vec::new();
        for center in [[0.0f32, 0.0, 0.0], [50.0, 50.0, 50.0]] {
            for _ in 0..300 {
                pts.push([
                    center[0] + rng.random::<f32>(),
                    center[1] + rng.random::<f32>(),
                    center[2] + rng.random::<f32>(),
                ]);
            }
        }
        let index = IvfIndex::build(cloud_of(pts), 2, 7).unwrap();
        let members = index.cluster_members();
        assert_eq!(members.len(), 2);
        // exhaustive check: each cluster is exactly one blob
        for m in &members {
            let blob = m[0] / 300;
            assert_eq!(m.len(), 300);
            assert!(m.iter().all(|&id| id / 300 == blob));
        }
    }

    #[test]
    fn existing_point_is_its_own_nearest() {
        let pts = random_points(2000, 5);
        let index = IvfIndex::build(cloud_of(pts.clone()), 20, 0).unwrap();
        for probe in [1, 3, 20] {
            for id in [0usize, 999, 1999] {
                let hit = index.knn_query(pts[id], 1, probe);
                assert_eq!(hit[0].id, id as u32);
                assert_eq!(hit[0].distance, 0.0);
            }
        }
    }

    #[test]
    fn returns_all_visited_when_short() {
        let index = IvfIndex::build(cloud_of(random_points(10, 6)), 1, 0).unwrap();
        assert_eq!(index.knn_query([0.5; 3], 50, 1).len(), 10);
    }

    #[test]
    fn with_cloud_requires_same_positions() {
        let index = IvfIndex::build(cloud_of(random_points(50, 8)), 4, 0).unwrap();
        assert!(index.with_cloud(cloud_of(random_points(50, 9))).is_err());
        let same = cloud_of(random_points(50, 8));
        assert!(index.with_cloud(same).is_ok());
    }

    #[test]
    fn reused_scratch_gives_independent_answers() {
        let points = random_points(20_000, 10);
        let n = points.len();
        let cloud = Arc::new(SimilarityCloud {
            values: (0..n).map(|i| (i % 7) as f32 / 7.0).collect(),
            view_idx: vec![0; n],
            positions: points,
        });
        let index = IvfIndex::build(cloud, 40, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for probes in [1, 3, 40] {
            let mut scratch = KnnScratch::default();
            let mut q = [0.5f32, 0.5, 0.5];
            for step in 0..3000 {
                // mostly small steps, like neighboring pixels, with occasional jumps
                let scale = if step % 97 == 0 { 0.5 } else { 0.003 };
                for a in &mut q {
                    *a = (*a + rng.random_range(-scale..scale)).clamp(0.0, 1.0);
                }
                let k = if step % 13 == 0 { 4 } else { 9 };
                let got: Vec<f32> = index.with_knn_values(q, k, probes, &mut scratch, |v| v.collect());
                assert_eq!(got, index.knn_values(q, k, probes), "step {step} probes {probes}");
            }
        }
    }
}
