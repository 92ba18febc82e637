//! IVF index against exact brute-force kNN.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use matlift::lift::{IvfIndex, SimilarityCloud};

fn uniform_cloud(n: usize, seed: u64) -> SimilarityCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f32; 3]> = (0..n)
        .map(|_| [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()])
        .collect();
    SimilarityCloud {
        values: (0..n).map(|i| (i % 2) as f32).collect(),
        view_idx: vec![0; n],
        positions,
    }
}

fn dist2(a: [f32; 3], b: [f32; 3]) -> f32 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Exact kNN, ties by id.
fn brute_knn(points: &[[f32; 3]], q: [f32; 3], k: usize) -> Vec<(u32, f32)> {
    let mut all: Vec<(u32, f32)> = points.iter().enumerate().map(|(i, p)| (i as u32, dist2(*p, q))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn recall_at_9_with_five_probes() {
    let cloud = Arc::new(uniform_cloud(100_000, 1));
    let index = IvfIndex::build(cloud.clone(), 100, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut found = 0usize;
    for _ in 0..1000 {
        let q = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        let exact: Vec<u32> = brute_knn(&cloud.positions, q, 9).iter().map(|n| n.0).collect();
        let got = index.knn_query(q, 9, 5);
        found += got.iter().filter(|n| exact.contains(&n.id)).count();
    }
    let recall = found as f64 / 9000.0;
    assert!(recall >= 0.95, "recall {recall}");
}

#[test]
fn exhaustive_probe_equals_brute_force() {
    let cloud = Arc::new(uniform_cloud(10_000, 3));
    let index = IvfIndex::build(cloud.clone(), 100, 0).unwrap();
    let all = index.cluster_count();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let q = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        let exact = brute_knn(&cloud.positions, q, 9);
        let got: Vec<(u32, f32)> = index
            .knn_query(q, 9, all)
            .iter()
            .map(|n| (n.id, n.distance * n.distance))
            .collect();
        assert_eq!(got.len(), exact.len());
        for (g, e) in got.iter().zip(&exact) {
            assert_eq!(g.0, e.0);
            assert!((g.1 - e.1).abs() <= 1e-6 * e.1.max(1e-6));
        }
    }
}

#[test]
fn exhaustive_probe_breaks_ties_by_id() {
    // a lattice has many equidistant neighbors
    let mut positions = Vec::new();
    for x in 0..10 {
        for y in 0..10 {
            for z in 0..10 {
                positions.push([x as f32, y as f32, z as f32]);
            }
        }
    }
    let n = positions.len();
    let cloud = Arc::new(SimilarityCloud {
        positions,
        values: vec![0.0; n],
        view_idx: vec![0; n],
    });
    let index = IvfIndex::build(cloud.clone(), 20, 0).unwrap();
    for q in [[4.5f32, 4.5, 4.5], [0.0, 0.0, 0.0], [5.0, 5.0, 5.5]] {
        let exact: Vec<u32> = brute_knn(&cloud.positions, q, 9).iter().map(|n| n.0).collect();
        let got: Vec<u32> = index.knn_query(q, 9, index.cluster_count()).iter().map(|n| n.id).collect();
        assert_eq!(got, exact, "query {q:?}");
    }
}

#[test]
fn existing_point_is_its_own_nearest_neighbor() {
    let cloud = Arc::new(uniform_cloud(5_000, 5));
    let index = IvfIndex::build(cloud.clone(), 50, 0).unwrap();
    for i in (0..5_000).step_by(97) {
        for probes in [1, 5] {
            let got = index.knn_query(cloud.positions[i], 1, probes);
            assert_eq!(got[0].distance, 0.0);
        }
    }
}
