//! Seeded k-means over 3D points.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const MAX_ITERATIONS: usize = 25;
pub const RELATIVE_TOLERANCE: f64 = 1e-4;
/// Training uses at most this many points per centroid.
pub const TRAINING_POINTS_PER_CENTROID: usize = 256;

#[inline]
pub(crate) fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Nearest centroid, lowest index on ties.
#[inline]
pub(crate) fn nearest(p: &[f32; 3], centroids: &[[f32; 3]]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng>(points: &[[f32; 3]], k: usize, rng: &mut R) -> Vec<[f32; 3]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| dist2(p, &centroids[0]) as f64)
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    if target < d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
            }
            // float residue may leave `pick` on a zero-weight point
            while d2[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        centroids.push(c);
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(dist2(p, &c) as f64);
        }
    }
    centroids
}

/// Lloyd iterations from a k-means++ start.
///
/// Stops after [`MAX_ITERATIONS`] or when inertia changes by less than
/// [`RELATIVE_TOLERANCE`] relative. Training runs on a seeded subsample of at
/// most [`TRAINING_POINTS_PER_CENTROID`] points per centroid. Centroids that
/// lose all training points keep their previous position.
pub fn kmeans(points: &[[f32; 3]], k: usize, seed: u64) -> Vec<[f32; 3]> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = TRAINING_POINTS_PER_CENTROID.saturating_mul(k);
    let training: Vec<[f32; 3]> = if points.len() > cap {
        let mut idx = sample(&mut rng, points.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        points.to_vec()
    };
    let mut centroids = kmeans_pp(&training, k, &mut rng);
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let assign: Vec<(usize, f32)> = training
            .par_iter()
            .map(|p| nearest(p, &centroids))
            .collect();
        let inertia: f64 = assign.iter().map(|a| a.1 as f64).sum();
        let mut sums = vec![[0f64; 4]; k];
        for (p, (c, _)) in training.iter().zip(&assign) {
            let s = &mut sums[*c];
            s[0] += p[0] as f64;
            s[1] += p[1] as f64;
            s[2] += p[2] as f64;
            s[3] += 1.0;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s[3] > 0.0 {
                *c = [
                    (s[0] / s[3]) as f32,
                    (s[1] / s[3]) as f32,
                    (s[2] / s[3]) as f32,
                ];
            }
        }
        let change = (prev_inertia - inertia).abs();
        if inertia == 0.0 || change <= RELATIVE_TOLERANCE * prev_inertia {
            break;
        }
        prev_inertia = inertia;
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equal_n_picks_every_point() {
        let pts: Vec<[f32; 3]> = (0..100).map(|i| [i as f32, (i * i % 7) as f32, 0.0]).collect();
        let mut c = kmeans(&pts, 100, 3);
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = pts.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, want);
    }

    #[test]
    fn deterministic_for_seed() {
        let pts: Vec<[f32; 3]> = (0..5000)
            .map(|i| [(i % 17) as f32, (i % 31) as f32 * 0.5, (i % 7) as f32])
            .collect();
        assert_eq!(kmeans(&pts, 20, 9), kmeans(&pts, 20, 9));
    }

    #[test]
    fn duplicate_points_do_not_hang() {
        let pts = vec![[1.0f32, 1.0, 1.0]; 10];
        assert_eq!(kmeans(&pts, 4, 0).len(), 4);
    }
}
