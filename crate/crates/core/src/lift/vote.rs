use glam::DVec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ivf::{IvfIndex, KnnScratch, DEFAULT_PROBES};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::render::Bvh;
use crate::scene::Camera;

pub const DEFAULT_K: usize = 9;
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionParams {
    /// Neighbor count; must be odd.
    pub k: usize,
    pub threshold: f32,
    pub n_probe: usize,
    /// Probe every cluster, making the search exhaustive.
    pub exact: bool,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            n_probe: DEFAULT_PROBES,
            exact: false,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(Error::invalid(format!("k must be odd and positive, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.n_probe == 0 {
            return Err(Error::invalid("n_probe must be at least 1"));
        }
        Ok(())
    }

    pub fn probes_for(&self, index: &IvfIndex) -> usize {
        if self.exact {
            index.cluster_count()
        } else {
            self.n_probe
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub selected: bool,
    /// Mean neighbor similarity, shown as the heatmap value.
    pub mean_similarity: f32,
}

/// Selected iff strictly more than half of the k neighbors reach the threshold.
pub fn vote(index: &IvfIndex, point: [f32; 3], params: &SelectionParams) -> Result<Vote> {
    if index.is_empty() {
        return Err(Error::EmptyInput("index holds no points"));
    }
    Ok(vote_unchecked(index, point, params))
}

fn vote_unchecked(index: &IvfIndex, point: [f32; 3], params: &SelectionParams) -> Vote {
    vote_with_scratch(index, point, params, &mut KnnScratch::default())
}

fn vote_with_scratch(index: &IvfIndex, point: [f32; 3], params: &SelectionParams, scratch: &mut KnnScratch) -> Vote {
    let (passing, sum, n) = index.with_knn_values(point, params.k, params.probes_for(index), scratch, |values| {
        values.fold((0usize, 0f32, 0usize), |(p, s, n), v| {
            (p + (v >= params.threshold) as usize, s + v, n + 1)
        })
    });
    Vote {
        selected: 2 * passing > params.k,
        mean_similarity: if n == 0 { 0.0 } else { sum / n as f32 },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mask: BinaryMask,
    /// Mean neighbor similarity per pixel, 0 on background.
    pub heatmap: Vec<f32>,
    /// Material id under each pixel, -1 on background.
    pub material_id: Vec<i32>,
}

/// Votes at the surface point under every pixel center of `camera`.
pub fn reconstruct_view(
    index: &IvfIndex,
    bvh: &Bvh,
    camera: &Camera,
    params: &SelectionParams,
    view_id: &str,
) -> Reconstruction {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let basis = camera.basis();
    let mut selected = vec![false; w * h];
    let mut heatmap = vec![0f32; w * h];
    let mut material_id = vec![-1i32; w * h];
    selected
        .par_chunks_mut(w)
        .zip(heatmap.par_chunks_mut(w))
        .zip(material_id.par_chunks_mut(w))
        .enumerate()
        .for_each_init(KnnScratch::default, |scratch, (y, ((sel, heat), ids))| {
            for x in 0..w {
                let dir = basis.pixel_dir(camera, x as u32, y as u32);
                if let Some(hit) = bvh.intersect(camera.position, dir, 0.0) {
                    let p = camera.position + dir * hit.t;
                    let v = vote_with_scratch(index, to_f32(p), params, scratch);
                    sel[x] = v.selected;
                    heat[x] = v.mean_similarity;
                    ids[x] = bvh.material(hit.triangle) as i32;
                }
            }
        });
    Reconstruction {
        mask: BinaryMask {
            width: camera.width,
            height: camera.height,
            data: selected,
            view_id: view_id.to_string(),
        },
        heatmap,
        material_id,
    }
}

pub(crate) fn to_f32(p: DVec3) -> [f32; 3] {
    p.as_vec3().to_array()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::SimilarityCloud;
    use std::sync::Arc;

    /// Nine points around the origin with the given values; the query point is the origin.
    fn ring(values: &[f32]) -> IvfIndex {
        let positions = (0..values.len())
            .map(|i| {
                let a = i as f32;
                [0.01 * (1.0 + a), 0.0, 0.0]
            })
            .collect();
        let cloud = SimilarityCloud {
            positions,
            values: values.to_vec(),
            view_idx: vec![0; values.len()],
        };
        IvfIndex::build(Arc::new(cloud), 1, 0).unwrap()
    }

    #[test]
    fn five_of_nine_passes() {
        let idx = ring(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(vote(&idx, [0.0; 3], &SelectionParams::default()).unwrap().selected);
    }

    #[test]
    fn four_of_nine_fails() {
        let idx = ring(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let v = vote(&idx, [0.0; 3], &SelectionParams::default()).unwrap();
        assert!(!v.selected);
        assert!((v.mean_similarity - 4.0 / 9.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_values_give_their_mean() {
        let idx = ring(&[0.6; 9]);
        let v = vote(&idx, [0.0; 3], &SelectionParams::default()).unwrap();
        assert!(v.selected);
        assert!((v.mean_similarity - 0.6).abs() < 1e-6);
    }

    #[test]
    fn exact_half_is_not_selected() {
        // only 8 points exist, 4 pass: 2*4 > 9 is false
        let idx = ring(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(!vote(&idx, [0.0; 3], &SelectionParams::default()).unwrap().selected);
    }

    #[test]
    fn params_validation() {
        assert!(SelectionParams { k: 8, ..Default::default() }.validate().is_err());
        assert!(SelectionParams { k: 0, ..Default::default() }.validate().is_err());
        assert!(SelectionParams { threshold: 1.5, ..Default::default() }.validate().is_err());
        assert!(SelectionParams::default().validate().is_ok());
    }
}
