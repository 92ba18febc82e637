use std::path::Path;

use crate::error::{Error, Result};
use crate::render::ViewBundle;

pub const CLOUD_MAGIC: &[u8; 4] = b"MSC1";
const RECORD_BYTES: usize = 20;

/// Back-projected foreground pixels with their similarity values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityCloud {
    pub positions: Vec<[f32; 3]>,
    pub values: Vec<f32>,
    /// Index of the source view in manifest order, an extra click view last.
    pub view_idx: Vec<u32>,
}

impl SimilarityCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `MSC1`, u64 count, then `count × (f32 x, y, z, f32 value, u32 view)`, little endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + RECORD_BYTES * self.len());
        out.extend_from_slice(CLOUD_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            for c in self.positions[i] {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&self.values[i].to_le_bytes());
            out.extend_from_slice(&self.view_idx[i].to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CLOUD_MAGIC {
            return Err(Error::Format("missing MSC1 header".into()));
        }
        let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != count.saturating_mul(RECORD_BYTES) {
            return Err(Error::Format(format!(
                "MSC1 body has {} bytes for {count} points",
                body.len()
            )));
        }
        let mut cloud = SimilarityCloud {
            positions: Vec::with_capacity(count),
            values: Vec::with_capacity(count),
            view_idx: Vec::with_capacity(count),
        };
        for rec in body.chunks_exact(RECORD_BYTES) {
            let f = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().unwrap());
            cloud.positions.push([f(0), f(4), f(8)]);
            cloud.values.push(f(12));
            cloud
                .view_idx
                .push(u32::from_le_bytes(rec[16..20].try_into().unwrap()));
        }
        Ok(cloud)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Same points with new values. Lengths must match.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} points",
                values.len(),
                self.len()
            )));
        }
        Ok(Self {
            positions: self.positions.clone(),
            values,
            view_idx: self.view_idx.clone(),
        })
    }
}

/// Foreground pixels visited by back-projection, in order: view, then raster order with stride.
fn foreground_pixels(view: &ViewBundle, stride: u32) -> impl Iterator<Item = (u32, u32, usize)> + '_ {
    let stride = stride.max(1);
    (0..view.height()).step_by(stride as usize).flat_map(move |y| {
        (0..view.width())
            .step_by(stride as usize)
            .map(move |x| (x, y, view.index(x, y)))
            .filter(|&(_, _, i)| view.material_id[i] >= 0)
    })
}

/// Lifts every foreground pixel of `views` (every `stride`-th row and column)
/// to `position + depth · ray`, carrying the pixel's value from `maps`.
pub fn backproject_maps(views: &[&ViewBundle], maps: &[&[f32]], stride: u32) -> Result<SimilarityCloud> {
    if views.len() != maps.len() {
        return Err(Error::ShapeMismatch("one similarity map per view required".into()));
    }
    let mut cloud = SimilarityCloud::default();
    for (vi, (view, map)) in views.iter().zip(maps).enumerate() {
        if map.len() != view.material_id.len() {
            return Err(Error::ShapeMismatch(format!(
                "similarity map of `{}` does not match its resolution",
                view.id
            )));
        }
        let cam = &view.camera;
        let basis = cam.basis();
        for (x, y, i) in foreground_pixels(view, stride) {
            let p = cam.position + basis.pixel_dir(cam, x, y) * view.depth[i] as f64;
            cloud.positions.push(p.as_vec3().to_array());
            cloud.values.push(map[i]);
            cloud.view_idx.push(vi as u32);
        }
    }
    Ok(cloud)
}

pub fn backproject(views: &[ViewBundle], stride: u32) -> Result<SimilarityCloud> {
    let maps = views
        .iter()
        .map(|v| {
            v.similarity
                .as_deref()
                .ok_or_else(|| Error::MissingSimilarity(v.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ViewBundle> = views.iter().collect();
    backproject_maps(&refs, &maps, stride)
}

/// Material id of every point [`backproject`] would emit, in the same order.
pub fn backproject_labels(views: &[&ViewBundle], stride: u32) -> Vec<i32> {
    views
        .iter()
        .flat_map(|v| foreground_pixels(v, stride).map(|(_, _, i)| v.material_id[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use crate::render::{render_view, Bvh};
    use crate::scene::Camera;
    use glam::DVec3;
    use proptest::prelude::*;

    #[test]
    fn counts_foreground_pixels() {
        let camera = Camera::new(DVec3::Z * 3.0, DVec3::ZERO, DVec3::Y, 0.7, 2, 2).unwrap();
        let view = ViewBundle {
            id: "v".into(),
            camera,
            rgb: vec![0; 12],
            depth: vec![1.0, 2.0, f32::INFINITY, 3.0],
            material_id: vec![0, 1, -1, 0],
            similarity: Some(vec![0.1, 0.2, 0.0, 0.4]),
        };
        let cloud = backproject(&[view], 1).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.values, vec![0.1, 0.2, 0.4]);
    }

    #[test]
    fn missing_similarity_is_an_error() {
        let mesh = demo::strip_quad(1.0, 0.0, 1);
        let bvh = Bvh::build(&mesh).unwrap();
        let cam = Camera::new(DVec3::Z * 3.0, DVec3::ZERO, DVec3::Y, 0.7, 8, 8).unwrap();
        let view = render_view(&mesh, &bvh, "v", &cam);
        assert!(matches!(backproject(&[view], 1), Err(Error::MissingSimilarity(_))));
    }

    #[test]
    fn fronto_parallel_quad_is_planar() {
        let mesh = demo::strip_quad(1.0, 0.25, 2);
        let bvh = Bvh::build(&mesh).unwrap();
        let cam = Camera::new(DVec3::new(0.1, -0.2, 3.0), DVec3::new(0.1, -0.2, 0.0), DVec3::Y, 0.9, 48, 40).unwrap();
        let mut view = render_view(&mesh, &bvh, "v", &cam);
        view.similarity = Some(vec![1.0; 48 * 40]);
        let cloud = backproject(&[view], 1).unwrap();
        assert!(cloud.len() > 100);
        assert!(cloud.positions.iter().all(|p| (p[2] - 0.25).abs() < 1e-6));
        let every_other = backproject_labels(&[&render_view(&mesh, &bvh, "v", &cam)], 2);
        assert!(every_other.len() * 3 < cloud.len() && every_other.len() * 5 > cloud.len());
    }

    #[test]
    fn with_values_checks_length() {
        let cloud = SimilarityCloud {
            positions: vec![[0.0; 3]; 2],
            values: vec![0.0; 2],
            view_idx: vec![0; 2],
        };
        assert!(cloud.with_values(vec![1.0]).is_err());
        assert_eq!(cloud.with_values(vec![1.0, 0.5]).unwrap().values, vec![1.0, 0.5]);
    }

    proptest! {
        #[test]
        fn cloud_file_round_trips(points in proptest::collection::vec((any::<[f32; 3]>(), 0f32..=1.0, any::<u32>()), 0..50)) {
            let cloud = SimilarityCloud {
                positions: points.iter().map(|p| p.0).collect(),
                values: points.iter().map(|p| p.1).collect(),
                view_idx: points.iter().map(|p| p.2).collect(),
            };
            let back = SimilarityCloud::decode(&cloud.encode()).unwrap();
            prop_assert_eq!(back.encode(), cloud.encode());
        }
    }
}
