use std::path::Path;

use glam::DVec3;
use rayon::prelude::*;

use super::bvh::Bvh;
use super::raster::{self, FloatRaster};
use crate::error::{Error, Result};
use crate::scene::{Camera, Mesh};

pub const BACKGROUND_RGB: [u8; 3] = [24, 24, 24];
const MIN_LAMBERT: f64 = 0.2;

/// Co-registered rasters of one view.
///
/// Background pixels carry material id `-1` and infinite depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub id: String,
    pub camera: Camera,
    pub rgb: Vec<u8>,
    /// Distance along the unit ray direction.
    pub depth: Vec<f32>,
    pub material_id: Vec<i32>,
    pub similarity: Option<Vec<f32>>,
}

impl ViewBundle {
    pub fn width(&self) -> u32 {
        self.camera.width
    }

    pub fn height(&self) -> u32 {
        self.camera.height
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.camera.width as usize + x as usize
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.camera.width && y < self.camera.height
    }

    pub fn is_foreground(&self, x: u32, y: u32) -> bool {
        self.contains(x, y) && self.material_id[self.index(x, y)] >= 0
    }

    pub fn foreground_count(&self) -> usize {
        self.material_id.iter().filter(|&&m| m >= 0).count()
    }

    /// World position of a foreground pixel.
    pub fn hit_point(&self, x: u32, y: u32) -> Result<DVec3> {
        if !self.is_foreground(x, y) {
            return Err(Error::BackgroundClick {
                view: self.id.clone(),
                x,
                y,
            });
        }
        hit_point(&self.camera, (x, y), self.depth[self.index(x, y)] as f64)
    }

    /// Writes `<id>.png`, `<id>.depth.mlf`, `<id>.ids.pgm` and, when present, `<id>.simf`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let (w, h) = (self.width(), self.height());
        raster::write_file(dir.join(format!("{}.png", self.id)), &raster::encode_png(w, h, &self.rgb)?)?;
        FloatRaster {
            width: w,
            height: h,
            channels: 1,
            data: self
                .depth
                .iter()
                .map(|&d| if d.is_finite() { d } else { 0.0 })
                .collect(),
        }
        .write(dir.join(format!("{}.depth.mlf", self.id)))?;
        raster::write_file(
            dir.join(format!("{}.ids.pgm", self.id)),
            &raster::encode_pgm(w, h, &raster::ids_to_pgm_values(&self.material_id)?),
        )?;
        if let Some(sim) = &self.similarity {
            FloatRaster {
                width: w,
                height: h,
                channels: 1,
                data: sim.clone(),
            }
            .write(dir.join(format!("{}.simf", self.id)))?;
        }
        Ok(())
    }

    /// Inverse of [`ViewBundle::save`]; the camera comes from the manifest.
    pub fn load(dir: impl AsRef<Path>, id: &str, camera: Camera) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: String| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| Error::io(path, e))
        };
        let (w, h, rgb) = raster::decode_png(&read(format!("{id}.png"))?)?;
        let (iw, ih, ids) = raster::decode_pgm(&read(format!("{id}.ids.pgm"))?)?;
        let depth = FloatRaster::decode(&read(format!("{id}.depth.mlf"))?)?;
        if (w, h) != camera.resolution()
            || (iw, ih) != (w, h)
            || (depth.width, depth.height) != (w, h)
        {
            return Err(Error::ShapeMismatch(format!("bundle `{id}` rasters disagree")));
        }
        let material_id = raster::pgm_values_to_ids(&ids);
        let depth = depth
            .data
            .iter()
            .zip(&material_id)
            .map(|(&d, &m)| if m >= 0 { d } else { f32::INFINITY })
            .collect();
        let sim_path = dir.join(format!("{id}.simf"));
        let similarity = if sim_path.exists() {
            Some(FloatRaster::read(&sim_path)?.data)
        } else {
            None
        };
        Ok(Self {
            id: id.to_string(),
            camera,
            rgb,
            depth,
            material_id,
            similarity,
        })
    }
}

/// `camera.position + depth * ray_dir(pixel)`.
pub fn hit_point(camera: &Camera, (x, y): (u32, u32), depth: f64) -> Result<DVec3> {
    if !(depth.is_finite() && depth >= 0.0) {
        return Err(Error::invalid(format!("invalid depth {depth} at ({x}, {y})")));
    }
    let dir = camera.basis().pixel_dir(camera, x, y);
    Ok(camera.position + dir * depth)
}

/// One primary ray per pixel center, headlight Lambert shading.
pub fn render_view(mesh: &Mesh, bvh: &Bvh, id: impl Into<String>, camera: &Camera) -> ViewBundle {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let basis = camera.basis();
    let mut rgb = vec![0u8; w * h * 3];
    let mut depth = vec![f32::INFINITY; w * h];
    let mut material_id = vec![-1i32; w * h];
    rgb.par_chunks_mut(w * 3)
        .zip(depth.par_chunks_mut(w))
        .zip(material_id.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((rgb_row, depth_row), id_row))| {
            for x in 0..w {
                let dir = basis.pixel_dir(camera, x as u32, y as u32);
                let px = &mut rgb_row[3 * x..3 * x + 3];
                match bvh.intersect(camera.position, dir, 0.0) {
                    Some(hit) => {
                        let m = bvh.material(hit.triangle);
                        let shade = bvh.normal(hit.triangle).dot(-dir).max(MIN_LAMBERT);
                        let base = mesh.material_colors[m as usize];
                        for c in 0..3 {
                            px[c] = (base[c] as f64 * shade).round().clamp(0.0, 255.0) as u8;
                        }
                        depth_row[x] = hit.t as f32;
                        id_row[x] = m as i32;
                    }
                    None => px.copy_from_slice(&BACKGROUND_RGB),
                }
            }
        });
    ViewBundle {
        id: id.into(),
        camera: *camera,
        rgb,
        depth,
        material_id,
        similarity: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;

    fn front_camera(res: u32) -> Camera {
        Camera::new(DVec3::new(0.0, 0.0, 4.0), DVec3::ZERO, DVec3::Y, 0.6, res, res).unwrap()
    }

    #[test]
    fn center_pixel_depth_of_facing_quad() {
        let mesh = demo::strip_quad(0.5, 0.0, 1);
        let bvh = Bvh::build(&mesh).unwrap();
        let view = render_view(&mesh, &bvh, "v", &front_camera(9));
        let c = view.index(4, 4);
        assert!((view.depth[c] - 4.0).abs() < 1e-6);
        assert_eq!(view.material_id[c], 0);
        // corners miss the small quad
        assert_eq!(view.material_id[0], -1);
        assert!(!view.depth[0].is_finite());
    }

    #[test]
    fn depth_valid_iff_foreground() {
        let mesh = demo::checker_sphere(24, 12, 2, false);
        let bvh = Bvh::build(&mesh).unwrap();
        let cam = Camera::new(DVec3::new(2.0, 2.0, 1.0), DVec3::ZERO, DVec3::Z, 0.9, 40, 30).unwrap();
        let view = render_view(&mesh, &bvh, "v", &cam);
        for (d, m) in view.depth.iter().zip(&view.material_id) {
            assert_eq!(d.is_finite(), *m >= 0);
            assert!([-1, 0, 1].contains(m));
        }
    }

    #[test]
    fn hit_point_principal_ray() {
        let cam = front_camera(9);
        let p = hit_point(&cam, (4, 4), 4.0).unwrap();
        assert!(p.length() < 1e-12);
        assert_eq!(hit_point(&cam, (2, 7), 0.0).unwrap(), cam.position);
        assert!(hit_point(&cam, (4, 4), f64::INFINITY).is_err());
    }

    #[test]
    fn save_and_load_bundle() {
        let mesh = demo::checker_sphere(24, 12, 3, false);
        let bvh = Bvh::build(&mesh).unwrap();
        let cam = Camera::new(DVec3::new(0.0, -3.0, 0.5), DVec3::ZERO, DVec3::Z, 0.8, 20, 16).unwrap();
        let mut view = render_view(&mesh, &bvh, "v0", &cam);
        view.similarity = Some(vec![0.25; 20 * 16]);
        let dir = tempfile::tempdir().unwrap();
        view.save(dir.path()).unwrap();
        let back = ViewBundle::load(dir.path(), "v0", cam).unwrap();
        assert_eq!(back, view);
    }
}
