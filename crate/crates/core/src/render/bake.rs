//! Texture-space baking of per-surface values.

use glam::{DVec2, DVec3};

use super::raster;
use crate::error::{Error, Result};
use crate::scene::Mesh;

/// A point on the mesh surface reached from a covered texel.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub position: DVec3,
    pub triangle: u32,
    pub material_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UvMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    pub coverage: Vec<bool>,
}

impl UvMap {
    pub fn covered(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    /// Values as 8-bit ids; uncovered texels become 255.
    pub fn to_id_pgm(&self) -> Vec<u8> {
        let data: Vec<u8> = self
            .values
            .iter()
            .zip(&self.coverage)
            .map(|(&v, &c)| {
                if c {
                    v.round().clamp(0.0, 254.0) as u8
                } else {
                    raster::PGM_BACKGROUND
                }
            })
            .collect();
        raster::encode_pgm(self.width, self.height, &data)
    }

    /// Values in [0,1] scaled to 0..255; uncovered texels are 0.
    pub fn to_gray_pgm(&self) -> Vec<u8> {
        let data: Vec<u8> = self
            .values
            .iter()
            .zip(&self.coverage)
            .map(|(&v, &c)| if c { (v.clamp(0.0, 1.0) * 255.0).round() as u8 } else { 0 })
            .collect();
        raster::encode_pgm(self.width, self.height, &data)
    }
}

/// Rasterizes every triangle in uv space (texel centers, row 0 at v = 1) and
/// stores `value` at the interpolated surface point. Later triangles overwrite
/// earlier ones where charts overlap.
pub fn bake_uv<F>(mesh: &Mesh, width: u32, height: u32, value: F) -> Result<UvMap>
where
    F: Fn(&SurfaceSample) -> f32,
{
    let uvs = mesh.uvs.as_ref().ok_or(Error::MissingUv)?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("uv map resolution must be at least 1x1"));
    }
    let n = width as usize * height as usize;
    let mut map = UvMap {
        width,
        height,
        values: vec![0.0; n],
        coverage: vec![false; n],
    };
    let to_texel = |uv: DVec2| DVec2::new(uv.x * width as f64, (1.0 - uv.y) * height as f64);
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let t = tri.map(|i| to_texel(uvs[i as usize]));
        let area = edge(t[0], t[1], t[2]);
        if area.abs() < 1e-18 {
            continue;
        }
        let lo = t[0].min(t[1]).min(t[2]);
        let hi = t[0].max(t[1]).max(t[2]);
        let x0 = (lo.x - 0.5).ceil().max(0.0) as u32;
        let y0 = (lo.y - 0.5).ceil().max(0.0) as u32;
        let x1 = ((hi.x - 0.5).floor() as i64).min(width as i64 - 1);
        let y1 = ((hi.y - 0.5).floor() as i64).min(height as i64 - 1);
        if x1 < x0 as i64 || y1 < y0 as i64 {
            continue;
        }
        let [a, b, c] = mesh.triangle(ti);
        for y in y0..=y1 as u32 {
            for x in x0..=x1 as u32 {
                let p = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let w0 = edge(t[1], t[2], p) / area;
                let w1 = edge(t[2], t[0], p) / area;
                let w2 = 1.0 - w0 - w1;
                const EPS: f64 = -1e-12;
                if w0 < EPS || w1 < EPS || w2 < EPS {
                    continue;
                }
                let sample = SurfaceSample {
                    position: a * w0 + b * w1 + c * w2,
                    triangle: ti as u32,
                    material_id: mesh.material_ids[ti],
                };
                let i = y as usize * width as usize + x as usize;
                map.values[i] = value(&sample);
                map.coverage[i] = true;
            }
        }
    }
    Ok(map)
}

fn edge(a: DVec2, b: DVec2, p: DVec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;

    #[test]
    fn constant_value_fills_covered_texels() {
        let mesh = demo::strip_quad(1.0, 0.0, 2);
        let map = bake_uv(&mesh, 32, 32, |_| 1.0).unwrap();
        assert_eq!(map.covered(), 32 * 32);
        assert!(map
            .values
            .iter()
            .zip(&map.coverage)
            .all(|(&v, &c)| !c || v == 1.0));
    }

    #[test]
    fn uncovered_texels_stay_empty() {
        let mut mesh = demo::strip_quad(1.0, 0.0, 1);
        // shrink the chart to the lower-left quarter
        for uv in mesh.uvs.as_mut().unwrap() {
            *uv *= 0.5;
        }
        let map = bake_uv(&mesh, 16, 16, |_| 0.7).unwrap();
        assert_eq!(map.covered(), 64);
        assert!(map.values.iter().zip(&map.coverage).all(|(&v, &c)| c || v == 0.0));
    }

    #[test]
    fn missing_uv_is_an_error() {
        let mesh = demo::checker_sphere(8, 4, 2, false);
        assert!(matches!(bake_uv(&mesh, 8, 8, |_| 0.0), Err(Error::MissingUv)));
    }

    #[test]
    fn id_pgm_marks_uncovered() {
        let map = UvMap {
            width: 2,
            height: 1,
            values: vec![2.0, 0.0],
            coverage: vec![true, false],
        };
        assert!(map.to_id_pgm().ends_with(&[2, 255]));
    }
}
