//! The similarity-model boundary.
//!
//! A [`SimilarityOracle`] turns a click and an ordered frame sequence into one
//! similarity raster per frame. [`SyntheticOracle`] derives them from rendered
//! material ids with configurable view-inconsistency noise; [`FileOracle`]
//! reads maps exported by an external model.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::postprocess::erode;
use crate::render::{FloatRaster, ViewBundle};
use crate::scene::Fnv64;

/// Minimum distance of a sampled click from its material's border.
pub const CLICK_BORDER_PX: u32 = 4;
pub const MIN_MATERIAL_PX: usize = 150;
pub const MIN_MATERIAL_FRACTION: f64 = 0.0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub view_id: String,
    pub x: u32,
    pub y: u32,
    #[serde(default)]
    pub polarity: Polarity,
}

impl Click {
    pub fn positive(view_id: impl Into<String>, x: u32, y: u32) -> Self {
        Self {
            view_id: view_id.into(),
            x,
            y,
            polarity: Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub view_id: String,
    /// Conditioning-only frames produce no output raster.
    pub conditioning: bool,
}

/// `[clicked*, clicked, rest...]` where `clicked*` only conditions the model.
pub fn duplicate_click_frame(sequence: &[String], clicked: &str) -> Result<Vec<Frame>> {
    if !sequence.iter().any(|id| id == clicked) {
        return Err(Error::UnknownView(clicked.to_string()));
    }
    let mut frames = vec![
        Frame {
            view_id: clicked.to_string(),
            conditioning: true,
        },
        Frame {
            view_id: clicked.to_string(),
            conditioning: false,
        },
    ];
    frames.extend(sequence.iter().filter(|id| *id != clicked).map(|id| Frame {
        view_id: id.clone(),
        conditioning: false,
    }));
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRequest {
    pub frames: Vec<Frame>,
    pub click: Click,
}

impl OracleRequest {
    pub fn new(sequence: &[String], click: Click, duplicate: bool) -> Result<Self> {
        let frames = if duplicate {
            duplicate_click_frame(sequence, &click.view_id)?
        } else {
            if !sequence.contains(&click.view_id) {
                return Err(Error::UnknownView(click.view_id.clone()));
            }
            sequence
                .iter()
                .map(|id| Frame {
                    view_id: id.clone(),
                    conditioning: false,
                })
                .collect()
        };
        Ok(Self { frames, click })
    }

    /// Frames that receive an output raster, in order.
    pub fn output_frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| !f.conditioning)
    }

    /// Looks up every frame's bundle and checks the click and resolutions.
    pub fn resolve<'a>(&self, views: &[&'a ViewBundle]) -> Result<Vec<&'a ViewBundle>> {
        let find = |id: &str| {
            views
                .iter()
                .find(|v| v.id == id)
                .copied()
                .ok_or_else(|| Error::UnknownView(id.to_string()))
        };
        let clicked = find(&self.click.view_id)?;
        if !clicked.is_foreground(self.click.x, self.click.y) {
            return Err(Error::BackgroundClick {
                view: clicked.id.clone(),
                x: self.click.x,
                y: self.click.y,
            });
        }
        let out: Vec<&ViewBundle> = self
            .output_frames()
            .map(|f| find(&f.view_id))
            .collect::<Result<_>>()?;
        if out.iter().any(|v| v.camera.resolution() != clicked.camera.resolution()) {
            return Err(Error::ShapeMismatch(
                "all frames of a request must share one resolution".into(),
            ));
        }
        Ok(out)
    }
}

pub trait SimilarityOracle: Send + Sync {
    /// One raster per non-conditioning frame, in request order, values in `[0, 1]`
    /// and `0` on background.
    fn query(&self, request: &OracleRequest, views: &[&ViewBundle]) -> Result<Vec<Vec<f32>>>;

    /// Identifies the oracle's configuration for selection caching.
    fn fingerprint(&self) -> u64 {
        0
    }
}

impl<T: SimilarityOracle + ?Sized> SimilarityOracle for std::sync::Arc<T> {
    fn query(&self, request: &OracleRequest, views: &[&ViewBundle]) -> Result<Vec<Vec<f32>>> {
        (**self).query(request, views)
    }

    fn fingerprint(&self) -> u64 {
        (**self).fingerprint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Std-dev of independent per-pixel additive noise.
    pub pixel_sigma: f64,
    /// Std-dev of the constant offset added to a biased view.
    pub view_bias_sigma: f64,
    /// Probability that a view receives a bias offset.
    pub bias_rate: f64,
    /// Probability that a view is blurred with radius `blur_px`.
    pub flip_rate: f64,
    pub blur_px: u32,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            view_bias_sigma: 0.0,
            bias_rate: 1.0,
            flip_rate: 0.0,
            blur_px: 2,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("bias_rate", self.bias_rate), ("flip_rate", self.flip_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        for (name, sigma) in [
            ("pixel_sigma", self.pixel_sigma),
            ("view_bias_sigma", self.view_bias_sigma),
        ] {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!("{name} {sigma} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.pixel_sigma == 0.0
            && (self.view_bias_sigma == 0.0 || self.bias_rate == 0.0)
            && (self.flip_rate == 0.0 || self.blur_px == 0)
    }

    fn view_rng(&self, view_id: &str) -> ChaCha8Rng {
        let mut h = Fnv64::default();
        h.write(view_id.as_bytes());
        ChaCha8Rng::seed_from_u64(self.seed ^ h.finish())
    }

    /// Degrades one view's map in place. Background pixels stay 0.
    pub fn apply(&self, view_id: &str, width: u32, height: u32, map: &mut [f32], foreground: &[bool]) {
        if self.is_zero() {
            return;
        }
        let mut rng = self.view_rng(view_id);
        let blur = rng.random::<f64>() < self.flip_rate;
        let biased = rng.random::<f64>() < self.bias_rate;
        let bias = if biased && self.view_bias_sigma > 0.0 {
            Normal::new(0.0, self.view_bias_sigma).unwrap().sample(&mut rng)
        } else {
            0.0
        };
        if blur && self.blur_px > 0 {
            box_blur(map, width as usize, height as usize, self.blur_px as usize);
        }
        let pixel = (self.pixel_sigma > 0.0).then(|| Normal::new(0.0, self.pixel_sigma).unwrap());
        for (v, &fg) in map.iter_mut().zip(foreground) {
            if !fg {
                *v = 0.0;
                continue;
            }
            let mut x = *v as f64 + bias;
            if let Some(n) = &pixel {
                x += n.sample(&mut rng);
            }
            *v = x.clamp(0.0, 1.0) as f32;
        }
    }
}

/// Separable box blur, averaging only in-bounds pixels.
fn box_blur(map: &mut [f32], w: usize, h: usize, r: usize) {
    let mut tmp = vec![0f32; map.len()];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            let s: f32 = map[y * w + lo..=y * w + hi].iter().sum();
            tmp[y * w + x] = s / (hi - lo + 1) as f32;
        }
    }
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            let s: f32 = (lo..=hi).map(|yy| tmp[yy * w + x]).sum();
            map[y * w + x] = s / (hi - lo + 1) as f32;
        }
    }
}

/// Ground-truth similarity from material ids: 1 on the clicked material, 0 elsewhere.
///
/// The result depends only on which material was clicked, never on where.
/// Negative clicks produce the complement on foreground.
#[derive(Debug, Clone, Default)]
pub struct SyntheticOracle {
    pub noise: NoiseModel,
}

impl SyntheticOracle {
    pub fn new(noise: NoiseModel) -> Self {
        Self { noise }
    }
}

impl SimilarityOracle for SyntheticOracle {
    fn query(&self, request: &OracleRequest, views: &[&ViewBundle]) -> Result<Vec<Vec<f32>>> {
        let frames = request.resolve(views)?;
        let clicked = views.iter().find(|v| v.id == request.click.view_id).unwrap();
        let material = clicked.material_id[clicked.index(request.click.x, request.click.y)];
        let negative = request.click.polarity == Polarity::Negative;
        Ok(frames
            .iter()
            .map(|view| {
                let fg: Vec<bool> = view.material_id.iter().map(|&m| m >= 0).collect();
                let mut map: Vec<f32> = view
                    .material_id
                    .iter()
                    .map(|&m| match (m >= 0, (m == material) != negative) {
                        (true, true) => 1.0,
                        _ => 0.0,
                    })
                    .collect();
                self.noise
                    .apply(&view.id, view.width(), view.height(), &mut map, &fg);
                map
            })
            .collect())
    }

    fn fingerprint(&self) -> u64 {
        let n = &self.noise;
        let mut h = Fnv64::default();
        h.write(b"synthetic");
        for x in [n.pixel_sigma, n.view_bias_sigma, n.bias_rate, n.flip_rate] {
            h.write(&x.to_le_bytes());
        }
        h.write(&n.blur_px.to_le_bytes());
        h.write(&n.seed.to_le_bytes());
        h.finish()
    }
}

/// Reads `<dir>/<view_id>.simf` for every output frame.
#[derive(Debug, Clone)]
pub struct FileOracle {
    pub dir: PathBuf,
}

impl FileOracle {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl SimilarityOracle for FileOracle {
    fn query(&self, request: &OracleRequest, views: &[&ViewBundle]) -> Result<Vec<Vec<f32>>> {
        let frames = request.resolve(views)?;
        frames
            .iter()
            .map(|view| {
                let path = self.dir.join(format!("{}.simf", view.id));
                if !path.exists() {
                    return Err(Error::MissingFrame {
                        view: view.id.clone(),
                        path,
                    });
                }
                let raster = FloatRaster::read(&path)?;
                if (raster.width, raster.height, raster.channels) != (view.width(), view.height(), 1) {
                    return Err(Error::ShapeMismatch(format!(
                        "{} is {}x{}x{}, view is {}x{}",
                        path.display(),
                        raster.width,
                        raster.height,
                        raster.channels,
                        view.width(),
                        view.height()
                    )));
                }
                Ok(raster
                    .data
                    .iter()
                    .zip(&view.material_id)
                    .map(|(&v, &m)| if m >= 0 { v.clamp(0.0, 1.0) } else { 0.0 })
                    .collect())
            })
            .collect()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write(b"file");
        h.write(self.dir.to_string_lossy().as_bytes());
        h.finish()
    }
}

/// Smallest visible area for a material to be clickable in a `w × h` frame.
pub fn min_material_area(width: u32, height: u32) -> usize {
    let frac = (MIN_MATERIAL_FRACTION * width as f64 * height as f64).ceil() as usize;
    MIN_MATERIAL_PX.max(frac)
}

/// Mask of `target` eroded by [`CLICK_BORDER_PX`], or why it cannot be clicked.
pub fn clickable_mask(view: &ViewBundle, target: i32) -> Result<BinaryMask> {
    let mask = BinaryMask::from_ids(view, target);
    let area = mask.count();
    let min = min_material_area(view.width(), view.height());
    if area < min {
        return Err(Error::Unselectable {
            material: target,
            reason: format!("{area} visible pixels, need {min}"),
        });
    }
    let eroded = erode(&mask, CLICK_BORDER_PX);
    if eroded.count() == 0 {
        return Err(Error::Unselectable {
            material: target,
            reason: format!("no pixel {CLICK_BORDER_PX}px inside the material border"),
        });
    }
    Ok(eroded)
}

/// Uniform positive click on `target`, at least [`CLICK_BORDER_PX`] from its border.
pub fn sample_click<R: Rng + ?Sized>(view: &ViewBundle, target: i32, rng: &mut R) -> Result<Click> {
    let eroded = clickable_mask(view, target)?;
    let pick = rng.random_range(0..eroded.count());
    let i = eroded
        .data
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .nth(pick)
        .map(|(i, _)| i)
        .unwrap();
    let w = view.width() as usize;
    Ok(Click::positive(view.id.clone(), (i % w) as u32, (i / w) as u32))
}
