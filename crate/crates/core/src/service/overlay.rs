//! Server-side frame compositing for client views.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{Reconstruction, SelectionParams, SelectionSession};
use crate::render::raster::encode_png;
use crate::render::ViewBundle;
use crate::scene::Camera;
use crate::segment::{Segmentation, UNKNOWN};

pub const OVERLAY_ALPHA: f32 = 0.5;
pub const MASK_COLOR: [u8; 3] = [0, 255, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlay {
    #[default]
    None,
    Mask,
    Heatmap,
    Segments,
}

impl std::str::FromStr for Overlay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Overlay::None),
            "mask" => Ok(Overlay::Mask),
            "heatmap" => Ok(Overlay::Heatmap),
            "segments" => Ok(Overlay::Segments),
            other => Err(Error::invalid(format!("unknown overlay `{other}`"))),
        }
    }
}

fn blend(base: &mut [u8], color: [u8; 3], alpha: f32) {
    for (b, c) in base.iter_mut().zip(color) {
        *b = (*b as f32 * (1.0 - alpha) + c as f32 * alpha).round() as u8;
    }
}

/// Blue at 0 through cyan, green and yellow to red at 1.
pub fn heat_color(v: f32) -> [u8; 3] {
    const STOPS: [[f32; 3]; 5] = [
        [0.0, 0.0, 255.0],
        [0.0, 255.0, 255.0],
        [0.0, 255.0, 0.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let t = x - i as f32;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * t).round() as u8)
}

/// Tints foreground pixels where `color_at` returns a color.
pub fn composite(frame: &ViewBundle, color_at: impl Fn(usize) -> Option<[u8; 3]> + Sync) -> Vec<u8> {
    let mut rgb = frame.rgb.clone();
    rgb.par_chunks_mut(3).enumerate().for_each(|(i, px)| {
        if frame.material_id[i] >= 0 {
            if let Some(c) = color_at(i) {
                blend(px, c, OVERLAY_ALPHA);
            }
        }
    });
    rgb
}

pub fn mask_overlay(frame: &ViewBundle, rec: &Reconstruction) -> Vec<u8> {
    composite(frame, |i| rec.mask.data[i].then_some(MASK_COLOR))
}

pub fn heatmap_overlay(frame: &ViewBundle, rec: &Reconstruction) -> Vec<u8> {
    composite(frame, |i| Some(heat_color(rec.heatmap[i])))
}

/// Group colors per pixel, or only `group` in the mask color.
pub fn segments_overlay(frame: &ViewBundle, seg: &Segmentation, group: Option<usize>) -> Vec<u8> {
    let w = frame.width();
    let labels: Vec<i32> = (0..frame.material_id.len())
        .into_par_iter()
        .map(|i| {
            if frame.material_id[i] < 0 {
                return UNKNOWN;
            }
            frame
                .hit_point(i as u32 % w, i as u32 / w)
                .map_or(UNKNOWN, |p| seg.label_at(p))
        })
        .collect();
    composite(frame, |i| {
        let l = labels[i];
        if l == UNKNOWN {
            return None;
        }
        match group {
            Some(g) => (l as usize == g).then_some(MASK_COLOR),
            None => seg.groups.get(l as usize).map(|g| g.color),
        }
    })
}

/// Renders `camera` and composites the requested overlay as PNG. Missing
/// selection or segmentation state yields the plain render.
pub fn render_frame(
    frame: &ViewBundle,
    overlay: Overlay,
    selection: Option<&SelectionSession>,
    params: &SelectionParams,
    segmentation: Option<&Segmentation>,
    group: Option<usize>,
) -> Result<Vec<u8>> {
    let camera: &Camera = &frame.camera;
    let rgb = match (overlay, selection, segmentation) {
        (Overlay::Mask, Some(s), _) => mask_overlay(frame, &s.reconstruct_with(camera, params, "")),
        (Overlay::Heatmap, Some(s), _) => heatmap_overlay(frame, &s.reconstruct_with(camera, params, "")),
        (Overlay::Segments, _, Some(seg)) => segments_overlay(frame, seg, group),
        _ => frame.rgb.clone(),
    };
    encode_png(frame.width(), frame.height(), &rgb)
}
