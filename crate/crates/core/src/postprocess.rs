//! Binary mask morphology: square-window erosion and dilation, 4-connected
//! labeling, hole filling and sprinkle removal.

use std::collections::VecDeque;

use crate::metrics::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabels {
    pub width: u32,
    pub height: u32,
    /// Component index per pixel, `-1` where the input was unset.
    pub labels: Vec<i32>,
    pub areas: Vec<usize>,
}

impl ComponentLabels {
    pub fn count(&self) -> usize {
        self.areas.len()
    }
}

/// Window sums over `[i - r, i + r]` along each line, with lines of `len`
/// elements spaced `step` apart. Out-of-range positions count as unset.
fn line_pass(
    src: &[bool],
    lines: usize,
    len: usize,
    line_stride: usize,
    step: usize,
    r: usize,
    erode: bool,
) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let mut prefix = vec![0u32; len + 1];
    for l in 0..lines {
        let base = l * line_stride;
        for i in 0..len {
            prefix[i + 1] = prefix[i] + src[base + i * step] as u32;
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(len);
            let set = prefix[hi] - prefix[lo];
            out[base + i * step] = if erode {
                i >= r && i + r < len && set as usize == 2 * r + 1
            } else {
                set > 0
            };
        }
    }
    out
}

fn separable(mask: &BinaryMask, r: u32, erode: bool) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h, r) = (mask.width as usize, mask.height as usize, r as usize);
    let rows = line_pass(&mask.data, h, w, w, 1, r, erode);
    let data = line_pass(&rows, w, h, 1, w, r, erode);
    BinaryMask { data, ..mask.clone() }
}

/// A pixel survives iff every pixel of its `(2r+1)²` window is set and inside the raster.
pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    separable(mask, radius, true)
}

pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    separable(mask, radius, false)
}

/// 4-connected labeling of pixels equal to `value`, labels assigned in raster order.
fn label_where(width: u32, height: u32, data: &[bool], value: bool) -> ComponentLabels {
    let (w, h) = (width as usize, height as usize);
    let mut labels = vec![-1i32; w * h];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if data[start] != value || labels[start] >= 0 {
            continue;
        }
        let label = areas.len() as i32;
        labels[start] = label;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if data[j] == value && labels[j] < 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        areas.push(area);
    }
    ComponentLabels {
        width,
        height,
        labels,
        areas,
    }
}

pub fn connected_components(mask: &BinaryMask) -> ComponentLabels {
    label_where(mask.width, mask.height, &mask.data, true)
}

/// Sets enclosed background components of area at most `max_area`.
/// Background touching the raster border is never filled.
pub fn fill_holes(mask: &BinaryMask, max_area: usize) -> BinaryMask {
    let holes = label_where(mask.width, mask.height, &mask.data, false);
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut touches_border = vec![false; holes.count()];
    for (i, &l) in holes.labels.iter().enumerate() {
        if l >= 0 {
            let (x, y) = (i % w, i / w);
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                touches_border[l as usize] = true;
            }
        }
    }
    let mut out = mask.clone();
    for (i, &l) in holes.labels.iter().enumerate() {
        if l >= 0 && !touches_border[l as usize] && holes.areas[l as usize] <= max_area {
            out.data[i] = true;
        }
    }
    out
}

/// Clears foreground components with area below `min_area`.
pub fn remove_sprinkles(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let comps = connected_components(mask);
    let mut out = mask.clone();
    for (i, &l) in comps.labels.iter().enumerate() {
        if l >= 0 && comps.areas[l as usize] < min_area {
            out.data[i] = false;
        }
    }
    out
}
