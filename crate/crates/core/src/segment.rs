//! Automatic material segmentation: LAB-histogram click proposal, one
//! selection per click, and merging of selections that overlap.

use std::path::Path;
use std::sync::Arc;

use glam::DVec3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lift::{
    reconstruct_view, select, select_reusing, vote, IvfIndex, LiftConfig, Scene, SelectionParams,
    SimilarityCloud,
};
use crate::metrics::{random_cameras, BinaryMask, Confusion};
use crate::oracle::{Click, SimilarityOracle};
use crate::render::raster::write_file;
use crate::render::ViewBundle;
use crate::scene::PALETTE;

pub const L_BINS: usize = 4;
pub const AB_BINS: usize = 16;
pub const DEFAULT_TOTAL_CLICKS: usize = 25;
pub const DEFAULT_MERGE_TAU: f64 = 0.75;
pub const DEFAULT_MERGE_VIEWS: usize = 8;
/// Label of surface points no group claims.
pub const UNKNOWN: i32 = -1;

// D65 reference white, Y normalized to 1
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let t = f * f * f;
    if t > EPSILON {
        t
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// sRGB bytes to CIE LAB under D65.
pub fn rgb_to_lab(rgb: [u8; 3]) -> LabColor {
    let [r, g, b] = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let [fx, fy, fz] = [x / WHITE[0], y / WHITE[1], z / WHITE[2]].map(lab_f);
    LabColor {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Inverse of [`rgb_to_lab`], as unclamped sRGB values in `[0, 255]` for in-gamut colors.
pub fn lab_to_rgb(lab: LabColor) -> [f64; 3] {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let x = lab_f_inv(fx) * WHITE[0];
    let y = lab_f_inv(fy) * WHITE[1];
    let z = lab_f_inv(fz) * WHITE[2];
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [r, g, b].map(|c| linear_to_srgb(c) * 255.0)
}

/// Histogram bin `(L, a, b)` of a color: 4 bins over L ∈ [0, 100] and 16 over
/// each of a, b ∈ [-128, 128).
pub fn lab_bin(lab: LabColor) -> [u8; 3] {
    let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1) as u8;
    [
        clamp(lab.l / (100.0 / L_BINS as f64), L_BINS),
        clamp((lab.a + 128.0) / (256.0 / AB_BINS as f64), AB_BINS),
        clamp((lab.b + 128.0) / (256.0 / AB_BINS as f64), AB_BINS),
    ]
}

/// A nonempty histogram bin and the foreground pixels in it.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMode {
    pub bin: [u8; 3],
    /// `(view index, x, y)`.
    pub pixels: Vec<(usize, u32, u32)>,
}

impl ColorMode {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Nonempty LAB histogram bins over the foreground of `views`, ordered by bin.
pub fn color_modes(views: &[&ViewBundle]) -> Result<Vec<ColorMode>> {
    let mut bins: Vec<Vec<(usize, u32, u32)>> = vec![Vec::new(); L_BINS * AB_BINS * AB_BINS];
    for (vi, view) in views.iter().enumerate() {
        for y in 0..view.height() {
            for x in 0..view.width() {
                let i = view.index(x, y);
                if view.material_id[i] < 0 {
                    continue;
                }
                let rgb = [view.rgb[3 * i], view.rgb[3 * i + 1], view.rgb[3 * i + 2]];
                let [l, a, b] = lab_bin(rgb_to_lab(rgb));
                let slot = (l as usize * AB_BINS + a as usize) * AB_BINS + b as usize;
                bins[slot].push((vi, x, y));
            }
        }
    }
    let modes: Vec<ColorMode> = bins
        .into_iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(slot, pixels)| ColorMode {
            bin: [
                (slot / (AB_BINS * AB_BINS)) as u8,
                ((slot / AB_BINS) % AB_BINS) as u8,
                (slot % AB_BINS) as u8,
            ],
            pixels,
        })
        .collect();
    if modes.is_empty() {
        return Err(Error::EmptyInput("no foreground pixels to propose clicks on"));
    }
    Ok(modes)
}

/// Splits `total` proportionally to `areas` by largest remainder. Ties in the
/// remainder go to the larger area, then to the lower index.
pub fn allocate(areas: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = areas.iter().sum();
    if sum == 0 {
        return vec![0; areas.len()];
    }
    let mut out: Vec<usize> = areas.iter().map(|&a| a * total / sum).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    // remainder of a*total/sum is (a*total) % sum
    order.sort_by(|&i, &j| {
        let ri = (areas[i] * total) % sum;
        let rj = (areas[j] * total) % sum;
        rj.cmp(&ri).then(areas[j].cmp(&areas[i])).then(i.cmp(&j))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// `total` clicks spread over the color modes of `views` in proportion to
/// their area, sampled without replacement inside each mode.
pub fn propose_clicks<R: Rng + ?Sized>(views: &[&ViewBundle], total: usize, rng: &mut R) -> Result<Vec<Click>> {
    if total == 0 {
        return Err(Error::invalid("at least one click must be proposed"));
    }
    let modes = color_modes(views)?;
    let areas: Vec<usize> = modes.iter().map(ColorMode::area).collect();
    let counts = allocate(&areas, total);
    let mut clicks = Vec::with_capacity(total);
    for (mode, n) in modes.iter().zip(counts) {
        let picks: Vec<usize> = if n <= mode.area() {
            sample(rng, mode.area(), n).into_vec()
        } else {
            (0..n).map(|_| rng.random_range(0..mode.area())).collect()
        };
        for p in picks {
            let (vi, x, y) = mode.pixels[p];
            clicks.push(Click::positive(views[vi].id.clone(), x, y));
        }
    }
    Ok(clicks)
}

/// Symmetric pairwise mIoU between per-click mask sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeMatrix {
    n: usize,
    values: Vec<f64>,
}

impl MergeMatrix {
    /// mIoU of each pair over the concatenation of its views.
    pub fn compute(masks: &[Vec<BinaryMask>]) -> Result<Self> {
        let n = masks.len();
        if n == 0 {
            return Err(Error::EmptyInput("no selections to merge"));
        }
        let views = masks[0].len();
        if masks.iter().any(|m| m.len() != views) {
            return Err(Error::ShapeMismatch("selections cover different view counts".into()));
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let ious = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut c = Confusion::default();
                for (a, b) in masks[i].iter().zip(&masks[j]) {
                    c.add(Confusion::of(a, b)?);
                }
                Ok(c.iou())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        for (&(i, j), v) in pairs.iter().zip(ious) {
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClickGroup {
    /// Click whose selection stands for the group.
    pub representative: usize,
    /// All clicks merged into the group, ascending.
    pub members: Vec<usize>,
    /// Selected pixels of the representative over all views.
    pub area: usize,
}

/// Merges selections while any pair overlaps with mIoU ≥ `tau`.
///
/// The largest entry merges first (lowest index pair on ties). The selection
/// with the smaller area joins the other one, whose mask keeps representing
/// the group; on equal area the lower index survives.
pub fn merge_selections(masks: &[Vec<BinaryMask>], tau: f64) -> Result<Vec<ClickGroup>> {
    let matrix = MergeMatrix::compute(masks)?;
    Ok(merge_with_matrix(masks, &matrix, tau))
}

fn merge_with_matrix(masks: &[Vec<BinaryMask>], matrix: &MergeMatrix, tau: f64) -> Vec<ClickGroup> {
    let n = masks.len();
    let mut groups: Vec<Option<ClickGroup>> = (0..n)
        .map(|i| {
            Some(ClickGroup {
                representative: i,
                members: vec![i],
                area: masks[i].iter().map(BinaryMask::count).sum(),
            })
        })
        .collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if groups[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if groups[j].is_none() {
                    continue;
                }
                let v = matrix.get(groups[i].as_ref().unwrap().representative, groups[j].as_ref().unwrap().representative);
                if v >= tau && best.is_none_or(|b| v > b.0) {
                    best = Some((v, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let (ai, aj) = (groups[i].as_ref().unwrap().area, groups[j].as_ref().unwrap().area);
        let (keep, gone) = if aj > ai { (j, i) } else { (i, j) };
        let absorbed = groups[gone].take().unwrap();
        let g = groups[keep].as_mut().unwrap();
        g.members.extend(absorbed.members);
        g.members.sort_unstable();
    }
    groups.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub total_clicks: usize,
    pub tau: f64,
    pub merge_views: usize,
    pub seed: u64,
    pub selection: SelectionParams,
    pub lift: LiftConfig,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            total_clicks: DEFAULT_TOTAL_CLICKS,
            tau: DEFAULT_MERGE_TAU,
            merge_views: DEFAULT_MERGE_VIEWS,
            seed: 0,
            selection: SelectionParams::default(),
            lift: LiftConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentGroup {
    pub id: usize,
    pub representative_click: Click,
    pub members: Vec<usize>,
    pub color: [u8; 3],
    /// The representative's selection over the lifted surface.
    pub index: Arc<IvfIndex>,
}

/// Groups found on an object and the group of every lifted surface point.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub clicks: Vec<Click>,
    pub groups: Vec<SegmentGroup>,
    /// Lifted surface points shared by every group's index.
    pub cloud: Arc<SimilarityCloud>,
    /// Group id per cloud point, [`UNKNOWN`] when no group selects it.
    pub labels: Vec<i32>,
    pub params: SegmentParams,
}

#[derive(Serialize)]
struct GroupJson<'a> {
    id: usize,
    representative_click: &'a Click,
    color: [u8; 3],
    members: &'a [usize],
}

#[derive(Serialize)]
struct SegmentationJson<'a> {
    groups: Vec<GroupJson<'a>>,
    assignment: &'a str,
    points: usize,
    unknown: i32,
}

impl Segmentation {
    /// Group whose vote selects `point` with the highest mean similarity.
    pub fn label_at(&self, point: DVec3) -> i32 {
        let q = point.as_vec3().to_array();
        let mut best: Option<(f32, i32)> = None;
        for g in &self.groups {
            let v = vote(&g.index, q, &self.params.selection).expect("group index is not empty");
            if v.selected && best.is_none_or(|b| v.mean_similarity > b.0) {
                best = Some((v.mean_similarity, g.id as i32));
            }
        }
        best.map_or(UNKNOWN, |b| b.1)
    }

    /// `{groups, assignment}` JSON, with `assignment` naming the label file.
    pub fn to_json(&self, assignment_file: &str) -> String {
        let doc = SegmentationJson {
            groups: self
                .groups
                .iter()
                .map(|g| GroupJson {
                    id: g.id,
                    representative_click: &g.representative_click,
                    color: g.color,
                    members: &g.members,
                })
                .collect(),
            assignment: assignment_file,
            points: self.labels.len(),
            unknown: UNKNOWN,
        };
        serde_json::to_string_pretty(&doc).expect("segmentation serializes")
    }

    /// Labels as little-endian i32, one per cloud point.
    pub fn labels_bytes(&self) -> Vec<u8> {
        self.labels.iter().flat_map(|l| l.to_le_bytes()).collect()
    }

    /// Writes `segments.json` and `labels.bin` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_file(dir.join("labels.bin"), &self.labels_bytes())?;
        write_file(dir.join("segments.json"), self.to_json("labels.bin").as_bytes())
    }
}

/// Proposes clicks from the color modes of the lifting views, selects each,
/// merges overlapping selections on seeded random views and labels every
/// lifted surface point.
pub fn segment_object(scene: &Arc<Scene>, oracle: &dyn SimilarityOracle, params: &SegmentParams) -> Result<Segmentation> {
    params.selection.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bundles: Vec<Arc<ViewBundle>> = scene.manifest.views.iter().map(|v| scene.render(v)).collect();
    let refs: Vec<&ViewBundle> = bundles.iter().map(|b| b.as_ref()).collect();
    let clicks = propose_clicks(&refs, params.total_clicks, &mut rng)?;
    let cameras = random_cameras(scene, params.merge_views, params.seed.wrapping_add(1))?;

    let mut geometry: Option<Arc<IvfIndex>> = None;
    let mut values = Vec::with_capacity(clicks.len());
    let mut masks = Vec::with_capacity(clicks.len());
    for click in &clicks {
        let session = match &geometry {
            Some(g) => select_reusing(scene, oracle, click.clone(), params.selection, params.lift, g)?,
            None => select(scene, oracle, click.clone(), None, params.selection, params.lift)?,
        };
        let index = session.index().clone();
        masks.push(
            cameras
                .iter()
                .enumerate()
                .map(|(i, c)| reconstruct_view(&index, &scene.bvh, c, &params.selection, &format!("merge_{i}")).mask)
                .collect::<Vec<_>>(),
        );
        if let Some(g) = &geometry {
            if g.cloud().positions != session.cloud().positions {
                return Err(Error::ShapeMismatch("selections lifted different surface points".into()));
            }
        }
        values.push(session.cloud().values.clone());
        geometry.get_or_insert(index);
    }
    let geometry = geometry.expect("at least one click");
    let merged = merge_selections(&masks, params.tau)?;
    let cloud = geometry.cloud().clone();
    let groups = merged
        .into_iter()
        .enumerate()
        .map(|(id, g)| {
            let c = Arc::new(cloud.with_values(std::mem::take(&mut values[g.representative]))?);
            Ok(SegmentGroup {
                id,
                representative_click: clicks[g.representative].clone(),
                members: g.members,
                color: PALETTE[id % PALETTE.len()],
                index: Arc::new(geometry.with_cloud(c)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seg = Segmentation {
        clicks,
        groups,
        cloud: cloud.clone(),
        labels: Vec::new(),
        params: *params,
    };
    seg.labels = cloud
        .positions
        .par_iter()
        .map(|p| seg.label_at(DVec3::new(p[0] as f64, p[1] as f64, p[2] as f64)))
        .collect();
    Ok(seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert_eq, prop_assume, proptest};

    #[test]
    fn white_and_black() {
        let w = rgb_to_lab([255, 255, 255]);
        assert!((w.l - 100.0).abs() < 1e-3);
        assert!(w.a.abs() < 0.01 && w.b.abs() < 0.01);
        assert!(rgb_to_lab([0, 0, 0]).l.abs() < 1e-9);
    }

    #[test]
    fn round_trip_random_colors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0f64;
        for _ in 0..1000 {
            let c: [u8; 3] = [rng.random(), rng.random(), rng.random()];
            let back = lab_to_rgb(rgb_to_lab(c));
            for k in 0..3 {
                worst = worst.max((back[k] - c[k] as f64).abs() / 255.0);
            }
        }
        assert!(worst <= 1.0 / 255.0, "worst {worst}");
    }

    #[test]
    fn bins_cover_the_grid() {
        assert_eq!(lab_bin(rgb_to_lab([255, 255, 255]))[0], 3);
        assert_eq!(lab_bin(rgb_to_lab([0, 0, 0])), [0, 8, 8]);
        assert_eq!(L_BINS * AB_BINS * AB_BINS, 1024);
    }

    #[test]
    fn allocation_is_proportional() {
        assert_eq!(allocate(&[800, 200], 25), vec![20, 5]);
        assert_eq!(allocate(&[1234], 25), vec![25]);
        assert_eq!(allocate(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(allocate(&[1, 2, 1], 2), vec![1, 1, 0]);
    }

    proptest! {
        #[test]
        fn allocation_sums_to_total(areas in prop::collection::vec(0usize..5000, 1..40), total in 1usize..60) {
            prop_assume!(areas.iter().any(|&a| a > 0));
            let a = allocate(&areas, total);
            prop_assert_eq!(a.iter().sum::<usize>(), total);
            for (n, area) in a.iter().zip(&areas) {
                if *area == 0 {
                    prop_assert_eq!(*n, 0);
                }
            }
        }
    }

    fn mask(bits: &[u8]) -> Vec<BinaryMask> {
        vec![BinaryMask::from_fn(bits.len() as u32, 1, |x, _| bits[x as usize] == 1)]
    }

    #[test]
    fn identical_masks_merge() {
        let g = merge_selections(&[mask(&[1, 1, 0]), mask(&[1, 1, 0])], 0.75).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].members, vec![0, 1]);
    }

    #[test]
    fn disjoint_masks_stay_apart() {
        let g = merge_selections(&[mask(&[1, 1, 0, 0]), mask(&[0, 0, 1, 1])], 0.75).unwrap();
        assert_eq!(g.len(), 2);
        assert!(merge_selections(&[], 0.75).is_err());
    }

    #[test]
    fn larger_selection_represents_the_group() {
        // IoU = 3/4
        let g = merge_selections(&[mask(&[1, 1, 1, 0]), mask(&[1, 1, 1, 1])], 0.75).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].representative, 1);
        assert_eq!(g[0].area, 4);
    }

    #[test]
    fn matrix_is_symmetric_with_unit_diagonal() {
        let sets = [mask(&[1, 1, 0, 0]), mask(&[1, 0, 1, 0]), mask(&[0, 0, 0, 1])];
        let m = MergeMatrix::compute(&sets).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert!((m.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
    }
}
