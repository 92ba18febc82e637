//! Accuracy, multiview-consistency and click-robustness protocols.

use std::fmt::Write as _;
use std::sync::Arc;

use glam::DVec3;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{mean_pairwise_hamming, BinaryMask, Confusion};
use crate::error::{Error, Result};
use crate::lift::{
    reconstruct_view, select, select_reusing, IvfIndex, LiftConfig, Scene, SelectionParams,
    SelectionSession,
};
use crate::oracle::{clickable_mask, sample_click, Click, SimilarityOracle};
use crate::render::ViewBundle;
use crate::scene::Camera;

pub const DEFAULT_EVAL_VIEWS: usize = 50;
pub const DEFAULT_EVAL_CLICKS: usize = 5;
pub const CONSISTENCY_ATTEMPTS: usize = 10_000;
/// Occlusion slack as a fraction of the scene diagonal.
pub const OCCLUSION_TOLERANCE: f64 = 1e-4;

/// Mean with the half-width of a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, ci95, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialScores {
    pub material: i32,
    pub name: String,
    pub miou: MeanCi,
    pub f1: MeanCi,
    pub precision: MeanCi,
    pub recall: MeanCi,
    /// Why the material was skipped, if it was.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub scene: String,
    pub materials: Vec<MaterialScores>,
    /// Hamming ×100 of the selection at the clicked point, lower is better.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robustness: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, one row per material plus a mean row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let cell = |m: &MeanCi| format!("{:.3} ± {:.3}", m.mean, m.ci95);
        if !self.materials.is_empty() {
            let _ = writeln!(
                out,
                "{:<20} {:>15} {:>15} {:>15} {:>15}",
                "material", "mIoU", "F1", "precision", "recall"
            );
            let scored: Vec<&MaterialScores> =
                self.materials.iter().filter(|m| m.skipped.is_none()).collect();
            for m in &self.materials {
                let label = format!("{} ({})", m.name, m.material);
                match &m.skipped {
                    Some(why) => {
                        let _ = writeln!(out, "{label:<20} skipped: {why}");
                    }
                    None => {
                        let _ = writeln!(
                            out,
                            "{label:<20} {:>15} {:>15} {:>15} {:>15}",
                            cell(&m.miou),
                            cell(&m.f1),
                            cell(&m.precision),
                            cell(&m.recall)
                        );
                    }
                }
            }
            if !scored.is_empty() {
                let col = |f: fn(&MaterialScores) -> f64| {
                    MeanCi::of(&scored.iter().map(|m| f(m)).collect::<Vec<_>>())
                };
                let _ = writeln!(
                    out,
                    "{:<20} {:>15} {:>15} {:>15} {:>15}",
                    "mean",
                    cell(&col(|m| m.miou.mean)),
                    cell(&col(|m| m.f1.mean)),
                    cell(&col(|m| m.precision.mean)),
                    cell(&col(|m| m.recall.mean))
                );
            }
        }
        if self.consistency.is_some() || self.robustness.is_some() {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(out, "{:<20} {:>15} {:>15}", "hamming x100", "consistency", "robustness");
            let _ = writeln!(
                out,
                "{:<20} {:>15} {:>15}",
                self.scene,
                fmt(self.consistency),
                fmt(self.robustness)
            );
        }
        out
    }
}

/// `n` seeded cameras on the sphere the lifting views orbit, looking at the
/// mesh center, with the first lifting view's field of view and resolution.
pub fn random_cameras(scene: &Scene, n: usize, seed: u64) -> Result<Vec<Camera>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(|| next_random_camera(scene, &mut rng))
        .take(n)
        .collect()
}

fn template(scene: &Scene) -> Result<&Camera> {
    scene
        .manifest
        .views
        .first()
        .map(|v| &v.camera)
        .ok_or(Error::EmptyInput("scene has no views"))
}

fn next_random_camera(scene: &Scene, rng: &mut ChaCha8Rng) -> Result<Camera> {
    let t = template(scene)?;
    let dir = loop {
        let v = DVec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if v.length() > 1e-9 {
            break v;
        }
    };
    Camera::looking_at_center(
        scene.mesh.center(),
        dir,
        scene.view_radius(),
        t.vertical_fov,
        t.resolution(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyOptions {
    pub n_views: usize,
    pub n_clicks: usize,
    pub seed: u64,
    pub params: SelectionParams,
    pub config: LiftConfig,
}

impl Default for AccuracyOptions {
    fn default() -> Self {
        Self {
            n_views: DEFAULT_EVAL_VIEWS,
            n_clicks: DEFAULT_EVAL_CLICKS,
            seed: 0,
            params: SelectionParams::default(),
            config: LiftConfig::default(),
        }
    }
}

/// Manifest views where `material` can be clicked.
fn clickable_views(scene: &Scene, material: i32) -> Vec<Arc<ViewBundle>> {
    scene
        .manifest
        .views
        .iter()
        .map(|v| scene.render(v))
        .filter(|b| clickable_mask(b, material).is_ok())
        .collect()
}

fn select_with(
    scene: &Arc<Scene>,
    oracle: &dyn SimilarityOracle,
    click: Click,
    params: SelectionParams,
    config: LiftConfig,
    geometry: Option<&IvfIndex>,
) -> Result<SelectionSession> {
    match geometry {
        Some(g) => select_reusing(scene, oracle, click, params, config, g),
        None => select(scene, oracle, click, None, params, config),
    }
}

/// Per material: sample clicks on random lifting views, select, and score the
/// reconstruction of seeded random novel views against rendered ground truth.
pub fn eval_accuracy(
    scene: &Arc<Scene>,
    oracle: &dyn SimilarityOracle,
    opts: &AccuracyOptions,
) -> Result<EvalReport> {
    opts.params.validate()?;
    let cameras = random_cameras(scene, opts.n_views, opts.seed)?;
    let truth: Vec<ViewBundle> = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| scene.render_camera(&format!("eval_{i:03}"), c))
        .collect();
    let mut geometry: Option<Arc<IvfIndex>> = None;
    let mut materials = Vec::new();
    for m in 0..scene.mesh.material_count() as i32 {
        let name = scene.mesh.material_names[m as usize].clone();
        let candidates = clickable_views(scene, m);
        if candidates.is_empty() {
            log::warn!("material {m} ({name}) is not clickable in any lifting view, skipped");
            materials.push(MaterialScores {
                material: m,
                name,
                miou: MeanCi::default(),
                f1: MeanCi::default(),
                precision: MeanCi::default(),
                recall: MeanCi::default(),
                skipped: Some("not clickable in any lifting view".into()),
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e37_79b9 * (m as u64 + 1)));
        let mut per_click: [Vec<f64>; 4] = Default::default();
        for _ in 0..opts.n_clicks {
            let view = candidates.choose(&mut rng).unwrap();
            let click = sample_click(view, m, &mut rng)?;
            let session = select_with(
                scene,
                oracle,
                click,
                opts.params,
                opts.config,
                geometry.as_deref(),
            )?;
            if geometry.is_none() {
                geometry = Some(session.index().clone());
            }
            let mut sums = [0.0; 4];
            for (cam, gt) in cameras.iter().zip(&truth) {
                let rec = reconstruct_view(session.index(), &scene.bvh, cam, &opts.params, &gt.id);
                let c = Confusion::of(&rec.mask, &BinaryMask::from_ids(gt, m))?;
                let (p, r, f1) = c.precision_recall_f1();
                for (s, v) in sums.iter_mut().zip([c.iou(), f1, p, r]) {
                    *s += v;
                }
            }
            let n = cameras.len().max(1) as f64;
            for (acc, s) in per_click.iter_mut().zip(sums) {
                acc.push(s / n);
            }
        }
        materials.push(MaterialScores {
            material: m,
            name,
            miou: MeanCi::of(&per_click[0]),
            f1: MeanCi::of(&per_click[1]),
            precision: MeanCi::of(&per_click[2]),
            recall: MeanCi::of(&per_click[3]),
            skipped: None,
        });
    }
    Ok(EvalReport {
        scene: scene.manifest.asset.display().to_string(),
        materials,
        ..EvalReport::default()
    })
}

/// Selection at the clicked surface point across `n_views` random views that
/// see it unoccluded and inside the frame. Each view votes at the hit of its
/// own ray toward the point; the score is 100 × the fraction of views where
/// that vote is not selected.
pub fn eval_consistency(session: &SelectionSession, n_views: usize, seed: u64) -> Result<f64> {
    let scene = session.scene();
    let point = session.click_point();
    let tolerance = OCCLUSION_TOLERANCE * scene.mesh.diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut found, mut misses) = (0usize, 0usize);
    let mut attempts = 0;
    while found < n_views && attempts < CONSISTENCY_ATTEMPTS {
        attempts += 1;
        let cam = next_random_camera(scene, &mut rng)?;
        let inside = cam
            .basis()
            .project(&cam, point)
            .is_some_and(|px| px.x >= 0.0 && px.y >= 0.0 && px.x < cam.width as f64 && px.y < cam.height as f64);
        if !inside {
            continue;
        }
        let to = point - cam.position;
        let dist = to.length();
        let dir = to / dist;
        let hit = match scene.bvh.intersect(cam.position, dir, 0.0) {
            Some(h) if h.t < dist - tolerance => continue,
            Some(h) => cam.position + dir * h.t,
            None => point,
        };
        found += 1;
        misses += !session.vote_at(hit).selected as usize;
    }
    if found < n_views {
        return Err(Error::TooFewViews {
            achieved: found,
            wanted: n_views,
            attempts,
        });
    }
    Ok(100.0 * misses as f64 / found.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessOptions {
    pub n_clicks: usize,
    /// Random novel views reconstructed in addition to the clicked view.
    pub n_views: usize,
    pub seed: u64,
    pub params: SelectionParams,
    pub config: LiftConfig,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        Self {
            n_clicks: DEFAULT_EVAL_CLICKS,
            n_views: 8,
            seed: 0,
            params: SelectionParams::default(),
            config: LiftConfig::default(),
        }
    }
}

/// Mean pairwise Hamming ×100 between the reconstructions of `n_clicks`
/// selections clicked on one random view of `material`.
pub fn eval_robustness(
    scene: &Arc<Scene>,
    oracle: &dyn SimilarityOracle,
    material: i32,
    opts: &RobustnessOptions,
) -> Result<f64> {
    if opts.n_clicks < 2 {
        return Err(Error::invalid("robustness needs at least two clicks"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let candidates = clickable_views(scene, material);
    let view = candidates.choose(&mut rng).ok_or_else(|| Error::Unselectable {
        material,
        reason: "not clickable in any lifting view".into(),
    })?;
    let mut cameras = vec![view.camera];
    cameras.extend(random_cameras(scene, opts.n_views, opts.seed.wrapping_add(1))?);
    let mut geometry: Option<Arc<IvfIndex>> = None;
    let mut sets = Vec::with_capacity(opts.n_clicks);
    for _ in 0..opts.n_clicks {
        let click = sample_click(view, material, &mut rng)?;
        let session = select_with(scene, oracle, click, opts.params, opts.config, geometry.as_deref())?;
        geometry.get_or_insert_with(|| session.index().clone());
        sets.push(
            cameras
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    reconstruct_view(session.index(), &scene.bvh, c, &opts.params, &format!("r{i}")).mask
                })
                .collect::<Vec<_>>(),
        );
    }
    mean_pairwise_hamming(&sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_ci_of_constant_is_tight() {
        let m = MeanCi::of(&[0.5; 5]);
        assert_eq!(m.mean, 0.5);
        assert_eq!(m.ci95, 0.0);
        assert_eq!(m.n, 5);
    }

    #[test]
    fn mean_ci_normal_approximation() {
        let m = MeanCi::of(&[0.0, 1.0]);
        assert_eq!(m.mean, 0.5);
        let sd = (0.5f64).sqrt();
        assert!((m.ci95 - 1.96 * sd / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn table_has_rows_per_material() {
        let row = |m: i32| MaterialScores {
            material: m,
            name: format!("mat{m}"),
            miou: MeanCi::of(&[0.9]),
            f1: MeanCi::of(&[0.95]),
            precision: MeanCi::of(&[1.0]),
            recall: MeanCi::of(&[0.9]),
            skipped: None,
        };
        let report = EvalReport {
            scene: "demo".into(),
            materials: vec![row(0), row(1)],
            consistency: Some(0.0),
            robustness: None,
        };
        let table = report.to_table();
        assert!(table.contains("mat0 (0)"));
        assert!(table.contains("mean"));
        assert!(table.contains("consistency"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["materials"].as_array().unwrap().len(), 2);
    }
}
