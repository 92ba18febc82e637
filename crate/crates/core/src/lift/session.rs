//! Click-to-selection orchestration and the cached selection state.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::cloud::{backproject_maps, SimilarityCloud};
use super::ivf::{IvfIndex, DEFAULT_CLUSTERS};
use super::vote::{reconstruct_view, to_f32, vote, Reconstruction, SelectionParams, Vote};
use crate::error::{Error, Result};
use crate::oracle::{Click, OracleRequest, SimilarityOracle};
use crate::render::{render_view, Bvh, ViewBundle};
use crate::scene::{Camera, Fnv64, ManifestView, Mesh, ViewManifest};

const RECONSTRUCTION_CACHE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftConfig {
    pub n_clusters: usize,
    /// Back-project every `stride`-th pixel row and column.
    pub stride: u32,
    pub duplicate_click_frame: bool,
    /// Seed of the k-means initialisation.
    pub seed: u64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            n_clusters: DEFAULT_CLUSTERS,
            stride: 1,
            duplicate_click_frame: true,
            seed: 0,
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 1 {
            return Err(Error::invalid("n_clusters must be at least 1"));
        }
        if self.stride < 1 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        Ok(())
    }
}

/// Mesh, acceleration structure and lifting views, with rendered views cached by id.
#[derive(Debug)]
pub struct Scene {
    pub mesh: Mesh,
    pub bvh: Bvh,
    pub manifest: ViewManifest,
    renders: Mutex<HashMap<String, Arc<ViewBundle>>>,
    rendered: AtomicUsize,
}

impl Scene {
    pub fn new(mesh: Mesh, manifest: ViewManifest) -> Result<Self> {
        let bvh = Bvh::build(&mesh)?;
        Ok(Self {
            mesh,
            bvh,
            manifest,
            renders: Mutex::new(HashMap::new()),
            rendered: AtomicUsize::new(0),
        })
    }

    /// Rendered bundle for `view`, reusing an earlier render of the same id and camera.
    pub fn render(&self, view: &ManifestView) -> Arc<ViewBundle> {
        if let Some(b) = self.renders.lock().unwrap().get(&view.id) {
            if b.camera == view.camera {
                return b.clone();
            }
        }
        let bundle = Arc::new(render_view(&self.mesh, &self.bvh, view.id.clone(), &view.camera));
        self.rendered.fetch_add(1, Ordering::Relaxed);
        self.renders
            .lock()
            .unwrap()
            .insert(view.id.clone(), bundle.clone());
        bundle
    }

    pub fn render_camera(&self, id: &str, camera: &Camera) -> ViewBundle {
        render_view(&self.mesh, &self.bvh, id, camera)
    }

    /// Number of views rendered so far (cache misses).
    pub fn render_count(&self) -> usize {
        self.rendered.load(Ordering::Relaxed)
    }

    /// Nearest surface hit of the ray through a pixel center.
    pub fn pixel_hit(&self, camera: &Camera, x: u32, y: u32) -> Option<DVec3> {
        let dir = camera.basis().pixel_dir(camera, x, y);
        self.bvh
            .intersect(camera.position, dir, 0.0)
            .map(|h| camera.position + dir * h.t)
    }

    /// Radius used for orbit and evaluation cameras.
    pub fn view_radius(&self) -> f64 {
        let c = self.mesh.center();
        let from_manifest = self
            .manifest
            .views
            .iter()
            .map(|v| v.camera.position.distance(c))
            .sum::<f64>()
            / self.manifest.len().max(1) as f64;
        if from_manifest > 0.0 {
            from_manifest
        } else {
            3.0 * self.mesh.bounding_radius()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub render_ms: f64,
    pub oracle_ms: f64,
    pub backproject_ms: f64,
    pub index_build_ms: f64,
    pub total_ms: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Work counters; threshold-only updates leave them untouched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub oracle_calls: usize,
    pub index_builds: usize,
}

#[derive(Debug)]
pub struct SelectionSession {
    scene: Arc<Scene>,
    click: Click,
    params: SelectionParams,
    config: LiftConfig,
    /// Lifting views in trajectory order, clicked view first.
    manifest: ViewManifest,
    similarity: Vec<Vec<f32>>,
    cloud: Arc<SimilarityCloud>,
    index: Arc<IvfIndex>,
    fingerprint: u64,
    click_point: DVec3,
    timing: Timing,
    stats: SessionStats,
    cache: Mutex<HashMap<u64, Arc<Reconstruction>>>,
}

fn selection_fingerprint(click: &Click, manifest: &ViewManifest, oracle: u64, config: &LiftConfig) -> u64 {
    let mut h = Fnv64::default();
    h.write(click.view_id.as_bytes());
    h.write(&click.x.to_le_bytes());
    h.write(&click.y.to_le_bytes());
    h.write(&[click.polarity as u8]);
    h.write(&manifest.fingerprint().to_le_bytes());
    h.write(&oracle.to_le_bytes());
    h.write(&(config.n_clusters as u64).to_le_bytes());
    h.write(&config.stride.to_le_bytes());
    h.write(&[config.duplicate_click_frame as u8]);
    h.write(&config.seed.to_le_bytes());
    h.finish()
}

/// Lifting views for a click: the scene manifest plus `click_view` (which
/// replaces a manifest view of the same id), sorted into a trajectory from
/// the clicked view.
fn lifting_manifest(scene: &Scene, click: &Click, click_view: Option<&ManifestView>) -> Result<ViewManifest> {
    let mut views = scene.manifest.views.clone();
    if let Some(extra) = click_view {
        views.retain(|v| v.id != extra.id);
        views.push(extra.clone());
    }
    let full = ViewManifest::new(scene.manifest.asset.clone(), views)?;
    full.sorted_from(&click.view_id)
}

/// Rejects clicks outside the clicked view or on background, before rendering.
fn check_click(scene: &Scene, click: &Click, manifest: &ViewManifest) -> Result<DVec3> {
    let view = manifest
        .get(&click.view_id)
        .ok_or_else(|| Error::UnknownView(click.view_id.clone()))?;
    let cam = &view.camera;
    if click.x >= cam.width || click.y >= cam.height {
        return Err(Error::invalid(format!(
            "click ({}, {}) outside {}x{} view `{}`",
            click.x, click.y, cam.width, cam.height, click.view_id
        )));
    }
    scene
        .pixel_hit(cam, click.x, click.y)
        .ok_or_else(|| Error::BackgroundClick {
            view: click.view_id.clone(),
            x: click.x,
            y: click.y,
        })
}

/// Runs the full pipeline for one click: trajectory sorting, rendering,
/// click-frame duplication, oracle query, back-projection and index build.
pub fn select(
    scene: &Arc<Scene>,
    oracle: &dyn SimilarityOracle,
    click: Click,
    click_view: Option<ManifestView>,
    params: SelectionParams,
    config: LiftConfig,
) -> Result<SelectionSession> {
    select_impl(scene, oracle, click, click_view.as_ref(), params, config, None)
}

/// Like [`select`], but reuses the clustering of `geometry` when the lifted
/// positions are identical, skipping k-means.
pub fn select_reusing(
    scene: &Arc<Scene>,
    oracle: &dyn SimilarityOracle,
    click: Click,
    params: SelectionParams,
    config: LiftConfig,
    geometry: &IvfIndex,
) -> Result<SelectionSession> {
    select_impl(scene, oracle, click, None, params, config, Some(geometry))
}

fn select_impl(
    scene: &Arc<Scene>,
    oracle: &dyn SimilarityOracle,
    click: Click,
    click_view: Option<&ManifestView>,
    params: SelectionParams,
    config: LiftConfig,
    geometry: Option<&IvfIndex>,
) -> Result<SelectionSession> {
    params.validate()?;
    config.validate()?;
    let started = Instant::now();
    let manifest = lifting_manifest(scene, &click, click_view)?;
    let click_point = check_click(scene, &click, &manifest)?;
    let mut timing = Timing::default();

    let t = Instant::now();
    let bundles: Vec<Arc<ViewBundle>> = manifest.views.iter().map(|v| scene.render(v)).collect();
    timing.render_ms = ms(t);

    let t = Instant::now();
    let ids: Vec<String> = manifest.views.iter().map(|v| v.id.clone()).collect();
    let request = OracleRequest::new(&ids, click.clone(), config.duplicate_click_frame)?;
    let refs: Vec<&ViewBundle> = bundles.iter().map(|b| b.as_ref()).collect();
    let similarity = oracle.query(&request, &refs)?;
    timing.oracle_ms = ms(t);
    if similarity.len() != refs.len() {
        return Err(Error::ShapeMismatch(format!(
            "oracle returned {} maps for {} frames",
            similarity.len(),
            refs.len()
        )));
    }

    let t = Instant::now();
    // the oracle sees views ordered from the click; the cloud uses manifest
    // order so every click over the same views shares one geometry
    let rank = |id: &str| scene.manifest.views.iter().position(|v| v.id == id).unwrap_or(usize::MAX);
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.sort_by_key(|&i| rank(&refs[i].id));
    let ordered: Vec<&ViewBundle> = order.iter().map(|&i| refs[i]).collect();
    let maps: Vec<&[f32]> = order.iter().map(|&i| similarity[i].as_slice()).collect();
    let cloud = Arc::new(backproject_maps(&ordered, &maps, config.stride)?);
    timing.backproject_ms = ms(t);

    let t = Instant::now();
    let reused = geometry.and_then(|g| g.with_cloud(cloud.clone()).ok());
    let index = match reused {
        Some(index) => index,
        None => IvfIndex::build(cloud.clone(), config.n_clusters, config.seed)?,
    };
    timing.index_build_ms = ms(t);
    timing.total_ms = ms(started);

    Ok(SelectionSession {
        fingerprint: selection_fingerprint(&click, &manifest, oracle.fingerprint(), &config),
        scene: scene.clone(),
        click,
        params,
        config,
        manifest,
        similarity,
        cloud,
        index: Arc::new(index),
        click_point,
        timing,
        stats: SessionStats {
            oracle_calls: 1,
            index_builds: 1,
        },
        cache: Mutex::new(HashMap::new()),
    })
}

impl SelectionSession {
    /// Rebuilds a session from a saved cloud; only the index is recomputed.
    pub fn from_cloud(
        scene: &Arc<Scene>,
        manifest: ViewManifest,
        click: Click,
        cloud: SimilarityCloud,
        params: SelectionParams,
        config: LiftConfig,
    ) -> Result<Self> {
        params.validate()?;
        let click_point = check_click(scene, &click, &manifest)?;
        let started = Instant::now();
        let cloud = Arc::new(cloud);
        let index = IvfIndex::build(cloud.clone(), config.n_clusters, config.seed)?;
        let timing = Timing {
            index_build_ms: ms(started),
            total_ms: ms(started),
            ..Timing::default()
        };
        Ok(Self {
            fingerprint: selection_fingerprint(&click, &manifest, 0, &config),
            scene: scene.clone(),
            click,
            params,
            config,
            manifest,
            similarity: Vec::new(),
            cloud,
            index: Arc::new(index),
            click_point,
            timing,
            stats: SessionStats {
                oracle_calls: 0,
                index_builds: 1,
            },
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn click(&self) -> &Click {
        &self.click
    }

    pub fn params(&self) -> &SelectionParams {
        &self.params
    }

    pub fn config(&self) -> &LiftConfig {
        &self.config
    }

    pub fn manifest(&self) -> &ViewManifest {
        &self.manifest
    }

    /// Oracle maps in manifest order; empty for sessions loaded from a cloud.
    pub fn similarity_maps(&self) -> &[Vec<f32>] {
        &self.similarity
    }

    pub fn cloud(&self) -> &Arc<SimilarityCloud> {
        &self.cloud
    }

    pub fn index(&self) -> &Arc<IvfIndex> {
        &self.index
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Surface point under the click.
    pub fn click_point(&self) -> DVec3 {
        self.click_point
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    /// Changes voting parameters. Never touches the oracle or the index.
    pub fn set_params(&mut self, params: SelectionParams) -> Result<()> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    /// Selects again for a new click. Returns `false` (and does nothing) when
    /// the click, views, oracle and lifting config are unchanged.
    pub fn reselect(
        &mut self,
        oracle: &dyn SimilarityOracle,
        click: Click,
        click_view: Option<ManifestView>,
    ) -> Result<bool> {
        if self.matches(oracle, &click, click_view.as_ref())? {
            return Ok(false);
        }
        let stats = self.stats;
        let next = select(&self.scene, oracle, click, click_view, self.params, self.config)?;
        *self = next;
        self.stats = SessionStats {
            oracle_calls: stats.oracle_calls + 1,
            index_builds: stats.index_builds + 1,
        };
        Ok(true)
    }

    /// True when selecting `click` would reproduce this session's cloud.
    pub fn matches(&self, oracle: &dyn SimilarityOracle, click: &Click, click_view: Option<&ManifestView>) -> Result<bool> {
        let manifest = lifting_manifest(&self.scene, click, click_view)?;
        Ok(selection_fingerprint(click, &manifest, oracle.fingerprint(), &self.config) == self.fingerprint)
    }

    pub fn vote_at(&self, point: DVec3) -> Vote {
        self.vote_with(point, &self.params)
    }

    pub fn vote_with(&self, point: DVec3, params: &SelectionParams) -> Vote {
        vote(&self.index, to_f32(point), params).expect("session index is never empty")
    }

    /// Selection mask and heatmap for `camera` under the current parameters.
    pub fn reconstruct(&self, camera: &Camera) -> Arc<Reconstruction> {
        self.reconstruct_with(camera, &self.params, "")
    }

    pub fn reconstruct_with(&self, camera: &Camera, params: &SelectionParams, view_id: &str) -> Arc<Reconstruction> {
        let key = reconstruction_key(camera, params, view_id);
        if let Some(r) = self.cache.lock().unwrap().get(&key) {
            return r.clone();
        }
        let r = Arc::new(reconstruct_view(&self.index, &self.scene.bvh, camera, params, view_id));
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= RECONSTRUCTION_CACHE {
            cache.clear();
        }
        cache.insert(key, r.clone());
        r
    }
}

fn reconstruction_key(camera: &Camera, params: &SelectionParams, view_id: &str) -> u64 {
    let mut h = Fnv64::default();
    for v in camera
        .position
        .to_array()
        .iter()
        .chain(&camera.look_at.to_array())
        .chain(&camera.up.to_array())
        .chain(&[camera.vertical_fov])
    {
        h.write(&v.to_le_bytes());
    }
    h.write(&camera.width.to_le_bytes());
    h.write(&camera.height.to_le_bytes());
    h.write(&(params.k as u64).to_le_bytes());
    h.write(&params.threshold.to_le_bytes());
    h.write(&(params.n_probe as u64).to_le_bytes());
    h.write(&[params.exact as u8]);
    h.write(view_id.as_bytes());
    h.finish()
}
