//! Session state shared by the CLI and the HTTP API, and its on-disk layout.
//!
//! A session directory holds `asset.obj`, `manifest.json`, `session.json`
//! and, once a selection exists, `cloud.msc` and `timing.json`. Exports add
//! `masks/` and `heatmaps/` (one PGM per lifting view) and segmentation adds
//! `segments.json` and `labels.bin`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{EngineConfig, OracleKind};
use crate::demo::demo_asset;
use crate::error::{Error, Result};
use crate::lift::{Scene, SelectionParams, SelectionSession, SimilarityCloud};
use crate::oracle::{Click, OracleRequest, SimilarityOracle, SyntheticOracle};
use crate::render::bake_uv;
use crate::render::raster::{encode_pgm, write_file};
use crate::render::{UvMap, ViewBundle};
use crate::scene::{fibonacci_cameras, load_mesh, parse_obj, write_obj, ManifestView, Mesh, ViewManifest};
use crate::segment::{Segmentation, UNKNOWN};

pub const DEMO_ASSET: &str = "demo";

/// Mesh for `asset`: the built-in demo, or an OBJ path.
pub fn load_asset(asset: &str) -> Result<Mesh> {
    if asset == DEMO_ASSET {
        return Ok(demo_asset());
    }
    let path = Path::new(asset);
    if !path.is_file() {
        return Err(Error::invalid(format!("asset `{asset}` not found")));
    }
    load_mesh(path)
}

/// Resolves a client-supplied asset id inside `assets_dir`.
pub fn resolve_asset_id(asset_id: &str, assets_dir: &Path) -> Result<Mesh> {
    if asset_id == DEMO_ASSET {
        return Ok(demo_asset());
    }
    if !is_safe_id(asset_id) {
        return Err(Error::invalid(format!("invalid asset id `{asset_id}`")));
    }
    let file = if asset_id.ends_with(".obj") {
        asset_id.to_string()
    } else {
        format!("{asset_id}.obj")
    };
    load_asset(&assets_dir.join(file).to_string_lossy())
}

/// Letters, digits, `-`, `_` and non-leading dots.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Fibonacci lifting views around the mesh as configured in `[render]`.
pub fn fibonacci_manifest(mesh: &Mesh, asset: &str, n: usize, cfg: &EngineConfig) -> Result<ViewManifest> {
    let r = &cfg.render;
    let cams = fibonacci_cameras(
        n,
        mesh.center(),
        r.radius_factor * mesh.bounding_radius(),
        r.fov_deg.to_radians(),
        (r.resolution, r.resolution),
    )?;
    Ok(ViewManifest::from_cameras(asset, &cams))
}

pub fn build_scene(mesh: Mesh, asset: &str, cfg: &EngineConfig) -> Result<Arc<Scene>> {
    let manifest = fibonacci_manifest(&mesh, asset, cfg.render.views, cfg)?;
    Ok(Arc::new(Scene::new(mesh, manifest)?))
}

/// Oracle wrapper counting queries.
#[derive(Debug)]
pub struct CountingOracle<O> {
    inner: O,
    calls: AtomicUsize,
}

impl<O: SimilarityOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<O: SimilarityOracle> SimilarityOracle for CountingOracle<O> {
    fn query(&self, request: &OracleRequest, views: &[&ViewBundle]) -> Result<Vec<Vec<f32>>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.query(request, views)
    }

    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }
}

pub fn make_oracle(cfg: &EngineConfig) -> CountingOracle<SyntheticOracle> {
    match cfg.selection.oracle {
        OracleKind::Synthetic => CountingOracle::new(SyntheticOracle::new(cfg.noise)),
    }
}

/// Contents of `session.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    pub asset_id: String,
    pub config: EngineConfig,
    pub click: Option<Click>,
    /// Camera of a clicked view that is not a lifting view.
    pub click_view: Option<ManifestView>,
    pub params: SelectionParams,
    /// Selection fingerprint as 16 hex digits.
    pub fingerprint: Option<String>,
    pub oracle: OracleKind,
}

impl SessionRecord {
    pub fn new(session_id: &str, asset_id: &str, config: &EngineConfig) -> Self {
        Self {
            session_id: session_id.to_string(),
            asset_id: asset_id.to_string(),
            config: config.clone(),
            click: None,
            click_view: None,
            params: config.selection.params(),
            fingerprint: None,
            oracle: config.selection.oracle,
        }
    }
}

pub fn new_session_id() -> String {
    format!("{:016x}", rand::random::<u64>())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_file(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes the asset copy, lifting manifest and `session.json`.
pub fn save_base(dir: &Path, record: &SessionRecord, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir.join("asset.obj"), write_obj(&scene.mesh).as_bytes())?;
    write_file(dir.join("manifest.json"), scene.manifest.to_json().as_bytes())?;
    write_json(dir.join("session.json"), record)
}

/// Writes `session.json`, `cloud.msc` and `timing.json` for a selection.
pub fn save_selection(dir: &Path, record: &SessionRecord, selection: &SelectionSession) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    selection.cloud().write(dir.join("cloud.msc"))?;
    write_json(dir.join("timing.json"), selection.timing())?;
    write_json(dir.join("session.json"), record)
}

/// Mask and heatmap PGMs of every lifting view under `params`.
pub fn view_exports(selection: &SelectionSession, params: &SelectionParams) -> Vec<(String, Vec<u8>, Vec<u8>)> {
    selection
        .manifest()
        .views
        .iter()
        .map(|v| {
            let rec = selection.reconstruct_with(&v.camera, params, &v.id);
            let heat: Vec<u8> = rec
                .heatmap
                .iter()
                .map(|&h| (h.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            (
                v.id.clone(),
                rec.mask.to_pgm(),
                encode_pgm(v.camera.width, v.camera.height, &heat),
            )
        })
        .collect()
}

/// Writes `masks/<view>.pgm` and `heatmaps/<view>.pgm`.
pub fn save_view_exports(dir: &Path, selection: &SelectionSession, params: &SelectionParams) -> Result<()> {
    for (id, mask, heat) in view_exports(selection, params) {
        write_file(dir.join("masks").join(format!("{id}.pgm")), &mask)?;
        write_file(dir.join("heatmaps").join(format!("{id}.pgm")), &heat)?;
    }
    Ok(())
}

/// A session read back from its directory.
#[derive(Debug)]
pub struct LoadedSession {
    pub record: SessionRecord,
    pub scene: Arc<Scene>,
    pub selection: Option<SelectionSession>,
}

/// Reloads a session directory; only the index is rebuilt, no oracle runs.
pub fn load_session(dir: &Path) -> Result<LoadedSession> {
    let record: SessionRecord = serde_json::from_str(&read_text(&dir.join("session.json"))?)
        .map_err(|e| Error::Format(format!("session.json: {e}")))?;
    let mesh = parse_obj(&read_text(&dir.join("asset.obj"))?)?;
    let manifest = ViewManifest::from_json(&record.asset_id, &read_text(&dir.join("manifest.json"))?)?;
    let scene = Arc::new(Scene::new(mesh, manifest)?);
    let cloud_path = dir.join("cloud.msc");
    let selection = match &record.click {
        Some(click) if cloud_path.is_file() => {
            let mut views = scene.manifest.views.clone();
            if let Some(extra) = &record.click_view {
                views.retain(|v| v.id != extra.id);
                views.push(extra.clone());
            }
            let manifest = ViewManifest::new(scene.manifest.asset.clone(), views)?;
            Some(SelectionSession::from_cloud(
                &scene,
                manifest,
                click.clone(),
                SimilarityCloud::read(&cloud_path)?,
                record.params,
                record.config.selection.lift(),
            )?)
        }
        _ => None,
    };
    Ok(LoadedSession {
        record,
        scene,
        selection,
    })
}

/// What a baked uv atlas stores per texel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BakeMode {
    /// Segment group ids when segmented, else 1 for selected and 0 otherwise.
    Ids,
    /// Mean neighbor similarity.
    Similarity,
}

impl std::str::FromStr for BakeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ids" => Ok(BakeMode::Ids),
            "similarity" => Ok(BakeMode::Similarity),
            other => Err(Error::invalid(format!("unknown bake mode `{other}`"))),
        }
    }
}

/// Bakes the selection (or segmentation) into the mesh's uv atlas as PGM.
pub fn bake_atlas(
    mesh: &Mesh,
    selection: Option<&SelectionSession>,
    segmentation: Option<&Segmentation>,
    params: &SelectionParams,
    mode: BakeMode,
    size: u32,
) -> Result<Vec<u8>> {
    let need_selection = !(mode == BakeMode::Ids && segmentation.is_some());
    if need_selection && selection.is_none() {
        return Err(Error::invalid("nothing to bake: no selection"));
    }
    let map: UvMap = match (mode, segmentation) {
        (BakeMode::Ids, Some(seg)) => bake_uv(mesh, size, size, |s| {
            let l = seg.label_at(s.position);
            if l == UNKNOWN {
                254.0
            } else {
                l as f32
            }
        })?,
        (BakeMode::Ids, None) => {
            let sel = selection.expect("checked above");
            bake_uv(mesh, size, size, |s| {
                let v = sel.vote_with(s.position, params);
                v.selected as u8 as f32
            })?
        }
        (BakeMode::Similarity, _) => {
            let sel = selection.expect("checked above");
            bake_uv(mesh, size, size, |s| sel.vote_with(s.position, params).mean_similarity)?
        }
    };
    Ok(match mode {
        BakeMode::Ids => map.to_id_pgm(),
        BakeMode::Similarity => map.to_gray_pgm(),
    })
}

/// Session directory `<data_dir>/sessions/<id>`.
pub fn session_dir(data_dir: &Path, id: &str) -> PathBuf {
    data_dir.join("sessions").join(id)
}

/// Id atlas from per-point group labels: each texel takes the most common
/// label among its `k` nearest cloud points (ties to the lower id).
pub fn bake_labels(mesh: &Mesh, cloud: SimilarityCloud, labels: &[i32], params: &SelectionParams, size: u32) -> Result<Vec<u8>> {
    if labels.len() != cloud.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} cloud points",
            labels.len(),
            cloud.len()
        )));
    }
    let lift = crate::lift::LiftConfig::default();
    let index = crate::lift::IvfIndex::build(Arc::new(cloud), lift.n_clusters, lift.seed)?;
    let map = bake_uv(mesh, size, size, |s| {
        let p = s.position.as_vec3().to_array();
        let mut counts: std::collections::BTreeMap<i32, usize> = std::collections::BTreeMap::new();
        for n in index.knn_query(p, params.k, params.probes_for(&index)) {
            *counts.entry(labels[n.id as usize]).or_default() += 1;
        }
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map_or(UNKNOWN, |(&l, _)| l);
        if best == UNKNOWN {
            254.0
        } else {
            best as f32
        }
    })?;
    Ok(map.to_id_pgm())
}

/// Inverse of [`Segmentation::labels_bytes`].
pub fn labels_from_bytes(bytes: &[u8]) -> Result<Vec<i32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format("labels file length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
