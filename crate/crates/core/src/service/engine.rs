//! Live sessions: one in-flight selection each, reads and parameter changes
//! concurrent with it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::EngineConfig;
use super::overlay::{render_frame, Overlay};
use super::session::{
    bake_atlas, build_scene, is_safe_id, load_session, make_oracle, new_session_id,
    resolve_asset_id, save_base, save_selection, session_dir, view_exports, write_json,
    BakeMode, CountingOracle, SessionRecord,
};
use crate::error::{Error, Result};
use crate::lift::{select, Scene, SelectionParams, SelectionSession, SessionStats, Timing};
use crate::oracle::{Click, Polarity, SyntheticOracle};
use crate::scene::{orbit_camera, Camera, ManifestView};
use crate::segment::{segment_object, SegmentParams, Segmentation};

/// Id of the lifting view added for clicks made on orbit frames.
pub const CLICK_VIEW_ID: &str = "click";
pub const DEFAULT_YAW: f64 = 30.0;
pub const DEFAULT_PITCH: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    #[default]
    Idle,
    Running,
    Done,
    Failed,
}

/// Orbit viewpoint about the asset centroid, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Orbit {
    pub yaw: Option<f64>,
    pub pitch: Option<f64>,
    pub dist: Option<f64>,
    /// Square frame size; the configured view resolution when absent.
    pub size: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickRequest {
    #[serde(default)]
    pub yaw: Option<f64>,
    #[serde(default)]
    pub pitch: Option<f64>,
    #[serde(default)]
    pub dist: Option<f64>,
    #[serde(default)]
    pub size: Option<u32>,
    pub x: u32,
    pub y: u32,
    #[serde(default)]
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ParamsPatch {
    pub threshold: Option<f32>,
    pub k: Option<usize>,
    pub n_probe: Option<usize>,
    pub exact: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub total_clicks: Option<usize>,
    pub tau: Option<f64>,
    pub merge_views: Option<usize>,
    pub seed: Option<u64>,
}

/// Body of the status endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub session_id: String,
    pub asset_id: String,
    pub state: JobState,
    pub error: Option<String>,
    pub click: Option<Click>,
    pub params: SelectionParams,
    pub fingerprint: Option<String>,
    pub timing: Option<Timing>,
    pub stats: SessionStats,
    /// Oracle queries made by this session since it was opened.
    pub oracle_calls: usize,
    /// False when the last click reproduced the cached selection.
    pub rebuilt: Option<bool>,
    pub points: Option<usize>,
    pub segments: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub id: usize,
    pub color: [u8; 3],
    pub representative_click: Click,
    pub members: Vec<usize>,
    /// Cloud points labelled with this group.
    pub points: usize,
}

#[derive(Debug, Default)]
struct LiveState {
    record: Option<SessionRecord>,
    selection: Option<Arc<SelectionSession>>,
    segmentation: Option<Arc<Segmentation>>,
    job: JobState,
    error: Option<String>,
    rebuilt: Option<bool>,
    /// Counters carried over from replaced selections.
    stats: SessionStats,
}

#[derive(Debug)]
pub struct LiveSession {
    pub id: String,
    pub dir: PathBuf,
    pub config: EngineConfig,
    pub scene: Arc<Scene>,
    oracle: CountingOracle<SyntheticOracle>,
    busy: AtomicBool,
    state: RwLock<LiveState>,
}

/// Clears the busy flag when dropped.
#[derive(Debug)]
pub struct BusyGuard(Arc<LiveSession>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

/// A validated click waiting to run.
#[derive(Debug)]
pub struct PendingClick {
    guard: BusyGuard,
    click: Click,
    view: ManifestView,
}

impl LiveSession {
    fn new(id: String, dir: PathBuf, record: SessionRecord, scene: Arc<Scene>) -> Self {
        let config = record.config.clone();
        Self {
            id,
            dir,
            oracle: make_oracle(&config),
            config,
            scene,
            busy: AtomicBool::new(false),
            state: RwLock::new(LiveState {
                record: Some(record),
                ..LiveState::default()
            }),
        }
    }

    fn record(&self) -> SessionRecord {
        self.state.read().unwrap().record.clone().expect("record is set at creation")
    }

    pub fn params(&self) -> SelectionParams {
        self.record().params
    }

    pub fn oracle_calls(&self) -> usize {
        self.oracle.calls()
    }

    pub fn selection(&self) -> Option<Arc<SelectionSession>> {
        self.state.read().unwrap().selection.clone()
    }

    pub fn segmentation(&self) -> Option<Arc<Segmentation>> {
        self.state.read().unwrap().segmentation.clone()
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::Acquire)
    }

    pub fn camera(&self, orbit: &Orbit) -> Result<Camera> {
        let size = orbit.size.unwrap_or(self.config.render.view_resolution);
        if size == 0 || size > 4096 {
            return Err(Error::invalid(format!("frame size {size} outside 1..=4096")));
        }
        orbit_camera(
            self.scene.mesh.center(),
            orbit.yaw.unwrap_or(DEFAULT_YAW),
            orbit.pitch.unwrap_or(DEFAULT_PITCH),
            orbit.dist.unwrap_or_else(|| self.scene.view_radius()),
            self.config.render.fov_deg.to_radians(),
            (size, size),
        )
    }

    fn acquire(self: &Arc<Self>, what: &str) -> Result<BusyGuard> {
        if self
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(Error::Busy(format!("{what}: a selection is in progress")));
        }
        Ok(BusyGuard(self.clone()))
    }

    /// Validates a click on an orbit frame and marks the session busy.
    pub fn begin_click(self: &Arc<Self>, req: &ClickRequest) -> Result<PendingClick> {
        let camera = self.camera(&Orbit {
            yaw: req.yaw,
            pitch: req.pitch,
            dist: req.dist,
            size: req.size,
        })?;
        if req.x >= camera.width || req.y >= camera.height {
            return Err(Error::invalid(format!(
                "click ({}, {}) outside {}x{} frame",
                req.x, req.y, camera.width, camera.height
            )));
        }
        let background = || Error::BackgroundClick {
            view: CLICK_VIEW_ID.into(),
            x: req.x,
            y: req.y,
        };
        let hit = self.scene.pixel_hit(&camera, req.x, req.y).ok_or_else(background)?;
        // the oracle wants one resolution per request, so the clicked frame is
        // re-rendered at the lifting resolution and the click follows its surface point
        let res = self.config.render.resolution;
        let lift_camera = self.camera(&Orbit {
            yaw: req.yaw,
            pitch: req.pitch,
            dist: req.dist,
            size: Some(res),
        })?;
        let px = lift_camera.basis().project(&lift_camera, hit).ok_or_else(background)?;
        let (lx, ly) = (
            (px.x.floor().max(0.0) as u32).min(res - 1),
            (px.y.floor().max(0.0) as u32).min(res - 1),
        );
        if self.scene.pixel_hit(&lift_camera, lx, ly).is_none() {
            return Err(background());
        }
        let guard = self.acquire("click")?;
        {
            let mut st = self.state.write().unwrap();
            st.job = JobState::Running;
            st.error = None;
        }
        Ok(PendingClick {
            guard,
            click: Click {
                view_id: CLICK_VIEW_ID.into(),
                x: lx,
                y: ly,
                polarity: req.polarity,
            },
            view: ManifestView {
                id: CLICK_VIEW_ID.into(),
                camera: lift_camera,
            },
        })
    }

    /// Runs a pending click to completion; blocking.
    pub fn run_click(&self, pending: PendingClick) -> Result<bool> {
        let result = self.run_click_inner(&pending);
        let mut st = self.state.write().unwrap();
        match &result {
            Ok(rebuilt) => {
                st.job = JobState::Done;
                st.rebuilt = Some(*rebuilt);
            }
            Err(e) => {
                st.job = JobState::Failed;
                st.error = Some(e.to_string());
            }
        }
        drop(st);
        drop(pending.guard);
        result
    }

    fn run_click_inner(&self, pending: &PendingClick) -> Result<bool> {
        let current = self.selection();
        if let Some(s) = &current {
            if s.matches(&self.oracle, &pending.click, Some(&pending.view))? {
                return Ok(false);
            }
        }
        let params = self.params();
        let selection = Arc::new(select(
            &self.scene,
            &self.oracle,
            pending.click.clone(),
            Some(pending.view.clone()),
            params,
            self.config.selection.lift(),
        )?);
        let mut record = self.record();
        record.click = Some(pending.click.clone());
        record.click_view = Some(pending.view.clone());
        record.fingerprint = Some(format!("{:016x}", selection.fingerprint()));
        save_selection(&self.dir, &record, &selection)?;
        let mut st = self.state.write().unwrap();
        if let Some(prev) = &st.selection {
            let s = prev.stats();
            st.stats.oracle_calls += s.oracle_calls;
            st.stats.index_builds += s.index_builds;
        }
        st.selection = Some(selection);
        st.record = Some(record);
        Ok(true)
    }

    /// Voting parameter change; never queries the oracle or rebuilds the index.
    pub fn set_params(&self, patch: &ParamsPatch) -> Result<SelectionParams> {
        let mut st = self.state.write().unwrap();
        let record = st.record.as_mut().expect("record is set at creation");
        let mut p = record.params;
        if let Some(t) = patch.threshold {
            p.threshold = t;
        }
        if let Some(k) = patch.k {
            p.k = k;
        }
        if let Some(n) = patch.n_probe {
            p.n_probe = n;
        }
        if let Some(e) = patch.exact {
            p.exact = e;
        }
        p.validate()?;
        record.params = p;
        Ok(p)
    }

    pub fn status(&self) -> Status {
        let st = self.state.read().unwrap();
        let record = st.record.as_ref().expect("record is set at creation");
        let sel = st.selection.as_ref();
        let stats = sel.map_or(st.stats, |s| SessionStats {
            oracle_calls: st.stats.oracle_calls + s.stats().oracle_calls,
            index_builds: st.stats.index_builds + s.stats().index_builds,
        });
        Status {
            session_id: self.id.clone(),
            asset_id: record.asset_id.clone(),
            state: st.job,
            error: st.error.clone(),
            click: sel.map(|s| s.click().clone()),
            params: record.params,
            fingerprint: sel.map(|s| format!("{:016x}", s.fingerprint())),
            timing: sel.map(|s| *s.timing()),
            stats,
            oracle_calls: self.oracle.calls(),
            rebuilt: st.rebuilt,
            points: sel.map(|s| s.cloud().len()),
            segments: st.segmentation.as_ref().map(|s| s.groups.len()),
        }
    }

    /// PNG frame of an orbit view with the requested overlay.
    pub fn frame(&self, orbit: &Orbit, overlay: Overlay, group: Option<usize>) -> Result<Vec<u8>> {
        let camera = self.camera(orbit)?;
        let frame = self.scene.render_camera("frame", &camera);
        let (selection, segmentation) = {
            let st = self.state.read().unwrap();
            (st.selection.clone(), st.segmentation.clone())
        };
        render_frame(
            &frame,
            overlay,
            selection.as_deref(),
            &self.params(),
            segmentation.as_deref(),
            group,
        )
    }

    /// Auto-segmentation over the lifting views; blocking, gated like a click.
    pub fn segment(self: &Arc<Self>, req: &SegmentRequest) -> Result<Vec<GroupInfo>> {
        let _guard = self.acquire("segment")?;
        let defaults = SegmentParams::default();
        let params = SegmentParams {
            total_clicks: req.total_clicks.unwrap_or(defaults.total_clicks),
            tau: req.tau.unwrap_or(defaults.tau),
            merge_views: req.merge_views.unwrap_or(defaults.merge_views),
            seed: req.seed.unwrap_or(self.config.selection.seed),
            selection: self.params(),
            lift: self.config.selection.lift(),
        };
        if params.total_clicks == 0 || params.merge_views == 0 {
            return Err(Error::invalid("total_clicks and merge_views must be positive"));
        }
        if !(0.0..=1.0).contains(&params.tau) {
            return Err(Error::invalid(format!("tau {} outside [0, 1]", params.tau)));
        }
        let seg = segment_object(&self.scene, &self.oracle, &params)?;
        seg.save(&self.dir)?;
        let groups = group_infos(&seg);
        self.state.write().unwrap().segmentation = Some(Arc::new(seg));
        Ok(groups)
    }

    pub fn export_uv(&self, mode: BakeMode, size: u32) -> Result<Vec<u8>> {
        if size == 0 || size > 8192 {
            return Err(Error::invalid(format!("atlas size {size} outside 1..=8192")));
        }
        let selection = self.selection();
        let segmentation = self.segmentation();
        bake_atlas(
            &self.scene.mesh,
            selection.as_deref(),
            segmentation.as_deref(),
            &self.params(),
            mode,
            size,
        )
    }

    pub fn export_cloud(&self) -> Result<Vec<u8>> {
        let selection = self.selection().ok_or_else(|| Error::invalid("no selection yet"))?;
        Ok(selection.cloud().encode())
    }

    /// Mask and heatmap PGMs of every lifting view, as `(path, bytes)`.
    pub fn export_masks(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let selection = self.selection().ok_or_else(|| Error::invalid("no selection yet"))?;
        let mut files = Vec::new();
        for (id, mask, heat) in view_exports(&selection, &self.params()) {
            files.push((format!("masks/{id}.pgm"), mask));
            files.push((format!("heatmaps/{id}.pgm"), heat));
        }
        Ok(files)
    }

    /// Rewrites `session.json` with the current parameters.
    pub fn persist(&self) -> Result<()> {
        write_json(self.dir.join("session.json"), &self.record())
    }
}

pub fn group_infos(seg: &Segmentation) -> Vec<GroupInfo> {
    let mut counts = vec![0usize; seg.groups.len()];
    for &l in &seg.labels {
        if l >= 0 {
            counts[l as usize] += 1;
        }
    }
    seg.groups
        .iter()
        .map(|g| GroupInfo {
            id: g.id,
            color: g.color,
            representative_click: g.representative_click.clone(),
            members: g.members.clone(),
            points: counts[g.id],
        })
        .collect()
}

/// Registry of live sessions backed by `<data_dir>/sessions`.
#[derive(Debug)]
pub struct Engine {
    pub config: EngineConfig,
    pub data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<LiveSession>>>,
}

impl Engine {
    pub fn new(config: EngineConfig, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            config,
            data_dir: data_dir.into(),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Opens a session on `asset_id` with optional JSON config overrides.
    pub fn create_session(&self, asset_id: &str, overrides: Option<&serde_json::Value>) -> Result<Arc<LiveSession>> {
        let config = match overrides {
            Some(o) => self.config.with_overrides(o)?,
            None => self.config.clone(),
        };
        let mesh = resolve_asset_id(asset_id, &config.service.assets_dir)?;
        let scene = build_scene(mesh, asset_id, &config)?;
        let id = new_session_id();
        let dir = session_dir(&self.data_dir, &id);
        let record = SessionRecord::new(&id, asset_id, &config);
        save_base(&dir, &record, &scene)?;
        let session = Arc::new(LiveSession::new(id.clone(), dir, record, scene));
        self.sessions.write().unwrap().insert(id, session.clone());
        Ok(session)
    }

    /// Live session `id`, loading it from disk on first access.
    pub fn session(&self, id: &str) -> Result<Arc<LiveSession>> {
        if let Some(s) = self.sessions.read().unwrap().get(id) {
            return Ok(s.clone());
        }
        if !is_safe_id(id) {
            return Err(Error::UnknownSession(id.to_string()));
        }
        let dir = session_dir(&self.data_dir, id);
        if !dir.join("session.json").is_file() {
            return Err(Error::UnknownSession(id.to_string()));
        }
        let session = Arc::new(Self::load(id, &dir)?);
        let mut map = self.sessions.write().unwrap();
        Ok(map.entry(id.to_string()).or_insert(session).clone())
    }

    fn load(id: &str, dir: &Path) -> Result<LiveSession> {
        let started = Instant::now();
        let loaded = load_session(dir)?;
        let session = LiveSession::new(id.to_string(), dir.to_path_buf(), loaded.record, loaded.scene);
        if let Some(sel) = loaded.selection {
            let mut st = session.state.write().unwrap();
            st.selection = Some(Arc::new(sel));
            st.job = JobState::Done;
        }
        log::info!("loaded session {id} in {:.0} ms", started.elapsed().as_secs_f64() * 1e3);
        Ok(session)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap().keys().cloned().collect()
    }
}
