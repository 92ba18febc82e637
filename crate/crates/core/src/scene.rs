//! Meshes, pinhole cameras and camera-set generation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base colors handed out to materials in order of appearance.
pub const PALETTE: [[u8; 3]; 12] = [
    [214, 48, 39],
    [38, 112, 204],
    [242, 201, 36],
    [46, 163, 74],
    [150, 70, 180],
    [240, 130, 30],
    [90, 200, 210],
    [230, 110, 170],
    [120, 90, 50],
    [160, 160, 160],
    [30, 60, 90],
    [200, 220, 120],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<DVec3>,
    pub triangles: Vec<[u32; 3]>,
    pub material_ids: Vec<u32>,
    pub uvs: Option<Vec<DVec2>>,
    /// Material names in id order. `material_count() == material_names.len()`.
    pub material_names: Vec<String>,
    pub material_colors: Vec<[u8; 3]>,
}

impl Mesh {
    /// Validates the index and material invariants and assigns palette colors.
    pub fn new(
        vertices: Vec<DVec3>,
        triangles: Vec<[u32; 3]>,
        material_ids: Vec<u32>,
        uvs: Option<Vec<DVec2>>,
        material_names: Vec<String>,
    ) -> Result<Self> {
        if triangles.len() != material_ids.len() {
            return Err(Error::invalid("one material id per triangle required"));
        }
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::invalid(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        let count = material_names.len() as u32;
        if material_ids.iter().any(|&m| m >= count) {
            return Err(Error::invalid("material id beyond material count"));
        }
        if let Some(uv) = &uvs {
            if uv.len() != n {
                return Err(Error::invalid("uv count must match vertex count"));
            }
        }
        let material_colors = (0..material_names.len())
            .map(|i| PALETTE[i % PALETTE.len()])
            .collect();
        Ok(Self {
            vertices,
            triangles,
            material_ids,
            uvs,
            material_names,
            material_colors,
        })
    }

    pub fn material_count(&self) -> usize {
        self.material_names.len()
    }

    pub fn triangle(&self, i: usize) -> [DVec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn bounds(&self) -> (DVec3, DVec3) {
        self.vertices.iter().fold(
            (DVec3::splat(f64::INFINITY), DVec3::splat(f64::NEG_INFINITY)),
            |(lo, hi), v| (lo.min(*v), hi.max(*v)),
        )
    }

    pub fn center(&self) -> DVec3 {
        let (lo, hi) = self.bounds();
        (lo + hi) * 0.5
    }

    /// Radius of the bounding sphere around [`Mesh::center`].
    pub fn bounding_radius(&self) -> f64 {
        let c = self.center();
        self.vertices
            .iter()
            .map(|v| v.distance(c))
            .fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).length()
    }
}

/// Parses the Wavefront OBJ subset `v`, `vt`, `f`, `usemtl`.
///
/// Polygons are fanned into triangles. Vertices are split per distinct
/// `(position, uv)` pair so uvs end up per-vertex.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut positions: Vec<DVec3> = Vec::new();
    let mut texcoords: Vec<DVec2> = Vec::new();
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut any_uv = false;
    let mut any_no_uv = false;
    let mut remap: HashMap<(usize, Option<usize>), u32> = HashMap::new();
    let mut triangles = Vec::new();
    let mut material_ids = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut current: Option<u32> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" => positions.push(parse_vec3(&mut parts, line)?),
            "vt" => {
                let u = parse_f64(parts.next(), line)?;
                let v = parse_f64(parts.next(), line)?;
                texcoords.push(DVec2::new(u, v));
            }
            "usemtl" => {
                let name = parts.collect::<Vec<_>>().join(" ");
                let id = match names.iter().position(|n| *n == name) {
                    Some(i) => i as u32,
                    None => {
                        names.push(name);
                        names.len() as u32 - 1
                    }
                };
                current = Some(id);
            }
            "f" => {
                let mut corners = Vec::new();
                for item in parts {
                    let mut fields = item.split('/');
                    let vi = resolve_index(fields.next(), positions.len(), line)?
                        .ok_or_else(|| parse_err(line, "face corner without vertex index"))?;
                    let ti = resolve_index(fields.next(), texcoords.len(), line)?;
                    match ti {
                        Some(_) => any_uv = true,
                        None => any_no_uv = true,
                    }
                    let key = (vi, ti);
                    let idx = *remap.entry(key).or_insert_with(|| {
                        vertices.push(positions[vi]);
                        uvs.push(ti.map(|t| texcoords[t]).unwrap_or(DVec2::ZERO));
                        vertices.len() as u32 - 1
                    });
                    corners.push(idx);
                }
                if corners.len() < 3 {
                    return Err(parse_err(line, "face with fewer than 3 corners"));
                }
                let material = match current {
                    Some(m) => m,
                    None => {
                        // faces before any usemtl share an implicit default group
                        names.push("default".to_string());
                        current = Some(names.len() as u32 - 1);
                        current.unwrap()
                    }
                };
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                    material_ids.push(material);
                }
            }
            // groups, objects, smoothing and material libraries carry nothing we use
            "g" | "o" | "s" | "mtllib" | "vn" | "l" | "p" => {}
            other => return Err(parse_err(line, &format!("unsupported statement `{other}`"))),
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptyInput("mesh has no faces"));
    }
    if any_uv && any_no_uv {
        return Err(Error::Format(
            "uv coordinates present on some faces but not all".into(),
        ));
    }
    Mesh::new(
        vertices,
        triangles,
        material_ids,
        any_uv.then_some(uvs),
        names,
    )
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn write_obj(mesh: &Mesh) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    if let Some(uvs) = &mesh.uvs {
        for t in uvs {
            let _ = writeln!(out, "vt {} {}", t.x, t.y);
        }
    }
    let mut current = None;
    for (t, &m) in mesh.triangles.iter().zip(&mesh.material_ids) {
        if current != Some(m) {
            let _ = writeln!(out, "usemtl {}", mesh.material_names[m as usize]);
            current = Some(m);
        }
        if mesh.uvs.is_some() {
            let _ = writeln!(
                out,
                "f {0}/{0} {1}/{1} {2}/{2}",
                t[0] + 1,
                t[1] + 1,
                t[2] + 1
            );
        } else {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
    }
    out
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

fn parse_f64(token: Option<&str>, line: usize) -> Result<f64> {
    let token = token.ok_or_else(|| parse_err(line, "missing number"))?;
    token
        .parse()
        .map_err(|_| parse_err(line, &format!("bad number `{token}`")))
}

fn parse_vec3<'a>(parts: &mut impl Iterator<Item = &'a str>, line: usize) -> Result<DVec3> {
    Ok(DVec3::new(
        parse_f64(parts.next(), line)?,
        parse_f64(parts.next(), line)?,
        parse_f64(parts.next(), line)?,
    ))
}

/// OBJ indices are 1-based; negative values count back from the end.
fn resolve_index(token: Option<&str>, count: usize, line: usize) -> Result<Option<usize>> {
    let Some(token) = token.filter(|t| !t.is_empty()) else {
        return Ok(None);
    };
    let raw: i64 = token
        .parse()
        .map_err(|_| parse_err(line, &format!("bad index `{token}`")))?;
    let resolved = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(Error::IndexOutOfRange {
            line,
            index: raw,
            count,
        });
    }
    Ok(Some(resolved as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: DVec3,
    pub look_at: DVec3,
    pub up: DVec3,
    /// Vertical field of view in radians.
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
}

/// Orthonormal camera frame: `right × up = -forward`.
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub forward: DVec3,
    pub right: DVec3,
    pub up: DVec3,
    tan_half_y: f64,
    tan_half_x: f64,
}

impl Camera {
    pub fn new(
        position: DVec3,
        look_at: DVec3,
        up: DVec3,
        vertical_fov: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if !(position - look_at).is_finite() || position.distance(look_at) < 1e-12 {
            return Err(Error::invalid("camera position must differ from look_at"));
        }
        if !(vertical_fov > 0.0 && vertical_fov < PI) {
            return Err(Error::invalid(format!(
                "vertical fov {vertical_fov} outside (0, pi)"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        let forward = (look_at - position).normalize();
        let mut up = up.normalize_or_zero();
        if up == DVec3::ZERO || forward.cross(up).length() < 1e-6 {
            up = fallback_up(forward);
        }
        Ok(Self {
            position,
            look_at,
            up,
            vertical_fov,
            width,
            height,
        })
    }

    /// Camera at `center + radius * direction`, looking at `center`.
    pub fn looking_at_center(
        center: DVec3,
        direction: DVec3,
        radius: f64,
        vertical_fov: f64,
        (width, height): (u32, u32),
    ) -> Result<Self> {
        let dir = direction.normalize();
        let up = fallback_up(-dir);
        Self::new(center + dir * radius, center, up, vertical_fov, width, height)
    }

    pub fn forward(&self) -> DVec3 {
        (self.look_at - self.position).normalize()
    }

    pub fn basis(&self) -> CameraBasis {
        let forward = self.forward();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        let tan_half_y = (self.vertical_fov * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        CameraBasis {
            forward,
            right,
            up,
            tan_half_y,
            tan_half_x: tan_half_y * aspect,
        }
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn with_resolution(mut self, width: u32, height: u32) -> Self {
        self.width = width.max(1);
        self.height = height.max(1);
        self
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl CameraBasis {
    /// Unit direction of the ray through continuous image coordinates `(px, py)`,
    /// where pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub fn ray_dir(&self, cam: &Camera, px: f64, py: f64) -> DVec3 {
        let sx = (2.0 * px / cam.width as f64 - 1.0) * self.tan_half_x;
        let sy = (1.0 - 2.0 * py / cam.height as f64) * self.tan_half_y;
        (self.forward + self.right * sx + self.up * sy).normalize()
    }

    pub fn pixel_dir(&self, cam: &Camera, x: u32, y: u32) -> DVec3 {
        self.ray_dir(cam, x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Continuous image coordinates of a world point; `None` behind the camera.
    pub fn project(&self, cam: &Camera, point: DVec3) -> Option<DVec2> {
        let d = point - cam.position;
        let z = d.dot(self.forward);
        if z <= 1e-12 {
            return None;
        }
        let sx = d.dot(self.right) / z / self.tan_half_x;
        let sy = d.dot(self.up) / z / self.tan_half_y;
        Some(DVec2::new(
            (sx + 1.0) * 0.5 * cam.width as f64,
            (1.0 - sy) * 0.5 * cam.height as f64,
        ))
    }
}

fn fallback_up(forward: DVec3) -> DVec3 {
    if forward.z.abs() < 0.999 {
        DVec3::Z
    } else {
        DVec3::Y
    }
}

/// Camera orbiting `center` at `dist`, with yaw about +Z and pitch above the XY plane (degrees).
pub fn orbit_camera(
    center: DVec3,
    yaw_deg: f64,
    pitch_deg: f64,
    dist: f64,
    vertical_fov: f64,
    resolution: (u32, u32),
) -> Result<Camera> {
    if dist.is_nan() || dist <= 0.0 {
        return Err(Error::invalid("orbit distance must be positive"));
    }
    let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
    let dir = DVec3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
    Camera::looking_at_center(center, dir, dist, vertical_fov, resolution)
}

/// Directions of the offset spherical Fibonacci lattice.
pub fn fibonacci_directions(n: usize) -> Vec<DVec3> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let azimuth = 2.0 * PI * i as f64 * (1.0 - 1.0 / golden);
            let r = (1.0 - z * z).max(0.0).sqrt();
            DVec3::new(r * azimuth.cos(), r * azimuth.sin(), z)
        })
        .collect()
}

pub fn fibonacci_cameras(
    n: usize,
    center: DVec3,
    radius: f64,
    vertical_fov: f64,
    resolution: (u32, u32),
) -> Result<Vec<Camera>> {
    if n == 0 {
        return Err(Error::EmptyInput("fibonacci camera count is zero"));
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::invalid("radius must be positive"));
    }
    fibonacci_directions(n)
        .into_iter()
        .map(|d| Camera::looking_at_center(center, d, radius, vertical_fov, resolution))
        .collect()
}

/// Positional distance normalized by `diag` plus viewing angle over pi.
pub fn spatio_angular_distance(a: &Camera, b: &Camera, diag: f64) -> f64 {
    let positional = if diag > 0.0 {
        a.position.distance(b.position) / diag
    } else {
        0.0
    };
    let cos = a.forward().dot(b.forward()).clamp(-1.0, 1.0);
    positional + cos.acos() / PI
}

pub fn position_diagonal<'a>(cams: impl IntoIterator<Item = &'a Camera>) -> f64 {
    let (lo, hi) = cams.into_iter().fold(
        (DVec3::splat(f64::INFINITY), DVec3::splat(f64::NEG_INFINITY)),
        |(lo, hi), c| (lo.min(c.position), hi.max(c.position)),
    );
    if lo.x.is_finite() {
        (hi - lo).length()
    } else {
        0.0
    }
}

/// Greedy nearest-neighbor chain from `initial`; returns indices into `others`.
pub fn sort_camera_indices(initial: &Camera, others: &[Camera]) -> Vec<usize> {
    let diag = position_diagonal(std::iter::once(initial).chain(others));
    let mut remaining: Vec<usize> = (0..others.len()).collect();
    let mut order = Vec::with_capacity(others.len());
    let mut current = *initial;
    while !remaining.is_empty() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (slot, &idx) in remaining.iter().enumerate() {
            let d = spatio_angular_distance(&current, &others[idx], diag);
            // strict comparison keeps the earliest input on ties
            if d < best_d {
                best_d = d;
                best = slot;
            }
        }
        let idx = remaining.remove(best);
        current = others[idx];
        order.push(idx);
    }
    order
}

pub fn sort_cameras(initial: &Camera, others: &[Camera]) -> Vec<Camera> {
    std::iter::once(*initial)
        .chain(sort_camera_indices(initial, others).into_iter().map(|i| others[i]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    ZoomIn,
    ZoomOut,
    Turntable,
    FlyOver,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zoom_in" | "zoom-in" => Ok(Self::ZoomIn),
            "zoom_out" | "zoom-out" => Ok(Self::ZoomOut),
            "turntable" => Ok(Self::Turntable),
            "fly_over" | "fly-over" => Ok(Self::FlyOver),
            other => Err(Error::invalid(format!("unknown trajectory kind `{other}`"))),
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZoomIn => "zoom_in",
            Self::ZoomOut => "zoom_out",
            Self::Turntable => "turntable",
            Self::FlyOver => "fly_over",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectoryParams {
    pub center: DVec3,
    /// Zoom paths run between the two radii; orbits use `far_radius`.
    pub far_radius: f64,
    pub near_radius: f64,
    /// Degrees.
    pub azimuth: f64,
    /// Degrees.
    pub elevation: f64,
    pub vertical_fov: f64,
    pub resolution: (u32, u32),
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            center: DVec3::ZERO,
            far_radius: 4.0,
            near_radius: 2.0,
            azimuth: 0.0,
            elevation: 20.0,
            vertical_fov: 40f64.to_radians(),
            resolution: (256, 256),
        }
    }
}

const FLY_OVER_START_DEG: f64 = 5.0;
const FLY_OVER_END_DEG: f64 = 85.0;

pub fn trajectory_cameras(
    kind: TrajectoryKind,
    n_frames: usize,
    p: &TrajectoryParams,
) -> Result<Vec<Camera>> {
    if n_frames < 2 {
        return Err(Error::invalid("trajectories need at least 2 frames"));
    }
    let last = (n_frames - 1) as f64;
    let dir = |az: f64, el: f64| {
        let (az, el) = (az.to_radians(), el.to_radians());
        DVec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    };
    (0..n_frames)
        .map(|i| {
            let t = i as f64 / last;
            let (d, r) = match kind {
                TrajectoryKind::ZoomIn => (
                    dir(p.azimuth, p.elevation),
                    p.far_radius + (p.near_radius - p.far_radius) * t,
                ),
                TrajectoryKind::ZoomOut => (
                    dir(p.azimuth, p.elevation),
                    p.near_radius + (p.far_radius - p.near_radius) * t,
                ),
                TrajectoryKind::Turntable => (
                    dir(p.azimuth + 360.0 * i as f64 / n_frames as f64, p.elevation),
                    p.far_radius,
                ),
                TrajectoryKind::FlyOver => (
                    dir(
                        p.azimuth,
                        FLY_OVER_START_DEG + (FLY_OVER_END_DEG - FLY_OVER_START_DEG) * t,
                    ),
                    p.far_radius,
                ),
            };
            Camera::looking_at_center(p.center, d, r, p.vertical_fov, p.resolution)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub id: String,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewManifest {
    pub asset: PathBuf,
    pub views: Vec<ManifestView>,
}

/// On-disk camera record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    id: String,
    position: [f64; 3],
    look_at: [f64; 3],
    up: [f64; 3],
    fov_deg: f64,
    width: u32,
    height: u32,
}

impl ViewManifest {
    pub fn new(asset: impl Into<PathBuf>, views: Vec<ManifestView>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for v in &views {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::invalid(format!("duplicate view id `{}`", v.id)));
            }
        }
        Ok(Self {
            asset: asset.into(),
            views,
        })
    }

    /// Names views `view_000`, `view_001`, ... in order.
    pub fn from_cameras(asset: impl Into<PathBuf>, cameras: &[Camera]) -> Self {
        let views = cameras
            .iter()
            .enumerate()
            .map(|(i, c)| ManifestView {
                id: format!("view_{i:03}"),
                camera: *c,
            })
            .collect();
        Self {
            asset: asset.into(),
            views,
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestView> {
        self.views.iter().find(|v| v.id == id)
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera).collect()
    }

    /// Reorders the views into a smooth trajectory starting at `initial_id`.
    pub fn sorted_from(&self, initial_id: &str) -> Result<Self> {
        let start = self
            .views
            .iter()
            .position(|v| v.id == initial_id)
            .ok_or_else(|| Error::UnknownView(initial_id.to_string()))?;
        let others: Vec<&ManifestView> = self
            .views
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != start)
            .map(|(_, v)| v)
            .collect();
        let cams: Vec<Camera> = others.iter().map(|v| v.camera).collect();
        let mut views = vec![self.views[start].clone()];
        views.extend(
            sort_camera_indices(&self.views[start].camera, &cams)
                .into_iter()
                .map(|i| others[i].clone()),
        );
        Ok(Self {
            asset: self.asset.clone(),
            views,
        })
    }

    pub fn to_json(&self) -> String {
        let records: Vec<CameraRecord> = self
            .views
            .iter()
            .map(|v| CameraRecord {
                id: v.id.clone(),
                position: v.camera.position.to_array(),
                look_at: v.camera.look_at.to_array(),
                up: v.camera.up.to_array(),
                fov_deg: v.camera.vertical_fov.to_degrees(),
                width: v.camera.width,
                height: v.camera.height,
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("camera records serialize")
    }

    pub fn from_json(asset: impl Into<PathBuf>, json: &str) -> Result<Self> {
        let records: Vec<CameraRecord> =
            serde_json::from_str(json).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let views = records
            .into_iter()
            .map(|r| {
                Ok(ManifestView {
                    camera: Camera::new(
                        DVec3::from_array(r.position),
                        DVec3::from_array(r.look_at),
                        DVec3::from_array(r.up),
                        r.fov_deg.to_radians(),
                        r.width,
                        r.height,
                    )?,
                    id: r.id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(asset, views)
    }

    /// A stable content hash of ids and camera parameters (to 1e-9).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        for v in &self.views {
            h.write(v.id.as_bytes());
            let c = &v.camera;
            for x in c
                .position
                .to_array()
                .iter()
                .chain(&c.look_at.to_array())
                .chain(&c.up.to_array())
                .chain(&[c.vertical_fov])
            {
                // quantized so a JSON round trip keeps the fingerprint
                h.write(&((x * 1e9).round() as i64).to_le_bytes());
            }
            h.write(&c.width.to_le_bytes());
            h.write(&c.height.to_le_bytes());
        }
        h.finish()
    }
}

/// `⌈fraction·n⌉` views picked by a uniform stride over the input order.
pub fn subsample_views(manifest: &ViewManifest, fraction: f64) -> Result<ViewManifest> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput("manifest has no views"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = manifest.len();
    let keep = ((fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let keep = keep.min(n);
    let views = (0..keep)
        .map(|i| manifest.views[i * n / keep].clone())
        .collect();
    Ok(ViewManifest {
        asset: manifest.asset.clone(),
        views,
    })
}

/// 64-bit FNV-1a, used for content fingerprints and per-view seeds.
#[derive(Debug, Clone)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}
