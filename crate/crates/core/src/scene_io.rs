//! Point clouds, per-point labels and segmentation masks on disk, plus the
//! synthetic labeled-scene generator.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CalibrationSet, Projector};
use crate::rng::{derive_seed, seeded_rng, ToolkitRng};

pub type ClassId = u16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneIoError {
    #[error("point file of {0} bytes is not a whole number of 16-byte records")]
    TruncatedFile(usize),
    #[error("label count mismatch: expected {expected}, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("not a binary PGM (P5) file")]
    BadMagic,
    #[error("bad PGM header: {0}")]
    BadHeader(String),
    #[error("PGM pixel data truncated: expected {expected} bytes, got {got}")]
    TruncatedPixels { expected: usize, got: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub reflectance: f64,
}

impl CloudPoint {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            reflectance,
        }
    }
}

/// Points with one semantic class per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub points: Vec<CloudPoint>,
    pub labels: Vec<ClassId>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// Image segmentation, row-major, `0` = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    pub width: u32,
    pub height: u32,
    pub class_ids: Vec<u8>,
}

impl SegMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            class_ids: vec![0; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, col: u32, row: u32) -> u8 {
        self.class_ids[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub fn set(&mut self, col: u32, row: u32, class: u8) {
        let w = self.width as usize;
        self.class_ids[row as usize * w + col as usize] = class;
    }

    pub fn count_class(&self, class: ClassId) -> usize {
        self.class_ids.iter().filter(|&&c| c as ClassId == class).count()
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// Reads a KITTI velodyne `.bin` file: little-endian f32 `(x, y, z, r)` records.
pub fn read_cloud_bin(bytes: &[u8]) -> Result<LabeledCloud, SceneIoError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(SceneIoError::TruncatedFile(bytes.len()));
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    let points: Vec<CloudPoint> = bytes
        .chunks_exact(16)
        .map(|r| CloudPoint::new(f(&r[0..4]), f(&r[4..8]), f(&r[8..12]), f(&r[12..16])))
        .collect();
    let labels = vec![0; points.len()];
    Ok(LabeledCloud { points, labels })
}

/// Values are narrowed to f32.
pub fn write_cloud_bin(cloud: &LabeledCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z, p.reflectance] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Reads a SemanticKITTI `.label` file; the class is the lower 16 bits.
pub fn read_labels(bytes: &[u8], expected_count: usize) -> Result<Vec<ClassId>, SceneIoError> {
    if bytes.len() != expected_count * 4 {
        return Err(SceneIoError::CountMismatch {
            expected: expected_count,
            got: bytes.len() / 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| (u32::from_le_bytes([c[0], c[1], c[2], c[3]]) & 0xFFFF) as ClassId)
        .collect())
}

pub fn write_labels(labels: &[ClassId]) -> Vec<u8> {
    labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect()
}

/// Reads a binary PGM whose gray values are class IDs.
pub fn read_mask_pgm(bytes: &[u8]) -> Result<SegMask, SceneIoError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(SceneIoError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(SceneIoError::BadHeader("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(SceneIoError::BadHeader(format!("field {k} is not a number")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| SceneIoError::BadHeader(format!("field {k} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(SceneIoError::BadHeader("missing separator after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(SceneIoError::BadHeader(format!("unsupported maxval {maxval}")));
    }
    if width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(SceneIoError::BadHeader("dimensions too large".into()));
    }
    let expected = (width * height) as usize;
    let pixels = &bytes[pos..];
    if pixels.len() < expected {
        return Err(SceneIoError::TruncatedPixels {
            expected,
            got: pixels.len(),
        });
    }
    Ok(SegMask {
        width: width as u32,
        height: height as u32,
        class_ids: pixels[..expected].to_vec(),
    })
}

pub fn write_mask_pgm(mask: &SegMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.class_ids);
    out
}

/// Oriented box in the velodyne frame; yaw is about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub yaw: f64,
    pub class_id: ClassId,
}

impl ObjectBox {
    fn to_world(self, local: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(
            c * local.x - s * local.y + self.center[0],
            s * local.x + c * local.y + self.center[1],
            local.z + self.center[2],
        )
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let [hx, hy, hz] = self.half_extents;
        let mut out = [Vector3::zeros(); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let sx = if k & 1 == 0 { -hx } else { hx };
            let sy = if k & 2 == 0 { -hy } else { hy };
            let sz = if k & 4 == 0 { -hz } else { hz };
            *slot = self.to_world(Vector3::new(sx, sy, sz));
        }
        out
    }

    /// Faces as (fixed axis, sign, area).
    fn faces(&self) -> [(usize, f64, f64); 6] {
        let [hx, hy, hz] = self.half_extents;
        let ax = 4.0 * hy * hz;
        let ay = 4.0 * hx * hz;
        let az = 4.0 * hx * hy;
        [
            (0, -1.0, ax),
            (0, 1.0, ax),
            (1, -1.0, ay),
            (1, 1.0, ay),
            (2, -1.0, az),
            (2, 1.0, az),
        ]
    }

    fn face_point(&self, axis: usize, sign: f64, s: f64, t: f64) -> Vector3<f64> {
        // s, t in [-1, 1] over the two free axes
        let h = self.half_extents;
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut local = Vector3::zeros();
        local[axis] = sign * h[axis];
        local[a1] = s * h[a1];
        local[a2] = t * h[a2];
        self.to_world(local)
    }

    /// Area-weighted uniform sample on the surface.
    pub fn sample_surface(&self, rng: &mut ToolkitRng) -> Vector3<f64> {
        let faces = self.faces();
        let total: f64 = faces.iter().map(|f| f.2).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = faces[5];
        for f in faces {
            if pick < f.2 {
                chosen = f;
                break;
            }
            pick -= f.2;
        }
        let s = rng.random::<f64>() * 2.0 - 1.0;
        let t = rng.random::<f64>() * 2.0 - 1.0;
        self.face_point(chosen.0, chosen.1, s, t)
    }

    /// Regular grid over every face, corners included.
    pub fn dense_surface(&self, per_side: usize) -> Vec<Vector3<f64>> {
        let n = per_side.max(2);
        let mut out = Vec::with_capacity(6 * n * n);
        for (axis, sign, _) in self.faces() {
            for i in 0..n {
                for j in 0..n {
                    let s = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                    let t = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                    out.push(self.face_point(axis, sign, s, t));
                }
            }
        }
        out
    }
}

fn default_image_width() -> u32 {
    1242
}

fn default_image_height() -> u32 {
    375
}

fn default_background_range() -> [[f64; 2]; 3] {
    [[2.0, 40.0], [-20.0, 20.0], [-1.8, -1.6]]
}

/// Synthetic scene description (JSON field names as below).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub object_boxes: Vec<ObjectBox>,
    pub points_per_object: usize,
    pub background_points: usize,
    pub rng_seed: u64,
    #[serde(default = "default_image_width")]
    pub image_width: u32,
    #[serde(default = "default_image_height")]
    pub image_height: u32,
    /// Per-axis `[min, max]` (velodyne frame) for background points.
    #[serde(default = "default_background_range")]
    pub background_range: [[f64; 2]; 3],
}

impl SceneSpec {
    pub fn empty(rng_seed: u64) -> Self {
        Self {
            object_boxes: Vec::new(),
            points_per_object: 0,
            background_points: 0,
            rng_seed,
            image_width: default_image_width(),
            image_height: default_image_height(),
            background_range: default_background_range(),
        }
    }

    pub fn validate(&self) -> Result<(), SceneIoError> {
        for (i, b) in self.object_boxes.iter().enumerate() {
            if !b.half_extents.iter().all(|&h| h > 0.0 && h.is_finite()) {
                return Err(SceneIoError::InvalidSpec(format!(
                    "box {i}: half_extents must be strictly positive"
                )));
            }
            if !b.center.iter().chain([&b.yaw]).all(|v| v.is_finite()) {
                return Err(SceneIoError::InvalidSpec(format!("box {i}: non-finite pose")));
            }
            if b.class_id == 0 || b.class_id > 255 {
                return Err(SceneIoError::InvalidSpec(format!(
                    "box {i}: class_id must be in 1..=255"
                )));
            }
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(SceneIoError::InvalidSpec("image size must be nonzero".into()));
        }
        if !self.background_range.iter().all(|r| r[0] <= r[1]) {
            return Err(SceneIoError::InvalidSpec("background_range min > max".into()));
        }
        Ok(())
    }
}

// Any point inside a convex region rounds to a pixel whose center lies
// within sqrt(0.5) of the region.
const RASTER_REACH: f64 = std::f64::consts::FRAC_1_SQRT_2 + 1e-9;
const DENSE_PER_SIDE: usize = 24;

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates a labeled cloud and its matching segmentation mask.
///
/// Object points are uniform on each box surface. The mask paints the convex
/// hull of each box's projected dense surface sample, far objects first.
/// Coordinates are rounded to f32 so the cloud survives a `.bin` round trip.
pub fn synth_scene(spec: &SceneSpec, calib: &CalibrationSet) -> (LabeledCloud, SegMask) {
    let mut rng = seeded_rng(spec.rng_seed);
    let mut cloud = LabeledCloud::default();
    for b in &spec.object_boxes {
        for _ in 0..spec.points_per_object {
            let p = b.sample_surface(&mut rng);
            let r = rng.random::<f64>();
            cloud.points.push(CloudPoint::new(
                f32_exact(p.x),
                f32_exact(p.y),
                f32_exact(p.z),
                f32_exact(r),
            ));
            cloud.labels.push(b.class_id);
        }
    }
    let range = spec.background_range;
    for _ in 0..spec.background_points {
        let mut coord = [0.0; 3];
        for (axis, c) in coord.iter_mut().enumerate() {
            let [lo, hi] = range[axis];
            *c = f32_exact(lo + (hi - lo) * rng.random::<f64>());
        }
        let r = f32_exact(rng.random::<f64>());
        cloud
            .points
            .push(CloudPoint::new(coord[0], coord[1], coord[2], r));
        cloud.labels.push(0);
    }

    let mut mask = SegMask::new(spec.image_width, spec.image_height);
    let projector = Projector::new(calib);
    let mut footprints: Vec<(f64, usize, Vec<[f64; 2]>)> = Vec::new();
    for (i, b) in spec.object_boxes.iter().enumerate() {
        let dense = b.dense_surface(DENSE_PER_SIDE);
        let proj = projector.project_indexed(dense.iter().enumerate());
        if proj.points.is_empty() {
            continue;
        }
        let mean_depth = proj.points.iter().map(|p| p.depth).sum::<f64>() / proj.points.len() as f64;
        let pts: Vec<[f64; 2]> = proj.points.iter().map(|p| [p.u, p.v]).collect();
        footprints.push((mean_depth, i, convex_hull(&pts)));
    }
    // far to near, so nearer objects overwrite
    footprints.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i, hull) in &footprints {
        let class = spec.object_boxes[*i].class_id as u8;
        rasterize_hull(hull, class, &mut mask);
    }
    (cloud, mask)
}

/// Andrew's monotone chain; counter-clockwise, no repeated end point.
pub(crate) fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

/// Distance from `p` to a CCW convex polygon; zero inside.
fn hull_distance(hull: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = hull.len();
    if n == 1 {
        return (p[0] - hull[0][0]).hypot(p[1] - hull[0][1]);
    }
    let mut inside = n >= 3;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross < 0.0 {
            inside = false;
        }
        best = best.min(segment_distance(p, a, b));
    }
    if inside {
        0.0
    } else {
        best
    }
}

fn rasterize_hull(hull: &[[f64; 2]], class: u8, mask: &mut SegMask) {
    if hull.is_empty() {
        return;
    }
    let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in hull {
        u0 = u0.min(p[0]);
        u1 = u1.max(p[0]);
        v0 = v0.min(p[1]);
        v1 = v1.max(p[1]);
    }
    let c0 = (u0 - 1.0).floor().max(0.0) as i64;
    let r0 = (v0 - 1.0).floor().max(0.0) as i64;
    let c1 = ((u1 + 1.0).ceil() as i64).min(mask.width as i64 - 1);
    let r1 = ((v1 + 1.0).ceil() as i64).min(mask.height as i64 - 1);
    for row in r0..=r1 {
        for col in c0..=c1 {
            if hull_distance(hull, [col as f64, row as f64]) <= RASTER_REACH {
                mask.set(col as u32, row as u32, class);
            }
        }
    }
}

/// Parameters for [`random_scene_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSceneConfig {
    pub objects: usize,
    pub points_per_object: usize,
    pub background_points: usize,
    #[serde(default = "default_image_width")]
    pub image_width: u32,
    #[serde(default = "default_image_height")]
    pub image_height: u32,
    /// Forward (velodyne x) distance range for box centers, meters. Box `k`
    /// is drawn from the `k`-th of `objects` equal slices of this range.
    #[serde(default = "default_depth_range")]
    pub depth_range: [f64; 2],
    /// Classes assigned round-robin to the boxes.
    #[serde(default = "default_classes")]
    pub classes: Vec<ClassId>,
}

fn default_depth_range() -> [f64; 2] {
    [6.0, 40.0]
}

fn default_classes() -> Vec<ClassId> {
    vec![1]
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            objects: 5,
            points_per_object: 1000,
            background_points: 500,
            image_width: default_image_width(),
            image_height: default_image_height(),
            depth_range: default_depth_range(),
            classes: default_classes(),
        }
    }
}

/// Car-sized boxes placed in front of the camera so their image footprints
/// are inside the image and pairwise disjoint (a few pixels apart). Fewer
/// than `cfg.objects` boxes are returned if placement keeps failing.
pub fn random_scene_spec(cfg: &RandomSceneConfig, seed: u64, calib: &CalibrationSet) -> SceneSpec {
    let mut rng = seeded_rng(seed);
    let projector = Projector::new(calib);
    let margin = 4.0;
    let mut rects: Vec<[f64; 4]> = Vec::new();
    let mut boxes = Vec::new();
    let classes = if cfg.classes.is_empty() {
        default_classes()
    } else {
        cfg.classes.clone()
    };
    'objects: for k in 0..cfg.objects {
        let slice = (cfg.depth_range[1] - cfg.depth_range[0]) / cfg.objects as f64;
        let near = cfg.depth_range[0] + slice * k as f64;
        for _ in 0..400 {
            let x = rng.random_range(near..=near + slice);
            let y = rng.random_range(-0.45 * x..=0.45 * x);
            let half = [
                rng.random_range(1.6..2.3),
                rng.random_range(0.75..1.0),
                rng.random_range(0.6..0.85),
            ];
            let b = ObjectBox {
                center: [x, y, -1.7 + half[2]],
                half_extents: half,
                yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                class_id: classes[k % classes.len()],
            };
            let corners = b.corners();
            let proj = projector.project_indexed(corners.iter().enumerate());
            if proj.dropped > 0 {
                continue;
            }
            let mut rect = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
            for p in &proj.points {
                rect[0] = rect[0].min(p.u);
                rect[1] = rect[1].min(p.v);
                rect[2] = rect[2].max(p.u);
                rect[3] = rect[3].max(p.v);
            }
            let inside = rect[0] >= margin
                && rect[1] >= margin
                && rect[2] <= cfg.image_width as f64 - 1.0 - margin
                && rect[3] <= cfg.image_height as f64 - 1.0 - margin;
            let disjoint = rects.iter().all(|o| {
                rect[2] + margin < o[0]
                    || o[2] + margin < rect[0]
                    || rect[3] + margin < o[1]
                    || o[3] + margin < rect[1]
            });
            if inside && disjoint {
                rects.push(rect);
                boxes.push(b);
                continue 'objects;
            }
        }
    }
    SceneSpec {
        object_boxes: boxes,
        points_per_object: cfg.points_per_object,
        background_points: cfg.background_points,
        rng_seed: derive_seed(seed, 1),
        image_width: cfg.image_width,
        image_height: cfg.image_height,
        background_range: default_background_range(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_reader_cases() {
        assert!(read_cloud_bin(&[]).unwrap().is_empty());
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = read_cloud_bin(&bytes).unwrap();
        assert_eq!(cloud.points, vec![CloudPoint::new(1.0, 2.0, 3.0, 0.5)]);
        assert_eq!(cloud.labels, vec![0]);
        assert_eq!(write_cloud_bin(&cloud), bytes);
        bytes.push(0);
        assert_eq!(read_cloud_bin(&bytes), Err(SceneIoError::TruncatedFile(17)));
    }

    #[test]
    fn label_reader_cases() {
        let bytes = write_labels(&[10, 10, 0]);
        assert_eq!(read_labels(&bytes, 3).unwrap(), vec![10, 10, 0]);
        let masked = 0x0001_000Au32.to_le_bytes();
        assert_eq!(read_labels(&masked, 1).unwrap(), vec![10]);
        assert_eq!(
            read_labels(&bytes, 4),
            Err(SceneIoError::CountMismatch { expected: 4, got: 3 })
        );
    }

    #[test]
    fn pgm_cases() {
        let mask = SegMask {
            width: 2,
            height: 1,
            class_ids: vec![0, 7],
        };
        let bytes = write_mask_pgm(&mask);
        assert_eq!(read_mask_pgm(&bytes).unwrap(), mask);
        assert_eq!(read_mask_pgm(b"P2\n1 1\n255\n\0"), Err(SceneIoError::BadMagic));
        assert!(matches!(
            read_mask_pgm(b"P5\n1 1\n65535\n\0\0"),
            Err(SceneIoError::BadHeader(_))
        ));
        assert_eq!(
            read_mask_pgm(b"P5\n2 2\n255\n\0"),
            Err(SceneIoError::TruncatedPixels { expected: 4, got: 1 })
        );
        let with_comment = b"P5\n# made by hand\n2 1\n255\n\x00\x07";
        assert_eq!(read_mask_pgm(with_comment).unwrap(), mask);
    }

    #[test]
    fn empty_scene() {
        let (cloud, mask) = synth_scene(&SceneSpec::empty(1), &CalibrationSet::kitti_reference());
        assert!(cloud.is_empty());
        assert!(mask.class_ids.iter().all(|&c| c == 0));
        assert_eq!(mask.class_ids.len(), 1242 * 375);
    }

    #[test]
    fn box_behind_camera_leaves_mask_empty() {
        let mut spec = SceneSpec::empty(3);
        spec.object_boxes.push(ObjectBox {
            center: [-10.0, 0.0, -1.0],
            half_extents: [2.0, 1.0, 0.7],
            yaw: 0.0,
            class_id: 1,
        });
        spec.points_per_object = 50;
        let (cloud, mask) = synth_scene(&spec, &CalibrationSet::kitti_reference());
        assert_eq!(cloud.len(), 50);
        assert!(mask.class_ids.iter().all(|&c| c == 0));
    }

    #[test]
    fn synth_is_deterministic() {
        let calib = CalibrationSet::kitti_reference();
        let spec = random_scene_spec(&RandomSceneConfig::default(), 42, &calib);
        let (c1, m1) = synth_scene(&spec, &calib);
        let (c2, m2) = synth_scene(&spec, &calib);
        assert_eq!(write_cloud_bin(&c1), write_cloud_bin(&c2));
        assert_eq!(write_labels(&c1.labels), write_labels(&c2.labels));
        assert_eq!(write_mask_pgm(&m1), write_mask_pgm(&m2));
        assert_eq!(
            read_cloud_bin(&write_cloud_bin(&c1)).unwrap().positions(),
            c1.positions()
        );
    }

    #[test]
    fn surface_samples_lie_on_box() {
        let b = ObjectBox {
            center: [3.0, -1.0, 0.5],
            half_extents: [2.0, 1.0, 0.5],
            yaw: 0.7,
            class_id: 1,
        };
        let mut rng = seeded_rng(9);
        for _ in 0..200 {
            let p = b.sample_surface(&mut rng);
            let d = p - Vector3::from(b.center);
            let (s, c) = b.yaw.sin_cos();
            let local = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
            let on_face = (0..3).any(|k| (local[k].abs() - b.half_extents[k]).abs() < 1e-9);
            let inside = (0..3).all(|k| local[k].abs() <= b.half_extents[k] + 1e-9);
            assert!(on_face && inside);
        }
    }

    #[test]
    fn hull_and_raster() {
        let hull = convex_hull(&[[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0], [2.0, 2.0]]);
        assert_eq!(hull.len(), 4);
        assert_eq!(hull_distance(&hull, [2.0, 2.0]), 0.0);
        assert!((hull_distance(&hull, [6.0, 2.0]) - 2.0).abs() < 1e-12);
        let mut mask = SegMask::new(8, 8);
        rasterize_hull(&hull, 3, &mut mask);
        assert_eq!(mask.count_class(3), 25);
    }

    #[test]
    fn spec_validation() {
        let mut spec = SceneSpec::empty(0);
        spec.object_boxes.push(ObjectBox {
            center: [5.0, 0.0, 0.0],
            half_extents: [1.0, 0.0, 1.0],
            yaw: 0.0,
            class_id: 1,
        });
        assert!(spec.validate().is_err());
        spec.object_boxes[0].half_extents = [1.0, 1.0, 1.0];
        assert!(spec.validate().is_ok());
        spec.object_boxes[0].class_id = 300;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn scene_spec_json_field_names() {
        let json = r#"{"object_boxes":[{"center":[8,0,-1],"half_extents":[2,1,0.7],"yaw":0,"class_id":1}],
                       "points_per_object":10,"background_points":0,"rng_seed":5}"#;
        let spec: SceneSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.image_width, 1242);
        assert_eq!(spec.object_boxes[0].class_id, 1);
    }
}
