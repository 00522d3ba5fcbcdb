//! Alignment and calibration features on the image grid.
//!
//! The alignment feature stacks one-hot image-mask planes and one-hot
//! projected-point planes per interested class. The calibration feature
//! stores, at each pixel hit by an interested point, the point's velodyne
//! position and continuous pixel position `(x, y, z, u, v)`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;

use crate::geometry::{CalibrationSet, PixelPoint, Projector};
use crate::scene_io::{ClassId, LabeledCloud, SegMask};
use crate::tensor::{Tensor, TensorData};

pub type ClassSet = BTreeSet<ClassId>;

/// Projections grouped by class, plus the calibration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSet {
    pub classes: BTreeMap<ClassId, Vec<PixelPoint>>,
    pub calib: CalibrationSet,
    /// Interested points removed by the depth filter.
    pub dropped: usize,
}

impl ProjectedSet {
    pub fn point_count(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.point_count() == 0
    }

    /// Pixel coordinates per class, the input shape of the projected loss.
    pub fn uv_by_class(&self) -> BTreeMap<ClassId, Vec<[f64; 2]>> {
        self.classes
            .iter()
            .map(|(&c, pts)| (c, pts.iter().map(|p| [p.u, p.v]).collect()))
            .collect()
    }
}

/// The interested subset of a cloud, extracted once so it can be reprojected
/// under many calibrations.
#[derive(Debug, Clone, Default)]
pub struct InterestedPoints {
    pub positions: Vec<Vector3<f64>>,
    pub classes: Vec<ClassId>,
    pub source_indices: Vec<usize>,
}

impl InterestedPoints {
    pub fn new(cloud: &LabeledCloud, interested: &ClassSet) -> Self {
        let mut out = Self::default();
        for (i, (p, &c)) in cloud.points.iter().zip(&cloud.labels).enumerate() {
            if interested.contains(&c) {
                out.positions.push(p.position);
                out.classes.push(c);
                out.source_indices.push(i);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn project(&self, calib: &CalibrationSet) -> ProjectedSet {
        let projector = Projector::new(calib);
        let mut classes: BTreeMap<ClassId, Vec<PixelPoint>> = BTreeMap::new();
        let mut dropped = 0;
        for ((x, &c), &src) in self.positions.iter().zip(&self.classes).zip(&self.source_indices) {
            match projector.project_point(x, src) {
                Some(p) => classes.entry(c).or_default().push(p),
                None => dropped += 1,
            }
        }
        ProjectedSet {
            classes,
            calib: *calib,
            dropped,
        }
    }
}

/// Projects the points whose label is in `interested`, grouped by class.
pub fn project_labeled(cloud: &LabeledCloud, calib: &CalibrationSet, interested: &ClassSet) -> ProjectedSet {
    InterestedPoints::new(cloud, interested).project(calib)
}

#[inline]
fn in_bounds(col: i64, row: i64, width: u32, height: u32) -> bool {
    col >= 0 && row >= 0 && col < width as i64 && row < height as i64
}

/// `2K` binary planes of `height × width`: K image planes then K point planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentFeature {
    pub width: u32,
    pub height: u32,
    pub classes: Vec<ClassId>,
    /// `[2K][height][width]`, values in {0, 1}.
    pub data: Vec<u8>,
}

impl AlignmentFeature {
    pub fn channel_count(&self) -> usize {
        2 * self.classes.len()
    }

    fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn image_plane(&self, k: usize) -> &[u8] {
        let n = self.plane_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn point_plane(&self, k: usize) -> &[u8] {
        let n = self.plane_len();
        let offset = self.classes.len() + k;
        &self.data[offset * n..(offset + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.channel_count() as u32, self.height, self.width],
            data: TensorData::U8(self.data.clone()),
        }
    }
}

pub fn build_alignment_feature(
    proj: &ProjectedSet,
    mask: &SegMask,
    interested: &ClassSet,
) -> AlignmentFeature {
    let classes: Vec<ClassId> = interested.iter().copied().collect();
    let k = classes.len();
    let n = mask.width as usize * mask.height as usize;
    let mut data = vec![0u8; 2 * k * n];
    for (ci, &class) in classes.iter().enumerate() {
        let plane = &mut data[ci * n..(ci + 1) * n];
        for (dst, &m) in plane.iter_mut().zip(&mask.class_ids) {
            *dst = u8::from(m as ClassId == class);
        }
        let plane = &mut data[(k + ci) * n..(k + ci + 1) * n];
        for p in proj.classes.get(&class).into_iter().flatten() {
            let (col, row) = p.pixel();
            if in_bounds(col, row, mask.width, mask.height) {
                plane[row as usize * mask.width as usize + col as usize] = 1;
            }
        }
    }
    AlignmentFeature {
        width: mask.width,
        height: mask.height,
        classes,
        data,
    }
}

/// Channel order of [`CalibrationFeature::values`].
pub const CALIB_CHANNELS: [&str; 5] = ["x", "y", "z", "u", "v"];

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFeature {
    pub width: u32,
    pub height: u32,
    /// `[5][height][width]` in the order of [`CALIB_CHANNELS`]; zero where unoccupied.
    pub values: Vec<f64>,
    /// `[height][width]`, 1 where a point was written.
    pub occupancy: Vec<u8>,
}

impl CalibrationFeature {
    fn index(&self, col: u32, row: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    /// `(x, y, z, u, v)` at an occupied pixel.
    pub fn record(&self, col: u32, row: u32) -> Option<[f64; 5]> {
        let i = self.index(col, row);
        if self.occupancy[i] == 0 {
            return None;
        }
        let n = self.occupancy.len();
        Some(std::array::from_fn(|c| self.values[c * n + i]))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o != 0).count()
    }

    /// f32 tensor `[6][height][width]`: the five channels then occupancy.
    pub fn to_tensor(&self) -> Tensor {
        let mut data: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        data.extend(self.occupancy.iter().map(|&o| o as f32));
        Tensor {
            dims: vec![6, self.height, self.width],
            data: TensorData::F32(data),
        }
    }
}

/// Writes `(x, y, z, u, v)` of each projected point at its rounded pixel;
/// the smallest camera depth wins a collision (first one on exact ties).
pub fn build_calibration_feature(
    proj: &ProjectedSet,
    cloud: &LabeledCloud,
    width: u32,
    height: u32,
) -> CalibrationFeature {
    let n = width as usize * height as usize;
    let mut values = vec![0.0; 5 * n];
    let mut occupancy = vec![0u8; n];
    let mut depth = vec![f64::INFINITY; n];
    for p in proj.classes.values().flatten() {
        let (col, row) = p.pixel();
        if !in_bounds(col, row, width, height) {
            continue;
        }
        let i = row as usize * width as usize + col as usize;
        if p.depth < depth[i] {
            depth[i] = p.depth;
            occupancy[i] = 1;
            let x = cloud.points[p.source_index].position;
            for (c, v) in [x.x, x.y, x.z, p.u, p.v].into_iter().enumerate() {
                values[c * n + i] = v;
            }
        }
    }
    CalibrationFeature {
        width,
        height,
        values,
        occupancy,
    }
}
