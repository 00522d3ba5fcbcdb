//! Scalar objectives: the directed projected loss between two point
//! clusters, the element MSE on the extrinsic, the phase-scheduled
//! composite of the two, and the unsupervised mask-chamfer loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ClassSet, ProjectedSet};
use crate::geometry::CalibrationSet;
use crate::perturbation::BiasSpec;
use crate::scene_io::{ClassId, SegMask};
use crate::spatial::{squared_distance_transform, KdTree2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("class {0} has projected points but no label points")]
    EmptyLabelClass(ClassId),
    #[error("bias must be in additive-12 form; convert rigid biases first")]
    FormMismatch,
    #[error("invalid loss schedule: {0}")]
    BadSchedule(String),
}

/// Pixel points per class.
pub type ClassPoints = BTreeMap<ClassId, Vec<[f64; 2]>>;

/// Label clusters indexed once for repeated nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct ProjectedLossTarget {
    trees: BTreeMap<ClassId, KdTree2>,
}

impl ProjectedLossTarget {
    pub fn new(p_l: &ClassPoints) -> Self {
        let trees = p_l
            .iter()
            .filter(|(_, pts)| !pts.is_empty())
            .map(|(&c, pts)| (c, KdTree2::new(pts)))
            .collect();
        Self { trees }
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.trees.keys().copied()
    }

    /// Σ over classes, Σ over points of the distance to the nearest label
    /// point of the same class.
    pub fn loss(&self, p_c: &ClassPoints) -> Result<f64, LossError> {
        let mut total = 0.0;
        for (&class, pts) in p_c {
            if pts.is_empty() {
                continue;
            }
            let tree = self.trees.get(&class).ok_or(LossError::EmptyLabelClass(class))?;
            for &p in pts {
                total += tree.nearest_distance(p).expect("non-empty tree");
            }
        }
        Ok(total)
    }

    /// Same as [`Self::loss`] but reading a [`ProjectedSet`] directly.
    pub fn loss_projected(&self, proj: &ProjectedSet) -> Result<f64, LossError> {
        let mut total = 0.0;
        for (&class, pts) in &proj.classes {
            if pts.is_empty() {
                continue;
            }
            let tree = self.trees.get(&class).ok_or(LossError::EmptyLabelClass(class))?;
            for p in pts {
                total += tree.nearest_distance([p.u, p.v]).expect("non-empty tree");
            }
        }
        Ok(total)
    }
}

/// Directed chamfer sum from `p_c` to `p_l`, pixel units.
pub fn projected_loss(p_c: &ClassPoints, p_l: &ClassPoints) -> Result<f64, LossError> {
    ProjectedLossTarget::new(p_l).loss(p_c)
}

/// [`projected_loss`] divided by the number of `p_c` points (0 when empty),
/// comparable across scenes of different density.
pub fn projected_loss_mean(p_c: &ClassPoints, p_l: &ClassPoints) -> Result<f64, LossError> {
    let n: usize = p_c.values().map(Vec::len).sum();
    let total = projected_loss(p_c, p_l)?;
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Mean over the 12 extrinsic entries of `((v2c_in + Δ) − v2c_label)²`.
pub fn bias_mse(
    calib_out: &BiasSpec,
    calib_in: &CalibrationSet,
    calib_label: &CalibrationSet,
) -> Result<f64, LossError> {
    let BiasSpec::Additive(delta) = calib_out else {
        return Err(LossError::FormMismatch);
    };
    Ok(additive_mse(delta, calib_in, calib_label))
}

pub(crate) fn additive_mse(
    delta: &[f64; 12],
    calib_in: &CalibrationSet,
    calib_label: &CalibrationSet,
) -> f64 {
    let mut sum = 0.0;
    for (k, d) in delta.iter().enumerate() {
        let (r, c) = (k / 4, k % 4);
        let residual = calib_in.v2c[(r, c)] + d - calib_label.v2c[(r, c)];
        sum += residual * residual;
    }
    sum / 12.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPhase {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Iterations spent in this phase.
    pub duration: u64,
}

/// Ordered weight phases for the composite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSchedule {
    pub phases: Vec<LossPhase>,
}

/// Fast-convergence weights: projected term still significant.
pub const PHASE_A: (f64, f64) = (10.0, 0.001);
/// MSE-dominant weights.
pub const PHASE_B: (f64, f64) = (10.0, 0.00001);

impl LossSchedule {
    pub fn new(phases: Vec<LossPhase>) -> Result<Self, LossError> {
        let s = Self { phases };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.phases.is_empty() {
            return Err(LossError::BadSchedule("at least one phase required".into()));
        }
        if let Some(i) = self.phases.iter().position(|p| p.duration == 0) {
            return Err(LossError::BadSchedule(format!("phase {i} has zero duration")));
        }
        Ok(())
    }

    /// Phase A for the first 60% of `budget` iterations, phase B after.
    pub fn two_phase(budget: u64) -> Self {
        let budget = budget.max(2);
        let a = ((budget as f64) * 0.6).ceil() as u64;
        let a = a.clamp(1, budget - 1);
        Self {
            phases: vec![
                LossPhase {
                    lambda1: PHASE_A.0,
                    lambda2: PHASE_A.1,
                    duration: a,
                },
                LossPhase {
                    lambda1: PHASE_B.0,
                    lambda2: PHASE_B.1,
                    duration: budget - a,
                },
            ],
        }
    }

    pub fn total_duration(&self) -> u64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Index of the phase containing `iteration`, clamped to the last.
    pub fn phase_at(&self, iteration: u64) -> usize {
        let mut end = 0;
        for (i, p) in self.phases.iter().enumerate() {
            end += p.duration;
            if iteration < end {
                return i;
            }
        }
        self.phases.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub projected: f64,
    pub mse: f64,
    pub total: f64,
    pub phase_index: usize,
}

/// `λ1·mse + λ2·projected` with the weights of the phase active at `iteration`.
pub fn composite_loss(mse: f64, projected: f64, schedule: &LossSchedule, iteration: u64) -> LossReport {
    let phase_index = schedule.phase_at(iteration);
    let phase = schedule.phases[phase_index];
    LossReport {
        projected,
        mse,
        total: phase.lambda1 * mse + phase.lambda2 * projected,
        phase_index,
    }
}

/// Exact distance fields of the interested mask classes, built once per
/// mask and reused for every candidate calibration.
#[derive(Debug, Clone)]
pub struct MaskChamfer {
    width: u32,
    height: u32,
    diagonal: f64,
    fields: BTreeMap<ClassId, Option<Vec<f64>>>,
}

impl MaskChamfer {
    pub fn new(mask: &SegMask, interested: &ClassSet) -> Self {
        let (w, h) = (mask.width as usize, mask.height as usize);
        let fields = interested
            .iter()
            .map(|&class| {
                let set: Vec<bool> = mask.class_ids.iter().map(|&m| m as ClassId == class).collect();
                let field = set.iter().any(|&b| b).then(|| {
                    squared_distance_transform(&set, w, h)
                        .into_iter()
                        .map(f64::sqrt)
                        .collect()
                });
                (class, field)
            })
            .collect();
        Self {
            width: mask.width,
            height: mask.height,
            diagonal: mask.diagonal(),
            fields,
        }
    }

    /// True when at least one interested class has mask pixels.
    pub fn has_any_class(&self) -> bool {
        self.fields.values().any(Option::is_some)
    }

    pub fn classes_present(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.fields.iter().filter(|(_, f)| f.is_some()).map(|(&c, _)| c)
    }

    /// Scorer for one class, resolved once for hot loops.
    pub fn class_field(&self, class: ClassId) -> ClassField<'_> {
        let kind = match self.fields.get(&class) {
            None => FieldKind::Ignored,
            Some(None) => FieldKind::Missing,
            Some(Some(field)) => FieldKind::Present(field),
        };
        ClassField { owner: self, kind }
    }

    /// Cost of one point of `class` at continuous pixel `(u, v)`.
    pub fn point_cost(&self, class: ClassId, u: f64, v: f64) -> f64 {
        self.class_field(class).cost(u, v)
    }

    pub fn loss(&self, proj: &ProjectedSet) -> f64 {
        let mut total = 0.0;
        for (&class, pts) in &proj.classes {
            if !self.fields.contains_key(&class) {
                continue;
            }
            let field = self.class_field(class);
            for p in pts {
                total += field.cost(p.u, p.v);
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy)]
enum FieldKind<'a> {
    Ignored,
    Missing,
    Present(&'a [f64]),
}

/// Per-class view of a [`MaskChamfer`].
#[derive(Debug, Clone, Copy)]
pub struct ClassField<'a> {
    owner: &'a MaskChamfer,
    kind: FieldKind<'a>,
}

impl ClassField<'_> {
    /// Cost of a point at continuous pixel `(u, v)`.
    #[inline]
    pub fn cost(&self, u: f64, v: f64) -> f64 {
        let m = self.owner;
        let field = match self.kind {
            FieldKind::Ignored => return 0.0,
            FieldKind::Missing => return m.diagonal,
            FieldKind::Present(field) => field,
        };
        let col = u.round();
        let row = v.round();
        let cc = col.clamp(0.0, (m.width - 1) as f64);
        let rr = row.clamp(0.0, (m.height - 1) as f64);
        let inside = field[rr as usize * m.width as usize + cc as usize];
        if cc == col && rr == row {
            return inside;
        }
        let overshoot = (col - cc).hypot(row - rr);
        let overshoot = if overshoot.is_finite() {
            overshoot
        } else {
            m.diagonal
        };
        inside + overshoot
    }
}

/// Connected regions (4-neighbour) of the interested mask classes and their
/// pixel bounding boxes.
#[derive(Debug, Clone)]
pub struct MaskExtents {
    width: u32,
    height: u32,
    /// `0` outside every region, else region index + 1.
    labels: Vec<u32>,
    regions: Vec<Region>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Region {
    class: ClassId,
    /// `[min col, min row, max col, max row]`.
    bbox: [f64; 4],
}

impl MaskExtents {
    pub fn new(mask: &SegMask, interested: &ClassSet) -> Self {
        let (w, h) = (mask.width as usize, mask.height as usize);
        let mut labels = vec![0u32; w * h];
        let mut regions = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            let class = mask.class_ids[start] as ClassId;
            if labels[start] != 0 || !interested.contains(&class) {
                continue;
            }
            let id = regions.len() as u32 + 1;
            let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            labels[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (c, r) = (i % w, i / w);
                bbox[0] = bbox[0].min(c as f64);
                bbox[1] = bbox[1].min(r as f64);
                bbox[2] = bbox[2].max(c as f64);
                bbox[3] = bbox[3].max(r as f64);
                let neighbours = [
                    (c > 0).then(|| i - 1),
                    (c + 1 < w).then(|| i + 1),
                    (r > 0).then(|| i - w),
                    (r + 1 < h).then(|| i + w),
                ];
                for j in neighbours.into_iter().flatten() {
                    if labels[j] == 0 && mask.class_ids[j] as ClassId == class {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
            regions.push(Region { class, bbox });
        }
        Self {
            width: mask.width,
            height: mask.height,
            labels,
            regions,
        }
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn accumulator(&self) -> ExtentAccumulator<'_> {
        ExtentAccumulator {
            owner: self,
            bounds: vec![
                [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
                self.regions.len()
            ],
        }
    }
}

/// Running bounding boxes of the points landing in each mask region.
#[derive(Debug, Clone)]
pub struct ExtentAccumulator<'a> {
    owner: &'a MaskExtents,
    bounds: Vec<[f64; 4]>,
}

impl ExtentAccumulator<'_> {
    #[inline]
    pub fn add(&mut self, class: ClassId, u: f64, v: f64) {
        let m = self.owner;
        let (col, row) = (u.round(), v.round());
        if !(col >= 0.0 && row >= 0.0 && col < m.width as f64 && row < m.height as f64) {
            return;
        }
        let id = m.labels[row as usize * m.width as usize + col as usize];
        if id == 0 || m.regions[id as usize - 1].class != class {
            return;
        }
        let b = &mut self.bounds[id as usize - 1];
        b[0] = b[0].min(u);
        b[1] = b[1].min(v);
        b[2] = b[2].max(u);
        b[3] = b[3].max(v);
    }

    /// Total L1 gap between the center of each region's box and the center
    /// of the box of its points; a region no point reached costs its width
    /// plus height. Centers rather than edges, since sparse points fall
    /// short of the silhouette on every side alike.
    pub fn mismatch(&self) -> f64 {
        self.owner
            .regions
            .iter()
            .zip(&self.bounds)
            .map(|(region, b)| {
                let r = region.bbox;
                if b[0] > b[2] {
                    r[2] - r[0] + 1.0 + r[3] - r[1] + 1.0
                } else {
                    0.5 * ((b[0] + b[2] - r[0] - r[2]).abs() + (b[1] + b[3] - r[1] - r[3]).abs())
                }
            })
            .sum()
    }
}

/// One class's distance field interleaved with region ids, so scoring a
/// point and updating its region box costs a single lookup.
#[derive(Debug, Clone)]
pub(crate) struct PackedField {
    width: u32,
    height: u32,
    diagonal: f64,
    kind: PackedKind,
}

#[derive(Debug, Clone)]
enum PackedKind {
    Ignored,
    Missing,
    Present(Vec<(f64, u32)>),
}

impl PackedField {
    pub(crate) fn new(chamfer: &MaskChamfer, extents: &MaskExtents, class: ClassId) -> Self {
        let kind = match chamfer.fields.get(&class) {
            None => PackedKind::Ignored,
            Some(None) => PackedKind::Missing,
            Some(Some(field)) => PackedKind::Present(
                field
                    .iter()
                    .zip(&extents.labels)
                    .map(|(&d, &id)| {
                        let same = id != 0 && extents.regions[id as usize - 1].class == class;
                        (d, if same { id } else { 0 })
                    })
                    .collect(),
            ),
        };
        Self {
            width: chamfer.width,
            height: chamfer.height,
            diagonal: chamfer.diagonal,
            kind,
        }
    }

    /// Same value as [`MaskChamfer::point_cost`]; also extends the point's
    /// region box in `acc`.
    #[inline]
    pub(crate) fn cost(&self, u: f64, v: f64, acc: &mut ExtentAccumulator<'_>) -> f64 {
        let cells = match &self.kind {
            PackedKind::Ignored => return 0.0,
            PackedKind::Missing => return self.diagonal,
            PackedKind::Present(cells) => cells,
        };
        let col = u.round();
        let row = v.round();
        let cc = col.clamp(0.0, (self.width - 1) as f64);
        let rr = row.clamp(0.0, (self.height - 1) as f64);
        let (d, id) = cells[rr as usize * self.width as usize + cc as usize];
        if cc == col && rr == row {
            if id != 0 {
                let b = &mut acc.bounds[id as usize - 1];
                b[0] = b[0].min(u);
                b[1] = b[1].min(v);
                b[2] = b[2].max(u);
                b[3] = b[3].max(v);
            }
            return d;
        }
        let overshoot = (col - cc).hypot(row - rr);
        d + if overshoot.is_finite() {
            overshoot
        } else {
            self.diagonal
        }
    }
}

/// Sum over interested projected points of the distance from the rounded
/// pixel to the nearest same-class mask pixel.
///
/// Points outside the image are clamped to the border and charged the extra
/// overshoot distance; points of a class absent from the mask cost the image
/// diagonal.
pub fn mask_chamfer_loss(proj: &ProjectedSet, mask: &SegMask, interested: &ClassSet) -> f64 {
    MaskChamfer::new(mask, interested).loss(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelPoint;

    fn class_points(entries: &[(ClassId, &[[f64; 2]])]) -> ClassPoints {
        entries.iter().map(|(c, p)| (*c, p.to_vec())).collect()
    }

    fn proj_of(points: &[(ClassId, f64, f64)]) -> ProjectedSet {
        let mut classes: BTreeMap<ClassId, Vec<PixelPoint>> = BTreeMap::new();
        for (i, &(c, u, v)) in points.iter().enumerate() {
            classes.entry(c).or_default().push(PixelPoint {
                u,
                v,
                depth: 1.0,
                source_index: i,
            });
        }
        ProjectedSet {
            classes,
            calib: CalibrationSet::identity(),
            dropped: 0,
        }
    }

    #[test]
    fn projected_loss_examples() {
        let a = class_points(&[(1, &[[0.0, 0.0]])]);
        let b = class_points(&[(1, &[[3.0, 4.0]])]);
        assert_eq!(projected_loss(&a, &b).unwrap(), 5.0);
        let c = class_points(&[(1, &[[1.0, 2.0], [5.0, 5.0]]), (2, &[[0.5, 0.5]])]);
        assert_eq!(projected_loss(&c, &c).unwrap(), 0.0);
        assert_eq!(projected_loss(&ClassPoints::new(), &b).unwrap(), 0.0);
        assert_eq!(projected_loss(&c, &b), Err(LossError::EmptyLabelClass(2)));
        assert_eq!(projected_loss_mean(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn bias_mse_examples() {
        let calib = CalibrationSet::kitti_reference();
        assert_eq!(
            bias_mse(&BiasSpec::Additive([0.0; 12]), &calib, &calib).unwrap(),
            0.0
        );
        let mse = bias_mse(&BiasSpec::Additive([0.1; 12]), &calib, &calib).unwrap();
        assert!((mse - 0.01).abs() < 1e-15);
        assert_eq!(
            bias_mse(&BiasSpec::Rigid([0.0; 6]), &calib, &calib),
            Err(LossError::FormMismatch)
        );
    }

    #[test]
    fn composite_phases() {
        let schedule = LossSchedule::new(vec![
            LossPhase {
                lambda1: 10.0,
                lambda2: 0.001,
                duration: 5,
            },
            LossPhase {
                lambda1: 10.0,
                lambda2: 0.00001,
                duration: 5,
            },
        ])
        .unwrap();
        let a = composite_loss(0.02, 300.0, &schedule, 0);
        assert_eq!(a.phase_index, 0);
        assert!((a.total - 0.5).abs() < 1e-12);
        let b = composite_loss(0.02, 300.0, &schedule, 5);
        assert_eq!(b.phase_index, 1);
        assert!((b.total - 0.203).abs() < 1e-12);
        assert_eq!(composite_loss(0.02, 300.0, &schedule, 1000).phase_index, 1);
        assert!(LossSchedule::new(vec![]).is_err());
        assert!(LossSchedule::new(vec![LossPhase {
            lambda1: 1.0,
            lambda2: 1.0,
            duration: 0
        }])
        .is_err());
    }

    #[test]
    fn two_phase_split() {
        let s = LossSchedule::two_phase(1000);
        assert_eq!(s.phases[0].duration, 600);
        assert_eq!(s.total_duration(), 1000);
        assert_eq!(s.phase_at(599), 0);
        assert_eq!(s.phase_at(600), 1);
    }

    #[test]
    fn mask_chamfer_examples() {
        let mut mask = SegMask::new(12, 12);
        mask.set(5, 5, 1);
        let interested = ClassSet::from([1]);
        assert_eq!(
            mask_chamfer_loss(&proj_of(&[(1, 8.0, 9.0)]), &mask, &interested),
            5.0
        );
        assert_eq!(
            mask_chamfer_loss(&proj_of(&[(1, 5.2, 4.7)]), &mask, &interested),
            0.0
        );
        // clamped to (11, 5): 6 from the mask pixel plus 3 of overshoot
        assert_eq!(
            mask_chamfer_loss(&proj_of(&[(1, 14.0, 5.0)]), &mask, &interested),
            9.0
        );
        // class 2 has no mask pixels: diagonal penalty
        let both = ClassSet::from([1, 2]);
        let cost = mask_chamfer_loss(&proj_of(&[(2, 0.0, 0.0)]), &mask, &both);
        assert!((cost - 12f64.hypot(12.0)).abs() < 1e-12);
        // non-interested classes are ignored
        assert_eq!(
            mask_chamfer_loss(&proj_of(&[(3, 0.0, 0.0)]), &mask, &interested),
            0.0
        );
    }

    #[test]
    fn packed_field_matches_point_cost_and_tracks_regions() {
        let mut mask = SegMask::new(20, 10);
        for c in 2..6 {
            for r in 1..4 {
                mask.set(c, r, 1);
            }
        }
        for c in 10..15 {
            for r in 5..9 {
                mask.set(c, r, 2);
            }
        }
        mask.set(18, 1, 1);
        let interested = ClassSet::from([1, 2, 4]);
        let chamfer = MaskChamfer::new(&mask, &interested);
        let extents = MaskExtents::new(&mask, &interested);
        assert_eq!(extents.region_count(), 3);
        for class in [1, 2, 3, 4] {
            let packed = PackedField::new(&chamfer, &extents, class);
            let mut acc = extents.accumulator();
            for k in 0..400 {
                let u = -3.0 + (k % 29) as f64 * 0.93;
                let v = -2.0 + (k / 29) as f64 * 0.97;
                assert_eq!(
                    packed.cost(u, v, &mut acc),
                    chamfer.point_cost(class, u, v),
                    "{class} ({u}, {v})"
                );
            }
        }

        let mut acc = extents.accumulator();
        // nothing reached: every region costs its width plus height
        assert_eq!(acc.mismatch(), (4.0 + 3.0) + (5.0 + 4.0) + 2.0);
        for (u, v) in [(2.0, 1.0), (5.0, 3.0), (10.0, 5.0), (14.0, 8.0), (18.0, 1.0)] {
            acc.add(if (8.0..=16.0).contains(&u) { 2 } else { 1 }, u, v);
        }
        assert_eq!(acc.mismatch(), 0.0);
        // a wrong-class point does not count toward a region
        let mut acc = extents.accumulator();
        acc.add(2, 3.0, 2.0);
        assert_eq!(acc.mismatch(), (4.0 + 3.0) + (5.0 + 4.0) + 2.0);
        // one point at a region corner: center gap of half the box each way
        let mut acc = extents.accumulator();
        acc.add(1, 18.0, 1.0);
        acc.add(2, 10.0, 5.0);
        acc.add(1, 2.0, 1.0);
        assert_eq!(acc.mismatch(), 0.5 * (3.0 + 2.0) + 0.5 * (4.0 + 3.0));
    }
}
