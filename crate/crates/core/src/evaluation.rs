//! Re-calibration scoring (translation cm, rotation degrees) and paired
//! corruption → recalibrate → score sweeps with a versioned JSON report.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{ClassSet, InterestedPoints};
use crate::geometry::{apply_bias, nearest_rotation, rotation_angle_deg, CalibrationSet};
use crate::losses::{LossSchedule, MaskChamfer};
use crate::perturbation::{
    gaussian_noise_calib, rotate_lidar_mount, translate_cloud_with_label, translation_true_bias, BiasSpec,
    CorruptionManifest, CorruptionType, NoiseSpec, PerturbationError, TranslationSpec,
};
use crate::recalibrator::{recalibrate, supervised_fit, RecalibError, RecalibResult, SearchConfig};
use crate::rng::derive_seed;
use crate::scene_io::{ClassId, LabeledCloud, SegMask};

pub const REPORT_SCHEMA: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest Frobenius distance from SO(3) accepted for a rotation block.
pub const MAX_PROCRUSTES_RESIDUAL: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("extrinsic rotation block is {residual} from the nearest rotation")]
    NotDecomposable { residual: f64 },
    #[error("corruption grid is empty")]
    BadGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibErrorReport {
    pub frame_id: String,
    pub translation_error_cm: f64,
    pub rotation_error_deg: f64,
    /// Frobenius distances of the two rotation blocks from SO(3).
    pub procrustes_residual: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionManifest>,
}

/// Extrinsic error between an estimate and the label. Rotation blocks are
/// first projected onto SO(3).
pub fn calib_error(
    estimated: &CalibrationSet,
    label: &CalibrationSet,
) -> Result<CalibErrorReport, EvalError> {
    let (r_est, res_est) = nearest_rotation(&estimated.extrinsic_rotation());
    let (r_lab, res_lab) = nearest_rotation(&label.extrinsic_rotation());
    for residual in [res_est, res_lab] {
        if residual.is_nan() || residual > MAX_PROCRUSTES_RESIDUAL {
            return Err(EvalError::NotDecomposable { residual });
        }
    }
    let dt: Vector3<f64> = estimated.extrinsic_translation() - label.extrinsic_translation();
    let rotation_error_deg = rotation_angle_deg(&r_est, &r_lab).expect("Procrustes output is a rotation");
    Ok(CalibErrorReport {
        frame_id: String::new(),
        translation_error_cm: 100.0 * dt.norm(),
        rotation_error_deg,
        procrustes_residual: [res_est, res_lab],
        corruption: None,
    })
}

/// One input frame of a sweep.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub cloud: LabeledCloud,
    pub mask: SegMask,
    pub calib: CalibrationSet,
}

/// One corruption setting of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CorruptionLevel {
    None,
    Gaussian {
        sigma: f64,
    },
    Translation {
        a: f64,
        b: f64,
        c: f64,
    },
    /// LiDAR mount rotation about a velodyne-frame axis.
    MountRotation {
        axis: [f64; 3],
        degrees: f64,
    },
}

/// A frame after corruption: what the re-calibrator sees plus the truth.
#[derive(Debug, Clone)]
pub struct CorruptedFrame {
    pub cloud: LabeledCloud,
    pub calib_in: CalibrationSet,
    pub calib_label: CalibrationSet,
    pub manifest: CorruptionManifest,
}

pub fn corrupt_frame(
    frame: &Frame,
    level: &CorruptionLevel,
    seed: u64,
) -> Result<CorruptedFrame, PerturbationError> {
    let mut manifest = CorruptionManifest {
        frame_id: frame.id.clone(),
        corruption_type: CorruptionType::None,
        seed,
        sigma: None,
        translation: None,
        rotation_deg: None,
        true_bias: BiasSpec::Additive([0.0; 12]),
    };
    Ok(match *level {
        CorruptionLevel::None => CorruptedFrame {
            cloud: frame.cloud.clone(),
            calib_in: frame.calib,
            calib_label: frame.calib,
            manifest,
        },
        CorruptionLevel::Gaussian { sigma } => {
            let (noisy, bias) = gaussian_noise_calib(&frame.calib, &NoiseSpec::new(sigma, seed))?;
            manifest.corruption_type = CorruptionType::GaussianNoise;
            manifest.sigma = Some(sigma);
            manifest.true_bias = bias;
            CorruptedFrame {
                cloud: frame.cloud.clone(),
                calib_in: noisy,
                calib_label: frame.calib,
                manifest,
            }
        }
        CorruptionLevel::Translation { a, b, c } => {
            let t = TranslationSpec::new(a, b, c);
            let (cloud, label) = translate_cloud_with_label(&frame.cloud, &frame.calib, &t);
            manifest.corruption_type = CorruptionType::PointCloudTranslation;
            manifest.translation = Some(t);
            manifest.true_bias = translation_true_bias(&frame.calib, &t);
            CorruptedFrame {
                cloud,
                calib_in: frame.calib,
                calib_label: label,
                manifest,
            }
        }
        CorruptionLevel::MountRotation { axis, degrees } => {
            let axis = Vector3::from(axis);
            let axis = if axis.norm() > 0.0 {
                axis.normalize()
            } else {
                Vector3::z()
            };
            let (corrupted, bias) = rotate_lidar_mount(&frame.calib, axis * degrees.to_radians());
            manifest.corruption_type = CorruptionType::MountRotation;
            manifest.rotation_deg = Some((axis * degrees).into());
            manifest.true_bias = bias;
            CorruptedFrame {
                cloud: frame.cloud.clone(),
                calib_in: corrupted,
                calib_label: frame.calib,
                manifest,
            }
        }
    })
}

impl CorruptionLevel {
    /// The level a corruption record was generated with.
    pub fn from_manifest(m: &CorruptionManifest) -> Self {
        match m.corruption_type {
            CorruptionType::None | CorruptionType::Unknown => CorruptionLevel::None,
            CorruptionType::GaussianNoise => CorruptionLevel::Gaussian {
                sigma: m.sigma.unwrap_or(0.0),
            },
            CorruptionType::PointCloudTranslation => {
                let t = m.translation.unwrap_or(TranslationSpec::new(0.0, 0.0, 0.0));
                CorruptionLevel::Translation {
                    a: t.a,
                    b: t.b,
                    c: t.c,
                }
            }
            CorruptionType::MountRotation => {
                let r = Vector3::from(m.rotation_deg.unwrap_or([0.0; 3]));
                let degrees = r.norm();
                let axis = if degrees > 0.0 { r / degrees } else { Vector3::z() };
                CorruptionLevel::MountRotation {
                    axis: axis.into(),
                    degrees,
                }
            }
        }
    }
}

/// Method-independent reference row carried in every report. These values
/// come from a real-data evaluation and are not reproduced by synthetic sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub dataset: String,
    pub translation_error_cm: f64,
    pub rotation_error_deg: f64,
    pub reproduced: bool,
}

impl Default for ReferenceRow {
    fn default() -> Self {
        Self {
            method: "segmentation-alignment learned re-calibration".into(),
            dataset: "KITTI".into(),
            translation_error_cm: 10.3,
            rotation_error_deg: 0.21,
            reproduced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub split: String,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            split: "all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub search: SearchConfig,
    /// When set, frames are fitted with the supervised composite objective
    /// instead of the mask-only search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<LossSchedule>,
    pub interested: Vec<ClassId>,
    pub master_seed: u64,
    /// Write per-row wall time into the report (breaks byte reproducibility).
    #[serde(default)]
    pub include_timing: bool,
    #[serde(default)]
    pub dataset: DatasetMeta,
}

impl SweepConfig {
    pub fn new(search: SearchConfig, interested: Vec<ClassId>, master_seed: u64) -> Self {
        Self {
            search,
            schedule: None,
            interested,
            master_seed,
            include_timing: false,
            dataset: DatasetMeta::default(),
        }
    }

    /// Hex SHA-256 of the canonical JSON of this config and the grid.
    pub fn config_hash(&self, grid: &[CorruptionLevel]) -> String {
        let json = serde_json::to_vec(&(self, grid)).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBefore {
    pub translation_error_cm: f64,
    pub rotation_error_deg: f64,
    pub chamfer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAfter {
    pub translation_error_cm: f64,
    pub rotation_error_deg: f64,
    pub chamfer: f64,
    pub evaluations: usize,
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub frame_id: String,
    pub level_index: usize,
    pub corruption: CorruptionManifest,
    pub before: ScoreBefore,
    pub after: ScoreAfter,
    pub bias: BiasSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub frame_id: String,
    pub level_index: usize,
    pub error: String,
}

/// mean / median / 95th percentile (nearest rank).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Commutative accumulator: merging in any order and grouping gives the
/// same finalized statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsAccumulator {
    values: Vec<f64>,
}

impl StatsAccumulator {
    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    pub fn merge(mut self, other: StatsAccumulator) -> StatsAccumulator {
        self.values.extend(other.values);
        self
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    /// `None` when empty.
    pub fn finalize(&self) -> Option<Aggregate> {
        if self.values.is_empty() {
            return None;
        }
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        // summing in sorted order makes the mean independent of merge order
        let mean = v.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(Aggregate {
            mean,
            median,
            p95: v[rank - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub translation_error_cm: Option<Aggregate>,
    pub rotation_error_deg: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level_index: usize,
    pub level: CorruptionLevel,
    pub frames_attempted: usize,
    pub frames_counted: usize,
    pub failures: Vec<SweepFailure>,
    pub before: ErrorSummary,
    pub after: ErrorSummary,
    /// `1 − chamfer_after / chamfer_before` per frame (0 when already zero).
    pub objective_reduction: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: String,
    pub toolkit_version: String,
    pub dataset: DatasetMeta,
    pub frames: usize,
    pub reference: ReferenceRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: u32,
    pub meta: ReportMeta,
    pub grid: Vec<CorruptionLevel>,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<SweepFailure>,
    pub summary: SweepSummary,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Default)]
struct LevelAccumulator {
    before_t: StatsAccumulator,
    before_r: StatsAccumulator,
    after_t: StatsAccumulator,
    after_r: StatsAccumulator,
    reduction: StatsAccumulator,
}

impl LevelAccumulator {
    fn from_row(row: &ReportRow) -> Self {
        let mut acc = Self::default();
        acc.before_t.push(row.before.translation_error_cm);
        acc.before_r.push(row.before.rotation_error_deg);
        acc.after_t.push(row.after.translation_error_cm);
        acc.after_r.push(row.after.rotation_error_deg);
        let reduction = if row.before.chamfer > 0.0 {
            1.0 - row.after.chamfer / row.before.chamfer
        } else {
            0.0
        };
        acc.reduction.push(reduction);
        acc
    }

    fn merge(self, o: Self) -> Self {
        Self {
            before_t: self.before_t.merge(o.before_t),
            before_r: self.before_r.merge(o.before_r),
            after_t: self.after_t.merge(o.after_t),
            after_r: self.after_r.merge(o.after_r),
            reduction: self.reduction.merge(o.reduction),
        }
    }
}

/// Recomputes the per-level summary from report rows. Row order is
/// irrelevant.
pub fn summarize(grid: &[CorruptionLevel], rows: &[ReportRow], failures: &[SweepFailure]) -> SweepSummary {
    let levels = grid
        .iter()
        .enumerate()
        .map(|(li, level)| {
            let acc = rows
                .par_iter()
                .filter(|r| r.level_index == li)
                .map(LevelAccumulator::from_row)
                .reduce(LevelAccumulator::default, LevelAccumulator::merge);
            let level_failures: Vec<SweepFailure> =
                failures.iter().filter(|f| f.level_index == li).cloned().collect();
            let counted = acc.before_t.count();
            LevelSummary {
                level_index: li,
                level: *level,
                frames_attempted: counted + level_failures.len(),
                frames_counted: counted,
                failures: level_failures,
                before: ErrorSummary {
                    translation_error_cm: acc.before_t.finalize(),
                    rotation_error_deg: acc.before_r.finalize(),
                },
                after: ErrorSummary {
                    translation_error_cm: acc.after_t.finalize(),
                    rotation_error_deg: acc.after_r.finalize(),
                },
                objective_reduction: acc.reduction.finalize(),
            }
        })
        .collect();
    SweepSummary { levels }
}

/// Scores a re-calibration result against the label of a corrupted frame.
pub fn score_row(
    frame_id: &str,
    level_index: usize,
    corrupted: &CorruptedFrame,
    mask: &SegMask,
    interested: &ClassSet,
    result: &RecalibResult,
    include_timing: bool,
) -> Result<ReportRow, EvalError> {
    let estimated = apply_bias(&corrupted.calib_in, &result.bias);
    let before = calib_error(&corrupted.calib_in, &corrupted.calib_label)?;
    let after = calib_error(&estimated, &corrupted.calib_label)?;
    let chamfer = MaskChamfer::new(mask, interested);
    let points = InterestedPoints::new(&corrupted.cloud, interested);
    Ok(ReportRow {
        frame_id: frame_id.to_string(),
        level_index,
        corruption: corrupted.manifest.clone(),
        before: ScoreBefore {
            translation_error_cm: before.translation_error_cm,
            rotation_error_deg: before.rotation_error_deg,
            chamfer: chamfer.loss(&points.project(&corrupted.calib_in)),
        },
        after: ScoreAfter {
            translation_error_cm: after.translation_error_cm,
            rotation_error_deg: after.rotation_error_deg,
            chamfer: chamfer.loss(&points.project(&estimated)),
            evaluations: result.evaluations,
            wall_time_ms: include_timing.then_some(result.wall_time_ms),
        },
        bias: result.bias,
    })
}

/// Re-calibrates a corrupted frame: supervised against its label when a
/// schedule is given, else from the mask alone.
pub fn recalibrate_corrupted(
    corrupted: &CorruptedFrame,
    mask: &SegMask,
    interested: &ClassSet,
    search: &SearchConfig,
    schedule: Option<&LossSchedule>,
) -> Result<RecalibResult, RecalibError> {
    match schedule {
        Some(s) => supervised_fit(
            &corrupted.cloud,
            &corrupted.calib_in,
            &corrupted.calib_label,
            interested,
            s,
            search,
        ),
        None => recalibrate(&corrupted.cloud, mask, &corrupted.calib_in, interested, search),
    }
}

/// Corrupts, re-calibrates and scores one frame at one level.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_frame(
    frame: &Frame,
    level: &CorruptionLevel,
    level_index: usize,
    corruption_seed: u64,
    search: &SearchConfig,
    schedule: Option<&LossSchedule>,
    interested: &ClassSet,
    include_timing: bool,
) -> Result<ReportRow, String> {
    let corrupted = corrupt_frame(frame, level, corruption_seed).map_err(|e| e.to_string())?;
    let result = recalibrate_corrupted(&corrupted, &frame.mask, interested, search, schedule)
        .map_err(|e| e.to_string())?;
    score_row(
        &frame.id,
        level_index,
        &corrupted,
        &frame.mask,
        interested,
        &result,
        include_timing,
    )
    .map_err(|e| e.to_string())
}

/// Seeds for frame `fi` at level `li`: (corruption, search).
pub fn frame_seeds(master: u64, fi: usize, li: usize) -> (u64, u64) {
    let frame_seed = derive_seed(master, fi as u64);
    (
        derive_seed(frame_seed, 2 * li as u64),
        derive_seed(frame_seed, 2 * li as u64 + 1),
    )
}

/// Runs every (frame, level) pair. Frames are processed in parallel; the
/// report is identical for any thread count. Per-frame failures are recorded,
/// never fatal.
pub fn run_sweep(
    frames: &[Frame],
    grid: &[CorruptionLevel],
    cfg: &SweepConfig,
) -> Result<SweepReport, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::BadGrid);
    }
    let interested: ClassSet = cfg.interested.iter().copied().collect();
    let jobs: Vec<(usize, usize)> = (0..frames.len())
        .flat_map(|fi| (0..grid.len()).map(move |li| (fi, li)))
        .collect();
    let outcomes: Vec<Result<ReportRow, SweepFailure>> = jobs
        .par_iter()
        .map(|&(fi, li)| {
            let (corruption_seed, search_seed) = frame_seeds(cfg.master_seed, fi, li);
            let search = SearchConfig {
                rng_seed: search_seed,
                ..cfg.search.clone()
            };
            evaluate_frame(
                &frames[fi],
                &grid[li],
                li,
                corruption_seed,
                &search,
                cfg.schedule.as_ref(),
                &interested,
                cfg.include_timing,
            )
            .map_err(|error| SweepFailure {
                frame_id: frames[fi].id.clone(),
                level_index: li,
                error,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(grid, &rows, &failures);
    Ok(SweepReport {
        schema: REPORT_SCHEMA,
        meta: ReportMeta {
            seed: cfg.master_seed,
            config_hash: cfg.config_hash(grid),
            toolkit_version: TOOLKIT_VERSION.into(),
            dataset: cfg.dataset.clone(),
            frames: frames.len(),
            reference: ReferenceRow::default(),
        },
        grid: grid.to_vec(),
        rows,
        failures,
        summary,
    })
}

/// Calibration errors for matching frame ids, ordered by id.
pub fn compare_calibrations(
    estimated: &BTreeMap<String, CalibrationSet>,
    labels: &BTreeMap<String, CalibrationSet>,
) -> Vec<Result<CalibErrorReport, (String, EvalError)>> {
    estimated
        .iter()
        .filter_map(|(id, est)| labels.get(id).map(|lab| (id, est, lab)))
        .map(|(id, est, lab)| {
            calib_error(est, lab)
                .map(|mut r| {
                    r.frame_id = id.clone();
                    r
                })
                .map_err(|e| (id.clone(), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn identical_calibrations_score_zero() {
        let calib = CalibrationSet::kitti_reference();
        let r = calib_error(&calib, &calib).unwrap();
        assert_eq!(r.translation_error_cm, 0.0);
        assert_eq!(r.rotation_error_deg, 0.0);
    }

    #[test]
    fn hand_constructed_errors() {
        let label = CalibrationSet::identity();
        let mut est = label;
        est.v2c[(0, 3)] = 0.06;
        est.v2c[(1, 3)] = 0.08;
        let r = calib_error(&est, &label).unwrap();
        assert!((r.translation_error_cm - 10.0).abs() < 1e-12);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.21f64.to_radians()).into_inner();
        let mut est = label;
        est.v2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        let r = calib_error(&est, &label).unwrap();
        assert!((r.rotation_error_deg - 0.21).abs() < 1e-9);
        let mut bad = label;
        bad.v2c[(0, 0)] = 2.0;
        assert!(matches!(
            calib_error(&bad, &label),
            Err(EvalError::NotDecomposable { .. })
        ));
    }

    #[test]
    fn stats_are_order_independent() {
        let mut a = StatsAccumulator::default();
        let mut b = StatsAccumulator::default();
        for v in [0.1, 0.7, 0.3] {
            a.push(v);
        }
        for v in [1e-17, 5.0] {
            b.push(v);
        }
        let ab = a.clone().merge(b.clone()).finalize().unwrap();
        let ba = b.merge(a).finalize().unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.median, 0.3);
        assert_eq!(ab.p95, 5.0);
        assert!(StatsAccumulator::default().finalize().is_none());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let cfg = SweepConfig::new(SearchConfig::default(), vec![1], 0);
        assert_eq!(run_sweep(&[], &[], &cfg).unwrap_err(), EvalError::BadGrid);
    }

    #[test]
    fn corruption_level_json() {
        let json = serde_json::to_string(&CorruptionLevel::Translation {
            a: 0.0,
            b: 0.2,
            c: 0.0,
        })
        .unwrap();
        assert_eq!(json, r#"{"type":"translation","a":0.0,"b":0.2,"c":0.0}"#);
    }
}
