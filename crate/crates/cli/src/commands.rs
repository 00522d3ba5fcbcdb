use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use nalgebra::Vector3;
use rayon::prelude::*;
use recalib_core::evaluation::{
    calib_error, recalibrate_corrupted, score_row, summarize, Aggregate, CalibErrorReport, CorruptedFrame,
    CorruptionLevel, DatasetMeta, ReferenceRow, ReportMeta, ReportRow, StatsAccumulator, SweepConfig,
    SweepFailure, SweepReport, REPORT_SCHEMA, TOOLKIT_VERSION,
};
use recalib_core::features::{build_alignment_feature, build_calibration_feature, project_labeled, ClassSet};
use recalib_core::geometry::{apply_bias, serialize_calibration, CalibrationSet};
use recalib_core::losses::LossSchedule;
use recalib_core::perturbation::{
    extrinsic_delta, gaussian_noise_calib, rotate_lidar_mount, translate_cloud_with_label,
    translation_true_bias, BiasSpec, CorruptionManifest, CorruptionType, NoiseSpec, TranslationSpec,
};
use recalib_core::recalibrator::{RecalibResult, SearchConfig};
use recalib_core::rng::derive_seed;
use recalib_core::scene_io::{
    random_scene_spec, synth_scene, write_cloud_bin, write_labels, write_mask_pgm, ClassId,
    RandomSceneConfig, SceneSpec,
};
use recalib_core::tensor::{export_tensor, import_tensor, Tensor};
use serde::{Deserialize, Serialize};

use crate::failure::{load_config, parse_json, Classify, Failure};
use crate::frames::{
    discover, ensure_dir, read_bytes, read_calib, read_cloud, read_label, read_mask, write, write_json,
    FramePaths, MANIFEST,
};

fn default_interested() -> Vec<ClassId> {
    vec![1]
}

fn frame_id(index: usize) -> String {
    format!("{index:06}")
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default)]
    pub seed: u64,
    /// Random scenes generated after the explicit ones.
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub random: RandomSceneConfig,
    #[serde(default)]
    pub scenes: Vec<SceneSpec>,
    /// Calibration file, relative to the spec file; KITTI reference values
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SynthFrame {
    id: String,
    points: usize,
    mask_pixels: usize,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize, F: Serialize> {
    command: &'a str,
    config: C,
    frames: Vec<F>,
}

pub fn synth(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg: SynthConfig = load_config(spec_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    for scene in &cfg.scenes {
        scene.validate().config()?;
    }
    let calib = match &cfg.calibration {
        Some(p) => read_calib(&resolve(spec_path, p)).config()?,
        None => CalibrationSet::kitti_reference(),
    };
    ensure_dir(out_dir).data()?;
    let specs: Vec<SceneSpec> = cfg
        .scenes
        .iter()
        .cloned()
        .chain(
            (0..cfg.count).map(|k| random_scene_spec(&cfg.random, derive_seed(cfg.seed, k as u64), &calib)),
        )
        .collect();
    let frames = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> anyhow::Result<SynthFrame> {
            let paths = FramePaths::new(out_dir, &frame_id(i));
            let (cloud, mask) = synth_scene(spec, &calib);
            write(&paths.cloud(), write_cloud_bin(&cloud))?;
            write(&paths.labels(), write_labels(&cloud.labels))?;
            write(&paths.mask(), write_mask_pgm(&mask))?;
            write(&paths.calib(), serialize_calibration(&calib))?;
            info!("synth {}: {} points", paths.id, cloud.len());
            Ok(SynthFrame {
                id: paths.id,
                points: cloud.len(),
                mask_pixels: mask.class_ids.iter().filter(|&&c| c != 0).count(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .data()?;
    write_json(
        &out_dir.join(MANIFEST),
        &Manifest {
            command: "synth",
            config: &cfg,
            frames,
        },
    )
    .data()
}

// -------------------------------------------------------------- perturb

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Sigma(f64),
    Translate([f64; 3]),
    /// LiDAR mount yaw, degrees.
    Rotate(f64),
}

#[derive(Debug, Serialize)]
struct PerturbConfig {
    corruption: Perturbation,
    seed: u64,
}

fn copy_if_present(from: &Path, to: &Path) -> anyhow::Result<()> {
    if from.exists() {
        write(to, read_bytes(from)?)?;
    }
    Ok(())
}

pub fn perturb(in_dir: &Path, out_dir: &Path, corruption: Perturbation, seed: u64) -> Result<(), Failure> {
    if let Perturbation::Sigma(s) = corruption {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Failure::Config(anyhow!(
                "--sigma must be a finite non-negative number"
            )));
        }
    }
    let ids = discover(in_dir).data()?;
    ensure_dir(out_dir).data()?;
    let frames = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| perturb_frame(in_dir, out_dir, id, corruption, derive_seed(seed, i as u64)))
        .collect::<anyhow::Result<Vec<_>>>()
        .data()?;
    write_json(
        &out_dir.join(MANIFEST),
        &Manifest {
            command: "perturb",
            config: PerturbConfig { corruption, seed },
            frames,
        },
    )
    .data()
}

fn perturb_frame(
    in_dir: &Path,
    out_dir: &Path,
    id: &str,
    corruption: Perturbation,
    seed: u64,
) -> anyhow::Result<CorruptionManifest> {
    let src = FramePaths::new(in_dir, id);
    let dst = FramePaths::new(out_dir, id);
    let calib_bytes = read_bytes(&src.calib())?;
    let calib_in = read_calib(&src.calib())?;
    // a frame that was already corrupted keeps its original label
    let (label_bytes, label) = if src.calib_label().exists() {
        (read_bytes(&src.calib_label())?, read_calib(&src.calib_label())?)
    } else {
        (calib_bytes.clone(), calib_in)
    };
    copy_if_present(&src.labels(), &dst.labels())?;
    copy_if_present(&src.mask(), &dst.mask())?;
    let mut manifest = CorruptionManifest {
        frame_id: id.to_string(),
        corruption_type: CorruptionType::None,
        seed,
        sigma: None,
        translation: None,
        rotation_deg: None,
        true_bias: BiasSpec::Additive([0.0; 12]),
    };
    match corruption {
        Perturbation::Sigma(sigma) => {
            let (noisy, bias) = gaussian_noise_calib(&calib_in, &NoiseSpec::new(sigma, seed))?;
            copy_if_present(&src.cloud(), &dst.cloud())?;
            if sigma == 0.0 {
                write(&dst.calib(), &calib_bytes)?;
            } else {
                write(&dst.calib(), serialize_calibration(&noisy))?;
            }
            write(&dst.calib_label(), &label_bytes)?;
            manifest.corruption_type = CorruptionType::GaussianNoise;
            manifest.sigma = Some(sigma);
            manifest.true_bias = bias;
        }
        Perturbation::Translate([a, b, c]) => {
            let t = TranslationSpec::new(a, b, c);
            let cloud = read_cloud(&src)?;
            let (moved, moved_label) = translate_cloud_with_label(&cloud, &label, &t);
            write(&dst.cloud(), write_cloud_bin(&moved))?;
            write(&dst.calib(), &calib_bytes)?;
            write(&dst.calib_label(), serialize_calibration(&moved_label))?;
            manifest.corruption_type = CorruptionType::PointCloudTranslation;
            manifest.translation = Some(t);
            manifest.true_bias = translation_true_bias(&calib_in, &t);
        }
        Perturbation::Rotate(degrees) => {
            let (rotated, bias) = rotate_lidar_mount(&calib_in, Vector3::new(0.0, 0.0, degrees.to_radians()));
            copy_if_present(&src.cloud(), &dst.cloud())?;
            write(&dst.calib(), serialize_calibration(&rotated))?;
            write(&dst.calib_label(), &label_bytes)?;
            manifest.corruption_type = CorruptionType::MountRotation;
            manifest.rotation_deg = Some([0.0, 0.0, degrees]);
            manifest.true_bias = bias;
        }
    }
    info!("perturb {id}");
    Ok(manifest)
}

// ------------------------------------------------------ export-features

#[derive(Debug, Serialize)]
struct ExportConfig<'a> {
    classes: &'a [ClassId],
    verify: bool,
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum ExportRecord {
    Written {
        id: String,
        align_dims: Vec<u32>,
        calib5_dims: Vec<u32>,
        occupied_pixels: usize,
    },
    Skipped {
        id: String,
        reason: SkipReason,
    },
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum SkipReason {
    MissingMask,
}

pub fn export_features(
    in_dir: &Path,
    out_dir: &Path,
    classes: &[ClassId],
    verify: bool,
) -> Result<(), Failure> {
    if classes.is_empty() {
        return Err(Failure::Config(anyhow!("--classes must name at least one class")));
    }
    let interested: ClassSet = classes.iter().copied().collect();
    let ids = discover(in_dir).data()?;
    ensure_dir(out_dir).data()?;
    let records = ids
        .par_iter()
        .map(|id| export_frame(in_dir, out_dir, id, &interested, verify))
        .collect::<Result<Vec<_>, Failure>>()?;
    write_json(
        &out_dir.join(MANIFEST),
        &Manifest {
            command: "export-features",
            config: ExportConfig { classes, verify },
            frames: records,
        },
    )
    .data()
}

fn write_tensor(path: &Path, tensor: &Tensor, verify: bool) -> Result<(), Failure> {
    let bytes = export_tensor(tensor);
    write(path, &bytes).data()?;
    if verify {
        let back = import_tensor(&read_bytes(path).data()?)
            .with_context(|| format!("re-reading {}", path.display()))
            .internal()?;
        if &back != tensor {
            return Err(Failure::Internal(anyhow!(
                "{} does not round-trip",
                path.display()
            )));
        }
    }
    Ok(())
}

fn export_frame(
    in_dir: &Path,
    out_dir: &Path,
    id: &str,
    interested: &ClassSet,
    verify: bool,
) -> Result<ExportRecord, Failure> {
    let src = FramePaths::new(in_dir, id);
    let dst = FramePaths::new(out_dir, id);
    if !src.mask().exists() {
        warn!("export {id}: no mask, skipped");
        return Ok(ExportRecord::Skipped {
            id: id.to_string(),
            reason: SkipReason::MissingMask,
        });
    }
    let cloud = read_cloud(&src).data()?;
    let mask = read_mask(&src).data()?;
    let calib = read_calib(&src.calib()).data()?;
    let proj = project_labeled(&cloud, &calib, interested);
    let align = build_alignment_feature(&proj, &mask, interested).to_tensor();
    let calib5 = build_calibration_feature(&proj, &cloud, mask.width, mask.height);
    let occupied_pixels = calib5.occupied_count();
    let calib5 = calib5.to_tensor();
    write_tensor(&dst.align(), &align, verify)?;
    write_tensor(&dst.calib5(), &calib5, verify)?;
    Ok(ExportRecord::Written {
        id: id.to_string(),
        align_dims: align.dims,
        calib5_dims: calib5.dims,
        occupied_pixels,
    })
}

// ---------------------------------------------------------- recalibrate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecalibConfig {
    pub search: SearchConfig,
    pub interested: Vec<ClassId>,
    /// Fit against each frame's label calibration with this schedule
    /// instead of the mask.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<LossSchedule>,
    pub seed: u64,
}

impl Default for RecalibConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            interested: default_interested(),
            schedule: None,
            seed: 0,
        }
    }
}

impl RecalibConfig {
    fn validate(&self) -> anyhow::Result<()> {
        self.search.validate()?;
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        if self.interested.is_empty() {
            return Err(anyhow!("interested must name at least one class"));
        }
        Ok(())
    }
}

/// Flag, then file, then default.
pub fn resolve_recalib_config(path: Option<&Path>, seed: Option<u64>) -> Result<RecalibConfig, Failure> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => RecalibConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().config()?;
    Ok(cfg)
}

#[derive(Deserialize)]
struct AnyManifest {
    #[serde(default)]
    frames: Vec<serde_json::Value>,
}

/// Corruption records left by `perturb`, keyed by frame id.
fn corruption_records(in_dir: &Path) -> BTreeMap<String, CorruptionManifest> {
    let path = in_dir.join(MANIFEST);
    let Ok(text) = std::fs::read_to_string(&path) else {
        return BTreeMap::new();
    };
    let Ok(manifest) = serde_json::from_str::<AnyManifest>(&text) else {
        warn!("{} is not a manifest; corruption records ignored", path.display());
        return BTreeMap::new();
    };
    manifest
        .frames
        .into_iter()
        .filter_map(|v| serde_json::from_value::<CorruptionManifest>(v).ok())
        .map(|m| (m.frame_id.clone(), m))
        .collect()
}

struct FrameOutcome {
    id: String,
    result: Result<(Option<ReportRow>, RecalibResult), String>,
}

#[derive(Serialize)]
struct RecalibManifestFrame<'a> {
    id: &'a str,
    status: &'a str,
}

pub fn recalibrate(in_dir: &Path, cfg: &RecalibConfig, out_dir: &Path) -> Result<(), Failure> {
    let interested: ClassSet = cfg.interested.iter().copied().collect();
    let ids = discover(in_dir).data()?;
    ensure_dir(out_dir).data()?;
    let records = corruption_records(in_dir);

    // grid: distinct corruption levels of the labelled frames, first seen first
    let mut grid: Vec<CorruptionLevel> = Vec::new();
    let mut level_of: BTreeMap<String, usize> = BTreeMap::new();
    for id in &ids {
        if !FramePaths::new(in_dir, id).calib_label().exists() {
            continue;
        }
        let level = records
            .get(id)
            .map(CorruptionLevel::from_manifest)
            .unwrap_or(CorruptionLevel::None);
        let index = grid.iter().position(|l| *l == level).unwrap_or_else(|| {
            grid.push(level);
            grid.len() - 1
        });
        level_of.insert(id.clone(), index);
    }

    let outcomes: Vec<FrameOutcome> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| FrameOutcome {
            id: id.clone(),
            result: recalibrate_frame(in_dir, out_dir, id, i, cfg, &interested, &records, &level_of),
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut log = String::new();
    let mut frames = Vec::new();
    for o in &outcomes {
        match &o.result {
            Ok((row, result)) => {
                let _ = writeln!(
                    log,
                    "{}\t{:.3}\t{}",
                    o.id, result.wall_time_ms, result.evaluations
                );
                match row {
                    Some(r) => rows.push(r.clone()),
                    None => failures.push(SweepFailure {
                        frame_id: o.id.clone(),
                        level_index: 0,
                        error: "unscored: no label calibration".into(),
                    }),
                }
                frames.push(RecalibManifestFrame {
                    id: &o.id,
                    status: "recalibrated",
                });
            }
            Err(e) => {
                warn!("recalibrate {}: {e}", o.id);
                failures.push(SweepFailure {
                    frame_id: o.id.clone(),
                    level_index: level_of.get(&o.id).copied().unwrap_or(0),
                    error: e.clone(),
                });
                frames.push(RecalibManifestFrame {
                    id: &o.id,
                    status: "failed",
                });
            }
        }
    }

    let sweep_cfg = SweepConfig {
        search: cfg.search.clone(),
        schedule: cfg.schedule.clone(),
        interested: cfg.interested.clone(),
        master_seed: cfg.seed,
        include_timing: false,
        dataset: DatasetMeta {
            name: in_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "frames".into()),
            split: "all".into(),
        },
    };
    let summary = summarize(&grid, &rows, &failures);
    let report = SweepReport {
        schema: REPORT_SCHEMA,
        meta: ReportMeta {
            seed: cfg.seed,
            config_hash: sweep_cfg.config_hash(&grid),
            toolkit_version: TOOLKIT_VERSION.into(),
            dataset: sweep_cfg.dataset.clone(),
            frames: ids.len(),
            reference: ReferenceRow::default(),
        },
        grid,
        rows,
        failures,
        summary,
    };
    write(&out_dir.join("report.json"), report.to_json() + "\n").data()?;
    write(&out_dir.join("run.log"), log).data()?;
    write_json(
        &out_dir.join(MANIFEST),
        &Manifest {
            command: "recalibrate",
            config: cfg,
            frames,
        },
    )
    .data()
}

#[allow(clippy::too_many_arguments)]
fn recalibrate_frame(
    in_dir: &Path,
    out_dir: &Path,
    id: &str,
    index: usize,
    cfg: &RecalibConfig,
    interested: &ClassSet,
    records: &BTreeMap<String, CorruptionManifest>,
    level_of: &BTreeMap<String, usize>,
) -> Result<(Option<ReportRow>, RecalibResult), String> {
    let src = FramePaths::new(in_dir, id);
    let load = || -> anyhow::Result<_> {
        Ok((
            read_cloud(&src)?,
            read_mask(&src)?,
            read_calib(&src.calib())?,
            read_label(&src)?,
        ))
    };
    let (cloud, mask, calib_in, label) = load().map_err(|e| format!("{e:#}"))?;
    if cfg.schedule.is_some() && label.is_none() {
        return Err("supervised fit needs a label calibration".into());
    }
    let calib_label = label.unwrap_or(calib_in);
    let manifest = records.get(id).cloned().unwrap_or_else(|| CorruptionManifest {
        frame_id: id.to_string(),
        corruption_type: if label.is_some() {
            CorruptionType::Unknown
        } else {
            CorruptionType::None
        },
        seed: 0,
        sigma: None,
        translation: None,
        rotation_deg: None,
        true_bias: BiasSpec::Additive(extrinsic_delta(&calib_label, &calib_in)),
    });
    let corrupted = CorruptedFrame {
        cloud,
        calib_in,
        calib_label,
        manifest,
    };
    let search = SearchConfig {
        rng_seed: derive_seed(cfg.seed, index as u64),
        ..cfg.search.clone()
    };
    let result = recalibrate_corrupted(&corrupted, &mask, interested, &search, cfg.schedule.as_ref())
        .map_err(|e| e.to_string())?;
    let estimated = apply_bias(&corrupted.calib_in, &result.bias);
    write(
        &FramePaths::new(out_dir, id).calib(),
        serialize_calibration(&estimated),
    )
    .map_err(|e| format!("{e:#}"))?;
    info!(
        "recalibrate {id}: {:.3} -> {:.3}",
        result.objective_initial, result.objective_final
    );
    let row = match level_of.get(id) {
        Some(&level) => Some(
            score_row(id, level, &corrupted, &mask, interested, &result, false).map_err(|e| e.to_string())?,
        ),
        None => None,
    };
    Ok((row, result))
}

// ------------------------------------------------------------- evaluate

fn fmt_agg(a: &Option<Aggregate>) -> String {
    match a {
        Some(a) => format!("{:>9.3} {:>9.3} {:>9.3}", a.mean, a.median, a.p95),
        None => format!("{:>9} {:>9} {:>9}", "-", "-", "-"),
    }
}

fn level_name(level: &CorruptionLevel) -> String {
    match level {
        CorruptionLevel::None => "none".into(),
        CorruptionLevel::Gaussian { sigma } => format!("gaussian σ={sigma}"),
        CorruptionLevel::Translation { a, b, c } => format!("translate ({a}, {b}, {c})"),
        CorruptionLevel::MountRotation { axis, degrees } => {
            format!("mount {degrees}° about ({}, {}, {})", axis[0], axis[1], axis[2])
        }
    }
}

/// Re-summarizes a report; returns the updated report and a text table.
pub fn resummarize(path: &Path) -> Result<(SweepReport, String), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .data()?;
    let mut report: SweepReport = parse_json(path, &text).data()?;
    if report.schema != REPORT_SCHEMA {
        return Err(Failure::Data(anyhow!(
            "{}: report schema {} is not supported (expected {REPORT_SCHEMA})",
            path.display(),
            report.schema
        )));
    }
    report.summary = summarize(&report.grid, &report.rows, &report.failures);
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<32} {:>7}  {:>29}  {:>29}",
        "level", "frames", "translation cm (mean/med/p95)", "rotation deg (mean/med/p95)"
    );
    for level in &report.summary.levels {
        let name = level_name(&level.level);
        let counted = format!("{}/{}", level.frames_counted, level.frames_attempted);
        let _ = writeln!(
            table,
            "{:<32} {:>7}  before {}  {}",
            name,
            counted,
            fmt_agg(&level.before.translation_error_cm),
            fmt_agg(&level.before.rotation_error_deg)
        );
        let _ = writeln!(
            table,
            "{:<32} {:>7}  after  {}  {}",
            "",
            "",
            fmt_agg(&level.after.translation_error_cm),
            fmt_agg(&level.after.rotation_error_deg)
        );
    }
    let r = &report.meta.reference;
    let _ = writeln!(
        table,
        "reference ({}, {}): {} cm / {}° (not reproduced here)",
        r.method, r.dataset, r.translation_error_cm, r.rotation_error_deg
    );
    Ok((report, table))
}

#[derive(Debug, Serialize)]
pub struct DirComparison {
    pub schema: u32,
    pub frames: Vec<CalibErrorReport>,
    pub failures: Vec<SweepFailure>,
    pub translation_error_cm: Option<Aggregate>,
    pub rotation_error_deg: Option<Aggregate>,
}

/// Scores `{id}.calib.txt` in `estimated` against the label in `labels`:
/// `{id}.calib_label.txt` when present, else `{id}.calib.txt`.
pub fn compare_dirs(estimated: &Path, labels: &Path) -> Result<(DirComparison, String), Failure> {
    let ids = discover(estimated).data()?;
    let mut frames = Vec::new();
    let mut failures = Vec::new();
    let mut t = StatsAccumulator::default();
    let mut r = StatsAccumulator::default();
    for id in &ids {
        let est = FramePaths::new(estimated, id);
        let lab = FramePaths::new(labels, id);
        let label_path = if lab.calib_label().exists() {
            lab.calib_label()
        } else {
            lab.calib()
        };
        let scored = (|| -> anyhow::Result<CalibErrorReport> {
            let e = read_calib(&est.calib())?;
            let l = read_calib(&label_path)?;
            let mut report = calib_error(&e, &l)?;
            report.frame_id = id.clone();
            Ok(report)
        })();
        match scored {
            Ok(report) => {
                t.push(report.translation_error_cm);
                r.push(report.rotation_error_deg);
                frames.push(report);
            }
            Err(e) => failures.push(SweepFailure {
                frame_id: id.clone(),
                level_index: 0,
                error: format!("{e:#}"),
            }),
        }
    }
    let cmp = DirComparison {
        schema: REPORT_SCHEMA,
        frames,
        failures,
        translation_error_cm: t.finalize(),
        rotation_error_deg: r.finalize(),
    };
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<16} {:>16} {:>16}",
        "frame", "translation cm", "rotation deg"
    );
    for f in &cmp.frames {
        let _ = writeln!(
            table,
            "{:<16} {:>16.4} {:>16.4}",
            f.frame_id, f.translation_error_cm, f.rotation_error_deg
        );
    }
    for f in &cmp.failures {
        let _ = writeln!(table, "{:<16} failed: {}", f.frame_id, f.error);
    }
    let _ = writeln!(
        table,
        "{:<16} {} | {}   (mean/median/p95)",
        "all",
        fmt_agg(&cmp.translation_error_cm),
        fmt_agg(&cmp.rotation_error_deg)
    );
    Ok((cmp, table))
}
