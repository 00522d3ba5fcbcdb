//! Extrinsic bias recovery by derivative-free search.
//!
//! [`recalibrate`] needs only the cloud, the image mask and the corrupted
//! calibration: it minimizes the mask-chamfer loss over a bias. The search
//! is a coarse grid over the translation components followed by bounded
//! downhill-simplex refinement from the best cell and from extra random
//! seeds. [`supervised_fit`] runs the same machinery on the scheduled
//! composite of bias MSE and projected loss against a known label.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ClassSet, InterestedPoints};
use crate::geometry::{apply_bias, CalibrationSet, Projector};
use crate::losses::{
    additive_mse, composite_loss, LossSchedule, MaskChamfer, MaskExtents, PackedField, ProjectedLossTarget,
};
use crate::perturbation::{BiasForm, BiasSpec};
use crate::rng::seeded_rng;
use crate::scene_io::{ClassId, LabeledCloud, SegMask};
use crate::simplex::{minimize_with_restarts, Coefficients, SimplexOptions, SimplexOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecalibError {
    #[error("no interested point projects in front of the camera")]
    NoInterestedPoints,
    #[error("mask has no pixels of any interested class")]
    DegenerateMask,
    #[error("invalid search config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub parameterization: BiasForm,
    /// `[min, max]` per parameter, in the order of the bias values.
    pub bounds: Vec<[f64; 2]>,
    /// Grid steps per axis in the coarse stages.
    pub coarse_grid: usize,
    /// Simplex iteration cap per refinement chain.
    pub polytope_iters: usize,
    /// Refinement chains: the grid winner plus `restarts − 1` random seeds.
    pub restarts: usize,
    /// Objective spread below which a simplex counts as stalled.
    pub tolerance: f64,
    pub rng_seed: u64,
}

const DEFAULT_ROTATION_BOUND: f64 = 2.0 * std::f64::consts::PI / 180.0;
const DEFAULT_TRANSLATION_BOUND: f64 = 0.3;
/// Simplex diameter (in units of the initial steps) below which refinement stops.
const STEP_TOLERANCE: f64 = 1e-7;
/// Weight of the region-extent gap (pixels) in the unsupervised search.
const TIE_BREAK_WEIGHT: f64 = 1e-6;
/// Initial simplex step as a fraction of each parameter's bound width.
const STEP_FRACTION: f64 = 0.1;

impl Default for SearchConfig {
    fn default() -> Self {
        let r = DEFAULT_ROTATION_BOUND;
        let t = DEFAULT_TRANSLATION_BOUND;
        Self {
            parameterization: BiasForm::Rigid,
            bounds: vec![[-r, r], [-r, r], [-r, r], [-t, t], [-t, t], [-t, t]],
            coarse_grid: 7,
            polytope_iters: 400,
            restarts: 4,
            tolerance: 1e-9,
            rng_seed: 0,
        }
    }
}

impl SearchConfig {
    /// Additive-12 search: ±0.05 on rotation-block entries, ±0.3 m on the
    /// translation column.
    pub fn additive_default() -> Self {
        let bounds = (0..12)
            .map(|k| if k % 4 == 3 { [-0.3, 0.3] } else { [-0.05, 0.05] })
            .collect();
        Self {
            parameterization: BiasForm::Additive,
            bounds,
            coarse_grid: 5,
            polytope_iters: 20000,
            restarts: 1,
            tolerance: 1e-15,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), RecalibError> {
        let n = self.parameterization.len();
        if self.bounds.len() != n {
            return Err(RecalibError::BadConfig(format!(
                "{} bounds given, parameterization needs {n}",
                self.bounds.len()
            )));
        }
        if let Some(i) = self
            .bounds
            .iter()
            .position(|b| !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1]))
        {
            return Err(RecalibError::BadConfig(format!(
                "bound {i} is not a finite [min, max]"
            )));
        }
        if self.coarse_grid == 0 {
            return Err(RecalibError::BadConfig("coarse_grid must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(RecalibError::BadConfig("restarts must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(RecalibError::BadConfig("tolerance must be non-negative".into()));
        }
        Ok(())
    }

    fn bounds_pairs(&self) -> Vec<(f64, f64)> {
        self.bounds.iter().map(|b| (b[0], b[1])).collect()
    }

    fn steps(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|b| STEP_FRACTION * (b[1] - b[0]))
            .collect()
    }

    fn simplex_options(&self, max_iterations: usize) -> SimplexOptions {
        SimplexOptions {
            max_iterations,
            f_tol: self.tolerance,
            x_tol: STEP_TOLERANCE,
            coefficients: match self.parameterization {
                BiasForm::Rigid => Coefficients::Standard,
                BiasForm::Additive => Coefficients::Adaptive,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibResult {
    /// Correction to apply to the input calibration.
    pub bias: BiasSpec,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub evaluations: usize,
    pub wall_time_ms: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || lo == hi {
        return vec![if lo <= 0.0 && 0.0 <= hi {
            0.0
        } else {
            0.5 * (lo + hi)
        }];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Zero vector clamped into the bounds.
fn origin(bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| 0.0f64.clamp(lo, hi)).collect()
}

struct Search<'a, F> {
    cfg: &'a SearchConfig,
    objective: F,
}

struct SearchOutcome {
    x: Vec<f64>,
    f: f64,
    evaluations: usize,
}

impl<F> Search<'_, F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    /// Best cell of a grid over three `axes`, other parameters held at `start`.
    fn coarse_grid(&self, start: &[f64], axes: [usize; 3]) -> (Vec<f64>, f64, usize) {
        let bounds = self.cfg.bounds_pairs();
        let ticks: Vec<Vec<f64>> = axes
            .iter()
            .map(|&i| linspace(bounds[i].0, bounds[i].1, self.cfg.coarse_grid))
            .collect();
        let mut cells = Vec::new();
        for &a in &ticks[0] {
            for &b in &ticks[1] {
                for &c in &ticks[2] {
                    let mut x = start.to_vec();
                    x[axes[0]] = a;
                    x[axes[1]] = b;
                    x[axes[2]] = c;
                    cells.push(x);
                }
            }
        }
        let values: Vec<f64> = cells.par_iter().map(|x| (self.objective)(x)).collect();
        let best = (0..cells.len())
            .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
            .expect("grid is non-empty");
        let evaluations = cells.len();
        (cells.swap_remove(best), values[best], evaluations)
    }

    /// Simplex chains from each seed, in parallel; the lowest value wins,
    /// ties going to the earliest seed.
    fn refine(&self, seeds: &[(Vec<f64>, Option<f64>)], max_iterations: usize) -> SearchOutcome {
        let bounds = self.cfg.bounds_pairs();
        let steps = self.cfg.steps();
        let opts = self.cfg.simplex_options(max_iterations);
        let runs: Vec<SimplexOutcome> = seeds
            .par_iter()
            .map(|(x0, f0)| minimize_with_restarts(|x| (self.objective)(x), x0, *f0, &steps, &bounds, &opts))
            .collect();
        let evaluations = runs.iter().map(|r| r.evaluations).sum();
        let best = (0..runs.len())
            .min_by(|&a, &b| runs[a].f.total_cmp(&runs[b].f).then(a.cmp(&b)))
            .expect("at least one seed");
        SearchOutcome {
            x: runs[best].x.clone(),
            f: runs[best].f,
            evaluations,
        }
    }

    fn random_seeds(&self, count: usize) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(self.cfg.rng_seed);
        (0..count)
            .map(|_| {
                self.cfg
                    .bounds
                    .iter()
                    .map(|b| {
                        if b[0] < b[1] {
                            rng.random_range(b[0]..=b[1])
                        } else {
                            b[0]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Grid stages, then refinement from the grid winners plus random seeds.
    /// Never returns something worse than `start`.
    fn run(&self, start: Vec<f64>, f_start: f64, max_iterations: usize) -> SearchOutcome {
        let form = self.cfg.parameterization;
        let better = |(x, f): (Vec<f64>, f64)| {
            if f < f_start {
                (x, f)
            } else {
                (start.clone(), f_start)
            }
        };
        let (grid_x, grid_f, mut grid_evals) = self.coarse_grid(&start, form.translation_indices());
        let mut seeds = vec![{
            let (x, f) = better((grid_x, grid_f));
            (x, Some(f))
        }];
        if form == BiasForm::Rigid {
            // yaw and lateral shift look alike in the image, so rotations get
            // their own chain
            let (rot_x, rot_f, evals) = self.coarse_grid(&start, [0, 1, 2]);
            grid_evals += evals;
            let (x, f) = better((rot_x, rot_f));
            seeds.push((x, Some(f)));
        }
        seeds.extend(
            self.random_seeds(self.cfg.restarts - 1)
                .into_iter()
                .map(|x| (x, None)),
        );
        let mut out = self.refine(&seeds, max_iterations);
        out.evaluations += grid_evals;
        if out.f > f_start {
            out.x = start;
            out.f = f_start;
        }
        out
    }
}

fn elapsed_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

/// Recovers the bias that best aligns interested points with the mask.
pub fn recalibrate(
    cloud: &LabeledCloud,
    mask: &SegMask,
    calib_in: &CalibrationSet,
    interested: &ClassSet,
    cfg: &SearchConfig,
) -> Result<RecalibResult, RecalibError> {
    let t0 = Instant::now();
    cfg.validate()?;
    let chamfer = MaskChamfer::new(mask, interested);
    if !chamfer.has_any_class() {
        return Err(RecalibError::DegenerateMask);
    }
    let points = InterestedPoints::new(cloud, interested);
    if points.project(calib_in).is_empty() {
        return Err(RecalibError::NoInterestedPoints);
    }
    let mut by_class: BTreeMap<ClassId, Vec<Vector3<f64>>> = BTreeMap::new();
    for (p, &class) in points.positions.iter().zip(&points.classes) {
        by_class.entry(class).or_default().push(*p);
    }
    let extents = MaskExtents::new(mask, interested);
    let groups: Vec<(PackedField, Vec<Vector3<f64>>)> = by_class
        .into_iter()
        .map(|(class, pts)| (PackedField::new(&chamfer, &extents, class), pts))
        .collect();
    let form = cfg.parameterization;
    // the chamfer is flat wherever the projection fits inside the mask; the
    // region-extent gap, weighted far below one pixel, breaks those ties
    let evaluate = |x: &[f64], tie_break: bool| {
        let calib = apply_bias(calib_in, &BiasSpec::from_values(form, x));
        let projector = Projector::new(&calib);
        let mut acc = extents.accumulator();
        let mut total = 0.0;
        for (field, pts) in &groups {
            for p in pts {
                if let Some(px) = projector.project_point(p, 0) {
                    total += field.cost(px.u, px.v, &mut acc);
                }
            }
        }
        if tie_break {
            total + TIE_BREAK_WEIGHT * acc.mismatch()
        } else {
            total
        }
    };
    let objective = |x: &[f64]| evaluate(x, false);
    let searched = |x: &[f64]| evaluate(x, true);
    let bounds = cfg.bounds_pairs();
    let start = origin(&bounds);
    let objective_initial = objective(&vec![0.0; form.len()]);
    if objective_initial == 0.0 {
        return Ok(RecalibResult {
            bias: BiasSpec::zero(form),
            objective_initial,
            objective_final: 0.0,
            evaluations: 1,
            wall_time_ms: elapsed_ms(t0),
        });
    }
    let f_start = searched(&start);
    let search = Search {
        cfg,
        objective: searched,
    };
    let out = search.run(start, f_start, cfg.polytope_iters);
    let f_found = objective(&out.x);
    // a move the chamfer cannot see is not taken
    let (bias, objective_final) = if f_found < objective_initial {
        (BiasSpec::from_values(form, &out.x), f_found)
    } else {
        (BiasSpec::zero(form), objective_initial)
    };
    Ok(RecalibResult {
        bias,
        objective_initial,
        objective_final,
        evaluations: out.evaluations + 3,
        wall_time_ms: elapsed_ms(t0),
    })
}

/// Minimizes the scheduled composite `λ1·MSE + λ2·projected` against a known
/// label calibration. Each schedule phase runs for its duration in simplex
/// iterations, starting from the previous phase's incumbent. Objective values
/// in the result are measured with the final phase's weights.
pub fn supervised_fit(
    cloud: &LabeledCloud,
    calib_in: &CalibrationSet,
    calib_label: &CalibrationSet,
    interested: &ClassSet,
    schedule: &LossSchedule,
    cfg: &SearchConfig,
) -> Result<RecalibResult, RecalibError> {
    let t0 = Instant::now();
    cfg.validate()?;
    schedule
        .validate()
        .map_err(|e| RecalibError::BadConfig(e.to_string()))?;
    let all_points = InterestedPoints::new(cloud, interested);
    let label_proj = all_points.project(calib_label);
    if label_proj.is_empty() {
        return Err(RecalibError::NoInterestedPoints);
    }
    // keep only classes the label projection can score against
    let label_classes: ClassSet = label_proj.classes.keys().copied().collect();
    let points = InterestedPoints::new(cloud, &label_classes);
    if points.project(calib_in).is_empty() {
        return Err(RecalibError::NoInterestedPoints);
    }
    let target = ProjectedLossTarget::new(&label_proj.uv_by_class());
    let form = cfg.parameterization;

    let terms = |x: &[f64]| -> (f64, f64) {
        let bias = BiasSpec::from_values(form, x);
        let BiasSpec::Additive(delta) = bias.to_additive(calib_in) else {
            unreachable!("to_additive returns the additive form")
        };
        let mse = additive_mse(&delta, calib_in, calib_label);
        let proj = points.project(&apply_bias(calib_in, &bias));
        let projected = target.loss_projected(&proj).expect("classes restricted to label");
        (mse, projected)
    };
    let phase_objective = |offset: u64| {
        move |x: &[f64]| {
            let (mse, projected) = terms(x);
            composite_loss(mse, projected, schedule, offset).total
        }
    };

    let bounds = cfg.bounds_pairs();
    let zero = vec![0.0; form.len()];
    let mut incumbent = origin(&bounds);
    let mut evaluations = 0;
    let mut offset = 0u64;
    for (k, phase) in schedule.phases.iter().enumerate() {
        let objective = phase_objective(offset);
        let f_incumbent = objective(&incumbent);
        let f_origin = objective(&origin(&bounds));
        evaluations += 2;
        if f_origin < f_incumbent {
            incumbent = origin(&bounds);
        }
        let f_start = f_origin.min(f_incumbent);
        let search = Search {
            cfg,
            objective: &objective,
        };
        let iterations = phase.duration as usize;
        let out = if k == 0 {
            search.run(incumbent.clone(), f_start, iterations)
        } else {
            let out = search.refine(&[(incumbent.clone(), Some(f_start))], iterations);
            if out.f < f_start {
                out
            } else {
                SearchOutcome {
                    x: incumbent.clone(),
                    f: f_start,
                    evaluations: out.evaluations,
                }
            }
        };
        evaluations += out.evaluations;
        incumbent = out.x;
        offset += phase.duration;
    }

    let last = phase_objective(offset.saturating_sub(1));
    let objective_initial = last(&zero);
    let f_incumbent = last(&incumbent);
    evaluations += 2;
    let (bias, objective_final) = if f_incumbent <= objective_initial {
        (BiasSpec::from_values(form, &incumbent), f_incumbent)
    } else {
        (BiasSpec::zero(form), objective_initial)
    };
    Ok(RecalibResult {
        bias,
        objective_initial,
        objective_final,
        evaluations,
        wall_time_ms: elapsed_ms(t0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::CloudPoint;

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        assert!(SearchConfig::additive_default().validate().is_ok());
        let cfg = SearchConfig {
            restarts: 0,
            ..SearchConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = SearchConfig::default();
        cfg.bounds.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = SearchConfig::default();
        cfg.bounds[0] = [1.0, -1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn linspace_includes_ends() {
        assert_eq!(linspace(-0.3, 0.3, 3), vec![-0.3, 0.0, 0.3]);
        assert_eq!(linspace(-1.0, 1.0, 1), vec![0.0]);
    }

    #[test]
    fn typed_errors() {
        let calib = CalibrationSet::kitti_reference();
        let interested = ClassSet::from([1]);
        let cloud = LabeledCloud {
            points: vec![CloudPoint::new(10.0, 0.0, 0.0, 0.0)],
            labels: vec![1],
        };
        let empty_mask = SegMask::new(100, 100);
        assert_eq!(
            recalibrate(&cloud, &empty_mask, &calib, &interested, &SearchConfig::default()),
            Err(RecalibError::DegenerateMask)
        );
        let mut mask = SegMask::new(100, 100);
        mask.set(3, 3, 1);
        let behind = LabeledCloud {
            points: vec![CloudPoint::new(-10.0, 0.0, 0.0, 0.0)],
            labels: vec![1],
        };
        assert_eq!(
            recalibrate(&behind, &mask, &calib, &interested, &SearchConfig::default()),
            Err(RecalibError::NoInterestedPoints)
        );
    }
}
