//! Finite-difference verification of every analytic gradient in the
//! pipeline.
//!
//! Hard thresholds (contribution floor, early termination, one-hot plane
//! choice) make the loss piecewise constant, so checks run with smooth
//! raster settings and continuous plane weights. Plane logits are checked
//! through a relaxed surrogate `ρ = softmax(ρ')`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::field::WaveConfig;
use crate::pipeline::{Assignment, Pipeline};
use crate::projection::RasterSettings;
use crate::scene::{GaussianScene, ParamGroup};
use crate::ste::softmax;
use crate::synthetic::{orbit_camera, random_scene, SceneRanges};
use crate::target::make_target_with;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub scenes: usize,
    /// Each scene draws `N` uniformly from `1..=max_gaussians`.
    pub max_gaussians: usize,
    pub resolution: usize,
    /// Plane counts to cycle through.
    pub planes: Vec<usize>,
    pub channels: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Negate the analytic gradient of this group, to prove the check bites.
    pub inject_fault: Option<ParamGroup>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            scenes: 20,
            max_gaussians: 50,
            resolution: 64,
            planes: vec![1, 2],
            channels: 3,
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest `|fd − analytic|`, before the floor is applied.
    pub max_abs_err: f64,
    /// Largest analytic magnitude, for scale.
    pub max_grad: f64,
    pub failures: usize,
    /// `(scene, index, finite difference, analytic)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failing_groups(&self) -> Vec<&str> {
        self.groups.iter().filter(|g| g.failures > 0).map(|g| g.group.as_str()).collect()
    }
}

/// Relative error with an absolute floor: differences below the floor count
/// as exact.
pub fn relative_error(fd: f64, analytic: f64, abs_floor: f64) -> f64 {
    let diff = (fd - analytic).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / fd.abs().max(analytic.abs())
    }
}

struct Case {
    scene: GaussianScene,
    logits: Vec<f64>,
    pipeline: Pipeline,
    cam: crate::camera::CameraView,
    target: crate::target::FocalStackTarget,
}

impl Case {
    fn rho(&self, logits: &[f64]) -> Vec<f64> {
        let l = self.scene.planes();
        logits.chunks_exact(l).flat_map(|row| softmax(row, 1.0)).collect()
    }

    fn loss(&self, scene: &GaussianScene, logits: &[f64]) -> f64 {
        self.pipeline
            .loss(scene, &self.cam, &self.target, &Assignment::Given(self.rho(logits)))
            .map(|l| l.total)
            .unwrap_or(f64::NAN)
    }
}

fn build_case(rng: &mut ChaCha8Rng, n: usize, planes: usize, opts: &GradcheckOptions, view: usize) -> Result<Case> {
    let mut cfg = WaveConfig::new(planes, opts.resolution, opts.resolution);
    cfg.wavelengths.truncate(opts.channels.max(1));
    while cfg.wavelengths.len() < opts.channels {
        cfg.wavelengths.push(500e-9 + 20e-9 * cfg.wavelengths.len() as f64);
    }
    let ranges = SceneRanges { scale: (0.05, 0.2), amplitude: (0.1, 0.5), ..SceneRanges::default() };
    let scene = random_scene(rng, n, opts.channels, planes, &ranges);
    let target_scene = random_scene(rng, n.max(4), opts.channels, planes, &SceneRanges { amplitude: (0.05, 0.3), ..ranges });
    let cam = orbit_camera(&cfg, view)?;
    let mut pipeline = Pipeline::new(&cfg)?;
    let target = make_target_with(&pipeline, &target_scene, &cam)?;
    pipeline.raster = RasterSettings::smooth();
    let logits: Vec<f64> = (0..n * planes).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(Case { scene, logits, pipeline, cam, target })
}

/// Moving a centre by `h` shifts its view depth by at most `h`. Near a depth
/// tie that would reorder the compositing and the loss jumps, so the step is
/// shrunk to stay inside the current ordering.
fn order_safe_step(depths: &[f64], k: usize, h: f64) -> f64 {
    let gap = depths
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, z)| (z - depths[k]).abs())
        .fold(f64::INFINITY, f64::min);
    if gap < 2.0 * h {
        (gap / 4.0).max(1e-9)
    } else {
        h
    }
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut groups: Vec<GroupReport> = ParamGroup::ALL
        .iter()
        .map(|g| GroupReport { group: g.name().to_string(), checked: 0, max_rel_err: 0.0, max_abs_err: 0.0, max_grad: 0.0, failures: 0, worst: None })
        .collect();
    let mut warnings = Vec::new();
    if opts.max_gaussians == 0 || opts.scenes == 0 {
        warnings.push("no primitives to check; the result is vacuous".to_string());
    }
    let h = opts.step;
    for s in 0..opts.scenes {
        if opts.max_gaussians == 0 {
            break;
        }
        let n = rng.random_range(1..=opts.max_gaussians);
        let planes = opts.planes[s % opts.planes.len()];
        let case = build_case(&mut rng, n, planes, opts, s)?;
        let rho = case.rho(&case.logits);
        let ev = case.pipeline.evaluate(&case.scene, &case.cam, &case.target, &Assignment::Given(rho.clone()))?;
        // ρ = softmax(ρ') row-wise: ∂L/∂ρ'_i = ρ_i (g_i − Σ_j ρ_j g_j)
        let mut logit_grad = vec![0.0; rho.len()];
        for ((r, g), out) in rho.chunks_exact(planes).zip(ev.grad_rho.chunks_exact(planes)).zip(logit_grad.chunks_exact_mut(planes)) {
            let mean: f64 = r.iter().zip(g).map(|(a, b)| a * b).sum();
            for i in 0..planes {
                out[i] = r[i] * (g[i] - mean);
            }
        }

        let depths: Vec<f64> = (0..n).map(|k| case.cam.to_camera(&case.scene.position(k))[2]).collect();
        for k in 0..n {
            let step = order_safe_step(&depths, k, h);
            if step < h {
                warnings.push(format!("scene {s}: primitive {k} is {:.1e} from a depth tie, position step reduced to {step:.1e}", step * 4.0));
            }
        }
        for (gi, group) in ParamGroup::ALL.iter().enumerate() {
            let mut analytic: Vec<f64> = if *group == ParamGroup::PlaneLogits {
                logit_grad.clone()
            } else {
                ev.grads.params.group(*group).to_vec()
            };
            if opts.inject_fault == Some(*group) {
                analytic.iter_mut().for_each(|v| *v = -*v);
            }
            let fds: Vec<f64> = (0..analytic.len())
                .into_par_iter()
                .map(|i| {
                    if *group == ParamGroup::PlaneLogits {
                        let mut p = case.logits.clone();
                        p[i] += h;
                        let mut m = case.logits.clone();
                        m[i] -= h;
                        (case.loss(&case.scene, &p) - case.loss(&case.scene, &m)) / (2.0 * h)
                    } else {
                        let h = if *group == ParamGroup::Positions { order_safe_step(&depths, i / 3, h) } else { h };
                        let mut p = case.scene.clone();
                        p.params.group_mut(*group)[i] += h;
                        let mut m = case.scene.clone();
                        m.params.group_mut(*group)[i] -= h;
                        (case.loss(&p, &case.logits) - case.loss(&m, &case.logits)) / (2.0 * h)
                    }
                })
                .collect();
            let report = &mut groups[gi];
            for (i, (fd, an)) in fds.iter().zip(&analytic).enumerate() {
                let err = relative_error(*fd, *an, opts.abs_floor);
                report.checked += 1;
                report.max_abs_err = report.max_abs_err.max((fd - an).abs());
                report.max_grad = report.max_grad.max(an.abs());
                if !(err < opts.rel_tol) {
                    report.failures += 1;
                }
                if err > report.max_rel_err || err.is_nan() {
                    report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                    report.worst = Some((s, i, *fd, *an));
                }
            }
        }
    }
    let passed = groups.iter().all(|g| g.failures == 0);
    Ok(GradcheckReport { groups, warnings, passed })
}
