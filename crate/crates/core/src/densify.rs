//! Adaptive density control: clone or split primitives with large
//! screen-space gradients, prune faint or oversized ones.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::raster::RasterAux;
use crate::scene::{rotation_matrix, GaussianScene, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    /// Steps between densification passes; 0 disables it.
    pub interval: u64,
    /// No densification before this step.
    pub start_step: u64,
    /// No densification from this step on.
    pub stop_step: u64,
    /// Mean screen-space positional gradient (NDC units) above which a
    /// primitive is cloned or split.
    pub grad_threshold: f64,
    /// Split instead of clone when the largest scale exceeds this fraction
    /// of the scene extent.
    pub scale_fraction: f64,
    /// Prune when the base opacity drops below this.
    pub min_opacity: f64,
    /// Prune when the screen radius ever exceeded this many pixels; no
    /// limit when absent.
    pub max_screen_radius: Option<f64>,
    pub split_factor: f64,
    /// Std-dev of the noise added to inherited phases and plane logits.
    pub perturbation: f64,
    pub max_primitives: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 300,
            start_step: 300,
            stop_step: u64::MAX,
            grad_threshold: 2e-4,
            scale_fraction: 0.01,
            min_opacity: 0.005,
            max_screen_radius: None,
            split_factor: 1.6,
            perturbation: 0.01,
            max_primitives: 500_000,
        }
    }
}

impl DensifyConfig {
    pub fn due(&self, step: u64) -> bool {
        self.interval > 0 && step >= self.start_step && step < self.stop_step && step % self.interval == 0
    }
}

/// Running sums of screen-space gradient norms between passes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradAccum {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
    pub max_radius: Vec<f64>,
}

impl GradAccum {
    pub fn new(n: usize) -> Self {
        Self { sum: vec![0.0; n], count: vec![0; n], max_radius: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Adds one view's pixel-space gradient norms, converted to NDC so the
    /// threshold does not depend on resolution. Only primitives that were
    /// projected count.
    pub fn add(&mut self, screen_grad: &[f64], aux: &RasterAux) {
        let to_ndc = 0.5 * aux.width.max(aux.height) as f64;
        for (n, p) in aux.projected.iter().enumerate() {
            if let Some(p) = p {
                self.sum[n] += screen_grad[n] * to_ndc;
                self.count[n] += 1;
                self.max_radius[n] = self.max_radius[n].max(p.radius);
            }
        }
    }

    pub fn mean(&self, n: usize) -> f64 {
        if self.count[n] == 0 {
            0.0
        } else {
            self.sum[n] / self.count[n] as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub scene: GaussianScene,
    /// For each new row, the old row whose optimizer state it keeps.
    pub mapping: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Largest distance of any centre from the centroid, times two.
pub fn scene_extent(scene: &GaussianScene) -> f64 {
    let n = scene.len();
    if n == 0 {
        return 0.0;
    }
    let mut c = [0.0; 3];
    for p in scene.params.positions.chunks_exact(3) {
        (0..3).for_each(|k| c[k] += p[k] / n as f64);
    }
    let r = scene
        .params
        .positions
        .chunks_exact(3)
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    2.0 * r
}

fn perturb(scene: &mut GaussianScene, row: usize, sigma: f64, rng: &mut impl Rng) {
    if sigma == 0.0 {
        return;
    }
    for g in [ParamGroup::Phases, ParamGroup::PlaneLogits] {
        let s = scene.stride(g);
        for v in &mut scene.params.group_mut(g)[row * s..(row + 1) * s] {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
}

/// One densification pass. `accum` must cover every row of `scene`; an
/// empty accumulator only prunes.
pub fn densify_and_prune(
    scene: &GaussianScene,
    accum: &GradAccum,
    cfg: &DensifyConfig,
    extent: f64,
    rng: &mut impl Rng,
) -> DensifyOutcome {
    let n = scene.len();
    let has_grads = accum.len() == n;
    let split_scale = cfg.scale_fraction * extent;
    let mut out = GaussianScene::empty(scene.channels(), scene.planes());
    let mut mapping = Vec::with_capacity(n);
    let mut clones = Vec::new();
    let mut splits = Vec::new();
    let mut pruned = 0;
    let mut budget = cfg.max_primitives.saturating_sub(n);
    for i in 0..n {
        let too_big = has_grads && cfg.max_screen_radius.is_some_and(|r| accum.max_radius[i] > r);
        if scene.opacity(i) < cfg.min_opacity || too_big {
            pruned += 1;
            continue;
        }
        if has_grads && accum.mean(i) > cfg.grad_threshold && budget > 0 {
            budget -= 1;
            if scene.scales(i).iter().cloned().fold(0.0, f64::max) > split_scale {
                splits.push(i);
                continue;
            }
            clones.push(i);
        }
        out.push_row_from(scene, i);
        mapping.push(Some(i));
    }
    for &i in &clones {
        out.push_row_from(scene, i);
        perturb(&mut out, mapping.len(), cfg.perturbation, rng);
        mapping.push(None);
    }
    for &i in &splits {
        let r = rotation_matrix(scene.rotation(i));
        let s = scene.scales(i);
        let mu = scene.position(i);
        for _ in 0..2 {
            let row = mapping.len();
            out.push_row_from(scene, i);
            let e: [f64; 3] = std::array::from_fn(|k| { let z: f64 = StandardNormal.sample(rng); s[k] * z });
            let offset = r * nalgebra::Vector3::from(e);
            for k in 0..3 {
                out.params.positions[row * 3 + k] = mu[k] + offset[k];
                out.params.log_scales[row * 3 + k] = (s[k] / cfg.split_factor).ln();
            }
            perturb(&mut out, row, cfg.perturbation, rng);
            mapping.push(None);
        }
    }
    DensifyOutcome { scene: out, mapping, cloned: clones.len(), split: splits.len(), pruned }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene_of(scales: &[f64], opacities: &[f64]) -> GaussianScene {
        let mut s = GaussianScene::empty(3, 2);
        for (i, (sc, op)) in scales.iter().zip(opacities).enumerate() {
            s.push([i as f64, 0.0, 3.0], [1.0, 0.0, 0.0, 0.0], [*sc; 3], &[0.5; 3], *op, &[0.1, 0.2, 0.3], &[0.0, 1.0]).unwrap();
        }
        s
    }

    fn accum(means: &[f64]) -> GradAccum {
        GradAccum { sum: means.to_vec(), count: vec![1; means.len()], max_radius: vec![1.0; means.len()] }
    }

    #[test]
    fn empty_accumulator_only_prunes() {
        let s = scene_of(&[0.1, 0.1, 0.1], &[0.5, 0.001, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = densify_and_prune(&s, &GradAccum::default(), &DensifyConfig::default(), 10.0, &mut rng);
        assert_eq!(out.scene.len(), 2);
        assert_eq!(out.pruned, 1);
        assert_eq!(out.mapping, vec![Some(0), Some(2)]);
        assert_eq!(out.scene.position(1), s.position(2));
    }

    #[test]
    fn faint_primitive_is_removed() {
        // sigmoid(logit) = 0.001 < 0.005
        let s = scene_of(&[0.1], &[0.001]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = densify_and_prune(&s, &accum(&[0.0]), &DensifyConfig::default(), 10.0, &mut rng);
        assert!(out.scene.is_empty());
        let kept = densify_and_prune(&scene_of(&[0.1], &[0.006]), &accum(&[0.0]), &DensifyConfig::default(), 10.0, &mut rng);
        assert_eq!(kept.scene.len(), 1);
    }

    #[test]
    fn large_primitive_splits_into_two() {
        let s = scene_of(&[0.5], &[0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = densify_and_prune(&s, &accum(&[1e-3]), &DensifyConfig::default(), 10.0, &mut rng);
        assert_eq!(out.scene.len(), 2);
        assert_eq!((out.split, out.cloned), (1, 0));
        assert_eq!(out.mapping, vec![None, None]);
        for k in 0..2 {
            for v in out.scene.scales(k) {
                assert!((v - 0.5 / 1.6).abs() < 1e-12);
            }
            assert_ne!(out.scene.position(k), s.position(0));
            assert!((out.scene.position(k) - s.position(0)).norm() < 5.0 * 0.5);
            assert!((out.scene.phases(k)[0] - 0.1).abs() < 0.1);
            assert_eq!(out.scene.amplitudes(k), s.amplitudes(0));
        }
    }

    #[test]
    fn small_primitive_clones() {
        let s = scene_of(&[0.01, 0.01], &[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = densify_and_prune(&s, &accum(&[1e-3, 1e-5]), &DensifyConfig::default(), 10.0, &mut rng);
        assert_eq!(out.scene.len(), 3);
        assert_eq!(out.mapping, vec![Some(0), Some(1), None]);
        assert_eq!(out.scene.position(2), s.position(0));
        assert_ne!(out.scene.phases(2), s.phases(0));
    }

    #[test]
    fn oversized_on_screen_is_pruned() {
        let s = scene_of(&[0.1], &[0.5]);
        let mut a = accum(&[0.0]);
        a.max_radius[0] = 500.0;
        let cfg = DensifyConfig { max_screen_radius: Some(128.0), ..DensifyConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(densify_and_prune(&s, &a, &cfg, 10.0, &mut rng).scene.is_empty());
    }

    #[test]
    fn schedule() {
        let cfg = DensifyConfig { stop_step: 1000, ..DensifyConfig::default() };
        assert!(!cfg.due(0));
        assert!(cfg.due(300) && cfg.due(900));
        assert!(!cfg.due(301) && !cfg.due(1200));
    }
}
