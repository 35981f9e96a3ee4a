//! Parameter histograms and plane utilization of a scene.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::scene::{sigmoid, GaussianScene};
use crate::ste::argmax;

pub const BINS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Fixed `[lo, hi)` binning; values outside are clamped into the end bins.
    pub fn with_range(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64) -> Self {
        let mut counts = vec![0u64; BINS];
        let width = (hi - lo) / BINS as f64;
        for v in values {
            let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            counts[(b.max(0.0) as usize).min(BINS - 1)] += 1;
        }
        Self { lo, hi, counts }
    }

    /// Binning over the data's own range (`[0, 1)` when empty).
    pub fn auto(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::with_range([], 0.0, 1.0);
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hi = if hi > lo { hi + (hi - lo) * 1e-9 } else { lo + 1.0 };
        Self::with_range(values.iter().copied(), lo, hi)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// p-value of Pearson's χ² test against a uniform distribution.
    pub fn uniformity_p_value(&self) -> Option<f64> {
        let n = self.total() as f64;
        if n == 0.0 {
            return None;
        }
        let e = n / BINS as f64;
        let chi2: f64 = self.counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
        let dist = ChiSquared::new((BINS - 1) as f64).ok()?;
        Some(1.0 - dist.cdf(chi2))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneStats {
    pub primitives: usize,
    pub planes: usize,
    pub channels: usize,
    /// Wrapped phases over `[0, 2π)`, all channels.
    pub phase: Histogram,
    pub amplitude: Histogram,
    /// Base opacity after the sigmoid, over `[0, 1)`.
    pub opacity: Histogram,
    /// Per-axis scales.
    pub scale: Histogram,
    /// World-space z of the centres.
    pub depth: Histogram,
    /// Primitives whose hard assignment selects each plane.
    pub plane_counts: Vec<u64>,
    pub phase_uniformity_p: Option<f64>,
    pub intrinsic_digest: String,
}

pub fn scene_stats(scene: &GaussianScene) -> SceneStats {
    let tau = std::f64::consts::TAU;
    let phase = Histogram::with_range(scene.params.phases.iter().map(|p| p.rem_euclid(tau)), 0.0, tau);
    let scales: Vec<f64> = scene.params.log_scales.iter().map(|s| s.exp()).collect();
    let depths: Vec<f64> = scene.params.positions.chunks_exact(3).map(|p| p[2]).collect();
    let mut plane_counts = vec![0u64; scene.planes()];
    for row in scene.params.plane_logits.chunks_exact(scene.planes().max(1)) {
        if !row.is_empty() {
            plane_counts[argmax(row)] += 1;
        }
    }
    SceneStats {
        primitives: scene.len(),
        planes: scene.planes(),
        channels: scene.channels(),
        phase_uniformity_p: phase.uniformity_p_value(),
        phase,
        amplitude: Histogram::auto(&scene.params.amplitudes),
        opacity: Histogram::with_range(scene.params.opacity_logits.iter().map(|l| sigmoid(*l)), 0.0, 1.0),
        scale: Histogram::auto(&scales),
        depth: Histogram::auto(&depths),
        plane_counts,
        intrinsic_digest: scene.intrinsic_digest(),
    }
}
