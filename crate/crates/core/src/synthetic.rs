//! Random scenes and cameras for tests, benchmarks and oracle targets.
//!
//! Projection is invariant to a uniform scaling of the world, so synthetic
//! scenes live in a unit-sized box three units in front of the origin.
//! That keeps finite-difference steps meaningful in f64.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::CameraView;
use crate::error::Result;
use crate::field::WaveConfig;
use crate::scene::{GaussianScene, InitOptions};

pub const SCENE_CENTER: [f64; 3] = [0.0, 0.0, 3.0];

#[derive(Debug, Clone)]
pub struct SceneRanges {
    /// Half-extent of the box in x/y, and in z.
    pub half_xy: f64,
    pub half_z: f64,
    pub scale: (f64, f64),
    pub amplitude: (f64, f64),
    pub opacity: (f64, f64),
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self { half_xy: 0.9, half_z: 0.5, scale: (0.03, 0.15), amplitude: (0.2, 1.0), opacity: (0.3, 0.9) }
    }
}

pub fn random_unit_quaternion<R: Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return q.map(|v| v / norm);
        }
    }
}

pub fn random_scene<R: Rng>(rng: &mut R, n: usize, channels: usize, planes: usize, ranges: &SceneRanges) -> GaussianScene {
    let mut scene = GaussianScene::empty(channels, planes);
    let log_uniform = |rng: &mut R, (lo, hi): (f64, f64)| (rng.random_range(lo.ln()..hi.ln()) as f64).exp();
    for _ in 0..n {
        let pos = [
            SCENE_CENTER[0] + rng.random_range(-ranges.half_xy..ranges.half_xy),
            SCENE_CENTER[1] + rng.random_range(-ranges.half_xy..ranges.half_xy),
            SCENE_CENTER[2] + rng.random_range(-ranges.half_z..ranges.half_z),
        ];
        let q = random_unit_quaternion(rng);
        let s = [0; 3].map(|_| log_uniform(rng, ranges.scale));
        let amps: Vec<f64> = (0..channels).map(|_| rng.random_range(ranges.amplitude.0..ranges.amplitude.1)).collect();
        let phases: Vec<f64> = (0..channels).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let logits: Vec<f64> = (0..planes).map(|_| StandardNormal.sample(rng)).collect();
        let opacity = rng.random_range(ranges.opacity.0..ranges.opacity.1);
        scene.push(pos, q, s, &amps, opacity, &phases, &logits).expect("ranges produce valid primitives");
    }
    scene
}

/// Focal length at which the synthetic box roughly fills the frame.
pub fn default_focal(cfg: &WaveConfig) -> f64 {
    cfg.width().min(cfg.height()) as f64 * 1.25
}

/// View `index` of a small orbit around the scene center.
pub fn orbit_camera(cfg: &WaveConfig, index: usize) -> Result<CameraView> {
    let yaw = [0.0, 0.15, -0.15, 0.3, -0.3][index % 5];
    let pitch = [0.0, 0.05, -0.05, 0.1, -0.1][(index / 5) % 5];
    CameraView::orbit(
        SCENE_CENTER,
        SCENE_CENTER[2],
        yaw,
        pitch,
        default_focal(cfg),
        cfg.width(),
        cfg.height(),
        0.2 * cfg.propagation_distance,
    )
}

/// Random seed points inside the synthetic box, for initialization.
pub fn random_points<R: Rng>(rng: &mut R, n: usize, ranges: &SceneRanges) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                SCENE_CENTER[0] + rng.random_range(-ranges.half_xy..ranges.half_xy),
                SCENE_CENTER[1] + rng.random_range(-ranges.half_xy..ranges.half_xy),
                SCENE_CENTER[2] + rng.random_range(-ranges.half_z..ranges.half_z),
            ]
        })
        .collect()
}

pub fn init_options(cfg: &WaveConfig) -> InitOptions {
    InitOptions::new(cfg.channels(), cfg.num_planes, 2.0 * SceneRanges::default().half_z)
}
