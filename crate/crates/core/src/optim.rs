//! Adan (with a plain Adam fallback), per-group learning rates and the
//! cosine schedule on means and plane logits.
//!
//! Moment buffers are [`ParamArrays`] shaped like the scene, so they can be
//! gathered by the same index map densification uses for rows.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GaussianScene, ParamArrays, ParamGroup, SceneGradients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adan,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub amplitude: f64,
    pub opacity: f64,
    pub phase: f64,
    pub plane_logit: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position: 0.01, rotation: 0.001, scale: 0.005, amplitude: 0.0025, opacity: 0.025, phase: 0.0025, plane_logit: 0.01 }
    }
}

impl LearningRates {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Positions => self.position,
            ParamGroup::Rotations => self.rotation,
            ParamGroup::Scales => self.scale,
            ParamGroup::Amplitudes => self.amplitude,
            ParamGroup::Opacities => self.opacity,
            ParamGroup::Phases => self.phase,
            ParamGroup::PlaneLogits => self.plane_logit,
        }
    }

    pub fn uniform(lr: f64) -> Self {
        Self { position: lr, rotation: lr, scale: lr, amplitude: lr, opacity: lr, phase: lr, plane_logit: lr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: LearningRates,
    /// First moment decay.
    pub beta1: f64,
    /// Second (squared) moment decay.
    pub beta2: f64,
    /// Adan gradient-difference moment decay.
    pub beta3: f64,
    pub eps: f64,
    /// Length of the cosine schedule.
    pub total_steps: u64,
    pub lr_floor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adan,
            lr: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.99,
            beta3: 0.99,
            eps: 1e-8,
            total_steps: 20_000,
            lr_floor: 1e-5,
        }
    }
}

impl OptimConfig {
    /// Whether `g` follows the cosine schedule.
    pub fn annealed(g: ParamGroup) -> bool {
        matches!(g, ParamGroup::Positions | ParamGroup::PlaneLogits)
    }

    /// Learning rate of `g` at step `t` (0-based).
    pub fn lr_at(&self, g: ParamGroup, t: u64) -> f64 {
        let base = self.lr.get(g);
        if !Self::annealed(g) || self.total_steps == 0 {
            return base;
        }
        let floor = self.lr_floor.min(base);
        let frac = (t.min(self.total_steps) as f64) / self.total_steps as f64;
        floor + (base - floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    pub step: u64,
    /// Steps rejected for non-finite gradients.
    pub skipped: u64,
    pub m: ParamArrays,
    pub v: ParamArrays,
    /// Adan only: moment of gradient differences.
    pub d: ParamArrays,
    pub prev_grad: ParamArrays,
    channels: usize,
    planes: usize,
}

const MOMENTS_MAGIC: &[u8; 10] = b"HOLOOPTIM1";

impl OptimState {
    pub fn new(config: OptimConfig, scene: &GaussianScene) -> Self {
        let (n, c, l) = (scene.len(), scene.channels(), scene.planes());
        Self {
            config,
            step: 0,
            skipped: 0,
            m: ParamArrays::zeros(n, c, l),
            v: ParamArrays::zeros(n, c, l),
            d: ParamArrays::zeros(n, c, l),
            prev_grad: ParamArrays::zeros(n, c, l),
            channels: c,
            planes: l,
        }
    }

    pub fn len(&self) -> usize {
        self.m.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One update. Returns `false` (and leaves the scene alone) when the
    /// gradient is not finite.
    pub fn step(&mut self, scene: &mut GaussianScene, grads: &SceneGradients) -> Result<bool> {
        if grads.len() != scene.len() || scene.len() != self.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} rows, scene {}, gradients {}",
                self.len(),
                scene.len(),
                grads.len()
            )));
        }
        if !grads.params.is_finite() {
            self.skipped += 1;
            log::warn!("non-finite gradient at step {}, update skipped ({} so far)", self.step, self.skipped);
            return Ok(false);
        }
        let cfg = self.config;
        let t = self.step;
        let k = (t + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(k);
        let bc2 = 1.0 - cfg.beta2.powi(k);
        let bc3 = 1.0 - cfg.beta3.powi(k);
        for g in ParamGroup::ALL {
            let lr = cfg.lr_at(g, t);
            let p = scene.params.group_mut(g);
            let grad = grads.params.group(g);
            let m = self.m.group_mut(g);
            let v = self.v.group_mut(g);
            match cfg.kind {
                OptimizerKind::Adam => {
                    for i in 0..p.len() {
                        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                        p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
                    }
                }
                OptimizerKind::Adan => {
                    let d = self.d.group_mut(g);
                    let prev = self.prev_grad.group_mut(g);
                    for i in 0..p.len() {
                        let diff = if t == 0 { 0.0 } else { grad[i] - prev[i] };
                        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                        d[i] = cfg.beta3 * d[i] + (1.0 - cfg.beta3) * diff;
                        let u = grad[i] + cfg.beta3 * diff;
                        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * u * u;
                        let denom = (v[i] / bc2).sqrt() + cfg.eps;
                        p[i] -= lr * (m[i] / bc1 + cfg.beta3 * d[i] / bc3) / denom;
                        prev[i] = grad[i];
                    }
                }
            }
        }
        self.step += 1;
        scene.normalize_rotations();
        scene.params.amplitudes.iter_mut().for_each(|a| *a = a.max(0.0));
        Ok(true)
    }

    /// Rebuilds the buffers after rows were added or removed. `mapping[k]`
    /// names the old row that new row `k` inherits from; `None` starts fresh.
    pub fn remap(&mut self, mapping: &[Option<usize>]) {
        let (c, l) = (self.channels, self.planes);
        let gather = |src: &ParamArrays| {
            let mut out = ParamArrays::zeros(mapping.len(), c, l);
            for g in ParamGroup::ALL {
                let s = ParamArrays::stride(g, c, l);
                let from = src.group(g);
                let to = out.group_mut(g);
                for (k, old) in mapping.iter().enumerate() {
                    if let Some(o) = old {
                        to[k * s..(k + 1) * s].copy_from_slice(&from[o * s..(o + 1) * s]);
                    }
                }
            }
            out
        };
        self.m = gather(&self.m);
        self.v = gather(&self.v);
        self.d = gather(&self.d);
        self.prev_grad = gather(&self.prev_grad);
    }

    /// Binary dump of the moment buffers: magic, a JSON header, then the
    /// four buffers as f64 little-endian in group order.
    pub fn write_moments<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "N": self.len(), "C": self.channels, "L": self.planes,
            "step": self.step, "skipped": self.skipped, "config": self.config,
        });
        let json = serde_json::to_vec(&header)?;
        w.write_all(MOMENTS_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for arr in [&self.m, &self.v, &self.d, &self.prev_grad] {
            for g in ParamGroup::ALL {
                arr.group(g).iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_moments<R: Read>(mut r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            #[serde(rename = "N")]
            n: usize,
            #[serde(rename = "C")]
            c: usize,
            #[serde(rename = "L")]
            l: usize,
            step: u64,
            skipped: u64,
            config: OptimConfig,
        }
        let mut magic = [0u8; 10];
        r.read_exact(&mut magic)?;
        if &magic != MOMENTS_MAGIC {
            return Err(Error::Format("bad optimizer moments magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        let mut read = || -> Result<ParamArrays> {
            let mut out = ParamArrays::zeros(h.n, h.c, h.l);
            for g in ParamGroup::ALL {
                let dst = out.group_mut(g);
                let mut bytes = vec![0u8; dst.len() * 8];
                r.read_exact(&mut bytes)?;
                for (d, b) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
                    *d = f64::from_le_bytes(b.try_into().unwrap());
                }
            }
            Ok(out)
        };
        let (m, v, d, prev_grad) = (read()?, read()?, read()?, read()?);
        Ok(Self { config: h.config, step: h.step, skipped: h.skipped, m, v, d, prev_grad, channels: h.c, planes: h.l })
    }
}
