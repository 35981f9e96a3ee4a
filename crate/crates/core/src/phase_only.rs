//! Conversion of a complex hologram into a unit-amplitude one by matching
//! back-propagated fields on every depth plane.
//!
//! The SSIM term compares intensities `|U|²`, since SSIM is defined on real
//! images.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, WaveConfig};
use crate::propagation::Propagator;
use crate::ssim::ssim_with_grad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseOnlyConfig {
    pub iters: usize,
    pub lr: f64,
    pub ssim_weight: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Undo a step that raised the loss and halve the step size.
    pub backtracking: bool,
}

impl Default for PhaseOnlyConfig {
    fn default() -> Self {
        Self { iters: 1000, lr: 0.02, ssim_weight: 0.005, beta1: 0.9, beta2: 0.99, eps: 1e-8, backtracking: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOnlyHologram {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixel_pitch: f64,
    /// Planar `C x H x W` phases in radians, unwrapped.
    pub phase: Vec<f64>,
}

impl PhaseOnlyHologram {
    pub fn from_phase_of(p: &ComplexField) -> Self {
        Self {
            width: p.width(),
            height: p.height(),
            channels: p.channels(),
            pixel_pitch: p.pixel_pitch,
            phase: p.data().iter().map(|z| z.arg()).collect(),
        }
    }

    /// `e^{jθ}` as a field; every sample has modulus 1.
    pub fn field(&self) -> ComplexField {
        let data = self.phase.iter().map(|t| Complex64::new(t.cos(), t.sin())).collect();
        ComplexField::from_vec(self.width, self.height, self.channels, self.pixel_pitch, data)
            .expect("phase array matches its own shape")
    }

    /// Phases wrapped into `[0, 2π)`.
    pub fn wrapped(&self) -> Vec<f64> {
        self.phase.iter().map(|t| t.rem_euclid(std::f64::consts::TAU)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PhaseOnlyResult {
    pub hologram: PhaseOnlyHologram,
    /// `trace[0]` is the loss at `θ = arg P`, then one entry per iteration.
    pub trace: Vec<f64>,
}

/// Propagated reference fields for one complex hologram.
pub struct PhaseObjective<'a> {
    prop: &'a Propagator,
    reference: Vec<ComplexField>,
    ref_intensity: Vec<Vec<f64>>,
    ssim_weight: f64,
}

impl<'a> PhaseObjective<'a> {
    pub fn new(prop: &'a Propagator, hologram: &ComplexField, ssim_weight: f64) -> Result<Self> {
        if prop.plane_positions().is_empty() {
            return Err(Error::InvalidArgument("phase-only conversion needs at least one plane".into()));
        }
        if !hologram.is_finite() {
            return Err(Error::NonFinite("hologram"));
        }
        let reference = prop.inverse_propagate(hologram)?;
        let ref_intensity = reference.iter().map(|u| u.data().iter().map(|z| z.norm_sqr()).collect()).collect();
        Ok(Self { prop, reference, ref_intensity, ssim_weight })
    }

    /// `L_φ(θ)` and, if asked, `∂L_φ/∂θ`.
    pub fn eval(&self, h: &PhaseOnlyHologram, want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let planes = self.reference.len() as f64;
        let v_planes = self.prop.inverse_propagate(&h.field())?;
        let (w, ht, c) = (h.width, h.height, h.channels);
        let np = w * ht;
        let n = (np * c) as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(v_planes.len());
        for ((v, u), ui) in v_planes.iter().zip(&self.reference).zip(&self.ref_intensity) {
            let mut g = v.clone();
            let mut sq = 0.0;
            for (gz, (a, b)) in g.data_mut().iter_mut().zip(v.data().iter().zip(u.data())) {
                let d = a - b;
                sq += d.norm_sqr();
                *gz = 2.0 * d / (n * planes);
            }
            loss += sq / (n * planes);
            let vi: Vec<f64> = v.data().iter().map(|z| z.norm_sqr()).collect();
            let scale = self.ssim_weight / (planes * c as f64);
            for ch in 0..c {
                let r = ch * np..(ch + 1) * np;
                let (s, sg) = ssim_with_grad(&vi[r.clone()], &ui[r.clone()], w, ht, want_grad);
                loss += scale * (1.0 - s);
                if want_grad {
                    let gd = &mut g.data_mut()[r.clone()];
                    for ((gz, z), gi) in gd.iter_mut().zip(&v.data()[r]).zip(sg) {
                        // ∂|z|²/∂(re, im) = 2 (re, im)
                        *gz -= 2.0 * scale * gi * z;
                    }
                }
            }
            grads.push(g);
        }
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        // adjoint of back-propagation to every plane is forward recording
        let gp = self.prop.forward_record(&grads)?;
        let grad = h
            .phase
            .iter()
            .zip(gp.data())
            .map(|(t, g)| -g.re * t.sin() + g.im * t.cos())
            .collect();
        Ok((loss, grad))
    }
}

/// Optimizes `θ` from `arg P` with Adam and optional backtracking.
pub fn convert_phase_only(hologram: &ComplexField, cfg: &WaveConfig, opts: &PhaseOnlyConfig) -> Result<PhaseOnlyResult> {
    let prop = Propagator::new(cfg)?;
    hologram.check_matches(cfg)?;
    let obj = PhaseObjective::new(&prop, hologram, opts.ssim_weight)?;
    let mut h = PhaseOnlyHologram::from_phase_of(hologram);
    let (mut loss, mut grad) = obj.eval(&h, true)?;
    let mut trace = vec![loss];
    let mut m = vec![0.0; h.phase.len()];
    let mut v = vec![0.0; h.phase.len()];
    let mut lr = opts.lr;
    for t in 1..=opts.iters {
        let k = t as i32;
        let (bc1, bc2) = (1.0 - opts.beta1.powi(k), 1.0 - opts.beta2.powi(k));
        let prev = h.phase.clone();
        for i in 0..h.phase.len() {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grad[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
            h.phase[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + opts.eps);
        }
        let (new_loss, new_grad) = obj.eval(&h, true)?;
        if opts.backtracking && new_loss > loss {
            h.phase = prev;
            lr *= 0.5;
        } else {
            loss = new_loss;
            grad = new_grad;
        }
        trace.push(loss);
    }
    Ok(PhaseOnlyResult { hologram: h, trace })
}

/// Central finite differences of `L_φ` at the given phase indices.
pub fn phase_gradient_oracle(
    hologram: &ComplexField,
    theta: &PhaseOnlyHologram,
    cfg: &WaveConfig,
    indices: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    if cfg.width() * cfg.height() > 64 * 64 {
        return Err(Error::TooLarge("the phase gradient oracle is limited to 64 x 64 grids".into()));
    }
    let prop = Propagator::new(cfg)?;
    let obj = PhaseObjective::new(&prop, hologram, PhaseOnlyConfig::default().ssim_weight)?;
    indices
        .iter()
        .map(|&i| {
            let mut p = theta.clone();
            p.phase[i] += step;
            let mut m = theta.clone();
            m.phase[i] -= step;
            Ok((obj.eval(&p, false)?.0 - obj.eval(&m, false)?.0) / (2.0 * step))
        })
        .collect()
}
