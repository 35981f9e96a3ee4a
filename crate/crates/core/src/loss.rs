//! Focal-stack losses, their gradients with respect to intensities, and PSNR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::IntensityImage;
use crate::scene::{sigmoid, GaussianScene};
use crate::ssim::ssim_with_grad;

pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the `1 − SSIM` term.
    #[serde(default = "LossConfig::default_ssim_weight")]
    pub ssim_weight: f64,
    /// Weight of the mean-opacity decay term.
    #[serde(default = "LossConfig::default_opacity_weight")]
    pub opacity_weight: f64,
    /// Also add the plain per-plane MSE (off by default).
    #[serde(default)]
    pub include_mse: bool,
}

impl LossConfig {
    fn default_ssim_weight() -> f64 {
        0.005
    }
    fn default_opacity_weight() -> f64 {
        1e-4
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ssim_weight: Self::default_ssim_weight(),
            opacity_weight: Self::default_opacity_weight(),
            include_mse: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub ssim: f64,
    pub mse: f64,
    pub opacity: f64,
}

fn check_stack(i: &[IntensityImage], gt: &[IntensityImage]) -> Result<()> {
    if i.len() != gt.len() || i.is_empty() {
        return Err(Error::Shape(format!("{} reconstructed vs {} target planes", i.len(), gt.len())));
    }
    if i.iter().zip(gt).any(|(a, b)| !a.same_shape(b)) {
        return Err(Error::Shape("reconstructed and target images differ in shape".into()));
    }
    Ok(())
}

fn check_masks(i: &[IntensityImage], masks: &[Vec<f64>]) -> Result<()> {
    if masks.len() != i.len() || masks.iter().zip(i).any(|(m, img)| m.len() != img.plane_len()) {
        return Err(Error::Shape("one W x H mask per plane is required".into()));
    }
    Ok(())
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
}

/// Plane-averaged mean squared error.
pub fn loss_mse(i: &[IntensityImage], gt: &[IntensityImage]) -> Result<f64> {
    check_stack(i, gt)?;
    Ok(i.iter().zip(gt).map(|(a, b)| mean_sq(&a.data, &b.data)).sum::<f64>() / i.len() as f64)
}

/// Plain, mask-weighted and target-weighted squared errors, averaged over planes.
pub fn loss_recon(i: &[IntensityImage], gt: &[IntensityImage], masks: &[Vec<f64>]) -> Result<f64> {
    Ok(recon_with_grad(i, gt, masks, false)?.0)
}

fn recon_with_grad(
    i: &[IntensityImage],
    gt: &[IntensityImage],
    masks: &[Vec<f64>],
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_stack(i, gt)?;
    check_masks(i, masks)?;
    let planes = i.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::new();
    for ((img, tgt), mask) in i.iter().zip(gt).zip(masks) {
        let n = img.data.len() as f64;
        let np = img.plane_len();
        let mut acc = 0.0;
        let mut g = if want_grad { vec![0.0; img.data.len()] } else { Vec::new() };
        for (k, (a, b)) in img.data.iter().zip(&tgt.data).enumerate() {
            let m = mask[k % np];
            let e = a - b;
            let weight = 1.0 + m * m + b * b;
            acc += weight * e * e;
            if want_grad {
                g[k] = 2.0 * weight * e / (n * planes);
            }
        }
        total += acc / n;
        grads.push(g);
    }
    Ok((total / planes, grads))
}

/// `λ·(1 − SSIM)` averaged over channels and planes.
pub fn loss_ssim(i: &[IntensityImage], gt: &[IntensityImage], weight: f64) -> Result<f64> {
    Ok(ssim_term(i, gt, weight, false)?.0)
}

fn ssim_term(i: &[IntensityImage], gt: &[IntensityImage], weight: f64, want_grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    check_stack(i, gt)?;
    let planes = i.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::new();
    for (img, tgt) in i.iter().zip(gt) {
        let np = img.plane_len();
        let scale = weight / (planes * img.channels as f64);
        let mut g = if want_grad { vec![0.0; img.data.len()] } else { Vec::new() };
        for c in 0..img.channels {
            let (s, sg) = ssim_with_grad(img.channel(c), tgt.channel(c), img.width, img.height, want_grad);
            total += scale * (1.0 - s);
            if want_grad {
                for (d, v) in g[c * np..(c + 1) * np].iter_mut().zip(sg) {
                    *d = -scale * v;
                }
            }
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// All image terms and `∂L/∂I` per plane.
pub fn image_loss_with_grad(
    i: &[IntensityImage],
    gt: &[IntensityImage],
    masks: &[Vec<f64>],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    image_terms(i, gt, masks, cfg, true)
}

/// All image terms, without gradients.
pub fn image_loss(i: &[IntensityImage], gt: &[IntensityImage], masks: &[Vec<f64>], cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(image_terms(i, gt, masks, cfg, false)?.0)
}

fn image_terms(
    i: &[IntensityImage],
    gt: &[IntensityImage],
    masks: &[Vec<f64>],
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let (recon, mut grads) = recon_with_grad(i, gt, masks, want_grad)?;
    let (ssim, sg) = ssim_term(i, gt, cfg.ssim_weight, want_grad)?;
    if want_grad {
        for (g, s) in grads.iter_mut().zip(&sg) {
            g.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
    }
    let mut mse = 0.0;
    if cfg.include_mse {
        mse = loss_mse(i, gt)?;
        let planes = i.len() as f64;
        if want_grad {
            for ((g, img), tgt) in grads.iter_mut().zip(i).zip(gt) {
                let n = img.data.len() as f64;
                for ((d, a), b) in g.iter_mut().zip(&img.data).zip(&tgt.data) {
                    *d += 2.0 * (a - b) / (n * planes);
                }
            }
        }
    }
    let total = recon + ssim + mse;
    Ok((LossBreakdown { total, recon, ssim, mse, opacity: 0.0 }, grads))
}

/// `λ·mean(sigmoid(logit))` and its gradient on the logits.
pub fn opacity_regularizer(scene: &GaussianScene, weight: f64) -> (f64, Vec<f64>) {
    let n = scene.len();
    if n == 0 || weight == 0.0 {
        return (0.0, vec![0.0; n]);
    }
    let mut value = 0.0;
    let grad = scene
        .params
        .opacity_logits
        .iter()
        .map(|l| {
            let s = sigmoid(*l);
            value += s;
            weight * s * (1.0 - s) / n as f64
        })
        .collect();
    (weight * value / n as f64, grad)
}

/// `10·log10(1/MSE)` over every sample, capped at 99 dB.
pub fn psnr(i: &IntensityImage, gt: &IntensityImage) -> Result<f64> {
    if !i.same_shape(gt) {
        return Err(Error::Shape("psnr inputs differ in shape".into()));
    }
    let mse = mean_sq(&i.data, &gt.data);
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}
