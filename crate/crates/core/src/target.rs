//! Focal-stack supervision: per-plane target intensities and depth masks.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::field::{IntensityImage, Provenance, WaveConfig};
use crate::pipeline::{Assignment, Pipeline};
use crate::scene::GaussianScene;

#[derive(Debug, Clone, PartialEq)]
pub struct FocalStackTarget {
    pub images: Vec<IntensityImage>,
    /// One `W x H` mask per plane with values in `{0, 1}`.
    pub masks: Vec<Vec<f64>>,
    pub camera: CameraView,
}

impl FocalStackTarget {
    pub fn new(images: Vec<IntensityImage>, masks: Vec<Vec<f64>>, camera: CameraView) -> Result<Self> {
        let t = Self { images, masks, camera };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() || self.images.len() != self.masks.len() {
            return Err(Error::Shape("a target needs one image and one mask per plane".into()));
        }
        let first = &self.images[0];
        if first.width != self.camera.width || first.height != self.camera.height {
            return Err(Error::Shape("target images do not match the camera resolution".into()));
        }
        for (img, mask) in self.images.iter().zip(&self.masks) {
            if !img.same_shape(first) || mask.len() != img.plane_len() {
                return Err(Error::Shape("target planes differ in shape".into()));
            }
            if img.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument("target intensities must lie in [0, 1]".into()));
            }
            if mask.iter().any(|m| *m != 0.0 && *m != 1.0) {
                return Err(Error::InvalidArgument("masks must be binary".into()));
            }
        }
        for p in 0..first.plane_len() {
            if self.masks.iter().map(|m| m[p]).sum::<f64>() > 1.0 {
                return Err(Error::InvalidArgument("depth masks overlap".into()));
            }
        }
        Ok(())
    }
}

/// Renders `oracle` through the full forward model. Masks mark, per pixel,
/// the plane whose rasterized field carries the most energy among planes
/// that received any contribution.
pub fn make_target_from_scene(oracle: &GaussianScene, cam: &CameraView, cfg: &WaveConfig) -> Result<FocalStackTarget> {
    make_target_with(&Pipeline::new(cfg)?, oracle, cam)
}

pub fn make_target_with(pipeline: &Pipeline, oracle: &GaussianScene, cam: &CameraView) -> Result<FocalStackTarget> {
    let r = pipeline.render(oracle, cam, &Assignment::Hard)?;
    let (w, h) = (cam.width, cam.height);
    let planes = r.layers.len();
    let mut masks = vec![vec![0.0; w * h]; planes];
    for p in 0..w * h {
        let mut best: Option<(usize, f64)> = None;
        for (l, layer) in r.layers.iter().enumerate() {
            if r.aux.last_contributor[l * w * h + p] == u32::MAX {
                continue;
            }
            let e: f64 = (0..layer.channels()).map(|c| layer.channel(c)[p].norm_sqr()).sum();
            if best.is_none_or(|(_, b)| e > b) {
                best = Some((l, e));
            }
        }
        if let Some((l, _)) = best {
            masks[l][p] = 1.0;
        }
    }
    let images = r
        .intensities
        .into_iter()
        .map(|mut img| {
            img.provenance = Provenance::Target;
            img
        })
        .collect();
    FocalStackTarget::new(images, masks, cam.clone())
}

/// Naive import of an RGB image with a depth map: every plane is supervised
/// with the full image, and masks come from splitting the depth range into
/// `L` equal bins (nearest bin first).
pub fn target_from_rgbd(rgb: &IntensityImage, depth: &[f64], cfg: &WaveConfig, cam: &CameraView) -> Result<FocalStackTarget> {
    if depth.len() != rgb.plane_len() {
        return Err(Error::Shape("depth map must be W x H".into()));
    }
    if depth.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("depth map"));
    }
    let planes = cfg.num_planes;
    let lo = depth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut masks = vec![vec![0.0; depth.len()]; planes];
    for (p, d) in depth.iter().enumerate() {
        let bin = (((d - lo) / span) * planes as f64).floor() as usize;
        masks[bin.min(planes - 1)][p] = 1.0;
    }
    let mut img = rgb.clone();
    img.provenance = Provenance::Target;
    FocalStackTarget::new(vec![img; planes], masks, cam.clone())
}
