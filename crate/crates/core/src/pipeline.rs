//! Full differentiable chain: rasterize, record the hologram, back-propagate
//! to the focal stack, compare intensities.
//!
//! The backward pass reuses the propagator: the adjoint of back-propagation
//! is forward recording and vice versa, since `H(−z) = conj(H(z))`.

use num_complex::Complex64;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::field::{intensity, ComplexField, IntensityImage, WaveConfig};
use crate::loss::{image_loss, image_loss_with_grad, opacity_regularizer, LossBreakdown, LossConfig};
use crate::projection::RasterSettings;
use crate::propagation::Propagator;
use crate::raster::{raster_backward, raster_forward_with, RasterAux};
use crate::scene::{GaussianScene, SceneGradients};
use crate::ste::{hard_assignments, ste_backward, DEFAULT_TEMPERATURE};
use crate::target::FocalStackTarget;

/// How plane weights `ρ` are obtained for a render.
#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    /// One-hot argmax of the plane logits, straight-through gradient.
    Hard,
    /// Explicit `N x L` weights; logits receive no gradient.
    Given(Vec<f64>),
}

/// Everything the forward model produces for one view.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub layers: Vec<ComplexField>,
    pub hologram: ComplexField,
    pub reconstructions: Vec<ComplexField>,
    pub intensities: Vec<IntensityImage>,
    pub aux: RasterAux,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub grads: SceneGradients,
    /// `∂L/∂ρ`, `N x L`.
    pub grad_rho: Vec<f64>,
    /// Screen-space mean-gradient norm per primitive.
    pub screen_grad: Vec<f64>,
    pub rendering: Rendering,
}

#[derive(Debug)]
pub struct Pipeline {
    pub propagator: Propagator,
    pub raster: RasterSettings,
    pub loss: LossConfig,
    pub temperature: f64,
}

impl Pipeline {
    pub fn new(cfg: &WaveConfig) -> Result<Self> {
        Ok(Self {
            propagator: Propagator::new(cfg)?,
            raster: RasterSettings::default(),
            loss: LossConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
        })
    }

    pub fn config(&self) -> &WaveConfig {
        self.propagator.config()
    }

    fn weights(&self, scene: &GaussianScene, assignment: &Assignment) -> Vec<f64> {
        match assignment {
            Assignment::Hard => hard_assignments(&scene.params.plane_logits, scene.planes()),
            Assignment::Given(w) => w.clone(),
        }
    }

    pub fn render(&self, scene: &GaussianScene, cam: &CameraView, assignment: &Assignment) -> Result<Rendering> {
        let rho = self.weights(scene, assignment);
        let (layers, aux) = raster_forward_with(scene, cam, self.config(), &rho, &self.raster)?;
        let hologram = self.propagator.forward_record(&layers)?;
        let reconstructions = self.propagator.inverse_propagate(&hologram)?;
        let intensities = reconstructions.iter().map(intensity).collect::<Result<Vec<_>>>()?;
        Ok(Rendering { layers, hologram, reconstructions, intensities, aux })
    }

    fn check_target(&self, cam: &CameraView, target: &FocalStackTarget) -> Result<()> {
        if target.images.len() != self.config().num_planes {
            return Err(Error::Shape("target plane count does not match the configuration".into()));
        }
        if target.camera.pose() != cam.pose() || target.camera.focal != cam.focal {
            return Err(Error::InvalidArgument("target was recorded from a different camera".into()));
        }
        Ok(())
    }

    /// Loss for one view without gradients.
    pub fn loss(
        &self,
        scene: &GaussianScene,
        cam: &CameraView,
        target: &FocalStackTarget,
        assignment: &Assignment,
    ) -> Result<LossBreakdown> {
        self.check_target(cam, target)?;
        let rendering = self.render(scene, cam, assignment)?;
        let mut loss = image_loss(&rendering.intensities, &target.images, &target.masks, &self.loss)?;
        loss.opacity = opacity_regularizer(scene, self.loss.opacity_weight).0;
        loss.total += loss.opacity;
        Ok(loss)
    }

    /// Loss for one view and its gradient with respect to every parameter.
    pub fn evaluate(
        &self,
        scene: &GaussianScene,
        cam: &CameraView,
        target: &FocalStackTarget,
        assignment: &Assignment,
    ) -> Result<Evaluation> {
        self.check_target(cam, target)?;
        let rendering = self.render(scene, cam, assignment)?;
        let (mut loss, g_int) = image_loss_with_grad(&rendering.intensities, &target.images, &target.masks, &self.loss)?;

        // ∂|u|²/∂Re = 2 Re, ∂|u|²/∂Im = 2 Im
        let g_recon: Vec<ComplexField> = rendering
            .reconstructions
            .iter()
            .zip(&g_int)
            .map(|(u, g)| {
                let mut out = u.clone();
                for (z, gi) in out.data_mut().iter_mut().zip(g) {
                    *z = Complex64::new(2.0 * z.re * gi, 2.0 * z.im * gi);
                }
                out
            })
            .collect();
        let g_hologram = self.propagator.forward_record(&g_recon)?;
        let g_layers = self.propagator.inverse_propagate(&g_hologram)?;
        let rg = raster_backward(scene, cam, self.config(), &rendering.aux, &g_layers)?;

        let mut grads = rg.scene;
        if matches!(assignment, Assignment::Hard) {
            grads.params.plane_logits = ste_backward(&scene.params.plane_logits, &rg.rho, scene.planes(), self.temperature);
        }
        let (reg, reg_grad) = opacity_regularizer(scene, self.loss.opacity_weight);
        for (g, r) in grads.params.opacity_logits.iter_mut().zip(reg_grad) {
            *g += r;
        }
        loss.opacity = reg;
        loss.total += reg;
        Ok(Evaluation { loss, grads, grad_rho: rg.rho, screen_grad: rg.screen_mean_norm, rendering })
    }
}

/// Convenience wrapper building a pipeline with default settings.
pub fn total_loss(
    scene: &GaussianScene,
    cam: &CameraView,
    cfg: &WaveConfig,
    target: &FocalStackTarget,
) -> Result<(f64, SceneGradients)> {
    let ev = Pipeline::new(cfg)?.evaluate(scene, cam, target, &Assignment::Hard)?;
    Ok((ev.loss.total, ev.grads))
}
