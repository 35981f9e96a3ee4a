//! EWA projection of 3D Gaussians to screen space and its analytic adjoint.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use crate::camera::CameraView;
use crate::scene::{covariance_from, rotation_matrix, rotation_matrix_backward, GaussianScene};

/// Screen-space footprint of one primitive. Intrinsic attributes are copied
/// verbatim from the scene, never derived from the view.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub index: usize,
    pub mean: [f64; 2],
    /// Dilated screen covariance `(Σ'00, Σ'01, Σ'11)`.
    pub cov: [f64; 3],
    /// Inverse of `cov`, same packing.
    pub conic: [f64; 3],
    pub view_depth: f64,
    pub radius: f64,
    pub plane_index: usize,
    pub opacity: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

/// Knobs shared by projection and rasterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSettings {
    /// Contributions with `α_eff` below this are skipped.
    pub alpha_min: f64,
    /// `α_eff` is clamped here so transmittance stays invertible.
    pub alpha_max: f64,
    /// Stop a pixel once transmittance drops below this; `None` never stops.
    pub transmittance_eps: Option<f64>,
    /// Plane weights below this are treated as "not on this plane".
    pub plane_eps: f64,
    /// Low-pass dilation added to the screen covariance diagonal, in px².
    pub dilation: f64,
    pub tile_size: usize,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_eps: Some(1e-4),
            plane_eps: 0.5,
            dilation: 0.3,
            tile_size: 16,
        }
    }
}

impl RasterSettings {
    /// Smooth variant for finite-difference checks: no thresholds that
    /// would make the loss piecewise constant in the parameters.
    pub fn smooth() -> Self {
        Self { alpha_min: 1e-14, transmittance_eps: None, plane_eps: 0.0, ..Self::default() }
    }
}

/// Local affine Jacobian of the perspective map at camera point `t`.
pub(crate) fn perspective_jacobian(t: &Vector3<f64>, focal: f64) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(focal * iz, 0.0, -focal * t.x * iz * iz, 0.0, focal * iz, -focal * t.y * iz * iz)
}

fn invert_sym2(c: [f64; 3]) -> Option<[f64; 3]> {
    let det = c[0] * c[2] - c[1] * c[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some([c[2] / det, -c[1] / det, c[0] / det])
}

/// Projects row `n`. Returns `None` when the primitive is culled (behind the
/// near plane, degenerate, or its footprint misses the image).
pub fn project_gaussian(
    scene: &GaussianScene,
    n: usize,
    cam: &CameraView,
    settings: &RasterSettings,
) -> Option<ProjectedGaussian> {
    project_inner(scene, n, cam, settings, true)
}

pub(crate) fn project_inner(
    scene: &GaussianScene,
    n: usize,
    cam: &CameraView,
    settings: &RasterSettings,
    cull_screen: bool,
) -> Option<ProjectedGaussian> {
    let t = cam.to_camera(&scene.position(n));
    if !(t.z > cam.near_clip) {
        return None;
    }
    let w = cam.world_to_cam();
    let j = perspective_jacobian(&t, cam.focal);
    let sigma = covariance_from(scene.rotation(n), scene.scales(n));
    let m = j * w * sigma * w.transpose() * j.transpose();
    let cov = [m[(0, 0)] + settings.dilation, 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)] + settings.dilation];
    let conic = invert_sym2(cov)?;
    let mean = cam.project(&t);
    let opacity = scene.opacity(n);

    let mid = 0.5 * (cov[0] + cov[2]);
    let lambda_max = mid + (mid * mid - (cov[0] * cov[2] - cov[1] * cov[1])).max(0.0).sqrt();
    // Beyond this radius even a fully opaque-on-plane splat falls below alpha_min.
    let cutoff = if opacity > settings.alpha_min {
        (2.0 * lambda_max * (opacity / settings.alpha_min).ln()).sqrt()
    } else {
        0.0
    };
    let radius = (3.0 * lambda_max.sqrt()).max(cutoff).ceil();
    if !radius.is_finite() {
        return None;
    }
    if cull_screen
        && (mean[0] + radius < 0.0
        || mean[1] + radius < 0.0
        || mean[0] - radius > (cam.width - 1) as f64
        || mean[1] - radius > (cam.height - 1) as f64)
    {
        return None;
    }
    let plane_index = crate::ste::argmax(scene.plane_logits(n));
    Some(ProjectedGaussian {
        index: n,
        mean,
        cov,
        conic,
        view_depth: t.z,
        radius,
        plane_index,
        opacity,
        amplitudes: scene.amplitudes(n).to_vec(),
        phases: scene.phases(n).iter().map(|p| p.rem_euclid(std::f64::consts::TAU)).collect(),
    })
}

/// `exp(-½ dᵀ Σ'⁻¹ d)` with `d = pixel − μ`.
pub fn eval_projected(pg: &ProjectedGaussian, pixel: [f64; 2]) -> f64 {
    screen_power(pg.mean, pg.conic, pixel).exp()
}

#[inline]
pub(crate) fn screen_power(mean: [f64; 2], conic: [f64; 3], pixel: [f64; 2]) -> f64 {
    let dx = pixel[0] - mean[0];
    let dy = pixel[1] - mean[1];
    -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy
}

/// Geometry gradients of one primitive.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeometryGrad {
    pub position: [f64; 3],
    /// With respect to the raw stored quaternion.
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
}

/// Pulls screen-space gradients on `(μ, conic)` back to position, rotation
/// and log-scale. `grad_conic` is with respect to the packed `(a, b, c)` of
/// `a dx² + 2b dx dy + c dy²`.
pub fn project_backward(
    scene: &GaussianScene,
    n: usize,
    cam: &CameraView,
    pg: &ProjectedGaussian,
    grad_mean: [f64; 2],
    grad_conic: [f64; 3],
) -> GeometryGrad {
    let w = cam.world_to_cam();
    let t = cam.to_camera(&scene.position(n));
    let f = cam.focal;
    let j = perspective_jacobian(&t, f);
    let q = scene.rotation(n);
    let s = scene.scales(n);
    let r = rotation_matrix(q);
    let sigma = covariance_from(q, s);
    let v = w * sigma * w.transpose();

    // conic = Σ'^{-1}:  dL/dΣ' = -Σ'^{-1} Ĝ Σ'^{-1}
    let inv = nalgebra::Matrix2::new(pg.conic[0], pg.conic[1], pg.conic[1], pg.conic[2]);
    let gh = nalgebra::Matrix2::new(grad_conic[0], 0.5 * grad_conic[1], 0.5 * grad_conic[1], grad_conic[2]);
    let g_cov = -(inv * gh * inv);

    let g_v = j.transpose() * g_cov * j;
    let g_sigma = w.transpose() * g_v * w;
    let g_j = 2.0 * g_cov * j * v;

    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let mut g_t = Vector3::new(
        grad_mean[0] * f * iz,
        grad_mean[1] * f * iz,
        -(grad_mean[0] * f * t.x + grad_mean[1] * f * t.y) * iz2,
    );
    g_t.x += g_j[(0, 2)] * (-f * iz2);
    g_t.y += g_j[(1, 2)] * (-f * iz2);
    g_t.z += (g_j[(0, 0)] + g_j[(1, 1)]) * (-f * iz2)
        + g_j[(0, 2)] * (2.0 * f * t.x * iz2 * iz)
        + g_j[(1, 2)] * (2.0 * f * t.y * iz2 * iz);
    let g_x = w.transpose() * g_t;

    // Σ = R S² Rᵀ
    let s2 = Matrix3::from_diagonal(&Vector3::from(s.map(|v| v * v)));
    let g_sym = 0.5 * (g_sigma + g_sigma.transpose());
    let g_r = 2.0 * g_sym * r * s2;
    let rgr = r.transpose() * g_sym * r;
    GeometryGrad {
        position: [g_x.x, g_x.y, g_x.z],
        rotation: rotation_matrix_backward(q, &g_r),
        // ∂/∂ log s_k = s_k ∂/∂s_k = 2 s_k² (RᵀĜR)_kk
        log_scale: [0, 1, 2].map(|k| 2.0 * s[k] * s[k] * rgr[(k, k)]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};

    fn one_gaussian(pos: [f64; 3], q: [f64; 4], s: [f64; 3]) -> GaussianScene {
        let mut scene = GaussianScene::empty(1, 1);
        scene.push(pos, q, s, &[1.0], 0.5, &[0.3], &[0.0]).unwrap();
        scene
    }

    fn undilated() -> RasterSettings {
        RasterSettings { dilation: 0.0, ..RasterSettings::default() }
    }

    #[test]
    fn on_axis_footprint() {
        let cam = CameraView::new([0.0; 6], 100.0, 64, 64, 0.1).unwrap();
        let (z, s) = (2.0, 0.05);
        let scene = one_gaussian([0.0, 0.0, z], [1.0, 0.0, 0.0, 0.0], [s; 3]);
        let pg = project_gaussian(&scene, 0, &cam, &undilated()).unwrap();
        assert_eq!(pg.mean, [32.0, 32.0]);
        let expected = (100.0 * s / z).powi(2);
        assert!((pg.cov[0] - expected).abs() < 1e-12 && (pg.cov[2] - expected).abs() < 1e-12);
        assert!(pg.cov[1].abs() < 1e-15);
        assert_eq!(pg.view_depth, z);

        let far = one_gaussian([0.0, 0.0, 2.0 * z], [1.0, 0.0, 0.0, 0.0], [s; 3]);
        let pf = project_gaussian(&far, 0, &cam, &undilated()).unwrap();
        assert!((pf.cov[0].sqrt() - 0.5 * pg.cov[0].sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rigid_translation_invariance() {
        let q = [0.9, 0.1, -0.3, 0.2];
        let norm = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let q = q.map(|v| v / norm);
        let cam = CameraView::new([0.1, -0.2, 0.0, 0.1, 0.2, -0.1], 120.0, 64, 64, 0.1).unwrap();
        let scene = one_gaussian([0.3, 0.1, 2.5], q, [0.05, 0.1, 0.02]);
        let a = project_gaussian(&scene, 0, &cam, &RasterSettings::default()).unwrap();
        let cam2 = CameraView::new([5.1, -3.2, 7.0, 0.1, 0.2, -0.1], 120.0, 64, 64, 0.1).unwrap();
        let scene2 = one_gaussian([5.3, -2.9, 9.5], q, [0.05, 0.1, 0.02]);
        let b = project_gaussian(&scene2, 0, &cam2, &RasterSettings::default()).unwrap();
        for i in 0..2 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-9);
        }
        for i in 0..3 {
            assert!((a.cov[i] - b.cov[i]).abs() < 1e-9 * a.cov[0].abs().max(1.0));
        }
    }

    #[test]
    fn eval_basics() {
        let cam = CameraView::new([0.0; 6], 100.0, 64, 64, 0.1).unwrap();
        let scene = one_gaussian([0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [0.05, 0.08, 0.05]);
        let pg = project_gaussian(&scene, 0, &cam, &RasterSettings::default()).unwrap();
        assert_eq!(eval_projected(&pg, pg.mean), 1.0);
        let sx = pg.cov[0].sqrt();
        let v = eval_projected(&pg, [pg.mean[0] + sx, pg.mean[1]]);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        let d = [1.7, -2.3];
        let p = eval_projected(&pg, [pg.mean[0] + d[0], pg.mean[1] + d[1]]);
        let m = eval_projected(&pg, [pg.mean[0] - d[0], pg.mean[1] - d[1]]);
        assert!((p - m).abs() < 1e-14);
    }

    #[test]
    fn culling() {
        let cam = CameraView::new([0.0; 6], 100.0, 64, 64, 0.4).unwrap();
        let behind = one_gaussian([0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 0.0], [0.05; 3]);
        assert!(project_gaussian(&behind, 0, &cam, &RasterSettings::default()).is_none());
        let too_near = one_gaussian([0.0, 0.0, 0.3], [1.0, 0.0, 0.0, 0.0], [0.05; 3]);
        assert!(project_gaussian(&too_near, 0, &cam, &RasterSettings::default()).is_none());
        let aside = one_gaussian([50.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [0.05; 3]);
        assert!(project_gaussian(&aside, 0, &cam, &RasterSettings::default()).is_none());
    }

    #[test]
    fn intrinsics_are_copied_not_recomputed() {
        let mut scene = GaussianScene::empty(3, 2);
        scene
            .push([0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [0.05; 3], &[0.2, 0.4, 0.6], 0.3, &[0.5, 7.0, -1.0], &[0.1, 0.4])
            .unwrap();
        let c1 = CameraView::new([0.0; 6], 100.0, 64, 64, 0.1).unwrap();
        let c2 = CameraView::new([0.2, 0.1, -0.5, 0.05, -0.1, 0.3], 90.0, 64, 64, 0.1).unwrap();
        let a = project_gaussian(&scene, 0, &c1, &RasterSettings::default()).unwrap();
        let b = project_gaussian(&scene, 0, &c2, &RasterSettings::default()).unwrap();
        assert_eq!(a.amplitudes, b.amplitudes);
        assert_eq!(a.phases, b.phases);
        assert_eq!(a.opacity.to_bits(), b.opacity.to_bits());
        assert_eq!((a.plane_index, b.plane_index), (1, 1));
        assert_ne!(a.mean, b.mean);
    }

    /// Integrates the camera-space density along the pixel ray of the
    /// linearized projection and normalizes by the central ray.
    fn ray_integral_oracle(v: &Matrix3<f64>, j: &Matrix2x3<f64>, t: &Vector3<f64>, d: Vector2<f64>) -> f64 {
        let vinv = v.try_inverse().unwrap();
        let pinv = j.pseudo_inverse(1e-15).unwrap();
        let dir = t.normalize();
        let integrate = |d: Vector2<f64>| {
            let base = pinv * d;
            let (lo, hi, steps) = (-1.0, 1.0, 20_000);
            let h = (hi - lo) / steps as f64;
            (0..=steps)
                .map(|i| {
                    let s = lo + i as f64 * h;
                    let p = base + dir * s;
                    let wgt = if i == 0 || i == steps { 0.5 } else { 1.0 };
                    wgt * (-0.5 * (p.transpose() * vinv * p)[(0, 0)]).exp()
                })
                .sum::<f64>()
                * h
        };
        integrate(d) / integrate(Vector2::zeros())
    }

    #[test]
    fn matches_ray_integration_oracle() {
        let q = [0.8, 0.3, -0.4, 0.33];
        let norm = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let q = q.map(|v| v / norm);
        let cam = CameraView::new([0.05, -0.02, 0.0, 0.03, -0.04, 0.1], 40.0, 8, 8, 0.1).unwrap();
        let scene = one_gaussian([0.1, 0.05, 2.0], q, [0.08, 0.15, 0.05]);
        let pg = project_gaussian(&scene, 0, &cam, &undilated()).unwrap();
        let t = cam.to_camera(&scene.position(0));
        let w = cam.world_to_cam();
        let v = w * scene.covariance(0) * w.transpose();
        let j = perspective_jacobian(&t, cam.focal);
        for y in 0..8 {
            for x in 0..8 {
                let px = [x as f64, y as f64];
                let d = Vector2::new(px[0] - pg.mean[0], px[1] - pg.mean[1]);
                let oracle = ray_integral_oracle(&v, &j, &t, d);
                let got = eval_projected(&pg, px);
                assert!((oracle - got).abs() < 1e-6, "pixel {x},{y}: {oracle} vs {got}");
            }
        }
        let m = Matrix2::new(pg.cov[0], pg.cov[1], pg.cov[1], pg.cov[2]);
        assert!(m.cholesky().is_some());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let q = [0.7, -0.2, 0.5, 0.4];
        let cam = CameraView::new([0.1, 0.2, -0.1, 0.1, -0.2, 0.05], 60.0, 32, 32, 0.1).unwrap();
        let base = one_gaussian([0.2, -0.1, 2.2], q, [0.1, 0.2, 0.07]);
        let gm = [0.3, -0.7];
        let gc = [1.1, -0.4, 0.6];
        let objective = |s: &GaussianScene| {
            let pg = project_gaussian(s, 0, &cam, &RasterSettings::default()).unwrap();
            gm[0] * pg.mean[0] + gm[1] * pg.mean[1] + gc[0] * pg.conic[0] + gc[1] * pg.conic[1] + gc[2] * pg.conic[2]
        };
        let pg = project_gaussian(&base, 0, &cam, &RasterSettings::default()).unwrap();
        let g = project_backward(&base, 0, &cam, &pg, gm, gc);
        let h = 1e-6;
        let check = |arr: fn(&mut GaussianScene) -> &mut Vec<f64>, analytic: &[f64]| {
            for (i, a) in analytic.iter().enumerate() {
                let mut p = base.clone();
                arr(&mut p)[i] += h;
                let mut m = base.clone();
                arr(&mut m)[i] -= h;
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                assert!((fd - a).abs() < 1e-6 * fd.abs().max(1.0), "index {i}: fd {fd} vs {a}");
            }
        };
        check(|s| &mut s.params.positions, &g.position);
        check(|s| &mut s.params.rotations, &g.rotation);
        check(|s| &mut s.params.log_scales, &g.log_scale);
    }
}
