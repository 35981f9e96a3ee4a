//! Tile-based splatting of complex Gaussians onto depth planes, and the
//! analytic backward pass.
//!
//! Each plane keeps its own transmittance. Primitives are visited front to
//! back in camera depth; a primitive adds `c·α·T·e^{jφ}` to its plane and
//! attenuates that plane's transmittance by `1 − α`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::field::{ComplexField, WaveConfig};
use crate::projection::{project_backward, screen_power, ProjectedGaussian, RasterSettings};
use crate::scene::{GaussianScene, SceneGradients};

const NONE: u32 = u32::MAX;

/// Per-tile primitive lists, each in ascending depth order.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Primitive indices overlapping each tile, row-major over tiles.
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    fn build(projected: &[Option<ProjectedGaussian>], order: &[u32], width: usize, height: usize, ts: usize) -> Self {
        let tiles_x = width.div_ceil(ts);
        let tiles_y = height.div_ceil(ts);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for &n in order {
            let pg = projected[n as usize].as_ref().expect("ordered primitives are visible");
            let x0 = ((pg.mean[0] - pg.radius).max(0.0) / ts as f64).floor() as usize;
            let y0 = ((pg.mean[1] - pg.radius).max(0.0) / ts as f64).floor() as usize;
            let x1 = (((pg.mean[0] + pg.radius) / ts as f64).floor() as usize).min(tiles_x - 1);
            let y1 = (((pg.mean[1] + pg.radius) / ts as f64).floor() as usize).min(tiles_y - 1);
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    lists[ty * tiles_x + tx].push(n);
                }
            }
        }
        Self { tile_size: ts, tiles_x, tiles_y, lists }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel bounds `(x0, x1, y0, y1)`, end-exclusive.
    pub fn bounds(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let ts = self.tile_size;
        (tx * ts, ((tx + 1) * ts).min(width), ty * ts, ((ty + 1) * ts).min(height))
    }
}

#[derive(Clone, Copy, Default)]
struct Splat {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
}

/// State recorded by the forward pass and consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct RasterAux {
    pub width: usize,
    pub height: usize,
    pub planes: usize,
    pub channels: usize,
    pub settings: RasterSettings,
    /// Transmittance after the last visited primitive, `L x H x W`.
    pub final_transmittance: Vec<f64>,
    /// Depth rank of the last contributing primitive, `u32::MAX` if none.
    pub last_contributor: Vec<u32>,
    pub projected: Vec<Option<ProjectedGaussian>>,
    /// Visible primitives in traversal order.
    pub order: Vec<u32>,
    pub tiles: TileGrid,
    rank: Vec<u32>,
    rho: Vec<f64>,
    pose: [f64; 6],
    focal: f64,
}

impl RasterAux {
    /// Plane weights used for this render, `N x L`.
    pub fn plane_weights(&self) -> &[f64] {
        &self.rho
    }
}

struct Frame<'a> {
    splats: Vec<Splat>,
    /// `(c·cos φ, c·sin φ)` per primitive and channel.
    color: Vec<[f64; 2]>,
    rank: Vec<u32>,
    rho: &'a [f64],
    channels: usize,
    planes: usize,
    settings: RasterSettings,
}

impl<'a> Frame<'a> {
    fn new(projected: &[Option<ProjectedGaussian>], rank: Vec<u32>, rho: &'a [f64], c: usize, l: usize, s: RasterSettings) -> Self {
        let n = projected.len();
        let mut splats = vec![Splat::default(); n];
        let mut color = vec![[0.0; 2]; n * c];
        for (i, pg) in projected.iter().enumerate() {
            if let Some(pg) = pg {
                splats[i] = Splat { mean: pg.mean, conic: pg.conic, opacity: pg.opacity };
                for ch in 0..c {
                    let (s, co) = pg.phases[ch].sin_cos();
                    color[i * c + ch] = [pg.amplitudes[ch] * co, pg.amplitudes[ch] * s];
                }
            }
        }
        Self { splats, color, rank, rho, channels: c, planes: l, settings: s }
    }

    /// `(α, G, clamped)` of primitive `n` on plane `l` at `px`, or `None` if skipped.
    #[inline]
    fn alpha(&self, n: usize, l: usize, px: [f64; 2]) -> Option<(f64, f64, bool)> {
        let rho = self.rho[n * self.planes + l];
        if rho < self.settings.plane_eps {
            return None;
        }
        let sp = &self.splats[n];
        let power = screen_power(sp.mean, sp.conic, px);
        if power > 0.0 {
            return None;
        }
        let g = power.exp();
        let raw = sp.opacity * g * rho;
        if raw < self.settings.alpha_min {
            return None;
        }
        let clamped = raw > self.settings.alpha_max;
        Some((raw.min(self.settings.alpha_max), g, clamped))
    }

    /// Blends one pixel of plane `l`; returns `(T_final, last rank)`.
    #[inline]
    fn composite(
        &self,
        list: impl Iterator<Item = u32>,
        l: usize,
        px: [f64; 2],
        eps_t: Option<f64>,
        acc: &mut [Complex64],
    ) -> (f64, u32) {
        let c = self.channels;
        let mut t = 1.0;
        let mut last = NONE;
        for n in list {
            let n = n as usize;
            let Some((alpha, _, _)) = self.alpha(n, l, px) else { continue };
            let w = alpha * t;
            for (ch, a) in acc.iter_mut().enumerate() {
                let col = self.color[n * c + ch];
                a.re += w * col[0];
                a.im += w * col[1];
            }
            t *= 1.0 - alpha;
            last = self.rank[n];
            if eps_t.is_some_and(|e| t < e) {
                break;
            }
        }
        (t, last)
    }
}

fn check_inputs(scene: &GaussianScene, cam: &CameraView, cfg: &WaveConfig, rho: &[f64]) -> Result<()> {
    cfg.validate()?;
    if scene.channels() != cfg.channels() || scene.planes() != cfg.num_planes {
        return Err(Error::Shape(format!(
            "scene has {} channels / {} planes, config expects {} / {}",
            scene.channels(),
            scene.planes(),
            cfg.channels(),
            cfg.num_planes
        )));
    }
    if !cam.matches(cfg) {
        return Err(Error::Shape("camera resolution does not match the configuration".into()));
    }
    if rho.len() != scene.len() * cfg.num_planes {
        return Err(Error::Shape("plane weights must be N x L".into()));
    }
    Ok(())
}

fn project_all(scene: &GaussianScene, cam: &CameraView, settings: &RasterSettings) -> (Vec<Option<ProjectedGaussian>>, Vec<u32>, Vec<u32>) {
    let projected: Vec<Option<ProjectedGaussian>> = (0..scene.len())
        .into_par_iter()
        .map(|n| crate::projection::project_gaussian(scene, n, cam, settings))
        .collect();
    let (order, rank) = depth_order(&projected);
    (projected, order, rank)
}

/// Visible primitives sorted by view depth (index breaks ties), and the
/// inverse permutation.
fn depth_order(projected: &[Option<ProjectedGaussian>]) -> (Vec<u32>, Vec<u32>) {
    let mut keyed: Vec<(f64, u32)> = projected
        .iter()
        .enumerate()
        .filter_map(|(n, p)| p.as_ref().map(|p| (p.view_depth, n as u32)))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<u32> = keyed.into_iter().map(|(_, n)| n).collect();
    let mut rank = vec![NONE; projected.len()];
    for (r, n) in order.iter().enumerate() {
        rank[*n as usize] = r as u32;
    }
    (order, rank)
}

fn tagged_layers(cfg: &WaveConfig, data: Vec<Vec<Complex64>>) -> Result<Vec<ComplexField>> {
    data.into_iter()
        .enumerate()
        .map(|(l, d)| {
            Ok(ComplexField::from_vec(cfg.width(), cfg.height(), cfg.channels(), cfg.pixel_pitch, d)?.with_tag(l))
        })
        .collect()
}

/// Hard plane assignment and default thresholds.
pub fn raster_forward(scene: &GaussianScene, cam: &CameraView, cfg: &WaveConfig) -> Result<(Vec<ComplexField>, RasterAux)> {
    let rho = crate::ste::hard_assignments(&scene.params.plane_logits, scene.planes());
    raster_forward_with(scene, cam, cfg, &rho, &RasterSettings::default())
}

/// Renders every depth plane with explicit per-primitive plane weights
/// `rho` (`N x L`).
pub fn raster_forward_with(
    scene: &GaussianScene,
    cam: &CameraView,
    cfg: &WaveConfig,
    rho: &[f64],
    settings: &RasterSettings,
) -> Result<(Vec<ComplexField>, RasterAux)> {
    check_inputs(scene, cam, cfg, rho)?;
    let (w, h, c, planes) = (cfg.width(), cfg.height(), cfg.channels(), cfg.num_planes);
    let (projected, order, rank) = project_all(scene, cam, settings);
    let tiles = TileGrid::build(&projected, &order, w, h, settings.tile_size);
    let frame = Frame::new(&projected, rank, rho, c, planes, *settings);

    struct TileOut {
        field: Vec<Complex64>,
        t: Vec<f64>,
        last: Vec<u32>,
    }
    let outs: Vec<TileOut> = (0..tiles.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = tiles.bounds(tile, w, h);
            let npix = (x1 - x0) * (y1 - y0);
            let mut out = TileOut {
                field: vec![Complex64::new(0.0, 0.0); planes * c * npix],
                t: vec![1.0; planes * npix],
                last: vec![NONE; planes * npix],
            };
            let list = &tiles.lists[tile];
            let mut acc = vec![Complex64::new(0.0, 0.0); c];
            for l in 0..planes {
                let plane_list: Vec<u32> =
                    list.iter().copied().filter(|n| rho[*n as usize * planes + l] >= settings.plane_eps).collect();
                if plane_list.is_empty() {
                    continue;
                }
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = (y - y0) * (x1 - x0) + (x - x0);
                        acc.fill(Complex64::new(0.0, 0.0));
                        let (t, last) = frame.composite(
                            plane_list.iter().copied(),
                            l,
                            [x as f64, y as f64],
                            settings.transmittance_eps,
                            &mut acc,
                        );
                        for (ch, a) in acc.iter().enumerate() {
                            out.field[(l * c + ch) * npix + p] = *a;
                        }
                        out.t[l * npix + p] = t;
                        out.last[l * npix + p] = last;
                    }
                }
            }
            out
        })
        .collect();

    let mut data = vec![vec![Complex64::new(0.0, 0.0); c * w * h]; planes];
    let mut final_t = vec![1.0; planes * w * h];
    let mut last = vec![NONE; planes * w * h];
    for (tile, out) in outs.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tiles.bounds(tile, w, h);
        let npix = (x1 - x0) * (y1 - y0);
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (y - y0) * (x1 - x0) + (x - x0);
                for l in 0..planes {
                    for ch in 0..c {
                        data[l][ch * w * h + y * w + x] = out.field[(l * c + ch) * npix + p];
                    }
                    final_t[l * w * h + y * w + x] = out.t[l * npix + p];
                    last[l * w * h + y * w + x] = out.last[l * npix + p];
                }
            }
        }
    }
    let aux = RasterAux {
        width: w,
        height: h,
        planes,
        channels: c,
        settings: *settings,
        final_transmittance: final_t,
        last_contributor: last,
        order,
        tiles,
        rank: frame.rank,
        rho: rho.to_vec(),
        projected,
        pose: cam.pose(),
        focal: cam.focal,
    };
    Ok((tagged_layers(cfg, data)?, aux))
}

/// Untiled reference renderer: every visible primitive is tested at every
/// pixel in global depth order, without radius culling or early stopping.
pub fn brute_force_forward_with(
    scene: &GaussianScene,
    cam: &CameraView,
    cfg: &WaveConfig,
    rho: &[f64],
    settings: &RasterSettings,
) -> Result<Vec<ComplexField>> {
    check_inputs(scene, cam, cfg, rho)?;
    let (w, h, c, planes) = (cfg.width(), cfg.height(), cfg.channels(), cfg.num_planes);
    let products = scene.len() * w * h;
    if products > 10_000_000 {
        return Err(Error::TooLarge(format!("N·W·H = {products} exceeds the brute-force limit of 1e7")));
    }
    let projected: Vec<Option<ProjectedGaussian>> =
        (0..scene.len()).map(|n| crate::projection::project_inner(scene, n, cam, settings, false)).collect();
    let (order, rank) = depth_order(&projected);
    let frame = Frame::new(&projected, rank, rho, c, planes, *settings);
    let data: Vec<Vec<Complex64>> = (0..planes)
        .map(|l| {
            let mut plane = vec![Complex64::new(0.0, 0.0); c * w * h];
            let mut acc = vec![Complex64::new(0.0, 0.0); c];
            for y in 0..h {
                for x in 0..w {
                    acc.fill(Complex64::new(0.0, 0.0));
                    frame.composite(order.iter().copied(), l, [x as f64, y as f64], None, &mut acc);
                    for (ch, a) in acc.iter().enumerate() {
                        plane[ch * w * h + y * w + x] = *a;
                    }
                }
            }
            plane
        })
        .collect();
    tagged_layers(cfg, data)
}

pub fn brute_force_forward(scene: &GaussianScene, cam: &CameraView, cfg: &WaveConfig) -> Result<Vec<ComplexField>> {
    let rho = crate::ste::hard_assignments(&scene.params.plane_logits, scene.planes());
    brute_force_forward_with(scene, cam, cfg, &rho, &RasterSettings::default())
}

/// Gradients produced by [`raster_backward`].
#[derive(Debug, Clone)]
pub struct RasterGradients {
    /// Scene parameter gradients; the plane-logit slot is left at zero.
    pub scene: SceneGradients,
    /// `∂L/∂ρ`, `N x L`.
    pub rho: Vec<f64>,
    /// Norm of the screen-space mean gradient per primitive.
    pub screen_mean_norm: Vec<f64>,
}

/// Back-propagates `upstream` (`∂L/∂Re + j ∂L/∂Im` per plane) to every
/// scene parameter.
pub fn raster_backward(
    scene: &GaussianScene,
    cam: &CameraView,
    cfg: &WaveConfig,
    aux: &RasterAux,
    upstream: &[ComplexField],
) -> Result<RasterGradients> {
    let (w, h, c, planes) = (cfg.width(), cfg.height(), cfg.channels(), cfg.num_planes);
    if aux.width != w
        || aux.height != h
        || aux.planes != planes
        || aux.channels != c
        || aux.projected.len() != scene.len()
        || aux.pose != cam.pose()
        || aux.focal != cam.focal
    {
        return Err(Error::InvalidArgument("raster aux does not belong to this scene/camera".into()));
    }
    if upstream.len() != planes {
        return Err(Error::Shape(format!("expected {planes} upstream fields, got {}", upstream.len())));
    }
    for g in upstream {
        g.check_matches(cfg)?;
    }
    let settings = aux.settings;
    let tiles = &aux.tiles;
    let frame = Frame::new(&aux.projected, aux.rank.clone(), &aux.rho, c, planes, settings);
    let stride = 6 + 2 * c + planes;

    let partials: Vec<Vec<f64>> = (0..tiles.tile_count())
        .into_par_iter()
        .map(|tile| {
            let list = &tiles.lists[tile];
            let mut part = vec![0.0; list.len() * stride];
            if list.is_empty() {
                return part;
            }
            let (x0, x1, y0, y1) = tiles.bounds(tile, w, h);
            let mut g = vec![[0.0; 2]; c];
            for l in 0..planes {
                for y in y0..y1 {
                    for x in x0..x1 {
                        let pix = y * w + x;
                        for (ch, gc) in g.iter_mut().enumerate() {
                            let v = upstream[l].channel(ch)[pix];
                            *gc = [v.re, v.im];
                        }
                        if g.iter().all(|v| v[0] == 0.0 && v[1] == 0.0) {
                            continue;
                        }
                        backward_pixel(&frame, aux, list, l, [x as f64, y as f64], pix, &g, &mut part, stride);
                    }
                }
            }
            part
        })
        .collect();

    let n_total = scene.len();
    let mut acc = vec![0.0; n_total * stride];
    for (tile, part) in partials.iter().enumerate() {
        for (k, n) in tiles.lists[tile].iter().enumerate() {
            let dst = &mut acc[*n as usize * stride..(*n as usize + 1) * stride];
            for (d, s) in dst.iter_mut().zip(&part[k * stride..(k + 1) * stride]) {
                *d += s;
            }
        }
    }

    let mut grads = scene.zeros_like();
    let mut grad_rho = vec![0.0; n_total * planes];
    let mut screen = vec![0.0; n_total];
    let geometry: Vec<Option<crate::projection::GeometryGrad>> = (0..n_total)
        .into_par_iter()
        .map(|n| {
            aux.projected[n].as_ref().map(|pg| {
                let a = &acc[n * stride..(n + 1) * stride];
                project_backward(scene, n, cam, pg, [a[0], a[1]], [a[2], a[3], a[4]])
            })
        })
        .collect();
    for n in 0..n_total {
        let Some(pg) = aux.projected[n].as_ref() else { continue };
        let a = &acc[n * stride..(n + 1) * stride];
        let geo = geometry[n].expect("visible primitives have geometry gradients");
        grads.params.positions[3 * n..3 * n + 3].copy_from_slice(&geo.position);
        grads.params.rotations[4 * n..4 * n + 4].copy_from_slice(&geo.rotation);
        grads.params.log_scales[3 * n..3 * n + 3].copy_from_slice(&geo.log_scale);
        grads.params.opacity_logits[n] = a[5] * pg.opacity * (1.0 - pg.opacity);
        grads.params.amplitudes[n * c..(n + 1) * c].copy_from_slice(&a[6..6 + c]);
        grads.params.phases[n * c..(n + 1) * c].copy_from_slice(&a[6 + c..6 + 2 * c]);
        grad_rho[n * planes..(n + 1) * planes].copy_from_slice(&a[6 + 2 * c..]);
        screen[n] = a[0].hypot(a[1]);
    }
    Ok(RasterGradients { scene: grads, rho: grad_rho, screen_mean_norm: screen })
}

/// Reverse traversal of one pixel of plane `l`. Primitives on other planes
/// still receive `∂L/∂ρ` for this plane, evaluated at `ρ = 0`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn backward_pixel(
    frame: &Frame,
    aux: &RasterAux,
    list: &[u32],
    l: usize,
    px: [f64; 2],
    pix: usize,
    g: &[[f64; 2]],
    part: &mut [f64],
    stride: usize,
) {
    let settings = &frame.settings;
    let (c, planes) = (frame.channels, frame.planes);
    let plane_pix = l * aux.width * aux.height + pix;
    let mut t = aux.final_transmittance[plane_pix];
    let last = aux.last_contributor[plane_pix];
    let terminated = settings.transmittance_eps.is_some_and(|e| t < e);
    let bound = if terminated { last } else { NONE };
    let mut s = 0.0;
    for (k, &n) in list.iter().enumerate().rev() {
        let n = n as usize;
        if frame.rank[n] > bound {
            continue;
        }
        let sp = &frame.splats[n];
        let rho = frame.rho[n * planes + l];
        let dst = &mut part[k * stride..(k + 1) * stride];
        if rho < settings.plane_eps {
            let power = screen_power(sp.mean, sp.conic, px);
            if power > 0.0 {
                continue;
            }
            let gw = power.exp();
            if sp.opacity * gw < settings.alpha_min {
                continue;
            }
            let dot: f64 = (0..c)
                .map(|ch| {
                    let col = frame.color[n * c + ch];
                    g[ch][0] * col[0] + g[ch][1] * col[1]
                })
                .sum();
            dst[6 + 2 * c + l] += sp.opacity * gw * (dot * t - s);
            continue;
        }
        let Some((alpha, gw, clamped)) = frame.alpha(n, l, px) else { continue };
        let tk = t / (1.0 - alpha);
        let pg = aux.projected[n].as_ref().expect("listed primitives are visible");
        let mut dot = 0.0;
        let weight = alpha * tk;
        for ch in 0..c {
            let col = frame.color[n * c + ch];
            dot += g[ch][0] * col[0] + g[ch][1] * col[1];
            let (sn, cs) = pg.phases[ch].sin_cos();
            dst[6 + ch] += weight * (cs * g[ch][0] + sn * g[ch][1]);
            dst[6 + c + ch] += weight * pg.amplitudes[ch] * (-sn * g[ch][0] + cs * g[ch][1]);
        }
        let dl_dalpha = dot * tk - s / (1.0 - alpha);
        s += dot * weight;
        t = tk;
        if clamped {
            continue;
        }
        dst[5] += dl_dalpha * gw * rho;
        dst[6 + 2 * c + l] += dl_dalpha * sp.opacity * gw;
        let dpower = dl_dalpha * alpha;
        let dx = px[0] - sp.mean[0];
        let dy = px[1] - sp.mean[1];
        dst[0] += dpower * (sp.conic[0] * dx + sp.conic[1] * dy);
        dst[1] += dpower * (sp.conic[1] * dx + sp.conic[2] * dy);
        dst[2] += dpower * (-0.5 * dx * dx);
        dst[3] += dpower * (-dx * dy);
        dst[4] += dpower * (-0.5 * dy * dy);
    }
}
