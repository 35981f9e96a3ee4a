//! Angular-spectrum propagation between depth planes and the hologram plane.
//!
//! The transfer function is sampled directly on the unshifted FFT frequency
//! grid `f = k / (N·Δx)`, so no fftshift is needed around the transforms.
//! Because `H(-z) = conj(H(z))`, propagating by `-z` is both the inverse and
//! the adjoint of propagating by `z`; the backward pass relies on this.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{freq_index, Fft2};
use crate::field::{plane_positions, ComplexField, WaveConfig};

/// Sampled ASM transfer function for one wavelength and distance.
#[derive(Debug, Clone)]
pub struct TransferFunction {
    pub width: usize,
    pub height: usize,
    pub wavelength: f64,
    pub distance: f64,
    pub data: Vec<Complex64>,
    pub band_mask: Vec<bool>,
}

/// Evanescent-cutoff transfer function on the wrapped DFT grid.
pub fn transfer_function(
    resolution: (usize, usize),
    pixel_pitch: f64,
    wavelength: f64,
    z: f64,
) -> Result<TransferFunction> {
    transfer_function_with(resolution, pixel_pitch, wavelength, z, false)
}

/// Like [`transfer_function`], optionally adding the local-frequency limit
/// of band-limited ASM. That limit depends on `|z|` only, so the
/// conjugate-inverse relation between `z` and `-z` still holds.
pub fn transfer_function_with(
    resolution: (usize, usize),
    pixel_pitch: f64,
    wavelength: f64,
    z: f64,
    local_limit: bool,
) -> Result<TransferFunction> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::InvalidArgument(format!("wavelength must be > 0, got {wavelength}")));
    }
    if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
        return Err(Error::InvalidArgument(format!("pixel pitch must be > 0, got {pixel_pitch}")));
    }
    if !z.is_finite() {
        return Err(Error::InvalidArgument("propagation distance must be finite".into()));
    }
    let (w, h) = resolution;
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let inv_lambda_sq = 1.0 / (wavelength * wavelength);
    let dfx = 1.0 / (w as f64 * pixel_pitch);
    let dfy = 1.0 / (h as f64 * pixel_pitch);
    let limit = |df: f64| 1.0 / (wavelength * ((2.0 * df * z).powi(2) + 1.0).sqrt());
    let (fx_limit, fy_limit) = if local_limit { (limit(dfx), limit(dfy)) } else { (f64::INFINITY, f64::INFINITY) };

    let mut data = Vec::with_capacity(w * h);
    let mut band_mask = Vec::with_capacity(w * h);
    for iy in 0..h {
        let fy = freq_index(iy, h) as f64 * dfy;
        for ix in 0..w {
            let fx = freq_index(ix, w) as f64 * dfx;
            let radial = fx * fx + fy * fy;
            let inside = radial <= inv_lambda_sq && fx.abs() < fx_limit && fy.abs() < fy_limit;
            if inside {
                let phase = 2.0 * PI * z * (inv_lambda_sq - radial).sqrt();
                data.push(Complex64::from_polar(1.0, phase));
            } else {
                data.push(Complex64::new(0.0, 0.0));
            }
            band_mask.push(inside);
        }
    }
    Ok(TransferFunction { width: w, height: h, wavelength, distance: z, data, band_mask })
}

type TransferKey = (usize, u64);

/// Propagation engine for one [`WaveConfig`]: caches FFT plans and transfer
/// functions. Shared read-only across threads.
pub struct Propagator {
    cfg: WaveConfig,
    planes: Vec<f64>,
    fft: Fft2,
    cache: RwLock<HashMap<TransferKey, Arc<Vec<Complex64>>>>,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator").field("cfg", &self.cfg).field("planes", &self.planes).finish()
    }
}

impl Propagator {
    pub fn new(cfg: &WaveConfig) -> Result<Self> {
        cfg.validate()?;
        let (tw, th) = Self::transform_size(cfg);
        Ok(Self {
            cfg: cfg.clone(),
            planes: plane_positions(cfg),
            fft: Fft2::new(tw, th),
            cache: RwLock::new(HashMap::new()),
        })
    }

    fn transform_size(cfg: &WaveConfig) -> (usize, usize) {
        if cfg.pad2x {
            (2 * cfg.width(), 2 * cfg.height())
        } else {
            (cfg.width(), cfg.height())
        }
    }

    pub fn config(&self) -> &WaveConfig {
        &self.cfg
    }

    pub fn plane_positions(&self) -> &[f64] {
        &self.planes
    }

    /// Transfer function for `channel` at distance `z` on the transform grid.
    pub fn transfer(&self, channel: usize, z: f64) -> Result<Arc<Vec<Complex64>>> {
        let key = (channel, z.to_bits());
        if let Some(h) = self.cache.read().expect("transfer cache poisoned").get(&key) {
            return Ok(Arc::clone(h));
        }
        let tf = transfer_function_with(
            (self.fft.width(), self.fft.height()),
            self.cfg.pixel_pitch,
            self.cfg.wavelengths[channel],
            z,
            self.cfg.band_limit,
        )?;
        let h = Arc::new(tf.data);
        self.cache.write().expect("transfer cache poisoned").insert(key, Arc::clone(&h));
        Ok(h)
    }

    /// Pads (if configured) and transforms one channel plane.
    fn spectrum(&self, plane: &[Complex64]) -> Vec<Complex64> {
        let (w, h) = (self.cfg.width(), self.cfg.height());
        let mut buf = if self.cfg.pad2x {
            let tw = 2 * w;
            let mut buf = vec![Complex64::new(0.0, 0.0); tw * 2 * h];
            let (ox, oy) = (w / 2, h / 2);
            for y in 0..h {
                buf[(y + oy) * tw + ox..(y + oy) * tw + ox + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
            }
            buf
        } else {
            plane.to_vec()
        };
        self.fft.forward(&mut buf);
        buf
    }

    /// Inverse transform and crop back to the configured grid.
    fn unspectrum(&self, mut spec: Vec<Complex64>, out: &mut [Complex64]) {
        self.fft.inverse(&mut spec);
        let (w, h) = (self.cfg.width(), self.cfg.height());
        if self.cfg.pad2x {
            let tw = 2 * w;
            let (ox, oy) = (w / 2, h / 2);
            for y in 0..h {
                out[y * w..(y + 1) * w].copy_from_slice(&spec[(y + oy) * tw + ox..(y + oy) * tw + ox + w]);
            }
        } else {
            out.copy_from_slice(&spec);
        }
    }

    /// `IFFT(H_z · FFT(field))` per channel.
    pub fn propagate(&self, field: &ComplexField, z: f64) -> Result<ComplexField> {
        field.check_matches(&self.cfg)?;
        let mut out = field.clone();
        let n = field.plane_len();
        out.data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(c, dst)| -> Result<()> {
                let tf = self.transfer(c, z)?;
                let mut spec = self.spectrum(field.channel(c));
                spec.iter_mut().zip(tf.iter()).for_each(|(s, h)| *s *= h);
                self.unspectrum(spec, dst);
                Ok(())
            })?;
        Ok(out)
    }

    /// Coherent sum of every tagged layer propagated to the hologram plane.
    ///
    /// Spectra are accumulated in the frequency domain so each channel needs
    /// a single inverse transform.
    pub fn forward_record(&self, layers: &[ComplexField]) -> Result<ComplexField> {
        let planes = self.planes.len();
        if layers.len() != planes {
            return Err(Error::Shape(format!("expected {planes} layers, got {}", layers.len())));
        }
        let mut seen = vec![false; planes];
        for layer in layers {
            layer.check_matches(&self.cfg)?;
            let tag = layer
                .plane_tag
                .ok_or_else(|| Error::InvalidArgument("layer is missing its plane tag".into()))?;
            if tag >= planes || seen[tag] {
                return Err(Error::InvalidArgument(format!("invalid or duplicate plane tag {tag}")));
            }
            seen[tag] = true;
        }
        let mut out = ComplexField::for_config(&self.cfg)?;
        let n = out.plane_len();
        out.data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(c, dst)| -> Result<()> {
                let mut acc: Option<Vec<Complex64>> = None;
                for layer in layers {
                    let z = self.planes[layer.plane_tag.unwrap_or_default()];
                    let tf = self.transfer(c, z)?;
                    let spec = self.spectrum(layer.channel(c));
                    match acc.as_mut() {
                        None => acc = Some(spec.iter().zip(tf.iter()).map(|(s, h)| s * h).collect()),
                        Some(a) => a.iter_mut().zip(spec.iter().zip(tf.iter())).for_each(|(a, (s, h))| *a += s * h),
                    }
                }
                if let Some(spec) = acc {
                    self.unspectrum(spec, dst);
                }
                Ok(())
            })?;
        Ok(out)
    }

    /// Back-propagates the hologram to each depth plane; returns tagged fields
    /// in plane order.
    pub fn inverse_propagate(&self, hologram: &ComplexField) -> Result<Vec<ComplexField>> {
        hologram.check_matches(&self.cfg)?;
        let channels = hologram.channels();
        let n = hologram.plane_len();
        let spectra: Vec<Vec<Complex64>> =
            (0..channels).into_par_iter().map(|c| self.spectrum(hologram.channel(c))).collect();
        self.planes
            .par_iter()
            .enumerate()
            .map(|(l, &z)| {
                let mut out = ComplexField::for_config(&self.cfg)?.with_tag(l);
                for (c, spec) in spectra.iter().enumerate() {
                    let tf = self.transfer(c, -z)?;
                    let prod: Vec<Complex64> = spec.iter().zip(tf.iter()).map(|(s, h)| s * h).collect();
                    self.unspectrum(prod, &mut out.data_mut()[c * n..(c + 1) * n]);
                }
                Ok(out)
            })
            .collect()
    }
}

pub fn propagate(field: &ComplexField, z: f64, cfg: &WaveConfig) -> Result<ComplexField> {
    Propagator::new(cfg)?.propagate(field, z)
}

pub fn forward_record(layers: &[ComplexField], cfg: &WaveConfig) -> Result<ComplexField> {
    Propagator::new(cfg)?.forward_record(layers)
}

pub fn inverse_propagate(hologram: &ComplexField, cfg: &WaveConfig) -> Result<Vec<ComplexField>> {
    Propagator::new(cfg)?.inverse_propagate(hologram)
}

/// Sampling grid on the hologram plane. Pixel `(i, j)` sits at
/// `((i - W/2)·Δx, (j - H/2)·Δx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
}

impl Grid {
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 - (self.width / 2) as f64) * self.pixel_pitch,
            (j as f64 - (self.height / 2) as f64) * self.pixel_pitch,
        )
    }
}

/// Radial falloff applied by [`point_source_field`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointFalloff {
    /// Constant amplitude, `A·exp(jφ)`.
    #[default]
    None,
    /// Spherical-wave falloff, `A·exp(jkD)/D`.
    InverseDistance,
}

/// Spherical-wave phase sampled from a single point emitter.
pub fn point_source_field(
    center: [f64; 3],
    amplitude: f64,
    wavelength: f64,
    grid: Grid,
    falloff: PointFalloff,
) -> Result<ComplexField> {
    let [cx, cy, cz] = center;
    if !(cz > 0.0) {
        return Err(Error::InvalidArgument(format!("point source depth must be > 0, got {cz}")));
    }
    if !(wavelength > 0.0) {
        return Err(Error::InvalidArgument("wavelength must be > 0".into()));
    }
    let k = 2.0 * PI / wavelength;
    let mut field = ComplexField::zeros(grid.width, grid.height, 1, grid.pixel_pitch)?;
    for j in 0..grid.height {
        for i in 0..grid.width {
            let (x, y) = grid.coords(i, j);
            let dist = ((x - cx).powi(2) + (y - cy).powi(2) + cz * cz).sqrt();
            let phase = (k * dist).rem_euclid(2.0 * PI);
            let amp = match falloff {
                PointFalloff::None => amplitude,
                PointFalloff::InverseDistance => amplitude / dist,
            };
            field.set(0, i, j, Complex64::from_polar(amp, phase));
        }
    }
    Ok(field)
}

/// Paraxial (quadratic) approximation of the point-source phase, wrapped to
/// `[0, 2π)`. Row-major `W x H`.
pub fn paraxial_phase(center: [f64; 3], wavelength: f64, grid: Grid) -> Result<Vec<f64>> {
    let [cx, cy, cz] = center;
    if !(cz > 0.0) {
        return Err(Error::InvalidArgument(format!("point source depth must be > 0, got {cz}")));
    }
    let k = 2.0 * PI / wavelength;
    let mut out = Vec::with_capacity(grid.width * grid.height);
    for j in 0..grid.height {
        for i in 0..grid.width {
            let (x, y) = grid.coords(i, j);
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            out.push((k * (cz + r2 / (2.0 * cz))).rem_euclid(2.0 * PI));
        }
    }
    Ok(out)
}

/// Smallest signed angle between two phases.
pub fn wrapped_phase_diff(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(2.0 * PI) - PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(cfg: &WaveConfig, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ComplexField::for_config(cfg).unwrap();
        for z in f.data_mut() {
            *z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        f
    }

    #[test]
    fn on_axis_and_zero_distance() {
        let lambda = 532e-9;
        let z = 1.3e-3;
        let tf = transfer_function((8, 8), 3.74e-6, lambda, z).unwrap();
        let expected = Complex64::from_polar(1.0, 2.0 * PI * z / lambda);
        assert!((tf.data[0] - expected).norm() < 1e-12);
        let zero = transfer_function((8, 8), 3.74e-6, lambda, 0.0).unwrap();
        for (h, m) in zero.data.iter().zip(&zero.band_mask) {
            assert_eq!(*h, if *m { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
        }
    }

    #[test]
    fn evanescent_bins_are_zeroed() {
        // 0.2 µm pitch puts the grid's high frequencies past 1/λ.
        let lambda = 532e-9;
        let tf = transfer_function((16, 16), 0.2e-6, lambda, 1e-4).unwrap();
        let cutoff = 1.0 / (lambda * lambda);
        let mut outside = 0;
        for iy in 0..16 {
            for ix in 0..16 {
                let fx = freq_index(ix, 16) as f64 / (16.0 * 0.2e-6);
                let fy = freq_index(iy, 16) as f64 / (16.0 * 0.2e-6);
                let idx = iy * 16 + ix;
                if fx * fx + fy * fy > cutoff {
                    outside += 1;
                    assert_eq!(tf.data[idx], Complex64::new(0.0, 0.0));
                    assert!(!tf.band_mask[idx]);
                } else {
                    assert!((tf.data[idx].norm() - 1.0).abs() < 1e-12);
                }
            }
        }
        assert!(outside > 0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(transfer_function((4, 4), 1e-6, 0.0, 1e-3).is_err());
        assert!(transfer_function((4, 4), -1e-6, 5e-7, 1e-3).is_err());
        assert!(point_source_field([0.0, 0.0, 0.0], 1.0, 5e-7, Grid { width: 4, height: 4, pixel_pitch: 1e-6 }, PointFalloff::None).is_err());
        assert!(paraxial_phase([0.0, 0.0, -1.0], 5e-7, Grid { width: 4, height: 4, pixel_pitch: 1e-6 }).is_err());
    }

    #[test]
    fn conjugate_inverse_is_exact() {
        for local in [false, true] {
            let a = transfer_function_with((12, 10), 3.74e-6, 473e-9, 2.5e-3, local).unwrap();
            let b = transfer_function_with((12, 10), 3.74e-6, 473e-9, -2.5e-3, local).unwrap();
            assert_eq!(a.band_mask, b.band_mask);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x, y.conj());
            }
        }
    }

    #[test]
    fn dc_field_picks_up_on_axis_phase() {
        let cfg = WaveConfig::new(1, 8, 8);
        let c = Complex64::new(0.3, -0.2);
        let f = ComplexField::from_vec(8, 8, 3, cfg.pixel_pitch, vec![c; 192]).unwrap();
        let z = 1e-3;
        let out = propagate(&f, z, &cfg).unwrap();
        for ch in 0..3 {
            let expected = c * Complex64::from_polar(1.0, 2.0 * PI * z / cfg.wavelengths[ch]);
            for v in out.channel(ch) {
                assert!((v - expected).norm() < 1e-12);
            }
        }
        let zero = ComplexField::for_config(&cfg).unwrap();
        assert!(propagate(&zero, z, &cfg).unwrap().data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn round_trip_and_composition() {
        let cfg = WaveConfig::new(1, 32, 24);
        let u = random_field(&cfg, 7);
        let p = Propagator::new(&cfg).unwrap();
        let there = p.propagate(&u, 2e-3).unwrap();
        let back = p.propagate(&there, -2e-3).unwrap();
        assert!(back.max_abs_diff(&u) < 1e-10);
        let a = p.propagate(&p.propagate(&u, 1e-3).unwrap(), 1.5e-3).unwrap();
        let b = p.propagate(&u, 2.5e-3).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
        let e0 = crate::field::energy(&u).unwrap();
        let e1 = crate::field::energy(&there).unwrap();
        assert!((e0 - e1).abs() / e0 < 1e-10);
    }

    #[test]
    fn padded_propagation_round_trips_for_compact_fields() {
        let mut cfg = WaveConfig::new(1, 16, 16);
        cfg.pad2x = true;
        let u = random_field(&cfg, 3);
        let p = Propagator::new(&cfg).unwrap();
        let once = p.propagate(&u, 0.0).unwrap();
        assert!(once.max_abs_diff(&u) < 1e-12);
        assert!(p.propagate(&u, 1e-3).unwrap().is_finite());
        assert!(propagate(&ComplexField::zeros(8, 8, 3, 1e-6).unwrap(), 1e-3, &cfg).is_err());
    }

    #[test]
    fn forward_record_single_and_sum() {
        let mut cfg = WaveConfig::new(1, 16, 16);
        let u = random_field(&cfg, 1).with_tag(0);
        let p = Propagator::new(&cfg).unwrap();
        let rec = p.forward_record(std::slice::from_ref(&u)).unwrap();
        let direct = p.propagate(&u, 2e-3).unwrap();
        assert!(rec.max_abs_diff(&direct) < 1e-12);

        cfg.num_planes = 2;
        let p = Propagator::new(&cfg).unwrap();
        let zero = ComplexField::for_config(&cfg).unwrap().with_tag(1);
        let rec = p.forward_record(&[u.clone(), zero.clone()]).unwrap();
        let direct = p.propagate(&u, p.plane_positions()[0]).unwrap();
        assert!(rec.max_abs_diff(&direct) < 1e-12);

        let silent = p.forward_record(&[zero.clone().with_tag(0), zero.clone()]).unwrap();
        assert!(silent.data().iter().all(|v| v.norm() == 0.0));

        let untagged = ComplexField::for_config(&cfg).unwrap();
        assert!(p.forward_record(&[untagged, zero.clone()]).is_err());
        assert!(p.forward_record(&[zero.clone(), zero]).is_err());
    }

    #[test]
    fn inverse_propagate_recovers_single_layer() {
        let cfg = WaveConfig::new(1, 16, 16);
        let p = Propagator::new(&cfg).unwrap();
        let u = random_field(&cfg, 11);
        let holo = p.propagate(&u, p.plane_positions()[0]).unwrap();
        let back = p.inverse_propagate(&holo).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].plane_tag, Some(0));
        assert!(back[0].max_abs_diff(&u) < 1e-10);
        let zeros = p.inverse_propagate(&ComplexField::for_config(&cfg).unwrap()).unwrap();
        assert!(zeros.iter().all(|f| f.data().iter().all(|v| v.norm() == 0.0)));
    }

    #[test]
    fn inverse_propagate_is_linear() {
        let cfg = WaveConfig::new(3, 16, 8);
        let p = Propagator::new(&cfg).unwrap();
        let p1 = random_field(&cfg, 21);
        let p2 = random_field(&cfg, 22);
        let (a, b) = (Complex64::new(0.7, -0.4), Complex64::new(-1.2, 0.3));
        let mut mix = p1.clone();
        mix.scale(a);
        let mut tmp = p2.clone();
        tmp.scale(b);
        mix.add_assign(&tmp).unwrap();
        let lhs = p.inverse_propagate(&mix).unwrap();
        let r1 = p.inverse_propagate(&p1).unwrap();
        let r2 = p.inverse_propagate(&p2).unwrap();
        for l in 0..3 {
            for i in 0..lhs[l].data().len() {
                let expected = a * r1[l].data()[i] + b * r2[l].data()[i];
                assert!((lhs[l].data()[i] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_record_is_adjoint_of_inverse_propagate() {
        let cfg = WaveConfig::new(2, 12, 12);
        let p = Propagator::new(&cfg).unwrap();
        let holo = random_field(&cfg, 5);
        let layers: Vec<_> = (0..2).map(|l| random_field(&cfg, 40 + l as u64).with_tag(l)).collect();
        // <inverse(P), V> == <P, forward(V)>
        let inv = p.inverse_propagate(&holo).unwrap();
        let lhs: Complex64 = inv
            .iter()
            .zip(&layers)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| x.conj() * y))
            .sum();
        let fwd = p.forward_record(&layers).unwrap();
        let rhs: Complex64 = holo.data().iter().zip(fwd.data()).map(|(x, y)| x.conj() * y).sum();
        assert!((lhs - rhs).norm() < 1e-9 * lhs.norm().max(1.0));
    }

    #[test]
    fn point_source_on_axis_and_zero_amplitude() {
        let grid = Grid { width: 9, height: 9, pixel_pitch: 3.74e-6 };
        let (lambda, z) = (532e-9, 2e-3);
        let f = point_source_field([0.0, 0.0, z], 1.0, lambda, grid, PointFalloff::None).unwrap();
        let expected = (2.0 * PI * z / lambda).rem_euclid(2.0 * PI);
        assert!(wrapped_phase_diff(f.at(0, 4, 4).arg(), expected).abs() < 1e-9);
        let px = paraxial_phase([0.0, 0.0, z], lambda, grid).unwrap();
        assert!(wrapped_phase_diff(px[4 * 9 + 4], expected).abs() < 1e-9);
        let silent = point_source_field([0.0, 0.0, z], 0.0, lambda, grid, PointFalloff::None).unwrap();
        assert!(silent.data().iter().all(|v| v.norm() == 0.0));
        let falloff = point_source_field([0.0, 0.0, z], 1.0, lambda, grid, PointFalloff::InverseDistance).unwrap();
        assert!((falloff.at(0, 4, 4).norm() - 1.0 / z).abs() < 1e-6);
    }

    #[test]
    fn paraxial_error_within_taylor_bound() {
        let grid = Grid { width: 64, height: 64, pixel_pitch: 3.74e-6 };
        let (lambda, z) = (473e-9, 1e-3);
        let center = [10e-6, -5e-6, z];
        let exact = point_source_field(center, 1.0, lambda, grid, PointFalloff::None).unwrap();
        let approx = paraxial_phase(center, lambda, grid).unwrap();
        for j in 0..64 {
            for i in 0..64 {
                let (x, y) = grid.coords(i, j);
                let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                let bound = PI / lambda * r2 * r2 / (4.0 * z.powi(3));
                let diff = wrapped_phase_diff(exact.at(0, i, j).arg(), approx[j * 64 + i]).abs();
                assert!(diff <= bound + 1e-9, "({i},{j}) diff {diff} bound {bound}");
            }
        }
    }

    #[test]
    fn paraxial_close_in_near_axis_regime() {
        // r²/Z² < 1e-3 everywhere on this grid.
        let grid = Grid { width: 32, height: 32, pixel_pitch: 3.74e-6 };
        let (lambda, z) = (532e-9, 5e-3);
        let exact = point_source_field([0.0, 0.0, z], 1.0, lambda, grid, PointFalloff::None).unwrap();
        let approx = paraxial_phase([0.0, 0.0, z], lambda, grid).unwrap();
        for j in 0..32 {
            for i in 0..32 {
                let (x, y) = grid.coords(i, j);
                assert!((x * x + y * y) / (z * z) < 1e-3);
                assert!(wrapped_phase_diff(exact.at(0, i, j).arg(), approx[j * 32 + i]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn doubling_wavelength_halves_unwrapped_phase() {
        // φ(2λ) = φ(λ)/2 before wrapping, hence 2·φ(2λ) ≡ φ(λ) (mod 2π).
        let grid = Grid { width: 16, height: 16, pixel_pitch: 3.74e-6 };
        let center = [3e-6, 1e-6, 2e-3];
        let a = paraxial_phase(center, 500e-9, grid).unwrap();
        let b = paraxial_phase(center, 1000e-9, grid).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!(wrapped_phase_diff(2.0 * pb, *pa).abs() < 1e-6);
        }
    }
}
