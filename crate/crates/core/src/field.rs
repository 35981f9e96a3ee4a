//! Wave-field containers and the optical configuration shared by every stage.
//!
//! Samples are stored planar: one `width x height` plane per wavelength
//! channel, row-major inside a plane, channel outermost.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optical configuration of the hologram and its depth-plane stack.
///
/// All lengths are in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    #[serde(default = "WaveConfig::default_pixel_pitch")]
    pub pixel_pitch: f64,
    #[serde(default = "WaveConfig::default_wavelengths")]
    pub wavelengths: Vec<f64>,
    /// Distance from the hologram plane to the center of the plane stack.
    #[serde(default = "WaveConfig::default_distance")]
    pub propagation_distance: f64,
    #[serde(default = "WaveConfig::default_volume_depth")]
    pub volume_depth: f64,
    pub num_planes: usize,
    /// `(n_x, n_y)`, i.e. width then height.
    pub resolution: (usize, usize),
    /// Additionally apply the local-frequency limit of band-limited ASM.
    #[serde(default)]
    pub band_limit: bool,
    /// Zero-pad to twice the size before propagating, then crop.
    #[serde(default)]
    pub pad2x: bool,
}

impl WaveConfig {
    fn default_pixel_pitch() -> f64 {
        3.74e-6
    }
    fn default_wavelengths() -> Vec<f64> {
        vec![639e-9, 532e-9, 473e-9]
    }
    fn default_distance() -> f64 {
        2e-3
    }
    fn default_volume_depth() -> f64 {
        4e-3
    }

    /// Default optics with the given plane count and resolution.
    pub fn new(num_planes: usize, width: usize, height: usize) -> Self {
        Self {
            pixel_pitch: Self::default_pixel_pitch(),
            wavelengths: Self::default_wavelengths(),
            propagation_distance: Self::default_distance(),
            volume_depth: Self::default_volume_depth(),
            num_planes,
            resolution: (width, height),
            band_limit: false,
            pad2x: false,
        }
    }

    pub fn width(&self) -> usize {
        self.resolution.0
    }

    pub fn height(&self) -> usize {
        self.resolution.1
    }

    pub fn channels(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return Err(Error::Config(format!("pixel_pitch must be > 0, got {}", self.pixel_pitch)));
        }
        if self.wavelengths.is_empty() {
            return Err(Error::Config("at least one wavelength is required".into()));
        }
        if let Some(w) = self.wavelengths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("wavelengths must be > 0, got {w}")));
        }
        if self.num_planes == 0 {
            return Err(Error::Config("num_planes must be >= 1".into()));
        }
        if !(self.volume_depth >= 0.0 && self.volume_depth.is_finite()) {
            return Err(Error::Config(format!("volume_depth must be >= 0, got {}", self.volume_depth)));
        }
        if !self.propagation_distance.is_finite() {
            return Err(Error::Config("propagation_distance must be finite".into()));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::Config(format!("resolution must be positive, got {:?}", self.resolution)));
        }
        Ok(())
    }

    /// Spacing between neighbouring depth planes; zero for a single plane.
    pub fn plane_spacing(&self) -> f64 {
        if self.num_planes > 1 {
            self.volume_depth / (self.num_planes - 1) as f64
        } else {
            0.0
        }
    }
}

/// Positions of the depth planes, symmetric about the propagation distance.
pub fn plane_positions(cfg: &WaveConfig) -> Vec<f64> {
    let planes = cfg.num_planes;
    let d = cfg.propagation_distance;
    if planes <= 1 {
        return vec![d; planes];
    }
    let half_span = 0.5 * cfg.volume_depth;
    let denom = (planes - 1) as f64;
    (0..planes)
        .map(|l| d + half_span * (2.0 * l as f64 - denom) / denom)
        .collect()
}

/// A planar multi-channel grid of complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    width: usize,
    height: usize,
    channels: usize,
    pub pixel_pitch: f64,
    /// Depth plane this field belongs to, if any.
    pub plane_tag: Option<usize>,
    data: Vec<Complex64>,
}

pub const FIELD_MAGIC: &[u8; 16] = b"HOLOFIELD\0\0\0\0\0\0\0";

impl ComplexField {
    pub fn zeros(width: usize, height: usize, channels: usize, pixel_pitch: f64) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "field dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixel_pitch,
            plane_tag: None,
            data: vec![Complex64::new(0.0, 0.0); width * height * channels],
        })
    }

    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        pixel_pitch: f64,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument("field dimensions must be positive".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, pixel_pitch, plane_tag: None, data })
    }

    /// Zero field shaped for `cfg`.
    pub fn for_config(cfg: &WaveConfig) -> Result<Self> {
        Self::zeros(cfg.width(), cfg.height(), cfg.channels(), cfg.pixel_pitch)
    }

    pub fn with_tag(mut self, plane: usize) -> Self {
        self.plane_tag = Some(plane);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> Complex64 {
        self.data[c * self.plane_len() + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: Complex64) {
        let n = self.plane_len();
        self.data[c * n + y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &ComplexField) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_matches(&self, cfg: &WaveConfig) -> Result<()> {
        if self.width != cfg.width() || self.height != cfg.height() || self.channels != cfg.channels() {
            return Err(Error::Shape(format!(
                "field is {}x{}x{}, configuration expects {}x{}x{}",
                self.width,
                self.height,
                self.channels,
                cfg.width(),
                cfg.height(),
                cfg.channels()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&mut self, s: Complex64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &ComplexField) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("cannot add fields of different shapes".into()));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ComplexField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        for dim in [self.width, self.height, self.channels] {
            let dim = u32::try_from(dim).map_err(|_| Error::TooLarge("field dimension exceeds u32".into()))?;
            w.write_all(&dim.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 16);
        for z in &self.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a HOLOFIELD stream. The format carries no pixel pitch; the caller
    /// supplies it.
    pub fn read_from<R: Read>(mut r: R, pixel_pitch: f64) -> Result<Self> {
        let mut magic = [0u8; 16];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("bad HOLOFIELD magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [w, h, c] = dims;
        let count = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(c))
            .ok_or_else(|| Error::Format("field dimensions overflow".into()))?;
        let mut bytes = vec![0u8; count * 16];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(16)
            .map(|chunk| {
                let re = f64::from_le_bytes(chunk[..8].try_into().unwrap());
                let im = f64::from_le_bytes(chunk[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        let field = Self::from_vec(w, h, c, pixel_pitch, data)?;
        if !field.is_finite() {
            return Err(Error::NonFinite("HOLOFIELD payload"));
        }
        Ok(field)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>, pixel_pitch: f64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f), pixel_pitch)
    }
}

pub fn field_zeros(resolution: (usize, usize), channels: usize, pixel_pitch: f64) -> Result<ComplexField> {
    ComplexField::zeros(resolution.0, resolution.1, channels, pixel_pitch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Reconstructed,
    Target,
}

/// Non-negative planar intensity image, same layout as [`ComplexField`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub provenance: Provenance,
    pub data: Vec<f64>,
}

impl IntensityImage {
    pub fn zeros(width: usize, height: usize, channels: usize, provenance: Provenance) -> Self {
        Self { width, height, channels, provenance, data: vec![0.0; width * height * channels] }
    }

    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        provenance: Provenance,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "expected {} intensity samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("intensities must be finite and non-negative".into()));
        }
        Ok(Self { width, height, channels, provenance, data })
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &IntensityImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Per-sample squared modulus.
pub fn intensity(field: &ComplexField) -> Result<IntensityImage> {
    if !field.is_finite() {
        return Err(Error::NonFinite("field"));
    }
    Ok(IntensityImage {
        width: field.width(),
        height: field.height(),
        channels: field.channels(),
        provenance: Provenance::Reconstructed,
        data: field.data().iter().map(|z| z.norm_sqr()).collect(),
    })
}

/// Total energy, the sum of squared moduli over every sample.
pub fn energy(field: &ComplexField) -> Result<f64> {
    if !field.is_finite() {
        return Err(Error::NonFinite("field"));
    }
    Ok(field.data().iter().map(|z| z.norm_sqr()).sum())
}
