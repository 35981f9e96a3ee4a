//! Complex-valued Gaussian primitives stored as a structure of arrays.
//!
//! Every array is flat and row-major: `positions` is `N x 3`, `rotations`
//! `N x 4` (`w, x, y, z`), `log_scales` `N x 3`, `amplitudes` and `phases`
//! `N x C`, `opacity_logits` `N`, `plane_logits` `N x L`.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCENE_MAGIC: &[u8; 10] = b"HOLOSCENE1";

/// Optimizable parameter groups, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Positions,
    Rotations,
    Scales,
    Amplitudes,
    Opacities,
    Phases,
    PlaneLogits,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Positions,
        ParamGroup::Rotations,
        ParamGroup::Scales,
        ParamGroup::Amplitudes,
        ParamGroup::Opacities,
        ParamGroup::Phases,
        ParamGroup::PlaneLogits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Positions => "position",
            ParamGroup::Rotations => "rotation",
            ParamGroup::Scales => "scale",
            ParamGroup::Amplitudes => "amplitude",
            ParamGroup::Opacities => "opacity",
            ParamGroup::Phases => "phase",
            ParamGroup::PlaneLogits => "plane_logit",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Flat parameter arrays shared by the scene and its gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamArrays {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub phases: Vec<f64>,
    pub plane_logits: Vec<f64>,
}

impl ParamArrays {
    pub fn zeros(n: usize, channels: usize, planes: usize) -> Self {
        Self {
            positions: vec![0.0; 3 * n],
            rotations: vec![0.0; 4 * n],
            log_scales: vec![0.0; 3 * n],
            amplitudes: vec![0.0; channels * n],
            opacity_logits: vec![0.0; n],
            phases: vec![0.0; channels * n],
            plane_logits: vec![0.0; planes * n],
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::Positions => &self.positions,
            ParamGroup::Rotations => &self.rotations,
            ParamGroup::Scales => &self.log_scales,
            ParamGroup::Amplitudes => &self.amplitudes,
            ParamGroup::Opacities => &self.opacity_logits,
            ParamGroup::Phases => &self.phases,
            ParamGroup::PlaneLogits => &self.plane_logits,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut Vec<f64> {
        match g {
            ParamGroup::Positions => &mut self.positions,
            ParamGroup::Rotations => &mut self.rotations,
            ParamGroup::Scales => &mut self.log_scales,
            ParamGroup::Amplitudes => &mut self.amplitudes,
            ParamGroup::Opacities => &mut self.opacity_logits,
            ParamGroup::Phases => &mut self.phases,
            ParamGroup::PlaneLogits => &mut self.plane_logits,
        }
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL.iter().all(|g| self.group(*g).iter().all(|v| v.is_finite()))
    }

    /// Row stride of each group.
    pub fn stride(g: ParamGroup, channels: usize, planes: usize) -> usize {
        match g {
            ParamGroup::Positions | ParamGroup::Scales => 3,
            ParamGroup::Rotations => 4,
            ParamGroup::Amplitudes | ParamGroup::Phases => channels,
            ParamGroup::Opacities => 1,
            ParamGroup::PlaneLogits => planes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    channels: usize,
    planes: usize,
    pub params: ParamArrays,
}

/// Gradient of a scalar loss with respect to every stored scene parameter.
pub type SceneGradients = GaussianScene;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of `q / |q|`, `q = (w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / norm);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back onto the raw (unnormalized) quaternion.
pub fn rotation_matrix_backward(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / norm);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    // d(q/|q|)/dq = (I - q̂q̂ᵀ)/|q|
    let gh = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    let dot: f64 = gh.iter().zip(&qh).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (gh[i] - qh[i] * dot) / norm)
}

/// `R S Sᵀ Rᵀ` for a unit quaternion and positive scales.
pub fn covariance_3d(q: [f64; 4], scales: [f64; 3]) -> Result<Matrix3<f64>> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("quaternion is not unit length (|q| = {norm})")));
    }
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!("scales must be positive, got {scales:?}")));
    }
    Ok(covariance_from(q, scales))
}

pub(crate) fn covariance_from(q: [f64; 4], scales: [f64; 3]) -> Matrix3<f64> {
    let r = rotation_matrix(q);
    let s2 = Matrix3::from_diagonal(&Vector3::from(scales.map(|s| s * s)));
    let sigma = r * s2 * r.transpose();
    // symmetrize away rounding asymmetry
    (sigma + sigma.transpose()) * 0.5
}

impl GaussianScene {
    pub fn empty(channels: usize, planes: usize) -> Self {
        Self { channels, planes, params: ParamArrays::default() }
    }

    pub fn zeros(n: usize, channels: usize, planes: usize) -> Self {
        Self { channels, planes, params: ParamArrays::zeros(n, channels, planes) }
    }

    pub fn from_params(channels: usize, planes: usize, params: ParamArrays) -> Result<Self> {
        let n = params.opacity_logits.len();
        for g in ParamGroup::ALL {
            let expected = n * ParamArrays::stride(g, channels, planes);
            if params.group(g).len() != expected {
                return Err(Error::Shape(format!(
                    "{} array has {} values, expected {expected}",
                    g.name(),
                    params.group(g).len()
                )));
            }
        }
        Ok(Self { channels, planes, params })
    }

    pub fn len(&self) -> usize {
        self.params.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn stride(&self, g: ParamGroup) -> usize {
        ParamArrays::stride(g, self.channels, self.planes)
    }

    /// Zeroed gradient buffer shaped like this scene.
    pub fn zeros_like(&self) -> SceneGradients {
        Self::zeros(self.len(), self.channels, self.planes)
    }

    pub fn position(&self, n: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.params.positions[3 * n..3 * n + 3])
    }

    pub fn rotation(&self, n: usize) -> [f64; 4] {
        self.params.rotations[4 * n..4 * n + 4].try_into().unwrap()
    }

    pub fn scales(&self, n: usize) -> [f64; 3] {
        let s = &self.params.log_scales[3 * n..3 * n + 3];
        [s[0].exp(), s[1].exp(), s[2].exp()]
    }

    pub fn opacity(&self, n: usize) -> f64 {
        sigmoid(self.params.opacity_logits[n])
    }

    pub fn amplitudes(&self, n: usize) -> &[f64] {
        &self.params.amplitudes[n * self.channels..(n + 1) * self.channels]
    }

    /// Raw (unwrapped) phases.
    pub fn phases(&self, n: usize) -> &[f64] {
        &self.params.phases[n * self.channels..(n + 1) * self.channels]
    }

    pub fn plane_logits(&self, n: usize) -> &[f64] {
        &self.params.plane_logits[n * self.planes..(n + 1) * self.planes]
    }

    pub fn covariance(&self, n: usize) -> Matrix3<f64> {
        covariance_from(self.rotation(n), self.scales(n))
    }

    /// Appends one primitive. `amplitudes`/`phases` have `C` entries,
    /// `plane_logits` has `L`.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        position: [f64; 3],
        rotation: [f64; 4],
        scales: [f64; 3],
        amplitudes: &[f64],
        opacity: f64,
        phases: &[f64],
        plane_logits: &[f64],
    ) -> Result<()> {
        if amplitudes.len() != self.channels || phases.len() != self.channels || plane_logits.len() != self.planes {
            return Err(Error::Shape("primitive attributes do not match scene channel/plane counts".into()));
        }
        if scales.iter().any(|s| !(*s > 0.0)) || !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::InvalidArgument("scales must be > 0 and opacity in (0, 1)".into()));
        }
        let p = &mut self.params;
        p.positions.extend_from_slice(&position);
        p.rotations.extend_from_slice(&rotation);
        p.log_scales.extend(scales.iter().map(|s| s.ln()));
        p.amplitudes.extend_from_slice(amplitudes);
        p.opacity_logits.push(logit(opacity));
        p.phases.extend_from_slice(phases);
        p.plane_logits.extend_from_slice(plane_logits);
        Ok(())
    }

    /// Copies row `n` of `src` onto the end of `self`.
    pub fn push_row_from(&mut self, src: &GaussianScene, n: usize) {
        for g in ParamGroup::ALL {
            let stride = src.stride(g);
            let row = src.params.group(g)[n * stride..(n + 1) * stride].to_vec();
            self.params.group_mut(g).extend_from_slice(&row);
        }
    }

    /// New scene holding the rows in `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> GaussianScene {
        let mut out = GaussianScene::empty(self.channels, self.planes);
        for &n in keep {
            out.push_row_from(self, n);
        }
        out
    }

    /// Renormalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in self.params.rotations.chunks_exact_mut(4) {
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                q.iter_mut().for_each(|v| *v /= norm);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    /// SHA-256 over the view-independent per-primitive attributes
    /// (amplitudes, opacity logits, phases, plane logits).
    pub fn intrinsic_digest(&self) -> String {
        let mut h = Sha256::new();
        for g in [ParamGroup::Amplitudes, ParamGroup::Opacities, ParamGroup::Phases, ParamGroup::PlaneLogits] {
            for v in self.params.group(g) {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = SceneHeader {
            n: self.len(),
            l: self.planes,
            c: self.channels,
            units: SceneUnits::default(),
            fields: ParamGroup::ALL.iter().map(|g| g.name().to_string()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(SCENE_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for g in ParamGroup::ALL {
            for v in self.params.group(g) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 10];
        r.read_exact(&mut magic)?;
        if &magic != SCENE_MAGIC {
            return Err(Error::Format("bad HOLOSCENE magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: SceneHeader = serde_json::from_slice(&json)?;
        let mut params = ParamArrays::default();
        for g in ParamGroup::ALL {
            let count = header.n * ParamArrays::stride(g, header.c, header.l);
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            *params.group_mut(g) =
                bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("scene payload"));
        }
        Self::from_params(header.c, header.l, params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneHeader {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "C")]
    c: usize,
    units: SceneUnits,
    fields: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneUnits {
    position: String,
    rotation: String,
    scale: String,
    amplitude: String,
    opacity: String,
    phase: String,
    plane_logit: String,
}

impl Default for SceneUnits {
    fn default() -> Self {
        Self {
            position: "meters".into(),
            rotation: "quaternion wxyz".into(),
            scale: "log meters".into(),
            amplitude: "linear".into(),
            opacity: "logit".into(),
            phase: "radians".into(),
            plane_logit: "logit".into(),
        }
    }
}

/// Seeds for [`init_scene`].
#[derive(Debug, Clone)]
pub struct InitOptions {
    pub channels: usize,
    pub planes: usize,
    /// Scale used when a point has no neighbours: 1% of this depth.
    pub volume_depth: f64,
    pub initial_opacity: f64,
    pub default_amplitude: f64,
}

impl InitOptions {
    pub fn new(channels: usize, planes: usize, volume_depth: f64) -> Self {
        Self { channels, planes, volume_depth, initial_opacity: 0.1, default_amplitude: 0.5 }
    }
}

/// Mean distance from each point to its (up to) three nearest neighbours.
pub fn mean_neighbor_distance(points: &[[f64; 3]], k: usize) -> Vec<Option<f64>> {
    use rayon::prelude::*;
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if best.len() < k || d2 < *best.last().unwrap() {
                    let at = best.partition_point(|v| *v <= d2);
                    best.insert(at, d2);
                    best.truncate(k);
                }
            }
            if best.is_empty() {
                None
            } else {
                Some(best.iter().map(|d| d.sqrt()).sum::<f64>() / best.len() as f64)
            }
        })
        .collect()
}

/// Initial scene from seed points: isotropic scales from neighbour spacing,
/// random phases in `[0, 2π)`, uniform plane logits.
pub fn init_scene(
    points: &[[f64; 3]],
    colors: Option<&[f64]>,
    opts: &InitOptions,
    rng_seed: u64,
) -> Result<GaussianScene> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("at least one seed point is required".into()));
    }
    if let Some(c) = colors {
        if c.len() != points.len() * opts.channels {
            return Err(Error::Shape("seed colors must have N x C entries".into()));
        }
    }
    let fallback = 0.01 * opts.volume_depth;
    let spacing = mean_neighbor_distance(points, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut scene = GaussianScene::empty(opts.channels, opts.planes);
    let zeros = vec![0.0; opts.planes];
    for (i, p) in points.iter().enumerate() {
        let s = spacing[i].filter(|s| *s > 0.0).unwrap_or(fallback);
        let amps: Vec<f64> = match colors {
            Some(c) => c[i * opts.channels..(i + 1) * opts.channels].to_vec(),
            None => vec![opts.default_amplitude; opts.channels],
        };
        let phases: Vec<f64> =
            (0..opts.channels).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        scene.push(*p, [1.0, 0.0, 0.0, 0.0], [s; 3], &amps, opts.initial_opacity, &phases, &zeros)?;
    }
    Ok(scene)
}
