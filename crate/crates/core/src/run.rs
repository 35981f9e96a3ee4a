//! Run configuration: one JSON document describing optics, views, targets,
//! the initial scene and training hyperparameters.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{CameraSpec, CameraView};
use crate::error::{Error, Result};
use crate::field::WaveConfig;
use crate::io::read_png;
use crate::scene::{hex, init_scene, GaussianScene};
use crate::synthetic::{init_options, orbit_camera, random_points, random_scene, SceneRanges};
use crate::target::{make_target_from_scene, target_from_rgbd};
use crate::pipeline::Assignment;
use crate::train::{write_metrics_csv, MetricsRow, TrainConfig, Trainer, View, ViewEval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SceneSource {
    /// A scene file.
    File(PathBuf),
    /// Random primitives in the synthetic box.
    Random {
        count: usize,
        seed: u64,
        /// Amplitude range; defaults to `[0.2, 0.7]`.
        #[serde(default)]
        amplitude: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum InitSource {
    File(PathBuf),
    /// Seed points drawn uniformly in the synthetic box.
    RandomPoints { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ViewSource {
    /// The first `n` cameras of the synthetic orbit.
    Orbit(usize),
    Cameras(Vec<CameraSpec>),
}

/// An RGB image with a depth map (16-bit grayscale PNG) for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgbdTarget {
    pub rgb: PathBuf,
    pub depth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum TargetSource {
    /// Render a known scene through the forward model.
    Oracle(SceneSource),
    /// One RGB+depth pair per view.
    Rgbd(Vec<RgbdTarget>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub wave: WaveConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub views: ViewSource,
    pub targets: TargetSource,
    pub init: InitSource,
    #[serde(default = "RunConfig::default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl RunConfig {
    fn default_output() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.wave.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        // relative paths are relative to the config file
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InitSource::File(p) = &mut self.init {
            fix(p);
        }
        match &mut self.targets {
            TargetSource::Oracle(SceneSource::File(p)) => fix(p),
            TargetSource::Rgbd(list) => list.iter_mut().for_each(|t| {
                fix(&mut t.rgb);
                fix(&mut t.depth);
            }),
            _ => {}
        }
        fix(&mut self.output_dir);
    }

    /// SHA-256 of the canonical JSON form, defaults included.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn cameras(&self) -> Result<Vec<CameraView>> {
        match &self.views {
            ViewSource::Orbit(n) => (0..*n).map(|i| orbit_camera(&self.wave, i)).collect(),
            ViewSource::Cameras(specs) => specs.iter().map(|s| CameraView::from_spec(s, &self.wave)).collect(),
        }
    }

    pub fn build_views(&self) -> Result<Vec<View>> {
        let cams = self.cameras()?;
        if cams.is_empty() {
            return Err(Error::Config("at least one view is required".into()));
        }
        match &self.targets {
            TargetSource::Oracle(src) => {
                let oracle = load_scene(src, &self.wave)?;
                cams.into_iter()
                    .map(|camera| Ok(View { target: make_target_from_scene(&oracle, &camera, &self.wave)?, camera }))
                    .collect()
            }
            TargetSource::Rgbd(list) => {
                if list.len() != cams.len() {
                    return Err(Error::Config(format!("{} views but {} RGB-D targets", cams.len(), list.len())));
                }
                cams.into_iter()
                    .zip(list)
                    .map(|(camera, t)| {
                        let rgb = read_png(&t.rgb)?;
                        let depth = read_png(&t.depth)?;
                        let target = target_from_rgbd(&rgb, depth.channel(0), &self.wave, &camera)?;
                        Ok(View { camera, target })
                    })
                    .collect()
            }
        }
    }

    pub fn initial_scene(&self) -> Result<GaussianScene> {
        match &self.init {
            InitSource::File(p) => GaussianScene::load(p),
            InitSource::RandomPoints { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let pts = random_points(&mut rng, *count, &SceneRanges::default());
                init_scene(&pts, None, &init_options(&self.wave), seed.wrapping_add(1))
            }
        }
    }
}

pub fn load_scene(src: &SceneSource, wave: &WaveConfig) -> Result<GaussianScene> {
    match src {
        SceneSource::File(p) => GaussianScene::load(p),
        SceneSource::Random { count, seed, amplitude } => {
            let ranges = SceneRanges { amplitude: amplitude.unwrap_or((0.2, 0.7)), ..SceneRanges::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(random_scene(&mut rng, *count, wave.channels(), wave.num_planes, &ranges))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub primitives: usize,
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub eval: Vec<ViewEval>,
}

/// Trains as configured and writes `checkpoint.{hscene,moments,json}`,
/// `metrics.csv` and `config.json` into the output directory. The metrics
/// log ends with one row per view at `step = steps`, measured after the
/// last update.
pub fn run_training(cfg: &RunConfig) -> Result<TrainSummary> {
    let views = cfg.build_views()?;
    let scene = cfg.initial_scene()?;
    let mut trainer = Trainer::new(&cfg.wave, cfg.train.clone(), scene, views)?;
    trainer.run()?;
    let eval = trainer.evaluate()?;
    // closing rows: one per view, measured on the final scene
    let mut rows = trainer.metrics.clone();
    for (v, e) in trainer.views.iter().zip(&eval) {
        let l = trainer.pipeline.loss(&trainer.scene, &v.camera, &v.target, &Assignment::Hard)?;
        rows.push(MetricsRow { step: trainer.step, loss: l.total, loss_recon: l.recon, loss_ssim: l.ssim, psnr_mean: e.psnr_mean });
    }
    let hash = cfg.hash();
    let dir = &cfg.output_dir;
    trainer.save_checkpoint(dir, "checkpoint", &hash, eval.clone())?;
    let metrics = dir.join("metrics.csv");
    write_metrics_csv(&rows, std::io::BufWriter::new(std::fs::File::create(&metrics)?))?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(TrainSummary {
        steps: trainer.step,
        primitives: trainer.scene.len(),
        config_hash: hash,
        checkpoint: dir.join("checkpoint.json"),
        metrics,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "wave": {"num_planes": 2, "resolution": [32, 32]},
        "views": {"orbit": 2},
        "targets": {"oracle": {"random": {"count": 10, "seed": 1}}},
        "init": {"random_points": {"count": 12, "seed": 2}},
        "train": {"steps": 3}
    }"#;

    #[test]
    fn parses_with_defaults_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.wave.pixel_pitch, 3.74e-6);
        assert_eq!(cfg.train.steps, 3);
        assert_eq!(cfg.train.optim.lr.scale, 0.005);
        let bad = MINIMAL.replace("\"train\"", "\"trian\"");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
        let bad = MINIMAL.replace("\"steps\": 3", "\"steps\": 3, \"stpes\": 1");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn saved_config_reloads_identically() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn builds_views_and_scene() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let views = cfg.build_views().unwrap();
        assert_eq!(views.len(), 2);
        assert_ne!(views[0].camera.pose(), views[1].camera.pose());
        let s = cfg.initial_scene().unwrap();
        assert_eq!((s.len(), s.planes(), s.channels()), (12, 2, 3));
    }

    #[test]
    fn rgbd_count_must_match_views() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.targets = TargetSource::Rgbd(vec![]);
        assert!(cfg.build_views().is_err());
    }
}
