//! The optimization loop: pick a view, render, back-propagate, step,
//! and densify on schedule.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::densify::{densify_and_prune, scene_extent, DensifyConfig, GradAccum};
use crate::error::{Error, Result};
use crate::field::WaveConfig;
use crate::loss::{psnr, LossConfig};
use crate::optim::{OptimConfig, OptimState};
use crate::pipeline::{Assignment, Pipeline};
use crate::scene::GaussianScene;
use crate::ssim::ssim;
use crate::ste::DEFAULT_TEMPERATURE;
use crate::target::FocalStackTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSampling {
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub optim: OptimConfig,
    pub densify: DensifyConfig,
    pub loss: LossConfig,
    /// STE softmax temperature.
    pub temperature: f64,
    pub sampling: ViewSampling,
    pub seed: u64,
    /// Log a progress line every this many steps (0 = never).
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            optim: OptimConfig::default(),
            densify: DensifyConfig::default(),
            loss: LossConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            sampling: ViewSampling::RoundRobin,
            seed: 0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct View {
    pub camera: CameraView,
    pub target: FocalStackTarget,
}

/// One line of the metrics log, measured on the view used at `step`
/// before its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub loss_recon: f64,
    pub loss_ssim: f64,
    pub psnr_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEval {
    pub view: usize,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr_mean: f64,
}

/// Per-plane PSNR and channel-averaged SSIM of a render against a target.
pub fn evaluate_view(pipeline: &Pipeline, scene: &GaussianScene, view: &View, index: usize) -> Result<ViewEval> {
    let r = pipeline.render(scene, &view.camera, &Assignment::Hard)?;
    let mut out = ViewEval { view: index, psnr: Vec::new(), ssim: Vec::new(), psnr_mean: 0.0 };
    for (img, gt) in r.intensities.iter().zip(&view.target.images) {
        out.psnr.push(psnr(img, gt)?);
        let s: f64 = (0..img.channels).map(|c| ssim(img.channel(c), gt.channel(c), img.width, img.height)).sum();
        out.ssim.push(s / img.channels as f64);
    }
    out.psnr_mean = out.psnr.iter().sum::<f64>() / out.psnr.len() as f64;
    Ok(out)
}

#[derive(Debug)]
pub struct Trainer {
    pub pipeline: Pipeline,
    pub config: TrainConfig,
    pub views: Vec<View>,
    pub scene: GaussianScene,
    pub optim: OptimState,
    pub accum: GradAccum,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub metrics: Vec<MetricsRow>,
    extent: f64,
}

/// Sidecar written next to a checkpoint's scene file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSidecar {
    pub step: u64,
    pub scene: String,
    pub optimizer_moments: String,
    pub rng_state: ChaCha8Rng,
    pub config_hash: String,
    pub skipped_steps: u64,
    #[serde(default)]
    pub eval: Vec<ViewEval>,
}

impl Trainer {
    pub fn new(cfg: &WaveConfig, config: TrainConfig, scene: GaussianScene, views: Vec<View>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidArgument("training needs at least one view".into()));
        }
        if scene.planes() != cfg.num_planes || scene.channels() != cfg.channels() {
            return Err(Error::Shape("scene plane/channel counts do not match the configuration".into()));
        }
        for v in &views {
            if !v.camera.matches(cfg) {
                return Err(Error::Shape("view camera resolution does not match the configuration".into()));
            }
            v.target.validate()?;
        }
        let mut pipeline = Pipeline::new(cfg)?;
        pipeline.loss = config.loss;
        pipeline.temperature = config.temperature;
        let mut optim_cfg = config.optim;
        optim_cfg.total_steps = config.steps;
        Ok(Self {
            optim: OptimState::new(optim_cfg, &scene),
            accum: GradAccum::new(scene.len()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            extent: scene_extent(&scene),
            pipeline,
            config,
            views,
            scene,
            step: 0,
            metrics: Vec::new(),
        })
    }

    fn pick_view(&mut self) -> usize {
        match self.config.sampling {
            ViewSampling::RoundRobin => (self.step % self.views.len() as u64) as usize,
            ViewSampling::Random => self.rng.random_range(0..self.views.len()),
        }
    }

    /// One optimization step; returns the metrics measured before the update.
    pub fn step_once(&mut self) -> Result<MetricsRow> {
        let v = self.pick_view();
        let view = &self.views[v];
        let ev = self.pipeline.evaluate(&self.scene, &view.camera, &view.target, &Assignment::Hard)?;
        let mut psnr_sum = 0.0;
        for (img, gt) in ev.rendering.intensities.iter().zip(&view.target.images) {
            psnr_sum += psnr(img, gt)?;
        }
        let row = MetricsRow {
            step: self.step,
            loss: ev.loss.total,
            loss_recon: ev.loss.recon,
            loss_ssim: ev.loss.ssim,
            psnr_mean: psnr_sum / view.target.images.len() as f64,
        };
        self.accum.add(&ev.screen_grad, &ev.rendering.aux);
        self.optim.step(&mut self.scene, &ev.grads)?;
        self.step += 1;
        if self.config.densify.due(self.step) {
            let out = densify_and_prune(&self.scene, &self.accum, &self.config.densify, self.extent, &mut self.rng);
            log::debug!(
                "step {}: densify cloned {} split {} pruned {} -> {} primitives",
                self.step,
                out.cloned,
                out.split,
                out.pruned,
                out.scene.len()
            );
            self.optim.remap(&out.mapping);
            self.scene = out.scene;
            self.accum = GradAccum::new(self.scene.len());
        }
        if self.config.log_every > 0 && row.step % self.config.log_every == 0 {
            log::info!("step {} loss {:.6e} psnr {:.2} dB n={}", row.step, row.loss, row.psnr_mean, self.scene.len());
        }
        self.metrics.push(row);
        Ok(row)
    }

    /// Runs until `config.steps` steps have been taken.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.config.steps {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn evaluate(&self) -> Result<Vec<ViewEval>> {
        self.views.iter().enumerate().map(|(i, v)| evaluate_view(&self.pipeline, &self.scene, v, i)).collect()
    }

    /// Writes `<stem>.hscene`, `<stem>.moments` and `<stem>.json` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path, stem: &str, config_hash: &str, eval: Vec<ViewEval>) -> Result<CheckpointSidecar> {
        std::fs::create_dir_all(dir)?;
        let scene_name = format!("{stem}.hscene");
        let moments_name = format!("{stem}.moments");
        self.scene.save(dir.join(&scene_name))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(&moments_name))?);
        self.optim.write_moments(&mut w)?;
        w.flush()?;
        let sidecar = CheckpointSidecar {
            step: self.step,
            scene: scene_name,
            optimizer_moments: moments_name,
            rng_state: self.rng.clone(),
            config_hash: config_hash.to_string(),
            skipped_steps: self.optim.skipped,
            eval,
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(sidecar)
    }

    /// Restores scene, optimizer moments, RNG and step from a checkpoint.
    pub fn restore(&mut self, dir: &Path, stem: &str) -> Result<()> {
        let sidecar: CheckpointSidecar = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
        let scene = GaussianScene::load(dir.join(&sidecar.scene))?;
        let optim = OptimState::read_moments(std::io::BufReader::new(std::fs::File::open(dir.join(&sidecar.optimizer_moments))?))?;
        if optim.len() != scene.len() {
            return Err(Error::Format("checkpoint moments do not match its scene".into()));
        }
        self.accum = GradAccum::new(scene.len());
        self.scene = scene;
        self.optim = optim;
        self.rng = sidecar.rng_state;
        self.step = sidecar.step;
        Ok(())
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> Result<()> {
    writeln!(w, "step,loss,loss_recon,loss_ssim,psnr_mean")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e},{:e},{}", r.step, r.loss, r.loss_recon, r.loss_ssim, r.psnr_mean)?;
    }
    Ok(())
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("step,loss,loss_recon,loss_ssim,psnr_mean") {
        return Err(Error::Format("unexpected metrics header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Format(format!("bad metrics line: {l}")))
            };
            Ok(MetricsRow { step: num(0)? as u64, loss: num(1)?, loss_recon: num(2)?, loss_ssim: num(3)?, psnr_mean: num(4)? })
        })
        .collect()
}

/// Trains `scene` on `views` for `config.steps` steps.
pub fn train(
    scene: GaussianScene,
    views: Vec<View>,
    cfg: &WaveConfig,
    config: TrainConfig,
) -> Result<(GaussianScene, Vec<MetricsRow>)> {
    let mut t = Trainer::new(cfg, config, scene, views)?;
    t.run()?;
    Ok((t.scene, t.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::init_scene;
    use crate::synthetic::{init_options, orbit_camera, random_points, random_scene, SceneRanges};
    use crate::target::make_target_from_scene;

    fn setup(n_oracle: usize, n_init: usize) -> (WaveConfig, GaussianScene, Vec<View>) {
        let cfg = WaveConfig::new(2, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ranges = SceneRanges { amplitude: (0.1, 0.4), ..SceneRanges::default() };
        let oracle = random_scene(&mut rng, n_oracle, 3, 2, &ranges);
        let views = (0..2)
            .map(|i| {
                let camera = orbit_camera(&cfg, i).unwrap();
                let target = make_target_from_scene(&oracle, &camera, &cfg).unwrap();
                View { camera, target }
            })
            .collect();
        let pts = random_points(&mut rng, n_init, &ranges);
        let init = init_scene(&pts, None, &init_options(&cfg), 11).unwrap();
        (cfg, init, views)
    }

    #[test]
    fn zero_steps_returns_scene_unchanged() {
        let (cfg, init, views) = setup(10, 10);
        let (out, metrics) = train(init.clone(), views, &cfg, TrainConfig { steps: 0, ..TrainConfig::default() }).unwrap();
        assert_eq!(out, init);
        assert!(metrics.is_empty());
    }

    #[test]
    fn empty_view_list_is_rejected() {
        let (cfg, init, _) = setup(1, 1);
        assert!(Trainer::new(&cfg, TrainConfig::default(), init, vec![]).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let (cfg, init, views) = setup(20, 30);
        let config = TrainConfig {
            steps: 12,
            densify: DensifyConfig { interval: 5, start_step: 5, grad_threshold: 1e-6, ..DensifyConfig::default() },
            sampling: ViewSampling::Random,
            ..TrainConfig::default()
        };
        let (a, ma) = train(init.clone(), views.clone(), &cfg, config.clone()).unwrap();
        let (b, mb) = train(init, views, &cfg, config).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a, b);
    }

    #[test]
    fn loss_goes_down() {
        let (cfg, init, views) = setup(20, 40);
        let config = TrainConfig { steps: 150, ..TrainConfig::default() };
        let (_, m) = train(init, views, &cfg, config).unwrap();
        let head: f64 = m[..10].iter().map(|r| r.loss).sum();
        let tail: f64 = m[m.len() - 10..].iter().map(|r| r.loss).sum();
        assert!(tail < 0.7 * head, "{head} -> {tail}");
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let (cfg, init, views) = setup(15, 20);
        let config = TrainConfig {
            steps: 10,
            densify: DensifyConfig { interval: 4, start_step: 4, grad_threshold: 1e-6, ..DensifyConfig::default() },
            ..TrainConfig::default()
        };
        let mut full = Trainer::new(&cfg, config.clone(), init.clone(), views.clone()).unwrap();
        full.run().unwrap();

        let dir = std::env::temp_dir().join(format!("holofield-ckpt-{}", std::process::id()));
        let mut first = Trainer::new(&cfg, config.clone(), init.clone(), views.clone()).unwrap();
        for _ in 0..4 {
            first.step_once().unwrap();
        }
        first.save_checkpoint(&dir, "ckpt", "abc", vec![]).unwrap();
        let mut second = Trainer::new(&cfg, config, init, views).unwrap();
        second.restore(&dir, "ckpt").unwrap();
        second.run().unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(second.scene, full.scene);
        assert_eq!(second.metrics[..], full.metrics[4..]);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let rows = vec![
            MetricsRow { step: 0, loss: 0.1, loss_recon: 0.09, loss_ssim: 0.01, psnr_mean: 21.5 },
            MetricsRow { step: 1, loss: 1.0 / 3.0, loss_recon: 0.2, loss_ssim: 1e-7, psnr_mean: 99.0 },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,loss,loss_recon,loss_ssim,psnr_mean\n"));
        assert_eq!(read_metrics_csv(&text).unwrap(), rows);
    }
}
