//! Wall-clock scaling of rasterization plus forward recording.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::WaveConfig;
use crate::propagation::Propagator;
use crate::raster::raster_forward;
use crate::synthetic::{orbit_camera, random_scene, SceneRanges};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub resolution: usize,
    pub counts: Vec<usize>,
    pub planes: Vec<usize>,
    /// Timed runs per cell; the median is reported.
    pub repeats: usize,
    pub seed: u64,
    /// Scale range of the random primitives (scene units).
    pub scale: (f64, f64),
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolution: 512,
            counts: vec![10_000, 20_000, 40_000, 80_000],
            planes: vec![1, 2, 4, 8],
            repeats: 3,
            seed: 1,
            scale: (0.005, 0.03),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub primitives: usize,
    pub planes: usize,
    pub raster_s: f64,
    pub record_s: f64,
    pub total_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let max_n = cfg.counts.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for &planes in &cfg.planes {
        let wave = WaveConfig::new(planes, cfg.resolution, cfg.resolution);
        let prop = Propagator::new(&wave)?;
        let cam = orbit_camera(&wave, 0)?;
        let ranges = SceneRanges { scale: cfg.scale, ..SceneRanges::default() };
        let full = random_scene(&mut ChaCha8Rng::seed_from_u64(cfg.seed), max_n, wave.channels(), planes, &ranges);
        for &n in &cfg.counts {
            let scene = full.select(&(0..n).collect::<Vec<_>>());
            let mut raster_t = Vec::new();
            let mut record_t = Vec::new();
            // one untimed warm-up fills the transfer-function cache
            let (layers, _) = raster_forward(&scene, &cam, &wave)?;
            prop.forward_record(&layers)?;
            for _ in 0..cfg.repeats.max(1) {
                let t0 = Instant::now();
                let (layers, _) = raster_forward(&scene, &cam, &wave)?;
                let t1 = Instant::now();
                let holo = prop.forward_record(&layers)?;
                let t2 = Instant::now();
                std::hint::black_box(holo);
                raster_t.push((t1 - t0).as_secs_f64());
                record_t.push((t2 - t1).as_secs_f64());
            }
            let (raster_s, record_s) = (median(raster_t), median(record_t));
            log::info!("bench N={n} L={planes}: raster {raster_s:.3}s record {record_s:.3}s");
            rows.push(BenchRow { primitives: n, planes, raster_s, record_s, total_s: raster_s + record_s });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("primitives,planes,raster_s,record_s,total_s\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", r.primitives, r.planes, r.raster_s, r.record_s, r.total_s));
    }
    s
}

/// Largest `time(2x)/time(x)` over neighbouring cells where the count
/// (first) or the plane number (second) doubles.
pub fn doubling_ratios(rows: &[BenchRow]) -> (f64, f64) {
    let find = |n: usize, l: usize| rows.iter().find(|r| r.primitives == n && r.planes == l);
    let mut worst_n: f64 = 0.0;
    let mut worst_l: f64 = 0.0;
    for r in rows {
        if let Some(d) = find(2 * r.primitives, r.planes) {
            if r.primitives > 0 {
                worst_n = worst_n.max(d.total_s / r.total_s);
            }
        }
        if let Some(d) = find(r.primitives, 2 * r.planes) {
            worst_l = worst_l.max(d.total_s / r.total_s);
        }
    }
    (worst_n, worst_l)
}
