//! Stage-by-stage latency of the depth-to-cloud pipeline.
//!
//! One iteration runs: resize of the stereo input to the model resolution,
//! network forward, resize of the prediction back to the image resolution,
//! disparity → depth, and back-projection. Both resizes are skipped when the
//! model and image resolutions agree (the fast path).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::{back_project, disparity_to_depth, DisparityMap, Intrinsics, StereoRig};
use crate::error::{Error, Result};
use crate::image::{resize_bilinear, ImageBuffer};
use crate::network::{build_depth_network, sigmoid_to_disparity, Network, WeightStore, DEFAULT_MAX_DEPTH_M, DEFAULT_MIN_DEPTH_M};
use crate::optimizer::smooth_texture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSet {
    pub resize: bool,
    pub network: bool,
    pub disparity_to_depth: bool,
    pub back_projection: bool,
}

impl Default for StageSet {
    fn default() -> Self {
        Self {
            resize: true,
            network: true,
            disparity_to_depth: true,
            back_projection: true,
        }
    }
}

impl StageSet {
    /// Everything but the network forward pass.
    pub fn without_network() -> Self {
        Self {
            network: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// `(width, height)` the network runs at.
    pub model_res: (usize, usize),
    /// `(width, height)` of the camera images and the output depth map.
    pub image_res: (usize, usize),
    pub iterations: usize,
    pub warmup: usize,
    pub stages: StageSet,
    /// Worker threads for the kernels; `None` uses the global pool.
    pub threads: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            model_res: (640, 192),
            image_res: (640, 192),
            iterations: 20,
            warmup: 2,
            stages: StageSet::default(),
            threads: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub name: &'static str,
    pub skipped: bool,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub model_res: (usize, usize),
    pub image_res: (usize, usize),
    pub iterations: usize,
    pub warmup: usize,
    /// Model and image resolution agree, so no resize runs.
    pub fast_path: bool,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
    pub stages: Vec<StageTiming>,
    /// Wall-clock per timed iteration, in run order.
    pub samples_ms: Vec<f64>,
    pub points: usize,
}

impl BenchReport {
    pub fn to_key_values(&self) -> String {
        let mut s = format!(
            "model_res={}x{}\nimage_res={}x{}\niterations={}\nwarmup={}\nfast_path={}\nmean_ms={:.4}\np50_ms={:.4}\np95_ms={:.4}\nfps={:.3}\npoints={}\n",
            self.model_res.0,
            self.model_res.1,
            self.image_res.0,
            self.image_res.1,
            self.iterations,
            self.warmup,
            self.fast_path,
            self.mean_ms,
            self.p50_ms,
            self.p95_ms,
            self.fps,
            self.points
        );
        for st in &self.stages {
            if st.skipped {
                s.push_str(&format!("stage.{}=skipped\n", st.name));
            } else {
                s.push_str(&format!(
                    "stage.{}.mean_ms={:.4}\nstage.{}.p50_ms={:.4}\nstage.{}.p95_ms={:.4}\n",
                    st.name, st.mean_ms, st.name, st.p50_ms, st.name, st.p95_ms
                ));
            }
        }
        s
    }
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

const STAGE_NAMES: [&str; 5] = ["resize_input", "network", "resize_output", "disparity_to_depth", "back_projection"];

struct Stopwatch {
    clock: Instant,
    times: [Option<f64>; 5],
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            clock: Instant::now(),
            times: [None; 5],
        }
    }

    fn lap(&mut self, slot: usize) {
        let now = Instant::now();
        self.times[slot] = Some((now - self.clock).as_secs_f64() * 1e3);
        self.clock = now;
    }

    fn restart(&mut self) {
        self.clock = Instant::now();
    }
}

struct Pipeline {
    stereo_input: ImageBuffer,
    left: ImageBuffer,
    network: Option<Network<f32>>,
    /// Stand-in prediction when the network stage is off.
    canned: DisparityMap,
    rig: StereoRig,
    intrinsics: Intrinsics,
}

impl Pipeline {
    fn new(cfg: &BenchConfig) -> Result<Self> {
        let (mw, mh) = cfg.model_res;
        let (iw, ih) = cfg.image_res;
        let left = smooth_texture(iw, ih, 3, cfg.seed)?;
        let right = smooth_texture(iw, ih, 3, cfg.seed.wrapping_add(1))?;
        let stereo_input = ImageBuffer::stack_channels(&left, &right)?;
        let network = if cfg.stages.network {
            let spec = build_depth_network(true, mh, mw);
            let weights = WeightStore::random_for(&spec, cfg.seed);
            Some(Network::new(spec, &weights)?)
        } else {
            None
        };
        let canned = DisparityMap::new(ImageBuffer::from_fn(mw, mh, 1, |x, y, _| {
            0.2 + 0.6 * ((x * 7 + y * 13) % 97) as f64 / 97.0
        })?)?;
        let intrinsics = Intrinsics::new(0.58 * iw as f64, 1.92 * ih as f64, 0.5 * iw as f64, 0.5 * ih as f64, iw, ih)?;
        Ok(Self {
            stereo_input,
            left,
            network,
            canned,
            rig: StereoRig::new(intrinsics, 0.54)?,
            intrinsics,
        })
    }

    /// Runs one iteration; returns per-stage milliseconds (None = skipped)
    /// and the number of points produced.
    fn run(&self, cfg: &BenchConfig) -> Result<([Option<f64>; 5], usize)> {
        let (mw, mh) = cfg.model_res;
        let (iw, ih) = cfg.image_res;
        let resize = cfg.stages.resize && cfg.model_res != cfg.image_res;
        let mut sw = Stopwatch::start();

        let input = if cfg.model_res != cfg.image_res && (resize || self.network.is_some()) {
            let r = resize_bilinear(&self.stereo_input, mw, mh)?;
            if resize {
                sw.lap(0);
            } else {
                // needed to feed the network but not part of the measurement
                sw.restart();
            }
            Some(r)
        } else {
            None
        };
        let sigmoid = match &self.network {
            Some(net) => {
                let x = input.as_ref().unwrap_or(&self.stereo_input);
                let (map, _) = net.predict(x)?;
                sw.lap(1);
                map
            }
            None => {
                sw.restart();
                self.canned.clone()
            }
        };
        let sigmoid = if resize {
            let up = DisparityMap::new(resize_bilinear(sigmoid.values(), iw, ih)?)?;
            sw.lap(2);
            up
        } else if sigmoid.width() == iw && sigmoid.height() == ih {
            sigmoid
        } else {
            // resize disabled but needed for the later stages: not timed
            let up = DisparityMap::new(resize_bilinear(sigmoid.values(), iw, ih)?)?;
            sw.restart();
            up
        };
        let mut points = 0;
        if cfg.stages.disparity_to_depth || cfg.stages.back_projection {
            let disparity = sigmoid_to_disparity(&sigmoid, DEFAULT_MIN_DEPTH_M, DEFAULT_MAX_DEPTH_M, &self.rig)?;
            let depth = disparity_to_depth(&disparity, &self.rig);
            if cfg.stages.disparity_to_depth {
                sw.lap(3);
            } else {
                sw.restart();
            }
            if cfg.stages.back_projection {
                let cloud = back_project(&depth, &self.intrinsics, Some(&self.left))?;
                points = cloud.len();
                sw.lap(4);
            }
        }
        Ok((sw.times, points))
    }
}

/// Times the pipeline `iterations` times after `warmup` untimed runs.
///
/// Latencies are wall-clock and differ between runs; stage order and
/// report fields do not.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.iterations == 0 {
        return Err(Error::arg("iterations must be at least 1"));
    }
    let (mw, mh) = cfg.model_res;
    let (iw, ih) = cfg.image_res;
    if mw == 0 || mh == 0 || iw == 0 || ih == 0 {
        return Err(Error::arg("resolutions must be positive"));
    }
    if cfg.stages.network && (mw % 32 != 0 || mh % 32 != 0) {
        return Err(Error::arg(format!(
            "model resolution {mw}x{mh} must be a multiple of 32 for the network"
        )));
    }
    match cfg.threads {
        Some(0) => Err(Error::arg("threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::arg(format!("thread pool: {e}")))?
            .install(|| bench_inner(cfg)),
        None => bench_inner(cfg),
    }
}

fn bench_inner(cfg: &BenchConfig) -> Result<BenchReport> {
    let pipeline = Pipeline::new(cfg)?;
    for _ in 0..cfg.warmup {
        pipeline.run(cfg)?;
    }
    let mut totals = Vec::with_capacity(cfg.iterations);
    let mut per_stage: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.iterations); STAGE_NAMES.len()];
    let mut skipped = [true; 5];
    let mut points = 0;
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        let (times, n) = pipeline.run(cfg)?;
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        points = n;
        for (k, t) in times.iter().enumerate() {
            if let Some(t) = t {
                per_stage[k].push(*t);
                skipped[k] = false;
            }
        }
    }
    let stages = STAGE_NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| StageTiming {
            name,
            skipped: skipped[k],
            mean_ms: mean(&per_stage[k]),
            p50_ms: percentile(&per_stage[k], 50.0),
            p95_ms: percentile(&per_stage[k], 95.0),
        })
        .collect();
    let mean_ms = mean(&totals);
    Ok(BenchReport {
        model_res: cfg.model_res,
        image_res: cfg.image_res,
        iterations: cfg.iterations,
        warmup: cfg.warmup,
        fast_path: cfg.model_res == cfg.image_res,
        mean_ms,
        p50_ms: percentile(&totals, 50.0),
        p95_ms: percentile(&totals, 95.0),
        fps: if mean_ms > 0.0 { 1000.0 / mean_ms } else { f64::INFINITY },
        stages,
        samples_ms: totals,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }

    #[test]
    fn single_sample_and_skipped_resize() {
        let cfg = BenchConfig {
            model_res: (128, 64),
            image_res: (128, 64),
            iterations: 1,
            warmup: 0,
            ..BenchConfig::default()
        };
        let r = run_benchmark(&cfg).unwrap();
        assert_eq!(r.samples_ms.len(), 1);
        assert!(r.fast_path);
        assert!(r.stages[0].skipped && r.stages[2].skipped);
        assert!(!r.stages[1].skipped);
        assert_eq!(r.points, 128 * 64);
        assert!((r.fps - 1000.0 / r.mean_ms).abs() < 1e-9);
    }

    #[test]
    fn resize_runs_when_resolutions_differ() {
        let cfg = BenchConfig {
            model_res: (64, 32),
            image_res: (100, 40),
            iterations: 2,
            warmup: 0,
            stages: StageSet::without_network(),
            threads: Some(1),
            ..BenchConfig::default()
        };
        let r = run_benchmark(&cfg).unwrap();
        assert!(!r.fast_path);
        assert!(!r.stages[0].skipped && !r.stages[2].skipped && r.stages[1].skipped);
        assert_eq!(r.points, 4000);
    }
}
