//! Direct minimization of the stereo loss over a per-pixel disparity field.
//!
//! Stands in for network training at desk scale: the same objective, but the
//! free variables are the disparities themselves. Runs coarse to fine over
//! an image pyramid with backtracking gradient descent at each level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{resolution_ratio, DisparityMap, Intrinsics, StereoRig};
use crate::error::{Error, Result};
use crate::image::{bilinear_sample, in_frame, resize_bilinear, sample_unchecked, ImageBuffer};
use crate::loss::{evaluate, EvalOptions, LossConfig, StereoScene};

/// Schedule used to train the network. Not consumed by the direct
/// optimizer; kept so configurations can carry and report it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyperparameters {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `(width, height)` input resolutions the model was trained at.
    pub resolutions: [(usize, usize); 2],
}

pub const TRAINING: TrainingHyperparameters = TrainingHyperparameters {
    learning_rate: 1e-4,
    batch_size: 12,
    epochs: 20,
    resolutions: [(640, 192), (1024, 320)],
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Pyramid depth; each level halves the resolution.
    pub levels: usize,
    pub steps_per_level: usize,
    /// Initial trial step for the line search.
    pub step_size: f64,
    /// Starting disparity at the coarsest level, in full-resolution pixels.
    pub init_disparity: f64,
    /// Stop a level once the relative loss decrease of an accepted step
    /// falls below this.
    pub convergence_tol: f64,
    /// Halvings (and then doublings) of the step tried before a level is
    /// declared stalled.
    pub max_backtracks: usize,
    /// Upper clamp as a fraction of the level width.
    pub max_disparity_fraction: f64,
    /// Heavy-ball coefficient; 0 gives plain gradient descent.
    pub momentum: f64,
    pub loss: LossConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            steps_per_level: 300,
            step_size: 1e-2,
            init_disparity: 0.0,
            convergence_tol: 1e-7,
            max_backtracks: 10,
            max_disparity_fraction: 0.25,
            momentum: 0.0,
            loss: LossConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.steps_per_level == 0 {
            return Err(Error::arg("levels and steps_per_level must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::arg(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.init_disparity >= 0.0 && self.init_disparity.is_finite()) {
            return Err(Error::arg("init_disparity must be finite and non-negative"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::arg("convergence_tol must be non-negative"));
        }
        if !(self.max_disparity_fraction > 0.0 && self.max_disparity_fraction <= 1.0) {
            return Err(Error::arg("max_disparity_fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        self.loss.validate()
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    /// 0 is the finest level.
    pub level: usize,
    pub step: usize,
    pub width: usize,
    pub height: usize,
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub masked_fraction: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LevelOutcome {
    Converged,
    /// No trial step decreased the loss.
    Stalled,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub steps: usize,
    pub outcome: LevelOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    /// Entry 0 of each level is the starting point, before any step.
    pub entries: Vec<TraceEntry>,
    pub levels: Vec<LevelSummary>,
    pub disparity: DisparityMap,
    /// The finest level stopped before its step limit.
    pub converged: bool,
}

impl OptimizationTrace {
    /// Whether recorded totals never increase inside a level.
    pub fn is_monotone(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[0].level != w[1].level || w[1].total <= w[0].total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.total)
    }
}

/// Smallest side a pyramid level may have.
const MIN_LEVEL_SIZE: usize = 4;

fn pyramid_sizes(width: usize, height: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut sizes = vec![(width, height)];
    for l in 1..levels {
        let f = 1usize << l;
        let (w, h) = (width.div_ceil(f), height.div_ceil(f));
        if w < MIN_LEVEL_SIZE || h < MIN_LEVEL_SIZE {
            break;
        }
        sizes.push((w, h));
    }
    sizes
}

fn clamp_map(values: &mut [f64], hi: f64) {
    for v in values {
        *v = v.clamp(0.0, hi);
    }
}

/// Upsamples a coarse disparity field and rescales its values by the
/// resolution ratio.
pub fn upsample_disparity(d: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer> {
    let ratio = resolution_ratio(d.width(), width);
    resize_bilinear(d, width, height)?.map(|v| v * ratio)
}

fn level_scene(left: &ImageBuffer, right: &ImageBuffer, rig: &StereoRig, w: usize, h: usize) -> Result<StereoScene> {
    StereoScene::from_pair(
        resize_bilinear(left, w, h)?,
        resize_bilinear(right, w, h)?,
        rig.rescaled(w, h)?,
    )
}

/// Recovers a disparity field for a rectified pair by minimizing the
/// stereo loss coarse to fine.
pub fn optimize_disparity(
    left: &ImageBuffer,
    right: &ImageBuffer,
    rig: &StereoRig,
    intrinsics: &Intrinsics,
    cfg: &OptimizerConfig,
) -> Result<(DisparityMap, OptimizationTrace)> {
    cfg.validate()?;
    if !left.same_dims(right) {
        return Err(Error::arg(format!(
            "left is {}x{}x{}, right is {}x{}x{}",
            left.width(),
            left.height(),
            left.channels(),
            right.width(),
            right.height(),
            right.channels()
        )));
    }
    let (width, height) = (left.width(), left.height());
    if width < 2 || height < 2 {
        return Err(Error::arg("images must be at least 2x2"));
    }
    if !intrinsics.matches(width, height) {
        return Err(Error::arg(format!(
            "intrinsics are for {}x{}, images are {width}x{height}",
            intrinsics.width, intrinsics.height
        )));
    }
    let rig = StereoRig::new(*intrinsics, rig.baseline_m)?;
    let sizes = pyramid_sizes(width, height, cfg.levels);

    let mut entries = Vec::new();
    let mut summaries = Vec::new();
    let mut current: Option<ImageBuffer> = None;
    for (level, &(w, h)) in sizes.iter().enumerate().rev() {
        let scene = level_scene(left, right, &rig, w, h)?;
        let hi = cfg.max_disparity_fraction * w as f64;
        let mut d = match current.take() {
            Some(coarse) => upsample_disparity(&coarse, w, h)?,
            None => {
                let init = cfg.init_disparity / resolution_ratio(w, width);
                ImageBuffer::filled(w, h, 1, init)?
            }
        }
        .into_data();
        clamp_map(&mut d, hi);
        let (steps, outcome) = descend(&scene, &mut d, w, h, hi, level, cfg, &mut entries)?;
        summaries.push(LevelSummary {
            level,
            width: w,
            height: h,
            steps,
            outcome,
        });
        current = Some(ImageBuffer::from_plane(w, h, d)?);
    }
    let map = DisparityMap::new(current.expect("at least one level"))?;
    let converged = summaries.last().is_some_and(|s| s.outcome != LevelOutcome::StepLimit);
    let trace = OptimizationTrace {
        entries,
        levels: summaries,
        disparity: map.clone(),
        converged,
    };
    Ok((map, trace))
}

#[allow(clippy::too_many_arguments)]
fn descend(
    scene: &StereoScene,
    d: &mut Vec<f64>,
    w: usize,
    h: usize,
    hi: f64,
    level: usize,
    cfg: &OptimizerConfig,
    entries: &mut Vec<TraceEntry>,
) -> Result<(usize, LevelOutcome)> {
    let n = (w * h) as f64;
    let grad_opts = EvalOptions {
        gradient: true,
        frozen_selection: None,
    };
    let as_map = |v: &[f64]| -> Result<DisparityMap> { DisparityMap::new(ImageBuffer::from_plane(w, h, v.to_vec())?) };

    let mut eval = evaluate(scene, &as_map(d)?, &cfg.loss, grad_opts)?;
    let record = |step: usize, b: &crate::loss::LossBreakdown, alpha: f64| TraceEntry {
        level,
        step,
        width: w,
        height: h,
        total: b.total,
        photometric: b.photometric,
        smoothness: b.smoothness,
        masked_fraction: b.masked_fraction,
        step_size: alpha,
    };
    entries.push(record(0, &eval.breakdown, 0.0));

    // the loss is a mean over pixels; scaling by the pixel count makes the
    // step size a per-pixel quantity independent of resolution
    let mut velocity = vec![0.0; d.len()];
    let mut alpha = cfg.step_size;
    for step in 1..=cfg.steps_per_level {
        let g = eval.gradient.as_ref().expect("gradient requested").data();
        for (v, gi) in velocity.iter_mut().zip(g) {
            *v = cfg.momentum * *v + n * gi;
        }
        if velocity.iter().all(|&v| v == 0.0) {
            return Ok((step - 1, LevelOutcome::Converged));
        }
        // halve first; if no shorter step helps, try longer ones. The
        // scale-normalized smoothness term jumps when leaving d = 0, so
        // there short steps can never pay for themselves.
        let trials = (0..=cfg.max_backtracks)
            .map(|k| alpha * 0.5f64.powi(k as i32))
            .chain((1..=cfg.max_backtracks).map(|k| alpha * 2f64.powi(k as i32)));
        let mut accepted = None;
        for a in trials {
            let mut trial: Vec<f64> = d.iter().zip(&velocity).map(|(x, v)| x - a * v).collect();
            clamp_map(&mut trial, hi);
            let t_eval = evaluate(scene, &as_map(&trial)?, &cfg.loss, grad_opts)?;
            if t_eval.breakdown.total < eval.breakdown.total {
                alpha = a;
                accepted = Some((trial, t_eval));
                break;
            }
        }
        let Some((trial, t_eval)) = accepted else {
            return Ok((step - 1, LevelOutcome::Stalled));
        };
        let prev = eval.breakdown.total;
        *d = trial;
        eval = t_eval;
        entries.push(record(step, &eval.breakdown, alpha));
        let rel = (prev - eval.breakdown.total) / prev.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.convergence_tol {
            return Ok((step, LevelOutcome::Converged));
        }
        // let the step recover after a successful move
        alpha = (alpha * 2.0).min(cfg.step_size * 1e4);
        if cfg.momentum == 0.0 {
            velocity.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((cfg.steps_per_level, LevelOutcome::StepLimit))
}

/// Analytic versus finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub median_rel_error: f64,
    /// Both gradients vanished at every checked pixel, so relative errors
    /// carry no information.
    pub degenerate: bool,
    /// Draws rejected because the difference interval crossed a kink of
    /// the loss.
    pub skipped: usize,
    /// `(x, y, analytic, numeric)` per checked pixel.
    pub samples: Vec<(usize, usize, f64, f64)>,
}

pub const FD_STEP: f64 = 1e-4;
/// Magnitude below which a gradient pair counts as zero.
pub const GRADIENT_ABS_FLOOR: f64 = 1e-8;

/// Relative difference with an absolute floor in the denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_ABS_FLOOR)
}

/// Compares the analytic gradient with central differences at `n_pixels`
/// random interior pixels that contribute to the photometric term.
///
/// The set of contributing pixels is frozen at `disparity` for the
/// differences, matching the analytic treatment of the auto-mask.
pub fn check_gradients(
    scene: &StereoScene,
    disparity: &DisparityMap,
    cfg: &LossConfig,
    n_pixels: usize,
    seed: u64,
) -> Result<GradientCheckReport> {
    if n_pixels == 0 {
        return Err(Error::arg("n_pixels must be at least 1"));
    }
    let (w, h) = (scene.width(), scene.height());
    let base = evaluate(
        scene,
        disparity,
        cfg,
        EvalOptions {
            gradient: true,
            frozen_selection: None,
        },
    )?;
    let grad = base.gradient.expect("gradient requested");
    let margin = cfg.ssim_window / 2 + 1;
    let candidates: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let (x, y) = (i % w, i / w);
            base.selected[i] && x >= margin && y >= margin && x + margin < w && y + margin < h
        })
        .collect();
    let pool: Vec<usize> = if candidates.is_empty() {
        (0..w * h).collect()
    } else {
        candidates
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frozen = Some(base.selected.as_slice());
    let mut samples = Vec::with_capacity(n_pixels);
    let mut errors = Vec::with_capacity(n_pixels);
    let mut degenerate = true;
    let mut skipped = 0;
    let max_draws = 50 * n_pixels;
    for _ in 0..max_draws {
        if samples.len() == n_pixels {
            break;
        }
        let i = pool[rng.random_range(0..pool.len())];
        let base_d = disparity.values().data()[i];
        if crosses_kink(scene, disparity, i % w, i / w) {
            skipped += 1;
            continue;
        }
        let at = |delta: f64| -> Result<f64> {
            let mut vals = disparity.values().clone().into_data();
            vals[i] += delta;
            let map = DisparityMap::with_mask(ImageBuffer::from_plane(w, h, vals)?, disparity.valid().to_vec())?;
            let e = evaluate(
                scene,
                &map,
                cfg,
                EvalOptions {
                    gradient: false,
                    frozen_selection: frozen,
                },
            )?;
            Ok(e.breakdown.total)
        };
        // one-sided at the lower bound, where negative disparities are not representable
        let numeric = if base_d >= FD_STEP {
            (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP)
        } else {
            (at(FD_STEP)? - base.breakdown.total) / FD_STEP
        };
        let analytic = grad.data()[i];
        if analytic.abs().max(numeric.abs()) >= GRADIENT_ABS_FLOOR {
            degenerate = false;
        }
        errors.push(relative_error(analytic, numeric));
        samples.push((i % w, i / w, analytic, numeric));
    }
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    errors.sort_by(f64::total_cmp);
    let median_rel_error = median_sorted(&errors);
    Ok(GradientCheckReport {
        checked: samples.len(),
        max_rel_error: if degenerate { 0.0 } else { max_rel_error },
        median_rel_error: if degenerate { 0.0 } else { median_rel_error },
        degenerate,
        skipped,
        samples,
    })
}

/// True when moving the disparity at `(x, y)` by ±`FD_STEP` crosses a point
/// where the loss is not differentiable: an L1 residual changing sign, the
/// sample position entering a new interpolation cell, leaving the frame, or
/// a disparity difference in the smoothness term changing sign.
/// Central differences across such a point measure the average of two
/// one-sided slopes instead of the derivative.
fn crosses_kink(scene: &StereoScene, disparity: &DisparityMap, x: usize, y: usize) -> bool {
    let (w, h) = (disparity.width(), disparity.height());
    let d = disparity.get(x, y);
    let neighbours = [
        (x.wrapping_sub(1), y),
        (x + 1, y),
        (x, y.wrapping_sub(1)),
        (x, y + 1),
    ];
    if neighbours
        .iter()
        .any(|&(nx, ny)| nx < w && ny < h && (disparity.get(nx, ny) - d).abs() <= 2.0 * FD_STEP)
    {
        return true;
    }
    let lo = (d - FD_STEP).max(0.0);
    let hi = d + FD_STEP;
    scene.sources.iter().any(|(source, side)| {
        let dir = side.direction();
        let (a, b) = (x as f64 + dir * lo, x as f64 + dir * hi);
        if in_frame(source, a, y as f64) != in_frame(source, b, y as f64) {
            return true;
        }
        if !in_frame(source, a, y as f64) {
            return false;
        }
        if a.floor() != b.floor() || a.fract() == 0.0 || b.fract() == 0.0 {
            return true;
        }
        (0..source.channels()).any(|c| {
            let t = scene.target.get(x, y, c);
            let ra = t - sample_unchecked(source, a, y as f64, c);
            let rb = t - sample_unchecked(source, b, y as f64, c);
            ra * rb <= 0.0
        })
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Smooth random texture with a known constant disparity between views.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub left: ImageBuffer,
    pub right: ImageBuffer,
    pub rig: StereoRig,
    pub disparity: f64,
}

impl SyntheticPair {
    pub fn scene(&self) -> Result<StereoScene> {
        StereoScene::from_pair(self.left.clone(), self.right.clone(), self.rig)
    }
}

/// Sum of a few low-frequency plane waves per channel, scaled into
/// `[0.1, 0.9]`.
pub fn smooth_texture(width: usize, height: usize, channels: usize, seed: u64) -> Result<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Vec<(f64, f64, f64, f64)>> = (0..channels)
        .map(|_| {
            (0..6)
                .map(|_| {
                    let freq = rng.random_range(0.08..0.45);
                    let angle = rng.random_range(0.0..std::f64::consts::PI);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    let amp = rng.random_range(0.3..1.0);
                    (freq * angle.cos(), freq * angle.sin(), phase, amp)
                })
                .collect()
        })
        .collect();
    let raw = ImageBuffer::from_fn(width, height, channels, |x, y, c| {
        waves[c]
            .iter()
            .map(|&(kx, ky, p, a)| a * (kx * x as f64 + ky * y as f64 + p).sin())
            .sum()
    })?;
    let (lo, hi) = raw.min_max();
    let span = (hi - lo).max(1e-12);
    raw.map(|v| 0.1 + 0.8 * (v - lo) / span)
}

/// Builds a rectified pair where every left pixel `x` appears at `x - d0`
/// in the right image. The texture is drawn on a wider canvas and the right
/// view is resampled from it bilinearly, so no edge clamping enters.
pub fn synthetic_pair(width: usize, height: usize, channels: usize, d0: f64, seed: u64) -> Result<SyntheticPair> {
    if !(d0 >= 0.0 && d0.is_finite()) {
        return Err(Error::arg(format!("shift must be finite and non-negative, got {d0}")));
    }
    let pad = d0.ceil() as usize + 2;
    let canvas = smooth_texture(width + pad, height, channels, seed)?;
    let left = ImageBuffer::from_fn(width, height, channels, |x, y, c| canvas.get(x, y, c))?;
    let mut right_data = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                right_data.push(bilinear_sample(&canvas, x as f64 + d0, y as f64, c)?);
            }
        }
    }
    let right = ImageBuffer::new(width, height, channels, right_data)?;
    let fx = width as f64;
    let intrinsics = Intrinsics::new(fx, fx, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)?;
    Ok(SyntheticPair {
        left,
        right,
        rig: StereoRig::new(intrinsics, 0.1)?,
        disparity: d0,
    })
}
