//! Self-supervised stereo objective: SSIM/L1 reconstruction error, per-pixel
//! minimum reprojection, auto-masking, edge-aware smoothness, and the
//! analytic gradient of the total with respect to the disparity field.
//!
//! All math runs in double precision on planar per-channel buffers.
//! Reductions are sequential in row-major order, so repeated evaluations
//! are bitwise identical.

use serde::{Deserialize, Serialize};

use crate::camera::{DisparityMap, SourceSide, StereoRig};
use crate::error::{Error, Result};
use crate::image::{sample_row_with_slope, spatial_gradient, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the edge-aware smoothness term.
    pub lambda_smooth: f64,
    /// Share of the SSIM term in the reconstruction error; the rest is L1.
    pub ssim_weight: f64,
    /// Side of the square SSIM window (odd).
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub automask_enabled: bool,
    /// Ties between warped and raw reconstruction error go to the warped
    /// source when the raw error exceeds it by less than this margin.
    /// Zero gives the bare strict comparison.
    pub automask_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_smooth: 1e-3,
            ssim_weight: 0.85,
            ssim_window: 3,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            automask_enabled: true,
            automask_margin: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::arg(format!("ssim_weight {} outside [0, 1]", self.ssim_weight)));
        }
        if !(self.lambda_smooth >= 0.0) {
            return Err(Error::arg(format!("lambda_smooth {} is negative", self.lambda_smooth)));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::arg(format!(
                "ssim_window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::arg("SSIM stabilizers must be positive"));
        }
        if !(self.automask_margin >= 0.0) {
            return Err(Error::arg("automask_margin must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
    /// Fraction of pixels left out of the photometric mean (invalid or
    /// auto-masked).
    pub masked_fraction: f64,
    /// Per-pixel minimum reconstruction error over valid sources; zero
    /// where no source is valid.
    pub per_pixel_photometric: ImageBuffer,
}

/// Target view, its rectified sources and the rig that relates them.
#[derive(Debug, Clone)]
pub struct StereoScene {
    pub target: ImageBuffer,
    pub sources: Vec<(ImageBuffer, SourceSide)>,
    pub rig: StereoRig,
}

impl StereoScene {
    /// Left image as target, right image as its single source.
    pub fn from_pair(left: ImageBuffer, right: ImageBuffer, rig: StereoRig) -> Result<Self> {
        let scene = Self {
            target: left,
            sources: vec![(right, SourceSide::Right)],
            rig,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn width(&self) -> usize {
        self.target.width()
    }

    pub fn height(&self) -> usize {
        self.target.height()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::arg("scene needs at least one source image"));
        }
        for (src, _) in &self.sources {
            if !src.same_dims(&self.target) {
                return Err(Error::arg(format!(
                    "source {}x{}x{} does not match target {}x{}x{}",
                    src.width(),
                    src.height(),
                    src.channels(),
                    self.target.width(),
                    self.target.height(),
                    self.target.channels()
                )));
            }
        }
        if !self.rig.left.matches(self.width(), self.height()) {
            return Err(Error::arg(format!(
                "intrinsics are for {}x{}, images are {}x{}",
                self.rig.left.width,
                self.rig.left.height,
                self.width(),
                self.height()
            )));
        }
        Ok(())
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Box mean over a square window with reflection padding (edge pixel not
/// repeated), plus its adjoint for back-propagation.
#[derive(Debug, Clone, Copy)]
struct BoxFilter {
    width: usize,
    height: usize,
    radius: usize,
}

impl BoxFilter {
    fn new(width: usize, height: usize, window: usize) -> Result<Self> {
        let radius = window / 2;
        if radius >= width || radius >= height {
            return Err(Error::arg(format!(
                "SSIM window {window} needs an image of at least {0}x{0}, got {width}x{height}",
                radius + 1
            )));
        }
        Ok(Self {
            width,
            height,
            radius,
        })
    }

    fn norm(&self) -> f64 {
        let side = (2 * self.radius + 1) as f64;
        1.0 / (side * side)
    }

    fn mean(&self, src: &[f64]) -> Vec<f64> {
        let (w, h, r) = (self.width, self.height, self.radius as isize);
        let norm = self.norm();
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let row = reflect(y as isize + dy, h) * w;
                    for dx in -r..=r {
                        acc += src[row + reflect(x as isize + dx, w)];
                    }
                }
                out[y * w + x] = acc * norm;
            }
        }
        out
    }

    fn mean_adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let (w, h, r) = (self.width, self.height, self.radius as isize);
        let norm = self.norm();
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let g = grad[y * w + x] * norm;
                if g == 0.0 {
                    continue;
                }
                for dy in -r..=r {
                    let row = reflect(y as isize + dy, h) * w;
                    for dx in -r..=r {
                        out[row + reflect(x as isize + dx, w)] += g;
                    }
                }
            }
        }
        out
    }
}

/// Sign with `sign(0) = 0`, the subgradient used at the kinks of `|·|`.
#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn product(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Windowed first and second moments of one target channel.
struct TargetMoments {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl TargetMoments {
    fn new(filter: &BoxFilter, t: &[f64]) -> Self {
        let mean = filter.mean(t);
        let sq = filter.mean(&product(t, t));
        let var = sq.iter().zip(&mean).map(|(s, m)| s - m * m).collect();
        Self { mean, var }
    }
}

/// SSIM at one pixel expressed through the reconstruction's windowed
/// moments, with partial derivatives w.r.t. E[r], E[r²] and E[t·r].
#[inline]
fn ssim_from_moments(
    mu_t: f64,
    var_t: f64,
    m_r: f64,
    m_rr: f64,
    m_tr: f64,
    c1: f64,
    c2: f64,
) -> (f64, [f64; 3]) {
    let a = 2.0 * mu_t * m_r + c1;
    let b = 2.0 * (m_tr - mu_t * m_r) + c2;
    let c = mu_t * mu_t + m_r * m_r + c1;
    let d = var_t + (m_rr - m_r * m_r) + c2;
    let cd = c * d;
    let s = a * b / cd;
    let d_mr = (2.0 * mu_t * (b - a) - s * 2.0 * m_r * (d - c)) / cd;
    let d_mrr = -s / d;
    let d_mtr = 2.0 * a / cd;
    (s, [d_mr, d_mrr, d_mtr])
}

struct ReconMoments {
    m_r: Vec<f64>,
    m_rr: Vec<f64>,
    m_tr: Vec<f64>,
}

impl ReconMoments {
    fn new(filter: &BoxFilter, t: &[f64], r: &[f64]) -> Self {
        Self {
            m_r: filter.mean(r),
            m_rr: filter.mean(&product(r, r)),
            m_tr: filter.mean(&product(t, r)),
        }
    }
}

/// Per-channel planes of a target image and their SSIM statistics.
struct TargetPlanes {
    planes: Vec<Vec<f64>>,
    moments: Vec<TargetMoments>,
    filter: BoxFilter,
}

impl TargetPlanes {
    fn new(target: &ImageBuffer, cfg: &LossConfig) -> Result<Self> {
        let filter = BoxFilter::new(target.width(), target.height(), cfg.ssim_window)?;
        let planes: Vec<_> = (0..target.channels()).map(|c| target.plane(c)).collect();
        let moments = planes.iter().map(|p| TargetMoments::new(&filter, p)).collect();
        Ok(Self {
            planes,
            moments,
            filter,
        })
    }

    fn ssim_plane(&self, c: usize, recon: &[f64], cfg: &LossConfig) -> Vec<f64> {
        let t = &self.planes[c];
        let tm = &self.moments[c];
        let rm = ReconMoments::new(&self.filter, t, recon);
        (0..t.len())
            .map(|i| {
                ssim_from_moments(
                    tm.mean[i],
                    tm.var[i],
                    rm.m_r[i],
                    rm.m_rr[i],
                    rm.m_tr[i],
                    cfg.ssim_c1,
                    cfg.ssim_c2,
                )
                .0
            })
            .collect()
    }

    /// α/2·(1 − SSIM) + (1 − α)·|t − r|, averaged over channels.
    fn reconstruction_error(&self, recon: &[Vec<f64>], cfg: &LossConfig) -> Vec<f64> {
        let n = self.planes[0].len();
        let inv_c = 1.0 / self.planes.len() as f64;
        let alpha = cfg.ssim_weight;
        let mut out = vec![0.0; n];
        for (c, r) in recon.iter().enumerate() {
            let t = &self.planes[c];
            let ssim = if alpha > 0.0 {
                self.ssim_plane(c, r, cfg)
            } else {
                vec![1.0; n]
            };
            for i in 0..n {
                out[i] += inv_c * (0.5 * alpha * (1.0 - ssim[i]) + (1.0 - alpha) * (t[i] - r[i]).abs());
            }
        }
        out
    }

    /// Back-propagates `weight[p]`-weighted reconstruction error to the
    /// reconstruction values, one gradient plane per channel.
    fn reconstruction_error_adjoint(
        &self,
        recon: &[Vec<f64>],
        weight: &[f64],
        cfg: &LossConfig,
    ) -> Vec<Vec<f64>> {
        let n = weight.len();
        let inv_c = 1.0 / self.planes.len() as f64;
        let alpha = cfg.ssim_weight;
        let mut grads = Vec::with_capacity(recon.len());
        for (c, r) in recon.iter().enumerate() {
            let t = &self.planes[c];
            let mut g = vec![0.0; n];
            if alpha > 0.0 {
                let tm = &self.moments[c];
                let rm = ReconMoments::new(&self.filter, t, r);
                let coef = -0.5 * alpha * inv_c;
                let mut g_mr = vec![0.0; n];
                let mut g_mrr = vec![0.0; n];
                let mut g_mtr = vec![0.0; n];
                for i in 0..n {
                    if weight[i] == 0.0 {
                        continue;
                    }
                    let (_, [a, b, d]) = ssim_from_moments(
                        tm.mean[i],
                        tm.var[i],
                        rm.m_r[i],
                        rm.m_rr[i],
                        rm.m_tr[i],
                        cfg.ssim_c1,
                        cfg.ssim_c2,
                    );
                    let k = coef * weight[i];
                    g_mr[i] = k * a;
                    g_mrr[i] = k * b;
                    g_mtr[i] = k * d;
                }
                let b_mr = self.filter.mean_adjoint(&g_mr);
                let b_mrr = self.filter.mean_adjoint(&g_mrr);
                let b_mtr = self.filter.mean_adjoint(&g_mtr);
                for i in 0..n {
                    g[i] = b_mr[i] + 2.0 * r[i] * b_mrr[i] + t[i] * b_mtr[i];
                }
            }
            let l1 = (1.0 - alpha) * inv_c;
            if l1 > 0.0 {
                for i in 0..n {
                    let diff = r[i] - t[i];
                    g[i] += l1 * weight[i] * sign(diff);
                }
            }
            grads.push(g);
        }
        grads
    }
}

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::arg(format!(
            "dimension mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

fn planes_of(img: &ImageBuffer) -> Vec<Vec<f64>> {
    (0..img.channels()).map(|c| img.plane(c)).collect()
}

/// Per-pixel, per-channel SSIM between `a` and `b`, windowed with a box
/// filter and reflection padding.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, cfg: &LossConfig) -> Result<ImageBuffer> {
    cfg.validate()?;
    check_same_dims(a, b)?;
    let target = TargetPlanes::new(a, cfg)?;
    let planes: Vec<_> = (0..a.channels())
        .map(|c| target.ssim_plane(c, &b.plane(c), cfg))
        .collect();
    ImageBuffer::from_planes(a.width(), a.height(), &planes)
}

/// Single-channel reconstruction error map.
pub fn reconstruction_error(
    target: &ImageBuffer,
    recon: &ImageBuffer,
    cfg: &LossConfig,
) -> Result<ImageBuffer> {
    cfg.validate()?;
    check_same_dims(target, recon)?;
    let t = TargetPlanes::new(target, cfg)?;
    ImageBuffer::from_plane(
        target.width(),
        target.height(),
        t.reconstruction_error(&planes_of(recon), cfg),
    )
}

/// Output of [`reprojection_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct MinReprojection {
    /// Minimum reconstruction error per pixel; zero where no source is valid.
    pub per_pixel: ImageBuffer,
    /// True where at least one reconstruction was valid.
    pub valid: Vec<bool>,
    /// Index of the reconstruction that attained the minimum.
    pub argmin: Vec<Option<usize>>,
}

fn min_over_sources(errors: &[(Vec<f64>, &[bool])], n: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut best = vec![f64::INFINITY; n];
    let mut arg = vec![None; n];
    for (s, (re, valid)) in errors.iter().enumerate() {
        for i in 0..n {
            if valid[i] && re[i] < best[i] {
                best[i] = re[i];
                arg[i] = Some(s);
            }
        }
    }
    (best, arg)
}

/// Per-pixel minimum reconstruction error across the valid reconstructions.
pub fn reprojection_loss(
    target: &ImageBuffer,
    reconstructions: &[(ImageBuffer, Vec<bool>)],
    cfg: &LossConfig,
) -> Result<MinReprojection> {
    cfg.validate()?;
    if reconstructions.is_empty() {
        return Err(Error::arg("reprojection loss needs at least one reconstruction"));
    }
    let n = target.pixel_count();
    for (r, valid) in reconstructions {
        check_same_dims(target, r)?;
        if valid.len() != n {
            return Err(Error::arg("validity mask length does not match image"));
        }
    }
    let t = TargetPlanes::new(target, cfg)?;
    let errors: Vec<_> = reconstructions
        .iter()
        .map(|(r, v)| (t.reconstruction_error(&planes_of(r), cfg), v.as_slice()))
        .collect();
    let (best, argmin) = min_over_sources(&errors, n);
    let valid: Vec<bool> = argmin.iter().map(Option::is_some).collect();
    let per_pixel = best
        .into_iter()
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    Ok(MinReprojection {
        per_pixel: ImageBuffer::from_plane(target.width(), target.height(), per_pixel)?,
        valid,
        argmin,
    })
}

fn mask_from_errors(
    warped_min: &[f64],
    raw_min: &[f64],
    cfg: &LossConfig,
) -> Vec<bool> {
    if !cfg.automask_enabled {
        return vec![true; warped_min.len()];
    }
    warped_min
        .iter()
        .zip(raw_min)
        .map(|(w, r)| *w < *r + cfg.automask_margin)
        .collect()
}

/// Auto-mask μ: 1 where the best warped reconstruction beats the best
/// unwarped source, 0 otherwise. Always 1 when auto-masking is disabled.
pub fn auto_mask(
    target: &ImageBuffer,
    warped_sources: &[(ImageBuffer, Vec<bool>)],
    raw_sources: &[ImageBuffer],
    cfg: &LossConfig,
) -> Result<Vec<bool>> {
    cfg.validate()?;
    let n = target.pixel_count();
    if !cfg.automask_enabled {
        return Ok(vec![true; n]);
    }
    if warped_sources.is_empty() || raw_sources.is_empty() {
        return Err(Error::arg("auto-mask needs warped and raw sources"));
    }
    let warped = reprojection_loss(target, warped_sources, cfg)?;
    let t = TargetPlanes::new(target, cfg)?;
    let all_valid = vec![true; n];
    let mut raw_errors = Vec::with_capacity(raw_sources.len());
    for r in raw_sources {
        check_same_dims(target, r)?;
        raw_errors.push((t.reconstruction_error(&planes_of(r), cfg), all_valid.as_slice()));
    }
    let (raw_min, _) = min_over_sources(&raw_errors, n);
    let warped_min: Vec<f64> = warped
        .per_pixel
        .data()
        .iter()
        .zip(&warped.valid)
        .map(|(&v, &ok)| if ok { v } else { f64::INFINITY })
        .collect();
    Ok(mask_from_errors(&warped_min, &raw_min, cfg))
}

/// Edge weights `exp(-mean_c |∂I_c|)` along x and y.
fn edge_weights(image: &ImageBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    let (gx, gy) = spatial_gradient(image)?;
    let ch = image.channels() as f64;
    let weights = |g: &ImageBuffer| {
        g.data()
            .chunks_exact(image.channels())
            .map(|px| (-px.iter().map(|v| v.abs()).sum::<f64>() / ch).exp())
            .collect()
    };
    Ok((weights(&gx), weights(&gy)))
}

/// Edge-aware smoothness of `disp` normalised by its mean. Returns the value
/// and, when asked, its gradient. A mean of zero yields `None`.
fn smoothness_terms(
    disp: &[f64],
    width: usize,
    height: usize,
    wx: &[f64],
    wy: &[f64],
    want_grad: bool,
) -> Option<(f64, Option<Vec<f64>>)> {
    let n = disp.len();
    let inv_n = 1.0 / n as f64;
    let mean = disp.iter().sum::<f64>() * inv_n;
    if !(mean > 0.0) {
        return None;
    }
    let inv_mean = 1.0 / mean;
    let mut raw = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; n]);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                let g = disp[i + 1] - disp[i];
                raw += wx[i] * g.abs();
                if let Some(gr) = grad.as_mut() {
                    let s = wx[i] * sign(g);
                    gr[i + 1] += s;
                    gr[i] -= s;
                }
            }
            if y + 1 < height {
                let g = disp[i + width] - disp[i];
                raw += wy[i] * g.abs();
                if let Some(gr) = grad.as_mut() {
                    let s = wy[i] * sign(g);
                    gr[i + width] += s;
                    gr[i] -= s;
                }
            }
        }
    }
    let raw = raw * inv_n;
    let value = raw * inv_mean;
    if let Some(gr) = grad.as_mut() {
        // d(raw/mean)/dd = (1/mean)·draw/dd − raw/(mean²·n)
        let shift = raw * inv_mean * inv_mean * inv_n;
        for g in gr.iter_mut() {
            *g = *g * inv_n * inv_mean - shift;
        }
    }
    Some((value, grad))
}

/// Mean over pixels of `|∂x d*|·e^{−|∂x I|} + |∂y d*|·e^{−|∂y I|}` with
/// `d* = d / mean(d)`.
pub fn smoothness_loss(disparity: &DisparityMap, target: &ImageBuffer) -> Result<f64> {
    if !disparity.values().same_size(target) {
        return Err(Error::arg("disparity and image sizes differ"));
    }
    let (wx, wy) = edge_weights(target)?;
    smoothness_terms(
        disparity.values().data(),
        disparity.width(),
        disparity.height(),
        &wx,
        &wy,
        false,
    )
    .map(|(v, _)| v)
    .ok_or_else(|| Error::arg("smoothness is undefined for a zero-mean disparity"))
}

/// Rectified reconstruction of one source with the slope of each sample
/// w.r.t. the disparity at that pixel.
struct Warped {
    planes: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    valid: Vec<bool>,
}

fn warp_with_slopes(source: &ImageBuffer, side: SourceSide, disparity: &DisparityMap) -> Warped {
    let (w, h, ch) = (source.width(), source.height(), source.channels());
    let dir = side.direction();
    let n = w * h;
    let mut planes = vec![vec![0.0; n]; ch];
    let mut slopes = vec![vec![0.0; n]; ch];
    let mut valid = vec![false; n];
    let max_x = (w - 1) as f64;
    // slopes are right derivatives in d, the direction the clamp at 0 allows
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + dir * disparity.get(x, y);
            valid[i] = disparity.is_valid(x, y) && (0.0..=max_x).contains(&sx);
            for c in 0..ch {
                let (v, s) = sample_row_with_slope(source, sx, y, c, dir < 0.0);
                planes[c][i] = v;
                slopes[c][i] = dir * s;
            }
        }
    }
    Warped {
        planes,
        slopes,
        valid,
    }
}

/// What [`evaluate`] should compute beyond the loss value.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions<'a> {
    pub gradient: bool,
    /// Use this set of contributing pixels instead of recomputing
    /// validity and the auto-mask. Lets finite differences see the same
    /// piecewise-smooth branch the analytic gradient differentiates.
    pub frozen_selection: Option<&'a [bool]>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    /// Pixels that entered the photometric mean (valid and unmasked).
    pub selected: Vec<bool>,
    /// ∂L/∂d per pixel, present when requested.
    pub gradient: Option<ImageBuffer>,
}

/// Evaluates the total loss on `scene` at `disparity`, optionally with its
/// gradient. The auto-mask is treated as a constant when differentiating.
pub fn evaluate(
    scene: &StereoScene,
    disparity: &DisparityMap,
    cfg: &LossConfig,
    opts: EvalOptions<'_>,
) -> Result<Evaluation> {
    cfg.validate()?;
    scene.validate()?;
    let (w, h) = (scene.width(), scene.height());
    if disparity.width() != w || disparity.height() != h {
        return Err(Error::arg(format!(
            "disparity is {}x{}, scene is {w}x{h}",
            disparity.width(),
            disparity.height()
        )));
    }
    let n = w * h;
    if let Some(sel) = opts.frozen_selection {
        if sel.len() != n {
            return Err(Error::arg("frozen selection length does not match scene"));
        }
    }
    let target = TargetPlanes::new(&scene.target, cfg)?;

    let warped: Vec<Warped> = scene
        .sources
        .iter()
        .map(|(src, side)| warp_with_slopes(src, *side, disparity))
        .collect();
    let errors: Vec<(Vec<f64>, &[bool])> = warped
        .iter()
        .map(|wp| (target.reconstruction_error(&wp.planes, cfg), wp.valid.as_slice()))
        .collect();
    let (best, argmin) = min_over_sources(&errors, n);

    let selected: Vec<bool> = match opts.frozen_selection {
        Some(sel) => sel.iter().zip(&argmin).map(|(&s, a)| s && a.is_some()).collect(),
        None => {
            let mask = if cfg.automask_enabled {
                let all_valid = vec![true; n];
                let raw: Vec<_> = scene
                    .sources
                    .iter()
                    .map(|(src, _)| (target.reconstruction_error(&planes_of(src), cfg), all_valid.as_slice()))
                    .collect();
                let (raw_min, _) = min_over_sources(&raw, n);
                mask_from_errors(&best, &raw_min, cfg)
            } else {
                vec![true; n]
            };
            mask.iter().zip(&argmin).map(|(&m, a)| m && a.is_some()).collect()
        }
    };

    let count = selected.iter().filter(|&&s| s).count();
    let photometric = if count == 0 {
        0.0
    } else {
        let mut sum = 0.0;
        for i in 0..n {
            if selected[i] {
                sum += best[i];
            }
        }
        sum / count as f64
    };

    let (wx, wy) = edge_weights(&scene.target)?;
    let smooth = smoothness_terms(disparity.values().data(), w, h, &wx, &wy, opts.gradient);
    let smoothness = smooth.as_ref().map_or(0.0, |(v, _)| *v);

    let per_pixel: Vec<f64> = best
        .iter()
        .map(|&v| if v.is_finite() { v } else { 0.0 })
        .collect();
    let breakdown = LossBreakdown {
        total: photometric + cfg.lambda_smooth * smoothness,
        photometric,
        smoothness,
        masked_fraction: 1.0 - count as f64 / n as f64,
        per_pixel_photometric: ImageBuffer::from_plane(w, h, per_pixel)?,
    };

    let gradient = if opts.gradient {
        let mut grad = vec![0.0; n];
        if count > 0 {
            let inv = 1.0 / count as f64;
            for (s, wp) in warped.iter().enumerate() {
                let weight: Vec<f64> = (0..n)
                    .map(|i| if selected[i] && argmin[i] == Some(s) { inv } else { 0.0 })
                    .collect();
                if weight.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let g_recon = target.reconstruction_error_adjoint(&wp.planes, &weight, cfg);
                for (g_c, slope_c) in g_recon.iter().zip(&wp.slopes) {
                    for i in 0..n {
                        grad[i] += g_c[i] * slope_c[i];
                    }
                }
            }
        }
        if let Some((_, Some(gs))) = &smooth {
            for (g, s) in grad.iter_mut().zip(gs) {
                *g += cfg.lambda_smooth * s;
            }
        }
        Some(ImageBuffer::from_plane(w, h, grad)?)
    } else {
        None
    };

    Ok(Evaluation {
        breakdown,
        selected,
        gradient,
    })
}

/// `L = μ·L_p + λ·L_s` on a rectified scene.
pub fn total_loss(
    scene: &StereoScene,
    disparity: &DisparityMap,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    evaluate(scene, disparity, cfg, EvalOptions::default()).map(|e| e.breakdown)
}

/// Analytic ∂L/∂d per pixel.
pub fn loss_gradient(
    scene: &StereoScene,
    disparity: &DisparityMap,
    cfg: &LossConfig,
) -> Result<ImageBuffer> {
    let eval = evaluate(
        scene,
        disparity,
        cfg,
        EvalOptions {
            gradient: true,
            frozen_selection: None,
        },
    )?;
    Ok(eval.gradient.expect("gradient requested"))
}
