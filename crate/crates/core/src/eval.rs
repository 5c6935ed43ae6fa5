//! Depth metrics, scale policies and two-pass flip fusion.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::camera::{DepthMap, DisparityMap};
use crate::error::{Error, Result};
use crate::image::{hflip, hflip_mask, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    Fixed(f64),
    Median,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling::Fixed(1.0)
    }
}

impl std::fmt::Display for Scaling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scaling::None => f.write_str("none"),
            Scaling::Fixed(c) => write!(f, "fixed:{c}"),
            Scaling::Median => f.write_str("median"),
        }
    }
}

impl std::str::FromStr for Scaling {
    type Err = Error;

    /// Accepts `none`, `median`, `fixed:<c>` or a bare number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" => return Ok(Scaling::None),
            "median" => return Ok(Scaling::Median),
            _ => {}
        }
        let num = s.strip_prefix("fixed:").unwrap_or(s);
        let c: f64 = num
            .parse()
            .map_err(|_| Error::arg(format!("unknown scaling `{s}`; expected none, median or fixed:<c>")))?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::arg(format!("scale factor must be positive, got {c}")));
        }
        Ok(Scaling::Fixed(c))
    }
}

/// Pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Crop {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub min_depth: f64,
    pub max_depth: f64,
    pub scaling: Scaling,
    pub crop: Option<Crop>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_depth: 1e-3,
            max_depth: 80.0,
            scaling: Scaling::default(),
            crop: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.max_depth > self.min_depth && self.max_depth.is_finite()) {
            return Err(Error::arg(format!(
                "depth range must satisfy 0 < min < max, got [{}, {}]",
                self.min_depth, self.max_depth
            )));
        }
        if let Scaling::Fixed(c) = self.scaling {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::arg(format!("scale factor must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
    /// Scaling mode that was applied.
    pub scaling: String,
    /// Factor the prediction was multiplied by.
    pub scale_factor: f64,
}

impl EvalReport {
    /// One `key=value` pair per line.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
        ] {
            let _ = writeln!(s, "{k}={v:.6}");
        }
        let _ = writeln!(s, "n_valid={}", self.n_valid);
        let _ = writeln!(s, "scaling={}", self.scaling);
        let _ = writeln!(s, "scale_factor={}", self.scale_factor);
        s
    }

    /// Averages several reports, weighting each by its valid pixel count.
    pub fn pooled(reports: &[EvalReport]) -> Result<EvalReport> {
        let n: usize = reports.iter().map(|r| r.n_valid).sum();
        if n == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(|r| f(r) * r.n_valid as f64).sum::<f64>() / n as f64;
        // root metrics pool through their squares
        let rms = |f: fn(&EvalReport) -> f64| {
            (reports.iter().map(|r| f(r).powi(2) * r.n_valid as f64).sum::<f64>() / n as f64).sqrt()
        };
        Ok(EvalReport {
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: rms(|r| r.rmse),
            rmse_log: rms(|r| r.rmse_log),
            delta1: avg(|r| r.delta1),
            delta2: avg(|r| r.delta2),
            delta3: avg(|r| r.delta3),
            n_valid: n,
            scaling: reports[0].scaling.clone(),
            scale_factor: avg(|r| r.scale_factor),
        })
    }
}

/// Pixels that take part in evaluation: ground truth valid, inside the
/// depth range and inside the crop.
fn evaluation_mask(gt: &DepthMap, cfg: &EvalConfig) -> Vec<bool> {
    let w = gt.width();
    gt.values()
        .data()
        .iter()
        .zip(gt.valid())
        .enumerate()
        .map(|(i, (&g, &v))| {
            v && g >= cfg.min_depth && g <= cfg.max_depth && cfg.crop.is_none_or(|c| c.contains(i % w, i / w))
        })
        .collect()
}

/// Median of the selected values; even counts average the middle pair.
pub fn masked_median(values: &[f64], mask: &[bool]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn check_same_size(a: &DepthMap, b: &DepthMap) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::arg(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn scale_factor(pred: &DepthMap, cfg: &EvalConfig, gt: Option<&DepthMap>) -> Result<f64> {
    match cfg.scaling {
        Scaling::None => Ok(1.0),
        Scaling::Fixed(c) => Ok(c),
        Scaling::Median => {
            let gt = gt.ok_or_else(|| Error::arg("median scaling needs ground truth"))?;
            check_same_size(pred, gt)?;
            let mask: Vec<bool> = evaluation_mask(gt, cfg)
                .iter()
                .zip(pred.valid())
                .map(|(&m, &p)| m && p)
                .collect();
            let g = masked_median(gt.values().data(), &mask).ok_or(Error::EmptyEvaluation)?;
            let p = masked_median(pred.values().data(), &mask).ok_or(Error::EmptyEvaluation)?;
            if p <= 0.0 {
                return Err(Error::arg("median of prediction is not positive"));
            }
            Ok(g / p)
        }
    }
}

/// Multiplies the prediction by the factor the scaling policy selects.
pub fn apply_scaling(pred: &DepthMap, cfg: &EvalConfig, gt: Option<&DepthMap>) -> Result<DepthMap> {
    cfg.validate()?;
    let s = scale_factor(pred, cfg, gt)?;
    if s == 1.0 {
        return Ok(pred.clone());
    }
    DepthMap::with_mask(pred.values().map(|v| v * s)?, pred.valid().to_vec())
}

/// Standard depth error metrics over valid ground-truth pixels.
///
/// The prediction is scaled per `cfg.scaling` and clamped to the depth
/// range; predicted pixels marked invalid count as `max_depth`.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_same_size(pred, gt)?;
    let s = scale_factor(pred, cfg, Some(gt))?;
    let mask = evaluation_mask(gt, cfg);
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    let mut n = 0usize;
    let (t1, t2, t3) = (1.25, 1.25f64.powi(2), 1.25f64.powi(3));
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let g = gt.values().data()[i];
        let p = if pred.valid()[i] {
            (pred.values().data()[i] * s).clamp(cfg.min_depth, cfg.max_depth)
        } else {
            cfg.max_depth
        };
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        d1 += (ratio < t1) as usize;
        d2 += (ratio < t2) as usize;
        d3 += (ratio < t3) as usize;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let nf = n as f64;
    Ok(EvalReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: d1 as f64 / nf,
        delta2: d2 as f64 / nf,
        delta3: d3 as f64 / nf,
        n_valid: n,
        scaling: cfg.scaling.to_string(),
        scale_factor: s,
    })
}

/// Fraction of the width covered by each edge band, and by each ramp.
pub const FUSE_BAND: f64 = 0.05;

/// Weight of the un-flipped pass near the left edge: 1 over the first 5%
/// of the width, ramping linearly to 0 over the next 5%.
pub fn left_band_weight(x: usize, width: usize) -> f64 {
    let l = if width > 1 { x as f64 / (width - 1) as f64 } else { 0.0 };
    1.0 - ((l - FUSE_BAND) / FUSE_BAND).clamp(0.0, 1.0)
}

/// Fuses a prediction with the prediction on the mirrored input.
///
/// `flipped_pass` is still in the mirrored frame. The left band keeps the
/// direct pass, the right band the mirrored one, the interior their mean.
/// Written as `m + wl·(d − m) + wr·(f − m)` so that fusing a map with its
/// own mirror returns it bit for bit.
pub fn post_process_fuse(direct: &DisparityMap, flipped_pass: &DisparityMap) -> Result<DisparityMap> {
    let (w, h) = (direct.width(), direct.height());
    if flipped_pass.width() != w || flipped_pass.height() != h {
        return Err(Error::arg(format!(
            "passes differ in size: {w}x{h} vs {}x{}",
            flipped_pass.width(),
            flipped_pass.height()
        )));
    }
    let unflipped = hflip(flipped_pass.values());
    let unflipped_valid = hflip_mask(flipped_pass.valid(), w);
    let d = direct.values().data();
    let f = unflipped.data();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let wl = left_band_weight(x, w);
            let wr = left_band_weight(w - 1 - x, w);
            let m = 0.5 * (d[i] + f[i]);
            out.push(m + wl * (d[i] - m) + wr * (f[i] - m));
        }
    }
    let valid = direct.valid().iter().zip(&unflipped_valid).map(|(&a, &b)| a && b).collect();
    DisparityMap::with_mask(ImageBuffer::from_plane(w, h, out)?, valid)
}
