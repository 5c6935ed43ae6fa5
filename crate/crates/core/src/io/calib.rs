//! KITTI-style projection-matrix calibration files.

use crate::camera::{Intrinsics, StereoRig};
use crate::error::{Error, Result};

/// Left and right rectified projection matrices, row-major 3×4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSet {
    pub p_left: [f64; 12],
    pub p_right: [f64; 12],
    /// Rectified image size `(width, height)` when the file records it.
    pub image_size: Option<(usize, usize)>,
}

const LEFT_KEYS: [&str; 2] = ["P2", "P_rect_02"];
const RIGHT_KEYS: [&str; 2] = ["P3", "P_rect_03"];
const SIZE_KEY: &str = "S_rect_02";

fn parse_numbers<const N: usize>(rest: &str, line: usize, key: &str) -> Result<[f64; N]> {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    if tokens.len() != N {
        return Err(Error::Parse {
            line,
            reason: format!("`{key}` needs {N} numbers, found {}", tokens.len()),
        });
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(&tokens) {
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            line,
            reason: format!("`{key}`: `{t}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                reason: format!("`{key}`: non-finite value `{t}`"),
            });
        }
        *o = v;
    }
    Ok(out)
}

/// Reads `P2:`/`P3:` (or `P_rect_02:`/`P_rect_03:`) lines. Other keys are
/// ignored; `S_rect_02:` is picked up as the image size when present.
pub fn parse_calibration(text: &str) -> Result<CalibrationSet> {
    let mut left: Option<(usize, usize, [f64; 12])> = None;
    let mut right: Option<(usize, usize, [f64; 12])> = None;
    let mut size = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let Some((key, rest)) = raw.split_once(':') else {
            continue;
        };
        let key = key.trim();
        // earlier keys in the lists take precedence over later ones
        if let Some(rank) = LEFT_KEYS.iter().position(|k| *k == key) {
            let p = parse_numbers::<12>(rest, line, key)?;
            if left.is_none_or(|(r, _, _)| rank < r) {
                left = Some((rank, line, p));
            }
        } else if let Some(rank) = RIGHT_KEYS.iter().position(|k| *k == key) {
            let p = parse_numbers::<12>(rest, line, key)?;
            if right.is_none_or(|(r, _, _)| rank < r) {
                right = Some((rank, line, p));
            }
        } else if key == SIZE_KEY {
            let s = parse_numbers::<2>(rest, line, key)?;
            if s[0] < 1.0 || s[1] < 1.0 || s[0].fract() != 0.0 || s[1].fract() != 0.0 {
                return Err(Error::Parse {
                    line,
                    reason: format!("`{key}` must hold two positive integers"),
                });
            }
            size = Some((s[0] as usize, s[1] as usize));
        }
    }
    let missing = |what: &str| Error::Parse {
        line: text.lines().count() + 1,
        reason: format!("missing `{what}:` line"),
    };
    let (_, left_line, p_left) = left.ok_or_else(|| missing("P2"))?;
    let (_, right_line, p_right) = right.ok_or_else(|| missing("P3"))?;
    let set = CalibrationSet {
        p_left,
        p_right,
        image_size: size,
    };
    if !(set.fx() > 0.0) {
        return Err(Error::Parse {
            line: left_line,
            reason: format!("focal length must be positive, got {}", set.fx()),
        });
    }
    if !(set.baseline() > 0.0) {
        return Err(Error::Parse {
            line: right_line,
            reason: format!("baseline must be positive, got {}", set.baseline()),
        });
    }
    Ok(set)
}

impl CalibrationSet {
    pub fn fx(&self) -> f64 {
        self.p_left[0]
    }

    /// `(P2[0,3] − P3[0,3]) / fx`, in the units of the translation column.
    pub fn baseline(&self) -> f64 {
        (self.p_left[3] - self.p_right[3]) / self.fx()
    }

    /// Left intrinsics for an image of the given size.
    pub fn intrinsics(&self, width: usize, height: usize) -> Result<Intrinsics> {
        let p = &self.p_left;
        Intrinsics::new(p[0], p[5], p[2], p[6], width, height)
    }

    /// Intrinsics at the recorded image size.
    pub fn native_intrinsics(&self) -> Result<Intrinsics> {
        let (w, h) = self
            .image_size
            .ok_or_else(|| Error::arg("calibration does not record the image size"))?;
        self.intrinsics(w, h)
    }

    pub fn rig(&self, width: usize, height: usize) -> Result<StereoRig> {
        StereoRig::new(self.intrinsics(width, height)?, self.baseline())
    }
}

/// Writes a calibration text that [`parse_calibration`] maps back to the
/// given intrinsics and baseline.
pub fn synthesize_calibration(k: &Intrinsics, baseline_m: f64) -> String {
    let row = |tx: f64| {
        let m = [k.fx, 0.0, k.cx, tx, 0.0, k.fy, k.cy, 0.0, 0.0, 0.0, 1.0, 0.0];
        m.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
    };
    format!(
        "P2: {}\nP3: {}\n{SIZE_KEY}: {} {}\n",
        row(0.0),
        row(-k.fx * baseline_m),
        k.width,
        k.height
    )
}
