//! Split files: one `scene frame side` triple per line.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// The other camera of the pair.
    pub fn partner(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// KITTI raw image folder for this camera.
    pub fn image_dir(self) -> &'static str {
        match self {
            Side::Left => "image_02",
            Side::Right => "image_03",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "l",
            Side::Right => "r",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitEntry {
    pub scene: String,
    pub frame: u64,
    pub side: Side,
}

impl SplitEntry {
    /// Same frame seen by the other camera.
    pub fn partner(&self) -> SplitEntry {
        SplitEntry {
            side: self.side.partner(),
            ..self.clone()
        }
    }

    /// `root/scene/image_0X/data/<frame:010>.<ext>`.
    pub fn image_path(&self, root: &Path, ext: &str) -> PathBuf {
        root.join(&self.scene)
            .join(self.side.image_dir())
            .join("data")
            .join(format!("{:010}.{ext}", self.frame))
    }
}

/// Parses a split file. Blank lines are skipped.
pub fn parse_split(text: &str) -> Result<Vec<SplitEntry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let [scene, frame, side] = tokens[..] else {
            return Err(Error::Parse {
                line,
                reason: format!("expected `scene frame side`, found {} fields", tokens.len()),
            });
        };
        let frame: u64 = frame.parse().map_err(|_| Error::Parse {
            line,
            reason: format!("frame index `{frame}` is not a non-negative integer"),
        })?;
        let side = match side {
            "l" => Side::Left,
            "r" => Side::Right,
            other => {
                return Err(Error::Parse {
                    line,
                    reason: format!("side must be `l` or `r`, found `{other}`"),
                })
            }
        };
        out.push(SplitEntry {
            scene: scene.to_string(),
            frame,
            side,
        });
    }
    Ok(out)
}
