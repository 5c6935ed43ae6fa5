//! Dense float rasters and the sampling kernels built on them.
//!
//! Layout is row-major with interleaved channels: the value for pixel
//! `(x, y)` and channel `c` lives at `(y * width + x) * channels + c`.
//! Pixel centers sit on integer coordinates, origin top-left, x to the
//! right and y downward.

use crate::error::{Error, Result};

/// Luma weights used wherever a single intensity channel is derived from RGB.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::arg(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Builds a single-channel image from a planar slice.
    pub fn from_plane(width: usize, height: usize, plane: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, plane)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    /// Writes one value. Non-finite values are rejected to keep the
    /// constructor invariant.
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::arg("non-finite value"));
        }
        let i = self.index(x, y, c);
        self.data[i] = value;
        Ok(())
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Extracts one channel as a planar `Vec` of `width * height` values.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn channel(&self, channel: usize) -> Result<ImageBuffer> {
        if channel >= self.channels {
            return Err(Error::arg(format!(
                "channel {channel} out of range for {}-channel image",
                self.channels
            )));
        }
        Self::from_plane(self.width, self.height, self.plane(channel))
    }

    /// Interleaves single-channel planes into one image.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        if planes.iter().any(|p| p.len() != width * height) {
            return Err(Error::arg("plane length does not match image size"));
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for i in 0..width * height {
            data.extend(planes.iter().map(|p| p[i]));
        }
        Self::new(width, height, channels, data)
    }

    /// Single-channel intensity. RGB uses [`LUMA_WEIGHTS`], other channel
    /// counts fall back to the plain channel mean.
    pub fn grayscale(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| {
                if px.len() == 3 {
                    px.iter().zip(LUMA_WEIGHTS).map(|(v, w)| v * w).sum()
                } else {
                    px.iter().sum::<f64>() / px.len() as f64
                }
            })
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Concatenates the channels of `first` and `second` per pixel, `first`
    /// leading. Used to build the 6-channel left-then-right network input.
    pub fn stack_channels(first: &ImageBuffer, second: &ImageBuffer) -> Result<ImageBuffer> {
        if !first.same_size(second) {
            return Err(Error::arg(format!(
                "cannot stack {}x{} with {}x{}",
                first.width, first.height, second.width, second.height
            )));
        }
        let channels = first.channels + second.channels;
        let mut data = Vec::with_capacity(first.pixel_count() * channels);
        for (a, b) in first
            .data
            .chunks_exact(first.channels)
            .zip(second.data.chunks_exact(second.channels))
        {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(ImageBuffer {
            width: first.width,
            height: first.height,
            channels,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ImageBuffer> {
        Self::new(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Linear interpolation that never leaves `[min(a, b), max(a, b)]` and is
/// exact at `t == 0` and whenever `a == b`.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    if a <= b {
        v.clamp(a, b)
    } else {
        v.clamp(b, a)
    }
}

/// Lattice cell and fractional offset for a coordinate clamped to `[0, n-1]`.
#[inline]
fn cell(coord: f64, n: usize) -> (usize, usize, f64) {
    let c = coord.clamp(0.0, (n - 1) as f64);
    let i0 = (c.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

/// Bilinear lookup with clamp-to-edge borders.
pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64, channel: usize) -> Result<f64> {
    if channel >= img.channels {
        return Err(Error::arg(format!(
            "channel {channel} out of range for {}-channel image",
            img.channels
        )));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::arg("sample coordinate must be finite"));
    }
    Ok(sample_unchecked(img, x, y, channel))
}

#[inline]
pub(crate) fn sample_unchecked(img: &ImageBuffer, x: f64, y: f64, channel: usize) -> f64 {
    let (x0, x1, tx) = cell(x, img.width);
    let (y0, y1, ty) = cell(y, img.height);
    let top = lerp(img.get(x0, y0, channel), img.get(x1, y0, channel), tx);
    let bottom = lerp(img.get(x0, y1, channel), img.get(x1, y1, channel), tx);
    lerp(top, bottom, ty)
}

/// True when `(x, y)` lies inside `[0, width-1] x [0, height-1]`.
#[inline]
pub fn in_frame(img: &ImageBuffer, x: f64, y: f64) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (img.width - 1) as f64 && y <= (img.height - 1) as f64
}

/// Samples row `y` at continuous column `x` and returns the value together
/// with its derivative along x. The derivative is zero where the
/// coordinate is clamped to the border.
#[inline]
pub(crate) fn sample_row_with_slope(
    img: &ImageBuffer,
    x: f64,
    y: usize,
    channel: usize,
    toward_lower: bool,
) -> (f64, f64) {
    let w = img.width;
    if w == 1 {
        return (img.get(0, y, channel), 0.0);
    }
    let (x0, x1, t) = cell(x, w);
    let a = img.get(x0, y, channel);
    let b = img.get(x1, y, channel);
    let value = lerp(a, b, t);
    let max_x = (w - 1) as f64;
    if x < 0.0 || x > max_x {
        return (value, 0.0);
    }
    // on a grid line the profile has a kink; report the one-sided slope in
    // the direction the caller is about to move
    let slope = if t == 0.0 && toward_lower {
        if x0 == 0 {
            0.0
        } else {
            a - img.get(x0 - 1, y, channel)
        }
    } else if x0 == x1 {
        0.0
    } else {
        b - a
    };
    (value, slope)
}

/// Forward differences along x and y, zero in the last column / row.
pub fn spatial_gradient(img: &ImageBuffer) -> Result<(ImageBuffer, ImageBuffer)> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::arg(format!(
            "spatial gradient needs at least 2x2 pixels, got {}x{}",
            img.width, img.height
        )));
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut gx = vec![0.0; img.data.len()];
    let mut gy = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let i = img.index(x, y, c);
                if x + 1 < w {
                    gx[i] = img.get(x + 1, y, c) - img.data[i];
                }
                if y + 1 < h {
                    gy[i] = img.get(x, y + 1, c) - img.data[i];
                }
            }
        }
    }
    Ok((
        ImageBuffer::new(w, h, ch, gx)?,
        ImageBuffer::new(w, h, ch, gy)?,
    ))
}

/// Maps an output coordinate to the input grid with corners aligned:
/// output pixel 0 lands on input pixel 0 and output `n_out - 1` on input
/// `n_in - 1`.
#[inline]
pub fn corner_aligned_scale(n_in: usize, n_out: usize) -> f64 {
    if n_out <= 1 {
        0.0
    } else {
        (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

pub fn resize_bilinear(img: &ImageBuffer, new_w: usize, new_h: usize) -> Result<ImageBuffer> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::arg(format!(
            "target size must be positive, got {new_w}x{new_h}"
        )));
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let sx = corner_aligned_scale(img.width, new_w);
    let sy = corner_aligned_scale(img.height, new_h);
    let ch = img.channels;
    let xs: Vec<_> = (0..new_w).map(|x| cell(x as f64 * sx, img.width)).collect();
    let mut data = Vec::with_capacity(new_w * new_h * ch);
    for y in 0..new_h {
        let (y0, y1, ty) = cell(y as f64 * sy, img.height);
        let row0 = &img.data[y0 * img.width * ch..(y0 + 1) * img.width * ch];
        let row1 = &img.data[y1 * img.width * ch..(y1 + 1) * img.width * ch];
        for &(x0, x1, tx) in &xs {
            for c in 0..ch {
                let top = lerp(row0[x0 * ch + c], row0[x1 * ch + c], tx);
                let bottom = lerp(row1[x0 * ch + c], row1[x1 * ch + c], tx);
                data.push(lerp(top, bottom, ty));
            }
        }
    }
    ImageBuffer::new(new_w, new_h, ch, data)
}

pub fn hflip(img: &ImageBuffer) -> ImageBuffer {
    let (w, ch) = (img.width, img.channels);
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks_exact(w * ch) {
        for px in row.chunks_exact(ch).rev() {
            data.extend_from_slice(px);
        }
    }
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: img.channels,
        data,
    }
}

/// Mirrors a row-major per-pixel mask the same way [`hflip`] mirrors pixels.
pub fn hflip_mask(mask: &[bool], width: usize) -> Vec<bool> {
    mask.chunks_exact(width)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}
