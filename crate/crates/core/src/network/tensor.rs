//! Planar (CHW) tensors and the inference kernels the executor needs.

use std::fmt::Debug;

use num_traits::Float;
use rayon::prelude::*;

use super::arch::{LayerSpec, PadMode};
use crate::image::ImageBuffer;

/// Floating-point element type usable by the kernels.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = a · b` for row-major `a` (m×k), `b` (k×n), `c` (m×n).
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);

    fn from_f32(v: f32) -> Self;

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: bounds checked above; strides describe dense row-major storage.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }

    fn from_f32(v: f32) -> Self {
        v
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: bounds checked above; strides describe dense row-major storage.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }

    fn from_f32(v: f32) -> Self {
        v as f64
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Converts an interleaved image to planar layout.
    pub fn from_image(img: &ImageBuffer) -> Self {
        Self::from_fn(img.channels(), img.height(), img.width(), |c, y, x| {
            T::from_f64(img.get(x, y, c))
        })
    }

    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.at(c, y, x).to_f64()
        })
        .expect("tensor dims are non-zero")
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(mut self, f: impl Fn(T) -> T + Sync) -> Self {
        self.data.par_iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

/// Index into `[0, n)` after padding by reflection (edge not repeated).
#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Maps a padded coordinate to the source index, or `None` for a zero tap.
#[inline]
fn source_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zeros => None,
        PadMode::Reflect => Some(reflect_index(i, n)),
    }
}

/// Output rows handled per parallel work item.
const CONV_TILE_ROWS: usize = 8;

/// 2-D convolution via per-tile patch matrices and GEMM.
///
/// `weight` is `(out, in, kh, kw)` row-major. Work is split into fixed row
/// tiles, so results do not depend on the thread count.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &[T], bias: Option<&[T]>, layer: &LayerSpec) -> Tensor<T> {
    let (kh, kw) = layer.kernel;
    let (sh, sw) = layer.stride;
    let (ph, pw) = layer.padding;
    let cin = input.channels;
    let cout = layer.out_channels;
    debug_assert_eq!(cin, layer.in_channels);
    debug_assert_eq!(weight.len(), cout * cin * kh * kw);
    let hout = (input.height + 2 * ph - kh) / sh + 1;
    let wout = (input.width + 2 * pw - kw) / sw + 1;
    let k = cin * kh * kw;

    // horizontal source indices are the same on every row
    let xs: Vec<Option<usize>> = (0..wout)
        .flat_map(|ox| {
            (0..kw).map(move |kx| (ox * sw + kx) as isize - pw as isize)
        })
        .map(|i| source_index(i, input.width, layer.pad_mode))
        .collect();

    let tiles: Vec<(usize, Vec<T>)> = (0..hout)
        .step_by(CONV_TILE_ROWS)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|y0| {
            let rows = CONV_TILE_ROWS.min(hout - y0);
            let n = rows * wout;
            let mut cols = vec![T::zero(); k * n];
            for ci in 0..cin {
                let plane = input.plane(ci);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let r = (ci * kh + ky) * kw + kx;
                        let dst = &mut cols[r * n..(r + 1) * n];
                        for ty in 0..rows {
                            let iy = ((y0 + ty) * sh + ky) as isize - ph as isize;
                            let Some(sy) = source_index(iy, input.height, layer.pad_mode) else {
                                continue;
                            };
                            let src_row = &plane[sy * input.width..(sy + 1) * input.width];
                            let out_row = &mut dst[ty * wout..(ty + 1) * wout];
                            for (ox, o) in out_row.iter_mut().enumerate() {
                                if let Some(sx) = xs[ox * kw + kx] {
                                    *o = src_row[sx];
                                }
                            }
                        }
                    }
                }
            }
            let mut out = vec![T::zero(); cout * n];
            T::gemm(cout, k, n, weight, &cols, &mut out);
            (y0, out)
        })
        .collect();

    let mut output = Tensor::zeros(cout, hout, wout);
    let plane = hout * wout;
    for (y0, tile) in tiles {
        let n = tile.len() / cout;
        for co in 0..cout {
            let b = bias.map_or(T::zero(), |b| b[co]);
            let dst = &mut output.data[co * plane + y0 * wout..co * plane + y0 * wout + n];
            for (d, &s) in dst.iter_mut().zip(&tile[co * n..(co + 1) * n]) {
                *d = s + b;
            }
        }
    }
    output
}

pub const BATCHNORM_EPS: f64 = 1e-5;

/// Inference batchnorm with fixed statistics.
pub fn batchnorm<T: Scalar>(mut input: Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Tensor<T> {
    let n = input.plane_len();
    let eps = T::from_f64(BATCHNORM_EPS);
    input
        .data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(c, plane)| {
            let scale = gamma[c] / (var[c] + eps).sqrt();
            let shift = beta[c] - mean[c] * scale;
            plane.iter_mut().for_each(|v| *v = *v * scale + shift);
        });
    input
}

pub fn relu<T: Scalar>(input: Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn elu<T: Scalar>(input: Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { v.exp_m1() })
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// in finite precision.
pub fn sigmoid<T: Scalar>(input: Tensor<T>) -> Tensor<T> {
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    input.map(move |v| (T::one() / (T::one() + (-v).exp())).max(lo).min(hi))
}

/// Max pooling; padded taps never win.
pub fn maxpool<T: Scalar>(input: &Tensor<T>, layer: &LayerSpec) -> Tensor<T> {
    let (kh, kw) = layer.kernel;
    let (sh, sw) = layer.stride;
    let (ph, pw) = layer.padding;
    let hout = (input.height + 2 * ph - kh) / sh + 1;
    let wout = (input.width + 2 * pw - kw) / sw + 1;
    Tensor::from_fn(input.channels, hout, wout, |c, oy, ox| {
        let mut best = T::neg_infinity();
        for ky in 0..kh {
            let iy = (oy * sh + ky) as isize - ph as isize;
            if iy < 0 || iy as usize >= input.height {
                continue;
            }
            for kx in 0..kw {
                let ix = (ox * sw + kx) as isize - pw as isize;
                if ix < 0 || ix as usize >= input.width {
                    continue;
                }
                best = best.max(input.at(c, iy as usize, ix as usize));
            }
        }
        best
    })
}

pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: (usize, usize)) -> Tensor<T> {
    Tensor::from_fn(
        input.channels,
        input.height * factor.0,
        input.width * factor.1,
        |c, y, x| input.at(c, y / factor.0, x / factor.1),
    )
}

/// Channel concatenation; `a` first.
pub fn concat<T: Scalar>(mut a: Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!((a.height, a.width), (b.height, b.width));
    a.data.extend_from_slice(&b.data);
    a.channels += b.channels;
    a
}

pub fn add_in_place<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) {
    a.data
        .par_iter_mut()
        .zip(b.data.par_iter())
        .for_each(|(x, &y)| *x = *x + y);
}
