//! Image and loss kernels against scalar brute-force oracles.

use pldepth::image::hflip_mask;
use pldepth::loss::{reconstruction_error, reprojection_loss, smoothness_loss, ssim, LossConfig};
use pldepth::{hflip, resize_bilinear, spatial_gradient, warp_rectified, DisparityMap, ImageBuffer, SourceSide};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(w: usize, h: usize, c: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(w, h, c, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mirror index without repeating the edge pixel: -1 -> 1, n -> n-2.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

fn window(img: &ImageBuffer, x: usize, y: usize, c: usize, r: isize) -> Vec<f64> {
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let sx = mirror(x as isize + dx, img.width());
            let sy = mirror(y as isize + dy, img.height());
            v.push(img.get(sx, sy, c));
        }
    }
    v
}

fn ssim_oracle(a: &ImageBuffer, b: &ImageBuffer, cfg: &LossConfig) -> Vec<f64> {
    let r = (cfg.ssim_window / 2) as isize;
    let mut out = Vec::new();
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                let wa = window(a, x, y, c, r);
                let wb = window(b, x, y, c, r);
                let n = wa.len() as f64;
                let ma = wa.iter().sum::<f64>() / n;
                let mb = wb.iter().sum::<f64>() / n;
                let va = wa.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / n;
                let vb = wb.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / n;
                let cov = wa.iter().zip(&wb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
                let num = (2.0 * ma * mb + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2);
                let den = (ma * ma + mb * mb + cfg.ssim_c1) * (va + vb + cfg.ssim_c2);
                out.push(num / den);
            }
        }
    }
    out
}

#[test]
fn ssim_matches_windowed_oracle() {
    for (seed, window) in [(1, 3), (2, 3), (3, 5), (4, 7)] {
        let cfg = LossConfig {
            ssim_window: window,
            ..LossConfig::default()
        };
        let a = random_image(13, 9, 3, seed);
        let b = random_image(13, 9, 3, seed + 100);
        let got = ssim(&a, &b, &cfg).unwrap();
        let dev = max_abs_diff(got.data(), &ssim_oracle(&a, &b, &cfg));
        assert!(dev < 1e-12, "window {window}: {dev:e}");
    }
}

#[test]
fn reconstruction_error_matches_oracle() {
    let cfg = LossConfig::default();
    let a = random_image(11, 8, 3, 5);
    let b = random_image(11, 8, 3, 6);
    let s = ssim_oracle(&a, &b, &cfg);
    let got = reconstruction_error(&a, &b, &cfg).unwrap();
    for y in 0..8 {
        for x in 0..11 {
            let mut want = 0.0;
            for c in 0..3 {
                let k = (y * 11 + x) * 3 + c;
                want += 0.85 * (1.0 - s[k]) / 2.0 + 0.15 * (a.get(x, y, c) - b.get(x, y, c)).abs();
            }
            want /= 3.0;
            assert!((got.get(x, y, 0) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn reprojection_takes_minimum_over_valid_sources() {
    let cfg = LossConfig::default();
    let t = random_image(10, 10, 3, 7);
    let close = t.map(|v| v + 0.01).unwrap();
    let far = random_image(10, 10, 3, 8);
    let mut close_valid = vec![true; 100];
    close_valid[0] = false;
    let out = reprojection_loss(&t, &[(far.clone(), vec![true; 100]), (close.clone(), close_valid)], &cfg).unwrap();
    let re_close = reconstruction_error(&t, &close, &cfg).unwrap();
    let re_far = reconstruction_error(&t, &far, &cfg).unwrap();
    for i in 0..100 {
        let want = if i == 0 {
            re_far.data()[i]
        } else {
            re_far.data()[i].min(re_close.data()[i])
        };
        assert_eq!(out.per_pixel.data()[i], want);
    }
    assert_eq!(out.argmin[0], Some(0));
    assert!(out.valid.iter().all(|&v| v));
}

fn smoothness_oracle(d: &ImageBuffer, img: &ImageBuffer) -> f64 {
    let (w, h, ch) = (d.width(), d.height(), img.channels());
    let mean = d.data().iter().sum::<f64>() / (w * h) as f64;
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let gi: f64 = (0..ch).map(|c| (img.get(x + 1, y, c) - img.get(x, y, c)).abs()).sum::<f64>() / ch as f64;
                acc += ((d.get(x + 1, y, 0) - d.get(x, y, 0)) / mean).abs() * (-gi).exp();
            }
            if y + 1 < h {
                let gi: f64 = (0..ch).map(|c| (img.get(x, y + 1, c) - img.get(x, y, c)).abs()).sum::<f64>() / ch as f64;
                acc += ((d.get(x, y + 1, 0) - d.get(x, y, 0)) / mean).abs() * (-gi).exp();
            }
        }
    }
    acc / (w * h) as f64
}

#[test]
fn smoothness_matches_oracle() {
    for seed in 0..5 {
        let img = random_image(17, 12, 3, seed);
        let d = random_image(17, 12, 1, seed + 50).map(|v| 0.5 + 10.0 * v).unwrap();
        let got = smoothness_loss(&DisparityMap::new(d.clone()).unwrap(), &img).unwrap();
        let want = smoothness_oracle(&d, &img);
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn spatial_gradient_matches_forward_differences() {
    let img = random_image(7, 5, 2, 9);
    let (gx, gy) = spatial_gradient(&img).unwrap();
    for y in 0..5 {
        for x in 0..7 {
            for c in 0..2 {
                let ex = if x < 6 { img.get(x + 1, y, c) - img.get(x, y, c) } else { 0.0 };
                let ey = if y < 4 { img.get(x, y + 1, c) - img.get(x, y, c) } else { 0.0 };
                assert_eq!(gx.get(x, y, c), ex);
                assert_eq!(gy.get(x, y, c), ey);
            }
        }
    }
}

fn resize_oracle(img: &ImageBuffer, w: usize, h: usize) -> Vec<f64> {
    let scale = |n_in: usize, n_out: usize| if n_out > 1 { (n_in - 1) as f64 / (n_out - 1) as f64 } else { 0.0 };
    let (sx, sy) = (scale(img.width(), w), scale(img.height(), h));
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 * sx, y as f64 * sy);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            for c in 0..img.channels() {
                let v = (1.0 - ax) * (1.0 - ay) * img.get(x0, y0, c)
                    + ax * (1.0 - ay) * img.get(x1, y0, c)
                    + (1.0 - ax) * ay * img.get(x0, y1, c)
                    + ax * ay * img.get(x1, y1, c);
                out.push(v);
            }
        }
    }
    out
}

#[test]
fn resize_matches_bilinear_oracle() {
    let img = random_image(23, 11, 3, 12);
    for (w, h) in [(40, 20), (7, 5), (23, 30), (1, 1), (64, 2)] {
        let got = resize_bilinear(&img, w, h).unwrap();
        let dev = max_abs_diff(got.data(), &resize_oracle(&img, w, h));
        assert!(dev < 1e-12, "{w}x{h}: {dev:e}");
    }
}

#[test]
fn rectified_warp_undoes_integer_shift() {
    let left = random_image(30, 6, 3, 21);
    // right(x) = left(x + 3): a point at column x in the left view sits at x - 3 in the right
    let right = ImageBuffer::from_fn(30, 6, 3, |x, y, c| left.get((x + 3).min(29), y, c)).unwrap();
    let d = DisparityMap::constant(30, 6, 3.0).unwrap();
    let (recon, valid) = warp_rectified(&right, &d, SourceSide::Right).unwrap();
    for y in 0..6 {
        for x in 0..30 {
            assert_eq!(valid[y * 30 + x], x >= 3);
            if x >= 3 {
                for c in 0..3 {
                    assert_eq!(recon.get(x, y, c), left.get(x, y, c));
                }
            }
        }
    }
}

fn image_strategy() -> impl Strategy<Value = ImageBuffer> {
    (4usize..20, 4usize..16, 1usize..4).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(0.0f64..1.0, w * h * c).prop_map(move |v| ImageBuffer::new(w, h, c, v).unwrap())
    })
}

proptest! {
    #[test]
    fn hflip_is_an_involution(img in image_strategy()) {
        prop_assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn hflip_mask_is_an_involution(mask in prop::collection::vec(any::<bool>(), 1..60), w in 1usize..6) {
        let n = mask.len() / w * w;
        let m = &mask[..n];
        prop_assert_eq!(hflip_mask(&hflip_mask(m, w), w), m.to_vec());
    }

    #[test]
    fn resize_to_same_size_is_identity(img in image_strategy()) {
        prop_assert_eq!(resize_bilinear(&img, img.width(), img.height()).unwrap(), img);
    }

    #[test]
    fn resize_reproduces_affine_ramps(
        a in -2.0f64..2.0, b in -2.0f64..2.0, k in -1.0f64..1.0,
        w in 2usize..30, h in 2usize..20, nw in 2usize..40, nh in 2usize..30,
    ) {
        let img = ImageBuffer::from_fn(w, h, 1, |x, y, _| k + a * x as f64 + b * y as f64).unwrap();
        let out = resize_bilinear(&img, nw, nh).unwrap();
        let (sx, sy) = ((w - 1) as f64 / (nw - 1) as f64, (h - 1) as f64 / (nh - 1) as f64);
        for y in 0..nh {
            for x in 0..nw {
                let want = k + a * x as f64 * sx + b * y as f64 * sy;
                prop_assert!((out.get(x, y, 0) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in 0u64..1000) {
        let cfg = LossConfig::default();
        let a = random_image(9, 7, 2, seed);
        let b = random_image(9, 7, 2, seed ^ 0xff);
        let ab = ssim(&a, &b, &cfg).unwrap();
        let ba = ssim(&b, &a, &cfg).unwrap();
        prop_assert!(max_abs_diff(ab.data(), ba.data()) < 1e-12);
        prop_assert!(ab.data().iter().all(|&s| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&s)));
    }

    #[test]
    fn reconstruction_error_is_nonnegative(seed in 0u64..1000) {
        let cfg = LossConfig::default();
        let a = random_image(8, 8, 3, seed);
        let b = random_image(8, 8, 3, seed + 1);
        let re = reconstruction_error(&a, &b, &cfg).unwrap();
        prop_assert!(re.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn smoothness_is_scale_invariant(seed in 0u64..1000, c in 1e-3f64..1e3) {
        let img = random_image(10, 8, 3, seed);
        let d = random_image(10, 8, 1, seed + 7).map(|v| 0.1 + v).unwrap();
        let s1 = smoothness_loss(&DisparityMap::new(d.clone()).unwrap(), &img).unwrap();
        let s2 = smoothness_loss(&DisparityMap::new(d.map(|v| c * v).unwrap()).unwrap(), &img).unwrap();
        prop_assert!((s1 - s2).abs() <= 1e-12 * s1.max(1.0));
    }
}
