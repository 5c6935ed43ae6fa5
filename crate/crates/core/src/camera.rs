//! Pinhole camera model, disparity/depth conversion, back-projection and
//! depth-based inverse warping.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::{corner_aligned_scale, in_frame, sample_unchecked, ImageBuffer};

/// Disparities below this many pixels are treated as invalid rather than
/// converted into enormous depths.
pub const MIN_DISPARITY_PX: f64 = 1e-3;

/// Default far cap for point-cloud emission, in meters.
pub const DEFAULT_MAX_CLOUD_DEPTH_M: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::arg(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::arg(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Re-expresses the intrinsics at another resolution. The mapping follows
    /// the corner-aligned resampling used by `resize_bilinear`, so a pixel
    /// resized from one grid to the other keeps its ray.
    pub fn rescaled(&self, width: usize, height: usize) -> Result<Self> {
        if width == self.width && height == self.height {
            return Ok(*self);
        }
        let sx = resolution_ratio(self.width, width);
        let sy = resolution_ratio(self.height, height);
        Self::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
        )
    }

    /// Lifts pixel `(x, y)` at depth `z` into the camera frame.
    #[inline]
    pub fn back_project_pixel(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        [z * (x - self.cx) / self.fx, z * (y - self.cy) / self.fy, z]
    }

    #[inline]
    pub fn project(&self, p: [f64; 3]) -> Projection {
        let [x, y, z] = p;
        if z <= 0.0 {
            return Projection::BehindCamera;
        }
        Projection::Pixel {
            x: self.fx * x / z + self.cx,
            y: self.fy * y / z + self.cy,
        }
    }

    pub fn matches(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }
}

/// Factor by which pixel offsets grow when going from `n_from` to `n_to`
/// samples under corner-aligned resampling.
pub fn resolution_ratio(n_from: usize, n_to: usize) -> f64 {
    if n_from > 1 && n_to > 1 {
        1.0 / corner_aligned_scale(n_from, n_to)
    } else {
        n_to as f64 / n_from as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { x: f64, y: f64 },
    BehindCamera,
}

/// Rectified stereo pair sharing one set of intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: Intrinsics,
    pub baseline_m: f64,
}

impl StereoRig {
    pub fn new(left: Intrinsics, baseline_m: f64) -> Result<Self> {
        if !(baseline_m > 0.0 && baseline_m.is_finite()) {
            return Err(Error::arg(format!("baseline must be positive, got {baseline_m}")));
        }
        Ok(Self { left, baseline_m })
    }

    /// `b * fx`, the constant that links disparity and depth.
    pub fn disparity_depth_product(&self) -> f64 {
        self.baseline_m * self.left.fx
    }

    pub fn rescaled(&self, width: usize, height: usize) -> Result<Self> {
        Self::new(self.left.rescaled(width, height)?, self.baseline_m)
    }

    /// Pose that maps left-camera coordinates into the right camera frame.
    pub fn left_to_right(&self) -> RigidTransform {
        RigidTransform::translation(-self.baseline_m, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!(
                "rotation is not proper orthonormal (|RtR - I| = {ortho:e}, det = {det})"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [v.x, v.y, v.z]
    }
}

/// Single-channel map with a per-pixel validity flag. Shared storage for
/// [`DisparityMap`] and [`DepthMap`].
#[derive(Debug, Clone, PartialEq)]
struct MaskedMap {
    values: ImageBuffer,
    valid: Vec<bool>,
}

impl MaskedMap {
    fn new(values: ImageBuffer, valid: Vec<bool>, what: &str) -> Result<Self> {
        if values.channels() != 1 {
            return Err(Error::arg(format!(
                "{what} must have one channel, got {}",
                values.channels()
            )));
        }
        if valid.len() != values.pixel_count() {
            return Err(Error::arg(format!(
                "{what} mask has {} entries for {} pixels",
                valid.len(),
                values.pixel_count()
            )));
        }
        Ok(Self { values, valid })
    }
}

macro_rules! masked_map_accessors {
    ($ty:ident) => {
        impl $ty {
            pub fn values(&self) -> &ImageBuffer {
                &self.0.values
            }

            pub fn valid(&self) -> &[bool] {
                &self.0.valid
            }

            pub fn width(&self) -> usize {
                self.0.values.width()
            }

            pub fn height(&self) -> usize {
                self.0.values.height()
            }

            #[inline]
            pub fn get(&self, x: usize, y: usize) -> f64 {
                self.0.values.get(x, y, 0)
            }

            #[inline]
            pub fn is_valid(&self, x: usize, y: usize) -> bool {
                self.0.valid[y * self.width() + x]
            }

            pub fn valid_count(&self) -> usize {
                self.0.valid.iter().filter(|&&v| v).count()
            }

            pub fn into_parts(self) -> (ImageBuffer, Vec<bool>) {
                (self.0.values, self.0.valid)
            }
        }
    };
}

/// Per-pixel disparity in pixels, relative to the right image of the rig.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap(MaskedMap);

masked_map_accessors!(DisparityMap);

impl DisparityMap {
    /// All pixels valid.
    pub fn new(values: ImageBuffer) -> Result<Self> {
        let valid = vec![true; values.pixel_count()];
        Self::with_mask(values, valid)
    }

    pub fn with_mask(values: ImageBuffer, valid: Vec<bool>) -> Result<Self> {
        if let Some(v) = values.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::arg(format!("negative disparity {v}")));
        }
        Ok(Self(MaskedMap::new(values, valid, "disparity map")?))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(ImageBuffer::filled(width, height, 1, value)?)
    }
}

/// Per-pixel metric depth in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(MaskedMap);

masked_map_accessors!(DepthMap);

impl DepthMap {
    /// Validity follows `value > 0`.
    pub fn new(values: ImageBuffer) -> Result<Self> {
        let valid = values.data().iter().map(|&v| v > 0.0).collect();
        Self::with_mask(values, valid)
    }

    pub fn with_mask(values: ImageBuffer, valid: Vec<bool>) -> Result<Self> {
        let map = MaskedMap::new(values, valid, "depth map")?;
        if let Some(i) = (0..map.valid.len()).find(|&i| map.valid[i] && map.values.data()[i] <= 0.0) {
            return Err(Error::arg(format!(
                "valid depth pixel {i} has non-positive value {}",
                map.values.data()[i]
            )));
        }
        Ok(Self(map))
    }
}

/// Converts disparity to depth with `z = b * fx / d`. Pixels below
/// [`MIN_DISPARITY_PX`] or already invalid come out invalid with value 0.
pub fn disparity_to_depth(disparity: &DisparityMap, rig: &StereoRig) -> DepthMap {
    let bf = rig.disparity_depth_product();
    let mut valid = disparity.valid().to_vec();
    let data = disparity
        .values()
        .data()
        .iter()
        .zip(valid.iter_mut())
        .map(|(&d, ok)| {
            if *ok && d >= MIN_DISPARITY_PX {
                bf / d
            } else {
                *ok = false;
                0.0
            }
        })
        .collect();
    let values = ImageBuffer::from_plane(disparity.width(), disparity.height(), data)
        .expect("dimensions carried over from a valid map");
    DepthMap(MaskedMap { values, valid })
}

/// Ordered point list in the left-camera frame, row-major pixel order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    /// Grayscale intensity in `[0, 1]`, one per point when present.
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts every valid depth pixel to 3D.
pub fn back_project(
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    intensity: Option<&ImageBuffer>,
) -> Result<PointCloud> {
    back_project_capped(depth, intrinsics, intensity, f64::INFINITY)
}

/// Like [`back_project`] but drops points farther than `max_depth` meters.
pub fn back_project_capped(
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    intensity: Option<&ImageBuffer>,
    max_depth: f64,
) -> Result<PointCloud> {
    let (w, h) = (depth.width(), depth.height());
    if !intrinsics.matches(w, h) {
        return Err(Error::arg(format!(
            "depth map is {w}x{h} but intrinsics are for {}x{}",
            intrinsics.width, intrinsics.height
        )));
    }
    let gray = match intensity {
        Some(img) if !img.same_size(depth.values()) => {
            return Err(Error::arg(format!(
                "intensity image is {}x{}, depth map is {w}x{h}",
                img.width(),
                img.height()
            )))
        }
        Some(img) => Some(img.grayscale()),
        None => None,
    };

    let z = depth.values().data();
    let valid = depth.valid();
    let kept = valid
        .iter()
        .zip(z)
        .filter(|&(&ok, &z)| ok && z <= max_depth)
        .count();
    let mut points = Vec::with_capacity(kept);
    let mut values = gray.as_ref().map(|_| Vec::with_capacity(kept));
    let inv_fx = 1.0 / intrinsics.fx;
    let inv_fy = 1.0 / intrinsics.fy;
    for y in 0..h {
        let row = y * w;
        let ny = (y as f64 - intrinsics.cy) * inv_fy;
        for x in 0..w {
            let i = row + x;
            let d = z[i];
            if !valid[i] || d > max_depth {
                continue;
            }
            points.push([d * (x as f64 - intrinsics.cx) * inv_fx, d * ny, d]);
            if let (Some(v), Some(g)) = (values.as_mut(), gray.as_ref()) {
                v.push(g.data()[i]);
            }
        }
    }
    Ok(PointCloud {
        points,
        intensity: values,
    })
}

/// Which side of the target the rectified source camera sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSide {
    /// Source is the right camera: target pixel `x` maps to `x - d`.
    Right,
    /// Source is the left camera: target pixel `x` maps to `x + d`.
    Left,
}

impl SourceSide {
    #[inline]
    pub fn direction(self) -> f64 {
        match self {
            SourceSide::Right => -1.0,
            SourceSide::Left => 1.0,
        }
    }
}

/// Synthesizes the target view from `source` using the target depth, the
/// intrinsics shared by both views and the target-to-source pose.
///
/// Validity per pixel: depth valid, transformed point in front of the
/// source camera, and the projection inside the source frame.
pub fn warp_to_target(
    source: &ImageBuffer,
    target_depth: &DepthMap,
    intrinsics: &Intrinsics,
    target_to_source: &RigidTransform,
) -> Result<(ImageBuffer, Vec<bool>)> {
    let (w, h) = (target_depth.width(), target_depth.height());
    if !source.same_size(target_depth.values()) || !intrinsics.matches(w, h) {
        return Err(Error::arg(format!(
            "resolution mismatch: source {}x{}, depth {w}x{h}, intrinsics {}x{}",
            source.width(),
            source.height(),
            intrinsics.width,
            intrinsics.height
        )));
    }
    let ch = source.channels();
    let mut data = Vec::with_capacity(w * h * ch);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x as f64, y as f64);
            let mut coord = None;
            if target_depth.is_valid(x, y) {
                let p = intrinsics.back_project_pixel(sx, sy, target_depth.get(x, y));
                if let Projection::Pixel { x: px, y: py } =
                    intrinsics.project(target_to_source.apply(p))
                {
                    coord = Some((px, py));
                }
            }
            match coord {
                Some((px, py)) => {
                    valid[y * w + x] = in_frame(source, px, py);
                    data.extend((0..ch).map(|c| sample_unchecked(source, px, py, c)));
                }
                None => data.extend((0..ch).map(|c| source.get(x, y, c))),
            }
        }
    }
    Ok((ImageBuffer::new(w, h, ch, data)?, valid))
}

/// Rectified-stereo specialisation of [`warp_to_target`]: the source is
/// sampled at `x ∓ d` on the same row. Disparity 0 (a point at infinity) is
/// a valid mapping here; validity only requires the sample to be in frame
/// and the disparity pixel to be valid.
pub fn warp_rectified(
    source: &ImageBuffer,
    disparity: &DisparityMap,
    side: SourceSide,
) -> Result<(ImageBuffer, Vec<bool>)> {
    if !source.same_size(disparity.values()) {
        return Err(Error::arg(format!(
            "source is {}x{}, disparity {}x{}",
            source.width(),
            source.height(),
            disparity.width(),
            disparity.height()
        )));
    }
    let (w, h, ch) = (source.width(), source.height(), source.channels());
    let dir = side.direction();
    let mut data = Vec::with_capacity(w * h * ch);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + dir * disparity.get(x, y);
            let sy = y as f64;
            valid[y * w + x] = disparity.is_valid(x, y) && in_frame(source, sx, sy);
            data.extend((0..ch).map(|c| sample_unchecked(source, sx, sy, c)));
        }
    }
    Ok((ImageBuffer::new(w, h, ch, data)?, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(fx: f64, fy: f64, cx: f64, cy: f64, w: usize, h: usize) -> Intrinsics {
        Intrinsics::new(fx, fy, cx, cy, w, h).unwrap()
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 2, 2).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 2.0, 0.0, 2, 2).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, -0.1, 2, 2).is_err());
        assert!(StereoRig::new(k(1.0, 1.0, 0.0, 0.0, 2, 2), 0.0).is_err());
    }

    #[test]
    fn unit_disparity_gives_unit_depth() {
        let rig = StereoRig::new(k(1.0, 1.0, 0.0, 0.0, 1, 1), 1.0).unwrap();
        let d = DisparityMap::constant(1, 1, 1.0).unwrap();
        let z = disparity_to_depth(&d, &rig);
        assert_eq!(z.get(0, 0), 1.0);
        assert!(z.is_valid(0, 0));
    }

    #[test]
    fn kitti_scale_conversion() {
        let rig = StereoRig::new(k(721.0, 721.0, 600.0, 180.0, 1242, 375), 0.54).unwrap();
        let d = DisparityMap::constant(2, 2, 38.934).unwrap();
        let z = disparity_to_depth(&d, &rig);
        let expected = 0.54 * 721.0 / 38.934;
        assert_eq!(z.get(1, 1), expected);
        assert!((z.get(1, 1) - 10.0).abs() < 1e-3);
    }

    #[test]
    fn zero_disparity_is_invalid() {
        let rig = StereoRig::new(k(1.0, 1.0, 0.0, 0.0, 2, 1), 1.0).unwrap();
        let d = DisparityMap::new(ImageBuffer::new(2, 1, 1, vec![0.0, 5e-4]).unwrap()).unwrap();
        let z = disparity_to_depth(&d, &rig);
        assert_eq!(z.valid(), &[false, false]);
        assert_eq!(z.valid_count(), 0);
    }

    #[test]
    fn back_project_principal_point() {
        let intr = k(100.0, 100.0, 2.0, 1.0, 4, 3);
        let depth = DepthMap::new(ImageBuffer::filled(4, 3, 1, 5.0).unwrap()).unwrap();
        let cloud = back_project(&depth, &intr, None).unwrap();
        assert_eq!(cloud.len(), 12);
        assert_eq!(cloud.points[1 * 4 + 2], [0.0, 0.0, 5.0]);
    }

    #[test]
    fn back_project_hand_example() {
        let intr = k(100.0, 100.0, 0.0, 0.0, 60, 30);
        let mut valid = vec![false; 60 * 30];
        valid[25 * 60 + 50] = true;
        let depth = DepthMap::with_mask(ImageBuffer::filled(60, 30, 1, 2.0).unwrap(), valid).unwrap();
        let cloud = back_project(&depth, &intr, None).unwrap();
        assert_eq!(cloud.points, vec![[1.0, 0.5, 2.0]]);
    }

    #[test]
    fn back_project_empty_and_mismatch() {
        let intr = k(1.0, 1.0, 0.0, 0.0, 3, 3);
        let depth = DepthMap::new(ImageBuffer::filled(3, 3, 1, 0.0).unwrap()).unwrap();
        assert!(back_project(&depth, &intr, None).unwrap().is_empty());
        let other = k(1.0, 1.0, 0.0, 0.0, 4, 3);
        assert!(back_project(&depth, &other, None).is_err());
    }

    #[test]
    fn back_project_cap_and_intensity() {
        let intr = k(1.0, 1.0, 0.0, 0.0, 2, 1);
        let depth = DepthMap::new(ImageBuffer::new(2, 1, 1, vec![10.0, 90.0]).unwrap()).unwrap();
        let rgb = ImageBuffer::new(2, 1, 3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let cloud = back_project_capped(&depth, &intr, Some(&rgb), DEFAULT_MAX_CLOUD_DEPTH_M).unwrap();
        assert_eq!(cloud.len(), 1);
        let i = cloud.intensity.unwrap();
        assert!((i[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_cases() {
        let intr = k(500.0, 400.0, 320.0, 240.0, 640, 480);
        assert_eq!(intr.project([0.0, 0.0, 3.0]), Projection::Pixel { x: 320.0, y: 240.0 });
        assert_eq!(intr.project([0.0, 0.0, -1.0]), Projection::BehindCamera);
        assert_eq!(intr.project([1.0, 0.0, 0.0]), Projection::BehindCamera);
    }

    #[test]
    fn rigid_transform_validation_and_inverse() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(bad, Vector3::zeros()).is_err());
        let flip = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(flip, Vector3::zeros()).is_err());
        let (s, c) = 0.3f64.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let t = RigidTransform::new(r, Vector3::new(0.5, -1.0, 2.0)).unwrap();
        let p = [0.3, -0.7, 4.0];
        let q = t.inverse().apply(t.apply(p));
        for i in 0..3 {
            assert!((p[i] - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let src = ImageBuffer::from_fn(6, 4, 3, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64 / 7.0).unwrap();
        let intr = k(50.0, 50.0, 3.0, 2.0, 6, 4);
        let depth = DepthMap::new(ImageBuffer::filled(6, 4, 1, 3.0).unwrap()).unwrap();
        let (out, valid) = warp_to_target(&src, &depth, &intr, &RigidTransform::identity()).unwrap();
        assert!(valid.iter().all(|&v| v));
        for (a, b) in out.data().iter().zip(src.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_depth_gives_invalid_warp() {
        let src = ImageBuffer::filled(4, 4, 1, 0.5).unwrap();
        let intr = k(10.0, 10.0, 2.0, 2.0, 4, 4);
        let depth = DepthMap::new(ImageBuffer::filled(4, 4, 1, 0.0).unwrap()).unwrap();
        let (_, valid) = warp_to_target(&src, &depth, &intr, &RigidTransform::identity()).unwrap();
        assert!(valid.iter().all(|&v| !v));
        let wrong = k(10.0, 10.0, 2.0, 2.0, 5, 4);
        assert!(warp_to_target(&src, &depth, &wrong, &RigidTransform::identity()).is_err());
    }

    #[test]
    fn rectified_warp_shifts_rows() {
        let src = ImageBuffer::from_fn(8, 2, 1, |x, _, _| x as f64 / 8.0).unwrap();
        let d = DisparityMap::constant(8, 2, 2.0).unwrap();
        let (out, valid) = warp_rectified(&src, &d, SourceSide::Right).unwrap();
        assert_eq!(out.get(5, 1, 0), src.get(3, 1, 0));
        assert!(!valid[1] && valid[2]);
        let (out, valid) = warp_rectified(&src, &d, SourceSide::Left).unwrap();
        assert_eq!(out.get(2, 0, 0), src.get(4, 0, 0));
        assert!(valid[5] && !valid[6]);
    }

    #[test]
    fn rescale_round_trips() {
        let intr = k(721.5, 721.5, 609.6, 172.9, 1242, 375);
        let small = intr.rescaled(640, 192).unwrap();
        let back = small.rescaled(1242, 375).unwrap();
        assert!((back.fx - intr.fx).abs() < 1e-9);
        assert!((back.cx - intr.cx).abs() < 1e-9);
        // a ray through a rescaled pixel center stays the same ray
        let [x, _, _] = intr.back_project_pixel(1241.0, 0.0, 1.0);
        let [xs, _, _] = small.back_project_pixel(639.0, 0.0, 1.0);
        assert!((x - xs).abs() < 1e-12);
    }
}
