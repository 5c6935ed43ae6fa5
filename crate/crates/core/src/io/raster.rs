//! Image and per-pixel map files.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, Luma, Rgb};

use crate::camera::{DepthMap, DisparityMap};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes an 8-bit PNG or PPM/PGM into `[0, 1]` floats. Grayscale input
/// is expanded to three channels; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Format(e.to_string()))?;
    let rgb = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            img.to_rgb8()
        }
        other => {
            return Err(Error::Format(format!(
                "expected an 8-bit image, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    ImageBuffer::new(w, h, 3, data)
}

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    decode_image(&read_bytes(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 1- or 3-channel image as 8-bit PNG.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(
            image::ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).expect("buffer sized from image"),
        ),
        3 => DynamicImage::ImageRgb8(
            image::ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).expect("buffer sized from image"),
        ),
        c => return Err(Error::arg(format!("cannot encode a {c}-channel image as PNG"))),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    write_bytes(path, &encode_png(img)?)
}

/// Scale of the 16-bit depth convention: meters = raw / 256.
pub const DEPTH_PNG_SCALE: f64 = 256.0;

/// Decodes a 16-bit single-channel PNG depth map; raw 0 marks missing
/// ground truth.
pub fn read_depth_png16(bytes: &[u8]) -> Result<DepthMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Format(e.to_string()))?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::Format(format!(
            "depth PNG must be 16-bit single channel, got {:?}",
            img.color()
        )));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let valid = raw.iter().map(|&r| r != 0).collect();
    let values = raw.iter().map(|&r| r as f64 / DEPTH_PNG_SCALE).collect();
    DepthMap::with_mask(ImageBuffer::new(w, h, 1, values)?, valid)
}

/// Encodes depth as 16-bit PNG; invalid pixels and depths that round to 0
/// are stored as 0, depths beyond the range saturate.
pub fn encode_depth_png16(depth: &DepthMap) -> Result<Vec<u8>> {
    let raw: Vec<u16> = depth
        .values()
        .data()
        .iter()
        .zip(depth.valid())
        .map(|(&d, &v)| {
            if v {
                (d * DEPTH_PNG_SCALE).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let buf = image::ImageBuffer::<Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .expect("buffer sized from map");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

const MAP_MAGIC: &[u8; 4] = b"PLDM";

/// Lossless single-precision map: magic `PLDM`, u32 width, u32 height,
/// then little-endian f32 values row by row; NaN marks invalid pixels.
pub fn encode_map_f32(values: &ImageBuffer, valid: &[bool]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * values.pixel_count());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&(values.width() as u32).to_le_bytes());
    out.extend_from_slice(&(values.height() as u32).to_le_bytes());
    for (&v, &ok) in values.data().iter().zip(valid) {
        let f = if ok { v as f32 } else { f32::NAN };
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

pub fn decode_map_f32(bytes: &[u8]) -> Result<(ImageBuffer, Vec<bool>)> {
    let load = |offset: usize, reason: &str| Error::Load {
        offset,
        reason: reason.to_string(),
    };
    if bytes.len() < 12 {
        return Err(load(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAP_MAGIC {
        return Err(load(0, "bad magic"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let n = w.checked_mul(h).ok_or_else(|| load(4, "dimensions overflow"))?;
    if n == 0 {
        return Err(load(4, "empty map"));
    }
    let need = n.checked_mul(4).and_then(|b| b.checked_add(12)).ok_or_else(|| load(4, "dimensions overflow"))?;
    if bytes.len() != need {
        return Err(load(bytes.len().min(need), &format!("expected {need} bytes, found {}", bytes.len())));
    }
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for chunk in bytes[12..].chunks_exact(4) {
        let f = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        valid.push(!f.is_nan());
        values.push(if f.is_nan() { 0.0 } else { f as f64 });
    }
    Ok((ImageBuffer::new(w, h, 1, values)?, valid))
}

/// File extension of the raw sidecar.
pub const RAW_MAP_EXT: &str = "f32";

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == RAW_MAP_EXT)
}

/// Writes `path` as 16-bit PNG and a lossless `.f32` sidecar next to it.
/// A `.f32` path writes only the raw map.
pub fn save_depth(depth: &DepthMap, path: &Path) -> Result<()> {
    let raw = encode_map_f32(depth.values(), depth.valid());
    if is_raw(path) {
        return write_bytes(path, &raw);
    }
    write_bytes(path, &encode_depth_png16(depth)?)?;
    write_bytes(&path.with_extension(RAW_MAP_EXT), &raw)
}

/// Reads a depth map from a `.f32` raw file or a 16-bit PNG.
pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let bytes = read_bytes(path)?;
    if is_raw(path) {
        let (values, valid) = decode_map_f32(&bytes)?;
        let valid = valid
            .iter()
            .zip(values.data())
            .map(|(&ok, &v)| ok && v > 0.0)
            .collect();
        DepthMap::with_mask(values, valid)
    } else {
        read_depth_png16(&bytes)
    }
}

pub fn save_disparity(disparity: &DisparityMap, path: &Path) -> Result<()> {
    write_bytes(path, &encode_map_f32(disparity.values(), disparity.valid()))
}

pub fn load_disparity(path: &Path) -> Result<DisparityMap> {
    let (values, valid) = decode_map_f32(&read_bytes(path)?)?;
    DisparityMap::with_mask(values, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png16(w: u32, h: u32, raw: Vec<u16>) -> Vec<u8> {
        let buf = image::ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).unwrap();
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(buf).write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn depth_png_convention() {
        let d = read_depth_png16(&png16(3, 1, vec![25600, 0, 256])).unwrap();
        assert_eq!(d.get(0, 0), 100.0);
        assert!(!d.is_valid(1, 0));
        assert_eq!(d.get(2, 0), 1.0);
    }

    #[test]
    fn eight_bit_depth_is_rejected() {
        let img = ImageBuffer::filled(2, 2, 1, 0.5).unwrap();
        assert!(matches!(read_depth_png16(&encode_png(&img).unwrap()), Err(Error::Format(_))));
    }

    #[test]
    fn image_round_trip_is_8bit() {
        let img = ImageBuffer::from_fn(4, 3, 3, |x, y, c| ((x + y + c) % 5) as f64 / 4.0).unwrap();
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn raw_map_round_trip_and_truncation() {
        let v = ImageBuffer::from_fn(3, 2, 1, |x, y, _| (x + 3 * y) as f64 * 0.25).unwrap();
        let valid = vec![true, false, true, true, true, false];
        let bytes = encode_map_f32(&v, &valid);
        let (back, bv) = decode_map_f32(&bytes).unwrap();
        assert_eq!(bv, valid);
        assert_eq!(back.get(0, 1, 0), 0.75);
        assert_eq!(back.get(2, 1, 0), 0.0);
        for cut in 0..bytes.len() {
            assert!(decode_map_f32(&bytes[..cut]).is_err());
        }
    }
}
