//! Binary PLY and PCD point-cloud writers.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::camera::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Pcd,
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ply" => Ok(CloudFormat::Ply),
            "pcd" => Ok(CloudFormat::Pcd),
            other => Err(Error::arg(format!("unknown cloud format `{other}`; expected ply or pcd"))),
        }
    }
}

fn check(cloud: &PointCloud) -> Result<()> {
    if let Some(i) = &cloud.intensity {
        if i.len() != cloud.points.len() {
            return Err(Error::arg(format!(
                "{} intensities for {} points",
                i.len(),
                cloud.points.len()
            )));
        }
    }
    Ok(())
}

fn push_records(out: &mut Vec<u8>, cloud: &PointCloud) {
    for (k, p) in cloud.points.iter().enumerate() {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(i) = &cloud.intensity {
            out.extend_from_slice(&(i[k] as f32).to_le_bytes());
        }
    }
}

fn record_len(cloud: &PointCloud) -> usize {
    if cloud.intensity.is_some() {
        16
    } else {
        12
    }
}

pub fn ply_bytes(cloud: &PointCloud) -> Result<Vec<u8>> {
    check(cloud)?;
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.intensity.is_some() {
        header.push_str("property float intensity\n");
    }
    header.push_str("end_header\n");
    let mut out = Vec::with_capacity(header.len() + cloud.len() * record_len(cloud));
    out.extend_from_slice(header.as_bytes());
    push_records(&mut out, cloud);
    Ok(out)
}

pub fn pcd_bytes(cloud: &PointCloud) -> Result<Vec<u8>> {
    check(cloud)?;
    let n = cloud.len();
    let (fields, size, ty, count) = if cloud.intensity.is_some() {
        ("x y z intensity", "4 4 4 4", "F F F F", "1 1 1 1")
    } else {
        ("x y z", "4 4 4", "F F F", "1 1 1")
    };
    let header = format!(
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS {fields}\nSIZE {size}\nTYPE {ty}\nCOUNT {count}\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA binary\n"
    );
    let mut out = Vec::with_capacity(header.len() + n * record_len(cloud));
    out.extend_from_slice(header.as_bytes());
    push_records(&mut out, cloud);
    Ok(out)
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, ply_bytes(cloud)?).map_err(|e| Error::io(path, e))
}

pub fn write_pcd(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, pcd_bytes(cloud)?).map_err(|e| Error::io(path, e))
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    match format {
        CloudFormat::Ply => write_ply(cloud, path),
        CloudFormat::Pcd => write_pcd(cloud, path),
    }
}
