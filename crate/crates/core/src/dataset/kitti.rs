//! KITTI odometry layouts: velodyne `.bin` scans (little-endian `f32`
//! quadruples `x y z intensity`) and pose text files (12 reals per line, the
//! row-major 3×4 `[R|t]`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SalsaError};
use crate::geometry::{PointCloud, RigidTransform};

const POINT_BYTES: usize = 16;
/// Largest `‖RRᵀ − I‖∞` accepted (and snapped back) when reading poses.
pub const POSE_ORTHO_TOL: f64 = 1e-3;

pub fn parse_scan(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.is_empty() {
        return Err(SalsaError::Format {
            offset: 0,
            detail: "scan file is empty".into(),
        });
    }
    if bytes.len() % POINT_BYTES != 0 {
        return Err(SalsaError::Format {
            offset: (bytes.len() - bytes.len() % POINT_BYTES) as u64,
            detail: format!("size {} is not a multiple of {POINT_BYTES}", bytes.len()),
        });
    }
    let n = bytes.len() / POINT_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(POINT_BYTES).enumerate() {
        let mut v = [0f32; 4];
        for (k, c) in rec.chunks_exact(4).enumerate() {
            v[k] = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v[k].is_finite() {
                return Err(SalsaError::Format {
                    offset: (i * POINT_BYTES + 4 * k) as u64,
                    detail: format!("non-finite value in point {i}"),
                });
            }
        }
        points.push([v[0] as f64, v[1] as f64, v[2] as f64]);
        intensity.push(v[3] as f64);
    }
    PointCloud::new(points, Some(intensity))
}

pub fn load_scan(path: &Path) -> Result<PointCloud> {
    parse_scan(&fs::read(path)?)
}

/// Serialises as `f32`; intensity 0 when the cloud has none.
pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for (i, p) in cloud.points().iter().enumerate() {
        for v in [p[0], p[1], p[2], cloud.intensity_at(i)] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_scan(cloud))?;
    Ok(())
}

pub fn parse_poses(text: &str) -> Result<Vec<RigidTransform>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err(SalsaError::Parse {
                line: line_no,
                detail: format!("expected 12 values, found {}", tokens.len()),
            });
        }
        let mut v = [0.0; 12];
        for (k, tok) in tokens.iter().enumerate() {
            v[k] = match tok.parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                _ => {
                    return Err(SalsaError::Parse {
                        line: line_no,
                        detail: format!("bad number {tok:?}"),
                    })
                }
            };
        }
        let pose = RigidTransform::from_row_major_3x4_lenient(&v, POSE_ORTHO_TOL).map_err(|e| SalsaError::Parse {
            line: line_no,
            detail: e.to_string(),
        })?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn load_poses(path: &Path) -> Result<Vec<RigidTransform>> {
    parse_poses(&fs::read_to_string(path)?)
}

/// One line per pose, shortest round-trip formatting.
pub fn format_poses(poses: &[RigidTransform]) -> String {
    let mut s = String::new();
    for p in poses {
        let vals: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        writeln!(s, "{}", vals.join(" ")).expect("write to string");
    }
    s
}

pub fn write_poses(path: &Path, poses: &[RigidTransform]) -> Result<()> {
    fs::write(path, format_poses(poses))?;
    Ok(())
}
