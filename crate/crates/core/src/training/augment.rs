use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::error::{Result, SalsaError};
use crate::geometry::{apply_transform, to_spherical, PointCloud, RigidTransform};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub max_yaw_deg: f64,
    pub occlusion_sector_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_yaw_deg: 30.0,
            occlusion_sector_deg: 30.0,
        }
    }
}

/// Random yaw in `[−max_yaw, max_yaw]` followed by removal of every point
/// whose azimuth falls in one randomly placed sector. Returns the cloud and
/// the rotation that was applied.
pub fn augment_with_transform<R: Rng + ?Sized>(
    c: &PointCloud,
    max_yaw_deg: f64,
    occlusion_sector_deg: f64,
    rng: &mut R,
) -> Result<(PointCloud, RigidTransform)> {
    if !(0.0..360.0).contains(&occlusion_sector_deg) {
        return Err(SalsaError::InvalidArgument(format!(
            "occlusion sector of {occlusion_sector_deg}° must be in [0, 360)"
        )));
    }
    if !(max_yaw_deg >= 0.0 && max_yaw_deg.is_finite()) {
        return Err(SalsaError::InvalidArgument(format!("bad maximum yaw {max_yaw_deg}")));
    }
    let yaw = if max_yaw_deg > 0.0 {
        rng.random_range(-max_yaw_deg..=max_yaw_deg).to_radians()
    } else {
        0.0
    };
    let t = RigidTransform::from_yaw(yaw, [0.0; 3]);
    let rotated = apply_transform(&t, c);
    if occlusion_sector_deg == 0.0 {
        return Ok((rotated, t));
    }
    let width = occlusion_sector_deg.to_radians();
    let start = rng.random_range(-PI..PI);
    let keep: Vec<usize> = rotated
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| (to_spherical(p).alpha - start).rem_euclid(TAU) >= width)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(SalsaError::Degenerate("occlusion removed every point".into()));
    }
    Ok((rotated.select(&keep)?, t))
}

pub fn augment<R: Rng + ?Sized>(
    c: &PointCloud,
    max_yaw_deg: f64,
    occlusion_sector_deg: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    Ok(augment_with_transform(c, max_yaw_deg, occlusion_sector_deg, rng)?.0)
}
