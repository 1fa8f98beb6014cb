use nalgebra::{Matrix3, Rotation3, Vector3};

use super::cloud::{Point3, PointCloud};
use crate::error::{Result, SalsaError};

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHO_TOL: f64 = 1e-9;

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checks `R·Rᵀ = I` and `det R = 1` within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite())
            || err > ORTHO_TOL
            || (det - 1.0).abs() > ORTHO_TOL
        {
            return Err(SalsaError::InvalidArgument(format!(
                "rotation is not proper orthonormal (‖RRᵀ−I‖∞ = {err:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Projects a nearly orthonormal matrix onto SO(3) via SVD.
    pub fn orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let svd = rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self::new(u * d * vt, translation)
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation `t`.
    pub fn from_yaw(yaw: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation about `axis` (normalised internally) by `angle` radians.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Self {
        let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
        Self {
            rotation: *Rotation3::from_axis_angle(&axis, angle).matrix(),
            translation: Vector3::from(t),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let q = self.rotation * Vector3::from(*p) + self.translation;
        [q[0], q[1], q[2]]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major `[R | t]` as 12 values (KITTI pose layout).
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Self> {
        let (rot, t) = split_3x4(v);
        Self::new(rot, t)
    }

    /// Accepts rotations off by at most `tol` (max-abs of `RRᵀ − I`) and
    /// snaps them back onto SO(3).
    pub fn from_row_major_3x4_lenient(v: &[f64; 12], tol: f64) -> Result<Self> {
        let (rot, t) = split_3x4(v);
        let err = (rot * rot.transpose() - Matrix3::identity()).abs().max();
        if !(err <= tol) || rot.determinant() <= 0.0 {
            return Err(SalsaError::InvalidArgument(format!(
                "rotation is {err:e} away from orthonormal (tolerance {tol:e})"
            )));
        }
        Self::orthonormalized(rot, t)
    }

    /// Euclidean distance between the two positions.
    pub fn distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

fn split_3x4(v: &[f64; 12]) -> (Matrix3<f64>, Vector3<f64>) {
    let rot = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    (rot, Vector3::new(v[3], v[7], v[11]))
}

pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    cloud.with_points(cloud.points().iter().map(|p| t.apply(p)).collect())
}

/// Least-squares rigid alignment `argmin_T Σ‖T(srcᵢ) − dstᵢ‖²`.
pub fn kabsch(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(SalsaError::InvalidArgument(format!(
            "kabsch needs paired points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(SalsaError::Degenerate(format!("kabsch needs at least 3 pairs, got {}", src.len())));
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (Vector3::from(*s) - cs) * (Vector3::from(*d) - cd).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(SalsaError::Degenerate(format!(
            "collinear or coincident correspondences (singular values {sv:?})"
        )));
    }
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = v * d * u.transpose();
    let translation = cd - rotation * cs;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Relative translation error in meters and relative rotation error in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub rte: f64,
    pub rre: f64,
}

/// `rte = ‖t_est − t_gt‖`, `rre = ∠(R_gtᵀ·R_est)` in degrees.
///
/// The angle is taken as `atan2(‖axis‖, trace − 1)`, equal to
/// `arccos((trace − 1)/2)` but accurate for tiny rotations.
pub fn pose_error(est: &RigidTransform, gt: &RigidTransform) -> PoseError {
    let rte = (est.translation - gt.translation).norm();
    PoseError {
        rte,
        rre: rotation_angle(&(gt.rotation.transpose() * est.rotation)).to_degrees(),
    }
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let ax = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    ax.norm().atan2(trace - 1.0).clamp(0.0, std::f64::consts::PI)
}
