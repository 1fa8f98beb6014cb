//! Point clouds, spherical and cubic window partitions, voxelisation and
//! rigid alignment.

mod cloud;
mod spatial;
mod transform;
mod voxel;
mod window;

pub use cloud::{distance, Point3, PointCloud};
pub use spatial::PointIndex;
pub use transform::{apply_transform, kabsch, pose_error, rotation_angle, PoseError, RigidTransform};
pub use voxel::{voxelize, Voxel, VoxelGrid};
pub use window::{
    cubic_window_index, from_spherical, radial_window_index, to_spherical, SphericalCoord,
    WindowIndex, WindowKind, WindowSizes,
};
