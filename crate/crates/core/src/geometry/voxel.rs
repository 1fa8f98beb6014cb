use std::collections::BTreeMap;

use super::cloud::{Point3, PointCloud};
use crate::error::{Result, SalsaError};

#[derive(Clone, Debug, PartialEq)]
pub struct Voxel {
    pub key: [i64; 3],
    pub centroid: Point3,
    pub mean_intensity: f64,
    /// Input point ids, ascending.
    pub members: Vec<usize>,
}

impl Voxel {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// Occupied cells of a regular grid, ordered by integer key so the layout
/// does not depend on input point order.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    voxel_size: f64,
    cells: Vec<Voxel>,
    point_to_cell: Vec<usize>,
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn cells(&self) -> &[Voxel] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell index holding input point `i`.
    pub fn cell_of(&self, i: usize) -> usize {
        self.point_to_cell[i]
    }

    pub fn point_to_cell(&self) -> &[usize] {
        &self.point_to_cell
    }
}

pub fn voxelize(cloud: &PointCloud, size: f64) -> Result<VoxelGrid> {
    if size.is_nan() || size <= 0.0 {
        return Err(SalsaError::InvalidArgument(format!("voxel size must be positive, got {size}")));
    }
    let mut buckets: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = [
            (p[0] / size).floor() as i64,
            (p[1] / size).floor() as i64,
            (p[2] / size).floor() as i64,
        ];
        buckets.entry(key).or_default().push(i);
    }
    let mut point_to_cell = vec![0; cloud.len()];
    let cells = buckets
        .into_iter()
        .enumerate()
        .map(|(ci, (key, members))| {
            let n = members.len() as f64;
            let mut centroid = [0.0; 3];
            let mut intensity = 0.0;
            for &m in &members {
                let p = cloud.points()[m];
                for k in 0..3 {
                    centroid[k] += p[k];
                }
                intensity += cloud.intensity_at(m);
                point_to_cell[m] = ci;
            }
            centroid.iter_mut().for_each(|c| *c /= n);
            Voxel {
                key,
                centroid,
                mean_intensity: intensity / n,
                members,
            }
        })
        .collect();
    Ok(VoxelGrid {
        voxel_size: size,
        cells,
        point_to_cell,
    })
}
