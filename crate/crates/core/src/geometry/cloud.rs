use crate::error::{Result, SalsaError};

pub type Point3 = [f64; 3];

/// Raw LiDAR scan: sensor-frame positions in meters plus optional intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(SalsaError::InvalidArgument("point cloud must contain at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(SalsaError::InvalidArgument(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(int) = &intensity {
            if int.len() != points.len() {
                return Err(SalsaError::InvalidArgument(format!(
                    "{} intensities for {} points",
                    int.len(),
                    points.len()
                )));
            }
            if int.iter().any(|v| !v.is_finite()) {
                return Err(SalsaError::NonFinite("intensity"));
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    /// Intensity of point `i`, 0 when the scan carries none.
    pub fn intensity_at(&self, i: usize) -> f64 {
        self.intensity.as_ref().map_or(0.0, |v| v[i])
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let intensity = self
            .intensity
            .as_ref()
            .map(|v| indices.iter().map(|&i| v[i]).collect());
        Self::new(points, intensity)
    }

    pub(crate) fn with_points(&self, points: Vec<Point3>) -> Self {
        debug_assert_eq!(points.len(), self.points.len());
        Self {
            points,
            intensity: self.intensity.clone(),
        }
    }
}

#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
