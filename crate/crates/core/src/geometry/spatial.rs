use std::collections::HashMap;

use super::cloud::{distance, Point3};

/// Uniform hash grid for radius-bounded nearest-neighbour queries.
#[derive(Clone, Debug)]
pub struct PointIndex {
    cell: f64,
    points: Vec<Point3>,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl PointIndex {
    /// `cell` should be close to the typical query radius.
    pub fn new(points: &[Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key(p, cell)).or_default().push(i);
        }
        Self {
            cell,
            points: points.to_vec(),
            buckets,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point strictly closer than `radius`; ties go to the lower index.
    pub fn nearest_within(&self, p: &Point3, radius: f64) -> Option<(usize, f64)> {
        let reach = (radius / self.cell).ceil() as i64;
        let c = key(p, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(bucket) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let d = distance(p, &self.points[i]);
                        if d >= radius {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best
    }
}

fn key(p: &Point3, cell: f64) -> [i64; 3] {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}
