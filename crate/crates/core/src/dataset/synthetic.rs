//! Procedural scenes for desk-scale experiments.
//!
//! Every scene is a ground disc plus randomly placed boxes, poles and
//! Gaussian blobs, each with its own reflectivity. Scenes sit far apart along
//! the x axis. A scene is scanned once from a database pose and revisited
//! from nearby query poses; a revisit reuses a fraction of the database
//! scan's world points and resamples the rest from the scene surfaces.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SalsaError};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::training::TrainingScan;

/// Sensor height above the ground plane.
const SENSOR_HEIGHT: f64 = 1.7;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_scenes: usize,
    pub points_per_scan: usize,
    /// Fraction of a revisit's points shared with the database scan.
    pub overlap: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub scene_spacing: f64,
    pub scene_radius: f64,
    /// Revisits per scene.
    pub revisits: usize,
    /// Largest horizontal offset of a revisit from the database pose.
    pub revisit_offset: f64,
    pub revisit_yaw_deg: f64,
    /// Radius used for the ground-truth neighbour lists.
    pub neighbor_radius: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_scenes: 20,
            points_per_scan: 1024,
            overlap: 0.8,
            noise_sigma: 0.02,
            seed: 0,
            scene_spacing: 100.0,
            scene_radius: 25.0,
            revisits: 1,
            revisit_offset: 2.0,
            revisit_yaw_deg: 10.0,
            neighbor_radius: 5.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SalsaError::InvalidArgument(m.to_string()));
        if self.num_scenes == 0 || self.points_per_scan == 0 {
            return bad("need at least one scene and one point per scan");
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0) || !(self.scene_radius > 5.0) || !(self.revisit_offset >= 0.0) {
            return bad("noise, scene radius and revisit offset must be valid");
        }
        if self.scene_spacing < 2.0 * self.scene_radius {
            return bad("scenes would overlap; increase scene_spacing");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanRole {
    Database,
    Query,
}

#[derive(Clone, Debug)]
pub struct SyntheticScan {
    pub id: String,
    pub scene: usize,
    pub role: ScanRole,
    /// Sensor frame.
    pub cloud: PointCloud,
    /// Sensor-to-world.
    pub pose: RigidTransform,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub scans: Vec<SyntheticScan>,
    /// For each scan, the other scans within the neighbour radius.
    pub neighbors: Vec<Vec<usize>>,
}

impl SyntheticDataset {
    pub fn indices(&self, role: ScanRole) -> Vec<usize> {
        (0..self.scans.len()).filter(|&i| self.scans[i].role == role).collect()
    }

    pub fn training_scans(&self) -> Vec<TrainingScan> {
        self.scans
            .iter()
            .map(|s| TrainingScan {
                id: s.id.clone(),
                cloud: s.cloud.clone(),
                pose: s.pose,
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Shape {
    /// Axis-aligned in its own frame, rotated by `yaw` about +z.
    Box { center: Point3, half: [f64; 3], yaw: f64 },
    Pole { base: Point3, radius: f64, height: f64 },
    Blob { center: Point3, sigma: f64 },
}

#[derive(Clone, Debug)]
struct Object {
    shape: Shape,
    reflectivity: f64,
}

#[derive(Clone, Debug)]
struct Scene {
    center: Point3,
    radius: f64,
    objects: Vec<Object>,
}

const GROUND_FRACTION: f64 = 0.25;

impl Scene {
    fn random<R: Rng>(center: Point3, radius: f64, rng: &mut R) -> Self {
        let count = rng.random_range(10..=16);
        let objects = (0..count)
            .map(|_| {
                let r = rng.random_range(4.0..radius - 2.0);
                let a = rng.random_range(-PI..PI);
                let at = [center[0] + r * a.cos(), center[1] + r * a.sin(), 0.0];
                let shape = match rng.random_range(0..3) {
                    0 => {
                        let h = rng.random_range(1.0..4.0);
                        Shape::Box {
                            center: [at[0], at[1], h],
                            half: [rng.random_range(0.75..3.0), rng.random_range(0.75..3.0), h],
                            yaw: rng.random_range(-PI..PI),
                        }
                    }
                    1 => Shape::Pole {
                        base: at,
                        radius: rng.random_range(0.15..0.4),
                        height: rng.random_range(3.0..7.0),
                    },
                    _ => Shape::Blob {
                        center: [at[0], at[1], rng.random_range(1.0..3.0)],
                        sigma: rng.random_range(0.4..1.5),
                    },
                };
                Object {
                    shape,
                    reflectivity: rng.random_range(0.1..1.0),
                }
            })
            .collect();
        Self {
            center,
            radius,
            objects,
        }
    }

    /// One surface sample in world coordinates with its intensity.
    fn sample<R: Rng>(&self, rng: &mut R) -> (Point3, f64) {
        let jitter = rng.random_range(-0.05..0.05);
        if rng.random_bool(GROUND_FRACTION) {
            let r = self.radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(-PI..PI);
            let p = [self.center[0] + r * a.cos(), self.center[1] + r * a.sin(), 0.0];
            return (p, 0.2 + jitter);
        }
        let obj = &self.objects[rng.random_range(0..self.objects.len())];
        let p = match &obj.shape {
            Shape::Box { center, half, yaw } => {
                // a point on one of the four walls or the roof
                let face = rng.random_range(0..5);
                let u = rng.random_range(-1.0..1.0);
                let v = rng.random_range(-1.0..1.0);
                let local = match face {
                    0 => [half[0], u * half[1], v * half[2]],
                    1 => [-half[0], u * half[1], v * half[2]],
                    2 => [u * half[0], half[1], v * half[2]],
                    3 => [u * half[0], -half[1], v * half[2]],
                    _ => [u * half[0], v * half[1], half[2]],
                };
                let (s, c) = yaw.sin_cos();
                [
                    center[0] + c * local[0] - s * local[1],
                    center[1] + s * local[0] + c * local[1],
                    center[2] + local[2],
                ]
            }
            Shape::Pole { base, radius, height } => {
                let a = rng.random_range(-PI..PI);
                [
                    base[0] + radius * a.cos(),
                    base[1] + radius * a.sin(),
                    rng.random_range(0.0..*height),
                ]
            }
            Shape::Blob { center, sigma } => {
                let n = Normal::new(0.0, *sigma).expect("positive sigma");
                [center[0] + n.sample(rng), center[1] + n.sample(rng), (center[2] + n.sample(rng)).max(0.0)]
            }
        };
        (p, obj.reflectivity + jitter)
    }
}

fn to_sensor<R: Rng>(
    world: &[(Point3, f64)],
    pose: &RigidTransform,
    noise: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    let inv = pose.inverse();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut pts = Vec::with_capacity(world.len());
    let mut intensity = Vec::with_capacity(world.len());
    for (p, i) in world {
        let mut s = inv.apply(p);
        if noise > 0.0 {
            for v in s.iter_mut() {
                *v += normal.sample(rng);
            }
        }
        pts.push(s);
        intensity.push(*i);
    }
    PointCloud::new(pts, Some(intensity))
}

/// Deterministic for a given configuration (including the seed).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.points_per_scan;
    let mut scans = Vec::new();
    for s in 0..cfg.num_scenes {
        let center = [s as f64 * cfg.scene_spacing, 0.0, 0.0];
        let scene = Scene::random(center, cfg.scene_radius, &mut rng);
        let db_pose = RigidTransform::from_yaw(rng.random_range(-PI..PI), [center[0], center[1], SENSOR_HEIGHT]);
        let db_world: Vec<(Point3, f64)> = (0..n).map(|_| scene.sample(&mut rng)).collect();
        scans.push(SyntheticScan {
            id: format!("s{s:03}_db"),
            scene: s,
            role: ScanRole::Database,
            cloud: to_sensor(&db_world, &db_pose, cfg.noise_sigma, &mut rng)?,
            pose: db_pose,
        });
        for k in 0..cfg.revisits {
            let r = cfg.revisit_offset * rng.random::<f64>().sqrt();
            let a = rng.random_range(-PI..PI);
            let yaw = if cfg.revisit_yaw_deg > 0.0 {
                rng.random_range(-cfg.revisit_yaw_deg..=cfg.revisit_yaw_deg).to_radians()
            } else {
                0.0
            };
            let offset = RigidTransform::from_yaw(yaw, [r * a.cos(), r * a.sin(), 0.0]);
            let q_pose = db_pose.compose(&offset);
            let shared = ((cfg.overlap * n as f64).round() as usize).min(n);
            let mut keep = sample(&mut rng, n, shared).into_vec();
            keep.sort_unstable();
            let mut world: Vec<(Point3, f64)> = keep.iter().map(|&i| db_world[i]).collect();
            world.extend((shared..n).map(|_| scene.sample(&mut rng)));
            scans.push(SyntheticScan {
                id: format!("s{s:03}_q{k}"),
                scene: s,
                role: ScanRole::Query,
                cloud: to_sensor(&world, &q_pose, cfg.noise_sigma, &mut rng)?,
                pose: q_pose,
            });
        }
    }
    let neighbors = neighbor_lists(&scans.iter().map(|s| s.pose).collect::<Vec<_>>(), cfg.neighbor_radius);
    Ok(SyntheticDataset { scans, neighbors })
}

/// Indices of the other poses within `radius`, ascending.
pub fn neighbor_lists(poses: &[RigidTransform], radius: f64) -> Vec<Vec<usize>> {
    (0..poses.len())
        .map(|i| {
            (0..poses.len())
                .filter(|&j| j != i && poses[i].distance_to(&poses[j]) <= radius)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance;

    #[test]
    fn perfect_overlap_revisit_is_a_rigid_copy() {
        let cfg = SyntheticConfig {
            num_scenes: 2,
            points_per_scan: 300,
            overlap: 1.0,
            noise_sigma: 0.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let (db, q) = (&ds.scans[0], &ds.scans[1]);
        let t = q.pose.inverse().compose(&db.pose);
        for (a, b) in db.cloud.points().iter().zip(q.cloud.points()) {
            assert!(distance(&t.apply(a), b) < 1e-9);
        }
        assert_eq!(db.cloud.intensity(), q.cloud.intensity());
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let cfg = SyntheticConfig {
            num_scenes: 3,
            points_per_scan: 200,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        for (x, y) in a.scans.iter().zip(&b.scans) {
            assert_eq!(x.cloud, y.cloud);
            assert_eq!(x.pose, y.pose);
        }
        let c = generate_synthetic(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.scans[0].cloud, c.scans[0].cloud);
    }

    #[test]
    fn neighbours_match_pose_distances() {
        let cfg = SyntheticConfig {
            num_scenes: 5,
            points_per_scan: 50,
            revisits: 2,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for (i, list) in ds.neighbors.iter().enumerate() {
            for j in 0..ds.scans.len() {
                let d = ds.scans[i].pose.distance_to(&ds.scans[j].pose);
                let near = i != j && d <= 5.0;
                assert_eq!(list.contains(&j), near);
                if ds.scans[i].scene != ds.scans[j].scene {
                    assert!(d > 20.0);
                } else if i != j {
                    assert!(near);
                }
            }
        }
        assert_eq!(ds.indices(ScanRole::Database).len(), 5);
        assert_eq!(ds.indices(ScanRole::Query).len(), 10);
    }
}
