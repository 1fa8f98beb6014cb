//! Seeded fixtures shared by the benchmarks under `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salsa_core::geometry::{Point3, PointCloud, RigidTransform};
use salsa_core::localization::{Match, MatchSet};
use salsa_core::retrieval::DescriptorDatabase;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_point(rng: &mut ChaCha8Rng, extent: f64) -> Point3 {
    [
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
        rng.random_range(-2.0..4.0),
    ]
}

/// Uniform points in a `2·extent` square with intensities.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> PointCloud {
    let pts = (0..n).map(|_| random_point(rng, extent)).collect();
    let intensity = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    PointCloud::new(pts, Some(intensity)).expect("finite points")
}

pub fn random_database(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DescriptorDatabase {
    let mut db = DescriptorDatabase::new(dim);
    for i in 0..n {
        let d = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        db.add(format!("e{i:06}"), d, RigidTransform::identity(), None).expect("unique ids");
    }
    db
}

/// `n` correspondences under a yaw-plus-shift transform, a fraction of them
/// replaced by uniform outliers.
pub fn match_set(rng: &mut ChaCha8Rng, n: usize, outliers: f64) -> MatchSet {
    let t = RigidTransform::from_yaw(0.7, [4.0, -2.0, 0.3]);
    let query_positions: Vec<Point3> = (0..n).map(|_| random_point(rng, 30.0)).collect();
    let candidate_positions = query_positions
        .iter()
        .map(|p| if rng.random_bool(outliers) { random_point(rng, 30.0) } else { t.apply(p) })
        .collect();
    MatchSet {
        pairs: (0..n).map(|i| Match { query: i, candidate: i, distance: 0.0 }).collect(),
        query_positions,
        candidate_positions,
        mutual: false,
    }
}
