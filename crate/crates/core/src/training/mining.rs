use rand::seq::index::sample;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Result, SalsaError};
use crate::geometry::{PointCloud, RigidTransform};
use crate::numeric::squared_distance;

/// One training scan with its sensor-to-world pose.
#[derive(Clone, Debug)]
pub struct TrainingScan {
    pub id: String,
    pub cloud: PointCloud,
    pub pose: RigidTransform,
}

/// Indices into the scan list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub query: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiningConfig {
    pub positive_radius: f64,
    pub negative_radius: f64,
    /// Queries mined per epoch at most.
    pub subset_size: usize,
    /// Negatives sampled per query at most.
    pub negative_samples: usize,
    /// A negative qualifies when `d(q, n)² < d(q, p)² + hardness_margin`.
    /// Zero keeps only strictly hard negatives; the triplet margin also
    /// admits every negative that still violates the loss.
    pub hardness_margin: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            positive_radius: 5.0,
            negative_radius: 20.0,
            subset_size: 1000,
            negative_samples: 4000,
            hardness_margin: 0.0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.positive_radius > 0.0 && self.negative_radius >= self.positive_radius) {
            return Err(SalsaError::InvalidArgument(format!(
                "need 0 < positive radius ({}) ≤ negative radius ({})",
                self.positive_radius, self.negative_radius
            )));
        }
        if !(self.hardness_margin >= 0.0) {
            return Err(SalsaError::InvalidArgument("hardness margin must be non-negative".into()));
        }
        if self.subset_size == 0 || self.negative_samples == 0 {
            return Err(SalsaError::InvalidArgument("mining sample sizes must be positive".into()));
        }
        Ok(())
    }

    /// Query subset and negative sample sizes for a dataset of `n` scans,
    /// shrunk together when the dataset is smaller than the subset.
    pub fn scaled(&self, n: usize) -> (usize, usize) {
        if n >= self.subset_size {
            return (self.subset_size, self.negative_samples);
        }
        let neg = (self.negative_samples as f64 * n as f64 / self.subset_size as f64).ceil() as usize;
        (n, neg.max(1))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MiningOutcome {
    pub triplets: Vec<Triplet>,
    pub skipped_no_positive: usize,
    pub skipped_no_hard_negative: usize,
}

fn pose_distance(scans: &[TrainingScan], a: usize, b: usize) -> f64 {
    scans[a].pose.distance_to(&scans[b].pose)
}


/// For each query: a random positive within the positive radius, then among
/// sampled negatives beyond the negative radius the one closest to the query
/// in descriptor space, kept only when it is hard (see
/// [`MiningConfig::hardness_margin`]). Ties go to the lower scan index.
pub fn mine_hard_negatives<R: Rng + ?Sized>(
    scans: &[TrainingScan],
    descriptors: &[Vec<f64>],
    queries: &[usize],
    cfg: &MiningConfig,
    rng: &mut R,
) -> Result<MiningOutcome> {
    cfg.validate()?;
    if descriptors.len() != scans.len() {
        return Err(SalsaError::InvalidArgument(format!(
            "{} descriptors for {} scans",
            descriptors.len(),
            scans.len()
        )));
    }
    let (_, neg_samples) = cfg.scaled(scans.len());
    let mut out = MiningOutcome::default();
    for &q in queries {
        let positives: Vec<usize> = (0..scans.len())
            .filter(|&j| j != q && pose_distance(scans, q, j) <= cfg.positive_radius)
            .collect();
        let Some(&p) = positives.choose(rng) else {
            out.skipped_no_positive += 1;
            continue;
        };
        let negatives: Vec<usize> = (0..scans.len())
            .filter(|&j| pose_distance(scans, q, j) > cfg.negative_radius)
            .collect();
        let sampled: Vec<usize> = if negatives.len() <= neg_samples {
            negatives
        } else {
            sample(rng, negatives.len(), neg_samples)
                .into_iter()
                .map(|i| negatives[i])
                .collect()
        };
        let bound = squared_distance(&descriptors[q], &descriptors[p]) + cfg.hardness_margin;
        let hardest = sampled
            .iter()
            .map(|&n| (n, squared_distance(&descriptors[q], &descriptors[n])))
            .filter(|&(_, d)| d < bound)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match hardest {
            Some((n, _)) => out.triplets.push(Triplet {
                query: q,
                positive: p,
                negative: n,
            }),
            None => out.skipped_no_hard_negative += 1,
        }
    }
    Ok(out)
}

/// Random query subset of the scaled size, ascending.
pub fn sample_queries<R: Rng + ?Sized>(n: usize, cfg: &MiningConfig, rng: &mut R) -> Vec<usize> {
    let (subset, _) = cfg.scaled(n);
    let mut q = sample(rng, n, subset.min(n)).into_vec();
    q.sort_unstable();
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scans_at(xs: &[f64]) -> Vec<TrainingScan> {
        xs.iter()
            .enumerate()
            .map(|(i, &x)| TrainingScan {
                id: format!("s{i}"),
                cloud: PointCloud::from_points(vec![[0.0; 3]]).unwrap(),
                pose: RigidTransform::from_translation([x, 0.0, 0.0]),
            })
            .collect()
    }

    #[test]
    fn hardest_of_the_hard() {
        let scans = scans_at(&[0.0, 3.0, 50.0, 60.0, 70.0]);
        let desc = vec![vec![0.0], vec![0.5], vec![0.9], vec![0.3], vec![0.6]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = mine_hard_negatives(&scans, &desc, &[0], &MiningConfig::default(), &mut rng).unwrap();
        assert_eq!(
            out.triplets,
            vec![Triplet {
                query: 0,
                positive: 1,
                negative: 3
            }]
        );
    }

    #[test]
    fn no_hard_negative_skips() {
        let scans = scans_at(&[0.0, 3.0, 50.0]);
        let desc = vec![vec![0.0], vec![0.1], vec![5.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = mine_hard_negatives(&scans, &desc, &[0, 2], &MiningConfig::default(), &mut rng).unwrap();
        assert!(out.triplets.is_empty());
        assert_eq!(out.skipped_no_hard_negative, 1);
        assert_eq!(out.skipped_no_positive, 1);
    }

    #[test]
    fn margin_admits_near_misses() {
        let scans = scans_at(&[0.0, 3.0, 50.0]);
        let desc = vec![vec![0.0], vec![0.1], vec![0.2]];
        let strict = MiningConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(mine_hard_negatives(&scans, &desc, &[0], &strict, &mut rng).unwrap().triplets.is_empty());
        let loose = MiningConfig {
            hardness_margin: 0.1,
            ..strict
        };
        let out = mine_hard_negatives(&scans, &desc, &[0], &loose, &mut rng).unwrap();
        assert_eq!(out.triplets.len(), 1);
        assert_eq!(out.triplets[0].negative, 2);
    }

    #[test]
    fn radii_and_hardness_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..200.0)).collect();
        let scans = scans_at(&xs);
        let desc: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let cfg = MiningConfig::default();
        let qs = sample_queries(scans.len(), &cfg, &mut rng);
        let out = mine_hard_negatives(&scans, &desc, &qs, &cfg, &mut rng).unwrap();
        assert!(!out.triplets.is_empty());
        for t in &out.triplets {
            assert!(pose_distance(&scans, t.query, t.positive) <= 5.0);
            assert!(pose_distance(&scans, t.query, t.negative) > 20.0);
            assert!(
                squared_distance(&desc[t.query], &desc[t.negative])
                    < squared_distance(&desc[t.query], &desc[t.positive])
            );
        }
    }

    #[test]
    fn scaling_keeps_the_ratio() {
        let cfg = MiningConfig::default();
        assert_eq!(cfg.scaled(5000), (1000, 4000));
        assert_eq!(cfg.scaled(40), (40, 160));
    }
}
