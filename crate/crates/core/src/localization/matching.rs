use rand::Rng;
use rayon::prelude::*;

use crate::backbone::LocalDescriptorSet;
use crate::error::{Result, SalsaError};
use crate::geometry::{distance, Point3};
use crate::numeric::squared_distance;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub query: usize,
    pub candidate: usize,
    pub distance: f64,
}

/// Putative point correspondences between a query cloud and a candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    pub query_positions: Vec<Point3>,
    pub candidate_positions: Vec<Point3>,
    /// Whether pairs were restricted to mutual nearest neighbours.
    pub mutual: bool,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Query-side position of pair `k`.
    pub fn p(&self, k: usize) -> &Point3 {
        &self.query_positions[self.pairs[k].query]
    }

    /// Candidate-side position of pair `k`.
    pub fn q(&self, k: usize) -> &Point3 {
        &self.candidate_positions[self.pairs[k].candidate]
    }

    pub fn with_pairs(&self, pairs: Vec<Match>) -> Self {
        Self {
            pairs,
            query_positions: self.query_positions.clone(),
            candidate_positions: self.candidate_positions.clone(),
            mutual: self.mutual,
        }
    }
}

fn nearest(row: &[f64], set: &LocalDescriptorSet) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..set.len() {
        let d = squared_distance(row, set.descriptors.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest candidate descriptor for every query point; the `max_matches`
/// closest pairs are kept (ties by query index).
pub fn match_local(q: &LocalDescriptorSet, c: &LocalDescriptorSet, max_matches: usize) -> Result<MatchSet> {
    if q.is_empty() || c.is_empty() {
        return Err(SalsaError::InvalidArgument("matching needs two nonempty descriptor sets".into()));
    }
    if q.dim() != c.dim() {
        return Err(SalsaError::InvalidArgument(format!(
            "descriptor widths differ: {} vs {}",
            q.dim(),
            c.dim()
        )));
    }
    let mut pairs: Vec<Match> = (0..q.len())
        .into_par_iter()
        .map(|i| {
            let (j, d2) = nearest(q.descriptors.row(i), c);
            Match {
                query: i,
                candidate: j,
                distance: d2.sqrt(),
            }
        })
        .collect();
    pairs.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.query.cmp(&b.query)));
    pairs.truncate(max_matches);
    Ok(MatchSet {
        pairs,
        query_positions: q.positions.clone(),
        candidate_positions: c.positions.clone(),
        mutual: false,
    })
}

/// `min(a, b) / max(a, b)` of the two edge lengths; 1 when both vanish.
fn edge_ratio(m: &MatchSet, i: usize, j: usize) -> f64 {
    let a = distance(m.p(i), m.p(j));
    let b = distance(m.q(i), m.q(j));
    let hi = a.max(b);
    if hi == 0.0 {
        1.0
    } else {
        a.min(b) / hi
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Keeps pairs whose median edge-length ratio against `samples` random
/// partner pairs is at least `tau`. Sets with fewer than two pairs pass
/// through unchanged.
pub fn ratio_prune<R: Rng + ?Sized>(m: &MatchSet, tau: f64, samples: usize, rng: &mut R) -> MatchSet {
    let n = m.len();
    if n < 2 || samples == 0 {
        return m.clone();
    }
    let mut ratios = vec![0.0; samples];
    let keep = (0..n)
        .filter(|&i| {
            for r in ratios.iter_mut() {
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                *r = edge_ratio(m, i, j);
            }
            median(&mut ratios) >= tau
        })
        .map(|i| m.pairs[i])
        .collect();
    m.with_pairs(keep)
}
