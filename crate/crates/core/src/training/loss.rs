use rand::seq::index::sample;
use rand::Rng;

use crate::error::{shape_err, Result, SalsaError};
use crate::geometry::{distance, Point3, PointIndex, RigidTransform};
use crate::numeric::{squared_distance, Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Triplet margin `m`.
    pub margin: f64,
    pub m_p: f64,
    pub m_n: f64,
    pub mu_n: f64,
    /// Geometric radius for a point pair to count as corresponding.
    pub r_corr: f64,
    /// A mined local negative only counts when it lies farther than this
    /// from the anchor.
    pub r_neg: f64,
    pub lambda_local: f64,
    /// Candidate points sampled per cloud for local negative mining.
    pub sample_set_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            m_p: 0.1,
            m_n: 2.0,
            mu_n: 1.0,
            r_corr: 0.5,
            r_neg: 2.0,
            lambda_local: 1.0,
            sample_set_size: 256,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.margin,
            self.m_p,
            self.m_n,
            self.mu_n,
            self.r_corr,
            self.r_neg,
            self.lambda_local,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SalsaError::InvalidArgument("loss constants must be finite and nonnegative".into()));
        }
        if self.r_corr == 0.0 || self.sample_set_size == 0 {
            return Err(SalsaError::InvalidArgument(
                "correspondence radius and sample set size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `max(‖q−p‖² − ‖q−n‖² + m, 0)`.
pub fn triplet_loss(q: &[f64], p: &[f64], n: &[f64], m: f64) -> Result<f64> {
    if q.len() != p.len() || q.len() != n.len() {
        return Err(shape_err(
            "triplet_loss",
            format!("lengths {}, {}, {}", q.len(), p.len(), n.len()),
        ));
    }
    Ok((squared_distance(q, p) - squared_distance(q, n) + m).max(0.0))
}

pub fn record_triplet_loss(tape: &mut Tape, q: Var, p: Var, n: Var, m: f64) -> Result<Var> {
    let dp = tape.sub(q, p)?;
    let dp2 = tape.mul(dp, dp)?;
    let dp2 = tape.sum(dp2);
    let dn = tape.sub(q, n)?;
    let dn2 = tape.mul(dn, dn)?;
    let dn2 = tape.sum(dn2);
    let diff = tape.sub(dp2, dn2)?;
    let shifted = tape.add_scalar(diff, m);
    Ok(tape.relu(shifted))
}

/// Geometric correspondences between two clouds, with both clouds expressed
/// in the second cloud's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    /// `(index in cloud 1, index in cloud 2)`, at most one pair per index in
    /// cloud 1, ascending.
    pub pairs: Vec<(usize, usize)>,
    /// Every point of cloud 1 mapped into cloud 2's frame.
    pub positions_a: Vec<Point3>,
    pub positions_b: Vec<Point3>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pairs `(i, j)` where `j` is the nearest point of `b` to `t_gt(a_i)` and lies
/// closer than `r_corr`.
pub fn find_correspondences(a: &[Point3], b: &[Point3], t_gt: &RigidTransform, r_corr: f64) -> CorrespondenceSet {
    let positions_a: Vec<Point3> = a.iter().map(|p| t_gt.apply(p)).collect();
    let index = PointIndex::new(b, r_corr.max(1e-3));
    let pairs = positions_a
        .iter()
        .enumerate()
        .filter_map(|(i, p)| index.nearest_within(p, r_corr).map(|(j, _)| (i, j)))
        .collect();
    CorrespondenceSet {
        pairs,
        positions_a,
        positions_b: b.to_vec(),
    }
}

/// Candidate point indices searched for local negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeCandidates {
    /// Indices into cloud 1 (negatives for cloud-2 anchors).
    pub in_a: Vec<usize>,
    /// Indices into cloud 2 (negatives for cloud-1 anchors).
    pub in_b: Vec<usize>,
}

fn sample_sorted<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

impl NegativeCandidates {
    pub fn sample<R: Rng + ?Sized>(n_a: usize, n_b: usize, size: usize, rng: &mut R) -> Self {
        Self {
            in_a: sample_sorted(n_a, size, rng),
            in_b: sample_sorted(n_b, size, rng),
        }
    }

    pub fn all(n_a: usize, n_b: usize) -> Self {
        Self {
            in_a: (0..n_a).collect(),
            in_b: (0..n_b).collect(),
        }
    }
}

/// Hardest candidate in descriptor space; ties go to the earlier candidate.
fn hardest(anchor: &[f64], pool: &Matrix, candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    let mut best_d = f64::INFINITY;
    for &k in candidates {
        let d = squared_distance(anchor, pool.row(k));
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Rows taking part in one side's negative hinge: `(anchor, mined negative)`
/// for every anchor whose mined negative lies outside the exclusion radius.
fn mine_side(
    anchors: &Matrix,
    pool: &Matrix,
    anchor_ids: impl Iterator<Item = usize>,
    anchor_pos: &[Point3],
    pool_pos: &[Point3],
    candidates: &[usize],
    r_neg: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut a_rows = Vec::new();
    let mut n_rows = Vec::new();
    for i in anchor_ids {
        let k = hardest(anchors.row(i), pool, candidates);
        if distance(&anchor_pos[i], &pool_pos[k]) > r_neg {
            a_rows.push(i);
            n_rows.push(k);
        }
    }
    (a_rows, n_rows)
}

fn squared_row_distances(tape: &mut Tape, x: Var, xi: Vec<usize>, y: Var, yi: Vec<usize>) -> Result<Var> {
    let a = tape.gather_rows(x, xi)?;
    let b = tape.gather_rows(y, yi)?;
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    Ok(tape.row_sums(d2))
}

/// Local consistency loss between point descriptors `g1` (cloud 1) and `g2`
/// (cloud 2): a positive hinge on corresponding pairs plus, for each side,
/// a hinge pushing every anchor away from its hardest candidate on the
/// other side, counted only when that candidate is geometrically distant.
pub fn record_local_consistency_loss(
    tape: &mut Tape,
    g1: Var,
    g2: Var,
    gamma: &CorrespondenceSet,
    cfg: &LossConfig,
    candidates: &NegativeCandidates,
) -> Result<Var> {
    if gamma.is_empty() {
        return Err(SalsaError::InvalidArgument("no correspondences".into()));
    }
    let (n1, c1) = tape.shape(g1);
    let (n2, c2) = tape.shape(g2);
    if c1 != c2 || n1 != gamma.positions_a.len() || n2 != gamma.positions_b.len() {
        return Err(shape_err(
            "local_consistency_loss",
            format!("descriptors {n1}x{c1} / {n2}x{c2} vs {} / {} points", gamma.positions_a.len(), gamma.positions_b.len()),
        ));
    }
    if candidates.in_a.is_empty()
        || candidates.in_b.is_empty()
        || candidates.in_a.iter().any(|&k| k >= n1)
        || candidates.in_b.iter().any(|&k| k >= n2)
    {
        return Err(SalsaError::InvalidArgument("negative candidates out of range".into()));
    }

    let (is, js): (Vec<usize>, Vec<usize>) = gamma.pairs.iter().copied().unzip();
    let pos = squared_row_distances(tape, g1, is.clone(), g2, js.clone())?;
    let pos = tape.add_scalar(pos, -cfg.m_p);
    let pos = tape.relu(pos);
    let pos = tape.sum(pos);
    let mut total = tape.scale(pos, 1.0 / gamma.len() as f64);

    let v1 = tape.value(g1).clone();
    let v2 = tape.value(g2).clone();
    let sides = [
        mine_side(&v1, &v2, is.into_iter(), &gamma.positions_a, &gamma.positions_b, &candidates.in_b, cfg.r_neg),
        mine_side(&v2, &v1, js.into_iter(), &gamma.positions_b, &gamma.positions_a, &candidates.in_a, cfg.r_neg),
    ];
    for (side, (anchors, negs)) in sides.into_iter().enumerate() {
        if anchors.is_empty() {
            continue;
        }
        let count = anchors.len() as f64;
        let d = if side == 0 {
            squared_row_distances(tape, g1, anchors, g2, negs)?
        } else {
            squared_row_distances(tape, g2, anchors, g1, negs)?
        };
        let h = tape.scale(d, -1.0);
        let h = tape.add_scalar(h, cfg.m_n);
        let h = tape.relu(h);
        let h = tape.sum(h);
        let h = tape.scale(h, cfg.mu_n / count);
        total = tape.add(total, h)?;
    }
    Ok(total)
}

/// Value of [`record_local_consistency_loss`] for fixed descriptors.
pub fn local_consistency_loss(
    g1: &Matrix,
    g2: &Matrix,
    gamma: &CorrespondenceSet,
    cfg: &LossConfig,
    candidates: &NegativeCandidates,
) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(g1.clone());
    let b = tape.constant(g2.clone());
    let l = record_local_consistency_loss(&mut tape, a, b, gamma, cfg, candidates)?;
    tape.scalar(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_check, GradCheckConfig, ParamSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triplet_cases() {
        let q = [0.0, 0.0];
        assert_eq!(triplet_loss(&q, &q, &[1.0, 0.0], 0.1).unwrap(), 0.0);
        let p = [0.5f64.sqrt(), 0.0];
        let n = [0.0, 0.2f64.sqrt()];
        assert!((triplet_loss(&q, &p, &n, 0.1).unwrap() - 0.4).abs() < 1e-12);
        let p = [0.0, 0.2f64.sqrt()];
        let n = [0.3f64.sqrt(), 0.0];
        assert!(triplet_loss(&q, &p, &n, 0.1).unwrap() < 1e-15);
        assert!(triplet_loss(&q, &[0.0], &q, 0.1).is_err());
    }

    #[test]
    fn taped_triplet_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let v: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut t = Tape::new();
            let vars: Vec<Var> = v.iter().map(|x| t.constant(Matrix::row_vector(x))).collect();
            let l = record_triplet_loss(&mut t, vars[0], vars[1], vars[2], 0.1).unwrap();
            let plain = triplet_loss(&v[0], &v[1], &v[2], 0.1).unwrap();
            assert!((t.scalar(l).unwrap() - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn correspondences_under_known_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<Point3> = (0..200)
            .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..3.0)])
            .collect();
        let t = RigidTransform::from_yaw(0.3, [1.0, -2.0, 0.1]);
        let b: Vec<Point3> = a.iter().map(|p| t.apply(p)).collect();
        let g = find_correspondences(&a, &b, &t, 0.5);
        assert_eq!(g.pairs, (0..200).map(|i| (i, i)).collect::<Vec<_>>());
        let far: Vec<Point3> = b.iter().map(|p| [p[0] + 100.0, p[1], p[2]]).collect();
        assert!(find_correspondences(&a, &far, &t, 0.5).is_empty());
    }

    #[test]
    fn positive_term_only() {
        let g1 = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let g2 = Matrix::from_rows(&[vec![0.3f64.sqrt(), 0.0]]).unwrap();
        let gamma = CorrespondenceSet {
            pairs: vec![(0, 0)],
            positions_a: vec![[0.0; 3]],
            positions_b: vec![[0.0; 3]],
        };
        let l = local_consistency_loss(&g1, &g2, &gamma, &LossConfig::default(), &NegativeCandidates::all(1, 1)).unwrap();
        assert!((l - 0.2).abs() < 1e-12);
        let empty = CorrespondenceSet {
            pairs: vec![],
            ..gamma
        };
        assert!(local_consistency_loss(&g1, &g2, &empty, &LossConfig::default(), &NegativeCandidates::all(1, 1)).is_err());
    }

    #[test]
    fn gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let pts: Vec<Point3> = (0..n).map(|i| [i as f64 * 1.5, 0.0, 0.0]).collect();
        let gamma = CorrespondenceSet {
            pairs: (0..n).map(|i| (i, (i + 1) % n)).collect(),
            positions_a: pts.clone(),
            positions_b: pts,
        };
        let mut ps = ParamSet::new();
        let a = ps.add("g1", Matrix::from_fn(n, 4, |_, _| rng.random_range(-0.5..0.5))).unwrap();
        let b = ps.add("g2", Matrix::from_fn(n, 4, |_, _| rng.random_range(-0.5..0.5))).unwrap();
        let cands = NegativeCandidates::all(n, n);
        let cfg = LossConfig::default();
        let report = finite_diff_check(
            &mut ps,
            |t, ps| {
                let x = t.param(ps, a);
                let y = t.param(ps, b);
                record_local_consistency_loss(t, x, y, &gamma, &cfg, &cands)
            },
            GradCheckConfig {
                eps: 1e-6,
                samples: 96,
            },
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn config_rejects_negative_constants() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            m_n: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
