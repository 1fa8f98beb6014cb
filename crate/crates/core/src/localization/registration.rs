use rand::seq::index::sample;
use rand::Rng;

use super::matching::MatchSet;
use crate::geometry::{distance, kabsch, pose_error, Point3, RigidTransform};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub inlier_thresh: f64,
    pub confidence: f64,
    pub max_iter: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_thresh: 0.5,
            confidence: 0.999,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEstimate {
    /// Maps query-frame points into the candidate frame.
    pub transform: RigidTransform,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PoseEstimate {
    fn failed(iterations: usize) -> Self {
        Self {
            transform: RigidTransform::identity(),
            inliers: 0,
            inlier_ratio: 0.0,
            iterations,
            converged: false,
        }
    }
}

fn inliers_of(t: &RigidTransform, p: &[Point3], q: &[Point3], thresh: f64) -> Vec<usize> {
    (0..p.len()).filter(|&k| distance(&t.apply(&p[k]), &q[k]) < thresh).collect()
}

/// Iterations needed for `confidence` given inlier ratio `w` and 3-point
/// samples.
fn required_iterations(w: f64, confidence: f64) -> f64 {
    if w >= 1.0 {
        return 1.0;
    }
    let good = w.powi(3);
    if good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good).ln()
}

/// Three-point RANSAC with Kabsch hypotheses and adaptive termination, then
/// a least-squares refit on the best inlier set. Fewer than three pairs, or
/// no hypothesis with three inliers, yields `converged = false` and the
/// identity.
pub fn ransac_register<R: Rng + ?Sized>(m: &MatchSet, cfg: &RansacConfig, rng: &mut R) -> PoseEstimate {
    let n = m.len();
    if n < 3 {
        return PoseEstimate::failed(0);
    }
    let p: Vec<Point3> = (0..n).map(|k| *m.p(k)).collect();
    let q: Vec<Point3> = (0..n).map(|k| *m.q(k)).collect();
    let mut best: Vec<usize> = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let s = sample(rng, n, 3);
        let src: Vec<Point3> = s.iter().map(|k| p[k]).collect();
        let dst: Vec<Point3> = s.iter().map(|k| q[k]).collect();
        if let Ok(t) = kabsch(&src, &dst) {
            let inl = inliers_of(&t, &p, &q, cfg.inlier_thresh);
            if inl.len() > best.len() {
                best = inl;
            }
        }
        let w = best.len() as f64 / n as f64;
        if best.len() >= 3 && iterations as f64 >= required_iterations(w, cfg.confidence) {
            break;
        }
    }
    if best.len() < 3 {
        return PoseEstimate::failed(iterations);
    }
    let src: Vec<Point3> = best.iter().map(|&k| p[k]).collect();
    let dst: Vec<Point3> = best.iter().map(|&k| q[k]).collect();
    let Ok(transform) = kabsch(&src, &dst) else {
        return PoseEstimate::failed(iterations);
    };
    let inliers = inliers_of(&transform, &p, &q, cfg.inlier_thresh).len();
    PoseEstimate {
        transform,
        inliers,
        inlier_ratio: inliers as f64 / n as f64,
        iterations,
        converged: true,
    }
}

pub const SUCCESS_RTE: f64 = 2.0;
pub const SUCCESS_RRE_DEG: f64 = 5.0;

/// Within 2 m and 5° of the ground truth, both inclusive.
pub fn localization_success(est: &PoseEstimate, gt: &RigidTransform) -> bool {
    let e = pose_error(&est.transform, gt);
    e.rte <= SUCCESS_RTE && e.rre <= SUCCESS_RRE_DEG
}
