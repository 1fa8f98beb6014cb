use rayon::prelude::*;

use super::matching::{match_local, MatchSet};
use crate::backbone::LocalDescriptorSet;
use crate::error::{Result, SalsaError};
use crate::geometry::distance;
use crate::numeric::{power_iteration, Matrix};

pub const DEFAULT_SIGMA_C: f64 = 0.6;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

/// Pairwise length-preservation scores between correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct CompatibilityGraph {
    pub matrix: Matrix,
    pub sigma_c: f64,
}

/// `M_ij = [1 − (‖p_i − p_j‖ − ‖q_i − q_j‖)² / σ_c²]₊`, zero diagonal.
pub fn compatibility_matrix(m: &MatchSet, sigma_c: f64) -> Result<CompatibilityGraph> {
    if !(sigma_c > 0.0) {
        return Err(SalsaError::InvalidArgument(format!("sigma_c must be positive, got {sigma_c}")));
    }
    let n = m.len();
    let mut matrix = Matrix::zeros(n, n);
    let inv = 1.0 / (sigma_c * sigma_c);
    for i in 0..n {
        for j in i + 1..n {
            let diff = distance(m.p(i), m.p(j)) - distance(m.q(i), m.q(j));
            let v = (1.0 - diff * diff * inv).max(0.0);
            matrix.set(i, j, v);
            matrix.set(j, i, v);
        }
    }
    Ok(CompatibilityGraph { matrix, sigma_c })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fitness {
    /// Leading eigenvalue divided by the number of correspondences.
    pub score: f64,
    pub eigenvalue: f64,
    pub converged: bool,
}

/// Leading eigenvalue of the compatibility matrix over its size. Graphs
/// smaller than 2×2 score 0.
pub fn spectral_fitness(g: &CompatibilityGraph) -> Result<Fitness> {
    let n = g.matrix.rows();
    if n < 2 {
        return Ok(Fitness {
            score: 0.0,
            eigenvalue: 0.0,
            converged: true,
        });
    }
    let (eigenvalue, converged) = match power_iteration(&g.matrix, POWER_TOL, POWER_MAX_ITER) {
        Ok(e) => (e.value, true),
        Err(SalsaError::NoConvergence { eigenvalue, .. }) => (eigenvalue, false),
        Err(e) => return Err(e),
    };
    Ok(Fitness {
        score: eigenvalue.max(0.0) / n as f64,
        eigenvalue,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RerankConfig {
    /// Number of retrieved candidates re-scored.
    pub depth: usize,
    pub max_matches: usize,
    pub sigma_c: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            depth: 20,
            max_matches: 512,
            sigma_c: DEFAULT_SIGMA_C,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankedCandidate {
    pub id: String,
    /// 0-based position in the retrieval order.
    pub original_rank: usize,
    pub fitness: f64,
    pub matches: usize,
}

/// Geometric fitness of one candidate against the query.
pub fn candidate_fitness(query: &LocalDescriptorSet, cand: &LocalDescriptorSet, cfg: &RerankConfig) -> Result<(f64, usize)> {
    if query.is_empty() || cand.is_empty() {
        return Ok((0.0, 0));
    }
    let m = match_local(query, cand, cfg.max_matches)?;
    if m.len() < 2 {
        return Ok((0.0, m.len()));
    }
    let g = compatibility_matrix(&m, cfg.sigma_c)?;
    Ok((spectral_fitness(&g)?.score, m.len()))
}

/// Scores the first `cfg.depth` candidates (in retrieval order) and sorts
/// them by descending fitness, ties kept in retrieval order. Candidates past
/// the depth are appended unchanged with zero fitness.
pub fn rerank(
    query: &LocalDescriptorSet,
    candidates: &[(String, &LocalDescriptorSet)],
    cfg: &RerankConfig,
) -> Result<Vec<RerankedCandidate>> {
    let depth = cfg.depth.min(candidates.len());
    let mut scored: Vec<RerankedCandidate> = candidates[..depth]
        .par_iter()
        .enumerate()
        .map(|(rank, (id, local))| {
            let (fitness, matches) = candidate_fitness(query, local, cfg)?;
            Ok(RerankedCandidate {
                id: id.clone(),
                original_rank: rank,
                fitness,
                matches,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.original_rank.cmp(&b.original_rank)));
    scored.extend(candidates[depth..].iter().enumerate().map(|(i, (id, _))| RerankedCandidate {
        id: id.clone(),
        original_rank: depth + i,
        fitness: 0.0,
        matches: 0,
    }));
    Ok(scored)
}
