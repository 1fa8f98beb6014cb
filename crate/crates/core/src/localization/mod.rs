//! Local correspondence matching, spectral re-ranking and 6-DoF
//! registration.

mod matching;
mod registration;
mod spectral;

pub use matching::{match_local, ratio_prune, Match, MatchSet};
pub use registration::{
    localization_success, ransac_register, PoseEstimate, RansacConfig, SUCCESS_RRE_DEG, SUCCESS_RTE,
};
pub use spectral::{
    candidate_fitness, compatibility_matrix, rerank, spectral_fitness, CompatibilityGraph, Fitness,
    RerankConfig, RerankedCandidate, DEFAULT_SIGMA_C,
};
