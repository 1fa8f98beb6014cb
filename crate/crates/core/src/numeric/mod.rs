//! Dense kernels, reverse-mode differentiation, PCA whitening and the
//! leading-eigenpair solver.

mod eigen;
mod gradcheck;
mod matrix;
mod ops;
mod pca;
mod tape;

pub use eigen::{power_iteration, EigenPair};
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use matrix::{dot, l2_norm, normalized, squared_distance, Matrix};
pub use ops::{layer_norm, softmax_rows, LAYER_NORM_EPS};
pub use pca::{apply_whitener, fit_pca_whitener, sample_covariance, PcaWhitener, WHITEN_EPS};
pub use tape::{
    cross_attention_forward, grouped_attention_forward, AttentionLayout, ParamId, ParamSet,
    Parameter, Tape, Var,
};
