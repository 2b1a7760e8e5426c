//! Complex ratio filters and spatial covariance estimation.

mod crf;
mod scm;
mod stub;

pub use crf::{
    apply_crf, apply_crf_stacked, fit_crf, ground_truth_target, oracle_crf, ComplexRatioFilter,
    Target, DEFAULT_CRF_TAPS,
};
pub use scm::{compute_scm, CovarianceSeries, LayerNorm, Smoothing, DEFAULT_RECURSIVE_ALPHA};
pub use stub::{neural_crf_stub, CrfStubConfig, CrfStubOutput};
