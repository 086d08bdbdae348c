//! Independent checks: exhaustive search, and information matrices of the
//! exact likelihood for small designs.

pub mod brute;
pub mod likelihood;
pub mod quadrature;

pub use brute::{brute_force_best, count_designs, BRUTE_FORCE_LIMIT};
pub use likelihood::{exact_info_small, exact_variance, mc_variance, McEstimate, Predictor, SmallGlmm};
