//! Exponential families on permutations: `p_θ(π) ∝ exp(θ·T(π))` with
//! `T(π) = Σ_i f(i/n, π(i)/n)`.
//!
//! The crate provides the pseudo-likelihood estimator and its sandwich
//! intervals, Gibbs and hit-and-run samplers, the continuum limit of the
//! model via Sinkhorn scaling, a linearized MLE at the origin and an exact
//! enumeration oracle for small `n`.

pub mod error;
pub mod experiment;
pub mod limiting;
pub mod mle_zero;
pub mod model;
pub mod oracle;
pub mod pseudolikelihood;
pub mod sampler;
pub mod variance;

pub use error::{PermexpError, Result};
pub use limiting::{limiting_summary, CouplingGrid, LimitingSummary, SinkhornOptions};
pub use mle_zero::{approx_mle_origin, GammaChoice, OriginCalibration};
pub use model::{
    center_components, pair_difference, sufficient_statistic, Builtin, Component, Permutation, StatisticSpec,
    ThetaVector,
};
pub use oracle::{exact_log_partition, exact_mle, Enumeration, ExactModel};
pub use pseudolikelihood::{solve_ple, SolveOptions, SolveReport};
pub use sampler::{sample, SamplerConfig, SamplerMethod};
pub use variance::{confidence_interval, sandwich_estimate, ConfidenceInterval};
