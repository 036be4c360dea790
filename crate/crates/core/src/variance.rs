//! Plug-in sandwich covariance for the pseudo-likelihood estimator and the
//! resulting normal-theory intervals for `dᵀθ`.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PermexpError, Result};
use crate::model::{node_mean_square, Permutation, StatisticSpec, ThetaVector};
use crate::pseudolikelihood::{logistic_weights, solve_ple, PLObjectiveState, SolveOptions, SolveReport};

/// `Â` condition numbers above this are refused.
pub const MAX_A_HAT_CONDITION: f64 = 1e12;

/// Matrices smaller than this times the squared scale of `f` count as zero.
pub(crate) const NEGLIGIBLE_RATIO: f64 = 1e-20;

#[derive(Clone, Debug)]
pub struct SandwichEstimate {
    pub sigma_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    /// `Â⁻¹ Σ̂ Â⁻¹`.
    pub sandwich: DMatrix<f64>,
    pub n: usize,
}

/// `Â(θ) = n^{-2} Σ_{i<j} y yᵀ e^{θ·y} / (1 + e^{θ·y})²`.
pub fn a_hat(spec: &StatisticSpec, pi: &Permutation, theta: &ThetaVector) -> Result<DMatrix<f64>> {
    theta.check_dimension(spec)?;
    let n = pi.len() as f64;
    let (_, h) = PLObjectiveState::new(spec, pi).score_and_hessian(theta);
    Ok(h / (n * n))
}

/// `Σ̂(θ)`: sum over ordered pairs of distinct index pairs sharing exactly
/// one index, scaled by `n^{-3}`.
///
/// With `t(a, b) = y(a, b) / (1 + e^{θ·y(a, b)})` and `S_a = Σ_{b≠a} t(a, b)`
/// the sum regroups to `Σ_a [S_a S_aᵀ - Σ_{b≠a} t(a,b) t(a,b)ᵀ]`, which is
/// `O(n² L²)` instead of `O(n³ L²)`.
pub fn sigma_hat(spec: &StatisticSpec, pi: &Permutation, theta: &ThetaVector) -> Result<DMatrix<f64>> {
    theta.check_dimension(spec)?;
    let dim = spec.dimension();
    let n = pi.len();
    let state = PLObjectiveState::new(spec, pi);
    // per row: S_a (dim) then the upper triangle of Σ_b t tᵀ (dim*dim)
    let rows = state.pair_reduce(theta, dim + dim * dim, false, |_, _, y, s, acc| {
        let (w, _) = logistic_weights(s);
        for p in 0..dim {
            let tp = w * y[p];
            acc[p] += tp;
            for q in p..dim {
                acc[dim + p * dim + q] += tp * (w * y[q]);
            }
        }
    });
    let mut sigma = DMatrix::zeros(dim, dim);
    for row in &rows {
        for p in 0..dim {
            for q in p..dim {
                sigma[(p, q)] += row[p] * row[q] - row[dim + p * dim + q];
            }
        }
    }
    let scale = (n as f64).powi(3);
    for p in 0..dim {
        for q in p..dim {
            let v = sigma[(p, q)] / scale;
            sigma[(p, q)] = v;
            sigma[(q, p)] = v;
        }
    }
    Ok(sigma)
}

/// Inverse of a symmetric positive definite matrix via its eigendecomposition.
/// Eigenvalues at or below `1e-12 ‖A‖` or a condition number above
/// [`MAX_A_HAT_CONDITION`] are refused.
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigen();
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = eig.eigenvalues.min();
    let condition = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    if largest == 0.0 || smallest <= 1e-12 * largest || condition > MAX_A_HAT_CONDITION {
        return Err(PermexpError::SingularAHat { condition });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn sandwich_estimate(spec: &StatisticSpec, pi: &Permutation, theta: &ThetaVector) -> Result<SandwichEstimate> {
    let a = a_hat(spec, pi, theta)?;
    let sigma = sigma_hat(spec, pi, theta)?;
    // rounding noise from a separable statistic is not curvature
    if a.norm() <= NEGLIGIBLE_RATIO * node_mean_square(spec, pi.len()) {
        return Err(PermexpError::SingularAHat { condition: f64::INFINITY });
    }
    let a_inv = inverse_spd(&a)?;
    let sandwich = symmetrize(&a_inv * &sigma * &a_inv);
    Ok(SandwichEstimate {
        sigma_hat: sigma,
        a_hat: a,
        sandwich,
        n: pi.len(),
    })
}

/// Upper `α/2` standard-normal quantile `z_{α/2}`.
pub fn normal_upper_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PermexpError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub half_width: f64,
    pub alpha: f64,
    pub theta_hat: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub sandwich: DMatrix<f64>,
    pub solve: SolveReport,
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Interval `dᵀθ̂ ± z_{α/2} n^{-1/2} √(dᵀ Â⁻¹Σ̂Â⁻¹ d)` evaluated at the PLE.
pub fn confidence_interval(
    spec: &StatisticSpec,
    pi: &Permutation,
    d: &[f64],
    alpha: f64,
    options: &SolveOptions,
) -> Result<ConfidenceInterval> {
    if d.len() != spec.dimension() {
        return Err(PermexpError::DimensionMismatch {
            expected: spec.dimension(),
            got: d.len(),
        });
    }
    let z = normal_upper_quantile(alpha)?;
    let solve = solve_ple(spec, pi, options)?;
    if !solve.converged {
        return Err(PermexpError::SolverFailed(format!(
            "pseudo-likelihood solve did not converge (scaled gradient {:.3e})",
            solve.gradient_norm
        )));
    }
    let theta_hat = solve.theta();
    let est = sandwich_estimate(spec, pi, &theta_hat)?;
    interval_from_parts(&theta_hat, &est.sandwich, d, z, pi.len(), alpha, solve)
}

pub(crate) fn interval_from_parts(
    theta_hat: &ThetaVector,
    sandwich: &DMatrix<f64>,
    d: &[f64],
    z: f64,
    n: usize,
    alpha: f64,
    solve: SolveReport,
) -> Result<ConfidenceInterval> {
    let dim = d.len();
    let estimate: f64 = d.iter().zip(theta_hat.iter()).map(|(a, b)| a * b).sum();
    let mut quad = 0.0;
    for p in 0..dim {
        for q in 0..dim {
            quad += d[p] * sandwich[(p, q)] * d[q];
        }
    }
    // Σ̂ is a difference of sums and can be indefinite for small n
    if quad < 0.0 {
        return Err(PermexpError::SingularMatrix(format!(
            "dᵀ Â⁻¹Σ̂Â⁻¹ d = {quad:.3e} is negative; Σ̂ is indefinite for this sample"
        )));
    }
    let half_width = z * (quad / n as f64).sqrt();
    Ok(ConfidenceInterval {
        estimate,
        lo: estimate - half_width,
        hi: estimate + half_width,
        half_width,
        alpha,
        theta_hat: theta_hat.as_slice().to_vec(),
        sandwich: sandwich.clone(),
        solve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pair_difference, Builtin, Component};
    use crate::sampler::{replication_rng, uniform_permutation};

    #[test]
    fn quantiles() {
        assert!((normal_upper_quantile(0.05).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!((normal_upper_quantile(0.3173105078629141).unwrap() - 1.0).abs() < 1e-9);
        assert!(normal_upper_quantile(0.999999).unwrap() < 1e-5);
        assert!(normal_upper_quantile(0.0).is_err());
        assert!(normal_upper_quantile(1.0).is_err());
    }

    #[test]
    fn a_hat_at_zero_is_quarter_gram_over_n2() {
        let spec = StatisticSpec::builtin(Builtin::NegAbsDiff);
        let pi = uniform_permutation(9, &mut replication_rng(4, 0));
        let a = a_hat(&spec, &pi, &ThetaVector::scalar(0.0)).unwrap();
        let mut expect = 0.0;
        for i in 0..9 {
            for j in i + 1..9 {
                let y = pair_difference(&spec, &pi, i, j).unwrap()[0];
                expect += y * y / 4.0;
            }
        }
        assert!((a[(0, 0)] - expect / 81.0).abs() < 1e-15);
    }

    #[test]
    fn flat_statistic_gives_zero_matrices_and_singular_a() {
        let spec = StatisticSpec::new(vec![Component::custom(|x, y| x.exp() - y)]).unwrap();
        let pi = uniform_permutation(10, &mut replication_rng(1, 0));
        let t = ThetaVector::scalar(1.3);
        assert!(a_hat(&spec, &pi, &t).unwrap()[(0, 0)].abs() < 1e-18);
        assert!(sigma_hat(&spec, &pi, &t).unwrap()[(0, 0)].abs() < 1e-18);
        assert!(matches!(
            sandwich_estimate(&spec, &pi, &t),
            Err(PermexpError::SingularAHat { .. })
        ));
    }

    #[test]
    fn estimates_are_symmetric() {
        let spec = StatisticSpec::from_names("xy,neg_abs_diff,neg_sq_diff").unwrap();
        let pi = uniform_permutation(25, &mut replication_rng(2, 0));
        let t = ThetaVector::new(vec![0.5, -1.0, 0.3]).unwrap();
        let s = sigma_hat(&spec, &pi, &t).unwrap();
        let a = a_hat(&spec, &pi, &t).unwrap();
        assert_eq!(s, s.transpose());
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn interval_collapses_as_alpha_tends_to_one() {
        let spec = StatisticSpec::builtin(Builtin::Xy);
        let pi = uniform_permutation(80, &mut replication_rng(12, 0));
        let ci = confidence_interval(&spec, &pi, &[1.0], 1.0 - 1e-12, &SolveOptions::default()).unwrap();
        assert!(ci.hi - ci.lo < 1e-9);
        assert!((ci.estimate - ci.theta_hat[0]).abs() < 1e-15);
    }

    #[test]
    fn interval_rejects_wrong_direction_length() {
        let spec = StatisticSpec::builtin(Builtin::Xy);
        let pi = uniform_permutation(10, &mut replication_rng(12, 0));
        assert!(confidence_interval(&spec, &pi, &[1.0, 0.0], 0.05, &SolveOptions::default()).is_err());
    }
}
