//! The exact uniform-permutation moments of `T` and the linearized MLE at
//! the origin.
//!
//! Near `θ = 0`, `∇Z_n(θ) ≈ ∇Z_n(0) + Var_0(T) θ`, so solving
//! `T(π) = ∇Z_n(θ)` gives `θ̂ ≈ Γ_n⁻¹ (T(π) - ∇Z_n(0)) / n` with
//! `Γ_n = Var_0(T) / n`. `Var_0(T)` is exact via Hoeffding's formula
//! `Var_0(T)_pq = (1/(n-1)) Σ_{i,k} c_p(i,k) c_q(i,k)`, where `c` is the
//! doubly-centered table `f(i/n, k/n)`.
//!
//! The surrogate is only meaningful within `O(n^{-1/2})` of the origin.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PermexpError, Result};
use crate::model::{gram_matrix, node, node_mean_square, sufficient_statistic, Permutation, StatisticSpec, ThetaVector};
use crate::variance::{inverse_spd, NEGLIGIBLE_RATIO};

/// Which `Γ` divides the centered statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    /// Exact `Var_0(T)/n`.
    #[default]
    Hoeffding,
    /// `∫ f fᵀ` of the uncentered statistic (`1/9` for `xy`).
    Uncentered,
}

/// Node table `f_r(i/n, k/n)`, component-major.
fn node_table(spec: &StatisticSpec, n: usize) -> Vec<f64> {
    let dim = spec.dimension();
    let mut table = vec![0.0; dim * n * n];
    let mut buf = vec![0.0; dim];
    for i in 0..n {
        for k in 0..n {
            spec.eval_into(node(i, n), node(k, n), &mut buf);
            for r in 0..dim {
                table[r * n * n + i * n + k] = buf[r];
            }
        }
    }
    table
}

/// `∇Z_n(0) = E_0 T`, with `E_0 T_r = (1/n) Σ_i Σ_k f_r(i/n, k/n)`.
pub fn grad_z0(spec: &StatisticSpec, n: usize) -> Vec<f64> {
    let dim = spec.dimension();
    let table = node_table(spec, n);
    (0..dim)
        .map(|r| table[r * n * n..(r + 1) * n * n].iter().sum::<f64>() / n as f64)
        .collect()
}

/// Exact `Var_0(T)` under the uniform distribution on `S_n`.
pub fn hoeffding_variance(spec: &StatisticSpec, n: usize) -> DMatrix<f64> {
    let dim = spec.dimension();
    let mut var = DMatrix::zeros(dim, dim);
    if n < 2 {
        return var;
    }
    let mut table = node_table(spec, n);
    for r in 0..dim {
        let c = &mut table[r * n * n..(r + 1) * n * n];
        let mut row = vec![0.0; n];
        let mut col = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                row[i] += c[i * n + k];
                col[k] += c[i * n + k];
            }
        }
        let grand = row.iter().sum::<f64>() / (n * n) as f64;
        for i in 0..n {
            for k in 0..n {
                c[i * n + k] += grand - row[i] / n as f64 - col[k] / n as f64;
            }
        }
    }
    let nn = n * n;
    for p in 0..dim {
        for q in p..dim {
            let s: f64 = (0..nn).map(|x| table[p * nn + x] * table[q * nn + x]).sum();
            let v = s / (n - 1) as f64;
            var[(p, q)] = v;
            var[(q, p)] = v;
        }
    }
    var
}

#[derive(Clone, Debug)]
pub struct OriginCalibration {
    pub n: usize,
    pub grad_z0: Vec<f64>,
    /// `Var_0(T) / n`.
    pub gamma_n: DMatrix<f64>,
    /// The matrix actually used as the divisor.
    pub divisor: DMatrix<f64>,
    divisor_inverse: DMatrix<f64>,
    pub choice: GammaChoice,
}

impl OriginCalibration {
    pub fn new(spec: &StatisticSpec, n: usize, choice: GammaChoice) -> Result<Self> {
        let grad = grad_z0(spec, n);
        let gamma_n = hoeffding_variance(spec, n) / n as f64;
        let divisor = match choice {
            GammaChoice::Hoeffding => gamma_n.clone(),
            GammaChoice::Uncentered => gram_matrix(spec, crate::model::DEFAULT_PROJECTION_RESOLUTION),
        };
        let singular = || PermexpError::SingularMatrix("Γ_n is singular".into());
        if divisor.norm() <= NEGLIGIBLE_RATIO * node_mean_square(spec, n) {
            return Err(singular());
        }
        let divisor_inverse = inverse_spd(&divisor).map_err(|_| singular())?;
        Ok(Self {
            n,
            grad_z0: grad,
            gamma_n,
            divisor,
            divisor_inverse,
            choice,
        })
    }

    /// `Γ⁻¹ (T(π) - ∇Z_n(0)) / n`.
    pub fn estimate(&self, spec: &StatisticSpec, pi: &Permutation) -> Result<ThetaVector> {
        if pi.len() != self.n {
            return Err(PermexpError::DimensionMismatch {
                expected: self.n,
                got: pi.len(),
            });
        }
        let t = sufficient_statistic(spec, pi);
        let centered: Vec<f64> = t.iter().zip(&self.grad_z0).map(|(a, b)| (a - b) / self.n as f64).collect();
        let dim = centered.len();
        let theta = (0..dim)
            .map(|p| (0..dim).map(|q| self.divisor_inverse[(p, q)] * centered[q]).sum())
            .collect();
        ThetaVector::new(theta)
    }
}

/// Linearized MLE at the origin with the exact Hoeffding `Γ_n`.
pub fn approx_mle_origin(spec: &StatisticSpec, pi: &Permutation) -> Result<ThetaVector> {
    OriginCalibration::new(spec, pi.len(), GammaChoice::Hoeffding)?.estimate(spec, pi)
}
