//! Exact computations by enumerating all of `S_n`, for `n <= 8`.
//!
//! These are the ground truth the rest of the crate is tested against:
//! normalizing constant, probabilities, moments of `T`, pair marginals and
//! the exact MLE.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PermexpError, Result};
use crate::model::{dot, pair_difference, sufficient_statistic, Permutation, StatisticSpec, ThetaVector};
use crate::variance::serialize_matrix;

pub const MAX_ORACLE_N: usize = 8;

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_ORACLE_N {
        return Err(PermexpError::NTooLarge { n, max: MAX_ORACLE_N });
    }
    Ok(())
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Rearranges `v` into the next permutation in lexicographic order.
fn next_lexicographic(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot has a successor");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Position of `π` in lexicographic order (Lehmer code).
pub fn lexicographic_rank(pi: &Permutation) -> usize {
    let n = pi.len();
    let mut rank = 0;
    let mut used = vec![false; n];
    for i in 0..n {
        let v = pi.image(i);
        let smaller = (0..v).filter(|&u| !used[u]).count();
        rank += smaller * factorial(n - 1 - i);
        used[v] = true;
    }
    rank
}

/// All permutations of `n` items in lexicographic order with their
/// sufficient statistics. Independent of `θ`.
#[derive(Debug)]
pub struct Enumeration {
    n: usize,
    dim: usize,
    perms: Vec<Permutation>,
    /// `n! x L`, row-major.
    stats: Vec<f64>,
}

impl Enumeration {
    pub fn new(spec: &StatisticSpec, n: usize) -> Result<Self> {
        check_n(n)?;
        let dim = spec.dimension();
        // blocks by first image, each in lexicographic order
        let blocks: Vec<(Vec<Permutation>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|first| {
                let mut rest: Vec<usize> = (0..n).filter(|&v| v != first).collect();
                let mut perms = Vec::with_capacity(factorial(n - 1));
                let mut stats = Vec::with_capacity(factorial(n - 1) * dim);
                loop {
                    let mut images = Vec::with_capacity(n);
                    images.push(first);
                    images.extend_from_slice(&rest);
                    let p = Permutation::from_images_unchecked(images);
                    stats.extend(sufficient_statistic(spec, &p));
                    perms.push(p);
                    if !next_lexicographic(&mut rest) {
                        break;
                    }
                }
                (perms, stats)
            })
            .collect();
        let mut perms = Vec::with_capacity(factorial(n));
        let mut stats = Vec::with_capacity(factorial(n) * dim);
        for (p, s) in blocks {
            perms.extend(p);
            stats.extend(s);
        }
        Ok(Self { n, dim, perms, stats })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn statistic(&self, index: usize) -> &[f64] {
        &self.stats[index * self.dim..(index + 1) * self.dim]
    }

    fn log_weights(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|k| dot(theta, self.statistic(k))).collect()
    }

    /// `Z_n(θ) = log Σ_π exp(θ·T(π))`.
    pub fn log_partition(&self, theta: &[f64]) -> f64 {
        log_sum_exp(&self.log_weights(theta))
    }

    /// `(Z_n(θ), E_θ T, Var_θ T)`.
    pub fn moments(&self, theta: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let lw = self.log_weights(theta);
        let log_z = log_sum_exp(&lw);
        let probs: Vec<f64> = lw.iter().map(|w| (w - log_z).exp()).collect();
        let dim = self.dim;
        let mut mean = vec![0.0; dim];
        for (k, p) in probs.iter().enumerate() {
            for (m, t) in mean.iter_mut().zip(self.statistic(k)) {
                *m += p * t;
            }
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (k, p) in probs.iter().enumerate() {
            let t = self.statistic(k);
            for a in 0..dim {
                for b in a..dim {
                    cov[(a, b)] += p * (t[a] - mean[a]) * (t[b] - mean[b]);
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                cov[(a, b)] = cov[(b, a)];
            }
        }
        (log_z, mean, cov)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let mx = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + values.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// `P_{n,θ}` tabulated over all of `S_n`.
#[derive(Clone, Debug)]
pub struct ExactModel {
    enumeration: Arc<Enumeration>,
    theta: ThetaVector,
    log_z: f64,
    probs: Vec<f64>,
}

impl ExactModel {
    pub fn new(spec: &StatisticSpec, theta: &ThetaVector, n: usize) -> Result<Self> {
        theta.check_dimension(spec)?;
        let enumeration = Arc::new(Enumeration::new(spec, n)?);
        Ok(Self::from_enumeration(enumeration, theta.clone()))
    }

    pub fn from_enumeration(enumeration: Arc<Enumeration>, theta: ThetaVector) -> Self {
        let lw = enumeration.log_weights(&theta);
        let log_z = log_sum_exp(&lw);
        let probs = lw.iter().map(|w| (w - log_z).exp()).collect();
        Self {
            enumeration,
            theta,
            log_z,
            probs,
        }
    }

    pub fn at(&self, theta: ThetaVector) -> Self {
        Self::from_enumeration(self.enumeration.clone(), theta)
    }

    pub fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    pub fn n(&self) -> usize {
        self.enumeration.n
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.theta
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// Probabilities in lexicographic order of the permutations.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, pi: &Permutation) -> f64 {
        self.probs[lexicographic_rank(pi)]
    }

    pub fn mean_statistic(&self) -> Vec<f64> {
        self.enumeration.moments(&self.theta).1
    }

    pub fn covariance_statistic(&self) -> DMatrix<f64> {
        self.enumeration.moments(&self.theta).2
    }
}

/// `Z_n(θ)` by log-sum-exp over `S_n`.
pub fn exact_log_partition(spec: &StatisticSpec, theta: &ThetaVector, n: usize) -> Result<f64> {
    theta.check_dimension(spec)?;
    Ok(Enumeration::new(spec, n)?.log_partition(theta))
}

/// Solves `∇Z_n(θ) = T(π)` by Newton's method on the exact, strictly
/// convex `Z_n(θ) - θ·T(π)`.
pub fn exact_mle(spec: &StatisticSpec, pi: &Permutation) -> Result<ThetaVector> {
    let enumeration = Enumeration::new(spec, pi.len())?;
    exact_mle_with(&enumeration, spec, pi)
}

pub fn exact_mle_with(enumeration: &Enumeration, spec: &StatisticSpec, pi: &Permutation) -> Result<ThetaVector> {
    let dim = spec.dimension();
    let target = sufficient_statistic(spec, pi);
    let scale = target.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;

    // T(π) maximizing d·T in any coordinate direction means no finite root
    for r in 0..dim {
        let (lo, hi) = (0..enumeration.len())
            .map(|k| enumeration.statistic(k)[r])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo <= tol {
            return Err(PermexpError::SingularMatrix(format!("component {r} of T is constant on S_n")));
        }
        if target[r] >= hi - tol || target[r] <= lo + tol {
            return Err(PermexpError::Boundary);
        }
    }

    let objective = |theta: &[f64]| enumeration.log_partition(theta) - dot(theta, &target);
    let mut theta = vec![0.0; dim];
    for _ in 0..200 {
        let (_, mean, cov) = enumeration.moments(&theta);
        let grad: Vec<f64> = mean.iter().zip(&target).map(|(m, t)| m - t).collect();
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() <= tol {
            return ThetaVector::new(theta);
        }
        let step = cov
            .cholesky()
            .ok_or_else(|| PermexpError::SingularMatrix("Var_θ(T) is singular".into()))?
            .solve(&DVector::from_column_slice(&grad));
        let current = objective(&theta);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if objective(&trial) <= current {
                moved = trial != theta;
                theta = trial;
                break;
            }
            t *= 0.5;
        }
        if theta.iter().any(|v| v.abs() > 1e4) {
            return Err(PermexpError::Boundary);
        }
        if !moved {
            break;
        }
    }
    let (_, mean, _) = enumeration.moments(&theta);
    let resid = mean.iter().zip(&target).map(|(m, t)| (m - t).powi(2)).sum::<f64>().sqrt();
    if resid <= 1e-10 * scale {
        ThetaVector::new(theta)
    } else {
        Err(PermexpError::Boundary)
    }
}

/// `P(π(i) = a, π(j) = b)` for all `i ≠ j`.
#[derive(Clone, Debug, Serialize)]
pub struct PairMarginals {
    pub n: usize,
    /// Flattened `[i][j][a][b]`.
    pub table: Vec<f64>,
    /// `[i][a]`.
    pub single: Vec<f64>,
}

impl PairMarginals {
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        let n = self.n;
        self.table[((i * n + j) * n + a) * n + b]
    }

    pub fn single(&self, i: usize, a: usize) -> f64 {
        self.single[i * self.n + a]
    }
}

pub fn exact_pair_marginals(spec: &StatisticSpec, theta: &ThetaVector, n: usize) -> Result<PairMarginals> {
    let model = ExactModel::new(spec, theta, n)?;
    Ok(pair_marginals_of(&model))
}

pub fn pair_marginals_of(model: &ExactModel) -> PairMarginals {
    let n = model.n();
    let mut table = vec![0.0; n * n * n * n];
    let mut single = vec![0.0; n * n];
    for (p, prob) in model.enumeration.perms.iter().zip(&model.probs) {
        for i in 0..n {
            single[i * n + p.image(i)] += prob;
            for j in 0..n {
                if i != j {
                    table[((i * n + j) * n + p.image(i)) * n + p.image(j)] += prob;
                }
            }
        }
    }
    PairMarginals { n, table, single }
}

/// Largest `|E[C_ij(π, e_r) | π(ℓ), ℓ ≠ i, j]|` over pairs, basis
/// directions and conditioning configurations, where
/// `C_ij = y_π(i,j) / (1 + e^{θ·y_π(i,j)})`.
pub fn verify_conditional_mean_zero(spec: &StatisticSpec, theta: &ThetaVector, n: usize) -> Result<f64> {
    let model = ExactModel::new(spec, theta, n)?;
    let dim = spec.dimension();
    let mut worst = 0.0f64;
    for (k, sigma) in model.enumeration.perms.iter().enumerate() {
        for i in 0..n {
            for j in i + 1..n {
                // visit each configuration once, from its completion with π(i) < π(j)
                if sigma.image(i) > sigma.image(j) {
                    continue;
                }
                let other = sigma.transposed(i, j);
                let (p1, p2) = (model.probs[k], model.probability(&other));
                let c = |perm: &Permutation| -> Result<Vec<f64>> {
                    let y = pair_difference(spec, perm, i, j)?;
                    let s = dot(theta, &y);
                    let w = crate::pseudolikelihood::logistic_weights(s).0;
                    Ok(y.into_iter().map(|v| v * w).collect())
                };
                let (c1, c2) = (c(sigma)?, c(&other)?);
                for r in 0..dim {
                    let mean = (p1 * c1[r] + p2 * c2[r]) / (p1 + p2);
                    worst = worst.max(mean.abs());
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub n: usize,
    pub theta: Vec<f64>,
    pub log_z: f64,
    pub mean_t: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub var_t: DMatrix<f64>,
    pub pair_marginals: PairMarginals,
}

pub fn oracle_summary(spec: &StatisticSpec, theta: &ThetaVector, n: usize) -> Result<OracleSummary> {
    let model = ExactModel::new(spec, theta, n)?;
    let (log_z, mean_t, var_t) = model.enumeration.moments(theta);
    Ok(OracleSummary {
        n,
        theta: theta.as_slice().to_vec(),
        log_z,
        mean_t,
        var_t,
        pair_marginals: pair_marginals_of(&model),
    })
}
