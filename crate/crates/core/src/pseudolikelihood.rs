//! Log pseudo-likelihood over all `n(n-1)/2` index pairs and its root.
//!
//! For a pair `i < j` with `s = θ·y_π(i,j)` the conditional probability of
//! the observed assignment is `e^s / (1 + e^s)`. Summing over pairs gives
//!
//! * `-log PL = Σ log(1 + e^{-s})`
//! * score `L_n = ∇ log PL = Σ y / (1 + e^s)`
//! * Hessian of `-log PL`: `H = Σ y yᵀ e^s / (1 + e^s)^2`
//!
//! `H` is returned unscaled; `n^{-2} H` is the plug-in `Â`.
//!
//! Pair sums are reduced row by row: each row's partial sum is computed
//! independently and the rows are added in index order, so results do not
//! depend on the rayon thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PermexpError, Result};
use crate::model::{node, Permutation, StatisticSpec, ThetaVector};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
const MAX_BRACKET_EXPONENT: i32 = 30;
const MAX_HALVINGS: usize = 40;

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Returns `(1/(1+e^s), e^s/(1+e^s)^2)` from a single exponential.
#[inline]
pub(crate) fn logistic_weights(s: f64) -> (f64, f64) {
    let e = (-s.abs()).exp();
    let denom = 1.0 + e;
    let upper = if s >= 0.0 { e / denom } else { 1.0 / denom };
    (upper, e / (denom * denom))
}

/// Cached per-item quantities for pair evaluations on a fixed `π`.
pub struct PLObjectiveState<'a> {
    spec: &'a StatisticSpec,
    n: usize,
    x: Vec<f64>,
    u: Vec<f64>,
    // f(x_i, u_i), row-major n x L
    diag: Vec<f64>,
    evaluations: AtomicUsize,
}

impl<'a> PLObjectiveState<'a> {
    pub fn new(spec: &'a StatisticSpec, pi: &Permutation) -> Self {
        let n = pi.len();
        let dim = spec.dimension();
        let x: Vec<f64> = (0..n).map(|i| node(i, n)).collect();
        let u: Vec<f64> = (0..n).map(|i| node(pi.image(i), n)).collect();
        let mut diag = vec![0.0; n * dim];
        for i in 0..n {
            spec.eval_into(x[i], u[i], &mut diag[i * dim..(i + 1) * dim]);
        }
        Self {
            spec,
            n,
            x,
            u,
            diag,
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    /// Number of full pair sweeps performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// `y_π(i, j)`, bitwise equal to [`crate::model::pair_difference`].
    #[inline]
    pub fn pair_y(&self, i: usize, j: usize, out: &mut [f64]) {
        let dim = out.len();
        let (xi, xj, ui, uj) = (self.x[i], self.x[j], self.u[i], self.u[j]);
        for (r, c) in self.spec.components().iter().enumerate() {
            let a = self.diag[i * dim + r];
            let b = self.diag[j * dim + r];
            out[r] = (a + b) - (c.eval(xi, uj) + c.eval(xj, ui));
        }
    }

    /// Sum over pairs `i < j` of `visit(y, s)` contributions, reduced per
    /// row in a fixed order. `acc_len` is the accumulator size.
    pub(crate) fn pair_reduce<F>(&self, theta: &[f64], acc_len: usize, upper_only: bool, visit: F) -> Vec<Vec<f64>>
    where
        F: Fn(usize, usize, &[f64], f64, &mut [f64]) + Sync,
    {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let dim = self.dimension();
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; acc_len];
                let mut y = vec![0.0; dim];
                let start = if upper_only { i + 1 } else { 0 };
                for j in start..self.n {
                    if j == i {
                        continue;
                    }
                    self.pair_y(i, j, &mut y);
                    let s: f64 = y.iter().zip(theta).map(|(a, b)| a * b).sum();
                    visit(i, j, &y, s, &mut acc);
                }
                acc
            })
            .collect()
    }

    /// `-log PL_n(π, θ)`.
    pub fn neg_log(&self, theta: &[f64]) -> f64 {
        let rows = self.pair_reduce(theta, 1, true, |_, _, _, s, acc| {
            acc[0] += softplus(-s);
        });
        rows.iter().map(|r| r[0]).sum()
    }

    /// Score `L_n(π, θ)` and the unscaled Hessian of `-log PL`.
    pub fn score_and_hessian(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (_, score, hess) = self.evaluate(theta);
        (score, hess)
    }

    /// `-log PL`, score and Hessian from one pass, sharing each exponential.
    pub fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let dim = self.dimension();
        let rows = self.pair_reduce(theta, 1 + dim + dim * dim, true, |_, _, y, s, acc| {
            let e = (-s.abs()).exp();
            let denom = 1.0 + e;
            let w1 = if s >= 0.0 { e / denom } else { 1.0 / denom };
            let w2 = e / (denom * denom);
            acc[0] += (-s).max(0.0) + e.ln_1p();
            for p in 0..dim {
                acc[1 + p] += w1 * y[p];
                let wp = w2 * y[p];
                for q in p..dim {
                    acc[1 + dim + p * dim + q] += wp * y[q];
                }
            }
        });
        let mut total = vec![0.0; 1 + dim + dim * dim];
        for r in &rows {
            for (t, v) in total.iter_mut().zip(r) {
                *t += v;
            }
        }
        let score = total[1..1 + dim].to_vec();
        let mut hess = DMatrix::zeros(dim, dim);
        for p in 0..dim {
            for q in p..dim {
                let v = total[1 + dim + p * dim + q];
                hess[(p, q)] = v;
                hess[(q, p)] = v;
            }
        }
        (total[0], score, hess)
    }

    pub fn score(&self, theta: &[f64]) -> Vec<f64> {
        let dim = self.dimension();
        let rows = self.pair_reduce(theta, dim, true, |_, _, y, s, acc| {
            let (w1, _) = logistic_weights(s);
            for p in 0..dim {
                acc[p] += w1 * y[p];
            }
        });
        let mut total = vec![0.0; dim];
        for r in &rows {
            for (t, v) in total.iter_mut().zip(r) {
                *t += v;
            }
        }
        total
    }

    /// True when `θ ≠ 0` and no pair has `θᵀy < 0`. A root satisfies
    /// `Σ s σ(-s) = θᵀL_n = 0` with `s = θᵀy`, which needs a negative `s`;
    /// without one the objective keeps falling along the ray through `θ`.
    fn separated_by(&self, theta: &[f64]) -> bool {
        if theta.iter().all(|&t| t == 0.0) {
            return false;
        }
        let rows = self.pair_reduce(theta, 1, true, |_, _, _, s, acc| {
            if s < 0.0 {
                acc[0] += 1.0;
            }
        });
        rows.iter().all(|r| r[0] == 0.0)
    }

    /// Unweighted Gram `Σ y yᵀ` over pairs.
    fn pair_gram(&self) -> DMatrix<f64> {
        let dim = self.dimension();
        let zero = vec![0.0; dim];
        let rows = self.pair_reduce(&zero, dim * dim, true, |_, _, y, _, acc| {
            for p in 0..dim {
                for q in p..dim {
                    acc[p * dim + q] += y[p] * y[q];
                }
            }
        });
        let mut g = DMatrix::zeros(dim, dim);
        for r in &rows {
            for p in 0..dim {
                for q in p..dim {
                    g[(p, q)] += r[p * dim + q];
                }
            }
        }
        for p in 0..dim {
            for q in 0..p {
                g[(p, q)] = g[(q, p)];
            }
        }
        g
    }
}

/// `L_n(π, θ) = Σ_{i<j} y_π(i,j) / (1 + e^{θ·y_π(i,j)})`.
pub fn pl_gradient(spec: &StatisticSpec, pi: &Permutation, theta: &ThetaVector) -> Result<Vec<f64>> {
    theta.check_dimension(spec)?;
    Ok(PLObjectiveState::new(spec, pi).score(theta))
}

/// `-log PL_n(π, θ)`; convex in `θ`.
pub fn pl_neg_log(spec: &StatisticSpec, pi: &Permutation, theta: &ThetaVector) -> Result<f64> {
    theta.check_dimension(spec)?;
    Ok(PLObjectiveState::new(spec, pi).neg_log(theta))
}

/// Unscaled Hessian of `-log PL_n` (multiply by `n^{-2}` for `Â`).
pub fn pl_hessian(spec: &StatisticSpec, pi: &Permutation, theta: &ThetaVector) -> Result<DMatrix<f64>> {
    theta.check_dimension(spec)?;
    Ok(PLObjectiveState::new(spec, pi).score_and_hessian(theta).1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Newton,
    Bisection,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub root: Vec<f64>,
    pub iterations: usize,
    /// `‖n^{-3/2} L_n(π, root)‖₂`.
    pub gradient_norm: f64,
    pub converged: bool,
    pub hessian_condition: f64,
    pub method: SolveMethod,
}

impl SolveReport {
    pub fn theta(&self) -> ThetaVector {
        ThetaVector::new(self.root.clone()).expect("solver roots are finite")
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub theta_init: Option<ThetaVector>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            theta_init: None,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn condition_number(h: &DMatrix<f64>) -> f64 {
    let eig = h.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `L_n(π, θ) = 0` by damped Newton on `-log PL`, falling back to
/// bracketing bisection for scalar `θ` when Newton stalls.
pub fn solve_ple(spec: &StatisticSpec, pi: &Permutation, options: &SolveOptions) -> Result<SolveReport> {
    let dim = spec.dimension();
    let state = PLObjectiveState::new(spec, pi);
    let n = pi.len() as f64;
    let scale = n.powf(-1.5);
    let mut theta = match &options.theta_init {
        Some(t) => {
            t.check_dimension(spec)?;
            t.as_slice().to_vec()
        }
        None => vec![0.0; dim],
    };

    let (mut value, mut score, mut hess) = state.evaluate(&theta);
    let floor = 1e-12 * n * n;
    if hess.clone().symmetric_eigenvalues().min() <= floor
        && state.pair_gram().symmetric_eigenvalues().min() <= floor
    {
        return Err(PermexpError::Degenerate);
    }

    let mut iterations = 0;
    let mut escaped = false;
    while iterations < options.max_iterations {
        let gradient_norm = norm(&score) * scale;
        if gradient_norm <= options.tolerance {
            // A vanishing score with a vanishing curvature means the iterate
            // ran off towards infinity, not that it found a root.
            if hess.clone().symmetric_eigenvalues().min() <= floor || state.separated_by(&theta) {
                escaped = true;
                break;
            }
            return Ok(SolveReport {
                root: theta,
                iterations,
                gradient_norm,
                converged: true,
                hessian_condition: condition_number(&hess),
                method: SolveMethod::Newton,
            });
        }
        iterations += 1;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&DVector::from_column_slice(&score)),
            None => break,
        };
        // The objective is a sum of O(n²) terms; near the root its rounding
        // noise swamps the true decrease, so allow that much slack.
        let slack = 1e-12 * value.abs();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if trial.iter().all(|v| v.is_finite()) {
                let (v, g, h) = state.evaluate(&trial);
                if v <= value + slack {
                    accepted = Some((trial, v, g, h));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((next, v, g, h)) if next != theta => {
                theta = next;
                value = v;
                score = g;
                hess = h;
            }
            _ => break,
        }
    }

    if dim == 1 {
        return bisect_scalar(&state, options.tolerance, iterations);
    }
    if escaped {
        return Err(PermexpError::NoBracket);
    }
    let gradient_norm = norm(&score) * scale;
    Ok(SolveReport {
        root: theta,
        iterations,
        gradient_norm,
        converged: gradient_norm <= options.tolerance,
        hessian_condition: condition_number(&hess),
        method: SolveMethod::Newton,
    })
}

fn bisect_scalar(state: &PLObjectiveState<'_>, tolerance: f64, newton_iterations: usize) -> Result<SolveReport> {
    let scale = (state.n() as f64).powf(-1.5);
    let psi = |t: f64| state.score(&[t])[0];

    // Strict signs only: a score that underflowed to zero far out is not a root.
    let mut bracket = None;
    for k in 0..=MAX_BRACKET_EXPONENT {
        let r = 2f64.powi(k);
        if psi(-r) > 0.0 && psi(r) < 0.0 {
            bracket = Some((-r, r));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or(PermexpError::NoBracket)?;
    let mut iterations = newton_iterations;
    let mut mid = 0.5 * (lo + hi);
    let mut value = psi(mid);
    while value.abs() * scale > tolerance {
        iterations += 1;
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        let next = 0.5 * (lo + hi);
        if next == lo || next == hi {
            break;
        }
        mid = next;
        value = psi(mid);
    }
    let (_, hess) = state.score_and_hessian(&[mid]);
    Ok(SolveReport {
        root: vec![mid],
        iterations,
        gradient_norm: value.abs() * scale,
        converged: value.abs() * scale <= tolerance,
        hessian_condition: condition_number(&hess),
        method: SolveMethod::Bisection,
    })
}
