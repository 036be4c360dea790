//! The limiting coupling `μ_θ` and the asymptotic matrices built from it.
//!
//! `μ_θ` maximizes `θᵀμ(f) - D(μ‖u)` over couplings of two uniform
//! marginals on `[0,1]`; its density has the form
//! `ρ(x, y) = exp(θᵀf(x, y) + a(x) + b(y))`. On an `m x m` midpoint grid this
//! is a matrix-scaling problem, solved here by Sinkhorn iterations on the
//! potentials `a`, `b` (log domain, so large `θ` cannot overflow).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PermexpError, Result};
use crate::model::{gram_matrix, StatisticSpec, ThetaVector};
use crate::pseudolikelihood::logistic_weights;
use crate::variance::{inverse_spd, serialize_matrix};

pub const DEFAULT_RESOLUTION: usize = 256;
pub const MIN_RESOLUTION: usize = 4;
pub const DEFAULT_SINKHORN_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_SINKHORN_MAX_ITERATIONS: usize = 100_000;

#[derive(Clone, Debug)]
pub struct SinkhornOptions {
    pub resolution: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            tolerance: DEFAULT_SINKHORN_TOLERANCE,
            max_iterations: DEFAULT_SINKHORN_MAX_ITERATIONS,
        }
    }
}

impl SinkhornOptions {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            ..Default::default()
        }
    }
}

/// Discretized `ρ_θ` at the midpoints of an `m x m` grid.
#[derive(Clone, Debug)]
pub struct CouplingGrid {
    m: usize,
    /// Row-major, `x` indexes rows.
    density: Vec<f64>,
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
    theta: ThetaVector,
    /// Largest deviation of any row or column average from 1.
    pub marginal_error: f64,
    pub iterations: usize,
    /// Row-marginal error before each potential update.
    pub error_trace: Vec<f64>,
}

impl CouplingGrid {
    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    #[inline]
    pub fn density_at(&self, k: usize, l: usize) -> f64 {
        self.density[k * self.m + l]
    }

    /// The potential `a` on the `x` midpoints.
    pub fn row_potential(&self) -> &[f64] {
        &self.row_potential
    }

    /// The potential `b` on the `y` midpoints.
    pub fn col_potential(&self) -> &[f64] {
        &self.col_potential
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.theta
    }

    #[inline]
    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.m as f64
    }

    /// Midpoint value of `ρ` nearest to `(x, y)`.
    pub fn density_near(&self, x: f64, y: f64) -> f64 {
        let idx = |t: f64| ((t * self.m as f64).floor().max(0.0) as usize).min(self.m - 1);
        self.density_at(idx(x), idx(y))
    }

    /// Largest deviation of a discrete row or column average from 1.
    pub fn measure_marginal_error(&self) -> f64 {
        marginal_error(&self.density, self.m)
    }
}

fn marginal_error(density: &[f64], m: usize) -> f64 {
    let mut col = vec![0.0; m];
    let mut worst = 0.0f64;
    for k in 0..m {
        let row = &density[k * m..(k + 1) * m];
        worst = worst.max((row.iter().sum::<f64>() / m as f64 - 1.0).abs());
        for (c, v) in col.iter_mut().zip(row) {
            *c += v;
        }
    }
    for c in col {
        worst = worst.max((c / m as f64 - 1.0).abs());
    }
    worst
}

/// `-log((1/m) Σ_l exp(kernel_l + other_l))`, max-shifted.
#[inline]
fn potential_update(kernel_row: &[f64], other: &[f64]) -> f64 {
    let mx = kernel_row
        .iter()
        .zip(other)
        .map(|(k, o)| k + o)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = kernel_row.iter().zip(other).map(|(k, o)| (k + o - mx).exp()).sum();
    -(mx + (s / kernel_row.len() as f64).ln())
}

/// `θᵀf` on the grid, row-major.
fn log_kernel(spec: &StatisticSpec, theta: &[f64], m: usize) -> Vec<f64> {
    let mut kernel = vec![0.0; m * m];
    kernel.par_chunks_mut(m).enumerate().for_each(|(k, row)| {
        let x = (k as f64 + 0.5) / m as f64;
        for (l, v) in row.iter_mut().enumerate() {
            *v = spec.eval_dot(theta, x, (l as f64 + 0.5) / m as f64);
        }
    });
    kernel
}

/// Alternating row/column scaling of `exp(θᵀf)` to uniform marginals.
pub fn sinkhorn_density(spec: &StatisticSpec, theta: &ThetaVector, options: &SinkhornOptions) -> Result<CouplingGrid> {
    theta.check_dimension(spec)?;
    let m = options.resolution;
    if m < MIN_RESOLUTION {
        return Err(PermexpError::InvalidConfig(format!(
            "grid resolution must be at least {MIN_RESOLUTION}, got {m}"
        )));
    }
    let kernel = log_kernel(spec, theta, m);
    let mut kernel_t = vec![0.0; m * m];
    for k in 0..m {
        for l in 0..m {
            kernel_t[l * m + k] = kernel[k * m + l];
        }
    }

    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let next_a: Vec<f64> = kernel.par_chunks(m).map(|row| potential_update(row, &b)).collect();
        // the row averages of the current iterate are exp(a_k - next_a_k)
        let err = a
            .iter()
            .zip(&next_a)
            .map(|(old, new)| ((old - new).exp() - 1.0).abs())
            .fold(0.0f64, f64::max);
        trace.push(err);
        if iterations > 0 && err <= options.tolerance {
            break;
        }
        if iterations >= options.max_iterations {
            return Err(PermexpError::MaxItersExceeded {
                iterations,
                marginal_error: err,
            });
        }
        a = next_a;
        b = kernel_t.par_chunks(m).map(|col| potential_update(col, &a)).collect();
        iterations += 1;
    }

    // split the free additive constant so that Σa = Σb
    let shift = (b.iter().sum::<f64>() - a.iter().sum::<f64>()) / (2.0 * m as f64);
    a.iter_mut().for_each(|v| *v += shift);
    b.iter_mut().for_each(|v| *v -= shift);

    let mut density = vec![0.0; m * m];
    density.par_chunks_mut(m).enumerate().for_each(|(k, row)| {
        for (l, v) in row.iter_mut().enumerate() {
            *v = (kernel[k * m + l] + a[k] + b[l]).exp();
        }
    });
    let marginal_error = marginal_error(&density, m);
    Ok(CouplingGrid {
        m,
        density,
        row_potential: a,
        col_potential: b,
        theta: theta.clone(),
        marginal_error,
        iterations,
        error_trace: trace,
    })
}

/// `z(θ) = μ_θ(f)` by midpoint quadrature.
pub fn limiting_z_vector(grid: &CouplingGrid, spec: &StatisticSpec) -> Result<Vec<f64>> {
    grid.theta.check_dimension(spec)?;
    let m = grid.m;
    let dim = spec.dimension();
    let mut z = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for k in 0..m {
        for l in 0..m {
            spec.eval_into(grid.midpoint(k), grid.midpoint(l), &mut buf);
            let w = grid.density_at(k, l);
            for (zr, f) in z.iter_mut().zip(&buf) {
                *zr += w * f;
            }
        }
    }
    let cells = (m * m) as f64;
    Ok(z.into_iter().map(|v| v / cells).collect())
}

/// `Z(θ) = θᵀμ_θ(f) - D(μ_θ‖u)` at the Sinkhorn optimum.
pub fn limiting_log_partition(grid: &CouplingGrid, spec: &StatisticSpec) -> Result<f64> {
    let z = limiting_z_vector(grid, spec)?;
    let m = grid.m;
    let entropy: f64 = grid
        .density
        .iter()
        .map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 })
        .sum::<f64>()
        / (m * m) as f64;
    Ok(grid.theta.iter().zip(&z).map(|(t, v)| t * v).sum::<f64>() - entropy)
}

/// `Σ(θ)` and `A(θ)` in one pass over cell pairs.
///
/// `Σ` factors through `s(z₁) = ∫ g(z₁, z₂) / (1 + e^{θ·g}) dμ(z₂)` as
/// `Σ = ∫ s sᵀ dμ(z₁)`; `A = ½ ∫∫ g gᵀ e^{θ·g} / (1 + e^{θ·g})² dμ dμ`.
/// Cost `O(m⁴ L²)`.
pub fn sigma_and_a(grid: &CouplingGrid, spec: &StatisticSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    grid.theta.check_dimension(spec)?;
    let m = grid.m;
    let cells = m * m;
    let dim = spec.dimension();
    let theta = grid.theta.as_slice();
    // component-major f table
    let mut table = vec![0.0; dim * cells];
    let mut buf = vec![0.0; dim];
    for k in 0..m {
        for l in 0..m {
            spec.eval_into(grid.midpoint(k), grid.midpoint(l), &mut buf);
            for r in 0..dim {
                table[r * cells + k * m + l] = buf[r];
            }
        }
    }
    let weight: Vec<f64> = grid.density.iter().map(|r| r / cells as f64).collect();

    let per_cell: Vec<Vec<f64>> = (0..cells)
        .into_par_iter()
        .map(|c1| {
            let (k1, l1) = (c1 / m, c1 % m);
            let mut s = vec![0.0; dim];
            let mut a = vec![0.0; dim * dim];
            let mut g = vec![0.0; dim];
            let f11: Vec<f64> = (0..dim).map(|r| table[r * cells + c1]).collect();
            for k2 in 0..m {
                let f21: Vec<f64> = (0..dim).map(|r| table[r * cells + k2 * m + l1]).collect();
                for l2 in 0..m {
                    let c2 = k2 * m + l2;
                    let mut t = 0.0;
                    for r in 0..dim {
                        let base = r * cells;
                        let v = (f11[r] + table[base + c2]) - (table[base + k1 * m + l2] + f21[r]);
                        g[r] = v;
                        t += theta[r] * v;
                    }
                    let (w_upper, w_var) = logistic_weights(t);
                    let w2 = weight[c2];
                    for p in 0..dim {
                        s[p] += w2 * w_upper * g[p];
                        let gp = w2 * w_var * g[p];
                        for q in p..dim {
                            a[p * dim + q] += gp * g[q];
                        }
                    }
                }
            }
            let w1 = weight[c1];
            let mut out = vec![0.0; 2 * dim * dim];
            for p in 0..dim {
                for q in p..dim {
                    out[p * dim + q] = w1 * s[p] * s[q];
                    out[dim * dim + p * dim + q] = 0.5 * w1 * a[p * dim + q];
                }
            }
            out
        })
        .collect();

    let mut sigma = DMatrix::zeros(dim, dim);
    let mut amat = DMatrix::zeros(dim, dim);
    for cell in &per_cell {
        for p in 0..dim {
            for q in p..dim {
                sigma[(p, q)] += cell[p * dim + q];
                amat[(p, q)] += cell[dim * dim + p * dim + q];
            }
        }
    }
    for p in 0..dim {
        for q in 0..p {
            sigma[(p, q)] = sigma[(q, p)];
            amat[(p, q)] = amat[(q, p)];
        }
    }
    Ok((sigma, amat))
}

pub fn sigma_matrix(grid: &CouplingGrid, spec: &StatisticSpec) -> Result<DMatrix<f64>> {
    Ok(sigma_and_a(grid, spec)?.0)
}

pub fn a_matrix(grid: &CouplingGrid, spec: &StatisticSpec) -> Result<DMatrix<f64>> {
    Ok(sigma_and_a(grid, spec)?.1)
}

/// `Γ = ∫ f fᵀ` for a centered statistic.
pub fn gamma_matrix(spec: &StatisticSpec, resolution: usize) -> Result<DMatrix<f64>> {
    if !spec.is_centered() {
        return Err(PermexpError::NotCentered);
    }
    Ok(gram_matrix(spec, resolution))
}

/// `A⁻¹ Σ A⁻¹` from precomputed matrices.
pub fn sandwich_from(sigma: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a_inv = inverse_spd(a).map_err(|_| PermexpError::SingularMatrix("A(θ)".into()))?;
    let s = &a_inv * sigma * &a_inv;
    Ok((&s + s.transpose()) * 0.5)
}

/// Asymptotic covariance `A⁻¹ΣA⁻¹` of `√n(θ̂_PL - θ)`.
pub fn asymptotic_ple_cov(grid: &CouplingGrid, spec: &StatisticSpec) -> Result<DMatrix<f64>> {
    let (sigma, a) = sigma_and_a(grid, spec)?;
    sandwich_from(&sigma, &a)
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitingSummary {
    pub theta: Vec<f64>,
    pub resolution: usize,
    #[serde(rename = "Z")]
    pub log_partition: f64,
    pub z: Vec<f64>,
    #[serde(rename = "Sigma", serialize_with = "serialize_matrix")]
    pub sigma: DMatrix<f64>,
    #[serde(rename = "A", serialize_with = "serialize_matrix")]
    pub a: DMatrix<f64>,
    #[serde(serialize_with = "serialize_option_matrix")]
    pub sandwich: Option<DMatrix<f64>>,
    /// `Γ` of the doubly-centered statistic.
    #[serde(rename = "Gamma", serialize_with = "serialize_matrix")]
    pub gamma: DMatrix<f64>,
    pub marginal_error: f64,
    pub sinkhorn_iterations: usize,
}

fn serialize_option_matrix<S: serde::Serializer>(
    m: &Option<DMatrix<f64>>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match m {
        Some(m) => serialize_matrix(m, s),
        None => s.serialize_none(),
    }
}

/// Everything the `limiting` subcommand reports.
pub fn limiting_summary(spec: &StatisticSpec, theta: &ThetaVector, options: &SinkhornOptions) -> Result<LimitingSummary> {
    let grid = sinkhorn_density(spec, theta, options)?;
    let z = limiting_z_vector(&grid, spec)?;
    let log_partition = limiting_log_partition(&grid, spec)?;
    let (sigma, a) = sigma_and_a(&grid, spec)?;
    let sandwich = sandwich_from(&sigma, &a).ok();
    let centered = if spec.is_centered() {
        spec.clone()
    } else {
        crate::model::center_components(spec)
    };
    let gamma = gamma_matrix(&centered, options.resolution)?;
    Ok(LimitingSummary {
        theta: theta.as_slice().to_vec(),
        resolution: options.resolution,
        log_partition,
        z,
        sigma,
        a,
        sandwich,
        gamma,
        marginal_error: grid.marginal_error,
        sinkhorn_iterations: grid.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{center_components, Builtin, Component};

    fn xy() -> StatisticSpec {
        StatisticSpec::builtin(Builtin::Xy)
    }

    #[test]
    fn uniform_coupling_at_zero() {
        let grid = sinkhorn_density(&xy(), &ThetaVector::scalar(0.0), &SinkhornOptions::with_resolution(32)).unwrap();
        assert!(grid.density().iter().all(|&v| v == 1.0));
        assert!(grid.row_potential().iter().all(|&v| v == 0.0));
        assert!(grid.col_potential().iter().all(|&v| v == 0.0));
        assert_eq!(limiting_log_partition(&grid, &xy()).unwrap(), 0.0);
        let z = limiting_z_vector(&grid, &xy()).unwrap();
        assert!((z[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn symmetric_statistic_gives_symmetric_density() {
        let grid = sinkhorn_density(&xy(), &ThetaVector::scalar(2.0), &SinkhornOptions::with_resolution(64)).unwrap();
        assert!(grid.marginal_error <= 1e-10);
        for k in 0..64 {
            assert!((grid.row_potential()[k] - grid.col_potential()[k]).abs() < 1e-10);
            for l in 0..64 {
                assert!((grid.density_at(k, l) - grid.density_at(l, k)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn density_matches_potentials() {
        let spec = StatisticSpec::from_names("neg_abs_diff,xy").unwrap();
        let theta = ThetaVector::new(vec![1.5, -0.7]).unwrap();
        let grid = sinkhorn_density(&spec, &theta, &SinkhornOptions::with_resolution(32)).unwrap();
        assert!(grid.density().iter().all(|&v| v > 0.0));
        let sum_a: f64 = grid.row_potential().iter().sum();
        let sum_b: f64 = grid.col_potential().iter().sum();
        assert!((sum_a - sum_b).abs() < 1e-9);
        for k in 0..32 {
            for l in 0..32 {
                let expect = (spec.eval_dot(&theta, grid.midpoint(k), grid.midpoint(l))
                    + grid.row_potential()[k]
                    + grid.col_potential()[l])
                    .exp();
                assert!((grid.density_at(k, l) / expect - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_theta_does_not_overflow() {
        let grid = sinkhorn_density(&xy(), &ThetaVector::scalar(900.0), &SinkhornOptions::with_resolution(16)).unwrap();
        assert!(grid.density().iter().all(|v| v.is_finite()));
        assert!(grid.marginal_error <= 1e-10);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let opts = SinkhornOptions {
            resolution: 32,
            tolerance: 1e-10,
            max_iterations: 2,
        };
        let err = sinkhorn_density(&xy(), &ThetaVector::scalar(5.0), &opts).unwrap_err();
        assert!(matches!(err, PermexpError::MaxItersExceeded { iterations: 2, .. }));
    }

    #[test]
    fn resolution_floor() {
        let opts = SinkhornOptions::with_resolution(2);
        assert!(sinkhorn_density(&xy(), &ThetaVector::scalar(1.0), &opts).is_err());
    }

    #[test]
    fn separable_statistic_has_zero_matrices() {
        let spec = StatisticSpec::new(vec![Component::custom(|x, y| x * x - 2.0 * y)]).unwrap();
        let grid = sinkhorn_density(&spec, &ThetaVector::scalar(1.0), &SinkhornOptions::with_resolution(16)).unwrap();
        let (s, a) = sigma_and_a(&grid, &spec).unwrap();
        assert!(s[(0, 0)].abs() < 1e-24);
        assert!(a[(0, 0)].abs() < 1e-24);
    }

    #[test]
    fn gamma_requires_centering() {
        assert!(matches!(gamma_matrix(&xy(), 64), Err(PermexpError::NotCentered)));
        let g = gamma_matrix(&center_components(&xy()), 512).unwrap();
        assert!((g[(0, 0)] - 1.0 / 144.0).abs() < 1e-7);
    }

    #[test]
    fn sandwich_at_zero_for_centered_xy_is_inverse_gamma() {
        let spec = center_components(&xy());
        let grid = sinkhorn_density(&spec, &ThetaVector::scalar(0.0), &SinkhornOptions::with_resolution(24)).unwrap();
        let (sigma, a) = sigma_and_a(&grid, &spec).unwrap();
        let gamma = gamma_matrix(&spec, 24).unwrap()[(0, 0)];
        assert!((sigma[(0, 0)] / (gamma / 4.0) - 1.0).abs() < 1e-10);
        assert!((a[(0, 0)] / (gamma / 2.0) - 1.0).abs() < 1e-10);
        let v = asymptotic_ple_cov(&grid, &spec).unwrap()[(0, 0)];
        assert!((v * gamma - 1.0).abs() < 1e-10);
    }
}
