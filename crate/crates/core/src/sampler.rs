//! Approximate draws from `P_{n,θ}`.
//!
//! Two chains are provided. The transposition heat-bath chain works for any
//! statistic: it picks a pair `(i, j)` and resamples the unordered pair of
//! images `{π(i), π(j)}` from its exact two-point conditional. The
//! auxiliary-variable (hit-and-run) chain is specific to `f(x, y) = xy` with
//! `θ ≥ 0`: it draws `U_i ~ Uniform[0, e^{θ i π(i)/n²}]`, which turns into
//! lower bounds `π(i) ≥ b_i`, and then draws a uniform permutation subject to
//! those bounds by assigning ranks `1, 2, ...` in turn.
//!
//! Replication `r` of a run with seed `s` uses ChaCha stream `r` of key `s`,
//! so replications are independent of scheduling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PermexpError, Result};
use crate::model::{node, Builtin, Component, Permutation, StatisticSpec, ThetaVector};

pub const DEFAULT_SWEEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    Gibbs,
    HitAndRun,
    Uniform,
}

impl std::str::FromStr for SamplerMethod {
    type Err = PermexpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gibbs" => Ok(SamplerMethod::Gibbs),
            "har" | "hit_and_run" => Ok(SamplerMethod::HitAndRun),
            "uniform" => Ok(SamplerMethod::Uniform),
            other => Err(PermexpError::InvalidConfig(format!("unknown sampler `{other}`"))),
        }
    }
}

impl std::fmt::Display for SamplerMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerMethod::Gibbs => "gibbs",
            SamplerMethod::HitAndRun => "har",
            SamplerMethod::Uniform => "uniform",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    pub sweeps: usize,
    /// Heat-bath moves per sweep; `None` means `n²`. Ignored by hit-and-run,
    /// where one sweep is one pass of the auxiliary and assignment steps.
    pub proposals_per_sweep: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: SamplerMethod::Gibbs,
            sweeps: DEFAULT_SWEEPS,
            proposals_per_sweep: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(PermexpError::InvalidConfig("sweeps must be at least 1".into()));
        }
        if self.proposals_per_sweep == Some(0) {
            return Err(PermexpError::InvalidConfig("proposals_per_sweep must be at least 1".into()));
        }
        Ok(())
    }
}

/// Independent generator for replication `rep` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Exact uniform draw from `S_n` (Fisher-Yates).
pub fn uniform_permutation(n: usize, rng: &mut impl Rng) -> Permutation {
    let mut images: Vec<usize> = (0..n).collect();
    images.shuffle(rng);
    Permutation::from_images_unchecked(images)
}

#[inline]
fn pair_dot(spec: &StatisticSpec, theta: &[f64], xi: f64, ui: f64, xj: f64, uj: f64) -> f64 {
    spec.components()
        .iter()
        .zip(theta)
        .map(|(c, t)| t * ((c.eval(xi, ui) + c.eval(xj, uj)) - (c.eval(xi, uj) + c.eval(xj, ui))))
        .sum()
}

/// Probability that a heat-bath move at `(i, j)` exchanges the two images:
/// `1 / (1 + e^{θ·y_π(i,j)})`.
pub fn swap_probability(spec: &StatisticSpec, theta: &ThetaVector, pi: &Permutation, i: usize, j: usize) -> Result<f64> {
    theta.check_dimension(spec)?;
    let y = crate::model::pair_difference(spec, pi, i, j)?;
    let s: f64 = y.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
    Ok(crate::pseudolikelihood::logistic_weights(s).0)
}

/// One heat-bath move on the pair `(i, j)`. Returns whether the images
/// were exchanged.
pub fn gibbs_step(
    spec: &StatisticSpec,
    theta: &ThetaVector,
    pi: &mut Permutation,
    i: usize,
    j: usize,
    rng: &mut impl Rng,
) -> Result<bool> {
    let p_swap = swap_probability(spec, theta, pi, i, j)?;
    let swap = rng.gen::<f64>() < p_swap;
    if swap {
        pi.swap(i, j);
    }
    Ok(swap)
}

/// Runs the heat-bath chain from a uniform start for
/// `sweeps * proposals_per_sweep` moves at i.i.d. uniform pairs.
pub fn gibbs_sample(
    spec: &StatisticSpec,
    theta: &ThetaVector,
    n: usize,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Permutation> {
    theta.check_dimension(spec)?;
    config.validate()?;
    let mut images = uniform_permutation(n, rng).images().to_vec();
    if n < 2 {
        return Ok(Permutation::from_images_unchecked(images));
    }
    let moves = config.sweeps * config.proposals_per_sweep.unwrap_or(n * n);
    let x: Vec<f64> = (0..n).map(|i| node(i, n)).collect();
    for _ in 0..moves {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (ui, uj) = (node(images[i], n), node(images[j], n));
        let s = pair_dot(spec, theta, x[i], ui, x[j], uj);
        let (p_swap, _) = crate::pseudolikelihood::logistic_weights(s);
        if rng.gen::<f64>() < p_swap {
            images.swap(i, j);
        }
    }
    Ok(Permutation::from_images_unchecked(images))
}

/// True when the statistic is `xy`, possibly centered or positively scaled
/// into a tabulation-free form the auxiliary-variable sampler understands.
fn xy_scale(spec: &StatisticSpec) -> Option<f64> {
    fn inner(c: &Component) -> Option<f64> {
        match c {
            Component::Builtin(Builtin::Xy) => Some(1.0),
            Component::Centered(c) => inner(c.base()),
            Component::Scaled(k, c) => inner(c).map(|s| s * k),
            _ => None,
        }
    }
    match spec.components() {
        [c] => inner(c),
        _ => None,
    }
}

/// One pass of the auxiliary-variable and rank-assignment steps.
fn hit_and_run_sweep(theta: f64, images: &mut [usize], rng: &mut impl Rng) -> Result<()> {
    let n = images.len();
    let n2 = (n * n) as f64;
    // bucket[r] holds indices whose lower bound b_j rounds up to rank r + 1
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, &img) in images.iter().enumerate() {
        let v = 1.0 - rng.gen::<f64>();
        // b_j = (n²/(θ j)) log U_j with log U_j = θ j π(j)/n² + log V
        let b = (img + 1) as f64 + n2 * v.ln() / (theta * (j + 1) as f64);
        let rank = if b <= 1.0 { 1 } else { b.ceil() as usize };
        buckets[rank.min(n) - 1].push(j);
    }
    let mut pool: Vec<usize> = Vec::with_capacity(n);
    for (level, bucket) in buckets.into_iter().enumerate() {
        pool.extend(bucket);
        if pool.is_empty() {
            return Err(PermexpError::EligibleSetEmpty { rank: level + 1 });
        }
        let pick = rng.gen_range(0..pool.len());
        let j = pool.swap_remove(pick);
        images[j] = level;
    }
    Ok(())
}

/// Auxiliary-variable sampler for the `xy` model with `θ ≥ 0`.
pub fn hit_and_run_sample(theta: f64, n: usize, config: &SamplerConfig, rng: &mut impl Rng) -> Result<Permutation> {
    config.validate()?;
    if !theta.is_finite() || theta < 0.0 {
        return Err(PermexpError::InvalidConfig(
            "hit-and-run requires a finite theta >= 0; use the gibbs sampler".into(),
        ));
    }
    let mut images = uniform_permutation(n, rng).images().to_vec();
    if theta == 0.0 {
        return Ok(Permutation::from_images_unchecked(images));
    }
    for _ in 0..config.sweeps {
        hit_and_run_sweep(theta, &mut images, rng)?;
    }
    Ok(Permutation::from_images_unchecked(images))
}

/// Draws one permutation with the configured method.
pub fn sample(
    spec: &StatisticSpec,
    theta: &ThetaVector,
    n: usize,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Permutation> {
    if n == 0 {
        return Err(PermexpError::InvalidConfig("n must be at least 1".into()));
    }
    theta.check_dimension(spec)?;
    match config.method {
        SamplerMethod::Uniform => Ok(uniform_permutation(n, rng)),
        SamplerMethod::Gibbs => gibbs_sample(spec, theta, n, config, rng),
        SamplerMethod::HitAndRun => {
            let scale = xy_scale(spec).ok_or_else(|| {
                PermexpError::InvalidConfig("hit-and-run is only available for the xy statistic".into())
            })?;
            hit_and_run_sample(theta[0] * scale, n, config, rng)
        }
    }
}

/// `reps` independent draws; replication `r` uses [`replication_rng`]`(seed, r)`.
pub fn sample_replications(
    spec: &StatisticSpec,
    theta: &ThetaVector,
    n: usize,
    config: &SamplerConfig,
    reps: usize,
) -> Result<Vec<Permutation>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| sample(spec, theta, n, config, &mut replication_rng(config.seed, r)))
        .collect()
}
