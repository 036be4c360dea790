//! Brute-force helpers shared by the integration tests. Deliberately naive
//! and independent of the library internals.
#![allow(dead_code)]

use permexp::{Permutation, StatisticSpec};

/// Every permutation of `0..n` in lexicographic order.
pub fn all_perms(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in all_perms(n - 1) {
            let mut p = vec![first];
            p.extend(rest.into_iter().map(|v| if v >= first { v + 1 } else { v }));
            out.push(p);
        }
    }
    out
}

/// `T(π)` summed term by term.
pub fn t_naive(spec: &StatisticSpec, p: &[usize]) -> Vec<f64> {
    let n = p.len() as f64;
    let mut t = vec![0.0; spec.dimension()];
    for (i, &img) in p.iter().enumerate() {
        let v = spec.eval((i + 1) as f64 / n, (img + 1) as f64 / n);
        for (a, b) in t.iter_mut().zip(v) {
            *a += b;
        }
    }
    t
}

/// Exact `P_{n,θ}` over [`all_perms`], by log-sum-exp.
pub fn exact_probs(spec: &StatisticSpec, theta: &[f64], n: usize) -> Vec<f64> {
    let logw: Vec<f64> = all_perms(n)
        .iter()
        .map(|p| t_naive(spec, p).iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logw.iter().map(|w| (w - max).exp()).sum();
    logw.iter().map(|w| (w - max).exp() / z).collect()
}

/// Index of `p` in [`all_perms`] order.
pub fn lex_index(p: &[usize]) -> usize {
    let n = p.len();
    let mut idx = 0;
    for i in 0..n {
        let smaller = p[i + 1..].iter().filter(|&&v| v < p[i]).count();
        idx = idx * (n - i) + smaller;
    }
    idx
}

pub fn perm(images_one_indexed: &[usize]) -> Permutation {
    Permutation::from_one_indexed(images_one_indexed).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// `y_π(i,j)` straight from the four-term definition.
pub fn y_naive(spec: &StatisticSpec, pi: &Permutation, i: usize, j: usize) -> Vec<f64> {
    let n = pi.len() as f64;
    let (xi, xj) = ((i + 1) as f64 / n, (j + 1) as f64 / n);
    let (ui, uj) = ((pi.image(i) + 1) as f64 / n, (pi.image(j) + 1) as f64 / n);
    let (a, b, p, q) = (spec.eval(xi, ui), spec.eval(xj, uj), spec.eval(xi, uj), spec.eval(xj, ui));
    (0..spec.dimension()).map(|r| (a[r] + b[r]) - (p[r] + q[r])).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ordered triples `(a, b, c)`, `b ≠ c`, both distinct from the shared `a`.
pub fn sigma_naive(spec: &StatisticSpec, pi: &Permutation, th: &[f64]) -> Vec<Vec<f64>> {
    let n = pi.len();
    let dim = spec.dimension();
    let t = |a: usize, b: usize| -> Vec<f64> {
        let y = y_naive(spec, pi, a, b);
        let w = 1.0 / (1.0 + dot(&y, th).exp());
        y.iter().map(|v| v * w).collect()
    };
    let mut s = vec![vec![0.0; dim]; dim];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if a == b || a == c || b == c {
                    continue;
                }
                let (tb, tc) = (t(a, b), t(a, c));
                for p in 0..dim {
                    for q in 0..dim {
                        s[p][q] += tb[p] * tc[q];
                    }
                }
            }
        }
    }
    let scale = (n as f64).powi(3);
    s.into_iter().map(|r| r.into_iter().map(|v| v / scale).collect()).collect()
}
