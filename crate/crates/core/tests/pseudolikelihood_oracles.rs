mod common;

use permexp::pseudolikelihood::{pl_gradient, pl_hessian, pl_neg_log, solve_ple, SolveOptions};
use permexp::sampler::{replication_rng, uniform_permutation};
use permexp::variance::{a_hat, confidence_interval, normal_upper_quantile, sigma_hat};
use permexp::{Builtin, StatisticSpec, ThetaVector};
use rand::Rng;

use common::{perm, rel_err, sigma_naive, y_naive};

fn theta(v: &[f64]) -> ThetaVector {
    ThetaVector::new(v.to_vec()).unwrap()
}

#[test]
fn gradient_matches_finite_differences_of_log_pl() {
    let spec = StatisticSpec::from_names("neg_abs_diff").unwrap();
    let mut rng = replication_rng(101, 0);
    for rep in 0..5 {
        let pi = uniform_permutation(6, &mut replication_rng(101, rep + 1));
        let t: f64 = rng.gen_range(-3.0..3.0);
        let h = 1e-5;
        let fd = -(pl_neg_log(&spec, &pi, &theta(&[t + h])).unwrap() - pl_neg_log(&spec, &pi, &theta(&[t - h])).unwrap())
            / (2.0 * h);
        let g = pl_gradient(&spec, &pi, &theta(&[t])).unwrap()[0];
        assert!(rel_err(fd, g) < 1e-6, "fd {fd} vs {g}");
    }
}

#[test]
fn hessian_matches_finite_differences_of_gradient() {
    let spec = StatisticSpec::from_names("xy,neg_abs_diff").unwrap();
    let pi = uniform_permutation(6, &mut replication_rng(7, 0));
    let t = [0.8, -1.3];
    let hess = pl_hessian(&spec, &pi, &theta(&t)).unwrap();
    let h = 1e-5;
    for q in 0..2 {
        let mut up = t;
        let mut dn = t;
        up[q] += h;
        dn[q] -= h;
        let gu = pl_gradient(&spec, &pi, &theta(&up)).unwrap();
        let gd = pl_gradient(&spec, &pi, &theta(&dn)).unwrap();
        for p in 0..2 {
            let fd = -(gu[p] - gd[p]) / (2.0 * h);
            assert!(rel_err(fd, hess[(p, q)]) < 1e-5, "({p},{q}) fd {fd} vs {}", hess[(p, q)]);
        }
    }
}

#[test]
fn root_agrees_with_dense_bisection() {
    let spec = StatisticSpec::builtin(Builtin::Xy);
    let pi = perm(&[3, 1, 4, 7, 5, 2, 6]);
    let n = pi.len();
    let score = |t: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let y = y_naive(&spec, &pi, i, j)[0];
                s += y / (1.0 + (t * y).exp());
            }
        }
        s
    };
    let (mut lo, mut hi) = (-100.0, 100.0);
    assert!(score(lo) > 0.0 && score(hi) < 0.0);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let rep = solve_ple(&spec, &pi, &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    assert!((rep.root[0] - oracle).abs() < 1e-9, "{} vs {oracle}", rep.root[0]);
}

#[test]
fn grouped_sigma_hat_equals_naive_triple_sum() {
    let specs = ["xy", "neg_abs_diff", "xy,neg_sq_diff", "xy,neg_abs_diff,neg_sq_diff"];
    let mut rng = replication_rng(2024, 0);
    for k in 0..20u64 {
        let spec = StatisticSpec::from_names(specs[k as usize % specs.len()]).unwrap();
        let n = rng.gen_range(3..=12);
        let pi = uniform_permutation(n, &mut replication_rng(2024, k + 1));
        let th: Vec<f64> = (0..spec.dimension()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fast = sigma_hat(&spec, &pi, &theta(&th)).unwrap();
        let slow = sigma_naive(&spec, &pi, &th);
        let norm: f64 = slow.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        for p in 0..spec.dimension() {
            for q in 0..spec.dimension() {
                assert!(
                    (fast[(p, q)] - slow[p][q]).abs() <= 1e-13 * norm,
                    "instance {k}: {} vs {}",
                    fast[(p, q)],
                    slow[p][q]
                );
            }
        }
    }
}

#[test]
fn interval_recomposes_from_independent_pieces() {
    let spec = StatisticSpec::builtin(Builtin::Xy);
    let n = 7usize;
    let candidates: [[usize; 7]; 4] = [[2, 1, 4, 3, 7, 5, 6], [4, 1, 6, 2, 7, 3, 5], [3, 6, 1, 5, 7, 2, 4], [5, 2, 7, 1, 4, 6, 3]];
    let mut checked = 0;
    for images in candidates {
        let pi = perm(&images);
        let rep = solve_ple(&spec, &pi, &SolveOptions::default()).unwrap();
        let th = rep.root[0];
        let mut a = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let y = y_naive(&spec, &pi, i, j)[0];
                let e = (th * y).exp();
                a += y * y * e / ((1.0 + e) * (1.0 + e));
            }
        }
        a /= (n * n) as f64;
        let s = sigma_naive(&spec, &pi, &[th])[0][0];
        let ci = confidence_interval(&spec, &pi, &[1.0], 0.05, &SolveOptions::default());
        if s < 0.0 {
            // an indefinite Σ̂ must be refused, not clamped
            assert!(ci.is_err(), "{images:?}");
            continue;
        }
        let ci = ci.unwrap();
        let half = normal_upper_quantile(0.05).unwrap() * (s / (a * a) / n as f64).sqrt();
        assert!((ci.theta_hat[0] - th).abs() < 1e-12);
        assert!((ci.lo - (th - half)).abs() < 1e-10, "{images:?}: {} vs {}", ci.lo, th - half);
        assert!((ci.hi - (th + half)).abs() < 1e-10);
        assert!(rel_err(a_hat(&spec, &pi, &theta(&[th])).unwrap()[(0, 0)], a) < 1e-12);
        checked += 1;
    }
    assert!(checked >= 2);
}

#[test]
fn interval_is_scale_equivariant() {
    let base = StatisticSpec::builtin(Builtin::Xy);
    let pi = uniform_permutation(60, &mut replication_rng(5, 0));
    let ci = confidence_interval(&base, &pi, &[1.0], 0.1, &SolveOptions::default()).unwrap();
    for c in [0.5, 3.0] {
        let scaled = base.scaled(c);
        let cs = confidence_interval(&scaled, &pi, &[1.0], 0.1, &SolveOptions::default()).unwrap();
        assert!((cs.lo * c - ci.lo).abs() < 1e-9);
        assert!((cs.hi * c - ci.hi).abs() < 1e-9);
    }
}
