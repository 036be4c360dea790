mod common;

use num_rational::Rational64 as Q;
use permexp::model::{check_linear_independence_with, g_kernel, gram_matrix};
use permexp::{center_components, pair_difference, sufficient_statistic, Builtin, Component, StatisticSpec};

use common::perm;

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

fn to_f64(v: Q) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

#[test]
fn neg_abs_diff_statistic_against_exact_rationals() {
    // π = (3,1,2), n = 3
    let images = [3i64, 1, 2];
    let exact: Q = images
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let d = q(i as i64 + 1, 3) - q(p, 3);
            -(if d < q(0, 1) { -d } else { d })
        })
        .sum();
    const FROZEN: f64 = -4.0 / 3.0;
    assert_eq!(exact, q(-4, 3));
    let t = sufficient_statistic(&StatisticSpec::builtin(Builtin::NegAbsDiff), &perm(&[3, 1, 2]));
    assert!((t[0] - FROZEN).abs() < 1e-15);
    assert!((t[0] - to_f64(exact)).abs() < 1e-15);
}

#[test]
fn neg_sq_diff_pair_difference_against_exact_rationals() {
    // π = (2,4,1,5,3), n = 5, pair (2,5) in 1-indexed terms
    let f = |x: Q, y: Q| -(x - y) * (x - y);
    let (xi, xj, ui, uj) = (q(2, 5), q(5, 5), q(4, 5), q(3, 5));
    let exact = (f(xi, ui) + f(xj, uj)) - (f(xi, uj) + f(xj, ui));
    const FROZEN: f64 = -6.0 / 25.0;
    assert_eq!(exact, q(-6, 25));
    let y = pair_difference(
        &StatisticSpec::builtin(Builtin::NegSqDiff),
        &perm(&[2, 4, 1, 5, 3]),
        1,
        4,
    )
    .unwrap();
    assert!((y[0] - FROZEN).abs() < 1e-15);
}

#[test]
fn small_closed_forms() {
    let xy = StatisticSpec::builtin(Builtin::Xy);
    assert!((sufficient_statistic(&xy, &perm(&[2, 1]))[0] - 1.0).abs() < 1e-15);
    assert!((sufficient_statistic(&xy, &perm(&[1, 2, 3, 4]))[0] - 1.875).abs() < 1e-15);
    let y = pair_difference(&xy, &permexp::Permutation::identity(10), 0, 1).unwrap();
    assert!((y[0] - 0.01).abs() < 1e-15);
}

#[test]
fn g_kernel_matches_pair_difference_on_grid_points() {
    let spec = StatisticSpec::from_names("neg_abs_diff,xy").unwrap();
    let pi = perm(&[4, 7, 1, 3, 6, 2, 5]);
    let n = 7.0;
    for i in 0..7 {
        for j in 0..7 {
            if i == j {
                continue;
            }
            let z1 = ((i + 1) as f64 / n, (pi.image(i) + 1) as f64 / n);
            let z2 = ((j + 1) as f64 / n, (pi.image(j) + 1) as f64 / n);
            let g = g_kernel(&spec, z1, z2);
            let y = pair_difference(&spec, &pi, i, j).unwrap();
            for r in 0..2 {
                assert!((g[r] - y[r]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn centered_xy_is_the_product_of_offsets() {
    let c = center_components(&StatisticSpec::builtin(Builtin::Xy));
    for k in 0..=20 {
        for l in 0..=20 {
            let (x, y) = (k as f64 / 20.0, l as f64 / 20.0);
            assert!((c.eval(x, y)[0] - (x - 0.5) * (y - 0.5)).abs() < 1e-6);
        }
    }
}

/// Midpoint quadrature of `∫ f_p f_q` at a resolution well above the
/// library default, written out by hand.
fn dense_gram(fs: &[&dyn Fn(f64, f64) -> f64], m: usize) -> [[f64; 2]; 2] {
    let mut g = [[0.0; 2]; 2];
    for k in 0..m {
        let x = (k as f64 + 0.5) / m as f64;
        for l in 0..m {
            let y = (l as f64 + 0.5) / m as f64;
            let v = [fs[0](x, y), fs[1](x, y)];
            for p in 0..2 {
                for r in 0..2 {
                    g[p][r] += v[p] * v[r];
                }
            }
        }
    }
    let cells = (m * m) as f64;
    g.map(|row| row.map(|v| v / cells))
}

#[test]
fn gram_of_two_centered_components() {
    // −|x−y| centered in closed form: row average of |x−y| is x² − x + 1/2,
    // grand mean 1/3
    let c1 = |x: f64, y: f64| (x - 0.5) * (y - 0.5);
    let c2 = |x: f64, y: f64| -(x - y).abs() + (x * x - x + 0.5) + (y * y - y + 0.5) - 1.0 / 3.0;
    let g = dense_gram(&[&c1, &c2], 2048);
    let tr = g[0][0] + g[1][1];
    let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
    let oracle = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
    // frozen from the oracle above
    const LAMBDA_MIN: f64 = 6.077_895_244_952_745e-4;
    assert!((oracle / LAMBDA_MIN - 1.0).abs() < 1e-6, "oracle {oracle:.17e}");

    let spec = center_components(&StatisticSpec::from_names("xy,neg_abs_diff").unwrap());
    let lib = check_linear_independence_with(&spec, 512);
    assert!((lib / LAMBDA_MIN - 1.0).abs() < 1e-4, "library {lib:.10e}");
    let gm = gram_matrix(&spec, 512);
    assert!((gm[(0, 0)] - 1.0 / 144.0).abs() < 1e-7);
}

#[test]
fn dependent_components_are_degenerate() {
    let spec = StatisticSpec::new(vec![
        Component::Builtin(Builtin::Xy),
        Component::Scaled(2.0, Box::new(Component::Builtin(Builtin::Xy))),
    ])
    .unwrap();
    assert!(check_linear_independence_with(&spec, 128) <= 1e-9);
}
