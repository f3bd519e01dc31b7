mod common;

use common::{random_mat, random_spd, rng, uniform};
use proptest::prelude::*;
use scorefilt::matcore::{eig_sym, gamma_coeff, weighted_matrix_norm, Mat, SymMatrix};

fn det3(m: &Mat) -> f64 {
    match m.rows() {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
    }
}

/// Roots of det(A − λI) by scanning for sign changes and bisecting.
fn charpoly_roots(a: &SymMatrix) -> Vec<f64> {
    let n = a.dim();
    let bound = a.as_mat().frobenius() + 1.0;
    let f = |l: f64| det3(&a.as_mat().sub(&Mat::identity(n).scale(l)));
    let steps = 20_000;
    let mut roots = Vec::new();
    let mut prev = -bound;
    let mut fprev = f(prev);
    for i in 1..=steps {
        let x = -bound + 2.0 * bound * i as f64 / steps as f64;
        let fx = f(x);
        if fx == 0.0 {
            roots.push(x);
        } else if fprev != 0.0 && fprev.signum() != fx.signum() {
            let (mut lo, mut hi) = (prev, x);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid).signum() == f(lo).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = x;
        fprev = fx;
    }
    roots
}

#[test]
fn eigenvalues_match_characteristic_polynomial() {
    let mut r = rng(1);
    for dim in 1..=3 {
        for _ in 0..30 {
            // well-separated spectrum so every root is a simple sign change
            let q = scorefilt::simlab::haar_orthogonal_rng(dim, &mut r);
            let d: Vec<f64> = (0..dim).map(|i| -3.0 + 2.5 * i as f64 + uniform(&mut r, 0.0, 1.0)).collect();
            let a = SymMatrix::from_mat(q.matmul(&Mat::from_diag(&d)).matmul(&q.transpose())).unwrap();
            let (vals, _) = eig_sym(&a);
            let roots = charpoly_roots(&a);
            assert_eq!(roots.len(), dim);
            for (v, root) in vals.iter().zip(&roots) {
                assert!((v - root).abs() < 1e-8, "{v} vs {root}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn eigendecomposition_reconstructs(seed in 0u64..1_000_000, dim in 1usize..7) {
        let mut r = rng(seed);
        let g = random_mat(&mut r, dim, dim);
        let a = SymMatrix::from_mat(g.add(&g.transpose())).unwrap();
        let (vals, v) = eig_sym(&a);
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let rec = v.matmul(&Mat::from_diag(&vals)).matmul(&v.transpose());
        let scale = a.as_mat().frobenius().max(1e-300);
        prop_assert!(rec.sub(a.as_mat()).frobenius() <= 1e-10 * scale);
        let vtv = v.transpose().matmul(&v);
        prop_assert!(vtv.sub(&Mat::identity(dim)).frobenius() <= 1e-10);
    }

    #[test]
    fn square_root_squares_back(seed in 0u64..1_000_000, dim in 1usize..6) {
        let mut r = rng(seed);
        let p = random_spd(&mut r, dim, 0.1, 10.0);
        let s = p.sqrt().unwrap();
        let ss = s.as_mat().matmul(s.as_mat());
        prop_assert!(ss.sub(p.as_mat()).frobenius() <= 1e-10 * p.as_mat().frobenius());
        prop_assert!(s.as_mat().sub(&s.as_mat().transpose()).frobenius() == 0.0);
    }

    #[test]
    fn prediction_norm_bound(seed in 0u64..1_000_000, dim in 1usize..5) {
        let mut r = rng(seed);
        let p = random_spd(&mut r, dim, 0.2, 5.0);
        let phi = random_mat(&mut r, dim, dim).scale(uniform(&mut r, 0.1, 1.5));
        let g = gamma_coeff(&p, &phi).unwrap();
        let bound = 1.0 - g.max(0.0) / p.lambda_max() + (-g).max(0.0) / p.lambda_min();
        let n = weighted_matrix_norm(&phi, &p).unwrap();
        prop_assert!(n * n <= bound * (1.0 + 1e-10) + 1e-12, "{} > {}", n * n, bound);
    }

    #[test]
    fn weighted_norm_is_submultiplicative(seed in 0u64..1_000_000, dim in 1usize..5) {
        let mut r = rng(seed);
        let p = random_spd(&mut r, dim, 0.2, 5.0);
        let a = random_mat(&mut r, dim, dim);
        let b = random_mat(&mut r, dim, dim);
        let ab = weighted_matrix_norm(&a.matmul(&b), &p).unwrap();
        let na = weighted_matrix_norm(&a, &p).unwrap();
        let nb = weighted_matrix_norm(&b, &p).unwrap();
        prop_assert!(ab <= na * nb * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn quadratic_form_is_positive(seed in 0u64..1_000_000, dim in 1usize..5) {
        let mut r = rng(seed);
        let p = random_spd(&mut r, dim, 0.01, 5.0);
        let x: Vec<f64> = (0..dim).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
        prop_assert!(p.quad_form(&x) > 0.0);
        prop_assert_eq!(p.quad_form(&vec![0.0; dim]), 0.0);
    }
}
