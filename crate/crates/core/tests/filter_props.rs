mod common;

use std::sync::Arc;

use common::{all_models, catalog_model, random_mat, random_spd, random_theta, random_y, rng, uniform};
use proptest::prelude::*;
use scorefilt::filter::{
    explicit_update_with_gain, implicit_update_with_penalty, newton_implicit, update_explicit, update_implicit,
    update_poisson_quadratic, update_student_cubic, FilterConfig, FilterKind,
};
use scorefilt::matcore::{Mat, SymMatrix};
use scorefilt::models::{make_model, scalar_shape, ObservationModel, ShapeMap, ShapeValue};
use scorefilt::simlab::{kalman_reference, LinearStateSpace};

fn random_penalty(m: &ObservationModel, r: &mut rand_chacha::ChaCha8Rng) -> SymMatrix {
    let floor = m.curvature().alpha_minus;
    random_spd(r, m.param_dim(), floor + 0.05, floor + 10.0)
}

fn objective(m: &ObservationModel, p: &SymMatrix, y: &[f64], th: &[f64], pred: &[f64]) -> f64 {
    let d: Vec<f64> = th.iter().zip(pred).map(|(a, b)| a - b).collect();
    m.ell(y, th) - 0.5 * p.quad_form(&d)
}

#[test]
fn implicit_update_ascends() {
    for (mi, m) in all_models().iter().enumerate() {
        let mut r = rng(400 + mi as u64);
        for _ in 0..200 {
            let p = random_penalty(m, &mut r);
            let pred = random_theta(m, &mut r);
            let y = random_y(m, &mut r);
            let upd = implicit_update_with_penalty(m, &p, &pred, &y).unwrap();
            let d: Vec<f64> = upd.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let gain = m.ell(&y, &upd) - m.ell(&y, &pred);
            assert!(gain >= 0.5 * p.quad_form(&d) - 1e-10, "{}: gain {gain} < {}", m.name(), 0.5 * p.quad_form(&d));
        }
    }
}

#[test]
fn implicit_location_updates_stay_between_prediction_and_observation() {
    for name in ["student_location", "egb2_location"] {
        let m = catalog_model(name);
        let mut r = rng(500);
        for _ in 0..500 {
            let eta = uniform(&mut r, 0.01, 7.9);
            let p = SymMatrix::from_diag(&[1.0 / eta]);
            let pred = random_theta(&m, &mut r);
            let y = random_y(&m, &mut r);
            let upd = implicit_update_with_penalty(&m, &p, &pred, &y).unwrap()[0];
            let (lo, hi) = (pred[0].min(y[0]), pred[0].max(y[0]));
            assert!(upd >= lo - 1e-12 && upd <= hi + 1e-12, "{name}: {upd} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn large_learning_rate_student_update_stays_bracketed() {
    let mut r = rng(501);
    for _ in 0..500 {
        let eta = uniform(&mut r, 8.0, 60.0);
        let pred = uniform(&mut r, -5.0, 5.0);
        let y = uniform(&mut r, -10.0, 10.0);
        let (th, w, _) = update_student_cubic(eta, 2.061, 0.387f64.sqrt(), pred, y);
        assert!(w > 0.0 && w <= eta / (1.0 + eta) + 1e-12);
        assert!(th >= pred.min(y) - 1e-12 && th <= pred.max(y) + 1e-12);
    }
}

#[test]
fn explicit_student_update_overshoots() {
    let m = make_model("student_location", &scalar_shape(&[("nu", 2.632), ("sigma2", 0.516)])).unwrap();
    let cfg = FilterConfig::scalar(Arc::new(m), FilterKind::Explicit, 0.0, 1.0, 2.194).unwrap();
    let y = 0.1;
    let upd = update_explicit(&cfg, &[0.0], &[y]).unwrap()[0];
    assert!(upd > y, "explicit update {upd} did not pass y = {y}");
    let imp = FilterConfig::builder(cfg.model_arc().clone(), FilterKind::Implicit).eta(2.194).build().unwrap();
    let upd = update_implicit(&imp, &[0.0], &[y]).unwrap()[0];
    assert!(upd > 0.0 && upd < y);
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{what}: {a:?} vs {b:?}");
    }
}

#[test]
fn closed_forms_match_newton_raphson() {
    let mut r = rng(600);
    for name in ["least_squares", "gaussian_linear"] {
        let m = catalog_model(name);
        for _ in 0..200 {
            let p = random_penalty(&m, &mut r);
            let pred = random_theta(&m, &mut r);
            let y = random_y(&m, &mut r);
            let closed = implicit_update_with_penalty(&m, &p, &pred, &y).unwrap();
            let nr = newton_implicit(&m, &p, &pred, &y).unwrap();
            assert_close(&closed, &nr, 1e-8, name);
        }
    }
    let quad = catalog_model("poisson_quad");
    for _ in 0..200 {
        let eta = uniform(&mut r, 0.01, 10.0);
        let pred = uniform(&mut r, 0.0, 3.0);
        let y = rand::Rng::random_range(&mut r, 0..30) as f64;
        let closed = update_poisson_quadratic(eta, pred, y);
        let nr = newton_implicit(&quad, &SymMatrix::from_diag(&[1.0 / eta]), &[pred], &[y]).unwrap();
        assert_close(&[closed], &nr, 1e-8, "poisson_quad");
    }
    for _ in 0..200 {
        let nu = uniform(&mut r, 0.5, 30.0);
        let s2 = uniform(&mut r, 0.1, 4.0);
        let m = make_model("student_location", &scalar_shape(&[("nu", nu), ("sigma2", s2)])).unwrap();
        let eta = uniform(&mut r, 0.01, 7.9);
        let pred = uniform(&mut r, -5.0, 5.0);
        let y = uniform(&mut r, -10.0, 10.0);
        let (closed, _, _) = update_student_cubic(eta, nu, s2.sqrt(), pred, y);
        let nr = newton_implicit(&m, &SymMatrix::from_diag(&[1.0 / eta]), &[pred], &[y]).unwrap();
        assert_close(&[closed], &nr, 1e-8, &format!("student cubic eta={eta} nu={nu} s2={s2} pred={pred} y={y}"));
    }
}

proptest! {
    #[test]
    fn student_weight_never_exceeds_gaussian_weight(
        eta in 0.001f64..100.0,
        nu in 0.1f64..1e6,
        s in 0.05f64..5.0,
        pred in -10.0f64..10.0,
        y in -20.0f64..20.0,
    ) {
        let (_, w, n) = update_student_cubic(eta, nu, s, pred, y);
        prop_assert!(w > 0.0 && w <= eta / (1.0 + eta) + 1e-12, "w = {}", w);
        prop_assert!((1..=3).contains(&n));
    }
}

#[test]
fn student_cubic_example_against_bisection_and_grid() {
    let (eta, nu, s, pred, y) = (1.0, 3.0, 1.0, 0.0, 2.0);
    let f = |w: f64| (4.0 / 3.0) * (1.0 - w) * (1.0 - w) * w + 2.0 * w - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (th, w, n) = update_student_cubic(eta, nu, s, pred, y);
    assert_eq!(n, 1);
    assert!((w - 0.5 * (lo + hi)).abs() < 1e-12);
    let m = make_model("student_location", &scalar_shape(&[("nu", nu), ("sigma2", s * s)])).unwrap();
    let p = SymMatrix::from_diag(&[1.0 / eta]);
    let best = objective(&m, &p, &[y], &[th], &[pred]);
    for i in 0..=10_000 {
        let g = pred + (y - pred) * i as f64 / 10_000.0;
        assert!(objective(&m, &p, &[y], &[g], &[pred]) <= best + 1e-12);
    }
}

fn shape_matrix(m: &Mat) -> ShapeValue {
    ShapeValue::Matrix((0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect()).collect())
}

#[test]
fn kalman_level_update_is_isd_and_esd() {
    let mut r = rng(700);
    for inst in 0..50 {
        let k = 1 + inst % 4;
        let n = k.max(1 + (inst / 4) % 6);
        let z = random_mat(&mut r, n, k);
        let sigma_eps = random_spd(&mut r, n, 0.2, 3.0);
        let d: Vec<f64> = (0..n).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
        let mut shape = ShapeMap::new();
        shape.insert("Z".into(), shape_matrix(&z));
        shape.insert("Sigma_eps".into(), shape_matrix(sigma_eps.as_mat()));
        shape.insert("d".into(), ShapeValue::Vector(d.clone()));
        let model = make_model("gaussian_linear", &shape).unwrap();
        let phi0 = random_mat(&mut r, k, k).scale(0.4);
        let ss = LinearStateSpace {
            d,
            z,
            sigma_eps,
            omega0: (0..k).map(|_| uniform(&mut r, -1.0, 1.0)).collect(),
            phi0,
            sigma_xi: random_spd(&mut r, k, 0.1, 2.0),
        };
        let series: Vec<Vec<f64>> = (0..20).map(|_| (0..n).map(|_| uniform(&mut r, -3.0, 3.0)).collect()).collect();
        let p0 = random_spd(&mut r, k, 0.5, 5.0);
        let kf = kalman_reference(&ss, &vec![0.0; k], &p0, &series).unwrap();
        for t in 0..series.len() {
            let pred = &kf.predicted[t];
            let isd = implicit_update_with_penalty(&model, &kf.p_pred[t].inverse().unwrap(), pred, &series[t]).unwrap();
            let esd = explicit_update_with_gain(&model, kf.p_upd[t].as_mat(), pred, &series[t]);
            assert_close(&isd, &kf.updated[t], 1e-10, "isd");
            assert_close(&esd, &kf.updated[t], 1e-10, "esd");
        }
    }
}
