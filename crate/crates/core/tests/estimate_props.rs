mod common;

use std::sync::Arc;

use common::{catalog_model, random_spd, rng, uniform};
use proptest::prelude::*;
use scorefilt::estimate::{
    fit_mle, nelder_mead, neg_loglik, FitSpec, FixedMask, HForm, ParamLayout, ParamVector, PhiForm, StaticParams,
};
use scorefilt::filter::FilterKind;
use scorefilt::matcore::{Mat, SymMatrix};
use scorefilt::models::{make_model, scalar_shape, ShapeMap, ShapeValue};
use scorefilt::simlab::{simulate, DgpSpec, InitState, Innovation, Observation};

fn series(model: &scorefilt::models::ObservationModel, omega: f64, phi: f64, sigma_xi: f64, t_len: usize, seed: u64) -> Vec<Vec<f64>> {
    let spec = DgpSpec {
        observation: Observation::Model(Arc::new(model.clone())),
        omega0: vec![omega],
        phi0: Mat::scalar(phi),
        innovation: Innovation::Gaussian,
        sigma_xi,
        init: InitState::Fixed(vec![omega]),
        t_len,
        seed,
        stream: 0,
    };
    simulate(&spec).unwrap().observations
}

fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
    (0..a.rows()).all(|i| (0..a.cols()).all(|j| (a[(i, j)] - b[(i, j)]).abs() <= tol * (1.0 + b[(i, j)].abs())))
}

proptest! {
    #[test]
    fn transforms_round_trip(seed in 0u64..10_000, diag_phi in any::<bool>(), chol in any::<bool>()) {
        let model = catalog_model("gaussian_linear");
        let mut r = rng(1000 + seed);
        let h = if chol { random_spd(&mut r, 2, 0.05, 5.0) } else { SymMatrix::scalar_identity(2, uniform(&mut r, 0.01, 10.0)) };
        let p0 = uniform(&mut r, -0.99, 0.99);
        let phi = if diag_phi { Mat::from_diag(&[p0, uniform(&mut r, -0.99, 0.99)]) } else { Mat::from_diag(&[p0, p0]) };
        let values = StaticParams { h, omega: vec![uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0)], phi, shapes: vec![] };
        let layout = ParamLayout::new(
            &model,
            if chol { HForm::Cholesky } else { HForm::Scalar },
            if diag_phi { PhiForm::Diagonal } else { PhiForm::Scalar },
            &[],
        ).unwrap();
        let pv = ParamVector::new(layout, values.clone(), FixedMask::default()).unwrap();
        let back = pv.decode();
        prop_assert!(close(back.h.as_mat(), values.h.as_mat(), 1e-12));
        prop_assert!(close(&back.phi, &values.phi, 1e-12));
        prop_assert!(back.omega.iter().zip(&values.omega).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn constrained_transforms_round_trip(eta in 1e-4f64..1e3, omega in 1e-3f64..50.0, phi in 0.001f64..0.999, nu in 2.01f64..60.0) {
        let quad = make_model("poisson_quad", &ShapeMap::new()).unwrap();
        let layout = ParamLayout::new(&quad, HForm::Scalar, PhiForm::Scalar, &[]).unwrap();
        let back = ParamVector::new(layout, StaticParams::scalar(eta, omega, phi, vec![]), FixedMask::default()).unwrap().decode();
        prop_assert!((back.eta() - eta).abs() <= 1e-12 * eta);
        prop_assert!((back.omega[0] - omega).abs() <= 1e-12 * omega);
        prop_assert!((back.phi[(0, 0)] - phi).abs() <= 1e-12);

        let st = catalog_model("student_vol");
        let layout = ParamLayout::new(&st, HForm::Scalar, PhiForm::Scalar, &["nu"]).unwrap();
        let back = ParamVector::new(layout, StaticParams::scalar(eta, 0.3, 0.5, vec![nu]), FixedMask::default()).unwrap().decode();
        prop_assert!((back.shapes[0] - nu).abs() <= 1e-12 * nu);
    }
}

#[test]
fn nelder_mead_finds_rosenbrock_minimum() {
    let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
    let res = nelder_mead(rosen, &[-1.2, 1.0], 0.5, 5000, 1e-12);
    assert!(res.converged);
    assert!((res.x[0] - 1.0).abs() < 1e-4 && (res.x[1] - 1.0).abs() < 1e-4, "{:?}", res.x);
}

#[test]
fn fit_never_worsens_the_start() {
    let model = make_model("poisson_exp", &ShapeMap::new()).unwrap();
    let spec = FitSpec::new(FilterKind::Implicit);
    for seed in 0..5 {
        let y = series(&model, 1.0, 0.95, 0.2, 150, seed);
        let layout = ParamLayout::new(&model, HForm::Scalar, PhiForm::Scalar, &[]).unwrap();
        let init = ParamVector::new(layout, StaticParams::scalar(0.05, 0.5, 0.9, vec![]), FixedMask::default()).unwrap();
        let fit = fit_mle(&model, &spec, &y, &init, 3, seed).unwrap();
        assert!(fit.loglik >= fit.report.init_loglik);
        assert!(fit.report.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(fit.report.trace.len(), 3);
        assert_eq!(*fit.report.trace.last().unwrap(), fit.loglik);
    }
}

#[test]
fn fitted_learning_rate_matches_grid_oracle() {
    let model = make_model("poisson_exp", &ShapeMap::new()).unwrap();
    let spec = FitSpec::new(FilterKind::Implicit);
    let y = series(&model, 1.5, 0.9, 0.3, 120, 7);
    let layout = ParamLayout::new(&model, HForm::Scalar, PhiForm::Scalar, &[]).unwrap();
    let fixed = FixedMask { omega: true, phi: true, ..Default::default() };
    let init = ParamVector::new(layout, StaticParams::scalar(0.1, 1.5, 0.9, vec![]), fixed).unwrap();
    let fit = fit_mle(&model, &spec, &y, &init, 2, 3).unwrap();

    let grid: Vec<(f64, f64)> = (0..=4000)
        .map(|i| {
            let log_eta = -8.0 + 11.0 * i as f64 / 4000.0;
            (log_eta, -neg_loglik(&init.with_free(vec![log_eta]), &model, &spec, &y))
        })
        .collect();
    let (best_log_eta, best_ll) = grid.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert!(fit.loglik >= best_ll - 1e-9, "fit {} below grid {best_ll}", fit.loglik);
    assert!((fit.estimates.eta().ln() - best_log_eta).abs() < 0.01);
}

#[test]
fn local_level_learning_rate_near_steady_state_gain() {
    let mut shape = ShapeMap::new();
    shape.insert("Z".into(), ShapeValue::Matrix(vec![vec![1.0]]));
    shape.insert("Sigma_eps".into(), ShapeValue::Matrix(vec![vec![1.0]]));
    let model = make_model("gaussian_linear", &shape).unwrap();
    let y = series(&model, 0.0, 1.0, 1.0, 4000, 11);
    let layout = ParamLayout::new(&model, HForm::Scalar, PhiForm::Scalar, &[]).unwrap();
    let fixed = FixedMask { omega: true, phi: true, ..Default::default() };
    let init = ParamVector::new(layout, StaticParams::scalar(0.2, 0.0, 1.0, vec![]), fixed).unwrap();
    let fit = fit_mle(&model, &FitSpec::new(FilterKind::Implicit), &y, &init, 2, 5).unwrap();
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((fit.estimates.eta() - golden).abs() < 0.15 * golden, "eta {}", fit.estimates.eta());
}

#[test]
fn shape_floor_is_enforced() {
    let st = make_model("student_vol", &scalar_shape(&[("nu", 6.0)])).unwrap();
    let layout = ParamLayout::new(&st, HForm::Scalar, PhiForm::Scalar, &["nu"]).unwrap();
    assert!(ParamVector::new(layout, StaticParams::scalar(0.1, 0.0, 0.5, vec![1.5]), FixedMask::default()).is_err());
}
