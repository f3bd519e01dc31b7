#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use scorefilt::matcore::{Mat, SymMatrix};
use scorefilt::models::{make_model, scalar_shape, ObservationModel, ShapeMap, ShapeValue, CATALOG};
use scorefilt::simlab::rep_rng;

pub fn rng(stream: u64) -> ChaCha8Rng {
    rep_rng(20_240_601, stream)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn matrix_shape(m: &Mat) -> ShapeValue {
    ShapeValue::Matrix((0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect()).collect())
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| uniform(rng, -1.0, 1.0)).collect()).unwrap()
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> SymMatrix {
    let q = scorefilt::simlab::haar_orthogonal_rng(dim, rng);
    let d: Vec<f64> = (0..dim).map(|_| uniform(rng, lo, hi)).collect();
    SymMatrix::from_mat(q.matmul(&Mat::from_diag(&d)).matmul(&q.transpose())).unwrap()
}

/// Catalog model with representative shape parameters.
pub fn catalog_model(name: &str) -> ObservationModel {
    let shape: ShapeMap = match name {
        "negbinom_exp" => scalar_shape(&[("kappa", 4.0)]),
        "gamma_exp" => scalar_shape(&[("kappa", 1.5)]),
        "weibull_exp" => scalar_shape(&[("kappa", 1.2)]),
        "student_vol" | "student_dep" => scalar_shape(&[("nu", 6.0)]),
        "student_location" => scalar_shape(&[("nu", 4.0), ("sigma2", 0.5)]),
        "egb2_location" => scalar_shape(&[("kappa", 0.5), ("sigma2", 1.3)]),
        "gaussian_linear" => {
            let mut r = rng(99);
            let mut s = ShapeMap::new();
            s.insert("Z".into(), matrix_shape(&random_mat(&mut r, 3, 2)));
            s.insert("Sigma_eps".into(), matrix_shape(random_spd(&mut r, 3, 0.5, 2.0).as_mat()));
            s.insert("d".into(), ShapeValue::Vector(vec![0.1, -0.2, 0.3]));
            s
        }
        "least_squares" => {
            let mut s = ShapeMap::new();
            s.insert("A".into(), matrix_shape(&random_mat(&mut rng(98), 4, 3)));
            s
        }
        _ => ShapeMap::new(),
    };
    make_model(name, &shape).unwrap()
}

pub fn all_models() -> Vec<ObservationModel> {
    CATALOG.iter().map(|n| catalog_model(n)).collect()
}

/// Random interior parameter value.
pub fn random_theta(model: &ObservationModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match model.name() {
        "poisson_quad" => vec![uniform(rng, 0.2, 3.0)],
        "gauss_dep" | "student_dep" => vec![uniform(rng, -3.0, 3.0)],
        "student_location" | "egb2_location" => vec![uniform(rng, -5.0, 5.0)],
        _ => (0..model.param_dim()).map(|_| uniform(rng, -2.0, 2.0)).collect(),
    }
}

/// Random observation in the support (not necessarily likely under θ).
pub fn random_y(model: &ObservationModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match model.name() {
        "poisson_exp" | "poisson_quad" | "negbinom_exp" => vec![rng.random_range(0..20) as f64],
        "exponential_exp" | "gamma_exp" | "weibull_exp" => vec![uniform(rng, 0.01, 10.0)],
        "student_location" | "egb2_location" => vec![uniform(rng, -8.0, 8.0)],
        _ => (0..model.obs_dim()).map(|_| uniform(rng, -4.0, 4.0)).collect(),
    }
}
