//! Maximum-likelihood calibration of the static filter parameters.
//!
//! The objective is the prediction-error log-likelihood
//! `Σ_t log p(y_t | θ_{t|t−1})`. Parameters are optimized in unconstrained
//! coordinates with a Nelder-Mead simplex.

use std::cell::Cell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{input, Error, Result};
use crate::filter::{filter_loglik, FilterConfig, FilterKind};
use crate::matcore::{Mat, SymMatrix};
use crate::models::{ObservationModel, ParamSpace};

pub const MIN_SERIES_LEN: usize = 20;
pub const NM_MAX_EVALS: usize = 5000;
pub const NM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HForm {
    /// `H = ηI` with `log η` free.
    Scalar,
    /// `H = LL'` with log-diagonal Cholesky factor.
    Cholesky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PhiForm {
    Scalar,
    Diagonal,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamLayout {
    pub k: usize,
    pub h_form: HForm,
    pub phi_form: PhiForm,
    /// Shape parameters estimated alongside the filter.
    pub shape_keys: Vec<String>,
    pub nonnegative: bool,
    shape_floors: Vec<f64>,
}

impl ParamLayout {
    pub fn new(model: &ObservationModel, h_form: HForm, phi_form: PhiForm, shape_keys: &[&str]) -> Result<Self> {
        let mut floors = Vec::with_capacity(shape_keys.len());
        for key in shape_keys {
            if model.shape_scalar(key).is_none() {
                return input(format!("{} has no scalar shape `{key}`", model.name()));
            }
            let floor = match (model.name(), *key) {
                ("student_vol" | "student_dep", "nu") => 2.0,
                _ => 0.0,
            };
            floors.push(floor);
        }
        Ok(ParamLayout {
            k: model.param_dim(),
            h_form,
            phi_form,
            shape_keys: shape_keys.iter().map(|s| s.to_string()).collect(),
            nonnegative: model.param_space() == ParamSpace::NonNegative,
            shape_floors: floors,
        })
    }

    fn h_len(&self) -> usize {
        match self.h_form {
            HForm::Scalar => 1,
            HForm::Cholesky => self.k * (self.k + 1) / 2,
        }
    }

    fn phi_len(&self) -> usize {
        match self.phi_form {
            PhiForm::Scalar => 1,
            PhiForm::Diagonal => self.k,
        }
    }
}

/// Static parameters in their natural coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticParams {
    pub h: SymMatrix,
    pub omega: Vec<f64>,
    pub phi: Mat,
    pub shapes: Vec<f64>,
}

impl StaticParams {
    pub fn scalar(eta: f64, omega: f64, phi: f64, shapes: Vec<f64>) -> Self {
        StaticParams { h: SymMatrix::from_diag(&[eta]), omega: vec![omega], phi: Mat::scalar(phi), shapes }
    }

    pub fn eta(&self) -> f64 {
        self.h[(0, 0)]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FixedMask {
    pub h: bool,
    pub omega: bool,
    pub phi: bool,
    pub shapes: bool,
}

/// Static parameters as a free vector plus the values of fixed blocks.
#[derive(Debug, Clone, Serialize)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub fixed: FixedMask,
    pub free: Vec<f64>,
    anchor: StaticParams,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: StaticParams, fixed: FixedMask) -> Result<Self> {
        let l = &layout;
        if values.h.dim() != l.k || values.omega.len() != l.k || values.phi.rows() != l.k || values.phi.cols() != l.k {
            return input("static parameter dimensions do not match the layout");
        }
        if values.shapes.len() != l.shape_keys.len() {
            return input("one value per estimated shape parameter is required");
        }
        let mut free = Vec::new();
        if !fixed.h {
            match l.h_form {
                HForm::Scalar => {
                    let eta = values.h[(0, 0)];
                    if !(eta > 0.0) || !values.h.as_mat().is_diagonal() || values.h.eig().values.iter().any(|v| (v - eta).abs() > 1e-12 * eta) {
                        return input("scalar learning-rate layout needs H = eta*I with eta > 0");
                    }
                    free.push(eta.ln());
                }
                HForm::Cholesky => {
                    let c = values.h.cholesky()?;
                    let f = c.factor();
                    for i in 0..l.k {
                        for j in 0..=i {
                            free.push(if i == j { f[(i, i)].ln() } else { f[(i, j)] });
                        }
                    }
                }
            }
        }
        if !fixed.omega {
            for &w in &values.omega {
                if l.nonnegative {
                    if !(w > 0.0) {
                        return input("omega must be positive to be estimated for a constrained model");
                    }
                    free.push(w.ln());
                } else {
                    free.push(w);
                }
            }
        }
        if !fixed.phi {
            if !values.phi.is_diagonal() {
                return input("estimated Phi must be diagonal");
            }
            let d = values.phi.diag();
            let entries: Vec<f64> = match l.phi_form {
                PhiForm::Scalar => {
                    if d.iter().any(|v| *v != d[0]) {
                        return input("scalar Phi layout needs equal diagonal entries");
                    }
                    vec![d[0]]
                }
                PhiForm::Diagonal => d,
            };
            for p in entries {
                let lim_ok = if l.nonnegative { p > 0.0 && p < 1.0 } else { p.abs() < 1.0 };
                if !lim_ok {
                    return input(format!("Phi entry {p} outside the open estimation interval"));
                }
                free.push(if l.nonnegative { logit(p) } else { p.atanh() });
            }
        }
        if !fixed.shapes {
            for (v, floor) in values.shapes.iter().zip(&l.shape_floors) {
                if !(v > floor) {
                    return input(format!("shape value {v} must exceed {floor}"));
                }
                free.push((v - floor).ln());
            }
        }
        Ok(ParamVector { layout, fixed, free, anchor: values })
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn with_free(&self, free: Vec<f64>) -> ParamVector {
        ParamVector { layout: self.layout.clone(), fixed: self.fixed, free, anchor: self.anchor.clone() }
    }

    pub fn decode(&self) -> StaticParams {
        let l = &self.layout;
        let mut it = self.free.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { (0..n).map(|_| it.next().unwrap()).collect() };
        let h = if self.fixed.h {
            self.anchor.h.clone()
        } else {
            let raw = take(l.h_len());
            match l.h_form {
                HForm::Scalar => SymMatrix::scalar_identity(l.k, raw[0].exp()),
                HForm::Cholesky => {
                    let mut f = Mat::zeros(l.k, l.k);
                    let mut idx = 0;
                    for i in 0..l.k {
                        for j in 0..=i {
                            f[(i, j)] = if i == j { raw[idx].exp() } else { raw[idx] };
                            idx += 1;
                        }
                    }
                    SymMatrix::from_mat(f.matmul(&f.transpose())).unwrap_or_else(|_| SymMatrix::scalar_identity(l.k, f64::NAN))
                }
            }
        };
        let omega = if self.fixed.omega {
            self.anchor.omega.clone()
        } else {
            let raw = take(l.k);
            if l.nonnegative {
                raw.iter().map(|v| v.exp()).collect()
            } else {
                raw
            }
        };
        let phi = if self.fixed.phi {
            self.anchor.phi.clone()
        } else {
            let raw = take(l.phi_len());
            let map = |x: f64| if l.nonnegative { logistic(x) } else { x.tanh() };
            let d: Vec<f64> = match l.phi_form {
                PhiForm::Scalar => vec![map(raw[0]); l.k],
                PhiForm::Diagonal => raw.iter().map(|&x| map(x)).collect(),
            };
            Mat::from_diag(&d)
        };
        let shapes = if self.fixed.shapes {
            self.anchor.shapes.clone()
        } else {
            let raw = take(l.shape_keys.len());
            raw.iter().zip(&l.shape_floors).map(|(x, f)| f + x.exp()).collect()
        };
        StaticParams { h, omega, phi, shapes }
    }

    /// Filter configuration for the decoded parameters.
    pub fn config(&self, model: &ObservationModel, spec: &FitSpec) -> Result<FilterConfig> {
        let v = self.decode();
        let model = if self.layout.shape_keys.is_empty() {
            model.clone()
        } else {
            let updates: Vec<(String, f64)> = self.layout.shape_keys.iter().cloned().zip(v.shapes.iter().copied()).collect();
            model.with_scalars(&updates)?
        };
        FilterConfig::builder(Arc::new(model), spec.kind)
            .omega(v.omega)
            .phi(v.phi)
            .learning_rate(&v.h)?
            .zeta(spec.zeta)
            .relax_penalty_condition(spec.relax_penalty_condition)
            .build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSpec {
    pub kind: FilterKind,
    pub zeta: f64,
    pub relax_penalty_condition: bool,
}

impl FitSpec {
    pub fn new(kind: FilterKind) -> Self {
        FitSpec { kind, zeta: 0.0, relax_penalty_condition: false }
    }
}

/// Negative prediction-error log-likelihood; `+∞` on any failure.
pub fn neg_loglik(params: &ParamVector, model: &ObservationModel, spec: &FitSpec, series: &[Vec<f64>]) -> f64 {
    let Ok(cfg) = params.config(model, spec) else {
        return f64::INFINITY;
    };
    match filter_loglik(&cfg, series) {
        Ok(Some(ll)) if ll.is_finite() => -ll,
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead minimization from `x0` with an axis-aligned initial simplex.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize, tol: f64) -> NelderMeadResult {
    let n = x0.len();
    let evals = Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let v = eval(x0);
        return NelderMeadResult { x: vec![], f: v, evaluations: 1, converged: true };
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();
    let mut converged = false;
    while evals.get() < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (best, worst) = (values[0], values[n]);
        if best.is_finite() && worst - best < tol * (1.0 + best.abs()) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            values[i] = eval(&p);
            simplex[i] = p;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    NelderMeadResult { x: simplex[best].clone(), f: values[best], evaluations: evals.get(), converged }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub init_loglik: f64,
    pub restarts: usize,
    pub evaluations: usize,
    /// Whether the run that produced the optimum met the simplex tolerance.
    pub converged: bool,
    /// Best log-likelihood after each restart.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub params: ParamVector,
    pub estimates: StaticParams,
    pub loglik: f64,
    pub report: ConvergenceReport,
}

const RESTART_JITTER: f64 = 0.3;

/// Maximizes the prediction-error log-likelihood.
///
/// The first run starts at `init`; each further restart starts from the best
/// point so far with a seeded Gaussian jitter.
pub fn fit_mle(
    model: &ObservationModel,
    spec: &FitSpec,
    series: &[Vec<f64>],
    init: &ParamVector,
    restarts: usize,
    seed: u64,
) -> Result<FitResult> {
    if series.len() < MIN_SERIES_LEN {
        return input(format!("estimation needs at least {MIN_SERIES_LEN} observations, got {}", series.len()));
    }
    let objective = |x: &[f64]| neg_loglik(&init.with_free(x.to_vec()), model, spec, series);
    let init_f = objective(&init.free);
    let mut best_x = init.free.clone();
    let mut best_f = init_f;
    let mut best_converged = false;
    let mut evaluations = 1;
    let mut trace = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let runs = restarts.max(1);
    for r in 0..runs {
        let start: Vec<f64> = if r == 0 {
            init.free.clone()
        } else {
            best_x.iter().map(|v| v + RESTART_JITTER * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let res = nelder_mead(objective, &start, 0.5, NM_MAX_EVALS, NM_TOL);
        evaluations += res.evaluations;
        if res.f < best_f || (r == 0 && res.f <= best_f) {
            best_f = res.f;
            best_x = res.x;
            best_converged = res.converged;
        }
        trace.push(-best_f);
    }
    if !best_f.is_finite() {
        return Err(Error::EstimationFailed("every start produced an infinite objective".into()));
    }
    let params = init.with_free(best_x);
    Ok(FitResult {
        estimates: params.decode(),
        params,
        loglik: -best_f,
        report: ConvergenceReport { init_loglik: -init_f, restarts: runs, evaluations, converged: best_converged, trace },
    })
}

/// Static-parameter maximizer of `Σ_t ℓ(y_t | θ)` for a scalar model, used as a starting ω.
pub fn static_mle(model: &ObservationModel, series: &[Vec<f64>]) -> Result<f64> {
    if !model.is_scalar() {
        return Err(Error::Unsupported("static_mle needs a scalar parameter".into()));
    }
    let (lo, hi) = match model.param_space() {
        ParamSpace::NonNegative => (1e-6, 50.0),
        ParamSpace::AllReals => (-30.0, 30.0),
    };
    let total = |th: f64| -> f64 {
        let s: f64 = series.iter().map(|y| model.log_density(y, &[th])).sum();
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    };
    let n = 600;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| total(g)).collect();
    let best = (0..=n).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    if !vals[best].is_finite() {
        return Err(Error::EstimationFailed("static likelihood is not finite on the search grid".into()));
    }
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n)]);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 * (1.0 + a.abs()) {
        let x1 = b - r * (b - a);
        let x2 = a + r * (b - a);
        if total(x1) >= total(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    Ok(0.5 * (a + b))
}

pub const START_PHI: f64 = 0.9;
pub const START_ETA_SCALE: f64 = 0.1;

/// Static-MLE level, φ = 0.9 and a learning rate scaled by the Fisher information.
pub fn default_start(model: &ObservationModel, in_sample: &[Vec<f64>], shapes: Vec<f64>) -> Result<StaticParams> {
    let omega = static_mle(model, in_sample)?;
    let info = model.fisher(&[omega])?.lambda_max();
    let eta = START_ETA_SCALE / info.max(1e-3);
    Ok(StaticParams::scalar(eta, omega, START_PHI, shapes))
}

/// Shrinks the starting learning rate until the in-sample objective is finite.
pub fn finite_start(init: ParamVector, model: &ObservationModel, spec: &FitSpec, in_sample: &[Vec<f64>]) -> ParamVector {
    if init.fixed.h || init.layout.h_form != HForm::Scalar {
        return init;
    }
    let mut cand = init.clone();
    for _ in 0..4 {
        if neg_loglik(&cand, model, spec, in_sample).is_finite() {
            return cand;
        }
        let mut free = cand.free.clone();
        free[0] -= std::f64::consts::LN_10;
        cand = cand.with_free(free);
    }
    init
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, scalar_shape};

    #[test]
    fn round_trip_scalar() {
        let m = make_model("student_location", &scalar_shape(&[("nu", 4.0), ("sigma2", 2.0)])).unwrap();
        let layout = ParamLayout::new(&m, HForm::Scalar, PhiForm::Scalar, &["nu", "sigma2"]).unwrap();
        let v = StaticParams::scalar(0.7, -0.3, 0.95, vec![4.0, 2.0]);
        let p = ParamVector::new(layout, v.clone(), FixedMask::default()).unwrap();
        let d = p.decode();
        assert!((d.eta() - 0.7).abs() < 1e-12);
        assert!((d.omega[0] + 0.3).abs() < 1e-12);
        assert!((d.phi[(0, 0)] - 0.95).abs() < 1e-12);
        assert!((d.shapes[0] - 4.0).abs() < 1e-12 && (d.shapes[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_cholesky() {
        let m = make_model("least_squares", &{
            let mut s = crate::models::ShapeMap::new();
            s.insert("A".into(), crate::models::ShapeValue::Matrix(vec![vec![1.0, 0.0], vec![0.0, 2.0]]));
            s
        })
        .unwrap();
        let layout = ParamLayout::new(&m, HForm::Cholesky, PhiForm::Diagonal, &[]).unwrap();
        let h = SymMatrix::new(2, vec![2.0, 0.3, 0.3, 1.0]).unwrap();
        let v = StaticParams { h: h.clone(), omega: vec![1.0, -1.0], phi: Mat::from_diag(&[0.5, -0.2]), shapes: vec![] };
        let p = ParamVector::new(layout, v, FixedMask::default()).unwrap();
        let d = p.decode();
        assert!(d.h.sub(&h).as_mat().frobenius() < 1e-12);
        assert!((d.phi[(1, 1)] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn fixed_blocks_are_not_free() {
        let m = make_model("poisson_exp", &Default::default()).unwrap();
        let layout = ParamLayout::new(&m, HForm::Scalar, PhiForm::Scalar, &[]).unwrap();
        let fixed = FixedMask { omega: true, phi: true, ..Default::default() };
        let p = ParamVector::new(layout, StaticParams::scalar(0.1, 0.0, 0.98, vec![]), fixed).unwrap();
        assert_eq!(p.dim(), 1);
        let d = p.with_free(vec![(0.2f64).ln()]).decode();
        assert_eq!(d.phi[(0, 0)], 0.98);
        assert!((d.eta() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_step_gaussian_loglik() {
        let mut s = crate::models::ShapeMap::new();
        s.insert("Z".into(), crate::models::ShapeValue::Matrix(vec![vec![1.0]]));
        s.insert("Sigma_eps".into(), crate::models::ShapeValue::Matrix(vec![vec![2.0]]));
        let m = make_model("gaussian_linear", &s).unwrap();
        let layout = ParamLayout::new(&m, HForm::Scalar, PhiForm::Scalar, &[]).unwrap();
        let p = ParamVector::new(layout, StaticParams::scalar(0.5, 0.4, 0.5, vec![]), FixedMask::default()).unwrap();
        let y = 1.3;
        let want = 0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() + (y - 0.4f64).powi(2) / 4.0;
        let got = neg_loglik(&p, &m, &FitSpec::new(FilterKind::Implicit), &[vec![y]]);
        assert!((got - want).abs() < 1e-12, "{got} {want}");
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], 0.5, 5000, 1e-14);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn short_series_rejected() {
        let m = make_model("poisson_exp", &Default::default()).unwrap();
        let layout = ParamLayout::new(&m, HForm::Scalar, PhiForm::Scalar, &[]).unwrap();
        let p = ParamVector::new(layout, StaticParams::scalar(0.1, 0.0, 0.9, vec![]), FixedMask::default()).unwrap();
        let series = vec![vec![1.0]; 5];
        assert!(matches!(fit_mle(&m, &FitSpec::new(FilterKind::Implicit), &series, &p, 1, 0), Err(Error::Input(_))));
    }

    #[test]
    fn static_mle_poisson_is_log_mean() {
        let m = make_model("poisson_exp", &Default::default()).unwrap();
        let series = crate::filter::scalar_series(&[1.0, 2.0, 3.0, 6.0]);
        assert!((static_mle(&m, &series).unwrap() - 3f64.ln()).abs() < 1e-8);
    }
}
