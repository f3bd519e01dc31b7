//! Score-driven update and prediction steps.
//!
//! The implicit (ISD) update solves
//! `argmax_θ ℓ(y|θ) − ½‖θ − θ_pred‖²_P`; the explicit (ESD) update takes one
//! gradient step `θ_pred + H ∇ℓ(y|θ_pred)` with `H = P⁻¹`. Both are followed
//! by the linear prediction `θ_pred = (I − Φ)ω + Φ θ_upd`.
//!
//! Closed forms are used for the linear-Gaussian models, the quadratic-link
//! Poisson model and the Student's t location model; everything else goes
//! through a damped Newton-Raphson iteration started at the prediction.

use crate::error::{input, Error, Result};
use crate::matcore::{norm2, Cholesky, Mat, SymMatrix};
use crate::models::{ObservationModel, ParamSpace};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const DIVERGENCE_GUARD: f64 = 1e12;
const NR_MAX_ITER: usize = 50;
const NR_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 60;
const CLAMP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Implicit,
    Explicit,
}

impl FilterKind {
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Implicit => "isd",
            FilterKind::Explicit => "esd",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    kind: FilterKind,
    omega: Vec<f64>,
    phi: Mat,
    penalty: SymMatrix,
    learning_rate: SymMatrix,
    zeta: f64,
    theta_init: Vec<f64>,
    model: Arc<ObservationModel>,
    drift: Vec<f64>,
    linear: Option<Cholesky>,
}

pub struct FilterBuilder {
    model: Arc<ObservationModel>,
    kind: FilterKind,
    omega: Option<Vec<f64>>,
    phi: Option<Mat>,
    penalty: Option<SymMatrix>,
    zeta: f64,
    theta_init: Option<Vec<f64>>,
    relaxed: bool,
}

impl FilterBuilder {
    pub fn omega(mut self, omega: Vec<f64>) -> Self {
        self.omega = Some(omega);
        self
    }

    pub fn phi(mut self, phi: Mat) -> Self {
        self.phi = Some(phi);
        self
    }

    pub fn phi_scalar(self, phi: f64) -> Self {
        let k = self.model.param_dim();
        self.phi(Mat::identity(k).scale(phi))
    }

    pub fn penalty(mut self, p: SymMatrix) -> Self {
        self.penalty = Some(p);
        self
    }

    /// Scalar learning rate η, i.e. `P = I/η`.
    pub fn eta(self, eta: f64) -> Self {
        let k = self.model.param_dim();
        self.penalty(SymMatrix::scalar_identity(k, 1.0 / eta))
    }

    /// Learning-rate matrix `H = P⁻¹`.
    pub fn learning_rate(self, h: &SymMatrix) -> Result<Self> {
        let p = h.inverse()?;
        Ok(self.penalty(p))
    }

    pub fn zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn theta_init(mut self, theta: Vec<f64>) -> Self {
        self.theta_init = Some(theta);
        self
    }

    /// Skips the `λ_min(P) > α⁻` check. Only honoured for models whose
    /// implicit update is computed as a global maximizer in closed form.
    pub fn relax_penalty_condition(mut self, relaxed: bool) -> Self {
        self.relaxed = relaxed;
        self
    }

    pub fn build(self) -> Result<FilterConfig> {
        let model = self.model;
        let k = model.param_dim();
        let omega = self.omega.unwrap_or_else(|| vec![0.0; k]);
        let phi = self.phi.unwrap_or_else(|| Mat::identity(k));
        let penalty = self.penalty.unwrap_or_else(|| SymMatrix::identity(k));
        let theta_init = self.theta_init.unwrap_or_else(|| omega.clone());
        if omega.len() != k || theta_init.len() != k {
            return input(format!("omega and theta_init must have length {k}"));
        }
        if phi.rows() != k || phi.cols() != k || penalty.dim() != k {
            return input(format!("phi and penalty must be {k}x{k}"));
        }
        if omega.iter().chain(&theta_init).any(|v| !v.is_finite()) || !phi.is_finite() {
            return input("non-finite filter parameter");
        }
        if ![0.0, 0.5, 1.0].contains(&self.zeta) {
            return input(format!("zeta must be 0, 1/2 or 1, got {}", self.zeta));
        }
        if !penalty.is_positive_definite() {
            return Err(Error::Domain("penalty matrix is not positive definite".into()));
        }
        let curv = model.curvature();
        if self.kind == FilterKind::Implicit && curv.alpha_minus > 0.0 {
            let closed_form_global = model.student_location_params().is_some();
            let ok = penalty.lambda_min() > curv.alpha_minus;
            if !ok && !(self.relaxed && closed_form_global) {
                return Err(Error::Domain(format!(
                    "implicit filter needs lambda_min(P) > {} for {}",
                    curv.alpha_minus,
                    model.name()
                )));
            }
        }
        if model.param_space() == ParamSpace::NonNegative {
            let diag_ok = phi.is_diagonal() && phi.diag().iter().all(|v| (0.0..=1.0).contains(v));
            if !diag_ok || omega.iter().chain(&theta_init).any(|v| *v < 0.0) {
                return Err(Error::Domain(
                    "constrained model needs omega, theta_init >= 0 and diagonal 0 <= Phi <= I".into(),
                ));
            }
        }
        let learning_rate = penalty.inverse()?;
        let drift = Mat::identity(k).sub(&phi).matvec(&omega);
        let linear = match (self.kind, model.linear_info()) {
            (FilterKind::Implicit, Some(info)) => Some(penalty.add(info).cholesky()?),
            _ => None,
        };
        Ok(FilterConfig {
            kind: self.kind,
            omega,
            phi,
            penalty,
            learning_rate,
            zeta: self.zeta,
            theta_init,
            model,
            drift,
            linear,
        })
    }
}

impl FilterConfig {
    pub fn builder(model: Arc<ObservationModel>, kind: FilterKind) -> FilterBuilder {
        FilterBuilder {
            model,
            kind,
            omega: None,
            phi: None,
            penalty: None,
            zeta: 0.0,
            theta_init: None,
            relaxed: false,
        }
    }

    /// Scalar-parameter convenience constructor.
    pub fn scalar(model: Arc<ObservationModel>, kind: FilterKind, omega: f64, phi: f64, eta: f64) -> Result<Self> {
        FilterConfig::builder(model, kind).omega(vec![omega]).phi_scalar(phi).eta(eta).build()
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn phi(&self) -> &Mat {
        &self.phi
    }

    pub fn penalty(&self) -> &SymMatrix {
        &self.penalty
    }

    pub fn learning_rate(&self) -> &SymMatrix {
        &self.learning_rate
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn theta_init(&self) -> &[f64] {
        &self.theta_init
    }

    pub fn model(&self) -> &ObservationModel {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<ObservationModel> {
        &self.model
    }

    fn scalar_penalty(&self) -> f64 {
        self.penalty[(0, 0)]
    }
}

pub fn predict(cfg: &FilterConfig, theta_upd: &[f64]) -> Vec<f64> {
    let mut out = cfg.phi.matvec(theta_upd);
    for (o, d) in out.iter_mut().zip(&cfg.drift) {
        *o += d;
    }
    out
}

pub fn update_explicit(cfg: &FilterConfig, theta_pred: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let model = cfg.model();
    let score = model.score(y, theta_pred);
    if score.iter().any(|s| !s.is_finite()) {
        return Ok(vec![f64::NAN; theta_pred.len()]);
    }
    let step = if cfg.zeta > 0.0 {
        let info = model.fisher(theta_pred)?;
        let zeta = cfg.zeta;
        let scaled = info.map_eigenvalues(|l| l.powf(-zeta)).matvec(&score);
        cfg.learning_rate.matvec(&scaled)
    } else {
        cfg.learning_rate.matvec(&score)
    };
    Ok(theta_pred.iter().zip(&step).map(|(a, b)| a + b).collect())
}

/// Explicit step with an arbitrary gain matrix `H`.
pub fn explicit_update_with_gain(model: &ObservationModel, gain: &Mat, theta_pred: &[f64], y: &[f64]) -> Vec<f64> {
    let step = gain.matvec(&model.score(y, theta_pred));
    theta_pred.iter().zip(&step).map(|(a, b)| a + b).collect()
}

pub fn update_implicit(cfg: &FilterConfig, theta_pred: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let model = cfg.model();
    if let Some(chol) = &cfg.linear {
        let (_, b) = model.linear_terms(y).expect("linear model");
        let mut rhs = cfg.penalty.matvec(theta_pred);
        for (r, bi) in rhs.iter_mut().zip(&b) {
            *r += bi;
        }
        return Ok(chol.solve(&rhs));
    }
    if model.is_scalar() {
        return Ok(vec![implicit_scalar(model, cfg.scalar_penalty(), theta_pred[0], y)?]);
    }
    newton_implicit(model, &cfg.penalty, theta_pred, y)
}

/// Implicit step with an arbitrary penalty, dispatching to closed forms.
pub fn implicit_update_with_penalty(
    model: &ObservationModel,
    penalty: &SymMatrix,
    theta_pred: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    if let Some((info, b)) = model.linear_terms(y) {
        let chol = penalty.add(&info).cholesky()?;
        let mut rhs = penalty.matvec(theta_pred);
        for (r, bi) in rhs.iter_mut().zip(&b) {
            *r += bi;
        }
        return Ok(chol.solve(&rhs));
    }
    if model.is_scalar() {
        return Ok(vec![implicit_scalar(model, penalty[(0, 0)], theta_pred[0], y)?]);
    }
    newton_implicit(model, penalty, theta_pred, y)
}

fn implicit_scalar(model: &ObservationModel, p: f64, theta_pred: f64, y: &[f64]) -> Result<f64> {
    if let Some((nu, sigma2)) = model.student_location_params() {
        return Ok(update_student_cubic(1.0 / p, nu, sigma2.sqrt(), theta_pred, y[0]).0);
    }
    if model.name() == "poisson_quad" {
        return Ok(update_poisson_quadratic(1.0 / p, theta_pred, y[0]));
    }
    newton_scalar(model, p, theta_pred, y)
}

fn scalar_objective(model: &ObservationModel, p: f64, theta_pred: f64, y: &[f64], th: f64) -> f64 {
    let d = th - theta_pred;
    model.ell(y, &[th]) - 0.5 * p * d * d
}

fn newton_scalar(model: &ObservationModel, p: f64, theta_pred: f64, y: &[f64]) -> Result<f64> {
    let constrained = model.param_space() == ParamSpace::NonNegative;
    let tol = NR_TOL * (1.0 + (p * theta_pred).abs());
    let j0 = scalar_objective(model, p, theta_pred, y, theta_pred);
    let mut th = if constrained { theta_pred.max(CLAMP_FLOOR) } else { theta_pred };
    let mut j = scalar_objective(model, p, theta_pred, y, th);
    let foc = |t: f64| model.scalar_derivs(y, t).0 - p * (t - theta_pred);
    let mut converged = false;
    for _ in 0..NR_MAX_ITER {
        let (s, h) = model.scalar_derivs(y, th);
        let g = s - p * (th - theta_pred);
        if !g.is_finite() {
            break;
        }
        if g.abs() <= tol {
            converged = true;
            break;
        }
        let curv = p - h;
        let delta = if curv > 0.0 && curv.is_finite() { g / curv } else { g / p };
        let flat = 1e-14 * (1.0 + j.abs());
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let mut cand = th + step * delta;
            if constrained {
                cand = cand.max(CLAMP_FLOOR);
            }
            let jc = scalar_objective(model, p, theta_pred, y, cand);
            if jc > j || (jc >= j - flat && foc(cand).abs() < g.abs()) {
                th = cand;
                j = jc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            let (s, _) = model.scalar_derivs(y, th);
            if (s - p * (th - theta_pred)).abs() <= 1e3 * tol || delta.abs() <= 1e-9 * (1.0 + th.abs()) {
                converged = true;
            }
            break;
        }
    }
    if !converged {
        th = bracket_foc(model, p, theta_pred, y, constrained)?;
        j = scalar_objective(model, p, theta_pred, y, th);
    }
    if j < j0 - 1e-12 * (1.0 + j0.abs()) {
        return Err(Error::Internal(format!(
            "implicit update decreased the objective for {}",
            model.name()
        )));
    }
    Ok(th)
}

/// Bisection on the first-order condition after bracketing it.
fn bracket_foc(model: &ObservationModel, p: f64, theta_pred: f64, y: &[f64], constrained: bool) -> Result<f64> {
    let foc = |th: f64| model.scalar_derivs(y, th).0 - p * (th - theta_pred);
    let start = if constrained { theta_pred.max(CLAMP_FLOOR) } else { theta_pred };
    let g0 = foc(start);
    if !g0.is_finite() {
        return Err(Error::NonConvergence(format!("{}: non-finite score at start", model.name())));
    }
    if g0 == 0.0 {
        return Ok(start);
    }
    let dir = g0.signum();
    let mut width = 1.0f64.max((g0 / p).abs());
    let (mut lo, mut hi) = (start, start);
    let mut found = false;
    for _ in 0..200 {
        let mut cand = start + dir * width;
        if constrained && cand < CLAMP_FLOOR {
            cand = CLAMP_FLOOR;
        }
        let g = foc(cand);
        if !g.is_nan() && g.signum() != dir {
            if dir > 0.0 {
                lo = start;
                hi = cand;
            } else {
                lo = cand;
                hi = start;
            }
            found = true;
            break;
        }
        if constrained && cand == CLAMP_FLOOR {
            return Ok(CLAMP_FLOOR);
        }
        width *= 2.0;
    }
    if !found {
        return Err(Error::NonConvergence(format!("{}: could not bracket the update", model.name())));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// General Newton-Raphson solver for the implicit update, started at θ_pred.
pub fn newton_implicit(model: &ObservationModel, penalty: &SymMatrix, theta_pred: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let k = theta_pred.len();
    let constrained = model.param_space() == ParamSpace::NonNegative;
    let tol = NR_TOL * (1.0 + norm2(&penalty.matvec(theta_pred)));
    let objective = |th: &[f64]| {
        let d: Vec<f64> = th.iter().zip(theta_pred).map(|(a, b)| a - b).collect();
        model.ell(y, th) - 0.5 * penalty.quad_form(&d)
    };
    let grad = |th: &[f64]| {
        let d: Vec<f64> = th.iter().zip(theta_pred).map(|(a, b)| a - b).collect();
        let pd = penalty.matvec(&d);
        model.score(y, th).iter().zip(&pd).map(|(s, q)| s - q).collect::<Vec<f64>>()
    };
    let project = |th: &mut Vec<f64>| {
        if constrained {
            for v in th.iter_mut() {
                *v = v.max(CLAMP_FLOOR);
            }
        }
    };
    let j0 = objective(theta_pred);
    let mut th = theta_pred.to_vec();
    project(&mut th);
    let mut j = objective(&th);
    let mut converged = false;
    for iter in 0..NR_MAX_ITER * 20 {
        let g = grad(&th);
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if norm2(&g) <= tol {
            converged = true;
            break;
        }
        // Newton direction for the first 50 iterations, damped gradient ascent afterwards
        let curv = penalty.sub(&model.hessian(y, &th));
        let delta = match (iter < NR_MAX_ITER).then(|| curv.cholesky()).and_then(|c| c.ok()) {
            Some(c) => c.solve(&g),
            None => penalty.inverse()?.matvec(&g),
        };
        let mut step = 1.0;
        let mut moved = false;
        let gnorm = norm2(&g);
        let flat = 1e-14 * (1.0 + j.abs());
        for _ in 0..MAX_HALVINGS {
            let mut cand: Vec<f64> = th.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            project(&mut cand);
            let jc = objective(&cand);
            // near the optimum the objective is flat to rounding; fall back on the gradient norm
            if jc > j || (jc >= j - flat && norm2(&grad(&cand)) < gnorm) {
                th = cand;
                j = jc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            converged = norm2(&grad(&th)) <= 1e3 * tol;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "{}: implicit update unconverged (k={k})",
            model.name()
        )));
    }
    if j < j0 - 1e-12 * (1.0 + j0.abs()) {
        return Err(Error::Internal("implicit update decreased the objective".into()));
    }
    Ok(th)
}

/// Closed-form implicit update for the Poisson model with quadratic link μ = θ².
pub fn update_poisson_quadratic(eta: f64, theta_pred: f64, y: f64) -> f64 {
    let a = 1.0 + 2.0 * eta;
    (theta_pred + (theta_pred * theta_pred + 8.0 * eta * a * y).sqrt()) / (2.0 * a)
}

/// Implicit update for the scaled Student's t location model.
///
/// The update is `θ = (1 − w)θ_pred + w y` where `w` solves
/// `(1/ν)((y − θ_pred)/ς)²(1 − w)²w + (η + 1)w − η = 0` in (0, 1).
/// Returns `(θ_upd, w, number of distinct roots in (0, 1))`.
pub fn update_student_cubic(eta: f64, nu: f64, sigma_scale: f64, theta_pred: f64, y: f64) -> (f64, f64, usize) {
    let e = y - theta_pred;
    let c = e * e / (nu * sigma_scale * sigma_scale);
    let f = |w: f64| c * w * (1.0 - w) * (1.0 - w) + (eta + 1.0) * w - eta;
    let df = |w: f64| c * (1.0 - w) * (1.0 - 3.0 * w) + eta + 1.0;
    if !(c > 1e-14 * (eta + 1.0)) {
        let mut w = eta / (1.0 + eta);
        if c > 0.0 {
            w -= f(w) / df(w);
        }
        return (theta_pred + w * e, w, 1);
    }
    let mut roots: Vec<f64> = Vec::with_capacity(3);
    for r in cubic_real_roots(-2.0, (c + eta + 1.0) / c, -eta / c) {
        let mut w = r;
        for _ in 0..4 {
            let d = df(w);
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let next = w - f(w) / d;
            if !next.is_finite() {
                break;
            }
            w = next;
        }
        if w > -1e-10 && w < 1.0 + 1e-10 {
            let w = w.clamp(0.0, 1.0);
            if f(w).abs() <= 1e-8 * (1.0 + c + eta) && !roots.iter().any(|r| (r - w).abs() < 1e-9) {
                roots.push(w);
            }
        }
    }
    if roots.is_empty() {
        // f(0) < 0 < f(η/(1+η)), so a root is always bracketed
        let (mut lo, mut hi) = (0.0, eta / (1.0 + eta));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    let objective = |w: f64| {
        let r = (1.0 - w) * e;
        let d = w * e;
        -0.5 * (nu + 1.0) * (r * r / (nu * sigma_scale * sigma_scale)).ln_1p() * sigma_scale * sigma_scale * nu
            / (nu + 1.0)
            - 0.5 * d * d / eta
    };
    let mut best = roots[0];
    let mut best_val = objective(best);
    for &w in &roots[1..] {
        let v = objective(w);
        if v > best_val + 1e-14 * best_val.abs().max(1.0) {
            best = w;
            best_val = v;
        }
    }
    (theta_pred + best * e, best, roots.len())
}

/// Real roots of `x³ + a x² + b x + c` (trigonometric or Cardano form).
pub fn cubic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    if disc < 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    } else {
        let s = disc.sqrt();
        // pick the larger-magnitude branch to avoid cancellation
        let u = (-0.5 * q + if q <= 0.0 { s } else { -s }).cbrt();
        let x = if u == 0.0 { 0.0 } else { u - p / (3.0 * u) };
        vec![x - shift]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterOutput {
    pub predicted: Vec<Vec<f64>>,
    pub updated: Vec<Vec<f64>>,
    pub loglik_contribs: Vec<f64>,
    /// Index of the first divergent step, if any.
    pub diverged: Option<usize>,
}

impl FilterOutput {
    pub fn loglik(&self) -> f64 {
        self.loglik_contribs.iter().sum()
    }
}

fn out_of_range(v: &[f64]) -> bool {
    v.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_GUARD)
}

fn check_series(model: &ObservationModel, series: &[Vec<f64>]) -> Result<()> {
    if series.is_empty() {
        return input("empty series");
    }
    if let Some(i) = series.iter().position(|y| !model.in_support(y)) {
        return input(format!("observation {i} outside the support of {}", model.name()));
    }
    Ok(())
}

/// One filter step: update given a prediction.
pub fn update(cfg: &FilterConfig, theta_pred: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    match cfg.kind {
        FilterKind::Implicit => update_implicit(cfg, theta_pred, y),
        FilterKind::Explicit => update_explicit(cfg, theta_pred, y),
    }
}

pub fn run_filter(cfg: &FilterConfig, series: &[Vec<f64>]) -> Result<FilterOutput> {
    check_series(cfg.model(), series)?;
    let t_len = series.len();
    let k = cfg.model().param_dim();
    let mut out = FilterOutput {
        predicted: Vec::with_capacity(t_len),
        updated: Vec::with_capacity(t_len),
        loglik_contribs: Vec::with_capacity(t_len),
        diverged: None,
    };
    let mut theta = cfg.theta_init.clone();
    for (t, y) in series.iter().enumerate() {
        let pred = predict(cfg, &theta);
        if out_of_range(&pred) {
            out.diverged = Some(t);
            break;
        }
        let ll = cfg.model().log_density(y, &pred);
        let upd = match update(cfg, &pred, y) {
            Ok(u) => u,
            Err(Error::NonConvergence(_)) => vec![f64::NAN; k],
            Err(e) => return Err(e),
        };
        out.predicted.push(pred);
        out.loglik_contribs.push(ll);
        if out_of_range(&upd) {
            out.updated.push(vec![f64::NAN; k]);
            out.diverged = Some(t);
            break;
        }
        out.updated.push(upd.clone());
        theta = upd;
    }
    while out.predicted.len() < t_len {
        out.predicted.push(vec![f64::NAN; k]);
    }
    while out.updated.len() < t_len {
        out.updated.push(vec![f64::NAN; k]);
    }
    while out.loglik_contribs.len() < t_len {
        out.loglik_contribs.push(f64::NAN);
    }
    Ok(out)
}

/// Log-likelihood of a series without storing the paths.
///
/// Returns `None` when the filter diverges.
pub fn filter_loglik(cfg: &FilterConfig, series: &[Vec<f64>]) -> Result<Option<f64>> {
    check_series(cfg.model(), series)?;
    let model = cfg.model();
    if model.is_scalar() && cfg.linear.is_none() {
        let phi = cfg.phi[(0, 0)];
        let drift = cfg.drift[0];
        let p = cfg.scalar_penalty();
        let mut theta = cfg.theta_init[0];
        let mut total = 0.0;
        for y in series {
            let pred = drift + phi * theta;
            if !pred.is_finite() || pred.abs() > DIVERGENCE_GUARD {
                return Ok(None);
            }
            total += model.log_density(y, &[pred]);
            theta = match cfg.kind {
                FilterKind::Implicit => match implicit_scalar(model, p, pred, y) {
                    Ok(v) => v,
                    Err(Error::NonConvergence(_)) => return Ok(None),
                    Err(e) => return Err(e),
                },
                FilterKind::Explicit => update_explicit(cfg, &[pred], y)?[0],
            };
            if !theta.is_finite() || theta.abs() > DIVERGENCE_GUARD {
                return Ok(None);
            }
        }
        return Ok(Some(total));
    }
    let out = run_filter(cfg, series)?;
    Ok(match out.diverged {
        Some(_) => None,
        None => Some(out.loglik()),
    })
}

/// Wraps scalar observations as one-element vectors.
pub fn scalar_series(ys: &[f64]) -> Vec<Vec<f64>> {
    ys.iter().map(|&y| vec![y]).collect()
}
