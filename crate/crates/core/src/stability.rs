//! Invertibility certificates for score-driven filters.
//!
//! The composite map `θ_{t−1|t−1} ↦ θ_{t|t}` is a contraction in the
//! P-weighted norm whenever the squared contraction coefficient τ is below
//! one. τ factors into a prediction-step bound (depending on
//! γ = λ_min(P − Φ'PΦ)) times the squared update-step bound (depending on the
//! curvature constants α, β).

use crate::error::Result;
use crate::filter::{update, FilterConfig};
use crate::matcore::{gamma_coeff, Mat, SymMatrix};
use crate::models::{curvature_constants, Curvature, ObservationModel};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub gamma: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub alpha: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub prediction_norm_bound: f64,
    pub update_norm_bound_isd: f64,
    pub update_norm_bound_esd: f64,
    pub tau_im: f64,
    pub tau_ex: f64,
    pub assumption2_ok: bool,
    pub certificate_isd: bool,
    pub certificate_esd: bool,
}

/// Bound on `‖Φ‖²_P`.
pub fn prediction_bound(gamma: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    1.0 - gamma.max(0.0) / lambda_max + (-gamma).max(0.0) / lambda_min
}

/// Bound on the P-weighted norm of the implicit update Jacobian.
pub fn isd_update_bound(c: &Curvature, lambda_min: f64, lambda_max: f64) -> f64 {
    if lambda_min <= c.alpha_minus {
        return f64::INFINITY;
    }
    1.0 - c.alpha_plus / (lambda_max + c.alpha_plus) + c.alpha_minus / (lambda_min - c.alpha_minus)
}

/// Bound on the P-weighted norm of the explicit update Jacobian.
pub fn esd_update_bound(c: &Curvature, lambda_min: f64, lambda_max: f64) -> f64 {
    if c.beta.is_infinite() {
        return f64::INFINITY;
    }
    1.0 - (c.alpha_plus / lambda_max - c.alpha_minus / lambda_min).min(2.0 - c.beta / lambda_min)
}

pub fn tau_implicit(c: &Curvature, gamma: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    let u = isd_update_bound(c, lambda_min, lambda_max);
    if u.is_infinite() {
        return f64::INFINITY;
    }
    prediction_bound(gamma, lambda_min, lambda_max) * u * u
}

pub fn tau_explicit(c: &Curvature, gamma: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    if c.beta.is_infinite() {
        return f64::INFINITY;
    }
    let m = (c.alpha_plus / lambda_max - c.alpha_minus / lambda_min).min((2.0 * lambda_min - c.beta) / lambda_min);
    prediction_bound(gamma, lambda_min, lambda_max) * (1.0 - m) * (1.0 - m)
}

/// Certificate computed from curvature constants, penalty and autoregressive matrix.
pub fn certify(curv: &Curvature, penalty: &SymMatrix, phi: &Mat) -> Result<StabilityReport> {
    let gamma = gamma_coeff(penalty, phi)?;
    let eig = penalty.eig().values;
    let (lmin, lmax) = (eig[0], *eig.last().unwrap());
    let tau_im = tau_implicit(curv, gamma, lmin, lmax);
    let tau_ex = tau_explicit(curv, gamma, lmin, lmax);
    let assumption2_ok = lmin > curv.alpha_minus;
    Ok(StabilityReport {
        gamma,
        gamma_plus: gamma.max(0.0),
        gamma_minus: (-gamma).max(0.0),
        alpha: curv.alpha,
        alpha_plus: curv.alpha_plus,
        alpha_minus: curv.alpha_minus,
        beta: curv.beta,
        lambda_min: lmin,
        lambda_max: lmax,
        prediction_norm_bound: prediction_bound(gamma, lmin, lmax),
        update_norm_bound_isd: isd_update_bound(curv, lmin, lmax),
        update_norm_bound_esd: esd_update_bound(curv, lmin, lmax),
        tau_im,
        tau_ex,
        assumption2_ok,
        certificate_isd: assumption2_ok && tau_im < 1.0,
        certificate_esd: assumption2_ok && tau_ex < 1.0,
    })
}

pub fn stability_report(model: &ObservationModel, cfg: &FilterConfig) -> Result<StabilityReport> {
    certify(&model.curvature(), cfg.penalty(), cfg.phi())
}

/// Certificates for the scaled Student's t location filter with scalar φ and η.
pub fn student_conditions(phi: f64, eta: f64) -> (bool, bool) {
    let curv = curvature_constants(-0.125, 1.0);
    let p = SymMatrix::from_diag(&[1.0 / eta]);
    match certify(&curv, &p, &Mat::scalar(phi)) {
        Ok(r) => (r.certificate_esd, r.certificate_isd),
        Err(_) => (false, false),
    }
}

/// ESD condition `φ²(ϰψ′(ϰ)η − 1)² < 1` for the scaled EGB2 location filter.
pub fn egb2_esd_condition(phi: f64, eta: f64, kappa: f64) -> (f64, bool) {
    let beta = kappa * crate::models::trigamma(kappa);
    let inner = beta * eta - 1.0;
    let lhs = phi * phi * inner * inner;
    (lhs, lhs < 1.0)
}

/// Squared P-weighted gaps between two filter runs started at different points.
///
/// Entry 0 is the initial gap; entry t is the gap after t updates. Once either
/// run produces a non-finite value the remaining gaps are +∞.
pub fn empirical_invertibility(
    cfg: &FilterConfig,
    series: &[Vec<f64>],
    theta0_a: &[f64],
    theta0_b: &[f64],
) -> Result<Vec<f64>> {
    let p = cfg.penalty();
    let gap = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        p.quad_form(&d).max(0.0)
    };
    let mut a = theta0_a.to_vec();
    let mut b = theta0_b.to_vec();
    let mut out = Vec::with_capacity(series.len() + 1);
    out.push(gap(&a, &b));
    for y in series {
        let na = update(cfg, &crate::filter::predict(cfg, &a), y)?;
        let nb = update(cfg, &crate::filter::predict(cfg, &b), y)?;
        if na.iter().chain(&nb).any(|v| !v.is_finite()) {
            out.resize(series.len() + 1, f64::INFINITY);
            return Ok(out);
        }
        out.push(gap(&na, &nb));
        a = na;
        b = nb;
    }
    Ok(out)
}
