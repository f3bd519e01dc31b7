//! Mean-squared-error bounds for filtered and predicted paths.
//!
//! A bound is described by four constants `(a, b, c, d)`: `a` contracts the
//! update step, `c` the prediction step, `b` is the observation-noise
//! contribution and `d` the state-drift contribution. The weighted MSE then
//! satisfies `MSE_{t|t} ≤ a MSE_{t|t−1} + b` and
//! `MSE_{t+1|t} ≤ c MSE_{t|t} + d`.

use crate::error::{domain, input, Error, Result};
use crate::filter::{FilterConfig, FilterKind};
use crate::matcore::{gamma_coeff, spectral_norm, Mat, SymMatrix};
use crate::models::{Curvature, ObservationModel};
use crate::stability::{isd_update_bound, prediction_bound};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct KnownDgp {
    pub omega0: Vec<f64>,
    pub phi0: Mat,
    /// Trace of the state-innovation covariance.
    pub sigma_xi2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DgpMoments {
    /// Bound on the second moment of the score at the pseudo-truth.
    pub sigma2: f64,
    /// Trace of the pseudo-truth increment covariance.
    pub q2: f64,
    /// `sup_t E‖θ⋆_t − ω‖²`, possibly infinite.
    pub s_omega2: f64,
    pub known: Option<KnownDgp>,
}

impl DgpMoments {
    pub fn unknown(sigma2: f64, q2: f64, s_omega2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0 && q2 >= 0.0 && s_omega2 >= 0.0) || sigma2.is_infinite() || q2.is_infinite() {
            return domain("moments must be non-negative (only s_omega2 may be infinite)");
        }
        Ok(DgpMoments { sigma2, q2, s_omega2, known: None })
    }

    /// Known linear state equation. Φ₀ must be stable or exactly the identity.
    pub fn known(sigma2: f64, omega0: Vec<f64>, phi0: Mat, sigma_xi2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0 && sigma_xi2 >= 0.0) || !sigma2.is_finite() || !sigma_xi2.is_finite() {
            return domain("moments must be finite and non-negative");
        }
        if !phi0.is_square() || phi0.rows() != omega0.len() {
            return input("phi0 must be square and match omega0");
        }
        let unit_root = phi0 == Mat::identity(phi0.rows());
        if !unit_root && spectral_radius(&phi0) >= 1.0 {
            return domain("known state equation needs spectral radius below one");
        }
        Ok(DgpMoments {
            sigma2,
            q2: sigma_xi2,
            s_omega2: f64::INFINITY,
            known: Some(KnownDgp { omega0, phi0, sigma_xi2 }),
        })
    }
}

/// Spectral radius via Gelfand's formula on repeated squares.
pub fn spectral_radius(m: &Mat) -> f64 {
    let mut p = m.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..10 {
        let s = p.frobenius();
        if s == 0.0 {
            return 0.0;
        }
        p = p.scale(1.0 / s);
        log_scale = 2.0 * (log_scale + s.ln());
        p = p.matmul(&p);
        power *= 2.0;
    }
    ((log_scale + spectral_norm(&p).ln()) / power).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub eps: f64,
    pub chi: f64,
    pub kind: FilterKind,
    pub known_dgp: bool,
}

impl BoundParams {
    pub fn ac(&self) -> f64 {
        self.a * self.c
    }
}

/// `(a, b, c, d)` for a penalty `P`, filter autoregressive matrix `Φ` and curvature.
pub fn bound_params_raw(
    curv: &Curvature,
    kind: FilterKind,
    penalty: &SymMatrix,
    phi: &Mat,
    moments: &DgpMoments,
    eps: f64,
    chi: f64,
) -> Result<BoundParams> {
    let eig = penalty.eig().values;
    let (lmin, lmax) = (eig[0], *eig.last().unwrap());
    let (a, b) = match kind {
        FilterKind::Implicit => {
            let u = isd_update_bound(curv, lmin, lmax);
            let a = u * u;
            (a, a * moments.sigma2 / lmin)
        }
        FilterKind::Explicit => {
            if curv.beta.is_infinite() {
                (f64::INFINITY, (1.0 + 1.0 / (chi * chi)) * moments.sigma2 / lmin)
            } else {
                let m = (curv.alpha_plus / lmax - curv.alpha_minus / lmin).min(2.0 - curv.beta / lmin);
                let l = curv.lipschitz;
                let a = (1.0 - m) * (1.0 - m) + chi * chi * l * l / (lmin * lmin);
                (a, (1.0 + 1.0 / (chi * chi)) * moments.sigma2 / lmin)
            }
        }
    };
    let (c, d) = match &moments.known {
        Some(k) => {
            let g0 = gamma_coeff(penalty, &k.phi0)?;
            (prediction_bound(g0, lmin, lmax), lmax * k.sigma_xi2)
        }
        None => {
            let g = gamma_coeff(penalty, phi)?;
            let c = (1.0 + eps * eps) * prediction_bound(g, lmin, lmax);
            let drift = drift_scale(phi, moments);
            (c, lmax * (1.0 + 1.0 / (eps * eps)) * drift * drift)
        }
    };
    Ok(BoundParams { a, b, c, d, eps, chi, kind, known_dgp: moments.known.is_some() })
}

/// `‖I − Φ‖₂ s_ω + q`; the first term vanishes for a unit-root filter.
fn drift_scale(phi: &Mat, moments: &DgpMoments) -> f64 {
    let k = phi.rows();
    let i_minus_phi = Mat::identity(k).sub(phi);
    let lev = spectral_norm(&i_minus_phi);
    let level = if lev == 0.0 { 0.0 } else { lev * moments.s_omega2.sqrt() };
    level + moments.q2.sqrt()
}

pub fn bound_params(
    model: &ObservationModel,
    cfg: &FilterConfig,
    moments: &DgpMoments,
    eps: f64,
    chi: f64,
) -> Result<BoundParams> {
    bound_params_raw(&model.curvature(), cfg.kind(), cfg.penalty(), cfg.phi(), moments, eps, chi)
}

/// P-weighted filtered-MSE bound after `t ≥ 1` steps.
pub fn finite_sample_bound(bp: &BoundParams, mse_1_0: f64, t: u32) -> Result<f64> {
    if t == 0 {
        return input("t must be positive");
    }
    if !(bp.a.is_finite() && bp.b.is_finite() && bp.c.is_finite() && bp.d.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let ac = bp.ac();
    if (ac - 1.0).abs() <= 1e-15 {
        return Err(Error::Degenerate);
    }
    let t = t as i32;
    let geo = |n: i32| (1.0 - ac.powi(n)) / (1.0 - ac);
    Ok(bp.a.powi(t) * bp.c.powi(t - 1) * mse_1_0 + geo(t) * bp.b + geo(t - 1) * bp.a * bp.d)
}

/// Limiting P-weighted bounds `(filtered, predicted)`.
pub fn asymptotic_bounds(bp: &BoundParams) -> Result<(f64, f64)> {
    let ac = bp.ac();
    if !(ac < 1.0) || !bp.b.is_finite() || !bp.d.is_finite() {
        return Err(Error::NoFiniteBound(format!("a*c = {ac}, b = {}, d = {}", bp.b, bp.d)));
    }
    let den = 1.0 - ac;
    Ok(((bp.b + bp.a * bp.d) / den, (bp.b * bp.c + bp.d) / den))
}

/// Converts a P-weighted bound to a W-weighted one (W = I when `None`).
pub fn to_euclidean(bound_p: f64, penalty: &SymMatrix, weight: Option<&SymMatrix>) -> f64 {
    let wmax = weight.map_or(1.0, |w| w.lambda_max());
    bound_p * wmax / penalty.lambda_min()
}

/// Optimal Young parameter ε² for the implicit filter.
pub fn optimal_eps_isd(tau_im: f64, sigma2: f64, penalty: &SymMatrix, phi: &Mat, s_omega: f64, q: f64) -> f64 {
    if tau_im == 0.0 {
        return f64::INFINITY;
    }
    let eig = penalty.eig().values;
    let (lmin, lmax) = (eig[0], *eig.last().unwrap());
    let lev = spectral_norm(&Mat::identity(phi.rows()).sub(phi));
    let drift = if lev == 0.0 { q } else { lev * s_omega + q };
    let ratio = sigma2 / (lmax * lmin * drift * drift);
    (1.0 - tau_im) / (tau_im + (tau_im + tau_im * (1.0 - tau_im) * ratio).sqrt())
}

/// Optimal scalar penalty ρ for the implicit filter under a known state equation.
pub fn optimal_rho_isd(alpha: f64, sigma2: f64, sigma_xi2: f64, phi0: &Mat) -> Result<f64> {
    if !(alpha > 0.0) {
        return domain("optimal penalty needs alpha > 0");
    }
    if !(sigma_xi2 > 0.0) {
        return domain("optimal penalty needs positive state noise");
    }
    if sigma2 < 0.0 {
        return domain("sigma2 must be non-negative");
    }
    let f2 = spectral_norm(phi0).powi(2);
    let a2s = alpha * alpha * sigma_xi2;
    let lead = sigma2 * (1.0 - f2) - a2s;
    let disc = (a2s - sigma2 * (1.0 - f2)).powi(2) + 4.0 * alpha * alpha * sigma2 * sigma_xi2;
    Ok(((lead + disc.sqrt()) / (2.0 * alpha * sigma_xi2)).max(0.0))
}

/// Euclidean filtered-MSE bound for `P = ρI` under a known state equation.
pub fn isd_rho_objective(rho: f64, alpha: f64, sigma2: f64, sigma_xi2: f64, phi0_norm: f64) -> f64 {
    let den = (rho + alpha).powi(2) - rho * rho * phi0_norm * phi0_norm;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (sigma2 + rho * rho * sigma_xi2) / den
}

/// Bound-minimizing learning rate for an AR(1) state observed in Gaussian noise.
pub fn optimal_eta_ar1(phi0: f64, sigma_eps2: f64, sigma_xi2: f64) -> f64 {
    let r = 1.0 - phi0 * phi0;
    let disc = sigma_xi2 * sigma_xi2 + sigma_eps2 * sigma_eps2 * r * r + 2.0 * sigma_xi2 * sigma_eps2 * (1.0 + phi0 * phi0);
    0.5 * (sigma_xi2 - sigma_eps2 * r + disc.sqrt())
}

/// Euclidean filtered-MSE bound of the AR(1)-plus-noise implicit filter.
pub fn ar1_bound(eta: f64, phi0: f64, sigma_eps2: f64, sigma_xi2: f64) -> f64 {
    let se4 = sigma_eps2 * sigma_eps2;
    (eta * eta * sigma_eps2 + sigma_xi2 * se4) / (2.0 * eta * sigma_eps2 + eta * eta + (1.0 - phi0 * phi0) * se4)
}

/// Moments for the quadratic-link Poisson filter when the true log-intensity
/// is a stationary Gaussian AR(1).
pub fn poisson_quad_moments(omega0: f64, phi0: f64, sigma_xi: f64, omega: f64) -> Result<DgpMoments> {
    if !(phi0.abs() < 1.0) {
        return domain("poisson_quad_moments needs a stationary state (|phi0| < 1)");
    }
    let sx2 = sigma_xi * sigma_xi;
    let v = sx2 / (1.0 - phi0 * phi0);
    let q2 = 2.0 * (omega0 + 0.5 * v).exp() - 2.0 * (omega0 + sx2 / (4.0 * (1.0 - phi0))).exp();
    let s_omega2 = (omega0 + 0.5 * v).exp() + omega * omega - 2.0 * omega * (0.5 * omega0 + v / 8.0).exp();
    DgpMoments::unknown(4.0, q2.max(0.0), s_omega2.max(0.0))
}

/// Which parameters `minimize_bound` searches over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreeParams {
    /// Learning rate η with `P = I/η`; χ and ε are profiled out.
    Eta,
    /// Learning rate and χ searched jointly (ESD); ε profiled out.
    EtaChi,
    /// Young parameter ε at a fixed learning rate.
    Eps { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundOptimum {
    pub eta: f64,
    pub chi: f64,
    pub eps: f64,
    /// Euclidean asymptotic filtered-MSE bound.
    pub bound: f64,
}

pub const PROBE_POINTS: usize = 64;

/// Minimizes `f` over `[lo, hi]` on a log scale: probe grid, then golden section.
pub fn minimize_log_scale(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / (PROBE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..PROBE_POINTS).map(|i| llo + step * i as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| f(g.exp())).collect();
    let mut best = 0;
    for i in 1..PROBE_POINTS {
        if vals[i] < vals[best] || (vals[best].is_nan() && !vals[i].is_nan()) {
            best = i;
        }
    }
    if !vals[best].is_finite() {
        return (grid[best].exp(), f64::INFINITY);
    }
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(PROBE_POINTS - 1)];
    let g = |x: f64| {
        let v = f(x.exp());
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - invphi * (b - a);
    let mut x2 = a + invphi * (b - a);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = g(x2);
        }
    }
    let (xr, fr) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if fr <= vals[best] {
        (xr.exp(), fr)
    } else {
        (grid[best].exp(), vals[best])
    }
}

const ETA_RANGE: (f64, f64) = (1e-6, 1e6);
const CHI_RANGE: (f64, f64) = (1e-4, 1e4);
const EPS_RANGE: (f64, f64) = (1e-4, 1e4);

/// Numerically minimizes the Euclidean asymptotic filtered-MSE bound with `P = I/η`.
///
/// `phi` is the filter's autoregressive matrix, used only without a known state equation.
pub fn minimize_bound(
    curv: &Curvature,
    kind: FilterKind,
    moments: &DgpMoments,
    phi: &Mat,
    over: FreeParams,
) -> Result<BoundOptimum> {
    let k = phi.rows();
    let eval = |eta: f64, eps: f64, chi: f64| -> f64 {
        let p = SymMatrix::scalar_identity(k, 1.0 / eta);
        match bound_params_raw(curv, kind, &p, phi, moments, eps, chi).and_then(|bp| asymptotic_bounds(&bp)) {
            Ok((f, _)) => f * eta,
            Err(_) => f64::INFINITY,
        }
    };
    // best ε for a given (η, χ)
    let best_eps = |eta: f64, chi: f64| -> (f64, f64) {
        if moments.known.is_some() {
            return (f64::NAN, eval(eta, 1.0, chi));
        }
        if kind == FilterKind::Implicit {
            let p = SymMatrix::scalar_identity(k, 1.0 / eta);
            let g = match gamma_coeff(&p, phi) {
                Ok(g) => g,
                Err(_) => return (f64::NAN, f64::INFINITY),
            };
            let u = isd_update_bound(curv, 1.0 / eta, 1.0 / eta);
            let tau = prediction_bound(g, 1.0 / eta, 1.0 / eta) * u * u;
            if !(tau < 1.0) {
                return (f64::NAN, f64::INFINITY);
            }
            let e2 = optimal_eps_isd(tau, moments.sigma2, &p, phi, moments.s_omega2.sqrt(), moments.q2.sqrt());
            if e2.is_infinite() {
                let (e, v) = minimize_log_scale(|e| eval(eta, e, chi), EPS_RANGE.0, EPS_RANGE.1);
                return (e, v);
            }
            let e = e2.sqrt();
            return (e, eval(eta, e, chi));
        }
        minimize_log_scale(|e| eval(eta, e, chi), EPS_RANGE.0, EPS_RANGE.1)
    };
    let profile = |eta: f64| -> (f64, f64, f64) {
        match kind {
            FilterKind::Implicit => {
                let (e, v) = best_eps(eta, 1.0);
                (e, f64::NAN, v)
            }
            FilterKind::Explicit => {
                let (chi, v) = minimize_log_scale(|c| best_eps(eta, c).1, CHI_RANGE.0, CHI_RANGE.1);
                (best_eps(eta, chi).0, chi, v)
            }
        }
    };
    let out = match over {
        FreeParams::Eta | FreeParams::EtaChi => {
            let (eta, _) = minimize_log_scale(|eta| profile(eta).2, ETA_RANGE.0, ETA_RANGE.1);
            let (eps, chi, bound) = profile(eta);
            BoundOptimum { eta, chi, eps, bound }
        }
        FreeParams::Eps { eta } => {
            if moments.known.is_some() {
                return input("the Young parameter is free only without a known state equation");
            }
            let chi = if kind == FilterKind::Explicit {
                minimize_log_scale(|c| minimize_log_scale(|e| eval(eta, e, c), EPS_RANGE.0, EPS_RANGE.1).1, CHI_RANGE.0, CHI_RANGE.1).0
            } else {
                1.0
            };
            let (eps, bound) = minimize_log_scale(|e| eval(eta, e, chi), EPS_RANGE.0, EPS_RANGE.1);
            BoundOptimum { eta, chi, eps, bound }
        }
    };
    if !out.bound.is_finite() {
        return Err(Error::NoFiniteBound("no finite bound in the search bracket".into()));
    }
    Ok(out)
}
