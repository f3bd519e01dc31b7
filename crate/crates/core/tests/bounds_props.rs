mod common;

use common::{random_mat, random_spd, rng, uniform};
use scorefilt::bounds::{
    ar1_bound, asymptotic_bounds, bound_params_raw, minimize_bound, optimal_eps_isd, optimal_eta_ar1, optimal_rho_isd,
    to_euclidean, DgpMoments, FreeParams, PROBE_POINTS,
};
use scorefilt::filter::FilterKind;
use scorefilt::matcore::{spectral_norm, Mat, SymMatrix};
use scorefilt::models::curvature_constants;
use scorefilt::simlab::LinearStateSpace;
use scorefilt::stability::certify;

/// Golden-section minimizer on `[lo, hi]`, used as an oracle.
fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..300 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn optimal_eps_matches_numeric_minimum() {
    let mut r = rng(900);
    let mut checked = 0;
    while checked < 100 {
        let dim = 1 + checked % 3;
        let alpha = uniform(&mut r, 0.05, 2.0);
        let curv = curvature_constants(alpha, f64::INFINITY);
        let p = random_spd(&mut r, dim, 0.2, 5.0);
        let phi = random_mat(&mut r, dim, dim).scale(uniform(&mut r, 0.1, 0.6));
        let tau = certify(&curv, &p, &phi).unwrap().tau_im;
        if !(tau > 0.0 && tau < 1.0) {
            continue;
        }
        let (sigma2, q2, s2) = (uniform(&mut r, 0.1, 10.0), uniform(&mut r, 0.01, 2.0), uniform(&mut r, 0.0, 4.0));
        let moments = DgpMoments::unknown(sigma2, q2, s2).unwrap();
        let bound = |log_eps: f64| {
            let bp = bound_params_raw(&curv, FilterKind::Implicit, &p, &phi, &moments, log_eps.exp(), 1.0).unwrap();
            asymptotic_bounds(&bp).map_or(f64::INFINITY, |b| b.0)
        };
        let eps2 = optimal_eps_isd(tau, sigma2, &p, &phi, s2.sqrt(), q2.sqrt());
        let oracle = golden(bound, -12.0, 6.0).exp();
        let eps = eps2.sqrt();
        let rel_arg = (eps - oracle).abs() / oracle;
        let rel_val = (bound(eps.ln()) - bound(oracle.ln())) / bound(oracle.ln());
        assert!(rel_arg < 1e-4 || rel_val.abs() < 1e-10, "eps {eps} vs oracle {oracle}");
        assert!(rel_val <= 1e-12, "closed form not optimal: {rel_val}");
        checked += 1;
    }
}

#[test]
fn optimal_rho_matches_numeric_minimum() {
    let mut r = rng(901);
    for i in 0..100 {
        let dim = 1 + i % 3;
        let alpha = uniform(&mut r, 0.05, 3.0);
        let curv = curvature_constants(alpha, alpha + 1.0);
        let phi0 = random_mat(&mut r, dim, dim);
        let phi0 = phi0.scale(uniform(&mut r, 0.0, 0.95) / spectral_norm(&phi0));
        let (sigma2, sx2) = (uniform(&mut r, 0.1, 10.0), uniform(&mut r, 0.01, 3.0));
        let moments = DgpMoments::known(sigma2, vec![0.0; dim], phi0.clone(), sx2).unwrap();
        let euclid = |log_rho: f64| {
            let p = SymMatrix::scalar_identity(dim, log_rho.exp());
            let bp = bound_params_raw(&curv, FilterKind::Implicit, &p, &phi0, &moments, 1.0, 1.0).unwrap();
            asymptotic_bounds(&bp).map_or(f64::INFINITY, |b| to_euclidean(b.0, &p, None))
        };
        let rho = optimal_rho_isd(alpha, sigma2, sx2, &phi0).unwrap();
        let oracle = golden(euclid, -15.0, 10.0).exp();
        assert!((rho - oracle).abs() <= 1e-5 * oracle, "rho {rho} vs oracle {oracle}");
    }
}

#[test]
fn minimized_bound_never_exceeds_probe_grid() {
    let mut r = rng(902);
    for i in 0..30 {
        let alpha = uniform(&mut r, 0.05, 2.0);
        let beta = alpha + uniform(&mut r, 0.0, 3.0);
        let curv = curvature_constants(alpha, beta);
        let phi0 = Mat::scalar(uniform(&mut r, -0.95, 1.0));
        let moments = DgpMoments::known(uniform(&mut r, 0.1, 10.0), vec![0.0], phi0.clone(), uniform(&mut r, 0.01, 3.0))
            .unwrap_or_else(|_| DgpMoments::known(1.0, vec![0.0], Mat::scalar(0.5), 1.0).unwrap());
        let kind = if i % 2 == 0 { FilterKind::Implicit } else { FilterKind::Explicit };
        let eval = |eta: f64, chi: f64| {
            let p = SymMatrix::from_diag(&[1.0 / eta]);
            let bp = bound_params_raw(&curv, kind, &p, &phi0, &moments, 1.0, chi).unwrap();
            asymptotic_bounds(&bp).map_or(f64::INFINITY, |b| b.0 * eta)
        };
        let probes: Vec<f64> = (0..PROBE_POINTS).map(|j| (1e-6f64.ln() + (1e12f64.ln()) * j as f64 / (PROBE_POINTS - 1) as f64).exp()).collect();
        let chis: Vec<f64> = (0..PROBE_POINTS).map(|j| (1e-4f64.ln() + (1e8f64.ln()) * j as f64 / (PROBE_POINTS - 1) as f64).exp()).collect();
        let best_probe = probes
            .iter()
            .flat_map(|&e| chis.iter().map(move |&c| (e, c)))
            .map(|(e, c)| if kind == FilterKind::Implicit { eval(e, 1.0) } else { eval(e, c) })
            .fold(f64::INFINITY, f64::min);
        let over = if kind == FilterKind::Implicit { FreeParams::Eta } else { FreeParams::EtaChi };
        match minimize_bound(&curv, kind, &moments, &phi0, over) {
            Ok(opt) => assert!(opt.bound <= best_probe * (1.0 + 1e-9), "{} > {best_probe}", opt.bound),
            Err(_) => assert!(best_probe.is_infinite()),
        }
    }
}

#[test]
fn small_young_parameters_recover_tau() {
    let mut r = rng(903);
    for _ in 0..50 {
        let alpha = uniform(&mut r, 0.05, 1.0);
        let curv = curvature_constants(alpha, alpha + uniform(&mut r, 0.0, 1.0));
        let p = SymMatrix::from_diag(&[uniform(&mut r, 0.6, 5.0)]);
        let phi = Mat::scalar(uniform(&mut r, -0.9, 0.9));
        let rep = certify(&curv, &p, &phi).unwrap();
        let unknown = DgpMoments::unknown(1.0, 0.5, 2.0).unwrap();
        let im = bound_params_raw(&curv, FilterKind::Implicit, &p, &phi, &unknown, 1e-4, 1e-4).unwrap();
        let ex = bound_params_raw(&curv, FilterKind::Explicit, &p, &phi, &unknown, 1e-4, 1e-4).unwrap();
        assert!((im.ac() - rep.tau_im).abs() <= 1e-3 * rep.tau_im);
        assert!((ex.ac() - rep.tau_ex).abs() <= 1e-3 * rep.tau_ex.max(1e-12));
        let known = DgpMoments::known(1.0, vec![0.0], phi.clone(), 0.5).unwrap();
        let kn = bound_params_raw(&curv, FilterKind::Implicit, &p, &phi, &known, 1.0, 1.0).unwrap();
        assert!((kn.ac() - rep.tau_im).abs() <= 1e-15 * (1.0 + rep.tau_im));
    }
}

#[test]
fn local_level_bound_is_exact() {
    for i in 0..20 {
        let phi0 = [1.0, 0.95, 0.8, 0.5, 0.0][i % 5];
        let se2 = [0.25, 1.0, 4.0, 9.0][i / 5 % 4];
        let sx2 = [1.0, 0.3, 2.0, 0.05][(i + i / 5) % 4];
        let ss = LinearStateSpace {
            d: vec![0.0],
            z: Mat::scalar(1.0),
            sigma_eps: SymMatrix::from_diag(&[se2]),
            omega0: vec![0.0],
            phi0: Mat::scalar(phi0),
            sigma_xi: SymMatrix::from_diag(&[sx2]),
        };
        let (p_pred, p_upd) = ss.steady_state(&SymMatrix::identity(1)).unwrap();
        let eta = optimal_eta_ar1(phi0, se2, sx2);
        assert!((eta - p_pred[(0, 0)]).abs() <= 1e-8 * (1.0 + eta), "eta {eta} vs Riccati {}", p_pred[(0, 0)]);
        let kf = p_pred[(0, 0)] * se2 / (p_pred[(0, 0)] + se2);
        assert!((ar1_bound(eta, phi0, se2, sx2) - kf).abs() <= 1e-8 * (1.0 + kf));
        assert!((p_upd[(0, 0)] - kf).abs() <= 1e-10 * (1.0 + kf));

        let curv = curvature_constants(1.0 / se2, 1.0 / se2);
        let moments = DgpMoments::known(1.0 / se2, vec![0.0], Mat::scalar(phi0), sx2).unwrap();
        let opt = minimize_bound(&curv, FilterKind::Implicit, &moments, &Mat::scalar(phi0), FreeParams::Eta).unwrap();
        assert!((opt.bound - kf).abs() <= 1e-8 * (1.0 + kf), "numeric {} vs Kalman {kf}", opt.bound);
    }
}
