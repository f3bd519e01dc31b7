//! Simulation harness: data-generating processes, random primitives,
//! competitor tracking algorithms, a reference Kalman filter and the Monte
//! Carlo studies.
//!
//! Every replication draws from its own ChaCha8 stream, so results do not
//! depend on the number of worker threads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{minimize_bound, optimal_rho_isd, DgpMoments, FreeParams};
use crate::error::{input, Error, Result};
use crate::estimate::{default_start, finite_start, fit_mle, static_mle, START_ETA_SCALE, START_PHI, FitSpec, FixedMask, HForm, ParamLayout, ParamVector, PhiForm, StaticParams};
use crate::filter::{run_filter, FilterConfig, FilterKind};
use crate::matcore::{norm2, Mat, SymMatrix};
use crate::models::{curvature_constants, make_model, scalar_shape, ObservationModel, ShapeMap, ShapeValue};

/// Generator for replication `stream` of a study seeded with `seed`.
pub fn rep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Innovation {
    /// `N(0, σ_ξ² I)`.
    Gaussian,
    /// Student's t with six degrees of freedom, scaled to variance `σ_ξ²` per coordinate.
    StudentT6,
    /// Uniform on the sphere of radius `σ_ξ`.
    SphereUniform,
}

impl Innovation {
    /// `E‖ξ‖²` for a `k`-dimensional state.
    pub fn trace(self, k: usize, sigma_xi: f64) -> f64 {
        match self {
            Innovation::SphereUniform => sigma_xi * sigma_xi,
            _ => k as f64 * sigma_xi * sigma_xi,
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, k: usize, sigma_xi: f64, rng: &mut R) -> Vec<f64> {
        match self {
            Innovation::Gaussian => (0..k).map(|_| sigma_xi * rng.sample::<f64, _>(StandardNormal)).collect(),
            Innovation::StudentT6 => {
                let t = StudentT::new(6.0).expect("valid degrees of freedom");
                let s = sigma_xi * (4.0f64 / 6.0).sqrt();
                (0..k).map(|_| s * t.sample(rng)).collect()
            }
            Innovation::SphereUniform => sphere_point(k, sigma_xi, rng),
        }
    }
}

pub fn sphere_point<R: Rng + ?Sized>(k: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&g);
        if n > 0.0 {
            return g.iter().map(|v| radius * v / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitState {
    Fixed(Vec<f64>),
    Sphere(f64),
}

#[derive(Debug, Clone)]
pub enum Observation {
    /// Draw from a catalog density at the state.
    Model(Arc<ObservationModel>),
    /// `y = Aϑ + e` with `e ~ N(0, noise_sd² I)`.
    LinearGaussian { a: Mat, noise_sd: f64 },
}

impl Observation {
    fn state_dim(&self) -> usize {
        match self {
            Observation::Model(m) => m.param_dim(),
            Observation::LinearGaussian { a, .. } => a.cols(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub observation: Observation,
    pub omega0: Vec<f64>,
    pub phi0: Mat,
    pub innovation: Innovation,
    pub sigma_xi: f64,
    pub init: InitState,
    pub t_len: usize,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulated {
    /// `ϑ_0, …, ϑ_T`.
    pub states: Vec<Vec<f64>>,
    /// `y_1, …, y_T`; `observations[t−1]` is drawn at `states[t]`.
    pub observations: Vec<Vec<f64>>,
}

/// Simulates `ϑ_t = (I − Φ₀)ω₀ + Φ₀ϑ_{t−1} + ξ_t` and observations at each state.
pub fn simulate(spec: &DgpSpec) -> Result<Simulated> {
    let k = spec.observation.state_dim();
    if spec.omega0.len() != k || spec.phi0.rows() != k || spec.phi0.cols() != k {
        return input(format!("state equation must have dimension {k}"));
    }
    if !(spec.sigma_xi >= 0.0) {
        return input("sigma_xi must be non-negative");
    }
    let mut rng = rep_rng(spec.seed, spec.stream);
    let theta0 = match &spec.init {
        InitState::Fixed(v) => {
            if v.len() != k {
                return input("initial state has the wrong dimension");
            }
            v.clone()
        }
        InitState::Sphere(r) => sphere_point(k, *r, &mut rng),
    };
    let drift = Mat::identity(k).sub(&spec.phi0).matvec(&spec.omega0);
    let mut states = Vec::with_capacity(spec.t_len + 1);
    let mut observations = Vec::with_capacity(spec.t_len);
    states.push(theta0);
    for _ in 0..spec.t_len {
        let prev = states.last().unwrap();
        let xi = spec.innovation.draw(k, spec.sigma_xi, &mut rng);
        let next: Vec<f64> = spec.phi0.matvec(prev).iter().zip(&drift).zip(&xi).map(|((p, d), x)| p + d + x).collect();
        let y = match &spec.observation {
            Observation::Model(m) => m.sample(&next, &mut rng)?,
            Observation::LinearGaussian { a, noise_sd } => {
                a.matvec(&next).iter().map(|m| m + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        states.push(next);
        observations.push(y);
    }
    Ok(Simulated { states, observations })
}

/// Orthogonalizes the columns of `g` (n×m, n ≥ m) with modified Gram-Schmidt,
/// run twice for stability. The implied R has a positive diagonal.
fn orthonormal_columns(g: &Mat) -> Mat {
    let (n, m) = (g.rows(), g.cols());
    let mut q = g.clone();
    for j in 0..m {
        for _ in 0..2 {
            for i in 0..j {
                let r: f64 = (0..n).map(|r| q[(r, i)] * q[(r, j)]).sum();
                for r2 in 0..n {
                    let v = q[(r2, i)];
                    q[(r2, j)] -= r * v;
                }
            }
        }
        let nrm = (0..n).map(|r| q[(r, j)] * q[(r, j)]).sum::<f64>().sqrt();
        for r in 0..n {
            q[(r, j)] /= nrm;
        }
    }
    q
}

fn gaussian_mat<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Mat::from_vec(rows, cols, data).expect("dimensions match")
}

/// Haar-distributed `dim × dim` orthogonal matrix.
pub fn haar_orthogonal_rng<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat {
    orthonormal_columns(&gaussian_mat(dim, dim, rng))
}

pub fn haar_orthogonal(dim: usize, seed: u64) -> Mat {
    haar_orthogonal_rng(dim, &mut rep_rng(seed, 0))
}

/// `n × k` matrix `U S V'` with Haar factors and singular values equally spaced in `[√α, √β]`.
pub fn make_a_rng<R: Rng + ?Sized>(n: usize, k: usize, alpha: f64, beta: f64, rng: &mut R) -> Result<Mat> {
    if k == 0 || n < k {
        return input("make_A needs n >= k >= 1");
    }
    if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
        return input("make_A needs 0 < alpha <= beta < inf");
    }
    let u = orthonormal_columns(&gaussian_mat(n, k, rng));
    let v = haar_orthogonal_rng(k, rng);
    let (lo, hi) = (alpha.sqrt(), beta.sqrt());
    let s: Vec<f64> = (0..k)
        .map(|i| if k == 1 { lo } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 })
        .collect();
    Ok(u.matmul(&Mat::from_diag(&s)).matmul(&v.transpose()))
}

pub fn make_a(n: usize, k: usize, alpha: f64, beta: f64, seed: u64) -> Result<Mat> {
    make_a_rng(n, k, alpha, beta, &mut rep_rng(seed, 0))
}

#[derive(Debug, Clone, Serialize)]
pub struct KalmanOutput {
    pub predicted: Vec<Vec<f64>>,
    pub updated: Vec<Vec<f64>>,
    pub p_pred: Vec<SymMatrix>,
    pub p_upd: Vec<SymMatrix>,
}

#[derive(Debug, Clone)]
pub struct LinearStateSpace {
    pub d: Vec<f64>,
    pub z: Mat,
    pub sigma_eps: SymMatrix,
    pub omega0: Vec<f64>,
    pub phi0: Mat,
    pub sigma_xi: SymMatrix,
}

impl LinearStateSpace {
    /// One measurement update: `(θ_{t|t}, P_{t|t})`.
    pub fn kalman_update(&self, theta_pred: &[f64], p_pred: &SymMatrix, y: &[f64]) -> Result<(Vec<f64>, SymMatrix)> {
        let pz = p_pred.as_mat().matmul(&self.z.transpose());
        let s = SymMatrix::from_mat(self.z.matmul(&pz).add(self.sigma_eps.as_mat()))?;
        let fit = self.z.matvec(theta_pred);
        let resid: Vec<f64> = y.iter().zip(&self.d).zip(&fit).map(|((a, b), c)| a - b - c).collect();
        let w = s.cholesky()?.solve(&resid);
        let step = pz.matvec(&w);
        let upd: Vec<f64> = theta_pred.iter().zip(&step).map(|(a, b)| a + b).collect();
        let info = self.sigma_eps.inverse()?.congruence(&self.z);
        let p_upd = p_pred.inverse()?.add(&info).inverse()?;
        Ok((upd, p_upd))
    }

    pub fn kalman_predict(&self, theta_upd: &[f64], p_upd: &SymMatrix) -> Result<(Vec<f64>, SymMatrix)> {
        let k = theta_upd.len();
        let drift = Mat::identity(k).sub(&self.phi0).matvec(&self.omega0);
        let mean: Vec<f64> = self.phi0.matvec(theta_upd).iter().zip(&drift).map(|(a, b)| a + b).collect();
        let p = SymMatrix::from_mat(self.phi0.matmul(p_upd.as_mat()).matmul(&self.phi0.transpose()).add(self.sigma_xi.as_mat()))?;
        Ok((mean, p))
    }

    /// Steady-state `(P_pred, P_upd)` by iterating the Riccati recursion.
    pub fn steady_state(&self, p0: &SymMatrix) -> Result<(SymMatrix, SymMatrix)> {
        let info = self.sigma_eps.inverse()?.congruence(&self.z);
        let mut p_pred = p0.clone();
        for _ in 0..100_000 {
            let p_upd = p_pred.inverse()?.add(&info).inverse()?;
            let next = SymMatrix::from_mat(self.phi0.matmul(p_upd.as_mat()).matmul(&self.phi0.transpose()).add(self.sigma_xi.as_mat()))?;
            let change = next.sub(&p_pred).as_mat().frobenius();
            p_pred = next;
            if change <= 1e-12 * (1.0 + p_pred.as_mat().frobenius()) {
                let p_upd = p_pred.inverse()?.add(&info).inverse()?;
                return Ok((p_pred, p_upd));
            }
        }
        Err(Error::NonConvergence("Riccati recursion did not settle".into()))
    }
}

/// Kalman filter started from `θ_{1|0}`, `P_{1|0}`.
pub fn kalman_reference(
    ss: &LinearStateSpace,
    theta_pred0: &[f64],
    p_pred0: &SymMatrix,
    series: &[Vec<f64>],
) -> Result<KalmanOutput> {
    let mut out = KalmanOutput { predicted: vec![], updated: vec![], p_pred: vec![], p_upd: vec![] };
    let mut theta = theta_pred0.to_vec();
    let mut p = p_pred0.clone();
    for y in series {
        let (upd, pu) = ss.kalman_update(&theta, &p, y)?;
        out.predicted.push(theta);
        out.p_pred.push(p);
        let (tn, pn) = ss.kalman_predict(&upd, &pu)?;
        out.updated.push(upd);
        out.p_upd.push(pu);
        theta = tn;
        p = pn;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Competitor {
    /// Online Nesterov method with constant momentum.
    Onm,
    /// Gradient descent with rate `2/(α+β)`.
    MaddenGd,
    /// Gradient descent with the noise-aware rate capped at `1/(2β)`.
    CutlerSgm,
}

impl Competitor {
    pub const ALL: [Competitor; 3] = [Competitor::Onm, Competitor::MaddenGd, Competitor::CutlerSgm];

    pub fn label(self) -> &'static str {
        match self {
            Competitor::Onm => "onm",
            Competitor::MaddenGd => "madden_gd",
            Competitor::CutlerSgm => "cutler_sgm",
        }
    }

    /// Step size; `sigma2` is the score noise and `sigma_xi2` the drift per step.
    pub fn rate(self, alpha: f64, beta: f64, sigma2: f64, sigma_xi2: f64) -> f64 {
        match self {
            Competitor::Onm => 1.0 / beta,
            Competitor::MaddenGd => 2.0 / (alpha + beta),
            Competitor::CutlerSgm => {
                let tuned = (2.0 * sigma_xi2 / (alpha * sigma2)).cbrt();
                tuned.min(1.0 / (2.0 * beta))
            }
        }
    }

    pub fn momentum(self, alpha: f64, beta: f64) -> f64 {
        match self {
            Competitor::Onm => (beta.sqrt() - alpha.sqrt()) / (beta.sqrt() + alpha.sqrt()),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompetitorState {
    pub x: Vec<f64>,
    prev: Vec<f64>,
}

impl CompetitorState {
    pub fn new(x0: Vec<f64>) -> Self {
        CompetitorState { prev: x0.clone(), x: x0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompetitorTuning {
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub sigma_xi2: f64,
}

/// Advances a competitor by one observation of a `least_squares` model.
pub fn competitor_step(
    algo: Competitor,
    state: &mut CompetitorState,
    y: &[f64],
    model: &ObservationModel,
    tuning: &CompetitorTuning,
) -> Result<()> {
    if model.name() != "least_squares" {
        return Err(Error::Unsupported(format!("competitors need least_squares, got {}", model.name())));
    }
    let CompetitorTuning { alpha, beta, sigma2, sigma_xi2 } = *tuning;
    let eta = algo.rate(alpha, beta, sigma2, sigma_xi2);
    let m = algo.momentum(alpha, beta);
    let look: Vec<f64> = state.x.iter().zip(&state.prev).map(|(x, p)| x + m * (x - p)).collect();
    let g = model.score(y, &look);
    let next: Vec<f64> = look.iter().zip(&g).map(|(l, gi)| l + eta * gi).collect();
    state.prev = std::mem::replace(&mut state.x, next);
    Ok(())
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Mean and Monte Carlo standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(v) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt())
}

/// Outcome of one replication for one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RepRow {
    pub study: String,
    pub model: String,
    pub filter: String,
    pub sigma_xi: f64,
    pub beta: f64,
    pub rep: usize,
    pub eta: f64,
    pub mse: f64,
    pub kl: f64,
    pub diverged: bool,
    pub fit_failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub study: String,
    pub model: String,
    pub filter: String,
    pub sigma_xi: f64,
    pub beta: f64,
    pub reps: usize,
    /// Mean MSE over non-divergent replications.
    pub mse: f64,
    pub mse_se: f64,
    /// `+∞` when any replication diverged, otherwise equal to `mse`.
    pub mse_reported: f64,
    pub divergences: usize,
    pub fit_failures: usize,
    pub divergent_fraction: f64,
    pub kl: f64,
    /// Mean learning rate (fixed or fitted) over replications.
    pub eta: f64,
    /// Mean squared error per time step (`t = 0..T`), when tracked.
    pub per_step_mse: Option<Vec<f64>>,
}

fn summarize(rows: &[RepRow], per_step: Option<Vec<f64>>) -> SimResult {
    let first = &rows[0];
    let ok: Vec<&RepRow> = rows.iter().filter(|r| !r.diverged && !r.fit_failed).collect();
    let mses: Vec<f64> = ok.iter().map(|r| r.mse).collect();
    let kls: Vec<f64> = ok.iter().map(|r| r.kl).filter(|v| !v.is_nan()).collect();
    let etas: Vec<f64> = rows.iter().filter(|r| !r.fit_failed).map(|r| r.eta).collect();
    let (mse, mse_se) = mean_se(&mses);
    let divergences = rows.iter().filter(|r| r.diverged).count();
    SimResult {
        study: first.study.clone(),
        model: first.model.clone(),
        filter: first.filter.clone(),
        sigma_xi: first.sigma_xi,
        beta: first.beta,
        reps: rows.len(),
        mse,
        mse_se,
        mse_reported: if divergences > 0 { f64::INFINITY } else { mse },
        divergences,
        fit_failures: rows.iter().filter(|r| r.fit_failed).count(),
        divergent_fraction: divergences as f64 / rows.len() as f64,
        kl: if kls.is_empty() { f64::NAN } else { mean_se(&kls).0 },
        eta: mean_se(&etas).0,
        per_step_mse: per_step,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub rows: Vec<RepRow>,
    pub results: Vec<SimResult>,
}

// ---------------------------------------------------------------------------
// Least-squares recovery

#[derive(Debug, Clone, Serialize)]
pub struct LsConfig {
    pub k: usize,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub sigma_xi: f64,
    pub init_radius: f64,
    pub t_len: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for LsConfig {
    fn default() -> Self {
        LsConfig { k: 50, n: 100, alpha: 1.0, beta: 1.0, sigma: 10.0, sigma_xi: 1.0, init_radius: 10.0, t_len: 500, reps: 100, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsTuning {
    pub eta_isd: f64,
    pub eta_esd: f64,
    pub chi_esd: f64,
    pub bound_isd: f64,
    pub bound_esd: f64,
}

/// Bound-minimizing learning rates for both filters.
pub fn ls_tuning(cfg: &LsConfig) -> Result<LsTuning> {
    let sigma2 = cfg.sigma * cfg.sigma;
    let sx2 = cfg.sigma_xi * cfg.sigma_xi;
    let curv = curvature_constants(cfg.alpha, cfg.beta);
    let moments = DgpMoments::known(sigma2, vec![0.0], Mat::identity(1), sx2)?;
    let rho = optimal_rho_isd(cfg.alpha, sigma2, sx2, &Mat::identity(1))?;
    let isd = minimize_bound(&curv, FilterKind::Implicit, &moments, &Mat::identity(1), FreeParams::Eta)?;
    let esd = minimize_bound(&curv, FilterKind::Explicit, &moments, &Mat::identity(1), FreeParams::EtaChi)?;
    Ok(LsTuning {
        eta_isd: 1.0 / rho,
        eta_esd: esd.eta,
        chi_esd: esd.chi,
        bound_isd: crate::bounds::isd_rho_objective(rho, cfg.alpha, sigma2, sx2, 1.0).min(isd.bound),
        bound_esd: esd.bound,
    })
}

const LS_METHODS: [&str; 5] = ["isd", "esd", "onm", "madden_gd", "cutler_sgm"];

fn ls_replication(cfg: &LsConfig, tuning: &LsTuning, rep: usize) -> Result<Vec<Vec<f64>>> {
    let mut rng = rep_rng(cfg.seed, rep as u64);
    let a = make_a_rng(cfg.n, cfg.k, cfg.alpha, cfg.beta, &mut rng)?;
    let noise_sd = (cfg.sigma * cfg.sigma / (cfg.n as f64 * cfg.beta)).sqrt();
    let mut shape = ShapeMap::new();
    shape.insert("A".into(), ShapeValue::Matrix((0..a.rows()).map(|i| (0..a.cols()).map(|j| a[(i, j)]).collect()).collect()));
    let model = Arc::new(make_model("least_squares", &shape)?);
    let spec = DgpSpec {
        observation: Observation::LinearGaussian { a, noise_sd },
        omega0: vec![0.0; cfg.k],
        phi0: Mat::identity(cfg.k),
        innovation: Innovation::SphereUniform,
        sigma_xi: cfg.sigma_xi,
        init: InitState::Sphere(cfg.init_radius),
        t_len: cfg.t_len,
        seed: cfg.seed,
        stream: rep as u64 | (1 << 40),
    };
    let sim = simulate(&spec)?;
    let err = |x: &[f64], t: usize| -> f64 { x.iter().zip(&sim.states[t]).map(|(a, b)| (a - b) * (a - b)).sum() };
    let zero = vec![0.0; cfg.k];
    let mut out = Vec::with_capacity(LS_METHODS.len());
    for (kind, eta) in [(FilterKind::Implicit, tuning.eta_isd), (FilterKind::Explicit, tuning.eta_esd)] {
        let fc = FilterConfig::builder(model.clone(), kind).omega(zero.clone()).eta(eta).theta_init(zero.clone()).build()?;
        let run = run_filter(&fc, &sim.observations)?;
        let mut path = vec![err(&zero, 0)];
        path.extend(run.updated.iter().enumerate().map(|(t, u)| err(u, t + 1)));
        out.push(path);
    }
    let tun = CompetitorTuning {
        alpha: cfg.alpha,
        beta: cfg.beta,
        sigma2: cfg.sigma * cfg.sigma,
        sigma_xi2: cfg.sigma_xi * cfg.sigma_xi,
    };
    for algo in Competitor::ALL {
        let mut st = CompetitorState::new(zero.clone());
        let mut path = vec![err(&zero, 0)];
        for (t, y) in sim.observations.iter().enumerate() {
            competitor_step(algo, &mut st, y, &model, &tun)?;
            path.push(if st.x.iter().all(|v| v.is_finite()) { err(&st.x, t + 1) } else { f64::INFINITY });
        }
        out.push(path);
    }
    Ok(out)
}

/// High-dimensional least-squares tracking with five methods.
pub fn ls_recovery(cfg: &LsConfig) -> Result<(ExperimentOutput, LsTuning)> {
    if cfg.reps == 0 || cfg.t_len == 0 {
        return input("reps and T must be positive");
    }
    let tuning = ls_tuning(cfg)?;
    let tun = CompetitorTuning {
        alpha: cfg.alpha,
        beta: cfg.beta,
        sigma2: cfg.sigma * cfg.sigma,
        sigma_xi2: cfg.sigma_xi * cfg.sigma_xi,
    };
    let paths: Vec<Result<Vec<Vec<f64>>>> = (0..cfg.reps).into_par_iter().map(|r| ls_replication(cfg, &tuning, r)).collect();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut ok_paths = Vec::new();
    for p in paths {
        ok_paths.push(p?);
    }
    for (m, name) in LS_METHODS.iter().enumerate() {
        let eta = match m {
            0 => tuning.eta_isd,
            1 => tuning.eta_esd,
            _ => Competitor::ALL[m - 2].rate(tun.alpha, tun.beta, tun.sigma2, tun.sigma_xi2),
        };
        let mut method_rows = Vec::new();
        for (rep, p) in ok_paths.iter().enumerate() {
            let terminal = p[m][cfg.t_len];
            method_rows.push(RepRow {
                study: "ls_recovery".into(),
                model: "least_squares".into(),
                filter: name.to_string(),
                sigma_xi: cfg.sigma_xi,
                beta: cfg.beta,
                rep,
                eta,
                mse: terminal,
                kl: f64::NAN,
                diverged: !terminal.is_finite(),
                fit_failed: false,
            });
        }
        let per_step: Vec<f64> = (0..=cfg.t_len)
            .map(|t| {
                let col: Vec<f64> = ok_paths.iter().map(|p| p[m][t]).collect();
                mean_se(&col).0
            })
            .collect();
        results.push(summarize(&method_rows, Some(per_step)));
        rows.extend(method_rows);
    }
    Ok((ExperimentOutput { rows, results }, tuning))
}

// ---------------------------------------------------------------------------
// Correctly specified nonlinear models

pub const KOOPMAN_MODELS: [&str; 9] = [
    "poisson_exp",
    "negbinom_exp",
    "exponential_exp",
    "gamma_exp",
    "weibull_exp",
    "gauss_vol",
    "student_vol",
    "gauss_dep",
    "student_dep",
];

/// Shape values and the estimated shape keys for the study models.
pub fn koopman_shape(model: &str) -> (ShapeMap, Vec<&'static str>) {
    match model {
        "negbinom_exp" => (scalar_shape(&[("kappa", 4.0)]), vec!["kappa"]),
        "gamma_exp" => (scalar_shape(&[("kappa", 1.5)]), vec!["kappa"]),
        "weibull_exp" => (scalar_shape(&[("kappa", 1.2)]), vec!["kappa"]),
        "student_vol" | "student_dep" => (scalar_shape(&[("nu", 6.0)]), vec!["nu"]),
        _ => (ShapeMap::new(), vec![]),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KoopmanConfig {
    pub models: Vec<String>,
    pub sigma_xis: Vec<f64>,
    pub filters: Vec<FilterKind>,
    pub omega0: f64,
    pub phi0: f64,
    pub innovation: Innovation,
    pub t_len: usize,
    pub in_sample: usize,
    pub reps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KoopmanConfig {
    fn default() -> Self {
        KoopmanConfig {
            models: KOOPMAN_MODELS.iter().map(|s| s.to_string()).collect(),
            sigma_xis: vec![0.15, 0.3, 0.6],
            filters: vec![FilterKind::Implicit, FilterKind::Explicit],
            omega0: 0.0,
            phi0: 0.97,
            innovation: Innovation::StudentT6,
            t_len: 10_000,
            in_sample: 1_000,
            reps: 100,
            restarts: 1,
            seed: 2,
        }
    }
}

fn out_of_sample_mse(predicted: &[Vec<f64>], states: &[Vec<f64>], from: usize) -> f64 {
    let errs: Vec<f64> = (from..predicted.len()).map(|t| (predicted[t][0] - states[t + 1][0]).powi(2)).collect();
    mean_se(&errs).0
}

fn koopman_replication(cfg: &KoopmanConfig, mi: usize, si: usize, rep: usize) -> Result<Vec<RepRow>> {
    let name = &cfg.models[mi];
    let sigma_xi = cfg.sigma_xis[si];
    let (shape, keys) = koopman_shape(name);
    let model = Arc::new(make_model(name, &shape)?);
    let spec = DgpSpec {
        observation: Observation::Model(model.clone()),
        omega0: vec![cfg.omega0],
        phi0: Mat::scalar(cfg.phi0),
        innovation: cfg.innovation,
        sigma_xi,
        init: InitState::Fixed(vec![cfg.omega0]),
        t_len: cfg.t_len,
        seed: cfg.seed,
        stream: ((mi as u64) << 48) | ((si as u64) << 32) | rep as u64,
    };
    let sim = simulate(&spec)?;
    let in_sample = &sim.observations[..cfg.in_sample.min(cfg.t_len)];
    let shapes: Vec<f64> = keys.iter().map(|k| model.shape_scalar(k).unwrap()).collect();
    let mut rows = Vec::new();
    for &kind in &cfg.filters {
        let mut row = RepRow {
            study: "koopman_grid".into(),
            model: name.clone(),
            filter: kind.label().into(),
            sigma_xi,
            beta: model.beta(),
            rep,
            eta: f64::NAN,
            mse: f64::NAN,
            kl: f64::NAN,
            diverged: false,
            fit_failed: false,
        };
        let fitted = default_start(&model, in_sample, shapes.clone())
            .and_then(|start| {
                let layout = ParamLayout::new(&model, HForm::Scalar, PhiForm::Scalar, &keys)?;
                let fs = FitSpec::new(kind);
                let init = finite_start(ParamVector::new(layout, start, FixedMask::default())?, &model, &fs, in_sample);
                fit_mle(&model, &fs, in_sample, &init, cfg.restarts, spec.stream ^ 0x9e37)
            })
            .and_then(|fit| Ok((fit.params.config(&model, &FitSpec::new(kind))?, fit.estimates.eta())));
        match fitted {
            Ok((fc, eta)) => {
                row.eta = eta;
                let run = run_filter(&fc, &sim.observations)?;
                if run.diverged.is_some() {
                    row.diverged = true;
                    row.mse = f64::INFINITY;
                } else {
                    row.mse = out_of_sample_mse(&run.predicted, &sim.states, cfg.in_sample);
                }
            }
            Err(_) => row.fit_failed = true,
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Out-of-sample prediction MSE for the correctly specified study models.
pub fn koopman_grid(cfg: &KoopmanConfig) -> Result<ExperimentOutput> {
    if cfg.reps == 0 || cfg.in_sample >= cfg.t_len {
        return input("need reps > 0 and an out-of-sample period");
    }
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.models.len())
        .flat_map(|m| (0..cfg.sigma_xis.len()).flat_map(move |s| (0..cfg.reps).map(move |r| (m, s, r))))
        .collect();
    let done: Vec<Result<Vec<RepRow>>> = jobs.par_iter().map(|&(m, s, r)| koopman_replication(cfg, m, s, r)).collect();
    let mut rows = Vec::new();
    for d in done {
        rows.extend(d?);
    }
    Ok(group_results(rows))
}

fn group_results(rows: Vec<RepRow>) -> ExperimentOutput {
    let mut keys: Vec<(String, String, u64, u64)> = Vec::new();
    for r in &rows {
        let key = (r.model.clone(), r.filter.clone(), r.sigma_xi.to_bits(), r.beta.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let results = keys
        .iter()
        .map(|key| {
            let group: Vec<RepRow> = rows
                .iter()
                .filter(|r| (r.model.clone(), r.filter.clone(), r.sigma_xi.to_bits(), r.beta.to_bits()) == *key)
                .cloned()
                .collect();
            summarize(&group, None)
        })
        .collect();
    ExperimentOutput { rows, results }
}

// ---------------------------------------------------------------------------
// Poisson counts with exponential and quadratic links

#[derive(Debug, Clone, Serialize)]
pub struct PoissonConfig {
    pub sigma_xis: Vec<f64>,
    pub omega0: f64,
    pub phi0: f64,
    pub t_len: usize,
    pub in_sample: usize,
    pub reps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        PoissonConfig {
            sigma_xis: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            omega0: 0.0,
            phi0: 0.98,
            t_len: 10_000,
            in_sample: 1_000,
            reps: 100,
            restarts: 1,
            seed: 3,
        }
    }
}

/// Filters compared in the link study.
pub const POISSON_FILTERS: [&str; 5] = ["isd_exp", "isd_quad", "esd_exp_zeta0", "esd_exp_zeta0.5", "esd_exp_zeta1"];

/// Kullback-Leibler divergence between Poisson laws with means `mu` (true) and `mu_f`.
pub fn poisson_kl(mu: f64, mu_f: f64) -> f64 {
    if mu_f <= 0.0 {
        return f64::INFINITY;
    }
    mu * (mu / mu_f).ln() + mu_f - mu
}

fn poisson_replication(cfg: &PoissonConfig, si: usize, rep: usize) -> Result<Vec<RepRow>> {
    let sigma_xi = cfg.sigma_xis[si];
    let exp_model = Arc::new(make_model("poisson_exp", &ShapeMap::new())?);
    let quad_model = Arc::new(make_model("poisson_quad", &ShapeMap::new())?);
    let spec = DgpSpec {
        observation: Observation::Model(exp_model.clone()),
        omega0: vec![cfg.omega0],
        phi0: Mat::scalar(cfg.phi0),
        innovation: Innovation::Gaussian,
        sigma_xi,
        init: InitState::Fixed(vec![cfg.omega0]),
        t_len: cfg.t_len,
        seed: cfg.seed,
        stream: (1 << 56) | ((si as u64) << 32) | rep as u64,
    };
    let sim = simulate(&spec)?;
    let in_sample = &sim.observations[..cfg.in_sample];
    let mut rows = Vec::new();
    for name in POISSON_FILTERS {
        let quad = name == "isd_quad";
        let kind = if name.starts_with("isd") { FilterKind::Implicit } else { FilterKind::Explicit };
        let zeta = match name {
            "esd_exp_zeta0.5" => 0.5,
            "esd_exp_zeta1" => 1.0,
            _ => 0.0,
        };
        let model = if quad { &quad_model } else { &exp_model };
        let mut fs = FitSpec::new(kind);
        fs.zeta = zeta;
        let mut row = RepRow {
            study: "poisson_links".into(),
            model: model.name().into(),
            filter: name.into(),
            sigma_xi,
            beta: model.beta(),
            rep,
            eta: f64::NAN,
            mse: f64::NAN,
            kl: f64::NAN,
            diverged: false,
            fit_failed: false,
        };
        let fitted = (|| -> Result<(FilterConfig, f64)> {
            let layout = ParamLayout::new(model, HForm::Scalar, PhiForm::Scalar, &[])?;
            let (start, fixed) = if quad {
                let omega = static_mle(model, in_sample)?.max(1e-3);
                (StaticParams::scalar(START_ETA_SCALE, omega, START_PHI, vec![]), FixedMask::default())
            } else {
                (
                    StaticParams::scalar(START_ETA_SCALE, cfg.omega0, cfg.phi0, vec![]),
                    FixedMask { omega: true, phi: true, ..Default::default() },
                )
            };
            let init = finite_start(ParamVector::new(layout, start, fixed)?, model, &fs, in_sample);
            let fit = fit_mle(model, &fs, in_sample, &init, cfg.restarts, spec.stream ^ 0x51)?;
            Ok((fit.params.config(model, &fs)?, fit.estimates.eta()))
        })();
        match fitted {
            Ok((fc, eta)) => {
                row.eta = eta;
                let run = run_filter(&fc, &sim.observations)?;
                if run.diverged.is_some() {
                    row.diverged = true;
                    row.mse = f64::INFINITY;
                    row.kl = f64::INFINITY;
                } else {
                    let mut se = Vec::new();
                    let mut kl = Vec::new();
                    for t in cfg.in_sample..cfg.t_len {
                        let th = run.updated[t][0];
                        let state = sim.states[t + 1][0];
                        let (target, mu_f) = if quad { ((0.5 * state).exp(), th * th) } else { (state, th.exp()) };
                        se.push((th - target).powi(2));
                        kl.push(poisson_kl(state.exp(), mu_f));
                    }
                    row.mse = mean_se(&se).0;
                    row.kl = mean_se(&kl).0;
                }
            }
            Err(_) => row.fit_failed = true,
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Out-of-sample filtering error of Poisson filters across state volatilities.
pub fn poisson_links(cfg: &PoissonConfig) -> Result<ExperimentOutput> {
    if cfg.reps == 0 || cfg.in_sample >= cfg.t_len {
        return input("need reps > 0 and an out-of-sample period");
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.sigma_xis.len()).flat_map(|s| (0..cfg.reps).map(move |r| (s, r))).collect();
    let done: Vec<Result<Vec<RepRow>>> = jobs.par_iter().map(|&(s, r)| poisson_replication(cfg, s, r)).collect();
    let mut rows = Vec::new();
    for d in done {
        rows.extend(d?);
    }
    Ok(group_results(rows))
}

// ---------------------------------------------------------------------------

/// Overrides applied on top of a study's desk-scale defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub reps: Option<usize>,
    pub t_len: Option<usize>,
    pub in_sample: Option<usize>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma_xis: Option<Vec<f64>>,
    pub models: Option<Vec<String>>,
    pub restarts: Option<usize>,
    pub gaussian_state: bool,
    pub paper_scale: bool,
}

pub const STUDIES: [&str; 3] = ["ls_recovery", "koopman_grid", "poisson_links"];

pub fn run_experiment(name: &str, ov: &Overrides, seed: u64) -> Result<ExperimentOutput> {
    match name {
        "ls_recovery" => {
            let mut c = LsConfig { seed, ..Default::default() };
            if ov.paper_scale {
                c.reps = 1000;
            }
            c.reps = ov.reps.unwrap_or(c.reps);
            c.t_len = ov.t_len.unwrap_or(c.t_len);
            c.k = ov.k.unwrap_or(c.k);
            c.n = ov.n.unwrap_or(c.n);
            c.alpha = ov.alpha.unwrap_or(c.alpha);
            c.beta = ov.beta.unwrap_or(c.beta);
            c.sigma = ov.sigma.unwrap_or(c.sigma);
            if let Some(s) = &ov.sigma_xis {
                match s.as_slice() {
                    [v] => c.sigma_xi = *v,
                    _ => return input("ls_recovery takes a single sigma_xi"),
                }
            }
            Ok(ls_recovery(&c)?.0)
        }
        "koopman_grid" => {
            let mut c = KoopmanConfig { seed, ..Default::default() };
            if ov.paper_scale {
                c.reps = 1000;
            }
            c.reps = ov.reps.unwrap_or(c.reps);
            c.t_len = ov.t_len.unwrap_or(c.t_len);
            c.in_sample = ov.in_sample.unwrap_or(c.in_sample);
            c.restarts = ov.restarts.unwrap_or(c.restarts);
            if let Some(s) = &ov.sigma_xis {
                c.sigma_xis = s.clone();
            }
            if let Some(m) = &ov.models {
                for name in m {
                    if !KOOPMAN_MODELS.contains(&name.as_str()) {
                        return input(format!("`{name}` is not one of the study models"));
                    }
                }
                c.models = m.clone();
            }
            if ov.gaussian_state {
                c.innovation = Innovation::Gaussian;
            }
            koopman_grid(&c)
        }
        "poisson_links" => {
            let mut c = PoissonConfig { seed, ..Default::default() };
            if ov.paper_scale {
                c.reps = 500;
            }
            c.reps = ov.reps.unwrap_or(c.reps);
            c.t_len = ov.t_len.unwrap_or(c.t_len);
            c.in_sample = ov.in_sample.unwrap_or(c.in_sample);
            c.restarts = ov.restarts.unwrap_or(c.restarts);
            if let Some(s) = &ov.sigma_xis {
                c.sigma_xis = s.clone();
            }
            poisson_links(&c)
        }
        other => input(format!("unknown experiment `{other}` (expected one of {STUDIES:?})")),
    }
}
