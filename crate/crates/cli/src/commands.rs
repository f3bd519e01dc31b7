//! Subcommand implementations. Each writes its artifacts under the output
//! directory and returns their paths.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use scorefilt::bounds::{
    asymptotic_bounds, bound_params, finite_sample_bound, minimize_bound, to_euclidean, BoundOptimum, BoundParams,
    DgpMoments, FreeParams,
};
use scorefilt::estimate::{default_start, finite_start, fit_mle, FitSpec, FixedMask, HForm, ParamLayout, ParamVector, PhiForm};
use scorefilt::filter::{run_filter, FilterConfig, FilterKind, FilterOutput};
use scorefilt::matcore::Mat;
use scorefilt::models::{make_model, ObservationModel};
use scorefilt::simlab::{run_experiment, simulate, DgpSpec, InitState, Innovation, Observation, Overrides, Simulated};
use scorefilt::stability::{stability_report, StabilityReport};

use crate::config::{Command, RunConfig};
use crate::ingest::{ingest_columns, scale_series};
use crate::output::{fmt_f64, write_csv, write_json};
use crate::Failure;

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    match cmd {
        Command::Filter => cmd_filter(cfg),
        Command::Fit => cmd_fit(cfg),
        Command::Stability => cmd_stability(cfg),
        Command::Bounds => cmd_bounds(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Experiment => cmd_experiment(cfg),
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<ObservationModel, Failure> {
    let name = RunConfig::require(&cfg.model, "model")?;
    Ok(make_model(name, &cfg.shape)?)
}

pub fn filter_kind(cfg: &RunConfig) -> Result<FilterKind, Failure> {
    match cfg.filter.as_deref().unwrap_or("isd") {
        "isd" | "implicit" => Ok(FilterKind::Implicit),
        "esd" | "explicit" => Ok(FilterKind::Explicit),
        other => Err(Failure::Config(format!("unknown filter `{other}` (expected isd or esd)"))),
    }
}

/// Filter configuration from explicit parameter values; unset values take the builder defaults.
pub fn build_filter(cfg: &RunConfig, model: ObservationModel) -> Result<FilterConfig, Failure> {
    let mut b = FilterConfig::builder(Arc::new(model), filter_kind(cfg)?);
    if let Some(o) = &cfg.omega {
        b = b.omega(o.to_vec());
    }
    if let Some(p) = cfg.phi {
        b = b.phi_scalar(p);
    }
    if let Some(e) = cfg.eta {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Failure::Config(format!("eta must be positive and finite, got {e}")));
        }
        b = b.eta(e);
    }
    if let Some(t) = &cfg.theta_init {
        b = b.theta_init(t.to_vec());
    }
    b = b.zeta(cfg.zeta.unwrap_or(0.0)).relax_penalty_condition(cfg.relax_penalty_condition.unwrap_or(false));
    Ok(b.build()?)
}

fn innovation(cfg: &RunConfig) -> Result<Innovation, Failure> {
    match cfg.innovation.as_deref().unwrap_or("gaussian") {
        "gaussian" => Ok(Innovation::Gaussian),
        "t6" => Ok(Innovation::StudentT6),
        "sphere" => Ok(Innovation::SphereUniform),
        other => Err(Failure::Config(format!("unknown innovation `{other}`"))),
    }
}

fn dgp_spec(cfg: &RunConfig, model: &ObservationModel) -> Result<DgpSpec, Failure> {
    let k = model.param_dim();
    let omega0 = cfg.dgp_omega.as_ref().map_or_else(|| vec![0.0; k], |o| o.to_vec());
    let phi0 = Mat::identity(k).scale(cfg.dgp_phi.unwrap_or(1.0));
    let init = InitState::Fixed(cfg.init_state.as_ref().map_or_else(|| omega0.clone(), |v| v.to_vec()));
    Ok(DgpSpec {
        observation: Observation::Model(Arc::new(model.clone())),
        omega0,
        phi0,
        innovation: innovation(cfg)?,
        sigma_xi: *RunConfig::require(&cfg.sigma_xi, "sigma_xi")?,
        init,
        t_len: *RunConfig::require(&cfg.t_len, "t_len")?,
        seed: cfg.seed(),
        stream: 0,
    })
}

/// Observed series from `data`, or a simulated one when no data file is given.
fn load_series(cfg: &RunConfig, model: &ObservationModel) -> Result<(Vec<Vec<f64>>, Option<Simulated>), Failure> {
    match cfg.data_path() {
        Some(path) => {
            let cols = match &cfg.column {
                Some(c) => c.to_vec(),
                None => return Err(Failure::Config("missing config key `column`".into())),
            };
            if cols.len() != model.obs_dim() {
                return Err(Failure::Config(format!(
                    "{} observes {} column(s), got {}",
                    model.name(),
                    model.obs_dim(),
                    cols.len()
                )));
            }
            let mut series = ingest_columns(&path, &cols)?;
            if let Some(s) = cfg.scale {
                scale_series(&mut series, s);
            }
            Ok((series, None))
        }
        None => {
            let sim = simulate(&dgp_spec(cfg, model)?)?;
            Ok((sim.observations.clone(), Some(sim)))
        }
    }
}

fn path_rows(out: &FilterOutput) -> Vec<Vec<String>> {
    let k = out.predicted.first().map_or(0, Vec::len);
    (0..out.predicted.len())
        .map(|t| {
            let mut r = vec![(t + 1).to_string()];
            r.extend((0..k).map(|j| fmt_f64(out.predicted[t][j])));
            r.extend((0..k).map(|j| fmt_f64(out.updated[t][j])));
            r.push(fmt_f64(out.loglik_contribs[t]));
            r
        })
        .collect()
}

fn path_header(k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    if k == 1 {
        h.push("theta_pred".into());
        h.push("theta_upd".into());
    } else {
        h.extend((0..k).map(|j| format!("theta_pred_{j}")));
        h.extend((0..k).map(|j| format!("theta_upd_{j}")));
    }
    h.push("loglik_contrib".into());
    h
}

fn write_paths(cfg: &RunConfig, out: &FilterOutput, k: usize) -> Result<Option<PathBuf>, Failure> {
    if !cfg.emit()?.csv {
        return Ok(None);
    }
    let header = path_header(k);
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(Some(write_csv(&cfg.out_dir(), "paths.csv", &h, &path_rows(out))?))
}

fn divergence_check(out: &FilterOutput) -> Result<(), Failure> {
    match out.diverged {
        Some(t) => Err(Failure::Divergence(format!("filter diverged at step {}", t + 1))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct FilterReport<'a> {
    model: &'a str,
    filter: &'a str,
    omega: &'a [f64],
    phi: &'a Mat,
    learning_rate: &'a scorefilt::matcore::SymMatrix,
    observations: usize,
    loglik: f64,
    diverged_at: Option<usize>,
    stability: StabilityReport,
}

pub fn cmd_filter(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let model = build_model(cfg)?;
    let (series, _) = load_series(cfg, &model)?;
    let fc = build_filter(cfg, model)?;
    let out = run_filter(&fc, &series)?;
    let mut paths = Vec::new();
    paths.extend(write_paths(cfg, &out, fc.model().param_dim())?);
    if cfg.emit()?.json {
        let report = FilterReport {
            model: fc.model().name(),
            filter: fc.kind().label(),
            omega: fc.omega(),
            phi: fc.phi(),
            learning_rate: fc.learning_rate(),
            observations: series.len(),
            loglik: out.loglik(),
            diverged_at: out.diverged.map(|t| t + 1),
            stability: stability_report(fc.model(), &fc)?,
        };
        paths.push(write_json(&cfg.out_dir(), "report.json", &report)?);
    }
    divergence_check(&out)?;
    Ok(paths)
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: &'a str,
    filter: &'a str,
    observations: usize,
    estimates: &'a scorefilt::estimate::StaticParams,
    shape_keys: &'a [String],
    loglik: f64,
    convergence: &'a scorefilt::estimate::ConvergenceReport,
    stability: Option<StabilityReport>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let model = build_model(cfg)?;
    let (series, _) = load_series(cfg, &model)?;
    if !model.is_scalar() {
        return Err(Failure::Config(format!("fit supports scalar models only, not {}", model.name())));
    }
    let kind = filter_kind(cfg)?;
    let keys: Vec<&str> = cfg.estimate_shapes.iter().map(String::as_str).collect();
    let layout = ParamLayout::new(&model, HForm::Scalar, PhiForm::Scalar, &keys)?;
    let shapes: Vec<f64> = keys.iter().map(|k| model.shape_scalar(k).unwrap_or(f64::NAN)).collect();
    let mut start = default_start(&model, &series, shapes)?;
    if let Some(o) = &cfg.omega {
        start.omega = o.to_vec();
    }
    if let Some(p) = cfg.phi {
        start.phi = Mat::scalar(p);
    }
    if let Some(e) = cfg.eta {
        start.h = scorefilt::matcore::SymMatrix::from_diag(&[e]);
    }
    let mut spec = FitSpec::new(kind);
    spec.zeta = cfg.zeta.unwrap_or(0.0);
    spec.relax_penalty_condition = cfg.relax_penalty_condition.unwrap_or(false);
    let init = finite_start(ParamVector::new(layout, start, FixedMask::default())?, &model, &spec, &series);
    let fit = fit_mle(&model, &spec, &series, &init, cfg.restarts.unwrap_or(3), cfg.seed())?;
    let fc = fit.params.config(&model, &spec)?;
    let out = run_filter(&fc, &series)?;
    let mut paths = Vec::new();
    paths.extend(write_paths(cfg, &out, 1)?);
    if cfg.emit()?.json {
        let report = FitReport {
            model: model.name(),
            filter: kind.label(),
            observations: series.len(),
            estimates: &fit.estimates,
            shape_keys: &fit.params.layout.shape_keys,
            loglik: fit.loglik,
            convergence: &fit.report,
            stability: stability_report(fc.model(), &fc).ok(),
        };
        paths.push(write_json(&cfg.out_dir(), "report.json", &report)?);
    }
    divergence_check(&out)?;
    Ok(paths)
}

pub fn cmd_stability(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let fc = build_filter(cfg, build_model(cfg)?)?;
    let report = stability_report(fc.model(), &fc)?;
    Ok(vec![write_json(&cfg.out_dir(), "report.json", &report)?])
}

fn moments(cfg: &RunConfig, model: &ObservationModel) -> Result<DgpMoments, Failure> {
    let sigma2 = *RunConfig::require(&cfg.sigma2, "sigma2")?;
    if cfg.dgp_phi.is_some() || cfg.dgp_omega.is_some() {
        let k = model.param_dim();
        let omega0 = cfg.dgp_omega.as_ref().map_or_else(|| vec![0.0; k], |o| o.to_vec());
        let phi0 = Mat::identity(k).scale(cfg.dgp_phi.unwrap_or(1.0));
        let sx = *RunConfig::require(&cfg.sigma_xi, "sigma_xi")?;
        Ok(DgpMoments::known(sigma2, omega0, phi0, k as f64 * sx * sx)?)
    } else {
        let q2 = *RunConfig::require(&cfg.q2, "q2")?;
        Ok(DgpMoments::unknown(sigma2, q2, cfg.s_omega2.unwrap_or(f64::INFINITY))?)
    }
}

#[derive(Serialize)]
struct BoundsReport {
    model: String,
    filter: String,
    params: Option<BoundParams>,
    filter_bound_p: Option<f64>,
    prediction_bound_p: Option<f64>,
    filter_bound_euclidean: Option<f64>,
    finite_sample_p: Option<f64>,
    optimum: Option<BoundOptimum>,
}

pub fn cmd_bounds(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let model = build_model(cfg)?;
    let m = moments(cfg, &model)?;
    let kind = filter_kind(cfg)?;
    let over = match cfg.optimize.as_deref().unwrap_or("none") {
        "none" => None,
        "eta" => Some(FreeParams::Eta),
        "eta_chi" => Some(FreeParams::EtaChi),
        other => return Err(Failure::Config(format!("unknown optimize target `{other}`"))),
    };
    let mut report = BoundsReport {
        model: model.name().to_string(),
        filter: kind.label().to_string(),
        params: None,
        filter_bound_p: None,
        prediction_bound_p: None,
        filter_bound_euclidean: None,
        finite_sample_p: None,
        optimum: None,
    };
    if let Some(over) = over {
        let k = model.param_dim();
        let phi = Mat::identity(k).scale(cfg.phi.unwrap_or(1.0));
        report.optimum = Some(minimize_bound(&model.curvature(), kind, &m, &phi, over)?);
    } else {
        let eps = cfg.eps.unwrap_or(1.0);
        let chi = cfg.chi.unwrap_or(1.0);
        let fc = build_filter(cfg, model)?;
        let bp = bound_params(fc.model(), &fc, &m, eps, chi)?;
        if let (Some(mse0), Some(t)) = (cfg.mse0, cfg.horizon) {
            report.finite_sample_p = Some(finite_sample_bound(&bp, mse0, t)?);
        }
        if let Ok((f, p)) = asymptotic_bounds(&bp) {
            report.filter_bound_p = Some(f);
            report.prediction_bound_p = Some(p);
            report.filter_bound_euclidean = Some(to_euclidean(f, fc.penalty(), None));
        }
        report.params = Some(bp);
    }
    Ok(vec![write_json(&cfg.out_dir(), "report.json", &report)?])
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let model = build_model(cfg)?;
    let sim = simulate(&dgp_spec(cfg, &model)?)?;
    let (k, n) = (model.param_dim(), model.obs_dim());
    let mut header = vec!["t".to_string()];
    header.extend((0..k).map(|j| if k == 1 { "state".to_string() } else { format!("state_{j}") }));
    header.extend((0..n).map(|j| if n == 1 { "y".to_string() } else { format!("y_{j}") }));
    let rows: Vec<Vec<String>> = (0..sim.observations.len())
        .map(|t| {
            let mut r = vec![(t + 1).to_string()];
            r.extend(sim.states[t + 1].iter().map(|v| fmt_f64(*v)));
            r.extend(sim.observations[t].iter().map(|v| fmt_f64(*v)));
            r
        })
        .collect();
    let mut paths = Vec::new();
    let emit = cfg.emit()?;
    if emit.csv {
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        paths.push(write_csv(&cfg.out_dir(), "series.csv", &h, &rows)?);
    }
    if emit.json {
        paths.push(write_json(&cfg.out_dir(), "report.json", &cfg)?);
    }
    Ok(paths)
}

fn overrides(cfg: &RunConfig) -> Overrides {
    Overrides {
        reps: cfg.reps,
        t_len: cfg.t_len,
        in_sample: cfg.in_sample,
        k: cfg.k,
        n: cfg.n,
        alpha: cfg.alpha,
        beta: cfg.beta,
        sigma: cfg.sigma,
        sigma_xis: cfg.sigma_xis.clone(),
        models: cfg.models.clone(),
        restarts: cfg.restarts,
        gaussian_state: cfg.gaussian_state.unwrap_or(false),
        paper_scale: cfg.paper_scale.unwrap_or(false),
    }
}

pub fn cmd_experiment(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let study = RunConfig::require(&cfg.study, "study")?;
    let res = run_experiment(study, &overrides(cfg), cfg.seed())?;
    let dir = cfg.out_dir();
    let emit = cfg.emit()?;
    let mut paths = Vec::new();
    if emit.csv {
        let header = ["study", "model", "filter", "sigma_xi", "beta", "rep", "eta", "mse", "kl", "diverged", "fit_failed"];
        let rows: Vec<Vec<String>> = res
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.study.clone(),
                    r.model.clone(),
                    r.filter.clone(),
                    fmt_f64(r.sigma_xi),
                    fmt_f64(r.beta),
                    r.rep.to_string(),
                    fmt_f64(r.eta),
                    fmt_f64(r.mse),
                    fmt_f64(r.kl),
                    r.diverged.to_string(),
                    r.fit_failed.to_string(),
                ]
            })
            .collect();
        paths.push(write_csv(&dir, "reps.csv", &header, &rows)?);
        let mut steps = Vec::new();
        for s in &res.results {
            for (t, v) in s.per_step_mse.iter().flatten().enumerate() {
                steps.push(vec![s.model.clone(), s.filter.clone(), fmt_f64(s.beta), t.to_string(), fmt_f64(*v)]);
            }
        }
        if !steps.is_empty() {
            paths.push(write_csv(&dir, "per_step.csv", &["model", "filter", "beta", "t", "mse"], &steps)?);
        }
    }
    if emit.json {
        paths.push(write_json(&dir, "summary.json", &res.results)?);
    }
    Ok(paths)
}
