//! Flat TOML run configuration.
//!
//! Every key is optional at parse time; each subcommand checks for the keys it
//! needs. Unknown keys are rejected so that typos surface as errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scorefilt::models::ShapeMap;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Filter,
    Fit,
    Stability,
    Bounds,
    Simulate,
    Experiment,
}

/// A scalar or a list; scalars are promoted to one-element lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,

    // model and filter
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "ShapeMap::is_empty")]
    pub shape: ShapeMap,
    /// `isd` or `esd`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<OneOrMany<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_init: Option<OneOrMany<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relax_penalty_condition: Option<bool>,

    // data
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<OneOrMany<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,

    // estimation
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimate_shapes: Vec<String>,

    // simulated data-generating process
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp_omega: Option<OneOrMany<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp_phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_xi: Option<f64>,
    /// `gaussian`, `t6` or `sphere`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub innovation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_state: Option<OneOrMany<f64>>,

    // bounds
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_omega2: Option<f64>,
    /// `none`, `eta` or `eta_chi`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimize: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,

    // experiments
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_sample: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_xis: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_state: Option<bool>,

    // output
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emit: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper_scale: Option<bool>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DATA_DIR_VAR: &str = "SCOREFILT_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emit {
    pub csv: bool,
    pub json: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::Other(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn emit(&self) -> Result<Emit, Failure> {
        let Some(list) = &self.emit else {
            return Ok(Emit { csv: true, json: true });
        };
        let mut e = Emit { csv: false, json: false };
        for f in list {
            match f.trim() {
                "csv" => e.csv = true,
                "json" => e.json = true,
                other => return Err(Failure::Config(format!("unknown emit format `{other}`"))),
            }
        }
        Ok(e)
    }

    /// Data path, resolved against `SCOREFILT_DATA_DIR` when relative.
    pub fn data_path(&self) -> Option<PathBuf> {
        let p = self.data.clone()?;
        if p.is_relative() {
            if let Ok(dir) = std::env::var(DATA_DIR_VAR) {
                return Some(Path::new(&dir).join(p));
            }
        }
        Some(p)
    }

    pub fn require<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T, Failure> {
        value.as_ref().ok_or_else(|| Failure::Config(format!("missing config key `{key}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_toml("modle = \"poisson_exp\"").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("modle"));
    }

    #[test]
    fn integers_and_scalars_promote() {
        let c = RunConfig::from_toml("model = \"student_location\"\nshape = { nu = 4, sigma2 = 0.5 }\nomega = 1.5\n").unwrap();
        assert_eq!(c.omega.unwrap().to_vec(), vec![1.5]);
        assert_eq!(c.shape.len(), 2);
    }

    #[test]
    fn emit_parsing() {
        let c = RunConfig { emit: Some(vec!["json".into()]), ..Default::default() };
        assert_eq!(c.emit().unwrap(), Emit { csv: false, json: true });
        let bad = RunConfig { emit: Some(vec!["xml".into()]), ..Default::default() };
        assert!(bad.emit().is_err());
    }
}
