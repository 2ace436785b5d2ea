//! Run configuration: a flat, schema-versioned TOML file whose sections
//! mirror the library types. Unknown keys are rejected so typos fail fast.

use serde::Deserialize;
use std::path::Path;
use thiserror::Error;
use viscoflow::densities::MaterialParams;
use viscoflow::field::Grid;
use viscoflow::mms::MmsConfig;
use viscoflow::tensor::Mat;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Read(#[from] std::io::Error),
    #[error("cannot parse config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub p_tilde: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    #[serde(default = "default_scenario")]
    scenario: String,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    material: RawMaterial,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    stepper: RawStepper,
    #[serde(default)]
    sampling: RawSampling,
}

fn default_scenario() -> String {
    "small-strain".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMaterial {
    d: usize,
    p: f64,
    p_tilde: f64,
    q: f64,
    alpha_w: f64,
    beta_w: f64,
    kappa_p: f64,
    /// Anisotropy A = a_scale * Id.
    a_scale: f64,
    delta: f64,
}

impl Default for RawMaterial {
    fn default() -> Self {
        RawMaterial {
            d: 2,
            p: 4.0,
            p_tilde: 2.0,
            q: 4.0,
            alpha_w: 1.0,
            beta_w: 1.0,
            kappa_p: 1.0,
            a_scale: 1.0,
            delta: 0.01,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    n: usize,
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid { n: 9 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawStepper {
    tau: f64,
    horizon: f64,
    inner_tol: f64,
    inner_max_iters: usize,
    /// Binary field checkpoint cadence (steps); 0 writes only the final state.
    checkpoint_every: usize,
}

impl Default for RawStepper {
    fn default() -> Self {
        RawStepper {
            tau: 0.01,
            horizon: 0.2,
            inner_tol: 1e-10,
            inner_max_iters: 3000,
            checkpoint_every: 0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSampling {
    count: usize,
    amplitude: f64,
    degree: usize,
}

impl Default for RawSampling {
    fn default() -> Self {
        RawSampling { count: 500, amplitude: 0.05, degree: 3 }
    }
}

/// Fully validated run configuration.
pub struct RunConfig {
    pub scenario: String,
    pub seed: u64,
    pub params: MaterialParams<f64>,
    pub grid: Grid,
    pub stepper: MmsConfig<f64>,
    pub checkpoint_every: usize,
    pub sample_count: usize,
    pub sample_amplitude: f64,
    pub sample_degree: usize,
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = match path {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => toml::from_str("schema_version = 1")?,
    };
    if raw.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::Schema(raw.schema_version));
    }
    let m = &raw.material;
    let mut params = MaterialParams::<f64>::reference(m.d);
    params.p = m.p;
    params.p_tilde = overrides.p_tilde.unwrap_or(m.p_tilde);
    params.q = m.q;
    params.alpha_w = m.alpha_w;
    params.beta_w = m.beta_w;
    params.kappa_p = m.kappa_p;
    params.a = Mat::identity(m.d).scale(m.a_scale);
    params.delta = m.delta;
    params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if raw.grid.n < 5 || raw.grid.n > 65 {
        return Err(ConfigError::Invalid(format!("grid n = {} out of range 5..=65", raw.grid.n)));
    }
    let grid = Grid::new(m.d, raw.grid.n);
    let s = &raw.stepper;
    let mut stepper = MmsConfig::new(overrides.tau.unwrap_or(s.tau), s.horizon);
    stepper.inner_tol = s.inner_tol;
    stepper.inner_max_iters = s.inner_max_iters;
    stepper.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(RunConfig {
        scenario: raw.scenario,
        seed: overrides.seed.or(raw.seed).unwrap_or(2024),
        params,
        grid,
        stepper,
        checkpoint_every: s.checkpoint_every,
        sample_count: raw.sampling.count,
        sample_amplitude: raw.sampling.amplitude,
        sample_degree: raw.sampling.degree,
    })
}
