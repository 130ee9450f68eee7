//! Scenario/run configuration: TOML file, command-line overrides and the
//! resolved parameter set echoed into `manifest.toml`.

use std::path::Path;

use rsmfc::model::{expand_lq, ControlRange, LqSpec, ModelSpec, PolynomialModel};
use rsmfc::riccati::Case;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    #[default]
    Lq,
    CustomTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FilterSource {
    #[default]
    Particle,
    ClosedForm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default)]
    pub kind: ScenarioKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub theta: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub n_steps: Option<usize>,
    pub x0: Option<f64>,
    pub u_lo: Option<f64>,
    pub u_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coeff_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<PolynomialModel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub particles: Option<usize>,
    pub case: Option<u8>,
    pub source: Option<FilterSource>,
    pub thetas: Option<Vec<f64>>,
    /// Constant control used for custom scenarios.
    pub control: Option<f64>,
    /// Number of paths written to `trajectory.csv`.
    pub dump_paths: Option<usize>,
    pub observation_paths: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub particles: Option<usize>,
    pub case: Option<u8>,
    pub source: Option<FilterSource>,
}

pub enum Scenario {
    Lq(LqSpec),
    Custom(Box<ModelSpec>),
}

pub struct Resolved {
    /// Fully populated configuration, written back as the manifest.
    pub file: ConfigFile,
    pub scenario: Scenario,
    pub n_steps: usize,
    pub seed: u64,
    pub paths: usize,
    pub particles: usize,
    pub case: Case,
    pub source: FilterSource,
    pub thetas: Vec<f64>,
    pub control: f64,
    pub dump_paths: usize,
    pub observation_paths: usize,
}

impl Resolved {
    pub fn lq(&self) -> Result<&LqSpec, CliError> {
        match &self.scenario {
            Scenario::Lq(s) => Ok(s),
            Scenario::Custom(_) => Err(CliError::Config(
                "this command needs the closed-form LQ scenario (scenario.kind = \"lq\")".into(),
            )),
        }
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        match &self.scenario {
            Scenario::Lq(s) => expand_lq(s).map_err(config_err),
            Scenario::Custom(m) => Ok(m.as_ref().clone()),
        }
    }
}

fn config_err(e: rsmfc::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        Err(CliError::Config(format!("invalid parameter `{name}`: must be positive")))
    } else {
        Ok(v)
    }
}

pub fn resolve(mut file: ConfigFile, over: &Overrides) -> Result<Resolved, CliError> {
    let defaults = LqSpec::default_scenario();
    let s = &mut file.scenario;
    let theta = *s.theta.get_or_insert(defaults.theta);
    let horizon = *s.horizon.get_or_insert(defaults.horizon);
    let n_steps = positive("n_steps", *s.n_steps.get_or_insert(200))?;
    let x0 = *s.x0.get_or_insert(defaults.x0);
    let u_lo = *s.u_lo.get_or_insert(defaults.controls.lo);
    let u_hi = *s.u_hi.get_or_insert(defaults.controls.hi);
    let controls = ControlRange::new(u_lo, u_hi).map_err(config_err)?;

    let scenario = match s.kind {
        ScenarioKind::Lq => {
            if s.coefficients.is_some() {
                return Err(CliError::Config(
                    "invalid parameter `coefficients`: only allowed with kind = \"custom-table\"".into(),
                ));
            }
            let spec = LqSpec {
                a: *s.a.get_or_insert(defaults.a),
                b_gain: *s.b.get_or_insert(defaults.b_gain),
                alpha: *s.alpha.get_or_insert(defaults.alpha),
                beta: *s.beta.get_or_insert(defaults.beta),
                sigma: *s.sigma.get_or_insert(defaults.sigma),
                theta,
                horizon,
                x0,
                controls,
            };
            // validates the remaining keys
            let model = expand_lq(&spec).map_err(config_err)?;
            if let Some(c) = s.coeff_bound {
                model.with_coeff_bound(c).map_err(config_err)?;
            }
            Scenario::Lq(spec)
        }
        ScenarioKind::CustomTable => {
            if s.a.is_some() || s.b.is_some() || s.alpha.is_some() || s.beta.is_some() || s.sigma.is_some() {
                return Err(CliError::Config(
                    "custom-table scenarios take their coefficients from [scenario.coefficients], not a/b/alpha/beta/sigma".into(),
                ));
            }
            let poly = s
                .coefficients
                .as_ref()
                .ok_or_else(|| CliError::Config("missing key `coefficients` for kind = \"custom-table\"".into()))?;
            let coeffs = poly.to_coefficients().map_err(config_err)?;
            let mut model = ModelSpec::new(coeffs, theta, horizon, x0)
                .map_err(config_err)?
                .with_controls(controls);
            if let Some(c) = s.coeff_bound {
                model = model.with_coeff_bound(c).map_err(config_err)?;
            }
            Scenario::Custom(Box::new(model))
        }
    };

    let r = &mut file.run;
    if let Some(v) = over.seed {
        r.seed = Some(v);
    }
    if let Some(v) = over.paths {
        r.paths = Some(v);
    }
    if let Some(v) = over.particles {
        r.particles = Some(v);
    }
    if let Some(v) = over.case {
        r.case = Some(v);
    }
    if let Some(v) = over.source {
        r.source = Some(v);
    }
    let seed = *r.seed.get_or_insert(42);
    let paths = positive("paths", *r.paths.get_or_insert(10_000))?;
    let particles = positive("particles", *r.particles.get_or_insert(2_000))?;
    let case_idx = *r.case.get_or_insert(1);
    let case = Case::from_index(case_idx)
        .ok_or_else(|| CliError::Config(format!("invalid parameter `case`: expected 1 or 2, got {case_idx}")))?;
    let source = *r.source.get_or_insert(FilterSource::Particle);
    let thetas = r.thetas.get_or_insert_with(|| vec![0.05, 0.1, 0.2, 0.4]).clone();
    if thetas.is_empty() || thetas.iter().any(|t| !t.is_finite() || *t == 0.0) {
        return Err(CliError::Config("invalid parameter `thetas`: need finite nonzero values".into()));
    }
    let control = *r.control.get_or_insert(0.0);
    if !control.is_finite() {
        return Err(CliError::Config("invalid parameter `control`: must be finite".into()));
    }
    let dump_paths = *r.dump_paths.get_or_insert(64);
    let observation_paths = positive("observation_paths", *r.observation_paths.get_or_insert(8))?;

    Ok(Resolved {
        file,
        scenario,
        n_steps,
        seed,
        paths,
        particles,
        case,
        source,
        thetas,
        control,
        dump_paths,
        observation_paths,
    })
}
