//! Run configuration files.
//!
//! A configuration is a TOML document with the sections `[system]`,
//! `[time]`, `[grid]`, `[sampling]` and `[diagnostic]`. Unknown keys are
//! rejected. Everything is validated by [`RunConfig::resolve`] before any
//! integration starts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use ftdr_core::divergence::DivergenceKind;
use ftdr_core::dynamics::SystemDescription;
use ftdr_core::tangent::Directions;
use ftdr_core::ulam::SlicePlane;
use ftdr_core::{Diagnostic, Domain, DynamicsSpec, GridPartition, IntegratorConfig, Sampling, Scheme};

pub const DEFAULT_DT: f64 = 1e-2;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub time: TimeSection,
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub diagnostic: DiagnosticSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub multiplicative: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default)]
    pub t0: f64,
    pub tau: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub scheme: Option<Scheme>,
    /// Repeat the computation at `dt / 2` and record the largest change.
    #[serde(default)]
    pub convergence_check: bool,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            tau: None,
            dt: DEFAULT_DT,
            scheme: None,
            convergence_check: false,
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub torus: Option<[f64; 2]>,
    pub bounds: Option<Vec<[f64; 2]>>,
    pub counts: Vec<usize>,
    pub slice: Option<SliceSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    pub axis: String,
    pub value: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default = "default_samples")]
    pub samples_per_axis: usize,
    #[serde(default = "one")]
    pub realizations: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one_u32")]
    pub refinement: u32,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            samples_per_axis: default_samples(),
            realizations: 1,
            master_seed: 0,
            refinement: 1,
        }
    }
}

fn default_samples() -> usize {
    5
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_divergence")]
    pub divergence: String,
    pub alpha: Option<f64>,
    #[serde(default = "default_directions")]
    pub directions: usize,
}

impl Default for DiagnosticSection {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            divergence: default_divergence(),
            alpha: None,
            directions: default_directions(),
        }
    }
}

fn default_kind() -> String {
    "ftdr".into()
}

fn default_divergence() -> String {
    "kl".into()
}

fn default_directions() -> usize {
    16
}

/// A fully validated run.
#[derive(Debug, Clone)]
pub struct Run {
    pub spec: DynamicsSpec,
    pub partition: Option<GridPartition>,
    pub t0: f64,
    pub tau: f64,
    pub cfg: IntegratorConfig,
    pub sampling: Sampling,
    pub diagnostic: Diagnostic,
    pub convergence_check: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("{path}: {msg}")]
    Syntax { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_string(),
            msg: e.to_string().trim_end().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Validates every section and builds the run, applying command-line
    /// overrides for `tau` and the master seed.
    pub fn resolve(&self, tau_override: Option<f64>, seed_override: Option<u64>) -> Result<Run, ConfigError> {
        let partition = self.grid.as_ref().map(|g| g.partition()).transpose()?;

        let domain = match &partition {
            Some(p) if p.domain.is_periodic() => p.domain.clone(),
            Some(p) => Domain::Unbounded { dim: p.domain.dim() },
            None => Domain::Unbounded { dim: self.natural_dim()? },
        };
        let desc = SystemDescription {
            name: self.system.name.clone(),
            params: self.system.params.clone(),
            sigma: self.system.sigma.clone(),
            matrix: self.system.matrix.clone(),
            multiplicative: self.system.multiplicative.clone(),
        };
        let spec = DynamicsSpec::from_description(&desc, domain).map_err(|e| invalid(format!("[system] {e}")))?;
        if let Some(p) = &partition {
            p.check_compatible(&spec).map_err(|e| invalid(format!("[grid] {e}")))?;
        }

        let t0 = self.time.t0;
        let tau = tau_override
            .or(self.time.tau)
            .ok_or_else(|| invalid("[time] tau is required (or pass --tau)"))?;
        if !t0.is_finite() {
            return Err(invalid("[time] t0 must be finite"));
        }
        if !tau.is_finite() || tau == 0.0 {
            return Err(invalid(format!("[time] tau must be finite and nonzero, got {tau}")));
        }
        let scheme = self.time.scheme.unwrap_or(if spec.is_deterministic() {
            Scheme::Rk4
        } else {
            Scheme::StratonovichHeun
        });
        let cfg = IntegratorConfig { scheme, dt: self.time.dt };
        cfg.validate(&spec).map_err(|e| invalid(format!("[time] {e}")))?;

        let s = &self.sampling;
        let sampling = Sampling::new(s.samples_per_axis, s.realizations, seed_override.unwrap_or(s.master_seed))
            .with_refinement(s.refinement);
        sampling.validate().map_err(|e| invalid(format!("[sampling] {e}")))?;

        let diagnostic = self.diagnostic.resolve()?;

        Ok(Run {
            spec,
            partition,
            t0,
            tau,
            cfg,
            sampling,
            diagnostic,
            convergence_check: self.time.convergence_check,
        })
    }

    fn natural_dim(&self) -> Result<usize, ConfigError> {
        match self.system.name.as_str() {
            "double_gyre" => Ok(2),
            "hills_vortex" => Ok(3),
            "linear" => self
                .system
                .matrix
                .as_ref()
                .map(|m| m.len())
                .filter(|d| (1..=3).contains(d))
                .ok_or_else(|| invalid("[system] linear needs a 1x1, 2x2 or 3x3 matrix")),
            "translation" => {
                let n = ["c0", "c1", "c2"].iter().rposition(|k| self.system.params.contains_key(*k));
                Ok(n.map_or(1, |i| i + 1))
            }
            other => Err(invalid(format!("[system] unknown system `{other}`"))),
        }
    }
}

impl GridSection {
    fn partition(&self) -> Result<GridPartition, ConfigError> {
        let domain = match (&self.torus, &self.bounds) {
            (Some([lx, ly]), None) => Domain::Torus2D { lx: *lx, ly: *ly },
            (None, Some(b)) => Domain::Box {
                bounds: b.iter().map(|[lo, hi]| (*lo, *hi)).collect(),
            },
            (Some(_), Some(_)) => return Err(invalid("[grid] give either torus or bounds, not both")),
            (None, None) => return Err(invalid("[grid] needs torus or bounds")),
        };
        let slice = self
            .slice
            .as_ref()
            .map(|s| {
                let axis = match s.axis.as_str() {
                    "x" => 0,
                    "y" => 1,
                    "z" => 2,
                    other => return Err(invalid(format!("[grid.slice] axis must be x, y or z, got `{other}`"))),
                };
                Ok(SlicePlane { axis, value: s.value })
            })
            .transpose()?;
        GridPartition::new(domain, self.counts.clone(), slice).map_err(|e| invalid(format!("[grid] {e}")))
    }
}

impl DiagnosticSection {
    fn resolve(&self) -> Result<Diagnostic, ConfigError> {
        match self.kind.as_str() {
            "ftdr" => {
                let tag = match self.alpha {
                    Some(a) => format!("{}:{a}", self.divergence),
                    None => self.divergence.clone(),
                };
                let kind: DivergenceKind = tag.parse().map_err(|e| invalid(format!("[diagnostic] {e}")))?;
                kind.validate().map_err(|e| invalid(format!("[diagnostic] {e}")))?;
                Ok(Diagnostic::Ftdr(kind))
            }
            "ftle_max" => Ok(Diagnostic::FtleMax),
            "ftle_min" => Ok(Diagnostic::FtleMin),
            "ftle_stoch" => {
                if self.directions == 0 {
                    return Err(invalid("[diagnostic] directions must be at least 1"));
                }
                Ok(Diagnostic::FtleStoch(Directions::UniformSphere(self.directions)))
            }
            other => Err(invalid(format!(
                "[diagnostic] kind must be ftdr, ftle_max, ftle_min or ftle_stoch, got `{other}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GYRE: &str = r#"
[system]
name = "double_gyre"
params = { A = 1.0, epsilon = 0.25, omega = 2.0 }

[time]
tau = 8.0

[grid]
torus = [2.0, 1.0]
counts = [64, 32]

[sampling]
samples_per_axis = 5
realizations = 20
master_seed = 7
"#;

    #[test]
    fn gyre_defaults() {
        let run = RunConfig::from_toml(GYRE, "gyre").unwrap().resolve(None, None).unwrap();
        assert_eq!(run.cfg, IntegratorConfig::rk4(DEFAULT_DT));
        assert_eq!(run.partition.as_ref().unwrap().n_boxes(), 64 * 32);
        assert_eq!(run.diagnostic.to_string(), "ftdr:kl");
        assert_eq!(run.sampling.master_seed, 7);
        assert_eq!(run.spec.domain, Domain::Torus2D { lx: 2.0, ly: 1.0 });
    }

    #[test]
    fn overrides() {
        let run = RunConfig::from_toml(GYRE, "gyre").unwrap().resolve(Some(-8.0), Some(3)).unwrap();
        assert_eq!(run.tau, -8.0);
        assert_eq!(run.sampling.master_seed, 3);
    }

    #[test]
    fn noisy_systems_default_to_heun() {
        let text = GYRE.replace("omega = 2.0 }", "omega = 2.0 }\nsigma = [0.01, 0.01]");
        let run = RunConfig::from_toml(&text, "gyre").unwrap().resolve(None, None).unwrap();
        assert_eq!(run.cfg.scheme, Scheme::StratonovichHeun);
        let rk4 = text.replace("tau = 8.0", "tau = 8.0\nscheme = \"rk4\"");
        assert!(RunConfig::from_toml(&rk4, "gyre").unwrap().resolve(None, None).is_err());
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let text = GYRE.replace("master_seed = 7", "master_sed = 7");
        let err = RunConfig::from_toml(&text, "gyre").unwrap_err().to_string();
        assert!(err.contains("master_sed"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn validation_failures() {
        for (from, to) in [
            ("samples_per_axis = 5", "samples_per_axis = 4"),
            ("counts = [64, 32]", "counts = [64, 0]"),
            ("name = \"double_gyre\"", "name = \"lorenz\""),
            ("tau = 8.0", "tau = 0.0"),
            ("omega = 2.0", "omega = 2.0, beta = 1.0"),
        ] {
            let text = GYRE.replace(from, to);
            let cfg = RunConfig::from_toml(&text, "gyre").unwrap();
            assert!(matches!(cfg.resolve(None, None), Err(ConfigError::Invalid(_))), "{to}");
        }
    }

    #[test]
    fn hills_slice_and_diagnostics() {
        let text = r#"
[system]
name = "hills_vortex"
[time]
tau = 1.0
[grid]
bounds = [[-3.0, 3.0], [-3.0, 3.0], [-3.0, 3.0]]
counts = [8, 9, 8]
slice = { axis = "y", value = 0.0 }
[diagnostic]
kind = "ftdr"
divergence = "alpha"
alpha = 0.5
"#;
        let run = RunConfig::from_toml(text, "hills").unwrap().resolve(None, None).unwrap();
        assert_eq!(run.partition.unwrap().active_boxes().len(), 64);
        assert_eq!(run.diagnostic.to_string(), "ftdr:alpha:0.5");
        assert_eq!(run.spec.domain, Domain::Unbounded { dim: 3 });
    }
}
