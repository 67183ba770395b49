//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use odenet::field::{
    ConstantField, LinearField, NegTanhField, PeriodicForcingField, TanhRotationField, TimeLinearField, ZeroField,
};
use odenet::pipeline::AssemblyConfig;
use odenet::shallow::FitConfig;
use odenet::{Activation, Domain, SolverConfig, VectorField};
use serde::{Deserialize, Serialize};

use crate::schedule::read_schedule;
use crate::CliError;

/// Built-in target fields, or a control schedule read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Zero { dim: usize },
    Constant { value: Vec<f64> },
    /// `x ↦ A x + b`; `matrix` is a list of rows.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
    /// `x ↦ -gain · tanh(x)`.
    NegTanh { dim: usize, gain: f64 },
    TanhRotation { gain: f64, phase: f64, rate: f64 },
    TimeLinear { dim: usize },
    PeriodicForcing { dim: usize, decay: f64, amplitude: f64, period: f64 },
    /// Neuron controls from a control-schedule file; relative paths resolve
    /// against the config file.
    Schedule { path: PathBuf },
}

fn default_lp() -> f64 {
    2.0
}

fn default_tube_samples() -> usize {
    21
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetSpec,
    pub domain: Domain,
    pub horizon: f64,
    pub epsilon: f64,
    pub activation: Activation,
    pub fit: FitConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Exponent of the reported grid `L^p` error.
    #[serde(default = "default_lp")]
    pub lp: f64,
    #[serde(default = "default_tube_samples")]
    pub tube_samples_per_axis: usize,
    /// Depth of the extracted ResNet; none skips that stage.
    #[serde(default)]
    pub resnet_depth: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates; relative schedule paths are resolved against the
    /// directory holding `path`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let TargetSpec::Schedule { path: p } = &mut cfg.target {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.lp.is_finite() && self.lp >= 1.0) {
            return bad(format!("lp must be at least 1, got {}", self.lp));
        }
        if self.tube_samples_per_axis == 0 {
            return bad("tube_samples_per_axis must be at least 1".into());
        }
        if self.resnet_depth == Some(0) {
            return bad("resnet_depth must be at least 1".into());
        }
        if let TargetSpec::Schedule { path } = &self.target {
            if !path.is_file() {
                return bad(format!("schedule file {} does not exist", path.display()));
            }
        }
        self.fit.validate()?;
        self.solver.validate()?;
        self.activation.validate()?;
        let f = self.target_field()?;
        if f.dim() != self.domain.dim() {
            return bad(format!("target has dimension {} but the domain has {}", f.dim(), self.domain.dim()));
        }
        Ok(())
    }

    pub fn target_field(&self) -> Result<Box<dyn VectorField>, CliError> {
        Ok(match &self.target {
            TargetSpec::Zero { dim } => Box::new(ZeroField { dim: *dim }),
            TargetSpec::Constant { value } => Box::new(ConstantField { value: value.clone() }),
            TargetSpec::Linear { matrix, offset } => {
                let n = matrix.len();
                if matrix.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config("linear target matrix must be square".into()));
                }
                let flat = matrix.concat();
                let offset = offset.clone().unwrap_or_else(|| vec![0.0; n]);
                Box::new(LinearField::new(n, flat, offset)?)
            }
            TargetSpec::NegTanh { dim, gain } => Box::new(NegTanhField { dim: *dim, gain: *gain }),
            TargetSpec::TanhRotation { gain, phase, rate } => Box::new(TanhRotationField {
                gain: *gain,
                phase: *phase,
                rate: *rate,
            }),
            TargetSpec::TimeLinear { dim } => Box::new(TimeLinearField { dim: *dim }),
            TargetSpec::PeriodicForcing { dim, decay, amplitude, period } => Box::new(PeriodicForcingField {
                dim: *dim,
                decay: *decay,
                amplitude: *amplitude,
                period: *period,
            }),
            TargetSpec::Schedule { path } => {
                let c = read_schedule(path)?;
                if c.horizon() != self.horizon {
                    return Err(CliError::Config(format!(
                        "schedule horizon {} differs from the configured horizon {}",
                        c.horizon(),
                        self.horizon
                    )));
                }
                Box::new(c)
            }
        })
    }

    /// The run seed drives the feature dictionary.
    pub fn assembly(&self) -> AssemblyConfig {
        AssemblyConfig {
            activation: self.activation,
            fit: FitConfig { seed: self.seed, ..self.fit.clone() },
            solver: self.solver,
            tube_samples_per_axis: self.tube_samples_per_axis,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
horizon = 1.0
epsilon = 0.3
seed = 7
activation = { kind = "tanh" }
resnet_depth = 256

[target]
kind = "neg_tanh"
dim = 1
gain = 1.0

[domain]
lower = [-1.0]
upper = [1.0]
samples_per_axis = 21

[fit]
width_per_component = 1
feature_scale = 2.0
ridge = 1e-12
target_sup_error = 1e-2
axis_feature = true

[solver]
method = "rk4_reference"
time_steps = 64
"#;

    #[test]
    fn parses_sample() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.lp, 2.0);
        assert_eq!(cfg.tube_samples_per_axis, 21);
        assert_eq!(cfg.assembly().fit.seed, 7);
        assert_eq!(cfg.target_field().unwrap().dim(), 1);
    }

    #[test]
    fn rejects_bad_values_before_running() {
        for (from, to) in [
            ("epsilon = 0.3", "epsilon = 0.0"),
            ("horizon = 1.0", "horizon = -1.0"),
            ("dim = 1", "dim = 2"),
            ("time_steps = 64", "time_steps = 0"),
        ] {
            let cfg = RunConfig::from_toml(&SAMPLE.replace(from, to)).unwrap();
            assert!(matches!(cfg.validate(), Err(CliError::Config(_)) | Err(CliError::Core(_))), "{to}");
        }
        assert!(RunConfig::from_toml(&SAMPLE.replace("seed = 7", "seed = 7\nbogus = 1")).is_err());
        let cfg = RunConfig::from_toml(&SAMPLE.replace(
            "kind = \"neg_tanh\"\ndim = 1\ngain = 1.0",
            "kind = \"schedule\"\npath = \"/nonexistent/controls.json\"",
        ))
        .unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn linear_rows() {
        let cfg = RunConfig::from_toml(&SAMPLE.replace(
            "kind = \"neg_tanh\"\ndim = 1\ngain = 1.0",
            "kind = \"linear\"\nmatrix = [[0.5]]",
        ))
        .unwrap();
        let f = cfg.target_field().unwrap();
        let mut out = [0.0];
        f.eval(&[2.0], 0.0, &mut out);
        assert_eq!(out[0], 1.0);
    }
}
