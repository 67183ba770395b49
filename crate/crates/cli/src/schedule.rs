//! Control-schedule files: neuron controls as JSON.
//!
//! Arrays are row-major: `alpha` and `gamma` hold `N` values per entry,
//! `beta` holds `N²` values per entry (row by row). A piecewise-constant
//! schedule has one entry per piece between consecutive `times`; a sampled
//! schedule has one entry per time.

use std::path::Path;

use odenet::{Activation, NeuronControls, Representation};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEDULE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub format: u32,
    pub representation: Representation,
    pub activation: Activation,
    pub horizon: f64,
    pub dim: usize,
    pub times: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl From<&NeuronControls> for ScheduleFile {
    fn from(c: &NeuronControls) -> Self {
        ScheduleFile {
            format: SCHEDULE_FORMAT,
            representation: c.representation(),
            activation: c.sigma(),
            horizon: c.horizon(),
            dim: c.dim(),
            times: c.times().to_vec(),
            alpha: c.alpha_flat().to_vec(),
            beta: c.beta_flat().to_vec(),
            gamma: c.gamma_flat().to_vec(),
        }
    }
}

impl TryFrom<ScheduleFile> for NeuronControls {
    type Error = CliError;
    fn try_from(s: ScheduleFile) -> Result<Self, CliError> {
        if s.format != SCHEDULE_FORMAT {
            return Err(CliError::Config(format!("unsupported schedule format {}", s.format)));
        }
        Ok(NeuronControls::from_flat(
            s.activation,
            s.horizon,
            s.representation,
            s.dim,
            s.times,
            s.alpha,
            s.beta,
            s.gamma,
        )?)
    }
}

pub fn schedule_to_string(c: &NeuronControls) -> String {
    let mut s = serde_json::to_string_pretty(&ScheduleFile::from(c)).expect("schedule serializes");
    s.push('\n');
    s
}

pub fn schedule_from_str(text: &str) -> Result<NeuronControls, CliError> {
    let file: ScheduleFile = serde_json::from_str(text)?;
    file.try_into()
}

pub fn read_schedule(path: &Path) -> Result<NeuronControls, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    schedule_from_str(&text)
}

pub fn write_schedule(path: &Path, c: &NeuronControls) -> Result<(), CliError> {
    std::fs::write(path, schedule_to_string(c)).map_err(|e| CliError::io(path, e))
}
