//! Averaging families: fast switching between fields against the flow of
//! their mean.

use std::str::FromStr;

use odenet::field::LinearField;
use odenet::pipeline::{averaging_experiment, AveragingStudy};
use odenet::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Two copies of the same constant field.
    Constant,
    /// `x' = ±1` in alternation on `R`, mean zero.
    Alternation,
    /// Two planar linear fields in alternation.
    LinearPair,
}

impl FromStr for Family {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "constant" => Ok(Family::Constant),
            "alternation" => Ok(Family::Alternation),
            "linear_pair" => Ok(Family::LinearPair),
            _ => Err(CliError::Config(format!(
                "unknown family {s:?}; expected constant, alternation or linear_pair"
            ))),
        }
    }
}

pub const LINEAR_PAIR_A1: [f64; 4] = [0.0, 1.0, -1.0, 0.0];
pub const LINEAR_PAIR_A2: [f64; 4] = [-0.5, 0.0, 0.3, -0.2];

/// Parts, switching fractions and initial state of a family.
pub fn family_setup(family: Family) -> (Vec<LinearField>, Vec<f64>, Vec<f64>) {
    let affine = |b: f64| LinearField::new(1, vec![0.0], vec![b]).expect("1-D affine field");
    match family {
        Family::Constant => (vec![affine(0.5), affine(0.5)], vec![0.5, 0.5], vec![0.2]),
        Family::Alternation => (vec![affine(1.0), affine(-1.0)], vec![0.5, 0.5], vec![0.0]),
        Family::LinearPair => (
            vec![
                LinearField::homogeneous(2, LINEAR_PAIR_A1.to_vec()).expect("2x2"),
                LinearField::homogeneous(2, LINEAR_PAIR_A2.to_vec()).expect("2x2"),
            ],
            vec![0.5, 0.5],
            vec![1.0, 0.5],
        ),
    }
}

pub fn run_averaging(
    family: Family,
    m_list: &[usize],
    horizon: f64,
    solver: &SolverConfig,
) -> Result<AveragingStudy, CliError> {
    let (parts, fractions, xi) = family_setup(family);
    Ok(averaging_experiment(&parts, &fractions, &xi, horizon, m_list, solver)?)
}

pub fn averaging_csv(study: &AveragingStudy) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "distance"])?;
    for r in &study.rows {
        w.write_record([r.m.to_string(), r.distance.to_string()])?;
    }
    crate::csv_text(w)
}
