//! The reflection `F(ξ) = -ξ` on `[-1, 1]` is not the time-`T` map of any
//! one-dimensional flow: flows preserve order, so `S(1) ≥ S(-1)` and one of
//! `|S(1) + 1|`, `|S(-1) - 1|` is at least 1. This module tries anyway and
//! records how close it gets.

use odenet::solver::{flow_map, solve_flow};
use odenet::{NeuronControls, NeuronParams, SolverConfig, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::run::run_pipeline;
use crate::{CliError, RunConfig};

/// Random constant controls are drawn from `[-3, 3]^3`.
pub const SEARCH_RANGE: f64 = 3.0;
/// Acceptance floor for the best error; the exact infimum is 1.
pub const ERROR_FLOOR: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub horizon: f64,
    /// Sup error of the pipeline's controls against the reflection.
    pub pipeline_error: Option<f64>,
    pub pipeline_failure: Option<String>,
    pub search_samples: usize,
    pub search_best: f64,
    /// `(α, β, γ)` of the best constant control.
    pub search_best_params: [f64; 3],
    pub best: f64,
    /// `min_t (x_+(t) - x_-(t))` over every run.
    pub min_crossing_gap: f64,
    pub passed: bool,
}

/// Sup error against `-ξ` on the grid and the smallest gap between the
/// trajectories from `+1` and `-1`.
pub fn reflection_error(
    f: &dyn VectorField,
    points: &[Vec<f64>],
    horizon: f64,
    solver: &SolverConfig,
) -> Result<(f64, f64), odenet::Error> {
    let ends = flow_map(f, points, horizon, solver)?;
    let err = points
        .iter()
        .zip(&ends)
        .map(|(p, e)| (e[0] + p[0]).abs())
        .fold(0.0, f64::max);
    let up = solve_flow(f, &[1.0], horizon, solver)?;
    let down = solve_flow(f, &[-1.0], horizon, solver)?;
    let gap = (0..up.len())
        .map(|i| up.state(i)[0] - down.state(i)[0])
        .fold(f64::INFINITY, f64::min);
    Ok((err, gap))
}

pub fn run_counterexample(base: &RunConfig, samples: usize) -> Result<CounterexampleReport, CliError> {
    let d = &base.domain;
    if d.dim() != 1 || d.lower() != [-1.0] || d.upper() != [1.0] {
        return Err(CliError::Config("the counterexample needs the domain [-1, 1]".into()));
    }
    let horizon = base.horizon;
    let points = d.points();
    let solver = &base.solver;
    let mut min_gap = f64::INFINITY;

    let (pipeline_error, pipeline_failure) = {
        let cfg = RunConfig { resnet_depth: None, ..base.clone() };
        let out = run_pipeline(&cfg)?;
        match (&out.smooth, &out.report.failure) {
            (Some(h), _) => {
                let (err, gap) = reflection_error(h, &points, horizon, solver)?;
                min_gap = min_gap.min(gap);
                (Some(err), None)
            }
            (None, Some(f)) => (None, Some(format!("{}: {}", f.stage, f.message))),
            (None, None) => (None, Some("no controls produced".into())),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let draws: Vec<[f64; 3]> = (0..samples)
        .map(|_| std::array::from_fn(|_| rng.random_range(-SEARCH_RANGE..=SEARCH_RANGE)))
        .collect();
    let results: Vec<Result<(f64, f64), odenet::Error>> = draws
        .par_iter()
        .map(|[a, b, g]| {
            let p = NeuronParams { alpha: vec![*a], beta: vec![*b], gamma: vec![*g] };
            let c = NeuronControls::constant(base.activation, horizon, p)?;
            reflection_error(&c, &points, horizon, solver)
        })
        .collect();
    let mut search_best = f64::INFINITY;
    let mut search_best_params = [f64::NAN; 3];
    for (r, params) in results.into_iter().zip(&draws) {
        let (err, gap) = r?;
        min_gap = min_gap.min(gap);
        if err < search_best {
            search_best = err;
            search_best_params = *params;
        }
    }
    let best = pipeline_error.map_or(search_best, |e| e.min(search_best));
    Ok(CounterexampleReport {
        horizon,
        pipeline_error,
        pipeline_failure,
        search_samples: samples,
        search_best,
        search_best_params,
        best,
        min_crossing_gap: min_gap,
        passed: best >= ERROR_FLOOR && min_gap > 0.0,
    })
}
