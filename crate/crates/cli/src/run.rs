//! The full run: slice, fit, multiplex, mollify, and optionally extract a
//! ResNet; then measure everything against the target flow.

use std::path::Path;

use odenet::bounds::solution_range_bound;
use odenet::linalg::{distance, norm};
use odenet::pipeline::{assemble_h_l, mollify_stage, MollifyStage, StageReport};
use odenet::resnet::{depth_convergence_study, extract_resnet, forward, DepthRow, ResNetModel};
use odenet::solver::flow_map;
use odenet::{NeuronControls, VectorField};
use rayon::prelude::*;

use crate::report::{Construction, ErrorReport, Failure, LpTotals, Provenance, StageRow, Totals, REPORT_SCHEMA_VERSION};
use crate::schedule::schedule_to_string;
use crate::{write_file, CliError, RunConfig};

/// Everything a run produces. Fields after a failed stage are `None`.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub report: ErrorReport,
    pub assembly: Option<StageReport>,
    pub mollify: Option<MollifyStage>,
    pub piecewise: Option<NeuronControls>,
    pub smooth: Option<NeuronControls>,
    pub resnet: Option<ResNetModel>,
    pub depth_rows: Vec<DepthRow>,
}

fn partial(cfg: &RunConfig, stages: Vec<StageRow>, bound_reports: Vec<odenet::bounds::BoundReport>, stage: &str, err: &odenet::Error) -> ErrorReport {
    ErrorReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        epsilon: cfg.epsilon,
        horizon: cfg.horizon,
        budgets_met: false,
        stages,
        total_measured: None,
        l_p_measured: None,
        bound_reports,
        construction: None,
        failure: Some(Failure { stage: stage.to_string(), message: err.to_string() }),
        provenance: Provenance::of(cfg),
    }
}

/// Grid `L^p` norm of the errors: `(vol(D)/#grid · Σ e^p)^{1/p}`.
fn grid_lp(errors: &[f64], p: f64, volume: f64) -> f64 {
    let mean = errors.iter().map(|e| e.powf(p)).sum::<f64>() / errors.len() as f64;
    (volume * mean).powf(1.0 / p)
}

/// Runs the construction for a validated config. Stage failures give a
/// partial report naming the stage; only configuration and I/O problems
/// surface as errors.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutputs, CliError> {
    cfg.validate()?;
    let f = cfg.target_field()?;
    let f: &dyn VectorField = &*f;
    let domain = &cfg.domain;
    let (horizon, epsilon) = (cfg.horizon, cfg.epsilon);
    let third = epsilon / 3.0;
    let mut stages = Vec::new();
    let mut bounds = Vec::new();
    let mut outputs = RunOutputs {
        report: partial(cfg, vec![], vec![], "", &odenet::Error::Precondition(String::new())),
        assembly: None,
        mollify: None,
        piecewise: None,
        smooth: None,
        resnet: None,
        depth_rows: vec![],
    };

    let (piecewise, assembly) = match assemble_h_l(f, domain, horizon, epsilon, &cfg.assembly()) {
        Ok(v) => v,
        Err(e) => {
            outputs.report = partial(cfg, stages, bounds, "assembly", &e);
            return Ok(outputs);
        }
    };
    stages.push(StageRow::new(
        "time_slicing",
        assembly.time_slicing.measured,
        Some(assembly.time_slicing.certified),
        Some(third),
    ));
    stages.push(StageRow::new("multiplexing", assembly.multiplex_measured, None, Some(third)));
    bounds.push(assembly.time_slicing.clone());

    let (smooth, moll) = match mollify_stage(&piecewise, domain, epsilon, &cfg.solver) {
        Ok(v) => v,
        Err(e) => {
            outputs.report = partial(cfg, stages, bounds, "mollification", &e);
            outputs.assembly = Some(assembly);
            outputs.piecewise = Some(piecewise);
            return Ok(outputs);
        }
    };
    stages.push(StageRow::new("mollification", moll.flow.measured, Some(moll.flow.certified), Some(third)));
    bounds.push(moll.flow.clone());

    let points = domain.points();
    let reference = cfg.solver.reference();
    let target_end = flow_map(f, &points, horizon, &reference)?;
    let h_end = flow_map(&smooth, &points, horizon, &reference)?;
    let flow_errors: Vec<f64> = target_end.iter().zip(&h_end).map(|(a, b)| distance(a, b)).collect();
    let flow_total = flow_errors.iter().copied().fold(0.0, f64::max);

    // Displacement bounds at the grid point of largest norm.
    let corner = points
        .iter()
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .expect("domain grid is nonempty");
    bounds.push(solution_range_bound(f, corner, horizon, &cfg.solver)?);
    let mut r = solution_range_bound(&smooth, corner, horizon, &cfg.solver)?;
    r.name = "solution_range_controls".into();
    bounds.push(r);

    let mut resnet_errors = None;
    if let Some(depth) = cfg.resnet_depth {
        let model = extract_resnet(&smooth, depth)?;
        let outs: Vec<Result<Vec<f64>, odenet::Error>> =
            points.par_iter().map(|p| forward(&model, p).map(|o| o.0)).collect();
        let outs = outs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let rows = depth_convergence_study(&smooth, domain, &[depth], &cfg.solver)?;
        let row = &rows[0];
        stages.push(StageRow::new("resnet", row.sup_error, Some(row.envelope), None));
        bounds.push(
            odenet::bounds::BoundReport::new("resnet_envelope", row.envelope, row.sup_error)
                .with("omega", row.omega)
                .with("C", row.c)
                .with("depth", depth as f64),
        );
        resnet_errors = Some(target_end.iter().zip(&outs).map(|(a, b)| distance(a, b)).collect::<Vec<f64>>());
        outputs.resnet = Some(model);
        outputs.depth_rows = rows;
    }
    let resnet_total = resnet_errors.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max));

    let volume = domain.volume();
    let lp = LpTotals {
        p: cfg.lp,
        flow: grid_lp(&flow_errors, cfg.lp, volume),
        resnet: resnet_errors.as_ref().map(|e| grid_lp(e, cfg.lp, volume)),
    };
    let budgets_met = stages.iter().all(|s| s.passed)
        && flow_total < epsilon
        && resnet_total.is_none_or(|r| r < epsilon);
    let construction = Construction {
        slices: assembly.slices,
        tau: assembly.tau,
        widths: assembly.entries.iter().map(|e| e.width).collect(),
        repeats: assembly.entries.iter().map(|e| e.repeats).collect(),
        chain_holds: assembly.chain_holds,
        delta: moll.delta,
        delta_rule: moll.rule,
        eps_prime_formula: moll.eps_prime_formula,
        resnet_depth: cfg.resnet_depth,
    };
    outputs.report = ErrorReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        epsilon,
        horizon,
        budgets_met,
        stages,
        total_measured: Some(Totals { flow: flow_total, resnet: resnet_total }),
        l_p_measured: Some(lp),
        bound_reports: bounds,
        construction: Some(construction),
        failure: None,
        provenance: Provenance::of(cfg),
    };
    outputs.assembly = Some(assembly);
    outputs.mollify = Some(moll);
    outputs.piecewise = Some(piecewise);
    outputs.smooth = Some(smooth);
    Ok(outputs)
}

/// Per-stage `(t, error)` curves as CSV. All three curves share the solver's
/// base times.
pub fn stage_curves_csv(assembly: &StageReport, moll: Option<&MollifyStage>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "time_slicing", "multiplexing", "mollification"])?;
    for (i, t) in assembly.curve_times.iter().enumerate() {
        let m = moll.map(|m| m.curve[i].to_string()).unwrap_or_default();
        w.write_record([
            t.to_string(),
            assembly.slicing_curve[i].to_string(),
            assembly.multiplex_curve[i].to_string(),
            m,
        ])?;
    }
    crate::csv_text(w)
}

pub fn depth_rows_csv(rows: &[DepthRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["depth", "sup_error", "omega", "envelope", "c"])?;
    for r in rows {
        w.write_record([
            r.depth.to_string(),
            r.sup_error.to_string(),
            r.omega.to_string(),
            r.envelope.to_string(),
            r.c.to_string(),
        ])?;
    }
    crate::csv_text(w)
}

/// Writes every artifact of a run into `dir`. Called once, after all
/// computation has finished.
pub fn write_outputs(dir: &Path, o: &RunOutputs) -> Result<(), CliError> {
    if let Some(c) = &o.piecewise {
        write_file(dir, "controls_piecewise.json", &schedule_to_string(c))?;
    }
    if let Some(c) = &o.smooth {
        write_file(dir, "controls.json", &schedule_to_string(c))?;
    }
    if let Some(m) = &o.resnet {
        let mut s = serde_json::to_string_pretty(m)?;
        s.push('\n');
        write_file(dir, "resnet.json", &s)?;
    }
    if !o.depth_rows.is_empty() {
        write_file(dir, "resnet_depths.csv", &depth_rows_csv(&o.depth_rows)?)?;
    }
    if let Some(a) = &o.assembly {
        write_file(dir, "stages.csv", &stage_curves_csv(a, o.mollify.as_ref())?)?;
    }
    write_file(dir, "report.json", &o.report.to_json())?;
    Ok(())
}
