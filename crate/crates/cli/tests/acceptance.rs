//! Acceptance criteria. Runs without the libtest harness so that the
//! `PASS`/`FAIL` line of every criterion is always printed; exits nonzero if
//! any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::Matrix2;
use odenet::bounds::{
    flow_distance_bound, mollified_control_bounds, picard_gap_bound, solution_range_bound, tube_bound_check,
    tube_pairs, BoundReport,
};
use odenet::field::{FnField, LinearField};
use odenet::mollify::{l1_gaps, mollified_flow_error, mollify_controls};
use odenet::pipeline::{mollify_stage, SwitchedField};
use odenet::resnet::{depth_convergence_study, extract_resnet, forward};
use odenet::shallow::{fit_scalar, fit_vector_field, stack_components, FitConfig, ShallowField};
use odenet::solver::{picard_iterates, solve_flow};
use odenet::{Activation, Domain, NeuronControls, NeuronParams, Representation, SolverConfig, VectorField};
use odenet_cli::averaging::{run_averaging, Family, LINEAR_PAIR_A1, LINEAR_PAIR_A2};
use odenet_cli::counterexample::{run_counterexample, ERROR_FLOOR};
use odenet_cli::run::{run_pipeline, write_outputs, RunOutputs};
use odenet_cli::schedule::{schedule_from_str, schedule_to_string};
use odenet_cli::{RunConfig, TargetSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CERT_REL: f64 = 1e-6;
const CERT_ABS: f64 = 1e-9;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!("{} criterion {id} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
}

fn within(start: Instant, limit_s: u64) -> (bool, Duration) {
    let e = start.elapsed();
    (e < Duration::from_secs(limit_s), e)
}

fn cert_ok(r: &BoundReport) -> bool {
    r.measured <= r.certified * (1.0 + CERT_REL) + CERT_ABS
}

/// The contraction run: `x' = -tanh(x)` on `[-1, 1]`, `T = 1`, `ε = 0.3`.
const NEG_TANH: &str = include_str!("../../../configs/neg_tanh.toml");

fn neg_tanh_config() -> RunConfig {
    let cfg = RunConfig::from_toml(NEG_TANH).unwrap();
    cfg.validate().unwrap();
    cfg
}

/// Closed form of `x' = -tanh(x)`: `sinh x(t) = e^{-t} sinh ξ`.
fn neg_tanh_flow(xi: f64, t: f64) -> f64 {
    ((-t).exp() * xi.sinh()).asinh()
}

fn criterion_1_picard_matches_exponential() -> bool {
    let start = Instant::now();
    let f = LinearField::homogeneous(1, vec![1.0]).unwrap();
    let run = picard_iterates(&f, &[1.0], 1.0, 12, 1024).unwrap();
    let end = run.iterates[12].last()[0];
    let err = (end - std::f64::consts::E).abs();
    // F_0 = |f(ξ)| = 1 and Lip = 1.
    let mut worst = 0.0f64;
    let mut bound_ok = true;
    for n in 1..=12 {
        let (a, b) = (&run.iterates[n], &run.iterates[n - 1]);
        for (i, t) in a.times().iter().enumerate() {
            let gap = (a.state(i)[0] - b.state(i)[0]).abs();
            let cert = picard_gap_bound(1.0, 1.0, *t, n);
            let allowed = cert * (1.0 + CERT_REL) + CERT_ABS;
            worst = worst.max(gap / allowed);
            if gap > allowed {
                bound_ok = false;
            }
        }
    }
    let (fast, elapsed) = within(start, 1);
    let ok = err < 1e-6 && bound_ok && fast;
    verdict(
        1,
        "Picard vs e",
        ok,
        &format!("|x_12(1) - e| = {err:.3e}, max gap/(bound + slack) = {worst:.3e}, {elapsed:.2?}"),
    );
    ok
}

fn random_linear(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let a = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    (a, b)
}

fn random_neuron(rng: &mut ChaCha8Rng, n: usize) -> NeuronParams {
    NeuronParams {
        alpha: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        beta: (0..n * n).map(|_| rng.random_range(-1.5..1.5)).collect(),
        gamma: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// `g = f + s·u` with `|u| = 1`, so `‖f - g‖ = s` exactly.
fn shifted(f: std::sync::Arc<dyn VectorField>, s: f64, u: Vec<f64>) -> FnField {
    let lip = f.lipschitz();
    FnField::new(f.dim(), lip, move |x, t, out| {
        f.eval(x, t, out);
        for (o, d) in out.iter_mut().zip(&u) {
            *o += s * d;
        }
    })
    .autonomous()
}

fn criterion_2_certificate_corpus() -> bool {
    let start = Instant::now();
    let horizon = 1.0;
    let solver = SolverConfig::rk4(64);
    let mut reports = Vec::new();
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let n = 1 + (case % 3) as usize;
        let domain = Domain::cube(n, -1.0, 1.0, 5).unwrap();
        let f: std::sync::Arc<dyn VectorField> = if case % 2 == 0 {
            let (a, b) = random_linear(&mut rng, n);
            std::sync::Arc::new(LinearField::new(n, a, b).unwrap())
        } else {
            let terms = (0..3).map(|_| random_neuron(&mut rng, n)).collect();
            std::sync::Arc::new(ShallowField::new(Activation::Tanh, terms).unwrap())
        };
        let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= len);
        let s = rng.random_range(1e-3..5e-2);
        let g = shifted(f.clone(), s, u);

        let corner = vec![1.0; n];
        reports.push(solution_range_bound(&*f, &corner, horizon, &solver).unwrap());
        reports.push(flow_distance_bound(&*f, &g, &domain, horizon, &solver).unwrap());

        let growth = (f.lipschitz() * horizon).exp();
        let a = 4.0 * horizon * growth * s;
        let pairs = tube_pairs(&domain, 0.9 * a / (2.0 * growth), 8, case);
        let tube = tube_bound_check(&*f, &g, &domain, a, horizon, &pairs, &solver).unwrap();
        reports.push(tube.distance);
        reports.push(tube.containment);

        let pieces = 4;
        let times: Vec<f64> = (0..=pieces).map(|k| k as f64 / pieces as f64).collect();
        let params: Vec<NeuronParams> = (0..pieces).map(|_| random_neuron(&mut rng, n)).collect();
        let c = NeuronControls::new(Activation::Tanh, horizon, Representation::PiecewiseConstant, times, &params)
            .unwrap();
        let delta = if case % 4 < 2 { 0.05 } else { 0.1 };
        let (m1, m2) = mollified_control_bounds(&c, delta, &domain, &solver).unwrap();
        reports.push(m1);
        reports.push(m2);
        let smooth = mollify_controls(&c, delta).unwrap();
        reports.push(mollified_flow_error(&c, &smooth, &domain, &solver).unwrap());
    }
    let violations: Vec<&BoundReport> = reports.iter().filter(|r| !cert_ok(r)).collect();
    for r in &violations {
        println!("  violated: {} measured {} certified {}", r.name, r.measured, r.certified);
    }
    let (fast, elapsed) = within(start, 60);
    let ok = violations.is_empty() && fast;
    verdict(
        2,
        "certificate corpus",
        ok,
        &format!("{} reports over 50 cases, {} violated, {elapsed:.2?}", reports.len(), violations.len()),
    );
    ok
}

fn criterion_3_shallow_fit_of_linear_field() -> bool {
    let start = Instant::now();
    let a = [0.8, -0.5, 0.3, 0.6];
    let f = LinearField::homogeneous(2, a.to_vec()).unwrap();
    let domain = Domain::cube(2, -1.0, 1.0, 11).unwrap();
    let cfg = FitConfig { seed: 3, ..FitConfig::default() };
    let fit = fit_vector_field(&f, 0.0, Activation::Tanh, &domain, &cfg).unwrap();
    let again = fit_vector_field(&f, 0.0, Activation::Tanh, &domain, &cfg).unwrap();
    let deterministic = fit.field == again.field;

    // Independent validation on the 2x finer grid.
    let fine = domain.refined(2);
    let mut sup = 0.0f64;
    let mut out = [0.0; 2];
    for p in fine.points() {
        fit.field.eval(&p, 0.0, &mut out);
        let exact = [a[0] * p[0] + a[1] * p[1], a[2] * p[0] + a[3] * p[1]];
        sup = sup.max(((out[0] - exact[0]).powi(2) + (out[1] - exact[1]).powi(2)).sqrt());
    }

    // Stacking: component j of the stacked field is exactly fit j.
    let fits: Vec<_> = (0..2)
        .map(|j| {
            let fj = move |x: &[f64]| a[2 * j] * x[0] + a[2 * j + 1] * x[1];
            fit_scalar(&fj, j, Activation::Tanh, &domain, &cfg).unwrap()
        })
        .collect();
    let stacked = stack_components(Activation::Tanh, &fits).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut exact_stacking = true;
    for _ in 0..100 {
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        stacked.eval(&x, 0.0, &mut out);
        for j in 0..2 {
            exact_stacking &= out[j] == fits[j].eval(Activation::Tanh, &x);
        }
    }
    let (fast, elapsed) = within(start, 10);
    let ok = sup < 1e-2 && deterministic && exact_stacking && fast;
    verdict(
        3,
        "shallow fit",
        ok,
        &format!(
            "validation sup error {sup:.3e}, width {}, deterministic {deterministic}, stacking exact {exact_stacking}, {elapsed:.2?}",
            fit.field.width()
        ),
    );
    ok
}

/// `x' = Ā x` with `Ā` the mean of the pair, from the matrix exponential.
fn averaged_exact(t: f64, xi: [f64; 2]) -> [f64; 2] {
    let a1 = Matrix2::from_row_slice(&LINEAR_PAIR_A1);
    let a2 = Matrix2::from_row_slice(&LINEAR_PAIR_A2);
    let m = ((a1 + a2) * 0.5 * t).exp();
    let v = m * nalgebra::Vector2::new(xi[0], xi[1]);
    [v[0], v[1]]
}

fn criterion_4_averaging_rates() -> bool {
    let start = Instant::now();
    let m_list: Vec<usize> = (2..=8).map(|k| 1usize << k).collect();
    let solver = SolverConfig::rk4(2048);
    let study = run_averaging(Family::Alternation, &m_list, 1.0, &solver).unwrap();
    let ratios: Vec<f64> = study.rows.windows(2).map(|w| w[1].distance / w[0].distance).collect();
    let halving = ratios.iter().all(|r| *r <= 0.6);
    // Sawtooth oracle: x' = ±1 in halves of period 1/m peaks at 1/(2m).
    let oracle_gap = study
        .rows
        .iter()
        .map(|r| (r.distance - 0.5 / r.m as f64).abs())
        .fold(0.0, f64::max);
    let slope_ok = (study.slope + 1.0).abs() <= 0.15;

    let (parts, fractions, xi) = odenet_cli::averaging::family_setup(Family::LinearPair);
    let switched = SwitchedField::periodic(parts, &fractions, 1.0, 256).unwrap();
    let path = solve_flow(&switched, &xi, 1.0, &solver).unwrap();
    let mut dist = 0.0f64;
    for (i, t) in path.times().iter().enumerate() {
        let e = averaged_exact(*t, [xi[0], xi[1]]);
        let x = path.state(i);
        dist = dist.max(((x[0] - e[0]).powi(2) + (x[1] - e[1]).powi(2)).sqrt());
    }
    let (fast, elapsed) = within(start, 30);
    let ok = halving && slope_ok && oracle_gap < 1e-9 && dist < 1e-2 && fast;
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    verdict(
        4,
        "averaging",
        ok,
        &format!(
            "max ratio {worst_ratio:.4}, slope {:.4}, sawtooth gap {oracle_gap:.1e}, 2-D distance at m=256 {dist:.3e}, {elapsed:.2?}",
            study.slope
        ),
    );
    ok
}

fn flow_sup_vs_closed_form(h: &dyn VectorField, domain: &Domain, solver: &SolverConfig) -> f64 {
    domain
        .points()
        .iter()
        .map(|p| {
            let x = solve_flow(h, p, 1.0, &solver.reference()).unwrap();
            (x.last()[0] - neg_tanh_flow(p[0], 1.0)).abs()
        })
        .fold(0.0, f64::max)
}

fn criterion_5_end_to_end_contraction() -> bool {
    let start = Instant::now();
    let cfg = neg_tanh_config();
    let out = run_pipeline(&cfg).unwrap();
    let r = &out.report;
    let smooth = out.smooth.as_ref().expect("pipeline produced controls");
    let total = flow_sup_vs_closed_form(smooth, &cfg.domain, &cfg.solver);
    let stages: Vec<(String, f64)> = r
        .stages
        .iter()
        .filter(|s| s.budget.is_some())
        .map(|s| (s.name.clone(), s.measured))
        .collect();
    let stages_ok = stages.len() == 3 && stages.iter().all(|(_, m)| *m < 0.1);
    let reported = r.total_measured.as_ref().unwrap().flow;
    let (fast, elapsed) = within(start, 300);
    let ok = total < 0.3 && reported < 0.3 && stages_ok && r.budgets_met && fast;
    verdict(
        5,
        "end-to-end",
        ok,
        &format!("sup |S_f(T) - S_h(T)| = {total:.3e} (report {reported:.3e}), stages {stages:?}, {elapsed:.2?}"),
    );
    ok
}

fn criterion_6_mollification() -> bool {
    let start = Instant::now();
    let cfg = neg_tanh_config();
    let out = run_pipeline(&RunConfig { resnet_depth: None, ..cfg.clone() }).unwrap();
    let piecewise = out.piecewise.unwrap();
    let (_, stage) = mollify_stage(&piecewise, &cfg.domain, cfg.epsilon, &cfg.solver).unwrap();
    let cert = stage.flow.measured <= stage.flow.certified * (1.0 + CERT_REL);

    // Step family: one unit jump in every control at T/2.
    let lo = NeuronParams { alpha: vec![0.0], beta: vec![0.0], gamma: vec![0.0] };
    let hi = NeuronParams { alpha: vec![1.0], beta: vec![1.0], gamma: vec![1.0] };
    let step = NeuronControls::new(
        Activation::Tanh,
        1.0,
        Representation::PiecewiseConstant,
        vec![0.0, 0.5, 1.0],
        &[lo, hi],
    )
    .unwrap();
    let deltas = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let gaps: Vec<f64> = deltas
        .iter()
        .map(|d| l1_gaps(&step, &mollify_controls(&step, *d).unwrap()).unwrap()[0])
        .collect();
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[1] / w[0]).collect();
    let halving = ratios.iter().all(|r| (r - 0.5).abs() < 0.02);
    let (fast, elapsed) = within(start, 30);
    let ok = cert && halving && fast;
    verdict(
        6,
        "mollification",
        ok,
        &format!(
            "flow {:.3e} <= certificate {:.3e} (delta {}, rule {:?}), L1 gap ratios {ratios:.4?}, {elapsed:.2?}",
            stage.flow.measured, stage.flow.certified, stage.delta, stage.rule
        ),
    );
    ok
}

fn criterion_7_resnet_depth() -> bool {
    let start = Instant::now();
    let cfg = neg_tanh_config();
    let out = run_pipeline(&RunConfig { resnet_depth: None, ..cfg.clone() }).unwrap();
    let smooth = out.smooth.unwrap();
    let rows = depth_convergence_study(&smooth, &cfg.domain, &[32, 64, 128, 256], &cfg.solver).unwrap();
    let decreasing = rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error);
    let below = rows.iter().all(|r| r.sup_error <= r.envelope);
    let model = extract_resnet(&smooth, 256).unwrap();
    let combined = cfg
        .domain
        .points()
        .iter()
        .map(|p| (forward(&model, p).unwrap().0[0] - neg_tanh_flow(p[0], 1.0)).abs())
        .fold(0.0, f64::max);
    let (fast, elapsed) = within(start, 120);
    let ok = decreasing && below && combined < cfg.epsilon && fast;
    let table: Vec<(usize, f64, f64)> = rows.iter().map(|r| (r.depth, r.sup_error, r.envelope)).collect();
    verdict(
        7,
        "resnet",
        ok,
        &format!("(depth, error, envelope) {table:?}, combined at 256 {combined:.3e}, {elapsed:.2?}"),
    );
    ok
}

fn criterion_8_reflection_counterexample() -> bool {
    let start = Instant::now();
    let mut cfg = neg_tanh_config();
    // The pipeline's best shot: a strong contraction, whose flow collapses
    // toward 0 and reaches the monotone infimum 1.
    cfg.target = TargetSpec::NegTanh { dim: 1, gain: 4.0 };
    cfg.resnet_depth = None;
    let report = run_counterexample(&cfg, 1000).unwrap();
    let (fast, elapsed) = within(start, 60);
    let ok = report.passed && report.best >= ERROR_FLOOR && report.min_crossing_gap > 0.0 && fast;
    verdict(
        8,
        "counterexample",
        ok,
        &format!(
            "pipeline {:?}, search best {:.4} over {} samples, min crossing gap {:.3e}, {elapsed:.2?}",
            report.pipeline_error, report.search_best, report.search_samples, report.min_crossing_gap
        ),
    );
    ok
}

fn output_files(o: &RunOutputs) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), o).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_9_determinism_and_round_trip() -> bool {
    let start = Instant::now();
    let cfg = neg_tanh_config();
    let a = run_pipeline(&cfg).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    let fa = output_files(&a);
    let fb = output_files(&b);
    let identical = fa == fb && a.report.to_json() == b.report.to_json();
    let mut round_trip = true;
    for c in [a.piecewise.as_ref().unwrap(), a.smooth.as_ref().unwrap()] {
        let first = schedule_to_string(c);
        let back = schedule_from_str(&first).unwrap();
        round_trip &= back == *c && schedule_to_string(&back) == first;
    }
    let (fast, elapsed) = within(start, 5);
    let ok = identical && round_trip && fast;
    verdict(
        9,
        "determinism",
        ok,
        &format!("{} output files identical {identical}, schedules round-trip {round_trip}, {elapsed:.2?}", fa.len()),
    );
    ok
}

fn main() {
    let criteria: [(u32, fn() -> bool); 9] = [
        (1, criterion_1_picard_matches_exponential),
        (2, criterion_2_certificate_corpus),
        (3, criterion_3_shallow_fit_of_linear_field),
        (4, criterion_4_averaging_rates),
        (5, criterion_5_end_to_end_contraction),
        (6, criterion_6_mollification),
        (7, criterion_7_resnet_depth),
        (8, criterion_8_reflection_counterexample),
        (9, criterion_9_determinism_and_round_trip),
    ];
    let mut failed = Vec::new();
    for (id, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(true) => {}
            Ok(false) => failed.push(id),
            Err(_) => {
                verdict(id, "panicked", false, "see the message above");
                failed.push(id);
            }
        }
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
