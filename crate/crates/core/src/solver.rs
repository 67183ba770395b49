//! Flow solvers for `x' = f(x, t)`, `x(0) = ξ`.
//!
//! Every method runs on a [`TimeGrid`]: the uniform grid `T·k/n` united with
//! the field's time breakpoints, so no step straddles a discontinuity. On a
//! piecewise-constant field each segment is evaluated at its midpoint, which
//! always lies strictly inside one constant piece.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{breakpoints_of, VectorField};
use crate::linalg::{distance, norm};
use crate::trajectory::Trajectory;
use crate::{Error, Result};

/// States whose norm exceeds this are treated as blow-up.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Step multiplier of the reference integrator relative to the method under test.
pub const REFERENCE_REFINEMENT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Picard,
    Euler,
    Rk4Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub time_steps: usize,
    #[serde(default = "default_picard_iterations")]
    pub picard_iterations: usize,
    #[serde(default = "default_picard_tolerance")]
    pub picard_tolerance: f64,
}

fn default_picard_iterations() -> usize {
    30
}

fn default_picard_tolerance() -> f64 {
    1e-10
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::rk4(256)
    }
}

impl SolverConfig {
    pub fn euler(time_steps: usize) -> Self {
        SolverConfig {
            method: Method::Euler,
            time_steps,
            picard_iterations: default_picard_iterations(),
            picard_tolerance: default_picard_tolerance(),
        }
    }

    pub fn rk4(time_steps: usize) -> Self {
        SolverConfig {
            method: Method::Rk4Reference,
            ..SolverConfig::euler(time_steps)
        }
    }

    pub fn picard(time_steps: usize, iterations: usize, tolerance: f64) -> Self {
        SolverConfig {
            method: Method::Picard,
            time_steps,
            picard_iterations: iterations,
            picard_tolerance: tolerance,
        }
    }

    /// The oracle for this configuration: RK4 at eight times the step count.
    pub fn reference(&self) -> Self {
        SolverConfig::rk4(self.time_steps * REFERENCE_REFINEMENT)
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::invalid("solver", "time_steps must be at least 1"));
        }
        if self.picard_iterations == 0 {
            return Err(Error::invalid("solver", "picard_iterations must be at least 1"));
        }
        if !(self.picard_tolerance.is_finite() && self.picard_tolerance > 0.0) {
            return Err(Error::invalid("solver", "picard_tolerance must be positive"));
        }
        Ok(())
    }
}

/// Integration nodes: `T·k/n` for `k = 0..=n` plus interior breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    nodes: Vec<f64>,
    /// Position of base node `k` in `nodes`.
    base: Vec<usize>,
    /// Whether a time discontinuity of the field sits at the node.
    jump: Vec<bool>,
    /// Whether segment `i` is a whole base interval.
    full: Vec<bool>,
    piecewise: bool,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, breakpoints: &[f64]) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("horizon", format!("must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("solver", "time_steps must be at least 1"));
        }
        let tol = 1e-12 * horizon;
        let h = horizon / steps as f64;
        let mut nodes = Vec::with_capacity(steps + 1 + breakpoints.len());
        let mut base = Vec::with_capacity(steps + 1);
        let mut jump = Vec::with_capacity(steps + 1 + breakpoints.len());
        let mut bi = 0;
        for k in 0..=steps {
            let tk = Self::base_time(horizon, steps, k);
            while bi < breakpoints.len() && breakpoints[bi] < tk - tol {
                let b = breakpoints[bi];
                if b > tol && b < horizon - tol {
                    // Breakpoints strictly between base nodes.
                    if !nodes.last().is_some_and(|l: &f64| b <= *l + tol) {
                        nodes.push(b);
                        jump.push(true);
                    } else if let Some(j) = jump.last_mut() {
                        *j = true;
                    }
                }
                bi += 1;
            }
            let mut at_jump = false;
            while bi < breakpoints.len() && breakpoints[bi] <= tk + tol {
                at_jump = true;
                bi += 1;
            }
            base.push(nodes.len());
            nodes.push(tk);
            jump.push(at_jump && k > 0 && k < steps);
        }
        debug_assert!(h > 0.0);
        let mut full = vec![false; nodes.len() - 1];
        for w in base.windows(2) {
            if w[1] == w[0] + 1 {
                full[w[0]] = true;
            }
        }
        Ok(TimeGrid {
            horizon,
            steps,
            nodes,
            base,
            jump,
            full,
            piecewise: !breakpoints.is_empty(),
        })
    }

    pub fn for_field(f: &dyn VectorField, horizon: f64, steps: usize) -> Result<Self> {
        let bps = breakpoints_of(f);
        if bps.iter().any(|b| !b.is_finite() || *b < 0.0 || *b > horizon) {
            return Err(Error::invalid("field", "breakpoints must lie in [0, T]"));
        }
        let mut g = TimeGrid::new(horizon, steps, &bps)?;
        g.piecewise = matches!(
            f.time_regularity(),
            crate::field::TimeRegularity::PiecewiseConstant(_)
        );
        Ok(g)
    }

    #[inline]
    pub fn base_time(horizon: f64, steps: usize, k: usize) -> f64 {
        if k == steps {
            horizon
        } else {
            horizon * k as f64 / steps as f64
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn base_times(&self) -> Vec<f64> {
        self.base.iter().map(|i| self.nodes[*i]).collect()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Length of segment `i`; full base intervals use exactly `T/n`.
    #[inline]
    fn step(&self, i: usize) -> f64 {
        if self.full[i] {
            self.horizon / self.steps as f64
        } else {
            self.nodes[i + 1] - self.nodes[i]
        }
    }

    /// Time at which a piecewise-constant field is sampled on segment `i`.
    #[inline]
    fn segment_time(&self, i: usize) -> f64 {
        0.5 * (self.nodes[i] + self.nodes[i + 1])
    }
}

fn check_state(x: &[f64], t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) || norm(x) > DIVERGENCE_NORM {
        return Err(Error::Divergence { time: t });
    }
    Ok(())
}

fn check_inputs(f: &dyn VectorField, xi: &[f64]) -> Result<()> {
    if xi.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: xi.len(),
        });
    }
    if !f.lipschitz().is_finite() {
        return Err(Error::invalid("field", "Lipschitz certificate must be finite"));
    }
    check_state(xi, 0.0)
}

/// Solves on `[0, T]` and returns the path on all grid nodes.
pub fn solve_flow(
    f: &dyn VectorField,
    xi: &[f64],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_inputs(f, xi)?;
    let grid = TimeGrid::for_field(f, horizon, cfg.time_steps)?;
    match cfg.method {
        Method::Euler => euler(f, xi, &grid),
        Method::Rk4Reference => rk4(f, xi, &grid),
        Method::Picard => {
            let run = picard_on_grid(f, xi, &grid, cfg.picard_iterations, Some(cfg.picard_tolerance))?;
            Ok(run.into_iter().last().unwrap())
        }
    }
}

fn euler(f: &dyn VectorField, xi: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let n = xi.len();
    let nodes = grid.nodes();
    let mut states = Vec::with_capacity(nodes.len() * n);
    states.extend_from_slice(xi);
    let mut x = xi.to_vec();
    let mut k = vec![0.0; n];
    for i in 0..nodes.len() - 1 {
        let h = grid.step(i);
        let t = if grid.piecewise {
            grid.segment_time(i)
        } else {
            nodes[i]
        };
        f.eval(&x, t, &mut k);
        for j in 0..n {
            x[j] += h * k[j];
        }
        check_state(&x, nodes[i + 1])?;
        states.extend_from_slice(&x);
    }
    Ok(Trajectory::from_parts(n, nodes.to_vec(), states))
}

fn rk4(f: &dyn VectorField, xi: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let n = xi.len();
    let nodes = grid.nodes();
    let mut states = Vec::with_capacity(nodes.len() * n);
    states.extend_from_slice(xi);
    let mut x = xi.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for i in 0..nodes.len() - 1 {
        let h = grid.step(i);
        let (t1, t2, t3) = if grid.piecewise {
            let m = grid.segment_time(i);
            (m, m, m)
        } else {
            (nodes[i], nodes[i] + 0.5 * h, nodes[i + 1])
        };
        f.eval(&x, t1, &mut k1);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        f.eval(&tmp, t2, &mut k2);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        f.eval(&tmp, t2, &mut k3);
        for j in 0..n {
            tmp[j] = x[j] + h * k3[j];
        }
        f.eval(&tmp, t3, &mut k4);
        for j in 0..n {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        check_state(&x, nodes[i + 1])?;
        states.extend_from_slice(&x);
    }
    Ok(Trajectory::from_parts(n, nodes.to_vec(), states))
}

/// Value at the midpoint of segment `i` of the previous iterate, from a
/// quadratic through three nodes inside one smooth piece (linear when the
/// piece has a single segment).
fn midpoint_value(grid: &TimeGrid, prev: &[f64], n: usize, i: usize, j: usize) -> f64 {
    let nodes = grid.nodes();
    let last = nodes.len() - 1;
    let m = grid.segment_time(i);
    let at = |k: usize| prev[k * n + j];
    let triple = if i > 0 && !grid.jump[i] {
        Some((i - 1, i, i + 1))
    } else if i + 2 <= last && !grid.jump[i + 1] {
        Some((i, i + 1, i + 2))
    } else {
        None
    };
    match triple {
        None => 0.5 * (at(i) + at(i + 1)),
        Some((a, b, c)) => {
            let (ta, tb, tc) = (nodes[a], nodes[b], nodes[c]);
            let la = (m - tb) * (m - tc) / ((ta - tb) * (ta - tc));
            let lb = (m - ta) * (m - tc) / ((tb - ta) * (tb - tc));
            let lc = (m - ta) * (m - tb) / ((tc - ta) * (tc - tb));
            la * at(a) + lb * at(b) + lc * at(c)
        }
    }
}

fn picard_on_grid(
    f: &dyn VectorField,
    xi: &[f64],
    grid: &TimeGrid,
    n_max: usize,
    stop_below: Option<f64>,
) -> Result<Vec<Trajectory>> {
    let n = xi.len();
    let nodes = grid.nodes();
    let segs = nodes.len() - 1;
    let x0: Vec<f64> = std::iter::repeat_n(xi, nodes.len()).flatten().copied().collect();
    let mut iterates = vec![Trajectory::from_parts(n, nodes.to_vec(), x0.clone())];
    let mut prev = x0;
    let mut xm = vec![0.0; n];
    let mut fx = vec![0.0; n];
    for _ in 0..n_max {
        let mut next = Vec::with_capacity(prev.len());
        next.extend_from_slice(xi);
        let mut acc = xi.to_vec();
        for i in 0..segs {
            for (j, v) in xm.iter_mut().enumerate() {
                *v = midpoint_value(grid, &prev, n, i, j);
            }
            let h = grid.step(i);
            f.eval(&xm, grid.segment_time(i), &mut fx);
            for j in 0..n {
                acc[j] += h * fx[j];
            }
            check_state(&acc, nodes[i + 1])?;
            next.extend_from_slice(&acc);
        }
        let gap = next
            .chunks_exact(n)
            .zip(prev.chunks_exact(n))
            .map(|(a, b)| distance(a, b))
            .fold(0.0, f64::max);
        iterates.push(Trajectory::from_parts(n, nodes.to_vec(), next.clone()));
        prev = next;
        if stop_below.is_some_and(|tol| gap < tol) {
            break;
        }
    }
    Ok(iterates)
}

/// Picard iterates `x_0 ≡ ξ, …, x_{n_max}` with their diagnostics.
#[derive(Debug, Clone)]
pub struct PicardRun {
    pub iterates: Vec<Trajectory>,
    /// `gaps[n-1] = sup_t |x_n(t) - x_{n-1}(t)|` over the grid nodes.
    pub gaps: Vec<f64>,
    /// Sup over base nodes of the distance of each iterate to the RK4 reference.
    pub reference_distance: Vec<f64>,
    pub reference: Trajectory,
}

pub fn picard_iterates(
    f: &dyn VectorField,
    xi: &[f64],
    horizon: f64,
    n_max: usize,
    time_steps: usize,
) -> Result<PicardRun> {
    if n_max == 0 {
        return Err(Error::invalid("picard", "n_max must be at least 1"));
    }
    check_inputs(f, xi)?;
    let grid = TimeGrid::for_field(f, horizon, time_steps)?;
    let iterates = picard_on_grid(f, xi, &grid, n_max, None)?;
    let gaps = iterates
        .windows(2)
        .map(|w| {
            w[1].states()
                .zip(w[0].states())
                .map(|(a, b)| distance(a, b))
                .fold(0.0, f64::max)
        })
        .collect();
    let reference = solve_flow(f, xi, horizon, &SolverConfig::rk4(time_steps).reference())?;
    let base = grid.base_times();
    let reference_distance = iterates
        .iter()
        .map(|it| max_distance_at(it, &reference, &base))
        .collect();
    Ok(PicardRun {
        iterates,
        gaps,
        reference_distance,
        reference,
    })
}

/// `max_t |a(t) - b(t)|` over the given times.
pub fn max_distance_at(a: &Trajectory, b: &Trajectory, times: &[f64]) -> f64 {
    times
        .iter()
        .map(|t| distance(&a.state_at(*t), &b.state_at(*t)))
        .fold(0.0, f64::max)
}

/// Uniform base times `T·k/n`.
pub fn base_times(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| TimeGrid::base_time(horizon, steps, k))
        .collect()
}

fn collect_points<T: Send>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut failures = Vec::new();
    let mut ok = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((i, e)),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(Error::PointFailures(failures))
    }
}

/// One trajectory per point, in the order given. Points are solved in
/// parallel; the output order does not depend on scheduling.
pub fn flows_from(
    f: &dyn VectorField,
    points: &[Vec<f64>],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Vec<Trajectory>> {
    let results: Vec<Result<Trajectory>> = points
        .par_iter()
        .map(|p| solve_flow(f, p, horizon, cfg))
        .collect();
    collect_points(results)
}

pub fn flow_on_domain(
    f: &dyn VectorField,
    domain: &crate::domain::Domain,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Vec<Trajectory>> {
    if domain.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: domain.dim(),
        });
    }
    flows_from(f, &domain.points(), horizon, cfg)
}

/// Final states `S_f(T)ξ` for each point.
pub fn flow_map(
    f: &dyn VectorField,
    points: &[Vec<f64>],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let results: Vec<Result<Vec<f64>>> = points
        .par_iter()
        .map(|p| solve_flow(f, p, horizon, cfg).map(|tr| tr.last().to_vec()))
        .collect();
    collect_points(results)
}

/// Distance between two flows from the same starting points, per base time.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGap {
    pub times: Vec<f64>,
    /// `max_ξ |S_f(t)ξ - S_g(t)ξ|` at each base time.
    pub curve: Vec<f64>,
    /// `max_ξ |S_f(T)ξ - S_g(T)ξ|`.
    pub terminal: f64,
    /// Largest entry of `curve`.
    pub sup: f64,
}

pub fn flow_gap(
    f: &dyn VectorField,
    g: &dyn VectorField,
    points: &[Vec<f64>],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<FlowGap> {
    let times = base_times(horizon, cfg.time_steps);
    let per_point: Vec<Result<Vec<f64>>> = points
        .par_iter()
        .map(|p| {
            let a = solve_flow(f, p, horizon, cfg)?;
            let b = solve_flow(g, p, horizon, cfg)?;
            Ok(times
                .iter()
                .map(|t| distance(&a.state_at(*t), &b.state_at(*t)))
                .collect())
        })
        .collect();
    let per_point = collect_points(per_point)?;
    let mut curve = vec![0.0f64; times.len()];
    for row in &per_point {
        for (c, v) in curve.iter_mut().zip(row) {
            *c = c.max(*v);
        }
    }
    let terminal = *curve.last().unwrap();
    let sup = curve.iter().copied().fold(0.0, f64::max);
    Ok(FlowGap {
        times,
        curve,
        terminal,
        sup,
    })
}
