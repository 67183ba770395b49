//! Gronwall-type certificates paired with measured values.
//!
//! Each check returns a [`BoundReport`] holding the closed-form certificate,
//! the value measured with the RK4 oracle, and the constants that entered the
//! formula. Sup-norms over tubes are taken on sample grids, so these are
//! consistency checks rather than proofs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::controls::{NeuronControls, Representation};
use crate::domain::Domain;
use crate::field::{sup_difference_on, sup_norm_on, VectorField};
use crate::linalg::{distance, mat_vec, norm};
use crate::mollify::mollify_controls;
use crate::solver::{base_times, flow_gap, flows_from, solve_flow, SolverConfig, TimeGrid};
use crate::{Error, Result};

pub const RELATIVE_TOLERANCE: f64 = 1e-6;
pub const ABSOLUTE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub certified: f64,
    pub measured: f64,
    pub slack: f64,
    pub inputs: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, certified: f64, measured: f64) -> Self {
        BoundReport {
            name: name.into(),
            certified,
            measured,
            slack: certified - measured,
            inputs: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.inputs.insert(key.to_string(), value);
        self
    }

    /// `measured ≤ certified·(1 + 1e-6) + 1e-9`.
    pub fn holds(&self) -> bool {
        self.measured <= self.certified * (1.0 + RELATIVE_TOLERANCE) + ABSOLUTE_TOLERANCE
    }
}

/// `F_0 · Lip^{n-1} · t^n / n!`, the bound on consecutive Picard iterates.
pub fn picard_gap_bound(f0: f64, lip: f64, t: f64, n: usize) -> f64 {
    let mut v = f0;
    for k in 1..=n {
        v *= t / k as f64;
        if k > 1 {
            v *= lip;
        }
    }
    v
}

/// `F_0 · T · e^{Lip·T}`.
pub fn solution_range_certificate(f0: f64, lip: f64, horizon: f64) -> f64 {
    f0 * horizon * (lip * horizon).exp()
}

/// `‖f - g‖ · T · e^{Lip(f)·T}`.
pub fn flow_distance_certificate(sup_difference: f64, lip_f: f64, horizon: f64) -> f64 {
    sup_difference * horizon * (lip_f * horizon).exp()
}

/// Radius of a ball holding every trajectory from `D`:
/// `max|ξ| + T·e^{Lip·T}·‖f‖`.
pub fn tube_radius(max_norm: f64, horizon: f64, lip: f64, f_sup: f64) -> f64 {
    max_norm + horizon * (lip * horizon).exp() * f_sup
}

/// Per-slice budgets `b_l = ε / (3 (4 e^{Lip·τ})^{L-l})` for `l = 0..=L`.
pub fn slice_budgets(epsilon: f64, lip: f64, tau: f64, slices: usize) -> Vec<f64> {
    let q = 4.0 * (lip * tau).exp();
    (0..=slices)
        .map(|l| epsilon / (3.0 * q.powi((slices - l) as i32)))
        .collect()
}

/// Depth-independent bound `e^{CT}·ε′/C` on the ResNet error recursion; the
/// `C → 0` limit is `T·ε′`.
pub fn resnet_error_envelope(c: f64, horizon: f64, depth: usize, eps_prime: f64) -> f64 {
    debug_assert!(depth >= 1);
    if c <= 0.0 {
        return horizon * eps_prime;
    }
    (c * horizon).exp() * eps_prime / c
}

/// `sup_{|v| ≤ r} |σ(v)|` for the componentwise activation on `R^n`, bounded
/// by both `√n · max_{|s|≤r}|σ(s)|` and `√n·|σ(0)| + Lip(σ)·r`.
pub fn sigma_ball_sup(sigma: Activation, radius: f64, n: usize) -> f64 {
    let rn = (n as f64).sqrt();
    let by_range = rn * sigma.sup_on(radius);
    let by_lip = rn * sigma.apply(0.0).abs() + sigma.lipschitz() * radius;
    by_range.min(by_lip)
}

/// Constants bounding the flow of mollified controls, built from the sup-norms
/// of the original controls (mollification does not increase them).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifiedConstants {
    pub max_xi: f64,
    pub sup_alpha: f64,
    pub sup_beta: f64,
    pub sup_gamma: f64,
    pub r_tilde: f64,
    pub sigma_sup: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl MollifiedConstants {
    pub fn new(c: &NeuronControls, domain: &Domain) -> Self {
        let n = c.dim();
        let sigma = c.sigma();
        let lip = sigma.lipschitz();
        let horizon = c.horizon();
        let max_xi = domain.max_norm();
        let (a, b, g) = (c.sup_alpha(), c.sup_beta(), c.sup_gamma());
        let r_tilde = b * max_xi + g;
        let sigma_sup = sigma_ball_sup(sigma, r_tilde, n);
        let m1 = max_xi + horizon * a * sigma_sup * (a * b * lip * horizon).exp();
        let m2 = sigma_ball_sup(sigma, b * m1 + g, n);
        let m3 = m2 + (m1 + 1.0) * a * lip;
        let m4 = a * b * lip;
        MollifiedConstants {
            max_xi,
            sup_alpha: a,
            sup_beta: b,
            sup_gamma: g,
            r_tilde,
            sigma_sup,
            m1,
            m2,
            m3,
            m4,
        }
    }

    /// `ε′ = ε / (3 M_3 e^{M_4 T})`.
    pub fn eps_prime(&self, epsilon: f64, horizon: f64) -> f64 {
        epsilon / (3.0 * self.m3 * (self.m4 * horizon).exp())
    }

    /// `M_3 ε′ e^{M_4 T}`.
    pub fn flow_certificate(&self, eps_prime: f64, horizon: f64) -> f64 {
        self.m3 * eps_prime * (self.m4 * horizon).exp()
    }

    fn annotate(&self, r: BoundReport) -> BoundReport {
        r.with("max_xi", self.max_xi)
            .with("sup_alpha", self.sup_alpha)
            .with("sup_beta", self.sup_beta)
            .with("sup_gamma", self.sup_gamma)
            .with("r_tilde", self.r_tilde)
            .with("sigma_sup", self.sigma_sup)
            .with("M1", self.m1)
            .with("M2", self.m2)
            .with("M3", self.m3)
            .with("M4", self.m4)
    }
}

/// Times at which `F_0`-type suprema are sampled: every grid node and every
/// segment midpoint of the solver grid for `f`.
fn sup_times(f: &dyn VectorField, horizon: f64, steps: usize) -> Result<Vec<f64>> {
    let grid = TimeGrid::for_field(f, horizon, steps)?;
    let nodes = grid.nodes();
    let mut out = Vec::with_capacity(2 * nodes.len());
    for w in nodes.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(horizon);
    Ok(out)
}

/// Displacement bound `|S_f(t)ξ_0 - ξ_0| ≤ F_0 T e^{Lip·T}`.
pub fn solution_range_bound(
    f: &dyn VectorField,
    xi0: &[f64],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<BoundReport> {
    let times = sup_times(f, horizon, cfg.time_steps)?;
    let f0 = sup_norm_on(f, &[xi0.to_vec()], &times);
    let lip = f.lipschitz();
    let tr = solve_flow(f, xi0, horizon, &cfg.reference())?;
    let measured = tr.max_displacement();
    Ok(BoundReport::new(
        "solution_range",
        solution_range_certificate(f0, lip, horizon),
        measured,
    )
    .with("F0", f0)
    .with("lip", lip)
    .with("T", horizon))
}

/// Flow distance `‖S_f(t) - S_g(t)‖_{C^0(D)} ≤ ‖f - g‖_E T e^{Lip(f)T}` with
/// `E` the displacement tube of `g` around `D`.
pub fn flow_distance_bound(
    f: &dyn VectorField,
    g: &dyn VectorField,
    domain: &Domain,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<BoundReport> {
    if f.dim() != g.dim() || f.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: g.dim().max(domain.dim()),
        });
    }
    let points = domain.points();
    let mut times = sup_times(f, horizon, cfg.time_steps)?;
    times.extend(sup_times(g, horizon, cfg.time_steps)?);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let g0 = sup_norm_on(g, &points, &times);
    let m = solution_range_certificate(g0, g.lipschitz(), horizon);
    let tube = Domain::new(
        domain.lower().iter().map(|v| v - m).collect(),
        domain.upper().iter().map(|v| v + m).collect(),
        domain.samples_per_axis().max(9),
    )?;
    let reference = cfg.reference();
    let g_paths = flows_from(g, &points, horizon, &reference)?;
    let mut sup_diff = sup_difference_on(f, g, &tube.points(), &times);
    for tr in &g_paths {
        let mut a = vec![0.0; f.dim()];
        let mut b = vec![0.0; f.dim()];
        for (t, x) in tr.times().iter().zip(tr.states()) {
            f.eval(x, *t, &mut a);
            g.eval(x, *t, &mut b);
            sup_diff = sup_diff.max(distance(&a, &b));
        }
    }
    let lip = f.lipschitz();
    let gap = flow_gap(f, g, &points, horizon, &reference)?;
    Ok(BoundReport::new(
        "flow_distance",
        flow_distance_certificate(sup_diff, lip, horizon),
        gap.sup,
    )
    .with("sup_f_minus_g", sup_diff)
    .with("lip_f", lip)
    .with("tube_displacement", m)
    .with("T", horizon))
}

/// Outcome of the tube check: the paired-distance conclusion (certified `a`)
/// and the containment conclusion (certified radius `R + a`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeCheck {
    pub distance: BoundReport,
    pub containment: BoundReport,
}

/// Random pairs `(ξ, ξ̄)` with `ξ` uniform in `D` and `|ξ - ξ̄| < radius`.
pub fn tube_pairs(domain: &Domain, radius: f64, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = domain.dim();
    (0..count)
        .map(|_| {
            let xi: Vec<f64> = (0..n)
                .map(|i| rng.random_range(domain.lower()[i]..=domain.upper()[i]))
                .collect();
            let mut dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = norm(&dir).max(1e-300);
            let r = radius * rng.random_range(0.0..0.999);
            for d in dir.iter_mut() {
                *d *= r / len;
            }
            let bar = xi.iter().zip(&dir).map(|(x, d)| x + d).collect();
            (xi, bar)
        })
        .collect()
}

/// Tube estimate for static fields: if `‖f - g‖ < a / (2T e^{Lip(f)T})` on the
/// `a`-neighbourhood of the trajectory ball of `f` and `|ξ - ξ̄| < a / (2e^{Lip(f)T})`,
/// then `|S_f(t)ξ - S_g(t)ξ̄| ≤ a` and `S_g(t)ξ̄` stays in that neighbourhood.
/// Violated hypotheses are reported as [`Error::Precondition`].
pub fn tube_bound_check(
    f: &dyn VectorField,
    g: &dyn VectorField,
    domain: &Domain,
    a: f64,
    horizon: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &SolverConfig,
) -> Result<TubeCheck> {
    if !(a > 0.0) {
        return Err(Error::invalid("tube", "a must be positive"));
    }
    let n = f.dim();
    let lip = f.lipschitz();
    let growth = (lip * horizon).exp();
    let times = sup_times(f, horizon, cfg.time_steps)?;
    let f0 = sup_norm_on(f, &domain.points(), &times);
    let r = tube_radius(domain.max_norm(), horizon, lip, f0);
    let ball = Domain::ball_box(n, r + a, domain.samples_per_axis().max(9))?;
    let ball_pts: Vec<Vec<f64>> = ball
        .points()
        .into_iter()
        .filter(|p| norm(p) <= r + a)
        .collect();
    let sup_diff = sup_difference_on(f, g, &ball_pts, &times);
    let field_budget = a / (2.0 * horizon * growth);
    if !(sup_diff < field_budget) {
        return Err(Error::Precondition(format!(
            "sup |f - g| = {sup_diff:e} on the a-tube is not below a/(2T e^(Lip T)) = {field_budget:e}"
        )));
    }
    let start_budget = a / (2.0 * growth);
    for (k, (xi, bar)) in pairs.iter().enumerate() {
        if !domain.contains(xi) {
            return Err(Error::Precondition(format!("pair {k}: ξ lies outside D")));
        }
        let d = distance(xi, bar);
        if !(d < start_budget) {
            return Err(Error::Precondition(format!(
                "pair {k}: |ξ - ξ̄| = {d:e} is not below a/(2 e^(Lip T)) = {start_budget:e}"
            )));
        }
    }
    let reference = cfg.reference();
    let base = base_times(horizon, cfg.time_steps);
    let results: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|(xi, bar)| {
            let x = solve_flow(f, xi, horizon, &reference)?;
            let y = solve_flow(g, bar, horizon, &reference)?;
            let dist = base
                .iter()
                .map(|t| distance(&x.state_at(*t), &y.state_at(*t)))
                .fold(0.0, f64::max);
            Ok((dist, y.max_norm()))
        })
        .collect();
    let mut dist = 0.0f64;
    let mut reach = 0.0f64;
    for r in results {
        let (d, m) = r?;
        dist = dist.max(d);
        reach = reach.max(m);
    }
    let annotate = |rep: BoundReport| {
        rep.with("a", a)
            .with("lip_f", lip)
            .with("R", r)
            .with("sup_f_minus_g", sup_diff)
            .with("T", horizon)
    };
    Ok(TubeCheck {
        distance: annotate(BoundReport::new("tube_distance", a, dist)),
        containment: annotate(BoundReport::new("tube_containment", r + a, reach)),
    })
}

/// Bounds on the flow of the mollified controls: `|S_{h_δ}(t)ξ| ≤ M_1` and
/// `|σ(β_δ(t) S_{h_δ}(t)ξ + γ_δ(t))| ≤ M_2`.
pub fn mollified_control_bounds(
    c: &NeuronControls,
    delta: f64,
    domain: &Domain,
    cfg: &SolverConfig,
) -> Result<(BoundReport, BoundReport)> {
    if c.representation() != Representation::PiecewiseConstant {
        return Err(Error::invalid(
            "controls",
            "mollified bounds start from piecewise-constant controls",
        ));
    }
    let smooth = mollify_controls(c, delta)?;
    let k = MollifiedConstants::new(c, domain);
    let (m1, m2) = measure_state_and_activation(&smooth, domain, cfg)?;
    let m1_rep = k.annotate(BoundReport::new("mollified_state_M1", k.m1, m1).with("delta", delta));
    let m2_rep = k.annotate(BoundReport::new("mollified_activation_M2", k.m2, m2).with("delta", delta));
    Ok((m1_rep, m2_rep))
}

/// Measured `max |x(t)|` and `max |σ(β(t)x(t) + γ(t))|` along oracle paths of `c`.
pub fn measure_state_and_activation(
    c: &NeuronControls,
    domain: &Domain,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    let paths = flows_from(c, &domain.points(), c.horizon(), &cfg.reference())?;
    let n = c.dim();
    let sigma = c.sigma();
    let per_path: Vec<Result<(f64, f64)>> = paths
        .par_iter()
        .map(|tr| {
            let mut s = vec![0.0; n];
            let mut best = (0.0f64, 0.0f64);
            for (t, x) in tr.times().iter().zip(tr.states()) {
                let p = c.params_at(*t)?;
                mat_vec(&p.beta, x, &mut s);
                let act: Vec<f64> = s.iter().zip(&p.gamma).map(|(v, g)| sigma.apply(v + g)).collect();
                best.0 = best.0.max(norm(x));
                best.1 = best.1.max(norm(&act));
            }
            Ok(best)
        })
        .collect();
    let mut out = (0.0f64, 0.0f64);
    for r in per_path {
        let (a, b) = r?;
        out.0 = out.0.max(a);
        out.1 = out.1.max(b);
    }
    Ok(out)
}
