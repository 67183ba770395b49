//! The construction end to end.
//!
//! 1. Freeze `f` on `L` time slices: `f_L(x, t) = f(x, t_l)` on `(t_{l-1}, t_l]`.
//! 2. Fit each frozen field by a sum of `K_l` neurons and replace the sum by
//!    fast cyclic switching among the amplified terms `K_l α_i`, repeated
//!    `m_l` times per slice, so that the time average is the sum again.
//! 3. Concatenate the slices into one piecewise-constant control schedule
//!    and smooth it with [`crate::mollify`].
//!
//! Per-slice allowances follow `b_l = ε / (3 (4 e^{Lip·τ})^{L-l})`.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::bounds::{flow_distance_certificate, slice_budgets, tube_radius, BoundReport, MollifiedConstants};
use crate::controls::{NeuronControls, NeuronParams, Representation};
use crate::domain::Domain;
use crate::field::{sup_norm_on, TimeRegularity, VectorField};
use crate::linalg::{distance, norm, spectral_norm};
use crate::mollify::{choose_delta, mollified_flow_error, mollify_controls, sample_intervals, MAX_SAMPLES};
use crate::shallow::{fit_vector_field, FitConfig, ShallowField};
use crate::solver::{flow_gap, solve_flow, SolverConfig, TimeGrid};
use crate::{Error, Result};

/// `L` is searched over `1, 2, 4, …, 2^16`.
pub const MAX_SLICES_LOG2: u32 = 16;
/// `m` is searched over `1, 2, 4, …, 2^14`.
pub const MAX_REPEATS_LOG2: u32 = 14;
/// Time samples per slice (both endpoints included) when measuring `‖f - f_L‖`.
pub const SLICE_TIME_SAMPLES: usize = 16;

/// The static field `x ↦ f(x, t)`.
#[derive(Clone, Copy)]
pub struct FrozenField<'a> {
    pub f: &'a dyn VectorField,
    pub t: f64,
}

impl VectorField for FrozenField<'_> {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        self.f.eval(x, self.t, out)
    }
    fn lipschitz(&self) -> f64 {
        self.f.lipschitz()
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// `f_L`: `f` frozen at the right end `t_l = lT/L` of each slice.
#[derive(Clone)]
pub struct SliceSchedule<'a> {
    f: &'a dyn VectorField,
    horizon: f64,
    /// `t_0 = 0, …, t_L = T`.
    times: Vec<f64>,
}

impl<'a> SliceSchedule<'a> {
    pub fn new(f: &'a dyn VectorField, horizon: f64, slices: usize) -> Result<Self> {
        if slices == 0 {
            return Err(Error::invalid("slices", "L must be at least 1"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        let times = (0..=slices).map(|l| TimeGrid::base_time(horizon, slices, l)).collect();
        Ok(SliceSchedule { f, horizon, times })
    }

    pub fn slices(&self) -> usize {
        self.times.len() - 1
    }

    /// Nominal slice width `τ = T/L`.
    pub fn tau(&self) -> f64 {
        self.horizon / self.slices() as f64
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `t_l` for `l = 0..=L`.
    pub fn time(&self, l: usize) -> f64 {
        self.times[l]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Slice `l ∈ 1..=L` with `t ∈ (t_{l-1}, t_l]`; `t = 0` belongs to slice 1.
    pub fn slice_of(&self, t: f64) -> usize {
        self.times.partition_point(|s| *s < t).clamp(1, self.slices())
    }

    /// `f^{(l)}`.
    pub fn slice_field(&self, l: usize) -> FrozenField<'a> {
        FrozenField { f: self.f, t: self.times[l] }
    }
}

impl VectorField for SliceSchedule<'_> {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.f.eval(x, self.times[self.slice_of(t)], out)
    }
    fn lipschitz(&self) -> f64 {
        self.f.lipschitz()
    }
    fn time_regularity(&self) -> TimeRegularity<'_> {
        TimeRegularity::PiecewiseConstant(Cow::Borrowed(&self.times[1..self.times.len() - 1]))
    }
    fn is_autonomous(&self) -> bool {
        self.f.is_autonomous() || self.slices() == 1
    }
}

/// `max |f(x, s) - f(x, t_l)|` over the points, the slices and
/// `SLICE_TIME_SAMPLES + 1` times per closed slice.
pub fn slice_gap(schedule: &SliceSchedule<'_>, points: &[Vec<f64>]) -> f64 {
    let f = schedule.f;
    let n = f.dim();
    let l_count = schedule.slices();
    points
        .par_iter()
        .map(|p| {
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            let mut best = 0.0f64;
            for l in 1..=l_count {
                let (t0, t1) = (schedule.time(l - 1), schedule.time(l));
                f.eval(p, t1, &mut b);
                for k in 0..SLICE_TIME_SAMPLES {
                    let s = t0 + (t1 - t0) * k as f64 / SLICE_TIME_SAMPLES as f64;
                    f.eval(p, s, &mut a);
                    best = best.max(distance(&a, &b));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// `f_L` together with the measured `‖f - f_L‖` over `points`.
pub fn slice_time<'a>(
    f: &'a dyn VectorField,
    horizon: f64,
    slices: usize,
    points: &[Vec<f64>],
) -> Result<(SliceSchedule<'a>, f64)> {
    let s = SliceSchedule::new(f, horizon, slices)?;
    let gap = slice_gap(&s, points);
    Ok((s, gap))
}

/// `ε / (3 T e^{Lip·T})`.
pub fn slice_threshold(epsilon: f64, lip: f64, horizon: f64) -> f64 {
    epsilon / (3.0 * horizon * (lip * horizon).exp())
}

/// Smallest power of two `L` whose measured slice gap over `points` is below
/// [`slice_threshold`]. Returns `L` and the gap.
pub fn choose_l(
    f: &dyn VectorField,
    points: &[Vec<f64>],
    horizon: f64,
    epsilon: f64,
) -> Result<(usize, f64)> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    if f.is_autonomous() {
        return Ok((1, 0.0));
    }
    let threshold = slice_threshold(epsilon, f.lipschitz(), horizon);
    let mut best = f64::INFINITY;
    for k in 0..=MAX_SLICES_LOG2 {
        let l = 1usize << k;
        let (_, gap) = slice_time(f, horizon, l, points)?;
        best = best.min(gap);
        if gap < threshold {
            return Ok((l, gap));
        }
    }
    Err(Error::SearchExhausted {
        what: "slice count",
        limit: (1u64 << MAX_SLICES_LOG2) as f64,
        achieved: best,
        required: threshold,
    })
}

/// A single neuron `α ⊙ σ(β x + γ)` as an autonomous field.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTerm {
    pub sigma: Activation,
    pub params: NeuronParams,
}

impl VectorField for NeuronTerm {
    fn dim(&self) -> usize {
        self.params.dim()
    }
    fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        self.params.eval(self.sigma, x, out)
    }
    fn lipschitz(&self) -> f64 {
        norm(&self.params.alpha) * spectral_norm(&self.params.beta, self.params.dim()) * self.sigma.lipschitz()
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Piecewise-constant switching among `parts` on `[0, T]`: on
/// `(times[p], times[p+1]]` the field is `parts[which[p]]`.
#[derive(Debug, Clone)]
pub struct SwitchedField<F> {
    parts: Vec<F>,
    times: Vec<f64>,
    which: Vec<usize>,
}

impl<F: VectorField> SwitchedField<F> {
    pub fn new(parts: Vec<F>, times: Vec<f64>, which: Vec<usize>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("switching", "needs at least one part"));
        }
        let n = parts[0].dim();
        if parts.iter().any(|p| p.dim() != n) {
            return Err(Error::invalid("switching", "parts differ in dimension"));
        }
        if times.len() != which.len() + 1 || times[0] != 0.0 || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("switching", "times must start at 0, increase, and bracket every piece"));
        }
        if which.iter().any(|i| *i >= parts.len()) {
            return Err(Error::invalid("switching", "piece refers to a missing part"));
        }
        Ok(SwitchedField { parts, times, which })
    }

    /// `m` periods on `[0, T]`; within each period part `i` is active for a
    /// fraction `fractions[i]` of the period, in order.
    pub fn periodic(parts: Vec<F>, fractions: &[f64], horizon: f64, m: usize) -> Result<Self> {
        if m == 0 || fractions.len() != parts.len() {
            return Err(Error::invalid("switching", "need m ≥ 1 and one fraction per part"));
        }
        if fractions.iter().any(|w| !(*w > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("switching", "fractions must be positive and sum to 1"));
        }
        let mut starts = Vec::with_capacity(fractions.len());
        let mut acc = 0.0;
        for w in fractions {
            starts.push(acc);
            acc += w;
        }
        let mut times = Vec::with_capacity(m * parts.len() + 1);
        let mut which = Vec::with_capacity(m * parts.len());
        for r in 0..m {
            for (i, c) in starts.iter().enumerate() {
                times.push(horizon * (r as f64 + c) / m as f64);
                which.push(i);
            }
        }
        times.push(horizon);
        Self::new(parts, times, which)
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn piece(&self, t: f64) -> usize {
        self.times.partition_point(|s| *s < t).clamp(1, self.which.len()) - 1
    }
}

impl<F: VectorField> VectorField for SwitchedField<F> {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let p = self.piece(t);
        self.parts[self.which[p]].eval(x, t, out)
    }
    fn lipschitz(&self) -> f64 {
        self.parts.iter().map(|p| p.lipschitz()).fold(0.0, f64::max)
    }
    fn time_regularity(&self) -> TimeRegularity<'_> {
        TimeRegularity::PiecewiseConstant(Cow::Borrowed(&self.times[1..self.times.len() - 1]))
    }
}

/// `Σ_i w_i f_i`.
#[derive(Debug, Clone)]
pub struct AveragedField<F> {
    parts: Vec<F>,
    weights: Vec<f64>,
}

impl<F: VectorField> AveragedField<F> {
    pub fn new(parts: Vec<F>, weights: Vec<f64>) -> Result<Self> {
        if parts.is_empty() || parts.len() != weights.len() {
            return Err(Error::invalid("average", "need one weight per part"));
        }
        Ok(AveragedField { parts, weights })
    }
}

impl<F: VectorField> VectorField for AveragedField<F> {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        out.fill(0.0);
        for (p, w) in self.parts.iter().zip(&self.weights) {
            p.eval(x, t, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += w * v;
            }
        }
    }
    fn lipschitz(&self) -> f64 {
        self.parts.iter().zip(&self.weights).map(|(p, w)| w.abs() * p.lipschitz()).sum()
    }
    fn is_autonomous(&self) -> bool {
        self.parts.iter().all(|p| p.is_autonomous())
    }
}

/// Reports the breakpoints of another field so that two solves share one
/// time grid. Only sound for fields that are constant on those pieces.
struct Aligned<'a> {
    inner: &'a dyn VectorField,
    breakpoints: &'a [f64],
}

impl VectorField for Aligned<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.inner.eval(x, t, out)
    }
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }
    fn time_regularity(&self) -> TimeRegularity<'_> {
        TimeRegularity::PiecewiseConstant(Cow::Borrowed(self.breakpoints))
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// `max_{ξ, t} |S_switched(t)ξ - S_average(t)ξ|` with the average solved on
/// the switching grid. `average` must be autonomous.
pub fn switching_distance<F: VectorField>(
    switched: &SwitchedField<F>,
    average: &dyn VectorField,
    points: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Result<f64> {
    if !average.is_autonomous() {
        return Err(Error::invalid("average", "must be autonomous"));
    }
    let horizon = switched.horizon();
    let bps = &switched.times[1..switched.times.len() - 1];
    let aligned = Aligned { inner: average, breakpoints: bps };
    let per_point: Vec<Result<f64>> = points
        .par_iter()
        .map(|p| {
            let a = solve_flow(switched, p, horizon, cfg)?;
            let b = solve_flow(&aligned, p, horizon, cfg)?;
            Ok((0..a.len()).map(|i| distance(a.state(i), b.state(i))).fold(0.0, f64::max))
        })
        .collect();
    let mut best = 0.0f64;
    for (i, r) in per_point.into_iter().enumerate() {
        best = best.max(r.map_err(|e| Error::PointFailures(vec![(i, e)]))?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingRow {
    pub m: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingStudy {
    pub rows: Vec<AveragingRow>,
    /// Least-squares slope of `ln distance` against `ln m` over rows with a
    /// positive distance; `NaN` with fewer than two such rows.
    pub slope: f64,
    /// Distances never grow by more than 10% from one `m` to the next.
    pub monotone: bool,
}

/// Switched flows of `parts` (period `T/m`, fractions as given) against the
/// flow of `Σ_i fractions_i · parts_i`, for every `m` in `m_list`.
pub fn averaging_experiment<F: VectorField + Clone>(
    parts: &[F],
    fractions: &[f64],
    xi: &[f64],
    horizon: f64,
    m_list: &[usize],
    cfg: &SolverConfig,
) -> Result<AveragingStudy> {
    if m_list.is_empty() || m_list.windows(2).any(|w| w[0] >= w[1]) || m_list[0] == 0 {
        return Err(Error::invalid("m list", "must be a nonempty increasing list of positive integers"));
    }
    let average = AveragedField::new(parts.to_vec(), fractions.to_vec())?;
    if !average.is_autonomous() {
        return Err(Error::invalid("average", "parts must be autonomous"));
    }
    let rows: Vec<Result<AveragingRow>> = m_list
        .par_iter()
        .map(|&m| {
            let sw = SwitchedField::periodic(parts.to_vec(), fractions, horizon, m)?;
            let d = switching_distance(&sw, &average, &[xi.to_vec()], cfg)?;
            Ok(AveragingRow { m, distance: d })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize_averaging(rows))
}

pub fn summarize_averaging(rows: Vec<AveragingRow>) -> AveragingStudy {
    let monotone = rows.windows(2).all(|w| w[1].distance <= 1.1 * w[0].distance);
    let slope = loglog_slope(&rows);
    AveragingStudy { rows, slope, monotone }
}

pub fn loglog_slope(rows: &[AveragingRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.distance > 0.0)
        .map(|r| ((r.m as f64).ln(), r.distance.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// One slice of multiplexed controls on local time `[0, τ]`: `K·m`
/// sub-intervals of width `τ/(K m)` carrying `(K α_i, β_i, γ_i)`, cycling
/// `i = 1..K` and repeated `m` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplexedSlice {
    pub sigma: Activation,
    pub tau: f64,
    pub terms: usize,
    pub repeats: usize,
    pub params: Vec<NeuronParams>,
}

impl MultiplexedSlice {
    pub fn pieces(&self) -> usize {
        self.params.len()
    }

    /// Sub-interval ends `0, τ/(Km), …, τ` in local time.
    pub fn local_times(&self) -> Vec<f64> {
        let p = self.pieces();
        (0..=p).map(|k| TimeGrid::base_time(self.tau, p, k)).collect()
    }

    /// The switched field on `[0, τ]`.
    pub fn field(&self) -> SwitchedField<NeuronTerm> {
        let parts = self
            .params
            .iter()
            .map(|p| NeuronTerm { sigma: self.sigma, params: p.clone() })
            .collect();
        SwitchedField::new(parts, self.local_times(), (0..self.pieces()).collect())
            .expect("multiplexed slice has a valid layout")
    }

    /// `(1/τ) ∫_0^τ g(x, t) dt`, a finite sum over the sub-intervals.
    pub fn time_average(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let times = self.local_times();
        let mut acc = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for (k, p) in self.params.iter().enumerate() {
            p.eval(self.sigma, x, &mut tmp);
            let w = times[k + 1] - times[k];
            for j in 0..n {
                acc[j] += w * tmp[j];
            }
        }
        acc.iter().map(|v| v / self.tau).collect()
    }
}

/// Time multiplexing of a fitted sum. `K = 1` is the identity.
pub fn multiplex_slice(g: &ShallowField, tau: f64, m: usize) -> Result<MultiplexedSlice> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    let k = g.width();
    let amp = k as f64;
    let mut params = Vec::with_capacity(k * m);
    for _ in 0..m {
        for t in g.terms() {
            params.push(NeuronParams {
                alpha: t.alpha.iter().map(|a| amp * a).collect(),
                beta: t.beta.clone(),
                gamma: t.gamma.clone(),
            });
        }
    }
    Ok(MultiplexedSlice { sigma: g.sigma(), tau, terms: k, repeats: m, params })
}

/// Smallest power of two `m` for which the switched flow stays within
/// `budget` of the flow of `g` from every `ζ`, over `t ∈ [0, τ]`.
/// Returns `m` and the measured distance.
pub fn choose_m(
    g: &ShallowField,
    zetas: &[Vec<f64>],
    tau: f64,
    budget: f64,
    cfg: &SolverConfig,
) -> Result<(usize, f64)> {
    if !(budget > 0.0) {
        return Err(Error::invalid("budget", "must be positive"));
    }
    if g.width() == 1 {
        return Ok((1, 0.0));
    }
    let mut best = f64::INFINITY;
    for k in 0..=MAX_REPEATS_LOG2 {
        let m = 1usize << k;
        let slice = multiplex_slice(g, tau, m)?;
        let d = switching_distance(&slice.field(), g, zetas, cfg)?;
        best = best.min(d);
        if d <= budget {
            return Ok((m, d));
        }
    }
    Err(Error::SearchExhausted {
        what: "switching repeats",
        limit: (1u64 << MAX_REPEATS_LOG2) as f64,
        achieved: best,
        required: budget,
    })
}

/// Joins per-slice multiplexed controls into one schedule on `[0, T]`.
/// Slice `l` occupies `(t_{l-1}, t_l]` with `t_l = lT/L`.
pub fn concatenate(slices: &[MultiplexedSlice], horizon: f64) -> Result<NeuronControls> {
    let l_count = slices.len();
    if l_count == 0 {
        return Err(Error::invalid("slices", "nothing to concatenate"));
    }
    let sigma = slices[0].sigma;
    let mut times = vec![0.0];
    let mut params = Vec::new();
    for (i, s) in slices.iter().enumerate() {
        let t0 = TimeGrid::base_time(horizon, l_count, i);
        let t1 = TimeGrid::base_time(horizon, l_count, i + 1);
        let p = s.pieces();
        for k in 1..=p {
            times.push(if k == p { t1 } else { t0 + TimeGrid::base_time(t1 - t0, p, k) });
        }
        params.extend(s.params.iter().cloned());
    }
    NeuronControls::new(sigma, horizon, Representation::PiecewiseConstant, times, &params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyConfig {
    pub activation: Activation,
    pub fit: FitConfig,
    pub solver: SolverConfig,
    /// Grid resolution for the trajectory tube and the per-slice fit boxes.
    pub tube_samples_per_axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub slice: usize,
    pub width: usize,
    pub repeats: usize,
    /// Box half-width `R + b_l` of the fit grid.
    pub fit_radius: f64,
    pub fit_error: f64,
    /// `b_{l-1}/τ`, the tolerance used.
    pub fit_tolerance: f64,
    /// `b_l / (2 τ e^{Lip·τ})`, the tube-estimate form over one slice.
    pub tube_tolerance: f64,
    pub averaging_distance: f64,
    pub averaging_budget: f64,
    /// `max_ξ |ξ_{l-1} - ζ_{l-1}|`.
    pub entry_gap: f64,
    /// `max_ξ |ξ_l - ζ_l|`.
    pub exit_gap: f64,
    pub budget_entry: f64,
    pub budget_exit: f64,
}

impl SliceEntry {
    /// Entry within `b_{l-1}` implies exit within `b_l`.
    pub fn chain_holds(&self) -> bool {
        self.entry_gap > self.budget_entry || self.exit_gap <= self.budget_exit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub epsilon: f64,
    pub slices: usize,
    pub tau: f64,
    pub lipschitz: f64,
    pub f0: f64,
    pub tube_radius: f64,
    pub slice_threshold: f64,
    pub slice_gap: f64,
    /// `b_0, …, b_L`.
    pub budgets: Vec<f64>,
    pub entries: Vec<SliceEntry>,
    pub chain_holds: bool,
    /// `‖S_f - S_{f_L}‖` against `‖f - f_L‖·T·e^{Lip·T}`.
    pub time_slicing: BoundReport,
    pub curve_times: Vec<f64>,
    pub slicing_curve: Vec<f64>,
    /// `max_t ‖S_{f_L}(t) - S_{h_L}(t)‖` over the domain grid.
    pub multiplex_measured: f64,
    pub multiplex_curve: Vec<f64>,
    /// `ε/3`.
    pub stage_budget: f64,
}

/// Slices `f`, fits and multiplexes every slice, and concatenates the result
/// into piecewise-constant controls `h_L`.
pub fn assemble_h_l(
    f: &dyn VectorField,
    domain: &Domain,
    horizon: f64,
    epsilon: f64,
    cfg: &AssemblyConfig,
) -> Result<(NeuronControls, StageReport)> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let n = f.dim();
    if domain.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: domain.dim() });
    }
    let lip = f.lipschitz();
    if !lip.is_finite() {
        return Err(Error::invalid("field", "Lipschitz certificate must be finite"));
    }
    cfg.fit.validate()?;
    cfg.solver.validate()?;
    if cfg.tube_samples_per_axis == 0 {
        return Err(Error::invalid("tube_samples_per_axis", "must be at least 1"));
    }

    let points = domain.points();
    let f0_times: Vec<f64> = (0..=2 * SLICE_TIME_SAMPLES)
        .map(|k| TimeGrid::base_time(horizon, 2 * SLICE_TIME_SAMPLES, k))
        .collect();
    let f0 = sup_norm_on(f, &points, &f0_times);
    let radius = tube_radius(domain.max_norm(), horizon, lip, f0);
    let tube = Domain::ball_box(n, radius, cfg.tube_samples_per_axis)?;
    let tube_points = tube.points();

    let (l_count, _) = choose_l(f, &tube_points, horizon, epsilon)?;
    let (schedule, gap) = slice_time(f, horizon, l_count, &tube_points)?;
    let tau = schedule.tau();
    let budgets = slice_budgets(epsilon, lip, tau, l_count);
    if !(budgets[0] / tau).is_normal() {
        return Err(Error::invalid(
            "budget",
            format!("b_0 / τ underflows with L = {l_count}, Lip = {lip}; the per-slice fit tolerance would be zero"),
        ));
    }

    let fits: Vec<Result<(ShallowField, f64, f64)>> = (1..=l_count)
        .into_par_iter()
        .map(|l| {
            let tol = budgets[l - 1] / tau;
            let box_radius = radius + budgets[l];
            let fit_domain = Domain::ball_box(n, box_radius, cfg.tube_samples_per_axis)?;
            let fc = FitConfig { target_sup_error: tol, ..cfg.fit.clone() };
            let fit = fit_vector_field(f, schedule.time(l), cfg.activation, &fit_domain, &fc)
                .map_err(|e| e.in_slice(l))?;
            Ok((fit.field, fit.sup_error, box_radius))
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;

    let mut xis = points.clone();
    let mut zetas = points.clone();
    let mut slices = Vec::with_capacity(l_count);
    let mut entries = Vec::with_capacity(l_count);
    for (idx, (g, fit_error, fit_radius)) in fits.into_iter().enumerate() {
        let l = idx + 1;
        let width = schedule.time(l) - schedule.time(l - 1);
        let entry_gap = max_pair_distance(&xis, &zetas);
        let budget = 0.5 * budgets[l];
        let (m, averaging_distance) =
            choose_m(&g, &zetas, width, budget, &cfg.solver).map_err(|e| e.in_slice(l))?;
        let slice = multiplex_slice(&g, width, m)?;
        let switched = slice.field();
        let frozen = schedule.slice_field(l);
        zetas = end_states(&switched, &zetas, width, &cfg.solver).map_err(|e| e.in_slice(l))?;
        xis = end_states(&frozen, &xis, width, &cfg.solver).map_err(|e| e.in_slice(l))?;
        let exit_gap = max_pair_distance(&xis, &zetas);
        entries.push(SliceEntry {
            slice: l,
            width: g.width(),
            repeats: m,
            fit_radius,
            fit_error,
            fit_tolerance: budgets[l - 1] / tau,
            tube_tolerance: budgets[l] / (2.0 * tau * (lip * tau).exp()),
            averaging_distance,
            averaging_budget: budget,
            entry_gap,
            exit_gap,
            budget_entry: budgets[l - 1],
            budget_exit: budgets[l],
        });
        slices.push(slice);
    }
    let controls = concatenate(&slices, horizon)?;

    let slicing = flow_gap(f, &schedule, &points, horizon, &cfg.solver)?;
    let multiplex = flow_gap(&schedule, &controls, &points, horizon, &cfg.solver)?;
    let time_slicing = BoundReport::new(
        "time_slicing",
        flow_distance_certificate(gap, lip, horizon),
        slicing.sup,
    )
    .with("slice_gap", gap)
    .with("lipschitz", lip)
    .with("T", horizon)
    .with("L", l_count as f64);
    let chain_holds = entries.iter().all(SliceEntry::chain_holds);
    let report = StageReport {
        epsilon,
        slices: l_count,
        tau,
        lipschitz: lip,
        f0,
        tube_radius: radius,
        slice_threshold: slice_threshold(epsilon, lip, horizon),
        slice_gap: gap,
        budgets,
        entries,
        chain_holds,
        time_slicing,
        curve_times: slicing.times,
        slicing_curve: slicing.curve,
        multiplex_measured: multiplex.sup,
        multiplex_curve: multiplex.curve,
        stage_budget: epsilon / 3.0,
    };
    Ok((controls, report))
}

fn max_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| distance(x, y)).fold(0.0, f64::max)
}

fn end_states(
    f: &dyn VectorField,
    points: &[Vec<f64>],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    crate::solver::flow_map(f, points, horizon, cfg)
}

/// How `δ` was picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    /// L¹ gaps below `ε′ = ε / (3 M_3 e^{M_4 T})`.
    Formula,
    /// Halving until the measured flow distance is below `ε/3`, used when
    /// the formula `ε′` is unusable or its search runs out.
    MeasuredFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifyStage {
    pub delta: f64,
    pub rule: DeltaRule,
    pub eps_prime_formula: f64,
    pub gaps: [f64; 3],
    /// Measured flow distance against `M_3 ε′ e^{M_4 T}` with `ε′` the
    /// largest measured L¹ gap.
    pub flow: BoundReport,
    pub curve_times: Vec<f64>,
    pub curve: Vec<f64>,
    /// `ε/3`.
    pub stage_budget: f64,
}

/// Smooths `h_L` and measures the effect on the flow.
pub fn mollify_stage(
    c: &NeuronControls,
    domain: &Domain,
    epsilon: f64,
    solver: &SolverConfig,
) -> Result<(NeuronControls, MollifyStage)> {
    let horizon = c.horizon();
    let points = domain.points();
    let k = MollifiedConstants::new(c, domain);
    let eps_prime = k.eps_prime(epsilon, horizon);
    let formula = if eps_prime.is_normal() && eps_prime > 0.0 {
        match choose_delta(c, eps_prime) {
            Ok(choice) => Some(choice),
            Err(Error::SearchExhausted { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let (smooth, delta, rule) = match formula {
        Some(choice) => (choice.smooth, choice.delta, DeltaRule::Formula),
        None => {
            let floor = 1e-9 * horizon;
            let mut delta = 0.25 * horizon;
            let mut best = f64::INFINITY;
            loop {
                if delta < floor || sample_intervals(horizon, delta) >= MAX_SAMPLES {
                    return Err(Error::SearchExhausted {
                        what: "delta",
                        limit: delta,
                        achieved: best,
                        required: epsilon / 3.0,
                    });
                }
                let smooth = mollify_controls(c, delta)?;
                let d = flow_gap(c, &smooth, &points, horizon, solver)?.sup;
                best = best.min(d);
                if d < epsilon / 3.0 {
                    break (smooth, delta, DeltaRule::MeasuredFlow);
                }
                delta *= 0.5;
            }
        }
    };
    let flow = mollified_flow_error(c, &smooth, domain, solver)?
        .with("delta", delta)
        .with("eps_prime_formula", eps_prime);
    let gaps = [flow.inputs["l1_alpha"], flow.inputs["l1_beta"], flow.inputs["l1_gamma"]];
    let curve = flow_gap(c, &smooth, &points, horizon, solver)?;
    Ok((
        smooth,
        MollifyStage {
            delta,
            rule,
            eps_prime_formula: eps_prime,
            gaps,
            flow,
            curve_times: curve.times,
            curve: curve.curve,
            stage_budget: epsilon / 3.0,
        },
    ))
}

/// All three stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub piecewise: NeuronControls,
    pub smooth: NeuronControls,
    pub assembly: StageReport,
    pub mollify: MollifyStage,
}

pub fn construct(
    f: &dyn VectorField,
    domain: &Domain,
    horizon: f64,
    epsilon: f64,
    cfg: &AssemblyConfig,
) -> Result<Construction> {
    let (piecewise, assembly) = assemble_h_l(f, domain, horizon, epsilon, cfg)?;
    let (smooth, mollify) = mollify_stage(&piecewise, domain, epsilon, &cfg.solver)?;
    Ok(Construction { piecewise, smooth, assembly, mollify })
}
