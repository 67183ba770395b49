//! Smoothing of piecewise-constant controls by convolution with a scaled bump.
//!
//! The kernel is `η(s) = exp(-1/(1-s²)) / Z` on `(-1, 1)`. Controls are
//! extended by zero outside `[0, T]`. Because the controls are step
//! functions, `(η_δ ∗ v)(t) = Σ_p v_p [Φ((t-a_p)/δ) - Φ((t-b_p)/δ)]` with
//! `Φ` the cumulative bump, so every sample is exact up to the quadrature
//! inside `Φ`.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::bounds::{BoundReport, MollifiedConstants};
use crate::controls::{NeuronControls, Representation};
use crate::domain::Domain;
use crate::quadrature::{adaptive_simpson, GaussRule};
use crate::solver::{flow_gap, SolverConfig};
use crate::{Error, Result};

/// Upper limit on the number of output samples of one mollification.
pub const MAX_SAMPLES: usize = 1 << 22;

fn raw_bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Normalising constant `Z = ∫_{-1}^{1} exp(-1/(1-s²)) ds`.
pub fn bump_mass() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| 2.0 * adaptive_simpson(&raw_bump, 0.0, 1.0, 1e-16))
}

/// Unit-mass bump supported in `[-1, 1]`.
pub fn bump(s: f64) -> f64 {
    raw_bump(s) / bump_mass()
}

fn rule32() -> &'static GaussRule {
    static R: OnceLock<GaussRule> = OnceLock::new();
    R.get_or_init(|| GaussRule::new(32))
}

fn rule8() -> &'static GaussRule {
    static R: OnceLock<GaussRule> = OnceLock::new();
    R.get_or_init(|| GaussRule::new(8))
}

/// Cumulative bump `Φ(u) = ∫_{-1}^{u} η`, with `Φ(u) = 1 - Φ(-u)` used on
/// the right half so that `Φ(0) = 1/2` exactly.
pub fn bump_cdf(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else if u > 0.0 {
        1.0 - bump_cdf(-u)
    } else if u == 0.0 {
        0.5
    } else {
        // Four 32-point panels: the flat essential zero at -1 costs a single
        // panel about 1e-10 of accuracy.
        let h = 0.25 * (u + 1.0);
        (0..4)
            .map(|k| {
                let a = -1.0 + h * k as f64;
                rule32().integrate(a, a + h, bump)
            })
            .sum()
    }
}

/// Exact convolution of one scalar payload channel at time `t`.
///
/// `values(p)` is the value on piece `p`; `times` are the breakpoints.
fn convolve_at(times: &[f64], delta: f64, t: f64, values: impl Fn(usize) -> f64) -> f64 {
    let lo = t - delta;
    let hi = t + delta;
    let pieces = times.len() - 1;
    let first = times.partition_point(|s| *s <= lo).saturating_sub(1).min(pieces - 1);
    let mut acc = 0.0;
    for p in first..pieces {
        let (a, b) = (times[p], times[p + 1]);
        if a >= hi {
            break;
        }
        if b <= lo {
            continue;
        }
        let w = bump_cdf((t - a) / delta) - bump_cdf((t - b) / delta);
        acc += w * values(p);
    }
    acc
}

/// Weights of each piece intersecting the window around `t`.
fn window_weights(times: &[f64], delta: f64, t: f64) -> Vec<(usize, f64)> {
    let lo = t - delta;
    let hi = t + delta;
    let pieces = times.len() - 1;
    let first = times.partition_point(|s| *s <= lo).saturating_sub(1).min(pieces - 1);
    let mut out = Vec::new();
    for p in first..pieces {
        let (a, b) = (times[p], times[p + 1]);
        if a >= hi {
            break;
        }
        if b <= lo {
            continue;
        }
        out.push((p, bump_cdf((t - a) / delta) - bump_cdf((t - b) / delta)));
    }
    out
}

fn require_piecewise(c: &NeuronControls) -> Result<()> {
    if c.representation() != Representation::PiecewiseConstant {
        return Err(Error::invalid(
            "controls",
            "mollification expects piecewise-constant controls",
        ));
    }
    Ok(())
}

fn check_delta(c: &NeuronControls, delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
    }
    if delta > c.horizon() {
        return Err(Error::invalid(
            "delta",
            format!("{delta} exceeds the horizon {}", c.horizon()),
        ));
    }
    Ok(())
}

/// Number of output intervals for a given `δ`: the smallest uniform grid with
/// step at most `δ/8`.
pub fn sample_intervals(horizon: f64, delta: f64) -> usize {
    (8.0 * horizon / delta).ceil().max(1.0) as usize
}

/// Mollified controls on a uniform grid of step `≤ δ/8`.
pub fn mollify_controls(c: &NeuronControls, delta: f64) -> Result<NeuronControls> {
    require_piecewise(c)?;
    check_delta(c, delta)?;
    let horizon = c.horizon();
    let m = sample_intervals(horizon, delta);
    if m + 1 > MAX_SAMPLES {
        return Err(Error::invalid(
            "delta",
            format!("δ = {delta:e} needs {m} samples, above the limit {MAX_SAMPLES}"),
        ));
    }
    let n = c.dim();
    let times: Vec<f64> = (0..=m)
        .map(|k| if k == m { horizon } else { horizon * k as f64 / m as f64 })
        .collect();
    let bps = c.times();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = times
        .par_iter()
        .map(|t| {
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n * n];
            let mut g = vec![0.0; n];
            for (p, w) in window_weights(bps, delta, *t) {
                for (o, v) in a.iter_mut().zip(c.alpha(p)) {
                    *o += w * v;
                }
                for (o, v) in b.iter_mut().zip(c.beta(p)) {
                    *o += w * v;
                }
                for (o, v) in g.iter_mut().zip(c.gamma(p)) {
                    *o += w * v;
                }
            }
            (a, b, g)
        })
        .collect();
    let mut alpha = Vec::with_capacity(rows.len() * n);
    let mut beta = Vec::with_capacity(rows.len() * n * n);
    let mut gamma = Vec::with_capacity(rows.len() * n);
    for (a, b, g) in rows {
        alpha.extend(a);
        beta.extend(b);
        gamma.extend(g);
    }
    NeuronControls::from_flat(
        c.sigma(),
        horizon,
        Representation::SampledContinuous,
        n,
        times,
        alpha,
        beta,
        gamma,
    )
}

/// `∫ |d(t)| dt` over `[a, b]` for a vector `d` affine in `t`, split at the
/// minimiser of `|d|` so each side is smooth.
fn integrate_affine_norm(d0: &[f64], d1: &[f64], a: f64, b: f64) -> f64 {
    // d(s) = d0 + s (d1 - d0), s ∈ [0, 1].
    let mut qq = 0.0;
    let mut pq = 0.0;
    for (x, y) in d0.iter().zip(d1) {
        let q = y - x;
        qq += q * q;
        pq += x * q;
    }
    let len = b - a;
    let norm_at = |s: f64| -> f64 {
        d0.iter()
            .zip(d1)
            .map(|(x, y)| {
                let v = x + s * (y - x);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    };
    let s_star = if qq > 0.0 { (-pq / qq).clamp(0.0, 1.0) } else { 0.0 };
    let r = rule8();
    let mut acc = 0.0;
    if s_star > 0.0 {
        acc += r.integrate(0.0, s_star, norm_at);
    }
    if s_star < 1.0 {
        acc += r.integrate(s_star, 1.0, norm_at);
    }
    acc * len
}

/// L¹ distances `(‖α_δ - α‖, ‖β_δ - β‖, ‖γ_δ - γ‖)` between sampled controls
/// and the piecewise-constant originals, measured on the materialised samples
/// (the matrix channel uses the Frobenius norm, which dominates the operator norm).
pub fn l1_gaps(c: &NeuronControls, smooth: &NeuronControls) -> Result<[f64; 3]> {
    require_piecewise(c)?;
    if smooth.representation() != Representation::SampledContinuous {
        return Err(Error::invalid("controls", "expected sampled controls"));
    }
    if smooth.dim() != c.dim() || smooth.horizon() != c.horizon() {
        return Err(Error::invalid("controls", "dimension or horizon differ"));
    }
    // Union of sample nodes and breakpoints: on each sub-interval the sample
    // interpolant is affine and the step function is constant.
    let mut nodes: Vec<f64> = smooth.times().iter().chain(c.times()).copied().collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let chunks: Vec<[f64; 3]> = nodes
        .par_windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let piece = c.piece_index(0.5 * (a + b));
            let pa = smooth.params_at(a).expect("inside horizon");
            let pb = smooth.params_at(b).expect("inside horizon");
            let diff = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u - v).collect() };
            [
                integrate_affine_norm(&diff(&pa.alpha, c.alpha(piece)), &diff(&pb.alpha, c.alpha(piece)), a, b),
                integrate_affine_norm(&diff(&pa.beta, c.beta(piece)), &diff(&pb.beta, c.beta(piece)), a, b),
                integrate_affine_norm(&diff(&pa.gamma, c.gamma(piece)), &diff(&pb.gamma, c.gamma(piece)), a, b),
            ]
        })
        .collect();
    let mut out = [0.0; 3];
    for ch in chunks {
        for k in 0..3 {
            out[k] += ch[k];
        }
    }
    Ok(out)
}

/// L¹ distances between the exact convolution and the step function,
/// integrated only over the `δ`-windows around jumps and the two ends of
/// `[0, T]` (elsewhere the two coincide). Cost does not grow as `δ` shrinks.
pub fn convolution_gaps(c: &NeuronControls, delta: f64) -> Result<[f64; 3]> {
    require_piecewise(c)?;
    check_delta(c, delta)?;
    let horizon = c.horizon();
    let n = c.dim();
    let bps = c.times();
    let pieces = bps.len() - 1;
    // Windows: the ends of the horizon and every breakpoint with a jump.
    let mut windows: Vec<(f64, f64)> = vec![(0.0, delta.min(horizon))];
    for p in 1..pieces {
        let jump = c.alpha(p - 1) != c.alpha(p) || c.beta(p - 1) != c.beta(p) || c.gamma(p - 1) != c.gamma(p);
        if jump {
            windows.push(((bps[p] - delta).max(0.0), (bps[p] + delta).min(horizon)));
        }
    }
    windows.push(((horizon - delta).max(0.0), horizon));
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
            _ => merged.push(w),
        }
    }
    // Integration panels: split merged windows at breakpoints and into
    // sub-panels of width at most δ/4.
    let mut panels = Vec::new();
    for (a, b) in merged {
        let lo = bps.partition_point(|s| *s <= a);
        let hi = bps.partition_point(|s| *s < b);
        let mut cuts = vec![a];
        cuts.extend_from_slice(&bps[lo..hi]);
        cuts.push(b);
        for w in cuts.windows(2) {
            let k = ((w[1] - w[0]) / (0.25 * delta)).ceil().max(1.0) as usize;
            for j in 0..k {
                let s = w[0] + (w[1] - w[0]) * j as f64 / k as f64;
                let e = w[0] + (w[1] - w[0]) * (j + 1) as f64 / k as f64;
                if e > s {
                    panels.push((s, e));
                }
            }
        }
    }
    let parts: Vec<[f64; 3]> = panels
        .par_iter()
        .map(|&(a, b)| {
            let piece = c.piece_index(0.5 * (a + b));
            [
                window_channel_gap(bps, delta, a, b, piece, n, &|p| c.alpha(p)),
                window_channel_gap(bps, delta, a, b, piece, n * n, &|p| c.beta(p)),
                window_channel_gap(bps, delta, a, b, piece, n, &|p| c.gamma(p)),
            ]
        })
        .collect();
    let mut out = [0.0; 3];
    for p in parts {
        for k in 0..3 {
            out[k] += p[k];
        }
    }
    Ok(out)
}

/// `∫_a^b |(η_δ ∗ v)(t) - v(t)| dt` for one channel over a panel inside `piece`.
fn window_channel_gap<'a>(
    bps: &[f64],
    delta: f64,
    a: f64,
    b: f64,
    piece: usize,
    width: usize,
    sel: &dyn Fn(usize) -> &'a [f64],
) -> f64 {
    let own = sel(piece);
    rule8().integrate(a, b, |t| {
        let weights = window_weights(bps, delta, t);
        let mut acc = 0.0;
        for i in 0..width {
            let mut v = 0.0;
            for (p, w) in &weights {
                v += w * sel(*p)[i];
            }
            let d = v - own[i];
            acc += d * d;
        }
        acc.sqrt()
    })
}

/// Result of the `δ` search.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaChoice {
    pub delta: f64,
    /// Gaps of the materialised output at the returned `δ`.
    pub gaps: [f64; 3],
    pub smooth: NeuronControls,
    pub halvings: u32,
}

/// Largest `δ` in the halving sequence `T/4, T/8, …` whose three L¹ gaps are
/// all below `ε′`. Candidates are screened with [`convolution_gaps`] and the
/// accepted one is confirmed on the materialised output.
pub fn choose_delta(c: &NeuronControls, eps_prime: f64) -> Result<DeltaChoice> {
    require_piecewise(c)?;
    if !(eps_prime > 0.0) {
        return Err(Error::invalid("epsilon'", format!("must be positive, got {eps_prime}")));
    }
    let horizon = c.horizon();
    let floor = 1e-9 * horizon;
    let mut delta = 0.25 * horizon;
    let mut halvings = 0;
    let mut last = [f64::INFINITY; 3];
    while delta >= floor {
        let window = convolution_gaps(c, delta)?;
        last = window;
        if window.iter().all(|g| *g < eps_prime) && sample_intervals(horizon, delta) < MAX_SAMPLES {
            let smooth = mollify_controls(c, delta)?;
            let gaps = l1_gaps(c, &smooth)?;
            last = gaps;
            if gaps.iter().all(|g| *g < eps_prime) {
                return Ok(DeltaChoice {
                    delta,
                    gaps,
                    smooth,
                    halvings,
                });
            }
        }
        delta *= 0.5;
        halvings += 1;
    }
    Err(Error::SearchExhausted {
        what: "delta",
        limit: floor,
        achieved: last.iter().copied().fold(0.0, f64::max),
        required: eps_prime,
    })
}

/// Flow distance between `c` and its mollification `c_δ` against
/// `M_3 ε′ e^{M_4 T}` with `ε′` the largest measured L¹ gap.
pub fn mollified_flow_error(
    c: &NeuronControls,
    smooth: &NeuronControls,
    domain: &Domain,
    cfg: &SolverConfig,
) -> Result<BoundReport> {
    require_piecewise(c)?;
    if c.sigma() != smooth.sigma() || c.horizon() != smooth.horizon() {
        return Err(Error::invalid("controls", "activation or horizon differ"));
    }
    let horizon = c.horizon();
    let k = MollifiedConstants::new(c, domain);
    let (gaps, measured) = if c == smooth {
        ([0.0; 3], 0.0)
    } else {
        let gaps = l1_gaps(c, smooth)?;
        let gap = flow_gap(c, smooth, &domain.points(), horizon, &cfg.reference())?;
        (gaps, gap.sup)
    };
    let eps_prime = gaps.iter().copied().fold(0.0, f64::max);
    Ok(BoundReport::new(
        "mollified_flow",
        k.flow_certificate(eps_prime, horizon),
        measured,
    )
    .with("eps_prime", eps_prime)
    .with("l1_alpha", gaps[0])
    .with("l1_beta", gaps[1])
    .with("l1_gamma", gaps[2])
    .with("M1", k.m1)
    .with("M2", k.m2)
    .with("M3", k.m3)
    .with("M4", k.m4)
    .with("T", horizon))
}

/// Scalar convolution of a step function given by breakpoints and values;
/// exposed for experiments on single channels.
pub fn convolve_steps(times: &[f64], values: &[f64], delta: f64, t: f64) -> f64 {
    convolve_at(times, delta, t, |p| values[p])
}
