//! Time-dependent vector fields `f(x, t)` with a Lipschitz certificate in `x`.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::domain::Domain;
use crate::linalg::{dist_sq, distance, mat_vec, norm, spectral_norm};
use crate::{Error, Result};

/// How a field depends on time; the solvers align their grids with
/// breakpoints of piecewise-constant fields.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeRegularity<'a> {
    Continuous,
    /// Interior breakpoints, strictly increasing. On `(t_{p-1}, t_p]` the
    /// field does not depend on `t`.
    PiecewiseConstant(Cow<'a, [f64]>),
}

pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(x, t)` into `out`. Callers guarantee `x.len() == out.len() == dim()`.
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Upper bound on the Lipschitz constant in `x`, uniform in `t`.
    fn lipschitz(&self) -> f64;

    fn time_regularity(&self) -> TimeRegularity<'_> {
        TimeRegularity::Continuous
    }

    fn is_autonomous(&self) -> bool {
        false
    }

    fn evaluate(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.eval(x, t, &mut out);
        Ok(out)
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval(x, t, out)
    }
    fn lipschitz(&self) -> f64 {
        (**self).lipschitz()
    }
    fn time_regularity(&self) -> TimeRegularity<'_> {
        (**self).time_regularity()
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

impl<F: VectorField + ?Sized> VectorField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval(x, t, out)
    }
    fn lipschitz(&self) -> f64 {
        (**self).lipschitz()
    }
    fn time_regularity(&self) -> TimeRegularity<'_> {
        (**self).time_regularity()
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

impl<F: VectorField + ?Sized> VectorField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval(x, t, out)
    }
    fn lipschitz(&self) -> f64 {
        (**self).lipschitz()
    }
    fn time_regularity(&self) -> TimeRegularity<'_> {
        (**self).time_regularity()
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

/// Breakpoints of a field as an owned list (empty when continuous).
pub fn breakpoints_of(f: &dyn VectorField) -> Vec<f64> {
    match f.time_regularity() {
        TimeRegularity::Continuous => Vec::new(),
        TimeRegularity::PiecewiseConstant(b) => b.into_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroField {
    pub dim: usize,
}

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub value: Vec<f64>,
}

impl VectorField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }
    fn eval(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// `f(x) = A x + b` with `A` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    n: usize,
    matrix: Vec<f64>,
    offset: Vec<f64>,
    lip: f64,
}

impl LinearField {
    pub fn new(n: usize, matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: matrix.len(),
            });
        }
        if offset.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: offset.len(),
            });
        }
        let lip = spectral_norm(&matrix, n);
        Ok(LinearField {
            n,
            matrix,
            offset,
            lip,
        })
    }

    pub fn homogeneous(n: usize, matrix: Vec<f64>) -> Result<Self> {
        LinearField::new(n, matrix, vec![0.0; n])
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        mat_vec(&self.matrix, x, out);
        for (o, b) in out.iter_mut().zip(&self.offset) {
            *o += b;
        }
    }
    fn lipschitz(&self) -> f64 {
        self.lip
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// `f(x) = -gain · tanh(x)` componentwise, a contraction toward the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegTanhField {
    pub dim: usize,
    pub gain: f64,
}

impl VectorField for NegTanhField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -self.gain * v.tanh();
        }
    }
    fn lipschitz(&self) -> f64 {
        self.gain.abs()
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Planar field `f(x, t) = gain · tanh(R(phase + rate·t) x)` where `R(θ)` is
/// the rotation by `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TanhRotationField {
    pub gain: f64,
    pub phase: f64,
    pub rate: f64,
}

impl VectorField for TanhRotationField {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let (s, c) = (self.phase + self.rate * t).sin_cos();
        out[0] = self.gain * (c * x[0] - s * x[1]).tanh();
        out[1] = self.gain * (s * x[0] + c * x[1]).tanh();
    }
    fn lipschitz(&self) -> f64 {
        self.gain.abs()
    }
    fn is_autonomous(&self) -> bool {
        self.rate == 0.0
    }
}

/// `f(x, t) = t` in every component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeLinearField {
    pub dim: usize,
}

impl VectorField for TimeLinearField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _x: &[f64], t: f64, out: &mut [f64]) {
        out.fill(t);
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// Damped scalar field with periodic forcing,
/// `f(x, t) = -decay · x + amplitude · sin(2π t / period)`, applied per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicForcingField {
    pub dim: usize,
    pub decay: f64,
    pub amplitude: f64,
    pub period: f64,
}

impl VectorField for PeriodicForcingField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let forcing = self.amplitude * (2.0 * PI * t / self.period).sin();
        for (o, v) in out.iter_mut().zip(x) {
            *o = -self.decay * v + forcing;
        }
    }
    fn lipschitz(&self) -> f64 {
        self.decay.abs()
    }
}

type FieldFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;

/// Adapter for closures. The caller is responsible for the certificate.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    lip: f64,
    breakpoints: Option<Vec<f64>>,
    autonomous: bool,
    f: Arc<FieldFn>,
}

impl FnField {
    pub fn new(
        dim: usize,
        lipschitz: f64,
        f: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnField {
            dim,
            lip: lipschitz,
            breakpoints: None,
            autonomous: false,
            f: Arc::new(f),
        }
    }

    pub fn autonomous(mut self) -> Self {
        self.autonomous = true;
        self
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = Some(breakpoints);
        self
    }
}

impl std::fmt::Debug for FnField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnField")
            .field("dim", &self.dim)
            .field("lip", &self.lip)
            .finish_non_exhaustive()
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.f)(x, t, out)
    }
    fn lipschitz(&self) -> f64 {
        self.lip
    }
    fn time_regularity(&self) -> TimeRegularity<'_> {
        match &self.breakpoints {
            Some(b) => TimeRegularity::PiecewiseConstant(Cow::Borrowed(b)),
            None => TimeRegularity::Continuous,
        }
    }
    fn is_autonomous(&self) -> bool {
        self.autonomous
    }
}

/// Time samples used for sup estimates: segment midpoints, so that samples
/// never land on a breakpoint of a piecewise-constant field.
pub fn sample_times(horizon: f64, t_samples: usize) -> Vec<f64> {
    let n = t_samples.max(1);
    (0..n)
        .map(|k| horizon * (k as f64 + 0.5) / n as f64)
        .collect()
}

/// Sampled lower estimate of `Lip(f)`: the largest quotient
/// `|f(z,t) - f(ζ,t)| / |z - ζ|` over all grid pairs and `t_samples` times.
pub fn estimate_lipschitz(
    f: &dyn VectorField,
    domain: &Domain,
    horizon: f64,
    t_samples: usize,
) -> f64 {
    let pts = domain.points();
    let n = f.dim();
    let mut best = 0.0f64;
    for t in sample_times(horizon, t_samples) {
        let vals: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| {
                let mut out = vec![0.0; n];
                f.eval(p, t, &mut out);
                out
            })
            .collect();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let dx = distance(&pts[i], &pts[j]);
                if dx > 0.0 {
                    best = best.max(distance(&vals[i], &vals[j]) / dx);
                }
            }
        }
    }
    best
}

/// `sup |f(x, t)|` over the given points and times.
pub fn sup_norm_on(f: &dyn VectorField, points: &[Vec<f64>], times: &[f64]) -> f64 {
    let mut out = vec![0.0; f.dim()];
    let mut best = 0.0f64;
    for t in times {
        for p in points {
            f.eval(p, *t, &mut out);
            best = best.max(norm(&out));
        }
    }
    best
}

/// `sup |f(x, t) - g(x, t)|` over the given points and times.
pub fn sup_difference_on(
    f: &dyn VectorField,
    g: &dyn VectorField,
    points: &[Vec<f64>],
    times: &[f64],
) -> f64 {
    let mut a = vec![0.0; f.dim()];
    let mut b = vec![0.0; g.dim()];
    let mut best = 0.0f64;
    for t in times {
        for p in points {
            f.eval(p, *t, &mut a);
            g.eval(p, *t, &mut b);
            best = best.max(dist_sq(&a, &b));
        }
    }
    best.sqrt()
}
