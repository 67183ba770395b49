//! Neuron control trajectories `t ↦ (α(t), β(t), γ(t))` and the induced
//! field `h(x, t) = α(t) ⊙ σ(β(t) x + γ(t))`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::field::{TimeRegularity, VectorField};
use crate::linalg::{dot, norm, spectral_norm};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Constant on `(t_{p-1}, t_p]`; the value at `t = 0` is the first piece's.
    PiecewiseConstant,
    /// Samples at the nodes, linearly interpolated in between.
    SampledContinuous,
}

/// One parameter triple; `beta` is row-major `N×N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl NeuronParams {
    pub fn zeros(n: usize) -> Self {
        NeuronParams {
            alpha: vec![0.0; n],
            beta: vec![0.0; n * n],
            gamma: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn check(&self, n: usize) -> Result<()> {
        for (len, want) in [
            (self.alpha.len(), n),
            (self.beta.len(), n * n),
            (self.gamma.len(), n),
        ] {
            if len != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    got: len,
                });
            }
        }
        if !self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.gamma)
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("controls", "non-finite parameter"));
        }
        Ok(())
    }

    pub fn eval(&self, sigma: Activation, x: &[f64], out: &mut [f64]) {
        neuron_eval(sigma, &self.alpha, &self.beta, &self.gamma, x, out);
    }
}

/// `out = α ⊙ σ(β x + γ)`. Shared by the control field and the ResNet so
/// that both evaluate in the same floating-point order.
#[inline]
pub fn neuron_eval(
    sigma: Activation,
    alpha: &[f64],
    beta: &[f64],
    gamma: &[f64],
    x: &[f64],
    out: &mut [f64],
) {
    let n = x.len();
    for j in 0..n {
        let s = dot(&beta[j * n..(j + 1) * n], x) + gamma[j];
        out[j] = alpha[j] * sigma.apply(s);
    }
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    // Equal endpoints must give the endpoint itself, not a rounded blend.
    if a == b {
        return a;
    }
    (1.0 - w) * a + w * b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronControls {
    dim: usize,
    sigma: Activation,
    horizon: f64,
    representation: Representation,
    /// Piecewise: breakpoints `0 = t_0 < … < t_P = T` (P pieces).
    /// Sampled: sample nodes `0 = t_0 < … < t_P = T` (P + 1 samples).
    times: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
}

impl NeuronControls {
    pub fn new(
        sigma: Activation,
        horizon: f64,
        representation: Representation,
        times: Vec<f64>,
        params: &[NeuronParams],
    ) -> Result<Self> {
        let n = params.first().map(|p| p.dim()).ok_or_else(|| {
            Error::invalid("controls", "at least one parameter triple is required")
        })?;
        let mut alpha = Vec::with_capacity(params.len() * n);
        let mut beta = Vec::with_capacity(params.len() * n * n);
        let mut gamma = Vec::with_capacity(params.len() * n);
        for p in params {
            p.check(n)?;
            alpha.extend_from_slice(&p.alpha);
            beta.extend_from_slice(&p.beta);
            gamma.extend_from_slice(&p.gamma);
        }
        Self::from_flat(sigma, horizon, representation, n, times, alpha, beta, gamma)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_flat(
        sigma: Activation,
        horizon: f64,
        representation: Representation,
        dim: usize,
        times: Vec<f64>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        gamma: Vec<f64>,
    ) -> Result<Self> {
        sigma.validate()?;
        if dim == 0 {
            return Err(Error::invalid("controls", "dimension must be at least 1"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("controls", "horizon must be positive"));
        }
        if times.len() < 2 {
            return Err(Error::invalid("controls", "need at least two time nodes"));
        }
        if times[0] != 0.0 || *times.last().unwrap() != horizon {
            return Err(Error::invalid(
                "controls",
                "time nodes must start at 0 and end at the horizon",
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("controls", "time nodes must be strictly increasing"));
        }
        let count = match representation {
            Representation::PiecewiseConstant => times.len() - 1,
            Representation::SampledContinuous => times.len(),
        };
        for (len, want) in [
            (alpha.len(), count * dim),
            (beta.len(), count * dim * dim),
            (gamma.len(), count * dim),
        ] {
            if len != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    got: len,
                });
            }
        }
        if !alpha.iter().chain(&beta).chain(&gamma).all(|v| v.is_finite()) {
            return Err(Error::invalid("controls", "non-finite parameter"));
        }
        Ok(NeuronControls {
            dim,
            sigma,
            horizon,
            representation,
            times,
            alpha,
            beta,
            gamma,
        })
    }

    /// Controls that do not depend on time.
    pub fn constant(sigma: Activation, horizon: f64, params: NeuronParams) -> Result<Self> {
        Self::new(
            sigma,
            horizon,
            Representation::PiecewiseConstant,
            vec![0.0, horizon],
            &[params],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> Activation {
        self.sigma
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn alpha_flat(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta_flat(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma_flat(&self) -> &[f64] {
        &self.gamma
    }

    /// Number of pieces (piecewise) or samples (sampled).
    pub fn len(&self) -> usize {
        self.alpha.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn params(&self, k: usize) -> NeuronParams {
        let n = self.dim;
        NeuronParams {
            alpha: self.alpha[k * n..(k + 1) * n].to_vec(),
            beta: self.beta[k * n * n..(k + 1) * n * n].to_vec(),
            gamma: self.gamma[k * n..(k + 1) * n].to_vec(),
        }
    }

    pub fn alpha(&self, k: usize) -> &[f64] {
        &self.alpha[k * self.dim..(k + 1) * self.dim]
    }

    pub fn beta(&self, k: usize) -> &[f64] {
        let m = self.dim * self.dim;
        &self.beta[k * m..(k + 1) * m]
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        &self.gamma[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the piece `(t_{p-1}, t_p]` containing `t` (0-based).
    pub fn piece_index(&self, t: f64) -> usize {
        let i = self.times.partition_point(|s| *s < t);
        i.saturating_sub(1).min(self.times.len() - 2)
    }

    /// Sample interval `[t_i, t_{i+1}]` containing `t` and the weight of `t_{i+1}`.
    fn bracket(&self, t: f64) -> (usize, f64) {
        let last = self.times.len() - 1;
        let i = self.times.partition_point(|s| *s <= t);
        if i == 0 {
            return (0, 0.0);
        }
        if i > last {
            return (last - 1, 1.0);
        }
        let (a, b) = (self.times[i - 1], self.times[i]);
        let w = (t - a) / (b - a);
        (i - 1, w)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Control values at `t`.
    pub fn params_at(&self, t: f64) -> Result<NeuronParams> {
        self.check_time(t)?;
        Ok(match self.representation {
            Representation::PiecewiseConstant => self.params(self.piece_index(t)),
            Representation::SampledContinuous => {
                let (i, w) = self.bracket(t);
                if w == 0.0 {
                    return Ok(self.params(i));
                }
                let lo = self.params(i);
                let hi = self.params(i + 1);
                let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
                    a.iter().zip(b).map(|(x, y)| lerp(*x, *y, w)).collect()
                };
                NeuronParams {
                    alpha: mix(&lo.alpha, &hi.alpha),
                    beta: mix(&lo.beta, &hi.beta),
                    gamma: mix(&lo.gamma, &hi.gamma),
                }
            }
        })
    }

    /// `α(t) ⊙ σ(β(t) x + γ(t))`, rejecting `t` outside `[0, T]`.
    pub fn eval_neuron_field(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.eval_unchecked(x, t, &mut out);
        Ok(out)
    }

    fn eval_unchecked(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let t = t.clamp(0.0, self.horizon);
        match self.representation {
            Representation::PiecewiseConstant => {
                let p = self.piece_index(t);
                neuron_eval(
                    self.sigma,
                    self.alpha(p),
                    self.beta(p),
                    self.gamma(p),
                    x,
                    out,
                );
            }
            Representation::SampledContinuous => {
                let (i, w) = self.bracket(t);
                if w == 0.0 {
                    neuron_eval(
                        self.sigma,
                        self.alpha(i),
                        self.beta(i),
                        self.gamma(i),
                        x,
                        out,
                    );
                    return;
                }
                let n = self.dim;
                let (a0, a1) = (self.alpha(i), self.alpha(i + 1));
                let (b0, b1) = (self.beta(i), self.beta(i + 1));
                let (g0, g1) = (self.gamma(i), self.gamma(i + 1));
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += lerp(b0[j * n + k], b1[j * n + k], w) * x[k];
                    }
                    s += lerp(g0[j], g1[j], w);
                    out[j] = lerp(a0[j], a1[j], w) * self.sigma.apply(s);
                }
            }
        }
    }

    /// `sup_t |α(t)|` (Euclidean). Linear interpolation never exceeds the
    /// node maximum, so the node maximum is exact for both representations.
    pub fn sup_alpha(&self) -> f64 {
        (0..self.len()).map(|k| norm(self.alpha(k))).fold(0.0, f64::max)
    }

    /// `sup_t ‖β(t)‖` in the operator 2-norm.
    pub fn sup_beta(&self) -> f64 {
        (0..self.len())
            .map(|k| spectral_norm(self.beta(k), self.dim))
            .fold(0.0, f64::max)
    }

    pub fn sup_gamma(&self) -> f64 {
        (0..self.len()).map(|k| norm(self.gamma(k))).fold(0.0, f64::max)
    }

    /// Interior breakpoints of a piecewise-constant schedule.
    pub fn breakpoints(&self) -> &[f64] {
        &self.times[1..self.times.len() - 1]
    }
}

impl VectorField for NeuronControls {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.eval_unchecked(x, t, out)
    }

    fn lipschitz(&self) -> f64 {
        self.sup_alpha() * self.sup_beta() * self.sigma.lipschitz()
    }

    fn time_regularity(&self) -> TimeRegularity<'_> {
        match self.representation {
            Representation::PiecewiseConstant => {
                TimeRegularity::PiecewiseConstant(Cow::Borrowed(self.breakpoints()))
            }
            Representation::SampledContinuous => TimeRegularity::Continuous,
        }
    }

    fn is_autonomous(&self) -> bool {
        self.len() == 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(a: f64, b: f64, g: f64) -> NeuronParams {
        NeuronParams {
            alpha: vec![a],
            beta: vec![b],
            gamma: vec![g],
        }
    }

    #[test]
    fn zero_alpha_gives_zero() {
        let c = NeuronControls::constant(
            Activation::Tanh,
            1.0,
            NeuronParams {
                alpha: vec![0.0; 2],
                beta: vec![1.0, 2.0, 3.0, 4.0],
                gamma: vec![0.5, -0.5],
            },
        )
        .unwrap();
        assert_eq!(c.eval_neuron_field(&[3.0, -1.0], 0.7).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn relu_negative_branch() {
        let c = NeuronControls::constant(Activation::Relu, 1.0, scalar(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(c.eval_neuron_field(&[-2.0], 0.5).unwrap(), vec![0.0]);
    }

    #[test]
    fn tanh_scalar_against_series_oracle() {
        // tanh(0.5) from (e - 1)/(e + 1) with e = exp(1) via its Taylor series.
        let mut e = 0.0;
        let mut term = 1.0;
        for k in 1..30 {
            e += term;
            term /= k as f64;
        }
        let oracle = 2.0 * (e - 1.0) / (e + 1.0);
        let c = NeuronControls::constant(Activation::Tanh, 1.0, scalar(2.0, 1.0, 0.0)).unwrap();
        let v = c.eval_neuron_field(&[0.5], 0.3).unwrap()[0];
        assert!((v - oracle).abs() < 1e-15, "{v} vs {oracle}");
    }

    #[test]
    fn rejects_times_outside_horizon() {
        let c = NeuronControls::constant(Activation::Tanh, 1.0, scalar(1.0, 1.0, 0.0)).unwrap();
        assert!(matches!(
            c.eval_neuron_field(&[0.0], 1.5),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(c.eval_neuron_field(&[0.0], -1e-9).is_err());
    }

    #[test]
    fn half_open_pieces() {
        let c = NeuronControls::new(
            Activation::Relu,
            2.0,
            Representation::PiecewiseConstant,
            vec![0.0, 1.0, 2.0],
            &[scalar(1.0, 1.0, 0.0), scalar(5.0, 1.0, 0.0)],
        )
        .unwrap();
        let at = |t: f64| c.eval_neuron_field(&[1.0], t).unwrap()[0];
        assert_eq!(at(0.0), 1.0);
        assert_eq!(at(1.0), 1.0);
        assert_eq!(at(1.0 + 1e-12), 5.0);
        assert_eq!(at(2.0), 5.0);
    }

    #[test]
    fn sampled_interpolation_hits_nodes_exactly() {
        let c = NeuronControls::new(
            Activation::Relu,
            1.0,
            Representation::SampledContinuous,
            vec![0.0, 0.5, 1.0],
            &[scalar(1.0, 1.0, 0.0), scalar(3.0, 1.0, 0.0), scalar(2.0, 1.0, 0.0)],
        )
        .unwrap();
        assert_eq!(c.eval_neuron_field(&[1.0], 0.5).unwrap()[0], 3.0);
        assert_eq!(c.eval_neuron_field(&[1.0], 0.25).unwrap()[0], 2.0);
        assert_eq!(c.eval_neuron_field(&[1.0], 1.0).unwrap()[0], 2.0);
        assert_eq!(c.params_at(0.75).unwrap().alpha, vec![2.5]);
    }

    #[test]
    fn validation() {
        let p = scalar(1.0, 1.0, 0.0);
        let bad_times = NeuronControls::new(
            Activation::Tanh,
            1.0,
            Representation::PiecewiseConstant,
            vec![0.0, 0.5, 0.5, 1.0],
            &[p.clone(), p.clone(), p.clone()],
        );
        assert!(bad_times.is_err());
        let wrong_count = NeuronControls::new(
            Activation::Tanh,
            1.0,
            Representation::SampledContinuous,
            vec![0.0, 1.0],
            std::slice::from_ref(&p),
        );
        assert!(wrong_count.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn value_on_piece_is_constant(cuts in prop::collection::btree_set(1u32..999, 1..6),
                                      vals in prop::collection::vec(-3.0f64..3.0, 7),
                                      frac in 0.0f64..1.0, x in -2.0f64..2.0) {
            let mut times = vec![0.0];
            times.extend(cuts.iter().map(|c| *c as f64 / 1000.0));
            times.push(1.0);
            let params: Vec<_> = (0..times.len() - 1).map(|k| scalar(vals[k], 1.0, 0.1)).collect();
            let c = NeuronControls::new(Activation::Tanh, 1.0, Representation::PiecewiseConstant,
                                        times.clone(), &params).unwrap();
            for p in 1..times.len() {
                let right = c.eval_neuron_field(&[x], times[p]).unwrap();
                let t = times[p - 1] + (times[p] - times[p - 1]) * frac.max(1e-6);
                let inside = c.eval_neuron_field(&[x], t).unwrap();
                prop_assert_eq!(right, inside);
            }
        }

        #[test]
        fn lipschitz_certificate_holds(a in -2.0f64..2.0, b in -2.0f64..2.0, g in -1.0f64..1.0,
                                       x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let c = NeuronControls::constant(Activation::Tanh, 1.0, scalar(a, b, g)).unwrap();
            prop_assume!(x != y);
            let q = (c.eval_neuron_field(&[x], 0.5).unwrap()[0]
                   - c.eval_neuron_field(&[y], 0.5).unwrap()[0]).abs() / (x - y).abs();
            prop_assert!(q <= c.lipschitz() * (1.0 + 1e-12) + 1e-15);
        }
    }
}
