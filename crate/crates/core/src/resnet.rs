//! Finite-depth ResNets read off continuous neuron controls.
//!
//! Layer `l` carries the controls at the left endpoint `t_l = lT/L` and the
//! forward pass `x ← x + Δt·α_l ⊙ σ(β_l x + γ_l)` is exactly the explicit
//! Euler scheme of the solver on the same controls.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::bounds::resnet_error_envelope;
use crate::controls::{neuron_eval, NeuronControls, NeuronParams, Representation};
use crate::domain::Domain;
use crate::linalg::{distance, norm};
use crate::solver::{SolverConfig, TimeGrid, DIVERGENCE_NORM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNetModel {
    pub dim: usize,
    #[serde(rename = "activation")]
    pub sigma: Activation,
    pub horizon: f64,
    pub depth: usize,
    pub step: f64,
    pub layers: Vec<NeuronParams>,
}

impl ResNetModel {
    pub fn validate(&self) -> Result<()> {
        self.sigma.validate()?;
        if self.layers.is_empty() || self.layers.len() != self.depth {
            return Err(Error::invalid("resnet", "depth must equal the number of layers and be at least 1"));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::invalid("resnet", "step must be positive"));
        }
        for p in &self.layers {
            if p.alpha.len() != self.dim || p.beta.len() != self.dim * self.dim || p.gamma.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: p.alpha.len() });
            }
            if !p.alpha.iter().chain(&p.beta).chain(&p.gamma).all(|v| v.is_finite()) {
                return Err(Error::invalid("resnet", "non-finite layer parameter"));
            }
        }
        Ok(())
    }
}

/// Samples continuous controls at `t_l = lT/L`, `l = 0..L-1`, with `Δt = T/L`.
pub fn extract_resnet(c: &NeuronControls, depth: usize) -> Result<ResNetModel> {
    if depth == 0 {
        return Err(Error::invalid("depth", "must be at least 1"));
    }
    if c.representation() != Representation::SampledContinuous {
        return Err(Error::invalid(
            "controls",
            "ResNet extraction needs continuous controls; mollify the piecewise-constant schedule first",
        ));
    }
    let horizon = c.horizon();
    let layers = (0..depth)
        .map(|l| c.params_at(TimeGrid::base_time(horizon, depth, l)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResNetModel {
        dim: c.dim(),
        sigma: c.sigma(),
        horizon,
        depth,
        step: horizon / depth as f64,
        layers,
    })
}

/// Output `x^{(L)}` and every state `x^{(0)} = ξ, …, x^{(L)}`.
pub fn forward(model: &ResNetModel, xi: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = model.dim;
    if xi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: xi.len() });
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input", "initial state must be finite"));
    }
    let mut x = xi.to_vec();
    let mut k = vec![0.0; n];
    let mut states = Vec::with_capacity(model.layers.len() + 1);
    states.push(x.clone());
    for (l, p) in model.layers.iter().enumerate() {
        neuron_eval(model.sigma, &p.alpha, &p.beta, &p.gamma, &x, &mut k);
        for j in 0..n {
            x[j] += model.step * k[j];
        }
        if x.iter().any(|v| !v.is_finite()) || norm(&x) > DIVERGENCE_NORM {
            return Err(Error::LayerDivergence { layer: l });
        }
        states.push(x.clone());
    }
    Ok((x, states))
}

/// One row of a depth sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub depth: usize,
    /// `max_ξ |x^{(L)}(ξ) - S_h(T)ξ|` over the grid.
    pub sup_error: f64,
    /// Measured `ω(T/L)`.
    pub omega: f64,
    /// `e^{CT} ω / C`.
    pub envelope: f64,
    pub c: f64,
}

/// Sub-samples per layer interval used when measuring `ω`.
pub const OMEGA_SUBSAMPLES: usize = 8;

/// Sup error of the depth-`L` ResNet against the reference flow of `c`, with
/// the modulus `ω(T/L) = max |h(x(s),s) - h(x(t_l),t_l)|` over grid points,
/// layers and `s ∈ [t_l, t_{l+1}]`.
pub fn depth_convergence_study(
    c: &NeuronControls,
    domain: &Domain,
    depths: &[usize],
    solver: &SolverConfig,
) -> Result<Vec<DepthRow>> {
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("depths", "must be a nonempty increasing list"));
    }
    if domain.dim() != c.dim() {
        return Err(Error::DimensionMismatch { expected: c.dim(), got: domain.dim() });
    }
    let horizon = c.horizon();
    let points = domain.points();
    let cfg = solver.reference();
    let flows = crate::solver::flows_from(c, &points, horizon, &cfg)?;
    let cc = c.sup_alpha() * c.sup_beta() * c.sigma().lipschitz();
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let model = extract_resnet(c, depth)?;
        let per_point: Vec<Result<(f64, f64)>> = points
            .par_iter()
            .zip(&flows)
            .map(|(xi, tr)| {
                let (out, _) = forward(&model, xi)?;
                let err = distance(&out, tr.last());
                let mut omega = 0.0f64;
                let mut h0 = vec![0.0; c.dim()];
                for l in 0..depth {
                    let t0 = TimeGrid::base_time(horizon, depth, l);
                    let t1 = TimeGrid::base_time(horizon, depth, l + 1);
                    let x0 = tr.state_at(t0);
                    model.layers[l].eval(model.sigma, &x0, &mut h0);
                    for q in 1..=OMEGA_SUBSAMPLES {
                        let s = if q == OMEGA_SUBSAMPLES {
                            t1
                        } else {
                            t0 + (t1 - t0) * q as f64 / OMEGA_SUBSAMPLES as f64
                        };
                        let hs = c.eval_neuron_field(&tr.state_at(s), s)?;
                        omega = omega.max(distance(&hs, &h0));
                    }
                }
                Ok((err, omega))
            })
            .collect();
        let mut sup_error = 0.0f64;
        let mut omega = 0.0f64;
        for (i, r) in per_point.into_iter().enumerate() {
            let (e, w) = r.map_err(|e| Error::PointFailures(vec![(i, e)]))?;
            sup_error = sup_error.max(e);
            omega = omega.max(w);
        }
        rows.push(DepthRow {
            depth,
            sup_error,
            omega,
            envelope: resnet_error_envelope(cc, horizon, depth, omega),
            c: cc,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollify::mollify_controls;
    use crate::solver::solve_flow;
    use proptest::prelude::*;

    fn smooth_controls(n: usize, seed: u64) -> NeuronControls {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..=16).map(|k| k as f64 / 16.0).collect();
        let params: Vec<NeuronParams> = (0..times.len())
            .map(|_| NeuronParams {
                alpha: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                beta: (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                gamma: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
            })
            .collect();
        NeuronControls::new(Activation::Tanh, 1.0, Representation::SampledContinuous, times, &params).unwrap()
    }

    fn const_sampled(p: NeuronParams, horizon: f64) -> NeuronControls {
        NeuronControls::new(
            Activation::Tanh,
            horizon,
            Representation::SampledContinuous,
            vec![0.0, horizon],
            &[p.clone(), p],
        )
        .unwrap()
    }

    #[test]
    fn constant_controls_give_identical_layers() {
        let p = NeuronParams { alpha: vec![0.5], beta: vec![1.2], gamma: vec![-0.1] };
        let m = extract_resnet(&const_sampled(p.clone(), 2.0), 7).unwrap();
        assert_eq!(m.depth, 7);
        assert_eq!(m.step, 2.0 / 7.0);
        assert!(m.layers.iter().all(|l| *l == p));
    }

    #[test]
    fn single_layer_is_one_euler_step() {
        let p = NeuronParams { alpha: vec![0.5], beta: vec![1.2], gamma: vec![-0.1] };
        let m = extract_resnet(&const_sampled(p, 1.0), 1).unwrap();
        let (out, states) = forward(&m, &[0.3]).unwrap();
        assert_eq!(states.len(), 2);
        assert_eq!(out[0], 0.3 + 1.0 * (0.5 * (1.2f64 * 0.3 - 0.1).tanh()));
    }

    #[test]
    fn piecewise_controls_are_rejected() {
        let c = NeuronControls::constant(Activation::Tanh, 1.0, NeuronParams::zeros(1)).unwrap();
        assert!(matches!(extract_resnet(&c, 4), Err(Error::Invalid { .. })));
    }

    #[test]
    fn layers_match_mollified_evaluations() {
        let pc = NeuronControls::new(
            Activation::Tanh,
            1.0,
            Representation::PiecewiseConstant,
            vec![0.0, 0.5, 1.0],
            &[
                NeuronParams { alpha: vec![1.0], beta: vec![2.0], gamma: vec![0.0] },
                NeuronParams { alpha: vec![-1.0], beta: vec![0.5], gamma: vec![0.3] },
            ],
        )
        .unwrap();
        let c = mollify_controls(&pc, 0.1).unwrap();
        let m = extract_resnet(&c, 12).unwrap();
        for (l, p) in m.layers.iter().enumerate() {
            assert_eq!(*p, c.params_at(l as f64 / 12.0).unwrap());
        }
    }

    #[test]
    fn zero_weights_are_identity() {
        let c = const_sampled(NeuronParams::zeros(2), 1.0);
        let m = extract_resnet(&c, 9).unwrap();
        let (out, _) = forward(&m, &[0.4, -2.0]).unwrap();
        assert_eq!(out, vec![0.4, -2.0]);
        let d = Domain::cube(2, -1.0, 1.0, 3).unwrap();
        let rows = depth_convergence_study(&c, &d, &[2, 4], &SolverConfig::rk4(16)).unwrap();
        assert!(rows.iter().all(|r| r.sup_error == 0.0 && r.omega == 0.0 && r.envelope == 0.0));
    }

    #[test]
    fn compound_growth_limit() {
        // relu with β = 1, γ = 0 is the identity on the positive orthant, so
        // the ResNet computes (1 + T/L)^L.
        let p = NeuronParams { alpha: vec![1.0], beta: vec![1.0], gamma: vec![0.0] };
        let c = NeuronControls::new(Activation::Relu, 1.0, Representation::SampledContinuous, vec![0.0, 1.0], &[p.clone(), p]).unwrap();
        let mut prev = f64::INFINITY;
        for l in [4, 16, 64, 256, 1024] {
            let (out, _) = forward(&extract_resnet(&c, l).unwrap(), &[1.0]).unwrap();
            let want = (1.0 + 1.0 / l as f64).powi(l as i32);
            assert!((out[0] - want).abs() < 1e-12 * want);
            let gap = std::f64::consts::E - out[0];
            assert!(gap > 0.0 && gap < prev);
            prev = gap;
        }
        assert!(prev < 2e-3);
    }

    #[test]
    fn divergence_names_the_layer() {
        let p = NeuronParams { alpha: vec![1.0], beta: vec![1.0], gamma: vec![0.0] };
        let c = NeuronControls::new(Activation::Relu, 100.0, Representation::SampledContinuous, vec![0.0, 100.0], &[p.clone(), p]).unwrap();
        let m = extract_resnet(&c, 10).unwrap();
        // Each layer multiplies by 11: 1e3·11^9 is the first state above 1e12.
        match forward(&m, &[1e3]) {
            Err(Error::LayerDivergence { layer }) => assert_eq!(layer, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn first_order_convergence_and_envelope() {
        let c = smooth_controls(2, 3);
        let d = Domain::cube(2, -1.0, 1.0, 3).unwrap();
        let rows = depth_convergence_study(&c, &d, &[32, 64, 128, 256], &SolverConfig::rk4(256)).unwrap();
        for r in &rows {
            assert!(r.sup_error <= r.envelope * (1.0 + 1e-6), "{r:?}");
        }
        for w in rows.windows(2) {
            assert!(w[1].sup_error <= 0.6 * w[0].sup_error, "{w:?}");
        }
        // Richardson: error · L settles.
        let a = rows[2].sup_error * 128.0;
        let b = rows[3].sup_error * 256.0;
        assert!((a - b).abs() < 0.05 * b, "{a} {b}");
    }

    #[test]
    fn layer_table_round_trips() {
        let m = extract_resnet(&smooth_controls(2, 5), 8).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: ResNetModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn forward_is_the_euler_scheme(seed in 0u64..10_000, depth in 1usize..80, x0 in -2.0f64..2.0, x1 in -2.0f64..2.0) {
            let c = smooth_controls(2, seed);
            let m = extract_resnet(&c, depth).unwrap();
            let (out, states) = forward(&m, &[x0, x1]).unwrap();
            let tr = solve_flow(&c, &[x0, x1], 1.0, &SolverConfig::euler(depth)).unwrap();
            prop_assert_eq!(tr.len(), states.len());
            for (i, s) in states.iter().enumerate() {
                prop_assert_eq!(s.as_slice(), tr.state(i));
            }
            prop_assert_eq!(out.as_slice(), tr.last());
        }
    }
}
