//! Static fields as sums of neurons, `Σ_i α_i ⊙ σ(β_i x + γ_i)`, fitted by
//! random features and ridge regression.
//!
//! Each output component `j` is fitted as a scalar sum `Σ_i a_i σ(b_i·x + c_i)`
//! and the scalar fits are stacked: component `j` of `α_i`, row `j` of `β_i`
//! and component `j` of `γ_i` carry fit `j`, and short fits are padded with
//! zero terms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::controls::{neuron_eval, NeuronParams};
use crate::domain::Domain;
use crate::field::VectorField;
use crate::linalg::{dot, norm, spectral_norm};
use crate::{Error, Result};

/// Width escalation stops after this many doublings.
pub const MAX_DOUBLINGS: u32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub width_per_component: usize,
    pub feature_scale: f64,
    pub ridge: f64,
    #[serde(default)]
    pub seed: u64,
    pub target_sup_error: f64,
    /// Put the coordinate feature `σ(x_j)` first in the dictionary of
    /// component `j`; the remaining slots are random.
    #[serde(default)]
    pub axis_feature: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            width_per_component: 16,
            feature_scale: 2.0,
            ridge: 1e-10,
            seed: 0,
            target_sup_error: 1e-2,
            axis_feature: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width_per_component == 0 {
            return Err(Error::invalid("fit", "width_per_component must be at least 1"));
        }
        if !(self.feature_scale.is_finite() && self.feature_scale > 0.0) {
            return Err(Error::invalid("fit", "feature_scale must be positive"));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::invalid("fit", "ridge must be nonnegative"));
        }
        if !(self.target_sup_error.is_finite() && self.target_sup_error > 0.0) {
            return Err(Error::invalid("fit", "target_sup_error must be positive"));
        }
        Ok(())
    }
}

/// One scalar term `a σ(b·x + c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTerm {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFit {
    pub terms: Vec<ScalarTerm>,
    /// Sup error on the training grid.
    pub train_sup_error: f64,
}

impl ScalarFit {
    pub fn eval(&self, sigma: Activation, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in &self.terms {
            acc += t.alpha * sigma.apply(dot(&t.beta, x) + t.gamma);
        }
        acc
    }

    pub fn width(&self) -> usize {
        self.terms.len()
    }
}

/// A static field `Σ_i α_i ⊙ σ(β_i x + γ_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowField {
    dim: usize,
    sigma: Activation,
    terms: Vec<NeuronParams>,
}

impl ShallowField {
    pub fn new(sigma: Activation, terms: Vec<NeuronParams>) -> Result<Self> {
        let dim = terms
            .first()
            .map(|p| p.dim())
            .ok_or_else(|| Error::invalid("shallow field", "needs at least one term"))?;
        for p in &terms {
            if p.alpha.len() != dim || p.beta.len() != dim * dim || p.gamma.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.alpha.len(),
                });
            }
        }
        Ok(ShallowField { dim, sigma, terms })
    }

    pub fn zero(sigma: Activation, dim: usize) -> Self {
        ShallowField {
            dim,
            sigma,
            terms: vec![NeuronParams::zeros(dim)],
        }
    }

    pub fn sigma(&self) -> Activation {
        self.sigma
    }

    pub fn terms(&self) -> &[NeuronParams] {
        &self.terms
    }

    /// `K`, the number of terms.
    pub fn width(&self) -> usize {
        self.terms.len()
    }

    /// `α_i ⊙ σ(β_i x + γ_i)` for a single term.
    pub fn eval_term(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.terms[i].eval(self.sigma, x, out);
    }
}

impl VectorField for ShallowField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        let n = self.dim;
        for j in 0..n {
            let mut acc = 0.0;
            for p in &self.terms {
                let s = dot(&p.beta[j * n..(j + 1) * n], x) + p.gamma[j];
                acc += p.alpha[j] * self.sigma.apply(s);
            }
            out[j] = acc;
        }
    }

    fn lipschitz(&self) -> f64 {
        let lip = self.sigma.lipschitz();
        self.terms
            .iter()
            .map(|p| norm(&p.alpha) * spectral_norm(&p.beta, self.dim) * lip)
            .sum()
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Feature dictionary for one component: `(b, c)` pairs. The first `width`
/// features are a prefix of the dictionary for any larger width.
pub fn feature_dictionary(
    n: usize,
    component: usize,
    width: usize,
    radius: f64,
    cfg: &FitConfig,
) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(component as u64 + 1);
    let s = cfg.feature_scale;
    let mut out = Vec::with_capacity(width);
    if cfg.axis_feature && width > 0 {
        let mut e = vec![0.0; n];
        e[component.min(n - 1)] = 1.0;
        out.push((e, 0.0));
    }
    while out.len() < width {
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-s..=s)).collect();
        let c = if radius > 0.0 {
            rng.random_range(-s * radius..=s * radius)
        } else {
            0.0
        };
        out.push((b, c));
    }
    out
}

/// Ridge least squares for the outer coefficients on a fixed dictionary:
/// `(ΦᵀΦ/n + λI) a = Φᵀy/n`.
pub fn fit_scalar_on_features(
    sigma: Activation,
    features: &[(Vec<f64>, f64)],
    points: &[Vec<f64>],
    targets: &[f64],
    ridge: f64,
) -> Result<ScalarFit> {
    let rows = points.len();
    let cols = features.len();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("fit", "empty training set or dictionary"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("fit", "target is not finite on the grid"));
    }
    let phi = DMatrix::from_fn(rows, cols, |r, c| {
        sigma.apply(dot(&features[c].0, &points[r]) + features[c].1)
    });
    let y = DVector::from_column_slice(targets);
    let scale = 1.0 / rows as f64;
    let mut gram = phi.transpose() * &phi * scale;
    for i in 0..cols {
        gram[(i, i)] += ridge;
    }
    let rhs = phi.transpose() * &y * scale;
    let coeffs = if y.iter().all(|v| *v == 0.0) {
        DVector::zeros(cols)
    } else {
        let chol = gram.clone().cholesky().ok_or(Error::IllConditioned { ridge })?;
        if ridge == 0.0 {
            // Reject numerically singular systems rather than return noise.
            let d = chol.l().diagonal();
            let (lo, hi) = d
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
            if !(lo > 1e-7 * hi) {
                return Err(Error::IllConditioned { ridge });
            }
        }
        chol.solve(&rhs)
    };
    if coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned { ridge });
    }
    let terms: Vec<ScalarTerm> = features
        .iter()
        .zip(coeffs.iter())
        .map(|((b, c), a)| ScalarTerm {
            alpha: *a,
            beta: b.clone(),
            gamma: *c,
        })
        .collect();
    let mut fit = ScalarFit {
        terms,
        train_sup_error: 0.0,
    };
    fit.train_sup_error = points
        .iter()
        .zip(targets)
        .map(|(p, y)| (fit.eval(sigma, p) - y).abs())
        .fold(0.0, f64::max);
    Ok(fit)
}

/// Fits one output component on the grid of `D` with
/// `cfg.width_per_component` features.
pub fn fit_scalar(
    f_j: &dyn Fn(&[f64]) -> f64,
    component: usize,
    sigma: Activation,
    domain: &Domain,
    cfg: &FitConfig,
) -> Result<ScalarFit> {
    cfg.validate()?;
    let points = domain.points();
    let targets: Vec<f64> = points.iter().map(|p| f_j(p)).collect();
    let features = feature_dictionary(
        domain.dim(),
        component,
        cfg.width_per_component,
        domain.coordinate_radius(),
        cfg,
    );
    fit_scalar_on_features(sigma, &features, &points, &targets, cfg.ridge)
}

/// Stacks `N` scalar fits into one field of width `K = max K_j`.
pub fn stack_components(sigma: Activation, fits: &[ScalarFit]) -> Result<ShallowField> {
    let n = fits.len();
    if n == 0 {
        return Err(Error::invalid("stack", "need at least one component fit"));
    }
    for f in fits {
        if f.terms.is_empty() {
            return Err(Error::invalid("stack", "component fit has no terms"));
        }
        for t in &f.terms {
            if t.beta.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: t.beta.len(),
                });
            }
        }
    }
    let k = fits.iter().map(|f| f.terms.len()).max().unwrap();
    let terms = (0..k)
        .map(|i| {
            let mut p = NeuronParams::zeros(n);
            for (j, f) in fits.iter().enumerate() {
                if let Some(t) = f.terms.get(i) {
                    p.alpha[j] = t.alpha;
                    p.beta[j * n..(j + 1) * n].copy_from_slice(&t.beta);
                    p.gamma[j] = t.gamma;
                }
            }
            p
        })
        .collect();
    ShallowField::new(sigma, terms)
}

/// Result of fitting a static field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFit {
    pub field: ShallowField,
    /// Sup over the validation grid of `|f(x) - Σ α_i ⊙ σ(β_i x + γ_i)|`.
    pub sup_error: f64,
    pub component_errors: Vec<f64>,
    pub component_widths: Vec<usize>,
}

/// Sup over `points` of the Euclidean error between `f(·, t)` and `g`.
pub fn sup_error_on(f: &dyn VectorField, t: f64, g: &dyn VectorField, points: &[Vec<f64>]) -> f64 {
    let n = f.dim();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    points
        .iter()
        .map(|p| {
            f.eval(p, t, &mut a);
            g.eval(p, 0.0, &mut b);
            crate::linalg::distance(&a, &b)
        })
        .fold(0.0, f64::max)
}

/// Fits `x ↦ f(x, t)` on `D`. Each component must reach
/// `target/√N` on a validation grid twice as fine as the training grid;
/// widths double up to `2^6` times the configured width.
pub fn fit_vector_field(
    f: &dyn VectorField,
    t: f64,
    sigma: Activation,
    domain: &Domain,
    cfg: &FitConfig,
) -> Result<VectorFit> {
    cfg.validate()?;
    let n = f.dim();
    if domain.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: domain.dim(),
        });
    }
    let train = domain.points();
    let valid = domain.refined(2).points();
    let eval_all = |pts: &[Vec<f64>]| -> Vec<Vec<f64>> {
        pts.iter()
            .map(|p| {
                let mut out = vec![0.0; n];
                f.eval(p, t, &mut out);
                out
            })
            .collect()
    };
    let train_y = eval_all(&train);
    let valid_y = eval_all(&valid);
    if train_y.iter().chain(&valid_y).flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("fit", "target is not finite on the grid"));
    }
    let per_target = cfg.target_sup_error / (n as f64).sqrt();
    let radius = domain.coordinate_radius();
    let fits: Vec<Result<(ScalarFit, f64)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let ty: Vec<f64> = train_y.iter().map(|v| v[j]).collect();
            let mut best: Option<(ScalarFit, f64)> = None;
            for d in 0..=MAX_DOUBLINGS {
                let width = cfg.width_per_component << d;
                let feats = feature_dictionary(n, j, width, radius, cfg);
                let fit = fit_scalar_on_features(sigma, &feats, &train, &ty, cfg.ridge)?;
                let err = valid
                    .iter()
                    .zip(&valid_y)
                    .map(|(p, y)| (fit.eval(sigma, p) - y[j]).abs())
                    .fold(0.0, f64::max);
                let better = best.as_ref().is_none_or(|b| err < b.1);
                if better {
                    best = Some((fit, err));
                }
                if err <= per_target {
                    break;
                }
            }
            Ok(best.unwrap())
        })
        .collect();
    let mut scalar = Vec::with_capacity(n);
    let mut component_errors = Vec::with_capacity(n);
    for r in fits {
        let (fit, err) = r?;
        scalar.push(fit);
        component_errors.push(err);
    }
    let component_widths = scalar.iter().map(|s| s.width()).collect();
    let field = stack_components(sigma, &scalar)?;
    let mut b = vec![0.0; n];
    let sup_error = valid
        .iter()
        .zip(&valid_y)
        .map(|(p, y)| {
            field.eval(p, 0.0, &mut b);
            crate::linalg::distance(y, &b)
        })
        .fold(0.0, f64::max);
    if component_errors.iter().any(|e| *e > per_target) {
        return Err(Error::ApproximationFailure {
            best: sup_error,
            target: cfg.target_sup_error,
        });
    }
    Ok(VectorFit {
        field,
        sup_error,
        component_errors,
        component_widths,
    })
}

/// Evaluates a single neuron term; kept next to the fitter for callers that
/// walk terms one at a time.
pub fn term_eval(sigma: Activation, p: &NeuronParams, x: &[f64], out: &mut [f64]) {
    neuron_eval(sigma, &p.alpha, &p.beta, &p.gamma, x, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{LinearField, ZeroField};
    use proptest::prelude::*;

    fn cfg(width: usize) -> FitConfig {
        FitConfig {
            width_per_component: width,
            feature_scale: 2.0,
            ridge: 1e-12,
            seed: 11,
            target_sup_error: 1e-3,
            axis_feature: false,
        }
    }

    #[test]
    fn constant_target_with_eight_terms() {
        let d = Domain::cube(1, -1.0, 1.0, 41).unwrap();
        let fit = fit_scalar(&|_x: &[f64]| 0.7, 0, Activation::Tanh, &d, &cfg(8)).unwrap();
        assert_eq!(fit.width(), 8);
        let fine = Domain::cube(1, -1.0, 1.0, 401).unwrap();
        let err = fine
            .points()
            .iter()
            .map(|p| (fit.eval(Activation::Tanh, p) - 0.7).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn realizable_target_is_recovered() {
        let d = Domain::cube(2, -1.0, 1.0, 9).unwrap();
        let (b, g) = (vec![0.8, -1.3], 0.4);
        let mut feats = feature_dictionary(2, 0, 6, 1.0, &cfg(6));
        feats.insert(2, (b.clone(), g));
        let pts = d.points();
        let y: Vec<f64> = pts.iter().map(|p| 1.7 * (dot(&b, p) + g).tanh()).collect();
        let fit = fit_scalar_on_features(Activation::Tanh, &feats, &pts, &y, 0.0).unwrap();
        assert!(fit.train_sup_error < 1e-8, "{}", fit.train_sup_error);
        assert!((fit.terms[2].alpha - 1.7).abs() < 1e-6);
    }

    #[test]
    fn zero_target_gives_zero_coefficients() {
        let d = Domain::cube(1, -1.0, 1.0, 11).unwrap();
        let fit = fit_scalar(&|_x: &[f64]| 0.0, 0, Activation::Tanh, &d, &cfg(5)).unwrap();
        assert!(fit.terms.iter().all(|t| t.alpha == 0.0));
        assert_eq!(fit.train_sup_error, 0.0);
        let vf = fit_vector_field(&ZeroField { dim: 2 }, 0.0, Activation::Tanh, &Domain::cube(2, -1.0, 1.0, 5).unwrap(), &cfg(3)).unwrap();
        assert_eq!(vf.sup_error, 0.0);
    }

    #[test]
    fn singular_system_without_ridge() {
        let d = Domain::cube(1, -1.0, 1.0, 11).unwrap();
        let feats = vec![(vec![1.0], 0.0), (vec![1.0], 0.0)];
        let pts = d.points();
        let y: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        assert_eq!(
            fit_scalar_on_features(Activation::Tanh, &feats, &pts, &y, 0.0),
            Err(Error::IllConditioned { ridge: 0.0 })
        );
        assert!(fit_scalar_on_features(Activation::Tanh, &feats, &pts, &y, 1e-8).is_ok());
    }

    #[test]
    fn stacking_pads_with_zeros() {
        let mk = |k: usize, n: usize, a: f64| ScalarFit {
            terms: (0..k)
                .map(|i| ScalarTerm { alpha: a + i as f64, beta: vec![0.5; n], gamma: 0.1 })
                .collect(),
            train_sup_error: 0.0,
        };
        let one = stack_components(Activation::Tanh, &[mk(3, 1, 1.0)]).unwrap();
        assert_eq!(one.width(), 3);
        assert_eq!(one.terms()[1].alpha, vec![2.0]);
        let two = stack_components(Activation::Tanh, &[mk(3, 2, 1.0), mk(5, 2, -1.0)]).unwrap();
        assert_eq!(two.width(), 5);
        for i in 3..5 {
            assert_eq!(two.terms()[i].alpha[0], 0.0);
            assert_eq!(&two.terms()[i].beta[0..2], &[0.0, 0.0]);
            assert_eq!(two.terms()[i].gamma[0], 0.0);
        }
        assert!(stack_components(Activation::Tanh, &[mk(2, 3, 1.0)]).is_err());
    }

    #[test]
    fn tanh_field_is_realizable_with_axis_feature() {
        let f = crate::field::NegTanhField { dim: 2, gain: 1.0 };
        let d = Domain::cube(2, -1.0, 1.0, 7).unwrap();
        let c = FitConfig { width_per_component: 1, axis_feature: true, target_sup_error: 1e-6, ..cfg(1) };
        let fit = fit_vector_field(&f, 0.0, Activation::Tanh, &d, &c).unwrap();
        assert_eq!(fit.field.width(), 1);
        assert!(fit.sup_error < 1e-9);
    }

    #[test]
    fn linear_field_escalates_and_meets_target() {
        let f = LinearField::homogeneous(2, vec![0.5, -1.0, 0.8, 0.3]).unwrap();
        let d = Domain::cube(2, -1.0, 1.0, 11).unwrap();
        let c = FitConfig { target_sup_error: 1e-2, ..cfg(4) };
        let fit = fit_vector_field(&f, 0.0, Activation::Tanh, &d, &c).unwrap();
        assert!(fit.sup_error < 1e-2);
        let again = fit_vector_field(&f, 0.0, Activation::Tanh, &d, &c).unwrap();
        assert_eq!(fit, again);
    }

    #[test]
    fn failure_carries_best_error() {
        // Width cap 2·64 = 128 cannot resolve a kink to 1e-9.
        let f = crate::field::FnField::new(1, 1.0, |x, _t, o| o[0] = x[0].abs()).autonomous();
        let d = Domain::cube(1, -1.0, 1.0, 21).unwrap();
        let c = FitConfig { width_per_component: 2, target_sup_error: 1e-9, ridge: 1e-8, ..cfg(2) };
        match fit_vector_field(&f, 0.0, Activation::Tanh, &d, &c) {
            Err(Error::ApproximationFailure { best, target }) => {
                assert!(best > 1e-9 && best.is_finite());
                assert_eq!(target, 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn median_error_does_not_grow_with_width() {
        let d = Domain::cube(1, -1.0, 1.0, 33).unwrap();
        let target = |x: &[f64]| (2.0 * x[0]).sin();
        let fine = d.refined(2).points();
        let median = |w: usize| {
            let mut errs: Vec<f64> = (0..10)
                .map(|s| {
                    let c = FitConfig { seed: s, ridge: 1e-10, ..cfg(w) };
                    let fit = fit_scalar(&target, 0, Activation::Tanh, &d, &c).unwrap();
                    fine.iter().map(|p| (fit.eval(Activation::Tanh, p) - target(p)).abs()).fold(0.0, f64::max)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            0.5 * (errs[4] + errs[5])
        };
        let mut prev = f64::INFINITY;
        for w in [2, 4, 8, 16] {
            let m = median(w);
            assert!(m <= prev, "width {w}: {m} > {prev}");
            prev = m;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn stacked_components_match_scalar_sums(seed in 0u64..1000, xs in prop::collection::vec(-1.5f64..1.5, 30)) {
            let d = Domain::cube(3, -1.0, 1.0, 4).unwrap();
            let c = FitConfig { seed, ..cfg(3) };
            let fits: Vec<ScalarFit> = (0..3)
                .map(|j| {
                    let c = FitConfig { width_per_component: 2 + j, ..c.clone() };
                    fit_scalar(&move |x: &[f64]| x[j] * x[(j + 1) % 3], j, Activation::Tanh, &d, &c).unwrap()
                })
                .collect();
            let field = stack_components(Activation::Tanh, &fits).unwrap();
            let mut out = [0.0; 3];
            for x in xs.chunks_exact(3) {
                field.eval(x, 0.0, &mut out);
                for j in 0..3 {
                    prop_assert_eq!(out[j].to_bits(), fits[j].eval(Activation::Tanh, x).to_bits());
                }
            }
        }
    }
}
