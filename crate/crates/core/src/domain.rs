//! Axis-aligned boxes with uniform sample grids.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain", into = "RawDomain")]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    samples_per_axis: usize,
}

#[derive(Serialize, Deserialize)]
struct RawDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    samples_per_axis: usize,
}

impl TryFrom<RawDomain> for Domain {
    type Error = Error;
    fn try_from(r: RawDomain) -> Result<Self> {
        Domain::new(r.lower, r.upper, r.samples_per_axis)
    }
}

impl From<Domain> for RawDomain {
    fn from(d: Domain) -> Self {
        RawDomain {
            lower: d.lower,
            upper: d.upper,
            samples_per_axis: d.samples_per_axis,
        }
    }
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, samples_per_axis: usize) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("domain", "dimension must be at least 1"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if samples_per_axis == 0 {
            return Err(Error::invalid("domain", "samples_per_axis must be positive"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::invalid(
                    "domain",
                    format!("axis {i}: need finite lower < upper, got [{l}, {u}]"),
                ));
            }
        }
        let total = (samples_per_axis as f64).powi(lower.len() as i32);
        if total > 1e8 {
            return Err(Error::invalid(
                "domain",
                format!("grid of {total:e} points is too large"),
            ));
        }
        Ok(Domain {
            lower,
            upper,
            samples_per_axis,
        })
    }

    /// The box `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64, samples_per_axis: usize) -> Result<Self> {
        Domain::new(vec![lo; n], vec![hi; n], samples_per_axis)
    }

    /// Bounding box of the closed ball of the given radius about the origin.
    pub fn ball_box(n: usize, radius: f64, samples_per_axis: usize) -> Result<Self> {
        let r = radius.max(f64::MIN_POSITIVE.sqrt());
        Domain::cube(n, -r, r, samples_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn samples_per_axis(&self) -> usize {
        self.samples_per_axis
    }

    pub fn len(&self) -> usize {
        self.samples_per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn coord(&self, axis: usize, k: usize) -> f64 {
        let (l, u) = (self.lower[axis], self.upper[axis]);
        if self.samples_per_axis == 1 {
            return 0.5 * (l + u);
        }
        if k + 1 == self.samples_per_axis {
            return u;
        }
        l + (u - l) * k as f64 / (self.samples_per_axis - 1) as f64
    }

    /// Grid point by flat index; the last axis varies fastest.
    pub fn point(&self, index: usize) -> Vec<f64> {
        let n = self.dim();
        let s = self.samples_per_axis;
        let mut out = vec![0.0; n];
        let mut rem = index;
        for axis in (0..n).rev() {
            out[axis] = self.coord(axis, rem % s);
            rem /= s;
        }
        out
    }

    /// All grid points in lexicographic order of their indices.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Same box with `(s − 1)·factor + 1` samples per axis, so every
    /// original node is kept.
    pub fn refined(&self, factor: usize) -> Domain {
        let s = if self.samples_per_axis == 1 {
            1
        } else {
            (self.samples_per_axis - 1) * factor.max(1) + 1
        };
        Domain {
            samples_per_axis: s,
            ..self.clone()
        }
    }

    pub fn with_samples(&self, samples_per_axis: usize) -> Result<Domain> {
        Domain::new(self.lower.clone(), self.upper.clone(), samples_per_axis)
    }

    /// Largest Euclidean norm of a point of the box.
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let m = l.abs().max(u.abs());
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute coordinate over the box.
    pub fn coordinate_radius(&self) -> f64 {
        self.lower
            .iter()
            .chain(&self.upper)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_boxes() {
        assert!(Domain::new(vec![], vec![], 3).is_err());
        assert!(Domain::new(vec![1.0], vec![1.0], 3).is_err());
        assert!(Domain::new(vec![0.0], vec![1.0], 0).is_err());
        assert!(Domain::new(vec![0.0, 0.0], vec![1.0], 2).is_err());
    }

    #[test]
    fn grid_order_and_endpoints() {
        let d = Domain::new(vec![0.0, -1.0], vec![1.0, 1.0], 3).unwrap();
        let p = d.points();
        assert_eq!(p.len(), 9);
        assert_eq!(p[0], vec![0.0, -1.0]);
        assert_eq!(p[1], vec![0.0, 0.0]);
        assert_eq!(p[3], vec![0.5, -1.0]);
        assert_eq!(p[8], vec![1.0, 1.0]);
    }

    #[test]
    fn single_sample_is_center() {
        let d = Domain::new(vec![0.0], vec![2.0], 1).unwrap();
        assert_eq!(d.points(), vec![vec![1.0]]);
        assert_eq!(d.refined(4).len(), 1);
    }

    #[test]
    fn refinement_keeps_nodes() {
        let d = Domain::cube(1, -1.0, 1.0, 5).unwrap();
        let r = d.refined(2);
        assert_eq!(r.samples_per_axis(), 9);
        for (i, p) in d.points().iter().enumerate() {
            assert_eq!(&r.point(2 * i), p);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn grid_has_s_pow_n_points_inside(n in 1usize..4, s in 1usize..6,
                                          lo in -5.0f64..0.0, w in 0.1f64..5.0) {
            let d = Domain::cube(n, lo, lo + w, s).unwrap();
            let pts = d.points();
            prop_assert_eq!(pts.len(), s.pow(n as u32));
            prop_assert!(pts.iter().all(|p| d.contains(p)));
        }
    }
}
