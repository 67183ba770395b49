//! Sampled solution paths.

use serde::{Deserialize, Serialize};

use crate::linalg::distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    /// Row-major, one state per time node.
    states: Vec<f64>,
}

impl Trajectory {
    pub(crate) fn from_parts(dim: usize, times: Vec<f64>, states: Vec<f64>) -> Self {
        debug_assert_eq!(times.len() * dim, states.len());
        Trajectory { dim, times, states }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// State at `t`: the node value when `t` is within `1e-12·T` of a node,
    /// otherwise linear interpolation between the bracketing nodes.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let tol = 1e-12 * self.horizon().abs().max(f64::MIN_POSITIVE);
        let i = self.times.partition_point(|s| *s < t);
        if i < self.len() && (self.times[i] - t).abs() <= tol {
            return self.state(i).to_vec();
        }
        if i > 0 && (t - self.times[i - 1]).abs() <= tol {
            return self.state(i - 1).to_vec();
        }
        if i == 0 {
            return self.state(0).to_vec();
        }
        if i >= self.len() {
            return self.last().to_vec();
        }
        let (a, b) = (self.times[i - 1], self.times[i]);
        let w = (t - a) / (b - a);
        self.state(i - 1)
            .iter()
            .zip(self.state(i))
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect()
    }

    /// Largest `|x(t) - ξ|` over the nodes.
    pub fn max_displacement(&self) -> f64 {
        let x0 = self.initial();
        self.states().map(|s| distance(s, x0)).fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.states()
            .map(crate::linalg::norm)
            .fold(0.0, f64::max)
    }
}
