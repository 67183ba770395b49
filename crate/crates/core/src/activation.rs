//! Scalar activations applied componentwise.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    /// `max(0, s)^k` for `s ≤ knee`, continued by its tangent line beyond
    /// the knee so that the activation stays globally Lipschitz.
    TruncatedPower { k: u32, knee: f64 },
}

impl Activation {
    pub fn truncated_power(k: u32, knee: f64) -> Result<Self> {
        let a = Activation::TruncatedPower { k, knee };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::TruncatedPower { k, knee } = *self {
            if k == 0 {
                return Err(Error::invalid("activation", "truncated power needs k >= 1"));
            }
            if !(knee.is_finite() && knee > 0.0) {
                return Err(Error::invalid("activation", "knee must be positive and finite"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        match *self {
            Activation::Tanh => s.tanh(),
            Activation::Sigmoid => {
                if s >= 0.0 {
                    1.0 / (1.0 + (-s).exp())
                } else {
                    let e = s.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Relu => s.max(0.0),
            Activation::Softplus => s.max(0.0) + (-s.abs()).exp().ln_1p(),
            Activation::TruncatedPower { k, knee } => {
                if s <= 0.0 {
                    0.0
                } else if s <= knee {
                    s.powi(k as i32)
                } else {
                    let kf = k as f64;
                    knee.powi(k as i32) + kf * knee.powi(k as i32 - 1) * (s - knee)
                }
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Activation::Tanh | Activation::Relu | Activation::Softplus => 1.0,
            Activation::Sigmoid => 0.25,
            Activation::TruncatedPower { k, knee } => k as f64 * knee.powi(k as i32 - 1),
        }
    }

    /// `max_{|s| ≤ r} |σ(s)|`. Every supported activation is monotone, so
    /// the maximum sits at an endpoint.
    pub fn sup_on(&self, r: f64) -> f64 {
        let r = r.abs();
        self.apply(-r).abs().max(self.apply(r).abs())
    }

    /// Bounded activations return their range bound.
    pub fn global_bound(&self) -> Option<f64> {
        match self {
            Activation::Tanh | Activation::Sigmoid => Some(1.0),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::TruncatedPower { .. } => "truncated_power",
        }
    }
}
