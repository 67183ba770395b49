//! Constructive approximation of Lipschitz flows by ODENets whose vector
//! field is a single neuron `α(t) ⊙ σ(β(t)x + γ(t))`, and by finite-depth
//! ResNets obtained from them by explicit Euler sampling.
//!
//! The crate is organised along the construction:
//!
//! * [`domain`], [`activation`], [`field`], [`controls`], [`trajectory`]:
//!   shared primitives (sample grids, activations, vector fields, neuron
//!   control trajectories, sampled solution paths).
//! * [`solver`]: Picard iteration, explicit Euler and a breakpoint-aligned
//!   RK4 reference integrator.
//! * [`bounds`]: closed-form Gronwall certificates paired with measured values.
//! * [`shallow`]: random-feature fitting of static fields by sums of neurons.
//! * [`pipeline`]: time slicing, time multiplexing, averaging experiments and
//!   assembly of the piecewise-constant controls.
//! * [`mollify`]: smoothing of piecewise-constant controls by a bump kernel.
//! * [`resnet`]: ResNet extraction and depth convergence.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod bounds;
pub mod controls;
pub mod domain;
mod error;
pub mod field;
pub mod linalg;
pub mod mollify;
pub mod pipeline;
pub mod quadrature;
pub mod resnet;
pub mod shallow;
pub mod solver;
pub mod trajectory;

pub use activation::Activation;
pub use controls::{NeuronControls, NeuronParams, Representation};
pub use domain::Domain;
pub use error::{Error, Result};
pub use field::{TimeRegularity, VectorField};
pub use solver::{Method, SolverConfig};
pub use trajectory::Trajectory;
