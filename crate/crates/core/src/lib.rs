//! Neural ODE control of networked dynamics.
//!
//! A controller network is trained by back-propagating a control objective
//! through an unrolled ODE solve. The crate contains the pieces needed for
//! that loop and for comparing the result with analytic baselines:
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation over dense tensors.
//! - [`graph`]: graphs, Laplacian tools and driver-node selection.
//! - [`odesolve`]: Euler, RK4 and Dormand–Prince solves with held controls.
//! - [`dynamics`]: Kuramoto oscillators and a networked SIR model.
//! - [`controllers`]: MLP and GNN controllers plus baselines.
//! - [`metrics`]: energy, synchrony, epidemic objectives and rewards.
//! - [`training`]: optimizers and the basic, curriculum and adaptive loops.
//! - [`expcli`]: configuration, experiment pipelines and the CLI.

pub mod autodiff;
pub mod controllers;
pub mod dynamics;
mod error;
pub mod expcli;
pub mod graph;
pub mod metrics;
pub mod odesolve;
pub mod training;

pub use error::{Error, Result};
