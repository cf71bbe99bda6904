//! Right-hand sides of the controlled graph dynamics.
//!
//! Each system has a plain numeric form for direct use and a tape form
//! implementing [`ControlledSystem`], which is what the solver calls in both
//! evaluation and training.

mod kuramoto;
mod sir;

pub use kuramoto::KuramotoSystem;
pub use sir::{quadrant_nodes, seed_infection, Quadrant, SirState, SirSystem};

use crate::autodiff::{Tape, Var};
use crate::Result;

/// `dx/dt = f(x, u)` with the state and control living on a tape.
pub trait ControlledSystem: Sync {
    /// Shape of the state tensor.
    fn state_shape(&self) -> Vec<usize>;
    /// Number of control inputs `M`.
    fn num_controls(&self) -> usize;
    fn rhs(&self, tape: &Tape, x: &Var, u: &Var) -> Result<Var>;
}
