//! Control policies: two neural controllers (an MLP for Kuramoto, a message
//! passing GNN for SIR) and the baselines they are compared against.
//!
//! Every controller maps a state to an `M`-vector of driver inputs. Neural
//! controllers read their weights from the `params` slice passed to
//! [`Controller::forward`], so the same object can be evaluated with plain
//! constants or with tracked leaves during training.

mod baselines;
mod checkpoint;
mod gnn;
mod mlp;

pub use baselines::{FeedbackController, FreeController, RandomConstantController, TargetedConstantController};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gnn::GnnController;
pub use mlp::MlpController;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Time and interaction index at which a controller is queried.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlContext {
    pub t: f64,
    pub interaction: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    MlpNodec,
    GnnNodec,
    Feedback,
    TargetedConstant,
    RandomConstant,
    Free,
}

impl ControllerKind {
    /// Short label used in tables and comparison assertions.
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::MlpNodec | ControllerKind::GnnNodec => "NODEC",
            ControllerKind::Feedback => "FC",
            ControllerKind::TargetedConstant => "TCC",
            ControllerKind::RandomConstant => "RND",
            ControllerKind::Free => "F",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::MlpNodec => "mlp-nodec",
            ControllerKind::GnnNodec => "gnn-nodec",
            ControllerKind::Feedback => "feedback",
            ControllerKind::TargetedConstant => "targeted-constant",
            ControllerKind::RandomConstant => "random-constant",
            ControllerKind::Free => "free",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, ControllerKind::MlpNodec | ControllerKind::GnnNodec)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mlp-nodec" => ControllerKind::MlpNodec,
            "gnn-nodec" => ControllerKind::GnnNodec,
            "feedback" | "fc" => ControllerKind::Feedback,
            "targeted-constant" | "tcc" => ControllerKind::TargetedConstant,
            "random-constant" | "rnd" => ControllerKind::RandomConstant,
            "free" | "f" => ControllerKind::Free,
            _ => return Err(Error::InvalidArgument(format!("unknown controller '{s}'"))),
        })
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|k| &self.tensors[k])
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Tracked leaves on `tape`, one per tensor.
    pub fn leaves(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Untracked constants on `tape`.
    pub fn constants(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Replaces the values, keeping names. Shapes must match.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names
            || self.tensors.iter().zip(&other.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("parameter layout mismatch".into()));
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

pub trait Controller: Sync {
    fn kind(&self) -> ControllerKind;

    /// Number of outputs `M`.
    fn num_outputs(&self) -> usize;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Control at state `x`. `params` must line up with [`Controller::params`].
    fn forward(&self, tape: &Tape, params: &[Var], x: &Var, ctx: ControlContext) -> Result<Var>;

    /// Plain evaluation with the controller's own parameters.
    fn control(&self, x: &Tensor, ctx: ControlContext) -> Result<Vec<f64>> {
        let tape = Tape::inference();
        let p = self.params().constants(&tape);
        let u = self.forward(&tape, &p, &tape.constant(x.clone()), ctx)?;
        Ok(u.data().to_vec())
    }
}

/// Uniform initialization in `[-s, s]` with `s = 1 / sqrt(fan_in)`.
pub(crate) fn uniform_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-s..=s)).collect())
}

pub(crate) fn check_param_count(params: &[Var], expected: usize) -> Result<()> {
    if params.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "expected {expected} parameter tensors, got {}",
            params.len()
        )));
    }
    Ok(())
}
