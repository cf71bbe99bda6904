use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ControlContext, Controller, ControllerKind, ParamSet};
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::DriverMap;
use crate::{Error, Result};

/// Phase feedback `u_i = zeta * b_i * sin(x*_i - x_i)` on each driver with
/// per-driver gains `b_i` and target `x* = 0`.
#[derive(Debug, Clone)]
pub struct FeedbackController {
    index: Arc<[Option<usize>]>,
    gains: Tensor,
    zeta: f64,
    params: ParamSet,
}

impl FeedbackController {
    /// `drivers` must carry gains.
    pub fn new(drivers: &DriverMap, zeta: f64) -> Result<Self> {
        let gains = drivers
            .gains()
            .ok_or_else(|| Error::InvalidArgument("feedback control needs driver gains".into()))?;
        Ok(Self {
            index: drivers.gather_index(),
            gains: Tensor::vector(gains.to_vec()),
            zeta,
            params: ParamSet::new(),
        })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }
}

impl Controller for FeedbackController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Feedback
    }

    fn num_outputs(&self) -> usize {
        self.index.len()
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &Tape, _params: &[Var], x: &Var, _ctx: ControlContext) -> Result<Var> {
        let xd = tape.gather(x, &self.index, &[self.index.len()])?;
        let err = tape.sin(&tape.neg(&xd));
        let gains = tape.constant(self.gains.clone());
        Ok(tape.scale(&tape.mul(&err, &gains)?, self.zeta))
    }
}

/// Constant inputs: `budget / M_active` on active drivers and zero on the
/// rest. With every driver active this is the uniform `b / M` assignment.
#[derive(Debug, Clone)]
pub struct TargetedConstantController {
    values: Tensor,
    params: ParamSet,
}

impl TargetedConstantController {
    pub fn new(active: &[bool], budget: f64) -> Result<Self> {
        let count = active.iter().filter(|&&a| a).count();
        if count == 0 {
            return Err(Error::InvalidArgument("targeted control needs at least one active driver".into()));
        }
        let share = budget / count as f64;
        let values = active.iter().map(|&a| if a { share } else { 0.0 }).collect();
        Ok(Self {
            values: Tensor::vector(values),
            params: ParamSet::new(),
        })
    }

    /// All `m` drivers active.
    pub fn uniform(m: usize, budget: f64) -> Result<Self> {
        Self::new(&vec![true; m], budget)
    }

    /// Drivers that lie in `targets` are active.
    pub fn on_targets(drivers: &DriverMap, targets: &[usize], budget: f64) -> Result<Self> {
        let active: Vec<bool> = drivers.drivers().iter().map(|d| targets.contains(d)).collect();
        Self::new(&active, budget)
    }

    pub fn values(&self) -> &[f64] {
        self.values.data()
    }
}

impl Controller for TargetedConstantController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::TargetedConstant
    }

    fn num_outputs(&self) -> usize {
        self.values.len()
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &Tape, _params: &[Var], _x: &Var, _ctx: ControlContext) -> Result<Var> {
        Ok(tape.constant(self.values.clone()))
    }
}

/// Random budget split `u_m = b c_m / sum c`, `c_m ~ U(0, 1)`. The split is
/// drawn once from `seed`, or redrawn at every interaction when `per_step`
/// is set (stream selected by the interaction index).
#[derive(Debug, Clone)]
pub struct RandomConstantController {
    m: usize,
    budget: f64,
    seed: u64,
    per_step: bool,
    fixed: Tensor,
    params: ParamSet,
}

impl RandomConstantController {
    pub fn new(m: usize, budget: f64, seed: u64, per_step: bool) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("random control needs at least one driver".into()));
        }
        let fixed = Self::draw(m, budget, ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            m,
            budget,
            seed,
            per_step,
            fixed,
            params: ParamSet::new(),
        })
    }

    fn draw(m: usize, budget: f64, mut rng: ChaCha8Rng) -> Tensor {
        let c: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = c.iter().sum();
        Tensor::vector(c.into_iter().map(|v| budget * v / total).collect())
    }

    pub fn per_step(&self) -> bool {
        self.per_step
    }
}

impl Controller for RandomConstantController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::RandomConstant
    }

    fn num_outputs(&self) -> usize {
        self.m
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &Tape, _params: &[Var], _x: &Var, ctx: ControlContext) -> Result<Var> {
        if !self.per_step {
            return Ok(tape.constant(self.fixed.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(ctx.interaction as u64 + 1);
        Ok(tape.constant(Self::draw(self.m, self.budget, rng)))
    }
}

/// No control.
#[derive(Debug, Clone)]
pub struct FreeController {
    m: usize,
    params: ParamSet,
}

impl FreeController {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            params: ParamSet::new(),
        }
    }
}

impl Controller for FreeController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Free
    }

    fn num_outputs(&self) -> usize {
        self.m
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &Tape, _params: &[Var], _x: &Var, _ctx: ControlContext) -> Result<Var> {
        Ok(tape.constant(Tensor::zeros(&[self.m])))
    }
}
