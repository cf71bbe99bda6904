//! Training loops for neural controllers.
//!
//! All loops share one primitive: solve every batch member on its own tape
//! (in parallel), back-propagate its loss, and average losses and gradients
//! in batch order. A [`Error::NumericalInstability`] in any member marks the
//! whole epoch unstable and no update is made.

mod optim;

pub use optim::{Adam, Optimizer, OptimizerKind};

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor, Var};
use crate::controllers::{Checkpoint, Controller, ParamSet};
use crate::dynamics::ControlledSystem;
use crate::metrics::order_parameter_series;
use crate::odesolve::{csv_err, ode_solve, SolveConfig, Trajectory};
use crate::{Error, Result};

/// Loss of one solved trajectory.
pub type LossFn<'a> = dyn Fn(&Tape, &Trajectory) -> Result<Var> + Sync + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Window length of the curriculum loss.
    pub curriculum_step: f64,
    /// Cap on the curriculum horizon.
    pub max_horizon: f64,
    /// Learning-rate shrink factor after a rejected epoch (adaptive).
    pub shrink: f64,
    /// A loss above `tol_ratio * previous` is rejected (adaptive).
    pub tol_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            curriculum_step: 1.0,
            max_horizon: 40.0,
            shrink: 0.5,
            tol_ratio: 1.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be non-negative", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.curriculum_step > 0.0) {
            return Err(Error::InvalidArgument("curriculum step must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument("shrink factor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.beta1, self.beta2, self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-mean loss; the previous value (or NaN) when the epoch was unstable.
    pub loss: f64,
    pub lr: f64,
    /// Training horizon used in the epoch.
    pub horizon: f64,
    pub unstable: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Lowest-loss parameters seen (the parameters that produced the loss,
    /// before the update of that epoch).
    pub best: Checkpoint,
    /// Parameters after the last update.
    pub final_params: ParamSet,
}

pub fn write_loss_csv(history: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "lr", "horizon", "unstable"])
        .map_err(csv_err)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.lr.to_string(),
            r.horizon.to_string(),
            (r.unstable as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

enum EpochOutcome {
    Ok { loss: f64, grads: Vec<Tensor> },
    Unstable,
}

/// Runs `member` on every batch element and averages in batch order.
fn batch_gradient<F>(n: usize, member: F) -> Result<EpochOutcome>
where
    F: Fn(usize) -> Result<(f64, Vec<Tensor>)> + Sync,
{
    let results: Vec<Result<(f64, Vec<Tensor>)>> = (0..n).into_par_iter().map(&member).collect();
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    let mut unstable = false;
    for r in results {
        match r {
            Ok((l, g)) => {
                loss += l;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            Err(Error::NumericalInstability { .. }) => unstable = true,
            Err(e) => return Err(e),
        }
    }
    if unstable || !loss.is_finite() {
        return Ok(EpochOutcome::Unstable);
    }
    let scale = 1.0 / n as f64;
    let mut grads = grads.expect("batch is non-empty");
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Ok(EpochOutcome::Unstable);
    }
    Ok(EpochOutcome::Ok { loss: loss * scale, grads })
}

fn solve_member(
    system: &dyn ControlledSystem,
    controller: &dyn Controller,
    params: &ParamSet,
    x0: &Tensor,
    horizon: f64,
    solve: &SolveConfig,
    loss: &LossFn,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let p = params.leaves(&tape);
    let x = tape.constant(x0.clone());
    let traj = ode_solve(&tape, system, controller, &p, &x, 0.0, horizon, solve)?;
    let j = loss(&tape, &traj)?;
    let g = tape.backward(&j)?;
    Ok((j.item(), p.iter().map(|v| g.wrt(v)).collect()))
}

fn checkpoint(params: &ParamSet, loss: f64, epoch: usize) -> Checkpoint {
    Checkpoint {
        params: params.clone(),
        best_loss: loss,
        epoch,
    }
}

/// Plain gradient training: every epoch solves from each of `x0s` over
/// `[0, horizon]`, averages the loss and takes one optimizer step.
pub fn train_basic(
    controller: &mut dyn Controller,
    system: &dyn ControlledSystem,
    x0s: &[Tensor],
    horizon: f64,
    solve: &SolveConfig,
    loss: &LossFn,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if x0s.is_empty() {
        return Err(Error::InvalidArgument("no initial states".into()));
    }
    let mut opt = cfg.optimizer();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = checkpoint(controller.params(), f64::INFINITY, 0);
    let mut prev = f64::NAN;
    for epoch in 0..cfg.epochs {
        let params = controller.params().clone();
        let outcome = {
            let ctl: &dyn Controller = controller;
            batch_gradient(x0s.len(), |b| solve_member(system, ctl, &params, &x0s[b], horizon, solve, loss))?
        };
        match outcome {
            EpochOutcome::Ok { loss, grads } => {
                if loss < best.best_loss {
                    best = checkpoint(&params, loss, epoch);
                }
                opt.step(controller.params_mut().tensors_mut(), &grads, cfg.lr);
                history.push(EpochRecord { epoch, loss, lr: cfg.lr, horizon, unstable: false });
                prev = loss;
            }
            EpochOutcome::Unstable => {
                history.push(EpochRecord { epoch, loss: prev, lr: cfg.lr, horizon, unstable: true });
            }
        }
    }
    Ok(TrainReport {
        history,
        best,
        final_params: controller.params().clone(),
    })
}

/// Adaptive learning rate with best-parameter restore. An epoch whose loss
/// exceeds `tol_ratio` times the previous accepted loss, or that is unstable,
/// restores the best parameters, shrinks the learning rate and resets the
/// optimizer. Training stops early once the learning rate drops below
/// `1e-12`. The controller ends up holding the best parameters.
///
/// The spike test assumes positive losses.
pub fn train_adaptive(
    controller: &mut dyn Controller,
    system: &dyn ControlledSystem,
    x0s: &[Tensor],
    horizon: f64,
    solve: &SolveConfig,
    loss: &LossFn,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if x0s.is_empty() {
        return Err(Error::InvalidArgument("no initial states".into()));
    }
    let mut opt = cfg.optimizer();
    let mut lr = cfg.lr;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = checkpoint(controller.params(), f64::INFINITY, 0);
    let mut prev: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        let params = controller.params().clone();
        let outcome = {
            let ctl: &dyn Controller = controller;
            batch_gradient(x0s.len(), |b| solve_member(system, ctl, &params, &x0s[b], horizon, solve, loss))?
        };
        let accepted = match &outcome {
            EpochOutcome::Ok { loss, .. } => prev.map_or(true, |p| *loss <= cfg.tol_ratio * p),
            EpochOutcome::Unstable => false,
        };
        let (value, unstable) = match &outcome {
            EpochOutcome::Ok { loss, .. } => (*loss, false),
            EpochOutcome::Unstable => (prev.unwrap_or(f64::NAN), true),
        };
        history.push(EpochRecord { epoch, loss: value, lr, horizon, unstable });
        if let (true, EpochOutcome::Ok { loss, grads }) = (accepted, outcome) {
            if loss < best.best_loss {
                best = checkpoint(&params, loss, epoch);
            }
            prev = Some(loss);
            opt.step(controller.params_mut().tensors_mut(), &grads, lr);
        } else {
            if best.best_loss.is_finite() {
                controller.params_mut().assign(&best.params)?;
            }
            lr *= cfg.shrink;
            opt.reset();
            if lr < 1e-12 {
                break;
            }
        }
    }
    let final_params = controller.params().clone();
    if best.best_loss.is_finite() {
        controller.params_mut().assign(&best.params)?;
    }
    Ok(TrainReport {
        history,
        best,
        final_params,
    })
}

/// Curriculum horizons: `T_e = min(T_{e-1} + 2c_e, cap)` with `c_e ~ U(0, 1)`
/// and `T_0 = 0`, drawn from a stream derived from `seed`.
pub fn curriculum_horizons(epochs: usize, seed: u64, cap: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut t = 0.0;
    (0..epochs)
        .map(|_| {
            t = (t + 2.0 * rng.gen::<f64>()).min(cap);
            t
        })
        .collect()
}

/// Loss of one curriculum member: the solve is cut into windows of length
/// `step`; each window adds `(window / T) * (-mean r)` and the minimum `r`
/// over all windows adds `-min r`.
fn curriculum_member(
    system: &dyn ControlledSystem,
    controller: &dyn Controller,
    params: &ParamSet,
    x0: &Tensor,
    horizon: f64,
    step: f64,
    solve: &SolveConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let p = params.leaves(&tape);
    let mut x = tape.constant(x0.clone());
    let mut t = 0.0;
    let mut weighted: Option<Var> = None;
    let mut mins = Vec::new();
    while horizon - t > 1e-12 {
        let t1 = (t + step).min(horizon);
        let traj = ode_solve(&tape, system, controller, &p, &x, t, t1, solve)?;
        let r = order_parameter_series(&tape, &traj)?;
        let jw = tape.scale(&tape.mean(&r)?, -(t1 - t) / horizon);
        weighted = Some(match weighted {
            None => jw,
            Some(acc) => tape.add(&acc, &jw)?,
        });
        mins.push(tape.reshape(&tape.min(&r)?, &[1])?);
        x = traj.final_state().clone();
        t = t1;
    }
    let weighted = weighted.ok_or_else(|| Error::InvalidArgument("empty curriculum horizon".into()))?;
    let min_r = tape.min(&tape.concat(&mins)?)?;
    let j = tape.sub(&weighted, &min_r)?;
    let g = tape.backward(&j)?;
    Ok((j.item(), p.iter().map(|v| g.wrt(v)).collect()))
}

/// Curriculum training for phase synchronisation. Each epoch lengthens the
/// horizon (see [`curriculum_horizons`]), draws a batch of initial phases
/// from `N(0, 1)` and takes one optimizer step on the batch-mean loss.
/// Unstable epochs are recorded and skipped.
pub fn train_curriculum(
    controller: &mut dyn Controller,
    system: &dyn ControlledSystem,
    solve: &SolveConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let shape = system.state_shape();
    let n: usize = shape.iter().product();
    let horizons = curriculum_horizons(cfg.epochs, cfg.seed, cfg.max_horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut opt = cfg.optimizer();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = checkpoint(controller.params(), f64::INFINITY, 0);
    let mut prev = f64::NAN;
    for (epoch, &horizon) in horizons.iter().enumerate() {
        let batch: Vec<Tensor> = (0..cfg.batch_size)
            .map(|_| Tensor::new(&shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()))
            .collect();
        let params = controller.params().clone();
        let outcome = {
            let ctl: &dyn Controller = controller;
            batch_gradient(batch.len(), |b| {
                curriculum_member(system, ctl, &params, &batch[b], horizon, cfg.curriculum_step, solve)
            })?
        };
        match outcome {
            EpochOutcome::Ok { loss, grads } => {
                if loss < best.best_loss {
                    best = checkpoint(&params, loss, epoch);
                }
                opt.step(controller.params_mut().tensors_mut(), &grads, cfg.lr);
                history.push(EpochRecord { epoch, loss, lr: cfg.lr, horizon, unstable: false });
                prev = loss;
            }
            EpochOutcome::Unstable => {
                history.push(EpochRecord { epoch, loss: prev, lr: cfg.lr, horizon, unstable: true });
            }
        }
    }
    Ok(TrainReport {
        history,
        best,
        final_params: controller.params().clone(),
    })
}
