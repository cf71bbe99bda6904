//! Integration of controlled dynamics with a zero-order hold on the control.
//!
//! The controller is queried at `t0` and then every `interaction` time units;
//! its output is held while the state is advanced with fixed substeps of size
//! `step` (Euler or RK4) or adaptively (Dormand–Prince, evaluation only).
//! Fixed-step solves record every operation on the supplied tape when it is
//! recording, so a loss built from the returned [`Trajectory`] can be
//! differentiated with respect to the controller parameters.

mod dopri5;

pub use dopri5::{Dopri5, StepResult};

use std::io::Write;
use std::str::FromStr;

use crate::autodiff::{Tape, Tensor, Var};
use crate::controllers::{ControlContext, Controller};
use crate::dynamics::ControlledSystem;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Euler,
    Rk4,
    Dopri5 { rtol: f64, atol: f64 },
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            "dopri5" => Ok(Method::Dopri5 {
                rtol: 1e-6,
                atol: 1e-8,
            }),
            _ => Err(Error::InvalidArgument(format!("unknown solver method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub method: Method,
    /// Fixed substep size. For Dopri5 this is only the initial step guess.
    pub step: f64,
    /// Time between controller evaluations.
    pub interaction: f64,
    /// Keep every `stride`-th substep (fixed-step) or interaction (Dopri5).
    /// The initial and final states are always kept.
    pub stride: usize,
}

impl SolveConfig {
    pub fn new(method: Method, step: f64, interaction: f64) -> Self {
        Self {
            method,
            step,
            interaction,
            stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Substeps per interaction interval.
    pub fn substeps(&self) -> Result<usize> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step {} must be positive", self.step)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if matches!(self.method, Method::Dopri5 { .. }) {
            return Ok(1);
        }
        let ratio = self.interaction / self.step;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "interaction interval {} is not a positive integer multiple of step {}",
                self.interaction, self.step
            )));
        }
        Ok(k as usize)
    }
}

/// Stored solution of a controlled solve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Times of the stored states, strictly increasing.
    pub times: Vec<f64>,
    pub states: Vec<Var>,
    /// Start time of each interaction interval.
    pub control_times: Vec<f64>,
    /// Control held over each interaction interval.
    pub controls: Vec<Var>,
    /// Index into `controls` of the control in effect when reaching each
    /// stored state (the first interval's control for the initial state).
    pub state_control: Vec<usize>,
    /// End of the solve.
    pub t_end: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &Var {
        self.states.last().expect("trajectory always stores the initial state")
    }

    /// Lengths of the interaction intervals.
    pub fn interval_lengths(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.control_times.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(&last) = self.control_times.last() {
            out.push(self.t_end - last);
        }
        out
    }

    /// Writes `t, x_0.., u_0..` rows with round-trip float formatting.
    pub fn write_csv(&self, out: impl Write, state_labels: &[String]) -> Result<()> {
        let m = self.controls.first().map_or(0, |u| u.value().len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(state_labels.iter().cloned());
        header.extend((0..m).map(|k| format!("u_{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for (s, (&t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let u = &self.controls[self.state_control[s]];
            let row = std::iter::once(t)
                .chain(x.data().iter().copied())
                .chain(u.data().iter().copied())
                .map(|v| v.to_string());
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Labels `x_i` for a flat state of length `n`.
pub fn phase_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x_{i}")).collect()
}

/// Labels `S_i, .., I_i, .., R_i, .., Y_i, ..` for a `4 x n` state.
pub fn compartment_labels(n: usize) -> Vec<String> {
    ["S", "I", "R", "Y"]
        .iter()
        .flat_map(|c| (0..n).map(move |i| format!("{c}_{i}")))
        .collect()
}

fn check_finite(x: &Var, t_last: f64) -> Result<()> {
    if x.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NumericalInstability { t: t_last })
    }
}

/// Integrates `system` from `x0` over `[t0, t1]` under `controller`.
///
/// `params` are the controller parameters as they should appear on `tape`
/// (tracked leaves for training, constants for evaluation).
#[allow(clippy::too_many_arguments)]
pub fn ode_solve(
    tape: &Tape,
    system: &dyn ControlledSystem,
    controller: &dyn Controller,
    params: &[Var],
    x0: &Var,
    t0: f64,
    t1: f64,
    cfg: &SolveConfig,
) -> Result<Trajectory> {
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("end time {t1} must exceed start time {t0}")));
    }
    if x0.shape() != system.state_shape().as_slice() {
        return Err(Error::InvalidState(format!(
            "initial state shape {:?} does not match system shape {:?}",
            x0.shape(),
            system.state_shape()
        )));
    }
    check_finite(x0, t0)?;
    let substeps = cfg.substeps()?;
    if let Method::Dopri5 { .. } = cfg.method {
        if tape.is_recording() && params.iter().any(Var::is_tracked) {
            return Err(Error::InvalidArgument("dopri5 is evaluation-only".into()));
        }
    }

    let span = t1 - t0;
    let intervals = ((span / cfg.interaction) - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![x0.clone()],
        control_times: Vec::with_capacity(intervals),
        controls: Vec::with_capacity(intervals),
        state_control: vec![0],
        t_end: t1,
    };
    let mut x = x0.clone();
    let mut t_last = t0;
    let mut counter = 0usize;
    let mut h_adapt = cfg.step.min(cfg.interaction);

    for k in 0..intervals {
        let ta = t0 + k as f64 * cfg.interaction;
        let tb = if k + 1 == intervals {
            t1
        } else {
            t0 + (k + 1) as f64 * cfg.interaction
        };
        let ctx = ControlContext { t: ta, interaction: k };
        let u = controller.forward(tape, params, &x, ctx)?;
        if u.value().len() != system.num_controls() {
            return Err(Error::InvalidArgument(format!(
                "controller produced {} inputs, system expects {}",
                u.value().len(),
                system.num_controls()
            )));
        }
        traj.control_times.push(ta);
        traj.controls.push(u.clone());

        match cfg.method {
            Method::Euler | Method::Rk4 => {
                let n_sub = if k + 1 == intervals {
                    (((tb - ta) / cfg.step) - 1e-9).ceil().max(1.0) as usize
                } else {
                    substeps
                };
                let h = (tb - ta) / n_sub as f64;
                for s in 0..n_sub {
                    x = match cfg.method {
                        Method::Euler => euler_step(tape, system, &x, &u, h)?,
                        _ => rk4_step(tape, system, &x, &u, h)?,
                    };
                    check_finite(&x, t_last)?;
                    let t = if s + 1 == n_sub { tb } else { ta + (s + 1) as f64 * h };
                    t_last = t;
                    counter += 1;
                    if counter % cfg.stride == 0 || (k + 1 == intervals && s + 1 == n_sub) {
                        traj.times.push(t);
                        traj.states.push(x.clone());
                        traj.state_control.push(k);
                    }
                }
            }
            Method::Dopri5 { rtol, atol } => {
                let mut solver = Dopri5::new(rtol, atol);
                let u_data = u.data().to_vec();
                let shape = x.shape().to_vec();
                let inner = Tape::inference();
                let uc = inner.constant(Tensor::vector(u_data));
                let mut f = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
                    let yv = inner.constant(Tensor::new(&shape, y.to_vec()));
                    Ok(system.rhs(&inner, &yv, &uc)?.data().to_vec())
                };
                let y = solver
                    .integrate(&mut f, ta, tb, x.data(), &mut h_adapt)
                    .map_err(|e| match e {
                        Error::NumericalInstability { t } => Error::NumericalInstability { t: t.max(t_last) },
                        e => e,
                    })?;
                x = tape.constant(Tensor::new(&shape, y));
                check_finite(&x, t_last)?;
                t_last = tb;
                counter += 1;
                if counter % cfg.stride == 0 || k + 1 == intervals {
                    traj.times.push(tb);
                    traj.states.push(x.clone());
                    traj.state_control.push(k);
                }
            }
        }
    }
    Ok(traj)
}

fn euler_step(tape: &Tape, system: &dyn ControlledSystem, x: &Var, u: &Var, h: f64) -> Result<Var> {
    let k1 = system.rhs(tape, x, u)?;
    Ok(tape.add(x, &tape.scale(&k1, h))?)
}

fn rk4_step(tape: &Tape, system: &dyn ControlledSystem, x: &Var, u: &Var, h: f64) -> Result<Var> {
    let k1 = system.rhs(tape, x, u)?;
    let k2 = system.rhs(tape, &tape.add(x, &tape.scale(&k1, 0.5 * h))?, u)?;
    let k3 = system.rhs(tape, &tape.add(x, &tape.scale(&k2, 0.5 * h))?, u)?;
    let k4 = system.rhs(tape, &tape.add(x, &tape.scale(&k3, h))?, u)?;
    let mid = tape.add(&tape.scale(&k2, 2.0), &tape.scale(&k3, 2.0))?;
    let sum = tape.add(&tape.add(&k1, &mid)?, &k4)?;
    Ok(tape.add(x, &tape.scale(&sum, h / 6.0))?)
}

/// Plain solve with the controller's own parameters on an inference tape.
pub fn solve_plain(
    system: &dyn ControlledSystem,
    controller: &dyn Controller,
    x0: &Tensor,
    t0: f64,
    t1: f64,
    cfg: &SolveConfig,
) -> Result<Trajectory> {
    let tape = Tape::inference();
    let params = controller.params().constants(&tape);
    let x0 = tape.constant(x0.clone());
    ode_solve(&tape, system, controller, &params, &x0, t0, t1, cfg)
}
