//! Evaluation quantities: control energy, the Kuramoto order parameter,
//! the training losses built from them, epidemic peaks and the offline
//! reward series.
//!
//! Losses take a [`Trajectory`] and return tape values, so they can be
//! back-propagated when the solve was recorded. The remaining functions work
//! on plain numbers.

mod table;

pub use table::{metrics_fields, read_metrics_csv, write_metrics_csv, MetricsRow, HEADER as METRICS_HEADER};

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::odesolve::Trajectory;
use crate::{Error, Result};

/// Running `sum ||u||^2 dt`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyAccumulator {
    pub total: f64,
    pub steps: usize,
}

impl EnergyAccumulator {
    pub fn add(&mut self, u: &[f64], dt: f64) {
        self.total += u.iter().map(|v| v * v).sum::<f64>() * dt;
        self.steps += 1;
    }
}

/// Energy of the held controls, `sum_k ||u_k||^2 dt`. Interaction intervals
/// must all have the same length.
pub fn energy(traj: &Trajectory) -> Result<f64> {
    let lengths = traj.interval_lengths();
    let dt = *lengths
        .first()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no controls".into()))?;
    if lengths.iter().any(|l| (l - dt).abs() > 1e-9 * dt.abs().max(1e-12)) {
        return Err(Error::InvalidArgument("energy needs uniformly spaced controls".into()));
    }
    let mut acc = EnergyAccumulator::default();
    for u in &traj.controls {
        acc.add(u.data(), dt);
    }
    Ok(acc.total)
}

/// `r = |mean_j exp(i x_j)|`.
pub fn order_parameter(x: &[f64]) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for &v in x {
        c += v.cos();
        s += v.sin();
    }
    (c * c + s * s).sqrt() / x.len() as f64
}

/// Tape version of [`order_parameter`].
pub fn order_parameter_var(tape: &Tape, x: &Var) -> Result<Var> {
    let n = x.value().len();
    let c = tape.sum(&tape.cos(x))?;
    let s = tape.sum(&tape.sin(x))?;
    let sq = tape.add(&tape.square(&c), &tape.square(&s))?;
    Ok(tape.scale(&tape.sqrt(&sq), 1.0 / n as f64))
}

/// Order parameter at every stored state after the initial one, stacked
/// into a vector.
pub fn order_parameter_series(tape: &Tape, traj: &Trajectory) -> Result<Var> {
    if traj.states.len() < 2 {
        return Err(Error::InvalidArgument("no samples after the initial time".into()));
    }
    let rs = traj.states[1..]
        .iter()
        .map(|x| order_parameter_var(tape, x).and_then(|r| Ok(tape.reshape(&r, &[1])?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.concat(&rs)?)
}

/// `J = -(mean r + min r)` over the samples after the initial time.
pub fn kuramoto_loss(tape: &Tape, traj: &Trajectory) -> Result<Var> {
    let r = order_parameter_series(tape, traj)?;
    let total = tape.add(&tape.mean(&r)?, &tape.min(&r)?)?;
    Ok(tape.neg(&total))
}

/// Synchrony summary of a phase trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncSummary {
    /// `r` at the final time.
    pub r_final: f64,
    /// Mean `r` over the samples after the initial time.
    pub r_mean: f64,
    pub r_min: f64,
}

pub fn sync_summary(traj: &Trajectory) -> Result<SyncSummary> {
    if traj.states.len() < 2 {
        return Err(Error::InvalidArgument("no samples after the initial time".into()));
    }
    let r: Vec<f64> = traj.states[1..].iter().map(|x| order_parameter(x.data())).collect();
    Ok(SyncSummary {
        r_final: *r.last().expect("non-empty"),
        r_mean: r.iter().sum::<f64>() / r.len() as f64,
        r_min: r.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn infected_index(n: usize, targets: &[usize]) -> Result<Arc<[Option<usize>]>> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target set".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::InvalidArgument(format!("target node {t} out of range")));
    }
    Ok(targets.iter().map(|&i| Some(n + i)).collect())
}

fn node_count(traj: &Trajectory) -> Result<usize> {
    match traj.states[0].shape() {
        [4, n] => Ok(*n),
        s => Err(Error::InvalidState(format!("expected a 4 x N compartment state, got {s:?}"))),
    }
}

/// Mean infected fraction over `targets` at every stored state.
pub fn mean_infected(traj: &Trajectory, targets: &[usize]) -> Result<Vec<f64>> {
    let n = node_count(traj)?;
    infected_index(n, targets)?;
    Ok(traj
        .states
        .iter()
        .map(|x| {
            let i = &x.data()[n..2 * n];
            targets.iter().map(|&t| i[t]).sum::<f64>() / targets.len() as f64
        })
        .collect())
}

/// `J = (max_t mean_{G*} I(t))^2` over the stored samples, together with the
/// time of the (first) maximum.
pub fn epidemic_loss(tape: &Tape, traj: &Trajectory, targets: &[usize]) -> Result<(Var, f64)> {
    let n = node_count(traj)?;
    let index = infected_index(n, targets)?;
    let max_gap = traj.interval_lengths().into_iter().fold(0.0, f64::max);
    if traj.times.windows(2).any(|w| w[1] - w[0] > max_gap * (1.0 + 1e-9)) {
        return Err(Error::InvalidArgument(
            "sample stride is coarser than the interaction interval".into(),
        ));
    }
    let k = targets.len();
    let series = traj
        .states
        .iter()
        .map(|x| {
            let i = tape.gather(x, &index, &[k])?;
            Ok(tape.reshape(&tape.mean(&i)?, &[1])?)
        })
        .collect::<Result<Vec<_>>>()?;
    let series = tape.concat(&series)?;
    let peak = tape.max(&series)?;
    let arg = series
        .data()
        .iter()
        .position(|&v| v == peak.item())
        .expect("max is attained");
    Ok((tape.square(&peak), traj.times[arg]))
}

/// Per-step reward series of a mean-infection trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Rewards {
    /// `-I(t)^2 dt`.
    pub rho1: Vec<f64>,
    /// Zero except at the last step, where it is `-(max I)^2`.
    pub rho2: Vec<f64>,
    /// Penalises only increases of the running maximum.
    pub rho3: Vec<f64>,
}

pub fn rewards(ibar: &[f64], dt: f64) -> Rewards {
    let rho1 = ibar.iter().map(|v| -v * v * dt).collect();
    let mut rho2 = vec![0.0; ibar.len()];
    if let Some(last) = rho2.last_mut() {
        let peak = ibar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        *last = -peak * peak;
    }
    let mut rho3 = Vec::with_capacity(ibar.len());
    let mut running = ibar.first().copied().unwrap_or(0.0);
    for &v in ibar {
        if v <= running {
            rho3.push(0.0);
        } else {
            rho3.push(running * running - v * v);
            running = v;
        }
    }
    Rewards { rho1, rho2, rho3 }
}
