use std::sync::Arc;

use super::ControlledSystem;
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::{ArcIndex, DriverMap, Graph};
use crate::{Error, Result};

/// Kuramoto oscillators on a graph with additive control on driver nodes:
/// `dx_i/dt = omega_i + (B u)_i + K sum_j A_ij sin(x_j - x_i)`.
///
/// Phases are kept unwrapped.
#[derive(Debug, Clone)]
pub struct KuramotoSystem {
    graph: Graph,
    coupling: f64,
    omega: Vec<f64>,
    drivers: DriverMap,
    arcs: ArcIndex,
    driver_index: Arc<[usize]>,
}

impl KuramotoSystem {
    pub fn new(graph: Graph, coupling: f64, omega: Vec<f64>, drivers: DriverMap) -> Result<Self> {
        if omega.len() != graph.n() {
            return Err(Error::InvalidArgument(format!(
                "{} natural frequencies for {} nodes",
                omega.len(),
                graph.n()
            )));
        }
        if drivers.n() != graph.n() {
            return Err(Error::InvalidArgument("driver map built for another graph".into()));
        }
        let arcs = graph.arc_index();
        let driver_index = drivers.scatter_index();
        Ok(Self {
            graph,
            coupling,
            omega,
            drivers,
            arcs,
            driver_index,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn drivers(&self) -> &DriverMap {
        &self.drivers
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Plain evaluation of the phase velocities.
    pub fn rhs_values(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n || u.len() != self.drivers.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} phases and {} controls, got {} and {}",
                n,
                self.drivers.len(),
                x.len(),
                u.len()
            )));
        }
        let bu = self.drivers.apply(u);
        Ok((0..n)
            .map(|i| {
                let mut s = 0.0;
                for &j in self.graph.neighbors(i) {
                    s += (x[j] - x[i]).sin();
                }
                (self.omega[i] + bu[i]) + s * self.coupling
            })
            .collect())
    }
}

impl ControlledSystem for KuramotoSystem {
    fn state_shape(&self) -> Vec<usize> {
        vec![self.n()]
    }

    fn num_controls(&self) -> usize {
        self.drivers.len()
    }

    fn rhs(&self, tape: &Tape, x: &Var, u: &Var) -> Result<Var> {
        let n = self.n();
        let e = self.arcs.len();
        let own = tape.gather(x, &self.arcs.gather_owner, &[e])?;
        let other = tape.gather(x, &self.arcs.gather_other, &[e])?;
        let phase = tape.sin(&tape.sub(&other, &own)?);
        let coupling = tape.scale(&tape.scatter_add(&phase, &self.arcs.owner, n)?, self.coupling);
        let omega = tape.constant(Tensor::vector(self.omega.clone()));
        let bu = tape.scatter_add(u, &self.driver_index, n)?;
        Ok(tape.add(&tape.add(&omega, &bu)?, &coupling)?)
    }
}
