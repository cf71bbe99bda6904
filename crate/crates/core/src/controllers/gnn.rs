use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_param_count, uniform_init, ControlContext, Controller, ControllerKind, ParamSet};
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::{DriverMap, Graph};
use crate::{Error, Result};

const CHANNELS: usize = 4;

/// Message-passing controller for compartmental dynamics.
///
/// Each round gathers the hidden states of every node's neighbours into a
/// zero-padded `N x d_max` slot array, applies a learned `4 -> 4` channel
/// map with bias and ELU to each occupied slot, and averages over the real
/// neighbours. After the last round the channels are averaged per node, the
/// driver entries are passed through a softmax, and the result is scaled by
/// the budget, so the output always sums to `budget`.
#[derive(Debug, Clone)]
pub struct GnnController {
    n: usize,
    d_max: usize,
    rounds: usize,
    budget: f64,
    drivers: Arc<[Option<usize>]>,
    transpose: Arc<[Option<usize>]>,
    slots: Arc<[Option<usize>]>,
    mask: Tensor,
    inv_degree: Tensor,
    params: ParamSet,
}

impl GnnController {
    pub fn new(g: &Graph, drivers: &DriverMap, budget: f64, rounds: usize, seed: u64) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::InvalidArgument("at least one message-passing round is needed".into()));
        }
        if drivers.is_empty() {
            return Err(Error::InvalidArgument("no driver nodes".into()));
        }
        if budget <= 0.0 {
            return Err(Error::InvalidArgument("budget must be positive".into()));
        }
        let n = g.n();
        let d_max = g.max_degree();
        if d_max == 0 {
            return Err(Error::InvalidArgument("graph has no edges".into()));
        }
        let transpose = (0..n * CHANNELS)
            .map(|p| Some((p % CHANNELS) * n + p / CHANNELS))
            .collect();
        let mut slots = Vec::with_capacity(n * d_max * CHANNELS);
        let mut mask = Vec::with_capacity(n * d_max * CHANNELS);
        for i in 0..n {
            let nb = g.neighbors(i);
            for s in 0..d_max {
                for k in 0..CHANNELS {
                    slots.push(nb.get(s).map(|&j| j * CHANNELS + k));
                    mask.push(if s < nb.len() { 1.0 } else { 0.0 });
                }
            }
        }
        let inv_degree = (0..n * CHANNELS)
            .map(|p| {
                let d = g.degree(p / CHANNELS);
                if d == 0 {
                    0.0
                } else {
                    1.0 / d as f64
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for r in 0..rounds {
            params.push(format!("round{r}.weight"), uniform_init(&mut rng, &[CHANNELS, CHANNELS], CHANNELS));
            params.push(format!("round{r}.bias"), uniform_init(&mut rng, &[CHANNELS], CHANNELS));
        }
        Ok(Self {
            n,
            d_max,
            rounds,
            budget,
            drivers: drivers.gather_index(),
            transpose,
            slots: slots.into(),
            mask: Tensor::new(&[n * d_max, CHANNELS], mask),
            inv_degree: Tensor::new(&[n, CHANNELS], inv_degree),
            params,
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn max_degree(&self) -> usize {
        self.d_max
    }

    /// Neighbourhood embedding of a flat `4 x N` state as a `4 x N x d_max`
    /// tensor: entry `(k, i, j)` is channel `k` of the `j`-th neighbour of
    /// node `i` (neighbours sorted by index, zero padded).
    pub fn neighborhood_embedding(&self, x: &[f64]) -> Result<Tensor> {
        if x.len() != CHANNELS * self.n {
            return Err(Error::InvalidState(format!(
                "expected {} values, got {}",
                CHANNELS * self.n,
                x.len()
            )));
        }
        let (n, d) = (self.n, self.d_max);
        let mut out = vec![0.0; CHANNELS * n * d];
        for i in 0..n {
            for s in 0..d {
                for k in 0..CHANNELS {
                    if let Some(p) = self.slots[(i * d + s) * CHANNELS + k] {
                        let j = p / CHANNELS;
                        out[(k * n + i) * d + s] = x[k * n + j];
                    }
                }
            }
        }
        Ok(Tensor::new(&[CHANNELS, n, d], out))
    }
}

impl Controller for GnnController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::GnnNodec
    }

    fn num_outputs(&self) -> usize {
        self.drivers.len()
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &Tape, params: &[Var], x: &Var, _ctx: ControlContext) -> Result<Var> {
        check_param_count(params, 2 * self.rounds)?;
        let (n, d) = (self.n, self.d_max);
        let mask = tape.constant(self.mask.clone());
        let inv_degree = tape.constant(self.inv_degree.clone());
        let mut h = tape.gather(x, &self.transpose, &[n, CHANNELS])?;
        for r in 0..self.rounds {
            let psi = tape.gather(&h, &self.slots, &[n * d, CHANNELS])?;
            let msg = tape.add_row(&tape.matmul(&psi, &params[2 * r])?, &params[2 * r + 1])?;
            let msg = tape.mul(&tape.elu(&msg), &mask)?;
            let agg = tape.sum_axis(&tape.reshape(&msg, &[n, d, CHANNELS])?, 1)?;
            h = tape.mul(&agg, &inv_degree)?;
        }
        let z = tape.mean_axis(&h, 1)?;
        let logits = tape.gather(&z, &self.drivers, &[self.drivers.len()])?;
        Ok(tape.scale(&tape.softmax(&logits)?, self.budget))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{seed_infection, Quadrant};
    use rand::Rng;

    fn ctx() -> ControlContext {
        ControlContext { t: 0.0, interaction: 0 }
    }

    #[test]
    fn embedding_has_declared_layout() {
        let g = Graph::lattice2d(2, 3).unwrap();
        let c = GnnController::new(&g, &DriverMap::all(6), 1.0, 2, 0).unwrap();
        let x: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let psi = c.neighborhood_embedding(&x).unwrap();
        assert_eq!(psi.shape(), &[4, 6, 3]);
        // node 0 has neighbours 1 and 3; channel 2 lives at offset 12
        assert_eq!(&psi.data()[(2 * 6) * 3..(2 * 6) * 3 + 3], &[13.0, 15.0, 0.0]);
    }

    #[test]
    fn output_sums_to_budget_and_is_positive() {
        let g = Graph::lattice2d(4, 4).unwrap();
        let d = DriverMap::new(16, vec![0, 2, 5, 7, 8, 10, 13, 15]).unwrap();
        let mut c = GnnController::new(&g, &d, 150.0, 4, 1).unwrap();
        let x = seed_infection(&g, Quadrant::UpperRight, 0.5).unwrap().to_tensor();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            for t in c.params_mut().tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
            }
            let u = c.control(&x, ctx()).unwrap();
            assert_eq!(u.len(), 8);
            assert!((u.iter().sum::<f64>() - 150.0).abs() < 1e-9);
            assert!(u.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn rejects_degenerate_setups() {
        let g = Graph::lattice2d(2, 2).unwrap();
        assert!(GnnController::new(&g, &DriverMap::all(4), 1.0, 0, 0).is_err());
        assert!(GnnController::new(&g, &DriverMap::new(4, vec![]).unwrap(), 1.0, 1, 0).is_err());
        let edgeless = Graph::from_edges(3, []).unwrap();
        assert!(GnnController::new(&edgeless, &DriverMap::all(3), 1.0, 1, 0).is_err());
    }
}
