use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_param_count, uniform_init, ControlContext, Controller, ControllerKind, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::{Error, Result};

/// Fully connected controller for phase dynamics.
///
/// Input features are `sin(x)`, followed by dense ELU layers of the given
/// widths and a linear head with one output per driver.
#[derive(Debug, Clone)]
pub struct MlpController {
    n: usize,
    m: usize,
    hidden: Vec<usize>,
    params: ParamSet,
}

impl MlpController {
    pub fn new(n: usize, m: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if n == 0 || m == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut fan_in = n;
        for (l, &w) in hidden.iter().chain(std::iter::once(&m)).enumerate() {
            params.push(format!("layer{l}.weight"), uniform_init(&mut rng, &[fan_in, w], fan_in));
            params.push(format!("layer{l}.bias"), uniform_init(&mut rng, &[w], fan_in));
            fan_in = w;
        }
        Ok(Self {
            n,
            m,
            hidden: hidden.to_vec(),
            params,
        })
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }
}

impl Controller for MlpController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::MlpNodec
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

    fn forward(&self, tape: &Tape, params: &[Var], x: &Var, _ctx: ControlContext) -> Result<Var> {
        check_param_count(params, 2 * (self.hidden.len() + 1))?;
        let mut h = tape.reshape(&tape.sin(x), &[1, self.n])?;
        let layers = params.len() / 2;
        for l in 0..layers {
            h = tape.add_row(&tape.matmul(&h, &params[2 * l])?, &params[2 * l + 1])?;
            if l + 1 < layers {
                h = tape.elu(&h);
            }
        }
        Ok(tape.reshape(&h, &[self.m])?)
    }
}
