use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer '{s}'"))),
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn reset(&mut self) {
        self.t = 0;
        self.m.clear();
        self.v.clear();
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter tensor");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, beta1: f64, beta2: f64, eps: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(beta1, beta2, eps)),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * gi;
                    }
                }
            }
            Optimizer::Adam(a) => a.step(params, grads, lr),
        }
    }

    pub fn reset(&mut self) {
        if let Optimizer::Adam(a) = self {
            a.reset();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_has_size_lr() {
        let mut a = Adam::new(0.9, 0.999, 1e-8);
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let g = vec![Tensor::vector(vec![3.0, -0.01, 1e3])];
        a.step(&mut p, &g, 0.1);
        let d = [1.0 - p[0].data()[0], -2.0 - p[0].data()[1], 0.5 - p[0].data()[2]];
        assert!((d[0] - 0.1).abs() < 1e-8);
        assert!((d[1] + 0.1).abs() < 1e-6);
        assert!((d[2] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.9, 0.999, 1e-8);
        let mut p = vec![Tensor::vector(vec![1.0, -0.0])];
        let before = p.clone();
        opt.step(&mut p, &[Tensor::zeros(&[2])], 0.5);
        assert_eq!(p, before);
    }

    #[test]
    fn reset_restarts_bias_correction() {
        let mut a = Adam::new(0.9, 0.999, 1e-8);
        let mut p = vec![Tensor::vector(vec![0.0])];
        a.step(&mut p, &[Tensor::vector(vec![1.0])], 0.1);
        a.reset();
        assert_eq!(a.steps(), 0);
        let mut q = vec![Tensor::vector(vec![0.0])];
        a.step(&mut q, &[Tensor::vector(vec![1.0])], 0.1);
        assert!((q[0].data()[0] + 0.1).abs() < 1e-9);
    }
}
