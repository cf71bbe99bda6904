use crate::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const MIN_STEP: f64 = 1e-12;

/// Outcome of one attempted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Fifth-order solution at `t + h` (meaningful only when accepted).
    pub x: Vec<f64>,
    /// Scaled RMS error estimate; the step is accepted when it is at most 1.
    pub error: f64,
    pub h_next: f64,
    pub accepted: bool,
}

/// Adaptive Dormand–Prince 5(4) integrator with PI step-size control.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    prev_error: f64,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            prev_error: 1e-4,
        }
    }

    /// Attempts one step of size `h` from `(t, x)`.
    pub fn step<F>(&mut self, f: &mut F, t: f64, x: &[f64], h: f64) -> Result<StepResult>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        let n = x.len();
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(f(t, x)?);
        let mut y = vec![0.0; n];
        for s in 1..7 {
            for (i, yi) in y.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    acc += A[s][j] * kj[i];
                }
                *yi = x[i] + h * acc;
            }
            k.push(f(t + C[s] * h, &y)?);
        }
        // Stage 7 is evaluated at the fifth-order solution, so `y` is x(t + h).
        let mut sq = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (s, ks) in k.iter().enumerate() {
                e += E[s] * ks[i];
            }
            let scale = self.atol + self.rtol * x[i].abs().max(y[i].abs());
            sq += (h * e / scale).powi(2);
        }
        let error = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
        if !error.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Ok(StepResult {
                x: y,
                error: f64::INFINITY,
                h_next: h * MIN_FACTOR,
                accepted: false,
            });
        }
        let accepted = error <= 1.0;
        let factor = if error == 0.0 {
            MAX_FACTOR
        } else if accepted {
            SAFETY * error.powf(-ALPHA) * self.prev_error.powf(BETA)
        } else {
            SAFETY * error.powf(-ALPHA)
        };
        let factor = if accepted {
            factor.clamp(MIN_FACTOR, MAX_FACTOR)
        } else {
            factor.clamp(MIN_FACTOR, 1.0)
        };
        if accepted {
            self.prev_error = error.max(1e-4);
        }
        Ok(StepResult {
            x: y,
            error,
            h_next: h * factor,
            accepted,
        })
    }

    /// Integrates from `t0` to `t1`, landing exactly on `t1`. `h` is the
    /// initial step guess and is updated with the last proposed step size.
    pub fn integrate<F>(&mut self, f: &mut F, t0: f64, t1: f64, x0: &[f64], h: &mut f64) -> Result<Vec<f64>>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        let mut t = t0;
        let mut x = x0.to_vec();
        while t < t1 {
            let remaining = t1 - t;
            let last = *h >= remaining;
            let step = if last { remaining } else { *h };
            if step < MIN_STEP {
                if remaining < MIN_STEP {
                    break;
                }
                return Err(Error::NumericalInstability { t });
            }
            let r = self.step(f, t, &x, step)?;
            if r.accepted {
                t = if last { t1 } else { t + step };
                x = r.x;
                if !last || r.h_next < *h {
                    *h = r.h_next;
                }
            } else {
                *h = r.h_next;
                if *h < MIN_STEP {
                    return Err(Error::NumericalInstability { t });
                }
            }
        }
        Ok(x)
    }
}
