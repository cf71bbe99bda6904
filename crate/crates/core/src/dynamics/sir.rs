use std::str::FromStr;
use std::sync::Arc;

use super::ControlledSystem;
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::{ArcIndex, DriverMap, Graph};
use crate::{Error, Result};

/// Quadrant of a lattice. Row 0 is the top row; the split is at `rows / 2`
/// and `cols / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrant {
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper-left" => Ok(Quadrant::UpperLeft),
            "upper-right" => Ok(Quadrant::UpperRight),
            "lower-left" => Ok(Quadrant::LowerLeft),
            "lower-right" => Ok(Quadrant::LowerRight),
            _ => Err(Error::InvalidArgument(format!("unknown quadrant '{s}'"))),
        }
    }
}

/// Nodes of a lattice quadrant in increasing order.
pub fn quadrant_nodes(g: &Graph, q: Quadrant) -> Result<Vec<usize>> {
    let (rows, cols) = g
        .grid()
        .ok_or_else(|| Error::InvalidArgument("quadrants need a lattice graph".into()))?;
    let upper = matches!(q, Quadrant::UpperLeft | Quadrant::UpperRight);
    let left = matches!(q, Quadrant::UpperLeft | Quadrant::LowerLeft);
    Ok((0..rows * cols)
        .filter(|&i| {
            let (r, c) = (i / cols, i % cols);
            (r < rows / 2) == upper && (c < cols / 2) == left
        })
        .collect())
}

/// Compartment fractions `[S, I, R, Y]` for every node, stored row-major as
/// a `4 x N` block (`data[k * N + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SirState {
    n: usize,
    data: Vec<f64>,
}

impl SirState {
    const TOL: f64 = 1e-9;

    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 4 * n {
            return Err(Error::InvalidState(format!(
                "expected {} values, got {}",
                4 * n,
                data.len()
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_finite() || **v < -Self::TOL || **v > 1.0 + Self::TOL)
        {
            return Err(Error::InvalidState(format!("compartment value {v} outside [0, 1]")));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> &[f64] {
        &self.data[..self.n]
    }

    pub fn i(&self) -> &[f64] {
        &self.data[self.n..2 * self.n]
    }

    pub fn r(&self) -> &[f64] {
        &self.data[2 * self.n..3 * self.n]
    }

    pub fn y(&self) -> &[f64] {
        &self.data[3 * self.n..]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[4, self.n], self.data.clone())
    }
}

/// Initial state with `fraction` of the population infected on every node of
/// quadrant `q`; all other mass is susceptible.
pub fn seed_infection(g: &Graph, q: Quadrant, fraction: f64) -> Result<SirState> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("infected fraction {fraction} outside [0, 1]")));
    }
    let n = g.n();
    let mut data = vec![0.0; 4 * n];
    data[..n].fill(1.0);
    for i in quadrant_nodes(g, q)? {
        data[i] = 1.0 - fraction;
        data[n + i] = fraction;
    }
    SirState::new(n, data)
}

/// Networked SIR dynamics with a control compartment `Y`:
///
/// ```text
/// dS_i/dt = -beta S_i sum_j A_ij I_j - (Bu)_i S_i
/// dI_i/dt =  beta S_i sum_j A_ij I_j - gamma I_i - (Bu)_i I_i
/// dR_i/dt =  gamma I_i + (Bu)_i S_i
/// dY_i/dt =  (Bu)_i I_i
/// ```
///
/// Controls must be non-negative.
#[derive(Debug, Clone)]
pub struct SirSystem {
    graph: Graph,
    beta: f64,
    gamma: f64,
    drivers: DriverMap,
    arcs: ArcIndex,
    driver_index: Arc<[usize]>,
    rows: [Arc<[Option<usize>]>; 4],
}

impl SirSystem {
    pub fn new(graph: Graph, beta: f64, gamma: f64, drivers: DriverMap) -> Result<Self> {
        if beta < 0.0 || gamma < 0.0 {
            return Err(Error::InvalidArgument("rates must be non-negative".into()));
        }
        if drivers.n() != graph.n() {
            return Err(Error::InvalidArgument("driver map built for another graph".into()));
        }
        let n = graph.n();
        let rows = std::array::from_fn(|k| (k * n..(k + 1) * n).map(Some).collect());
        Ok(Self {
            arcs: graph.arc_index(),
            driver_index: drivers.scatter_index(),
            graph,
            beta,
            gamma,
            drivers,
            rows,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn drivers(&self) -> &DriverMap {
        &self.drivers
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    fn check_controls(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.drivers.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} controls, got {}",
                self.drivers.len(),
                u.len()
            )));
        }
        match u.iter().enumerate().find(|(_, v)| **v < 0.0) {
            Some((index, &value)) => Err(Error::NegativeControl { index, value }),
            None => Ok(()),
        }
    }

    /// Plain evaluation of the right-hand side on a flat `4 x N` state.
    pub fn rhs_values(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != 4 * n {
            return Err(Error::InvalidState(format!("expected {} values, got {}", 4 * n, x.len())));
        }
        self.check_controls(u)?;
        let (s, i) = (&x[..n], &x[n..2 * n]);
        let bu = self.drivers.apply(u);
        let mut out = vec![0.0; 4 * n];
        for v in 0..n {
            let mut ai = 0.0;
            for &j in self.graph.neighbors(v) {
                ai += i[j];
            }
            let inf = (s[v] * ai) * self.beta;
            let cs = bu[v] * s[v];
            let ci = bu[v] * i[v];
            let gi = i[v] * self.gamma;
            out[v] = -inf - cs;
            out[n + v] = (inf - gi) - ci;
            out[2 * n + v] = gi + cs;
            out[3 * n + v] = ci;
        }
        Ok(out)
    }
}

impl ControlledSystem for SirSystem {
    fn state_shape(&self) -> Vec<usize> {
        vec![4, self.n()]
    }

    fn num_controls(&self) -> usize {
        self.drivers.len()
    }

    fn rhs(&self, tape: &Tape, x: &Var, u: &Var) -> Result<Var> {
        let n = self.n();
        if x.value().len() != 4 * n {
            return Err(Error::InvalidState(format!(
                "expected {} values, got {}",
                4 * n,
                x.value().len()
            )));
        }
        self.check_controls(u.data())?;
        let s = tape.gather(x, &self.rows[0], &[n])?;
        let i = tape.gather(x, &self.rows[1], &[n])?;
        let e = self.arcs.len();
        let i_nb = tape.gather(&i, &self.arcs.gather_other, &[e])?;
        let ai = tape.scatter_add(&i_nb, &self.arcs.owner, n)?;
        let inf = tape.scale(&tape.mul(&s, &ai)?, self.beta);
        let bu = tape.scatter_add(u, &self.driver_index, n)?;
        let cs = tape.mul(&bu, &s)?;
        let ci = tape.mul(&bu, &i)?;
        let gi = tape.scale(&i, self.gamma);
        let ds = tape.sub(&tape.neg(&inf), &cs)?;
        let di = tape.sub(&tape.sub(&inf, &gi)?, &ci)?;
        let dr = tape.add(&gi, &cs)?;
        let out = tape.concat(&[ds, di, dr, ci])?;
        Ok(tape.reshape(&out, &[4, n])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice_system(rows: usize, cols: usize) -> SirSystem {
        let g = Graph::lattice2d(rows, cols).unwrap();
        let d = DriverMap::all(g.n());
        SirSystem::new(g, 6.0, 1.8, d).unwrap()
    }

    #[test]
    fn quadrants_partition_the_lattice() {
        let g = Graph::lattice2d(4, 6).unwrap();
        let mut all: Vec<usize> = [
            Quadrant::UpperLeft,
            Quadrant::UpperRight,
            Quadrant::LowerLeft,
            Quadrant::LowerRight,
        ]
        .iter()
        .flat_map(|&q| quadrant_nodes(&g, q).unwrap())
        .collect();
        all.sort();
        assert_eq!(all, (0..24).collect::<Vec<_>>());
        assert_eq!(quadrant_nodes(&g, Quadrant::UpperRight).unwrap(), vec![3, 4, 5, 9, 10, 11]);
    }

    #[test]
    fn seeding_only_touches_the_quadrant() {
        let g = Graph::lattice2d(4, 4).unwrap();
        let st = seed_infection(&g, Quadrant::UpperRight, 0.5).unwrap();
        assert_eq!(st.i(), &[0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for v in 0..16 {
            assert!((st.s()[v] + st.i()[v] + st.r()[v] + st.y()[v] - 1.0).abs() < 1e-15);
        }
        assert!(seed_infection(&Graph::erdos_renyi(4, 0.5, 0).unwrap(), Quadrant::UpperLeft, 0.5).is_err());
    }

    #[test]
    fn mass_is_conserved_by_rhs() {
        let sys = lattice_system(3, 3);
        let x: Vec<f64> = (0..36).map(|k| ((k * 7 % 11) as f64) / 11.0).collect();
        let u: Vec<f64> = (0..9).map(|k| k as f64 * 0.3).collect();
        let d = sys.rhs_values(&x, &u).unwrap();
        for v in 0..9 {
            let total = d[v] + d[9 + v] + d[18 + v] + d[27 + v];
            assert!(total.abs() < 1e-12, "node {v}: {total}");
        }
    }

    #[test]
    fn no_infection_means_no_change_without_control() {
        let sys = lattice_system(2, 2);
        let mut x = vec![0.0; 16];
        x[..4].fill(1.0);
        assert!(sys.rhs_values(&x, &[0.0; 4]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_control_is_rejected() {
        let sys = lattice_system(2, 2);
        let x = vec![0.25; 16];
        assert_eq!(
            sys.rhs_values(&x, &[0.0, -1.0, 0.0, 0.0]),
            Err(Error::NegativeControl { index: 1, value: -1.0 })
        );
        let tape = Tape::inference();
        let r = sys.rhs(
            &tape,
            &tape.constant(Tensor::new(&[4, 4], x)),
            &tape.constant(Tensor::vector(vec![0.0, 0.0, -2.0, 0.0])),
        );
        assert!(matches!(r, Err(Error::NegativeControl { index: 2, .. })));
    }

    #[test]
    fn tape_rhs_matches_plain_bitwise() {
        let g = Graph::lattice2d(3, 4).unwrap();
        let d = DriverMap::new(12, vec![0, 5, 11]).unwrap();
        let sys = SirSystem::new(g, 6.0, 1.8, d).unwrap();
        let x: Vec<f64> = (0..48).map(|k| ((k * 5 % 13) as f64) / 13.0).collect();
        let u = vec![0.4, 2.0, 0.0];
        let tape = Tape::inference();
        let v = sys
            .rhs(
                &tape,
                &tape.constant(Tensor::new(&[4, 12], x.clone())),
                &tape.constant(Tensor::vector(u.clone())),
            )
            .unwrap();
        assert_eq!(v.shape(), &[4, 12]);
        assert_eq!(v.data(), sys.rhs_values(&x, &u).unwrap().as_slice());
    }

    #[test]
    fn state_validation() {
        assert!(SirState::new(1, vec![1.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(SirState::new(1, vec![1.1, 0.0, 0.0, 0.0]).is_err());
        assert!(SirState::new(1, vec![1.0, 0.0, 0.0]).is_err());
    }
}
