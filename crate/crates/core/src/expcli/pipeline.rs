use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{derive_seed, DriverMethod, ExperimentConfig, InitialStates, KuramotoSettings, Settings, SirSettings};
use crate::autodiff::{Tape, Tensor, Var};
use crate::controllers::{
    Controller, ControllerKind, FeedbackController, FreeController, GnnController, MlpController,
    RandomConstantController, TargetedConstantController,
};
use crate::dynamics::{quadrant_nodes, seed_infection, KuramotoSystem, SirState, SirSystem};
use crate::graph::{bipartite_source_drivers, kuramoto_gains, max_matching_drivers, steady_state, DriverMap, Graph};
use crate::metrics::{energy, epidemic_loss, mean_infected, sync_summary, MetricsRow};
use crate::odesolve::{compartment_labels, phase_labels, solve_plain, Trajectory};
use crate::training::{train_adaptive, train_curriculum, TrainReport};
use crate::{Error, Result};

/// Resampling attempts for a connected random graph.
const GRAPH_ATTEMPTS: u64 = 1000;

/// Graph of an experiment. Random graphs are redrawn with successive seeds
/// until connected.
pub fn build_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    match &cfg.settings {
        Settings::Kuramoto(k) => {
            let p = (k.mean_degree / (k.nodes - 1) as f64).min(1.0);
            let base = derive_seed(cfg.seed, "graph");
            for attempt in 0..GRAPH_ATTEMPTS {
                let g = Graph::erdos_renyi(k.nodes, p, base.wrapping_add(attempt))?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::InvalidArgument(format!(
                "no connected graph in {GRAPH_ATTEMPTS} draws; raise graph.mean_degree"
            )))
        }
        Settings::Sir(s) => Ok(Graph::lattice2d(s.rows, s.cols)?),
    }
}

pub struct KuramotoSetup {
    pub settings: KuramotoSettings,
    pub system: KuramotoSystem,
    pub steady: Vec<f64>,
}

pub struct SirSetup {
    pub settings: SirSettings,
    pub system: SirSystem,
    pub initial: SirState,
    pub targets: Vec<usize>,
}

pub enum Setup {
    Kuramoto(KuramotoSetup),
    Sir(SirSetup),
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let g = build_graph(cfg)?;
        match &cfg.settings {
            Settings::Kuramoto(k) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "omega"));
                let a = k.omega_half_width;
                let mut omega: Vec<f64> = (0..g.n()).map(|_| rng.gen_range(-a..=a)).collect();
                if k.center_omega {
                    let mean = omega.iter().sum::<f64>() / omega.len() as f64;
                    omega.iter_mut().for_each(|w| *w -= mean);
                }
                let steady = steady_state(&g, k.coupling, &omega)?;
                let drivers = kuramoto_gains(&g, k.coupling, &steady, k.margin)?;
                if drivers.is_empty() {
                    return Err(Error::InvalidArgument("no driver node has a non-zero gain".into()));
                }
                let system = KuramotoSystem::new(g, k.coupling, omega, drivers)?;
                Ok(Setup::Kuramoto(KuramotoSetup {
                    settings: k.clone(),
                    system,
                    steady,
                }))
            }
            Settings::Sir(s) => {
                let drivers = match s.drivers {
                    DriverMethod::MaxMatching => max_matching_drivers(&g),
                    DriverMethod::BipartiteSources => bipartite_source_drivers(&g)
                        .ok_or_else(|| Error::InvalidArgument("graph is not bipartite".into()))?,
                    DriverMethod::All => DriverMap::all(g.n()),
                };
                let initial = seed_infection(&g, s.seed_quadrant, s.seed_fraction)?;
                let targets = quadrant_nodes(&g, s.target_quadrant)?;
                let system = SirSystem::new(g, s.beta, s.gamma, drivers)?;
                Ok(Setup::Sir(SirSetup {
                    settings: s.clone(),
                    system,
                    initial,
                    targets,
                }))
            }
        }
    }

    pub fn graph(&self) -> &Graph {
        match self {
            Setup::Kuramoto(k) => k.system.graph(),
            Setup::Sir(s) => s.system.graph(),
        }
    }

    pub fn drivers(&self) -> &DriverMap {
        match self {
            Setup::Kuramoto(k) => k.system.drivers(),
            Setup::Sir(s) => s.system.drivers(),
        }
    }

    fn horizon(&self) -> f64 {
        match self {
            Setup::Kuramoto(k) => k.settings.eval_horizon,
            Setup::Sir(s) => s.settings.horizon,
        }
    }

    fn state_labels(&self) -> Vec<String> {
        match self {
            Setup::Kuramoto(k) => phase_labels(k.system.n()),
            Setup::Sir(s) => compartment_labels(s.system.n()),
        }
    }

    fn solve(&self, controller: &dyn Controller, x0: &Tensor, cfg: &ExperimentConfig) -> Result<Trajectory> {
        let h = self.horizon();
        match self {
            Setup::Kuramoto(k) => solve_plain(&k.system, controller, x0, 0.0, h, &cfg.eval_solver),
            Setup::Sir(s) => solve_plain(&s.system, controller, x0, 0.0, h, &cfg.eval_solver),
        }
    }
}

/// Untrained neural controller of the experiment.
pub fn neural_controller(cfg: &ExperimentConfig, setup: &Setup) -> Result<Box<dyn Controller>> {
    let seed = derive_seed(cfg.seed, "init");
    match setup {
        Setup::Kuramoto(k) => Ok(Box::new(MlpController::new(
            k.system.n(),
            k.system.drivers().len(),
            &k.settings.hidden,
            seed,
        )?)),
        Setup::Sir(s) => Ok(Box::new(GnnController::new(
            s.system.graph(),
            s.system.drivers(),
            s.settings.budget,
            s.settings.rounds,
            seed,
        )?)),
    }
}

/// Trains the neural controller in place: curriculum training for phase
/// synchronisation, adaptive training on the squared peak for the epidemic.
pub fn train(cfg: &ExperimentConfig, setup: &Setup, controller: &mut dyn Controller) -> Result<TrainReport> {
    match setup {
        Setup::Kuramoto(k) => train_curriculum(controller, &k.system, &cfg.train_solver, &cfg.train),
        Setup::Sir(s) => {
            let targets = s.targets.clone();
            let loss = move |tape: &Tape, traj: &Trajectory| -> Result<Var> {
                Ok(epidemic_loss(tape, traj, &targets)?.0)
            };
            train_adaptive(
                controller,
                &s.system,
                &[s.initial.to_tensor()],
                s.settings.horizon,
                &cfg.train_solver,
                &loss,
                &cfg.train,
            )
        }
    }
}

/// Evaluation initial states. The epidemic always starts from the seeded
/// state; phases are drawn per sample.
pub fn initial_states(cfg: &ExperimentConfig, setup: &Setup) -> Vec<Tensor> {
    match setup {
        Setup::Kuramoto(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "eval"));
            (0..k.settings.eval_samples)
                .map(|_| {
                    let x = match k.settings.initial {
                        InitialStates::SteadyBand => k
                            .steady
                            .iter()
                            .map(|&s| {
                                let (lo, hi) = if s >= 0.0 { (0.9 * s, s) } else { (s, 0.9 * s) };
                                lo + (hi - lo) * rng.gen::<f64>()
                            })
                            .collect(),
                        InitialStates::UnitUniform => (0..k.system.n()).map(|_| rng.gen::<f64>()).collect(),
                    };
                    Tensor::vector(x)
                })
                .collect()
        }
        Setup::Sir(s) => vec![s.initial.to_tensor()],
    }
}

/// Baseline controller of the given kind.
pub fn baseline(cfg: &ExperimentConfig, setup: &Setup, kind: ControllerKind) -> Result<Box<dyn Controller>> {
    let drivers = setup.drivers();
    let m = drivers.len();
    let budget = match setup {
        Setup::Sir(s) => s.settings.budget,
        Setup::Kuramoto(_) => 1.0,
    };
    Ok(match kind {
        ControllerKind::Feedback => {
            let zeta = match setup {
                Setup::Kuramoto(k) => k.settings.zeta,
                Setup::Sir(_) => {
                    return Err(Error::InvalidArgument("feedback control applies to the kuramoto experiment".into()))
                }
            };
            Box::new(FeedbackController::new(drivers, zeta)?)
        }
        ControllerKind::TargetedConstant => match setup {
            Setup::Sir(s) => Box::new(TargetedConstantController::on_targets(drivers, &s.targets, budget)?),
            Setup::Kuramoto(_) => Box::new(TargetedConstantController::uniform(m, budget)?),
        },
        ControllerKind::RandomConstant => {
            let per_step = matches!(setup, Setup::Sir(s) if s.settings.rnd_per_step);
            Box::new(RandomConstantController::new(m, budget, derive_seed(cfg.seed, "rnd"), per_step)?)
        }
        ControllerKind::Free => Box::new(FreeController::new(m)),
        ControllerKind::MlpNodec | ControllerKind::GnnNodec => {
            return Err(Error::InvalidArgument(format!("{} is not a baseline", kind.name())))
        }
    })
}

/// Per-sample relative differences of the neural controller against the
/// feedback baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeRow {
    pub sample: usize,
    pub energy: f64,
    pub r_final: f64,
}

pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    pub relative: Vec<RelativeRow>,
    /// Trajectory CSV of the first sample per controller label.
    pub trajectories: Vec<(String, String)>,
}

fn metrics_row(setup: &Setup, traj: &Trajectory, label: &str, sample: usize, seed: u64) -> Result<MetricsRow> {
    let mut row = MetricsRow {
        run_id: format!("{label}-{sample:03}"),
        controller: label.to_string(),
        seed,
        energy: energy(traj)?,
        r_final: None,
        r_mean: None,
        r_min: None,
        peak_infected: None,
        t_peak: None,
    };
    match setup {
        Setup::Kuramoto(_) => {
            let s = sync_summary(traj)?;
            row.r_final = Some(s.r_final);
            row.r_mean = Some(s.r_mean);
            row.r_min = Some(s.r_min);
        }
        Setup::Sir(s) => {
            let series = mean_infected(traj, &s.targets)?;
            let (k, peak) = series
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
            row.peak_infected = Some(peak);
            row.t_peak = Some(traj.times[k]);
        }
    }
    Ok(row)
}

/// Runs every configured controller from the same initial states. `neural`
/// stands in for the NODEC entry of the controller list.
pub fn evaluate(cfg: &ExperimentConfig, setup: &Setup, neural: Option<&dyn Controller>) -> Result<Evaluation> {
    let mut owned = Vec::new();
    for &kind in &cfg.controllers {
        owned.push(if kind.is_neural() { None } else { Some(baseline(cfg, setup, kind)?) });
    }
    let mut controllers: Vec<(String, &dyn Controller)> = Vec::new();
    let mut neural_label = None;
    for (&kind, b) in cfg.controllers.iter().zip(&owned) {
        let c = match b {
            Some(b) => b.as_ref(),
            None => {
                let n = neural.ok_or_else(|| Error::InvalidArgument("a trained checkpoint is needed for NODEC".into()))?;
                if n.kind() != kind {
                    return Err(Error::InvalidArgument(format!("{} does not apply to this experiment", kind.name())));
                }
                neural_label = Some(controllers.len());
                n
            }
        };
        controllers.push((kind.label().to_string(), c));
    }
    let x0s = initial_states(cfg, setup);
    let labels = setup.state_labels();
    let per_sample: Vec<(Vec<MetricsRow>, Vec<String>)> = x0s
        .par_iter()
        .enumerate()
        .map(|(k, x0)| {
            let mut rows = Vec::new();
            let mut csvs = Vec::new();
            for (label, c) in &controllers {
                let traj = setup.solve(*c, x0, cfg)?;
                rows.push(metrics_row(setup, &traj, label, k, cfg.seed)?);
                if k == 0 {
                    let mut buf = Vec::new();
                    traj.write_csv(&mut buf, &labels)?;
                    csvs.push(String::from_utf8(buf).expect("csv output is utf-8"));
                }
            }
            Ok((rows, csvs))
        })
        .collect::<Result<_>>()?;

    let feedback = controllers.iter().position(|(l, _)| l == ControllerKind::Feedback.label());
    let mut relative = Vec::new();
    if let (Some(n), Some(f)) = (neural_label, feedback) {
        for (k, (rows, _)) in per_sample.iter().enumerate() {
            let (a, b) = (&rows[n], &rows[f]);
            let (ra, rb) = (a.r_final.unwrap_or(f64::NAN), b.r_final.unwrap_or(f64::NAN));
            relative.push(RelativeRow {
                sample: k,
                energy: (a.energy - b.energy) / b.energy,
                r_final: (ra - rb) / rb,
            });
        }
    }
    let mut rows = Vec::new();
    let mut trajectories = Vec::new();
    for (k, (r, csvs)) in per_sample.into_iter().enumerate() {
        rows.extend(r);
        if k == 0 {
            trajectories = controllers.iter().map(|(l, _)| l.clone()).zip(csvs).collect();
        }
    }
    Ok(Evaluation {
        rows,
        relative,
        trajectories,
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    if values.len() % 2 == 1 {
        values[k]
    } else {
        0.5 * (values[k - 1] + values[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expcli::config::Config;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_config(&Config::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn kuramoto_setup_has_steady_state_and_gains() {
        let c = cfg("experiment = kuramoto\ngraph.nodes = 32\n");
        let Setup::Kuramoto(k) = Setup::build(&c).unwrap() else { panic!() };
        assert!(k.system.graph().is_connected());
        assert!(k.system.omega().iter().sum::<f64>().abs() < 1e-9);
        let g = k.system.graph();
        for i in 0..g.n() {
            let lx: f64 = g.neighbors(i).iter().map(|&j| k.steady[i] - k.steady[j]).sum();
            assert!((k.system.omega()[i] - 0.4 * lx).abs() < 1e-9, "node {i}");
        }
    }

    #[test]
    fn band_samples_lie_between_ninety_percent_and_steady() {
        let c = cfg("experiment = kuramoto\ngraph.nodes = 16\neval.samples = 5\n");
        let setup = Setup::build(&c).unwrap();
        let Setup::Kuramoto(k) = &setup else { panic!() };
        for x in initial_states(&c, &setup) {
            for (&v, &s) in x.data().iter().zip(&k.steady) {
                assert!(v >= (0.9 * s).min(s) && v <= (0.9 * s).max(s));
            }
        }
    }

    #[test]
    fn sir_setup_uses_checkerboard_drivers_and_target_quadrant() {
        let c = cfg("experiment = sir\ngraph.rows = 8\ngraph.cols = 8\n");
        let Setup::Sir(s) = Setup::build(&c).unwrap() else { panic!() };
        assert_eq!(s.system.drivers().len(), 32);
        assert_eq!(s.targets.len(), 16);
        assert!(s.targets.iter().all(|&i| i / 8 >= 4 && i % 8 < 4));
    }

    #[test]
    fn sir_evaluation_produces_rows_per_controller() {
        let c = cfg("experiment = sir\ngraph.rows = 4\ngraph.cols = 4\nsir.horizon = 0.05\nsir.budget = 10\neval.step = 0.01\neval.interaction = 0.01\neval.controllers = targeted-constant,random-constant,free\n");
        let setup = Setup::build(&c).unwrap();
        let e = evaluate(&c, &setup, None).unwrap();
        assert_eq!(e.rows.len(), 3);
        assert_eq!(e.trajectories.len(), 3);
        assert_eq!(e.rows[2].energy, 0.0);
        assert!(e.rows.iter().all(|r| r.peak_infected.is_some()));
        assert!(e.relative.is_empty());
    }

    #[test]
    fn neural_entry_requires_controller() {
        let c = cfg("experiment = sir\ngraph.rows = 4\ngraph.cols = 4\n");
        let setup = Setup::build(&c).unwrap();
        assert!(evaluate(&c, &setup, None).is_err());
    }
}
