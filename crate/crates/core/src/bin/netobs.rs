//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use netobs::discretize::{reference_simulate, simulate, uniform_times, DiscreteModel, Scheme};
use netobs::estimator::{estimate_initial_state, EstimationProblem, ObservationSet};
use netobs::gramian::{empirical_gramian, Definition, GramianConfig};
use netobs::harness::{
    compare_methods, generate_truth, resolve_model, run_sweep, write_comparison_csv, write_sweep_csv,
    ExperimentConfig, InitLaw, StructuralConstraints,
};
use netobs::model::{ContinuousModel, StateVector};
use netobs::oid::{build_oid, centralities, sample_states, scc_decompose};
use netobs::selection::{
    random_selection, search, write_selection_csv, JacobianObjective, ObjectiveValue, SearchStrategy,
    SelectionConstraints, SelectionResult, Solver,
};

#[derive(Parser)]
#[command(name = "netobs", version, about = "State estimation and sensor selection for dynamical networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Model file, or the name of a bundled model
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    /// Step size (defaults to the model's recommended step)
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Number of output samples
    #[arg(long = "N", global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the discretized model (or the reference integrator)
    Simulate {
        /// Comma-separated initial state; defaults to the model's, else a seeded draw
        #[arg(long)]
        x0: Option<String>,
        /// Use the adaptive reference integrator at the sample times
        #[arg(long)]
        reference: bool,
        /// Also write observations.csv for these comma-separated node names ("all" for every node)
        #[arg(long)]
        observe: Option<String>,
    },
    /// Estimate the initial state from an observation CSV
    Estimate {
        #[arg(long)]
        observations: PathBuf,
        /// Comma-separated initial guess; defaults to a seeded draw
        #[arg(long)]
        guess: Option<String>,
        /// Comma-separated true state, to report the estimation error
        #[arg(long)]
        truth: Option<String>,
    },
    /// Choose sensors
    Select {
        /// Number of sensors
        #[arg(long)]
        r: usize,
        #[arg(long, default_value = "greedy")]
        solver: Solver,
        /// jacobian, gramian1, gramian2 or gramian3
        #[arg(long, default_value = "jacobian")]
        objective: String,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        /// Ignore the OID structure
        #[arg(long)]
        oid_blind: bool,
        /// Comma-separated linearization state; defaults to the model's
        #[arg(long)]
        x0: Option<String>,
    },
    /// Empirical observability Gramian
    Gramian {
        #[arg(long, default_value_t = 2)]
        definition: u8,
        /// Comma-separated measured node names; defaults to all nodes
        #[arg(long)]
        sensors: Option<String>,
        /// Random orthogonal matrices (definitions 1 and 3)
        #[arg(long, default_value_t = 1)]
        orthogonal: usize,
        #[arg(long)]
        x0: Option<String>,
    },
    /// Observability inference diagram, SCCs and centralities
    Graph {
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1e-12)]
        threshold: f64,
    },
    /// Run an experiment sweep from a TOML config
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the four selection methods from a TOML config
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
}

fn config<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn numerical<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Numerical(e.to_string())
}

type Res<T> = Result<T, Failure>;

fn parse_vector(text: &str, n: usize) -> Res<StateVector> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(config)?;
    if v.len() != n {
        return Err(Failure::Config(format!("expected {n} comma-separated values, got {}", v.len())));
    }
    Ok(DVector::from_vec(v))
}

struct Context {
    model: ContinuousModel,
    scheme: Scheme,
    h: f64,
    n_samples: usize,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn new(g: &Global) -> Res<Self> {
        let name = g.model.as_deref().ok_or_else(|| Failure::Config("--model is required".into()))?;
        let model = resolve_model(name).map_err(config)?.model;
        let h = g
            .h
            .or(model.recommended_h())
            .ok_or_else(|| Failure::Config("--h is required for models without a recommended step".into()))?;
        let out = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).map_err(config)?;
        Ok(Context {
            model,
            scheme: g.scheme.unwrap_or(Scheme::Irk),
            h,
            n_samples: g.n_samples.unwrap_or(50),
            seed: g.seed.unwrap_or(0),
            out,
        })
    }

    fn discrete(&self) -> Res<DiscreteModel> {
        DiscreteModel::new(self.model.clone(), self.scheme, self.h).map_err(config)
    }

    fn state(&self, given: &Option<String>) -> Res<StateVector> {
        match given {
            Some(text) => parse_vector(text, self.model.dim()),
            None => Ok(self
                .model
                .default_state()
                .cloned()
                .unwrap_or_else(|| generate_truth(&self.model, InitLaw::suited_to(&self.model), self.seed))),
        }
    }

    fn file(&self, name: &str) -> Res<File> {
        File::create(self.out.join(name)).map_err(config)
    }
}

fn sweep_config(g: &Global, path: &Path) -> Res<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(config)?;
    if let Some(m) = &g.model {
        cfg.model = m.clone();
    }
    if let Some(s) = g.scheme {
        cfg.scheme = s;
    }
    if g.h.is_some() {
        cfg.h = g.h;
    }
    if let Some(n) = g.n_samples {
        cfg.n_samples = vec![n];
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = Some(o.clone());
    }
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from("."));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Res<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Sweep { config: path } => {
            let cfg = sweep_config(g, path)?;
            let records = run_sweep(&cfg).map_err(config)?;
            let failed = records.iter().filter(|r| r.status != "ok").count();
            write_sweep_csv(&records, std::io::sink()).map_err(config)?;
            eprintln!("{} runs, {failed} not ok", records.len());
            return Ok(());
        }
        Command::Compare { config: path } => {
            let cfg = sweep_config(g, path)?;
            let records = compare_methods(&cfg).map_err(config)?;
            write_comparison_csv(&records, std::io::sink()).map_err(config)?;
            eprintln!("{} comparison cells", records.len());
            return Ok(());
        }
        _ => {}
    }
    let ctx = Context::new(g)?;
    let names = ctx.model.names().to_vec();
    match &cli.command {
        Command::Simulate { x0, reference, observe } => {
            let x0 = ctx.state(x0)?;
            let traj = if *reference {
                reference_simulate(&ctx.model, &x0, &uniform_times(ctx.h, ctx.n_samples))
            } else {
                simulate(&ctx.discrete()?, &x0, ctx.n_samples)
            }
            .map_err(numerical)?;
            traj.write_csv(&names, ctx.file("trajectory.csv")?).map_err(config)?;
            if let Some(list) = observe {
                let sensors: Vec<String> = if list == "all" {
                    names.clone()
                } else {
                    list.split(',').map(|s| s.trim().to_string()).collect()
                };
                let mut c = nalgebra::DMatrix::zeros(sensors.len(), names.len());
                for (row, s) in sensors.iter().enumerate() {
                    let j = ctx.model.node_index(s).ok_or_else(|| Failure::Config(format!("unknown node '{s}'")))?;
                    c[(row, j)] = 1.0;
                }
                let y = traj.states.iter().map(|x| &c * x).collect();
                let obs = ObservationSet::new(y, c, ctx.h, ctx.scheme, sensors).map_err(config)?;
                obs.write_csv(ctx.file("observations.csv")?).map_err(config)?;
            }
        }
        Command::Estimate { observations, guess, truth } => {
            let input = File::open(observations).map_err(config)?;
            let obs = ObservationSet::read_csv(input, &names, ctx.h, ctx.scheme).map_err(config)?;
            let guess = match guess {
                Some(text) => parse_vector(text, ctx.model.dim())?,
                None => generate_truth(&ctx.model, InitLaw::suited_to(&ctx.model), ctx.seed.wrapping_add(1)),
            };
            let mut problem = EstimationProblem::new(ctx.discrete()?, obs, guess).map_err(config)?;
            if let Some(t) = truth {
                problem = problem.with_truth(parse_vector(t, ctx.model.dim())?);
            }
            let result = estimate_initial_state(&problem).map_err(numerical)?;
            result.write_report(&names, ctx.file("estimate.csv")?).map_err(config)?;
        }
        Command::Select { r, solver, objective, budget, oid_blind, x0 } => {
            let x0 = ctx.state(x0)?;
            let constraints: SelectionConstraints = if *oid_blind {
                SelectionConstraints::with_count(*r)
            } else {
                StructuralConstraints::from_model(&ctx.model, ctx.seed).constraints(*r)
            };
            let strategy = match solver {
                Solver::Exhaustive => SearchStrategy::Exhaustive,
                Solver::Greedy => SearchStrategy::Greedy,
                Solver::Stochastic => SearchStrategy::Stochastic { budget: *budget, seed: ctx.seed },
                Solver::Random => {
                    let mask = random_selection(ctx.model.dim(), &constraints, ctx.seed).map_err(config)?;
                    let n = mask.len();
                    let mut result = SelectionResult::new(mask, ObjectiveValue::of_gram(&nalgebra::DMatrix::zeros(n, n)), 0, Solver::Random);
                    result.seed = Some(ctx.seed);
                    write_selection_csv(&[result], &names, ctx.file("selection.csv")?).map_err(config)?;
                    return Ok(());
                }
            };
            let result = match objective.as_str() {
                "jacobian" => {
                    let obj = JacobianObjective::new(&ctx.discrete()?, &x0, ctx.n_samples).map_err(numerical)?;
                    search(&obj, &constraints, strategy).map_err(config)?
                }
                other => {
                    let def = other
                        .strip_prefix("gramian")
                        .and_then(|d| d.parse::<u8>().ok())
                        .and_then(Definition::from_number)
                        .ok_or_else(|| Failure::Config(format!("unknown objective '{other}'")))?;
                    let cfg = GramianConfig::new(x0, ctx.h, ctx.n_samples.saturating_sub(1).max(1));
                    let cfg = if def == Definition::Two { cfg } else { cfg.with_random_orthogonal(2, ctx.seed) };
                    let (obj, _) = netobs::gramian::gramian_decomposition(def, &ctx.model, &cfg).map_err(numerical)?;
                    search(&obj, &constraints, strategy).map_err(config)?
                }
            };
            write_selection_csv(&[result], &names, ctx.file("selection.csv")?).map_err(config)?;
        }
        Command::Gramian { definition, sensors, orthogonal, x0 } => {
            let def = Definition::from_number(*definition)
                .ok_or_else(|| Failure::Config(format!("definition must be 1, 2 or 3, got {definition}")))?;
            let n = ctx.model.dim();
            let idx: Vec<usize> = match sensors {
                Some(list) => list
                    .split(',')
                    .map(|s| ctx.model.node_index(s.trim()).ok_or_else(|| Failure::Config(format!("unknown node '{s}'"))))
                    .collect::<Res<_>>()?,
                None => (0..n).collect(),
            };
            let c = netobs::SensorMask::from_indices(n, &idx).map_err(config)?.selection_matrix();
            let mut cfg = GramianConfig::new(ctx.state(x0)?, ctx.h, ctx.n_samples.saturating_sub(1).max(1));
            if def != Definition::Two && *orthogonal > 1 {
                cfg = cfg.with_random_orthogonal(*orthogonal, ctx.seed);
            }
            let gram = empirical_gramian(def, &ctx.model, &c, &cfg).map_err(numerical)?;
            gram.write_csv(&names, ctx.file("gramian.csv")?).map_err(config)?;
            gram.write_eigenvalues_csv(ctx.file("gramian_eigenvalues.csv")?).map_err(config)?;
        }
        Command::Graph { samples, threshold } => {
            let states = sample_states(&ctx.model, *samples, ctx.seed);
            let oid = build_oid(&ctx.model, &states, *threshold).map_err(numerical)?;
            oid.write_edge_list(ctx.file("oid_edges.csv")?).map_err(config)?;
            oid.write_tgf(ctx.file("oid.tgf")?).map_err(config)?;
            centralities(&oid).write_csv(&names, ctx.file("centralities.csv")?).map_err(config)?;
            let scc = scc_decompose(&oid);
            let mut w = csv::Writer::from_writer(ctx.file("scc.csv")?);
            w.write_record(["node", "component", "root"]).map_err(config)?;
            for (i, name) in names.iter().enumerate() {
                let k = scc.component_of[i];
                w.write_record([name.clone(), k.to_string(), scc.is_root[k].to_string()]).map_err(config)?;
            }
            w.flush().map_err(config)?;
        }
        Command::Sweep { .. } | Command::Compare { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
