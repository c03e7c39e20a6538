//! Seeded experiment driver: truth generation, `(r, N)` sweeps, method
//! comparisons and selection-probability tables.
//!
//! Randomness is split into per-realization streams (see [`crate::rng`]), so a
//! sweep gives the same rows whether realizations run in parallel or not. Rows
//! are written sorted by `(r, N, realization)`; `wall_time` is always the last
//! column so reruns can be compared after dropping it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bundled;
use crate::discretize::{count_simulations, reference_simulate, simulate, uniform_times, DiscreteModel, Scheme, Trajectory};
use crate::estimator::{estimate_initial_state, trajectory_error, EstimationProblem, ObservationSet};
use crate::gramian::{gramian_decomposition, Definition, GramianConfig};
use crate::model::{ContinuousModel, StateVector};
use crate::modelfile::{load_model, LoadedModel, ModelFileError};
use crate::oid::{build_oid, sample_states, scc_decompose};
use crate::rng::{stream, Purpose};
use crate::selection::{
    random_mask, search, JacobianObjective, SearchStrategy, SelectionConstraints, SensorMask,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitLaw {
    Uniform01,
    OnePlusUniform,
}

impl InitLaw {
    /// `[1, 2)` draws when the model's box admits them, else `[0, 1)`.
    pub fn suited_to(model: &ContinuousModel) -> Self {
        if model.upper_bounds().iter().all(|&u| u >= 2.0) {
            InitLaw::OnePlusUniform
        } else {
            InitLaw::Uniform01
        }
    }
}

/// Where the measurements come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Adaptive high-accuracy integrator sampled at `k h`.
    #[default]
    Reference,
    /// The same discrete model the estimator uses.
    SameModel,
}

/// Sensor placement method for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, Hash, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Method 1: Gramian built from `x₀ ± γ eᵢ`, stochastic search.
    Gramian2,
    /// Method 2: Gramian built from `x₀ ± c T eᵢ`, stochastic search.
    Gramian3,
    /// Method 3: Jacobian objective, stochastic search.
    JacobianStochastic,
    /// Method 4: Jacobian objective, greedy.
    #[default]
    JacobianGreedy,
    JacobianExhaustive,
    Random,
}

impl Method {
    pub const COMPARED: [Method; 4] = [
        Method::Gramian2,
        Method::Gramian3,
        Method::JacobianStochastic,
        Method::JacobianGreedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gramian2 => "gramian2",
            Method::Gramian3 => "gramian3",
            Method::JacobianStochastic => "jacobian-stochastic",
            Method::JacobianGreedy => "jacobian-greedy",
            Method::JacobianExhaustive => "jacobian-exhaustive",
            Method::Random => "random",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            Method::Gramian2,
            Method::Gramian3,
            Method::JacobianStochastic,
            Method::JacobianGreedy,
            Method::JacobianExhaustive,
            Method::Random,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

fn default_realizations() -> usize {
    1
}
fn default_budget() -> usize {
    200
}
fn default_orthogonal() -> usize {
    2
}
fn default_scheme() -> Scheme {
    Scheme::Irk
}

/// One experiment, as read from TOML.
///
/// `model` is a file path or the name of a bundled model. Exactly one of
/// `fractions` (sensor fractions `f`, turned into `r = round(f n)`) and
/// `sensors` (sensor counts `r`) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Falls back to the model's recommended step.
    #[serde(default)]
    pub h: Option<f64>,
    pub n_samples: Vec<usize>,
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub sensors: Option<Vec<usize>>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    /// Swap evaluations allowed to the stochastic search.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Number of random orthogonal matrices for the second Gramian method.
    #[serde(default = "default_orthogonal")]
    pub orthogonal: usize,
    /// Defaults to [`InitLaw::suited_to`] the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_law: Option<InitLaw>,
    #[serde(default)]
    pub data: DataSource,
    /// Ignore the OID structure when placing sensors.
    #[serde(default)]
    pub oid_blind: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(model: impl Into<String>, n_samples: Vec<usize>, fractions: Vec<f64>) -> Self {
        ExperimentConfig {
            model: model.into(),
            scheme: Scheme::Irk,
            h: None,
            n_samples,
            fractions: Some(fractions),
            sensors: None,
            realizations: 1,
            seed: 0,
            method: Method::default(),
            budget: default_budget(),
            orthogonal: default_orthogonal(),
            init_law: None,
            data: DataSource::default(),
            oid_blind: false,
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let text = toml::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Loads the model and checks every list and count.
    pub fn prepare(&self) -> Result<Experiment, HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let loaded = resolve_model(&self.model)?;
        let model = loaded.model;
        let n = model.dim();
        if self.n_samples.is_empty() || self.n_samples.contains(&0) {
            return bad("n_samples must be a nonempty list of positive counts");
        }
        if self.realizations == 0 {
            return bad("realizations must be at least 1");
        }
        let counts: Vec<usize> = match (&self.fractions, &self.sensors) {
            (Some(f), None) => {
                if f.is_empty() || f.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
                    return bad("fractions must be a nonempty list in (0, 1]");
                }
                f.iter().map(|&f| ((f * n as f64).round() as usize).max(1)).collect()
            }
            (None, Some(r)) => {
                if r.is_empty() || r.iter().any(|&r| r == 0 || r > n) {
                    return bad("sensors must be a nonempty list of counts in 1..=n");
                }
                r.clone()
            }
            _ => return bad("give exactly one of 'fractions' and 'sensors'"),
        };
        let h = match self.h.or(model.recommended_h()) {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(_) => return bad("h must be positive and finite"),
            None => return bad("no h given and the model has no recommended step"),
        };
        if self.budget == 0 || self.orthogonal == 0 {
            return bad("budget and orthogonal must be positive");
        }
        let structure = if self.oid_blind {
            StructuralConstraints::default()
        } else {
            StructuralConstraints::from_model(&model, self.seed)
        };
        Ok(Experiment {
            config: self.clone(),
            hash: self.hash(),
            init_law: self.init_law.unwrap_or_else(|| InitLaw::suited_to(&model)),
            model,
            h,
            counts,
            structure,
        })
    }
}

/// A bundled model name or a path to a model file.
pub fn resolve_model(spec: &str) -> Result<LoadedModel, HarnessError> {
    if let Some(m) = bundled::load(spec) {
        return Ok(m);
    }
    Ok(load_model(spec)?)
}

/// Sensor requirements read off the OID: nodes whose equations depend on no
/// state at all (constant nodes) are always measured, and every root SCC must
/// hold at least one sensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructuralConstraints {
    pub forced: Vec<usize>,
    pub root_groups: Vec<Vec<usize>>,
}

const OID_SAMPLES: usize = 20;
const OID_THRESHOLD: f64 = 1e-12;

impl StructuralConstraints {
    pub fn from_model(model: &ContinuousModel, seed: u64) -> Self {
        let samples = sample_states(model, OID_SAMPLES, seed);
        let Ok(g) = build_oid(model, &samples, OID_THRESHOLD) else {
            return StructuralConstraints::default();
        };
        let scc = scc_decompose(&g);
        let forced = (0..g.n()).filter(|&i| g.successors(i).next().is_none()).collect();
        let root_groups = scc.root_components().into_iter().cloned().collect();
        StructuralConstraints { forced, root_groups }
    }

    pub fn constraints(&self, r: usize) -> SelectionConstraints {
        let mut c = SelectionConstraints::with_count(r);
        c.forced = self.forced.iter().copied().collect();
        c.cover_groups = self
            .root_groups
            .iter()
            .filter(|g| !g.iter().any(|i| c.forced.contains(i)))
            .cloned()
            .collect();
        c
    }
}

/// A validated configuration with its model loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub model: ContinuousModel,
    pub h: f64,
    pub init_law: InitLaw,
    /// Sensor counts `r`, in config order.
    pub counts: Vec<usize>,
    pub structure: StructuralConstraints,
}

fn draw_state(n: usize, law: InitLaw, rng: &mut impl Rng) -> StateVector {
    StateVector::from_fn(n, |_, _| {
        let u: f64 = rng.random();
        match law {
            InitLaw::Uniform01 => u,
            InitLaw::OnePlusUniform => 1.0 + u,
        }
    })
}

/// Seeded initial state drawn from `law`.
pub fn generate_truth(model: &ContinuousModel, law: InitLaw, seed: u64) -> StateVector {
    draw_state(model.dim(), law, &mut stream(seed, Purpose::Truth, 0))
}

/// Truth and initial guess for one realization.
pub fn realization_states(n: usize, law: InitLaw, seed: u64, realization: usize) -> (StateVector, StateVector) {
    let truth = draw_state(n, law, &mut stream(seed, Purpose::Truth, realization as u64));
    let guess = draw_state(n, law, &mut stream(seed, Purpose::Guess, realization as u64));
    (truth, guess)
}

fn realization_seed(seed: u64, realization: usize) -> u64 {
    stream(seed, Purpose::General, realization as u64).next_u64()
}

/// Outcome of placing sensors for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub mask: SensorMask,
    pub objective: Option<f64>,
    /// Network simulations needed to build the objective.
    pub simulations: u64,
}

/// Places `r` sensors with `method` around the state `x0`.
pub fn place_sensors(
    exp: &Experiment,
    dm: &DiscreteModel,
    method: Method,
    x0: &StateVector,
    n_samples: usize,
    r: usize,
    seed: u64,
) -> Result<Placement, String> {
    let n = exp.model.dim();
    let constraints = exp.structure.constraints(r);
    constraints.validate(n).map_err(|e| e.to_string())?;
    let budget = exp.config.budget;
    let stochastic = SearchStrategy::Stochastic { budget, seed };
    let (result, simulations) = match method {
        Method::Random => {
            let mut rng = stream(seed, Purpose::RandomMask, 0);
            let mask = random_mask(n, &constraints, &mut rng).map_err(|e| e.to_string())?;
            return Ok(Placement {
                mask,
                objective: None,
                simulations: 0,
            });
        }
        Method::Gramian2 | Method::Gramian3 => {
            let segments = n_samples.saturating_sub(1).max(1);
            let mut cfg = GramianConfig::new(x0.clone(), exp.h, segments);
            let def = if method == Method::Gramian2 {
                Definition::Two
            } else {
                cfg = cfg.with_random_orthogonal(exp.config.orthogonal, seed);
                Definition::Three
            };
            let (objective, sims) = gramian_decomposition(def, &exp.model, &cfg).map_err(|e| e.to_string())?;
            (search(&objective, &constraints, stochastic).map_err(|e| e.to_string())?, sims)
        }
        Method::JacobianStochastic | Method::JacobianGreedy | Method::JacobianExhaustive => {
            let (objective, sims) = count_simulations(|| JacobianObjective::new(dm, x0, n_samples));
            let objective = objective.map_err(|e| e.to_string())?;
            let strategy = match method {
                Method::JacobianStochastic => stochastic,
                Method::JacobianGreedy => SearchStrategy::Greedy,
                _ => SearchStrategy::Exhaustive,
            };
            (search(&objective, &constraints, strategy).map_err(|e| e.to_string())?, sims)
        }
    };
    Ok(Placement {
        mask: result.mask,
        objective: Some(result.objective),
        simulations,
    })
}

/// Measurements of every state along the data trajectory for one realization.
pub fn generate_data(exp: &Experiment, dm: &DiscreteModel, truth: &StateVector, n_samples: usize) -> Result<Trajectory, String> {
    let traj = match exp.config.data {
        DataSource::Reference => reference_simulate(&exp.model, truth, &uniform_times(exp.h, n_samples)),
        DataSource::SameModel => simulate(dm, truth, n_samples),
    };
    traj.map_err(|e| e.to_string())
}

fn truncate(traj: &Trajectory, n_samples: usize) -> Trajectory {
    Trajectory {
        states: traj.states[..n_samples].to_vec(),
        times: traj.times[..n_samples].to_vec(),
        stages: traj.stages.as_ref().map(|s| s[..n_samples.saturating_sub(1).min(s.len())].to_vec()),
        scheme: traj.scheme,
        h: traj.h,
    }
}

/// Estimation metrics for one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub x_hat: StateVector,
    pub eta: f64,
    /// Mean relative trajectory error over the horizon.
    pub xi: f64,
    pub iterations: usize,
    pub kappa: f64,
    pub rank_ok: bool,
    pub converged: bool,
}

/// Fits the initial state from `data` seen through `mask`.
pub fn estimate_with_mask(
    exp: &Experiment,
    dm: &DiscreteModel,
    data: &Trajectory,
    mask: &SensorMask,
    truth: &StateVector,
    guess: &StateVector,
) -> Result<EstimateSummary, String> {
    let obs = ObservationSet::from_trajectory(data, mask, exp.model.names(), exp.h, exp.config.scheme)
        .map_err(|e| e.to_string())?;
    let problem = EstimationProblem::new(dm.clone(), obs, guess.clone())
        .map_err(|e| e.to_string())?
        .with_truth(truth.clone());
    let est = estimate_initial_state(&problem).map_err(|e| e.to_string())?;
    let fitted = simulate(dm, &est.x_hat, data.len()).map_err(|e| e.to_string())?;
    let xis: Vec<f64> = trajectory_error(&fitted, data)
        .map_err(|e| e.to_string())?
        .into_iter()
        .flatten()
        .collect();
    let xi = if xis.is_empty() { f64::NAN } else { xis.iter().sum::<f64>() / xis.len() as f64 };
    Ok(EstimateSummary {
        eta: est.eta.unwrap_or(f64::NAN),
        x_hat: est.x_hat,
        xi,
        iterations: est.iterations,
        kappa: est.kappa,
        rank_ok: est.rank_ok,
        converged: est.converged,
    })
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub scheme: Scheme,
    pub h: f64,
    pub r: usize,
    pub f: f64,
    pub n_samples: usize,
    pub realization: usize,
    pub seed: u64,
    pub method: Method,
    pub mask: Option<SensorMask>,
    pub objective: Option<f64>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
    /// Outer estimator iterations.
    pub z: Option<usize>,
    pub kappa: Option<f64>,
    pub rank_ok: Option<bool>,
    pub simulations: Option<u64>,
    /// `ok`, or the stage that failed.
    pub status: String,
    pub wall_time: f64,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

pub const SWEEP_HEADER: [&str; 19] = [
    "config_hash", "scheme", "h", "r", "f", "n_samples", "realization", "seed", "method", "mask", "objective",
    "eta", "xi", "z", "kappa", "rank_ok", "simulations", "status", "wall_time",
];

impl RunRecord {
    fn fields(&self) -> Vec<String> {
        vec![
            self.config_hash.clone(),
            self.scheme.as_str().to_string(),
            self.h.to_string(),
            self.r.to_string(),
            self.f.to_string(),
            self.n_samples.to_string(),
            self.realization.to_string(),
            self.seed.to_string(),
            self.method.as_str().to_string(),
            self.mask.as_ref().map(|m| m.to_bit_string()).unwrap_or_default(),
            opt(&self.objective),
            opt(&self.eta),
            opt(&self.xi),
            opt(&self.z),
            opt(&self.kappa),
            opt(&self.rank_ok),
            opt(&self.simulations),
            self.status.clone(),
            self.wall_time.to_string(),
        ]
    }
}

pub fn write_sweep_csv<W: Write>(records: &[RunRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for rec in records {
        w.write_record(rec.fields())?;
    }
    w.flush()?;
    Ok(())
}

fn run_realization(exp: &Experiment, realization: usize) -> Vec<RunRecord> {
    let cfg = &exp.config;
    let n = exp.model.dim();
    let (truth, guess) = realization_states(n, exp.init_law, cfg.seed, realization);
    let sel_seed = realization_seed(cfg.seed, realization);
    let n_max = *cfg.n_samples.iter().max().unwrap();
    let dm = DiscreteModel::new(exp.model.clone(), cfg.scheme, exp.h).expect("validated step");
    let data = generate_data(exp, &dm, &truth, n_max);
    let mut out = Vec::new();
    for &r in &exp.counts {
        for &n_samples in &cfg.n_samples {
            let start = Instant::now();
            let mut rec = RunRecord {
                config_hash: exp.hash.clone(),
                scheme: cfg.scheme,
                h: exp.h,
                r,
                f: r as f64 / n as f64,
                n_samples,
                realization,
                seed: cfg.seed,
                method: cfg.method,
                mask: None,
                objective: None,
                eta: None,
                xi: None,
                z: None,
                kappa: None,
                rank_ok: None,
                simulations: None,
                status: "ok".into(),
                wall_time: 0.0,
            };
            let outcome = (|| -> Result<(), (&'static str, String)> {
                let data = data.as_ref().map_err(|e| ("data_failed", e.clone()))?;
                let data = truncate(data, n_samples);
                let placement = place_sensors(exp, &dm, cfg.method, &truth, n_samples, r, sel_seed)
                    .map_err(|e| ("selection_failed", e))?;
                rec.mask = Some(placement.mask.clone());
                rec.objective = placement.objective;
                rec.simulations = Some(placement.simulations);
                let est = estimate_with_mask(exp, &dm, &data, &placement.mask, &truth, &guess)
                    .map_err(|e| ("estimation_failed", e))?;
                rec.eta = Some(est.eta);
                rec.xi = Some(est.xi);
                rec.z = Some(est.iterations);
                rec.kappa = Some(est.kappa);
                rec.rank_ok = Some(est.rank_ok);
                if !est.converged {
                    rec.status = "not_converged".into();
                }
                Ok(())
            })();
            if let Err((tag, msg)) = outcome {
                log::warn!("run r={r} N={n_samples} realization={realization}: {msg}");
                rec.status = tag.into();
            }
            rec.wall_time = start.elapsed().as_secs_f64();
            out.push(rec);
        }
    }
    out
}

/// Runs every `(r, N, realization)` cell of the sweep.
pub fn run_sweep_records(exp: &Experiment) -> Vec<RunRecord> {
    let mut records: Vec<RunRecord> = (0..exp.config.realizations)
        .into_par_iter()
        .flat_map_iter(|k| run_realization(exp, k))
        .collect();
    records.sort_by_key(|r| (r.r, r.n_samples, r.realization));
    records
}

/// Runs the sweep and, when an output directory is configured, writes
/// `sweep.csv` and `selection_probabilities.csv` there.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let exp = config.prepare()?;
    let records = run_sweep_records(&exp);
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        write_sweep_csv(&records, std::fs::File::create(dir.join("sweep.csv"))?)?;
        let selections: Vec<(f64, SensorMask)> = records
            .iter()
            .filter_map(|r| r.mask.clone().map(|m| (r.f, m)))
            .collect();
        if !selections.is_empty() {
            let probs = selection_probabilities(&selections)?;
            write_probabilities_csv(exp.model.names(), &probs, std::fs::File::create(dir.join("selection_probabilities.csv"))?)?;
        }
    }
    Ok(records)
}

/// Per-node selection frequency: the indicator is averaged within each `f`,
/// then the per-`f` frequencies are averaged with equal weight.
pub fn selection_probabilities(results: &[(f64, SensorMask)]) -> Result<Vec<f64>, HarnessError> {
    let Some((_, first)) = results.first() else {
        return Err(HarnessError::Config("no selection results".into()));
    };
    let n = first.len();
    if results.iter().any(|(_, m)| m.len() != n) {
        return Err(HarnessError::Config("masks of different lengths".into()));
    }
    let mut by_f: BTreeMap<u64, (Vec<f64>, usize)> = BTreeMap::new();
    for (f, mask) in results {
        let entry = by_f.entry(f.to_bits()).or_insert_with(|| (vec![0.0; n], 0));
        for i in mask.indices() {
            entry.0[i] += 1.0;
        }
        entry.1 += 1;
    }
    let groups = by_f.len() as f64;
    let mut p = vec![0.0; n];
    for (counts, total) in by_f.values() {
        for i in 0..n {
            p[i] += counts[i] / *total as f64 / groups;
        }
    }
    Ok(p)
}

pub fn write_probabilities_csv<W: Write>(names: &[String], probs: &[f64], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "probability"])?;
    for (name, p) in names.iter().zip(probs) {
        w.write_record([name.clone(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One method's result within a comparison cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub mask: Option<SensorMask>,
    pub objective: Option<f64>,
    pub eta: Option<f64>,
    pub simulations: Option<u64>,
    pub status: String,
    pub wall_time: f64,
}

/// All compared methods on one `(r, N, realization)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRecord {
    pub config_hash: String,
    pub r: usize,
    pub n_samples: usize,
    pub realization: usize,
    pub outcomes: Vec<MethodOutcome>,
}

impl ComparisonRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }

    /// `ln η_a − ln η_b`.
    pub fn log_eta_difference(&self, a: Method, b: Method) -> Option<f64> {
        let ea = self.outcome(a)?.eta?;
        let eb = self.outcome(b)?.eta?;
        Some(ea.ln() - eb.ln())
    }
}

fn compare_realization(exp: &Experiment, realization: usize, methods: &[Method]) -> Vec<ComparisonRecord> {
    let cfg = &exp.config;
    let n = exp.model.dim();
    let (truth, guess) = realization_states(n, exp.init_law, cfg.seed, realization);
    let sel_seed = realization_seed(cfg.seed, realization);
    let n_max = *cfg.n_samples.iter().max().unwrap();
    let dm = DiscreteModel::new(exp.model.clone(), cfg.scheme, exp.h).expect("validated step");
    let data = generate_data(exp, &dm, &truth, n_max);
    let mut out = Vec::new();
    for &r in &exp.counts {
        for &n_samples in &cfg.n_samples {
            let outcomes = methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let mut o = MethodOutcome {
                        method,
                        mask: None,
                        objective: None,
                        eta: None,
                        simulations: None,
                        status: "ok".into(),
                        wall_time: 0.0,
                    };
                    let res = (|| -> Result<(), (&'static str, String)> {
                        let data = data.as_ref().map_err(|e| ("data_failed", e.clone()))?;
                        let data = truncate(data, n_samples);
                        let p = place_sensors(exp, &dm, method, &truth, n_samples, r, sel_seed)
                            .map_err(|e| ("selection_failed", e))?;
                        o.mask = Some(p.mask.clone());
                        o.objective = p.objective;
                        o.simulations = Some(p.simulations);
                        let est = estimate_with_mask(exp, &dm, &data, &p.mask, &truth, &guess)
                            .map_err(|e| ("estimation_failed", e))?;
                        o.eta = Some(est.eta);
                        Ok(())
                    })();
                    if let Err((tag, msg)) = res {
                        log::warn!("{} r={r} N={n_samples} realization={realization}: {msg}", method.as_str());
                        o.status = tag.into();
                    }
                    o.wall_time = start.elapsed().as_secs_f64();
                    o
                })
                .collect();
            out.push(ComparisonRecord {
                config_hash: exp.hash.clone(),
                r,
                n_samples,
                realization,
                outcomes,
            });
        }
    }
    out
}

/// Runs Methods 1 to 4 on identical truths, guesses, data and seeds.
pub fn compare_methods_records(exp: &Experiment) -> Vec<ComparisonRecord> {
    let mut records: Vec<ComparisonRecord> = (0..exp.config.realizations)
        .into_par_iter()
        .flat_map_iter(|k| compare_realization(exp, k, &Method::COMPARED))
        .collect();
    records.sort_by_key(|r| (r.r, r.n_samples, r.realization));
    records
}

/// Long-format rows, one per method and cell, with `ln η` differences against
/// every compared method.
pub fn write_comparison_csv<W: Write>(records: &[ComparisonRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["config_hash", "r", "n_samples", "realization", "method", "mask", "objective", "eta", "simulations", "status"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(Method::COMPARED.iter().map(|m| format!("log_eta_minus_{}", m.as_str())));
    header.push("wall_time".into());
    w.write_record(&header)?;
    for rec in records {
        for o in &rec.outcomes {
            let mut row = vec![
                rec.config_hash.clone(),
                rec.r.to_string(),
                rec.n_samples.to_string(),
                rec.realization.to_string(),
                o.method.as_str().to_string(),
                o.mask.as_ref().map(|m| m.to_bit_string()).unwrap_or_default(),
                opt(&o.objective),
                opt(&o.eta),
                opt(&o.simulations),
                o.status.clone(),
            ];
            row.extend(Method::COMPARED.iter().map(|&m| opt(&rec.log_eta_difference(o.method, m))));
            row.push(o.wall_time.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the comparison and writes `comparison.csv` to the output directory.
pub fn compare_methods(config: &ExperimentConfig) -> Result<Vec<ComparisonRecord>, HarnessError> {
    let exp = config.prepare()?;
    let records = compare_methods_records(&exp);
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        write_comparison_csv(&records, std::fs::File::create(dir.join("comparison.csv"))?)?;
    }
    Ok(records)
}

/// Median of the finite values, if any.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Drops the trailing `wall_time` column from CSV text.
pub fn strip_timing(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|l| l.rsplit_once(',').map(|(a, _)| a).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_laws() {
        let m = bundled::hill5().model;
        let x = generate_truth(&m, InitLaw::OnePlusUniform, 3);
        assert!(x.iter().all(|&v| v > 1.0 && v < 2.0));
        let x = generate_truth(&m, InitLaw::Uniform01, 3);
        assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_ne!(generate_truth(&m, InitLaw::Uniform01, 3), generate_truth(&m, InitLaw::Uniform01, 4));
        let (t, g) = realization_states(5, InitLaw::Uniform01, 3, 0);
        assert_ne!(t, g);
    }

    #[test]
    fn probabilities() {
        let forced = |bits: &[bool]| SensorMask::new(bits.to_vec());
        let results = vec![
            (0.5, forced(&[true, false, true, false])),
            (1.0, forced(&[true, false, false, true])),
        ];
        let p = selection_probabilities(&results).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.5, 0.5]);
        // several results within one f are averaged first
        let results = vec![
            (0.5, forced(&[true, false])),
            (0.5, forced(&[false, true])),
            (1.0, forced(&[true, true])),
        ];
        assert_eq!(selection_probabilities(&results).unwrap(), vec![0.75, 0.75]);
        assert!(selection_probabilities(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new("hill5", vec![10], vec![0.4]);
        assert_eq!(cfg.prepare().unwrap().counts, vec![2]);
        cfg.sensors = Some(vec![1]);
        assert!(cfg.prepare().is_err());
        cfg.fractions = None;
        assert!(cfg.prepare().is_ok());
        cfg.realizations = 0;
        assert!(cfg.prepare().is_err());
        cfg.realizations = 1;
        cfg.n_samples.clear();
        assert!(cfg.prepare().is_err());
        assert!(ExperimentConfig::from_toml("model = 'hill5'\nn_samples = [5]\nbogus = 1").is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let text = "model = 'hill5'\nn_samples = [10, 20]\nfractions = [0.4]\nmethod = 'jacobian-stochastic'\ndata = 'same_model'\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.method, Method::JacobianStochastic);
        assert_eq!(cfg.data, DataSource::SameModel);
        let again = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let mut other = cfg.clone();
        other.output_dir = Some("elsewhere".into());
        assert_eq!(cfg.hash(), other.hash());
        other.seed = 1;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn structure_of_cd_toy() {
        let m = bundled::cd_toy().model;
        let s = StructuralConstraints::from_model(&m, 0);
        let f = m.node_index("F").unwrap();
        assert_eq!(s.root_groups, vec![vec![f]]);
        let c = s.constraints(2);
        assert_eq!(c.cover_groups, vec![vec![f]]);
    }

    #[test]
    fn strip_timing_drops_last_column() {
        assert_eq!(strip_timing("a,b,t\n1,2,0.5"), "a,b\n1,2");
    }
}
