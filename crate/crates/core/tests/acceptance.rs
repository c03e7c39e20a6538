//! Acceptance checks. Each test prints one `PASS`/`FAIL` line.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use netobs::bundled;
use netobs::discretize::{count_simulations, simulate, DiscreteModel, Scheme};
use netobs::gramian::{
    analytic_linear_gramian, gramian_def1, gramian_def2, gramian_def3, GramianConfig,
};
use netobs::harness::{
    estimate_with_mask, generate_data, median, place_sensors, realization_states, run_sweep, strip_timing,
    compare_methods, DataSource, ExperimentConfig, InitLaw, Method,
};
use netobs::model::{ContinuousModel, LinearField, LogisticField};
use netobs::oid::{build_oid, sample_states, scc_decompose, Digraph};
use netobs::rng::{stream, Purpose};
use netobs::selection::{
    random_mask, select_exhaustive, select_greedy, selection_objective, GramDecomposition, JacobianObjective,
    MaskObjective, SensorMask,
};
use netobs::sensitivity::{finite_difference_stack, stack_output_jacobian, OutputSpec};

fn report(id: u32, name: &str, ok: bool, details: String) {
    // written past the test harness's capture so the summary shows for passing runs too
    let line = format!("criterion {id:>2} {name}: {} ({details})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {id} failed: {details}");
}

// runtimes are budgeted per criterion, so criteria run one at a time
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

#[test]
fn c01_integrator_orders() {
    let _serial = serial();
    let start = Instant::now();
    let model = LogisticField::model(1);
    let x0 = DVector::from_element(1, 0.5);
    let exact = 1.0 / (1.0 + (-1.0f64).exp());
    let mut ok = true;
    let mut details = Vec::new();
    for (scheme, order, tol) in [(Scheme::Be, 1.0, 0.15), (Scheme::Ti, 2.0, 0.15), (Scheme::Irk, 3.0, 0.25)] {
        let errors: Vec<f64> = (0..5)
            .map(|k| {
                let steps = 10 * (1 << k);
                let dm = DiscreteModel::new(model.clone(), scheme, 1.0 / steps as f64).unwrap();
                let tr = simulate(&dm, &x0, steps + 1).unwrap();
                (tr.last()[0] - exact).abs()
            })
            .collect();
        let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        ok &= orders.iter().all(|p| (p - order).abs() <= tol);
        details.push(format!("{scheme}: {}", orders.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" ")));
    }
    let elapsed = start.elapsed();
    ok &= within(elapsed, 1);
    report(1, "integrator orders", ok, format!("{}; {elapsed:.2?}", details.join("; ")));
}

#[test]
fn c02_jacobian_against_finite_differences() {
    let _serial = serial();
    let start = Instant::now();
    let model = bundled::h2o2_mini().model;
    let x0 = model.default_state().unwrap().clone();
    let h = model.recommended_h().unwrap();
    let n = model.dim();
    let mut worst: f64 = 0.0;
    for scheme in Scheme::ALL {
        let dm = DiscreteModel::new(model.clone(), scheme, h).unwrap();
        let out = OutputSpec::Mask(SensorMask::full(n));
        let stack = stack_output_jacobian(&dm, &x0, 20, &out, true).unwrap();
        let fd = finite_difference_stack(&dm, &x0, 20, &out, true).unwrap();
        let floor = 1e-3 * fd.amax();
        for (a, b) in stack.full.iter().zip(fd.iter()) {
            worst = worst.max((a - b).abs() / b.abs().max(floor));
        }
    }
    let elapsed = start.elapsed();
    report(
        2,
        "Jacobian vs finite differences",
        worst < 1e-5 && within(elapsed, 10),
        format!("max relative error {worst:.2e}; {elapsed:.2?}"),
    );
}

#[test]
fn c03_exact_recovery_and_mismatch_floor() {
    let _serial = serial();
    let start = Instant::now();
    let mut cfg = ExperimentConfig::new("h2o2_mini", vec![50], vec![1.0]);
    cfg.realizations = 50;
    cfg.seed = 3;
    cfg.data = DataSource::SameModel;
    let same = run_sweep(&cfg).unwrap();
    cfg.data = DataSource::Reference;
    let reference = run_sweep(&cfg).unwrap();
    let etas = |recs: &[netobs::harness::RunRecord]| recs.iter().map(|r| r.eta.unwrap_or(f64::NAN)).collect::<Vec<_>>();
    let same_eta = etas(&same);
    let ref_eta = etas(&reference);
    let same_max = same_eta.iter().cloned().fold(0.0, f64::max);
    let ref_min = ref_eta.iter().cloned().fold(f64::INFINITY, f64::min);
    let ref_max = ref_eta.iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let ok = same_eta.len() == 50
        && same_eta.iter().all(|&e| e < 1e-8)
        && ref_eta.iter().all(|&e| e > 0.0 && e < 1e-2)
        && within(elapsed, 120);
    report(
        3,
        "exact recovery",
        ok,
        format!("same-model max η {same_max:.2e}; reference η in [{ref_min:.2e}, {ref_max:.2e}]; {elapsed:.2?}"),
    );
}

#[test]
fn c04_scheme_ordering() {
    let _serial = serial();
    let mut eta = Vec::new();
    let mut xi = Vec::new();
    for scheme in [Scheme::Irk, Scheme::Ti, Scheme::Be] {
        let mut cfg = ExperimentConfig::new("h2o2_mini", vec![50], vec![0.6]);
        cfg.realizations = 20;
        cfg.seed = 4;
        cfg.scheme = scheme;
        let recs = run_sweep(&cfg).unwrap();
        eta.push(median(recs.iter().filter_map(|r| r.eta)).unwrap());
        xi.push(median(recs.iter().filter_map(|r| r.xi)).unwrap());
    }
    let ok = eta[0] <= eta[1] && eta[1] <= eta[2] && xi[0] <= xi[1] && xi[1] <= xi[2];
    report(
        4,
        "scheme ordering",
        ok,
        format!("median η irk/ti/be {:.2e} {:.2e} {:.2e}; median ξ {:.2e} {:.2e} {:.2e}", eta[0], eta[1], eta[2], xi[0], xi[1], xi[2]),
    );
}

#[test]
fn c05_trade_off_direction() {
    let _serial = serial();
    let ns = [25, 50, 100, 200];
    let fs = [0.3, 0.6, 1.0];
    let mut cfg = ExperimentConfig::new("h2o2_mini", ns.to_vec(), fs.to_vec());
    // horizons from 25 h to 200 h span the slow relaxation of the network
    cfg.h = Some(0.03);
    cfg.realizations = 20;
    cfg.seed = 5;
    let recs = run_sweep(&cfg).unwrap();
    let n_nodes = 9;
    let table: Vec<Vec<f64>> = fs
        .iter()
        .map(|&f| {
            let r = ((f * n_nodes as f64).round()) as usize;
            ns.iter()
                .map(|&n| median(recs.iter().filter(|x| x.r == r && x.n_samples == n).filter_map(|x| x.eta)).unwrap())
                .collect()
        })
        .collect();
    let band = 1.1;
    let in_n = table.iter().all(|row| row.windows(2).all(|w| w[1] <= band * w[0]));
    let in_f = (0..ns.len()).all(|j| table.windows(2).all(|w| w[1][j] <= band * w[0][j]));
    let rows: Vec<String> = table
        .iter()
        .zip(fs)
        .map(|(row, f)| format!("f={f}: {}", row.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")))
        .collect();
    report(5, "trade-off direction", in_n && in_f, format!("median η over N {ns:?}: {}", rows.join("; ")));
}

fn stable_linear(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
    let k = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    // symmetric part ≤ −I, so the horizon sees full decay
    -DMatrix::identity(n, n) - &b * b.transpose() + (&k - k.transpose())
}

#[test]
fn c06_linear_gramian_equivalence() {
    let _serial = serial();
    let start = Instant::now();
    let n = 5;
    let a = stable_linear(n, 6);
    let model = LinearField::model(a.clone()).unwrap();
    let mut c = DMatrix::zeros(2, n);
    c[(0, 0)] = 1.0;
    c[(1, 2)] = 1.0;
    let tau = 20.0;
    let exact = analytic_linear_gramian(&a, &c, tau).unwrap();
    let x0 = DVector::from_fn(n, |i, _| 0.3 * (i as f64 + 1.0));
    let mut errors = [[0.0; 2]; 3];
    for (k, dt) in [1e-3, 5e-4].into_iter().enumerate() {
        let segments = (tau / dt).round() as usize;
        let mut cfg = GramianConfig::new(x0.clone(), dt, segments);
        cfg.m_set = vec![0.5, 1.0];
        let cfg3 = cfg.clone().with_random_orthogonal(2, 6);
        let g = [
            gramian_def1(&model, &c, &cfg).unwrap(),
            gramian_def2(&model, &c, &cfg).unwrap(),
            gramian_def3(&model, &c, &cfg3).unwrap(),
        ];
        for d in 0..3 {
            errors[d][k] = (&g[d].matrix - &exact).norm() / exact.norm();
        }
    }
    let elapsed = start.elapsed();
    let ratios: Vec<f64> = errors.iter().map(|e| e[0] / e[1]).collect();
    let ok = errors.iter().all(|e| e[0] < 1e-3)
        && ratios.iter().all(|r| (r - 4.0).abs() < 0.5)
        && within(elapsed, 30);
    report(
        6,
        "linear Gramian equivalence",
        ok,
        format!(
            "errors at dt=1e-3: {:.2e} {:.2e} {:.2e}; halving ratios {:.2} {:.2} {:.2}; {elapsed:.2?}",
            errors[0][0], errors[1][0], errors[2][0], ratios[0], ratios[1], ratios[2]
        ),
    );
}

#[test]
fn c07_selection_quality() {
    let _serial = serial();
    let start = Instant::now();
    let mut cfg = ExperimentConfig::new("h2o2_mini", vec![200], vec![]);
    cfg.fractions = None;
    cfg.sensors = Some(vec![4]);
    // 200 samples then span one time constant of the slow modes (about 0.2)
    cfg.h = Some(1e-3);
    cfg.seed = 7;
    let exp = cfg.prepare().unwrap();
    let n = exp.model.dim();
    let dm = DiscreteModel::new(exp.model.clone(), Scheme::Irk, exp.h).unwrap();
    let constraints = exp.structure.constraints(4);
    let n_seeds = 20;
    let eta_seeds = 10;
    let rows: Vec<(bool, bool, bool, f64, f64)> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let (truth, guess) = realization_states(n, InitLaw::OnePlusUniform, cfg.seed, k);
            let objective = JacobianObjective::new(&dm, &truth, 200).unwrap();
            let mut rng = stream(cfg.seed, Purpose::RandomMask, k as u64);
            let randoms: Vec<SensorMask> = (0..100).map(|_| random_mask(n, &constraints, &mut rng).unwrap()).collect();
            let best_random = randoms
                .iter()
                .map(|m| objective.evaluate(m).unwrap())
                .max_by(|a, b| a.compare(b))
                .unwrap();
            let greedy = select_greedy(&objective, &constraints).unwrap();
            let exhaustive = select_exhaustive(&objective, &constraints).unwrap();
            let m3 = place_sensors(&exp, &dm, Method::JacobianStochastic, &truth, 200, 4, cfg.seed + k as u64).unwrap();
            let m3_value = objective.evaluate(&m3.mask).unwrap();
            let greedy_wins = greedy.value.compare(&best_random).is_ge();
            let bounded = exhaustive.value.compare(&greedy.value).is_ge() && exhaustive.value.compare(&m3_value).is_ge();
            if k >= eta_seeds {
                return (greedy_wins, bounded, true, f64::NAN, f64::NAN);
            }
            let data = generate_data(&exp, &dm, &truth, 200).unwrap();
            let eta_m3 = estimate_with_mask(&exp, &dm, &data, &m3.mask, &truth, &guess).unwrap().eta;
            let random_etas: Vec<f64> = randoms
                .iter()
                .map(|m| estimate_with_mask(&exp, &dm, &data, m, &truth, &guess).map(|e| e.eta).unwrap_or(f64::INFINITY))
                .collect();
            let med = median(random_etas.iter().cloned()).unwrap();
            (greedy_wins, bounded, eta_m3 <= med, eta_m3, med)
        })
        .collect();
    let wins = rows.iter().filter(|r| r.0).count();
    let bounded = rows.iter().all(|r| r.1);
    let eta_ok = rows.iter().all(|r| r.2);
    let elapsed = start.elapsed();
    let ratio_worst = rows
        .iter()
        .filter(|r| r.3.is_finite())
        .map(|r| r.3 / r.4)
        .fold(0.0, f64::max);
    report(
        7,
        "selection quality",
        eta_ok && wins * 10 >= n_seeds * 9 && bounded && within(elapsed, 600),
        format!(
            "Method-3 η ≤ random median in {}/{eta_seeds} seeds (worst ratio {ratio_worst:.2e}); greedy ≥ best random in {wins}/{n_seeds}; exhaustive bounds: {bounded}; {elapsed:.2?}",
            rows.iter().take(eta_seeds).filter(|r| r.2).count()
        ),
    );
}

#[test]
fn c08_simulation_counts() {
    let _serial = serial();
    let model = bundled::hill5().model;
    let n = model.dim();
    let x0 = netobs::harness::generate_truth(&model, InitLaw::Uniform01, 8);
    let h = model.recommended_h().unwrap();
    let dm = DiscreteModel::new(model.clone(), Scheme::Irk, h).unwrap();
    let mask = SensorMask::from_indices(n, &[0, 2]).unwrap();
    let (_, jac) = count_simulations(|| selection_objective(&dm, &x0, 30, &mask).unwrap());
    let c = mask.selection_matrix();
    let cfg = GramianConfig::new(x0.clone(), h, 29);
    let v = 2;
    let cfg3 = cfg.clone().with_random_orthogonal(v, 1);
    let s = cfg.m_set.len() as u64;
    let g2 = gramian_def2(&model, &c, &cfg).unwrap().simulations;
    let g3 = gramian_def3(&model, &c, &cfg3).unwrap().simulations;
    let n64 = n as u64;

    let mut cmp = ExperimentConfig::new("hill5", vec![30], vec![0.4]);
    cmp.realizations = 2;
    let records = compare_methods(&cmp).unwrap();
    let sims = |m: Method| records[0].outcome(m).and_then(|o| o.simulations).unwrap();
    let ordered = sims(Method::JacobianStochastic) < sims(Method::Gramian2) && sims(Method::Gramian2) < sims(Method::Gramian3);
    let self_zero = records.iter().all(|r| {
        Method::COMPARED
            .iter()
            .all(|&m| r.log_eta_difference(m, m).map_or(true, |d| d == 0.0))
    });
    let ok = jac == 1 && g2 == 2 * n64 && g3 == 2 * n64 * v as u64 * s && ordered && self_zero;
    report(
        8,
        "simulation counts",
        ok,
        format!(
            "Jacobian {jac}; Def-2 {g2} (2n = {}); Def-3 {g3} (2nvs = {}); harness counts m1/m2/m3/m4 {}/{}/{}/{}",
            2 * n64,
            2 * n64 * v as u64 * s,
            sims(Method::Gramian2),
            sims(Method::Gramian3),
            sims(Method::JacobianStochastic),
            sims(Method::JacobianGreedy)
        ),
    );
}

fn naive_sccs(g: &Digraph) -> BTreeSet<BTreeSet<usize>> {
    let n = g.n();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for v in g.successors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen
        })
        .collect();
    (0..n)
        .map(|i| (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect())
        .collect()
}

#[test]
fn c09_oid_structure() {
    let _serial = serial();
    let model = bundled::h2o2_mini().model;
    let g = build_oid(&model, &sample_states(&model, 20, 9), 1e-12).unwrap();
    let scc = scc_decompose(&g);
    let ar = model.node_index("AR").unwrap();
    let h2o2_ok = scc.count() == 2
        && scc.singleton_non_roots() == vec![ar]
        && scc.root_components().len() == 1
        && scc.root_components()[0].len() == 8;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let p = rng.random_range(0.0..4.0) / n as f64;
        let mut g = Digraph::new(n);
        for i in 0..n {
            for j in 0..n {
                if rng.random::<f64>() < p {
                    g.add_edge(i, j);
                }
            }
        }
        let scc = scc_decompose(&g);
        let ours: BTreeSet<BTreeSet<usize>> = scc.components.iter().map(|c| c.iter().copied().collect()).collect();
        let roots_ok = scc.components.iter().enumerate().all(|(k, comp)| {
            let entered = (0..n).any(|u| !comp.contains(&u) && comp.iter().any(|&v| g.has_edge(u, v)));
            scc.is_root[k] == !entered
        });
        if ours != naive_sccs(&g) || !roots_ok {
            mismatches += 1;
        }
    }
    report(
        9,
        "OID and SCCs",
        h2o2_ok && mismatches == 0,
        format!("h2o2_mini components {:?}; random-graph mismatches {mismatches}/200", scc.components),
    );
}

fn monotonicity_violations(objective: &dyn MaskObjective) -> (usize, usize) {
    let n = objective.dim();
    let mut checked = 0;
    let mut violations = 0;
    for bits in 0u32..(1 << n) {
        let mask = SensorMask::new((0..n).map(|i| bits >> i & 1 == 1).collect());
        let base = objective.evaluate(&mask).unwrap();
        for j in (0..n).filter(|&j| !mask.contains(j)) {
            checked += 1;
            if objective.evaluate(&mask.with(j)).unwrap().compare(&base).is_lt() {
                violations += 1;
            }
        }
    }
    (checked, violations)
}

#[test]
fn c10_objective_monotonicity() {
    let _serial = serial();
    let mut instances: Vec<(String, ContinuousModel, f64, usize)> = Vec::new();
    for name in ["hill5", "cd_toy", "mass_spring2", "linear3"] {
        let m = bundled::load(name).unwrap().model;
        let h = m.recommended_h().unwrap_or(0.01);
        instances.push((name.to_string(), m, h, 40));
    }
    for (k, n) in [6, 7, 8].into_iter().enumerate() {
        let m = LinearField::model(stable_linear(n, 100 + k as u64)).unwrap();
        instances.push((format!("linear{n}"), m, 0.05, 30));
    }
    let mut total = (0, 0);
    let mut names = Vec::new();
    for (name, model, h, n_samples) in &instances {
        let n = model.dim();
        let x0 = model
            .default_state()
            .cloned()
            .unwrap_or_else(|| DVector::from_fn(n, |i, _| 0.5 + 0.1 * i as f64));
        let dm = DiscreteModel::new(model.clone(), Scheme::Irk, *h).unwrap();
        let stack = stack_output_jacobian(&dm, &x0, *n_samples, &OutputSpec::Mask(SensorMask::full(n)), false).unwrap();
        let (c, v) = monotonicity_violations(&GramDecomposition::from_j2(&stack.j2));
        total = (total.0 + c, total.1 + v);
        names.push(name.clone());
    }
    let hill = bundled::hill5().model;
    let cfg = GramianConfig::new(netobs::harness::generate_truth(&hill, InitLaw::Uniform01, 10), 0.05, 40);
    let (gram, _) = netobs::gramian::gramian_decomposition(netobs::gramian::Definition::Two, &hill, &cfg).unwrap();
    let (c, v) = monotonicity_violations(&gram);
    total = (total.0 + c, total.1 + v);
    report(
        10,
        "objective monotonicity",
        total.1 == 0,
        format!("{} violations in {} checks over {} and a hill5 Gramian", total.1, total.0, names.join(", ")),
    );
}

#[test]
fn c11_conditioning_trend() {
    let _serial = serial();
    let mut cfg = ExperimentConfig::new("h2o2_mini", vec![50], vec![0.3, 1.0]);
    cfg.realizations = 20;
    cfg.seed = 11;
    let recs = run_sweep(&cfg).unwrap();
    let stat = |r: usize, f: &dyn Fn(&netobs::harness::RunRecord) -> Option<f64>| {
        median(recs.iter().filter(|x| x.r == r).filter_map(f)).unwrap()
    };
    let kappa = |x: &netobs::harness::RunRecord| x.kappa;
    let z = |x: &netobs::harness::RunRecord| x.z.map(|z| z as f64);
    let (k3, k9, z3, z9) = (stat(3, &kappa), stat(9, &kappa), stat(3, &z), stat(9, &z));
    report(
        11,
        "conditioning trend",
        k3 > k9 && z3 > z9,
        format!("median κ {k3:.2e} vs {k9:.2e}; median z {z3} vs {z9}"),
    );
}

#[test]
fn c12_determinism() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new("hill5", vec![20, 40], vec![0.4, 0.8]);
    cfg.realizations = 4;
    cfg.seed = 12;
    cfg.method = Method::JacobianStochastic;
    let read = |cfg: &ExperimentConfig| {
        run_sweep(cfg).unwrap();
        strip_timing(&std::fs::read_to_string(cfg.output_dir.as_ref().unwrap().join("sweep.csv")).unwrap())
    };
    cfg.output_dir = Some(dir.path().join("a"));
    let a = read(&cfg);
    cfg.output_dir = Some(dir.path().join("b"));
    let b = read(&cfg);
    cfg.output_dir = Some(dir.path().join("c"));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| read(&cfg));
    let rows = a.lines().count();
    report(
        12,
        "determinism",
        a == b && a == c && rows == 1 + 2 * 2 * 4,
        format!("{rows} lines; rerun identical: {}; serial identical: {}", a == b, a == c),
    );
}
