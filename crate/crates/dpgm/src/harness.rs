//! Monte Carlo experiment execution: sweeps over (topology, solver, noise)
//! grids with seeded replicates, per-step metrics, optional theory-bound
//! traces, CSV output, and summary tables.
//!
//! Seeding: every stream is a pure function of the master seed and stable
//! indices, so adding replicates never perturbs existing ones, and two runs of
//! the same config produce byte-identical output. Scenario and noise streams
//! do not depend on the topology or solver index, so cells are paired across
//! those axes (common random numbers).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{
    check_step_size, empirical_error_vector, output_bound, suggested_alpha, ErrorBoundSystem,
    TheoryConstants,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::network::{
    build_topology, metropolis_hastings, spectral_check, ConsensusNetwork, NetworkError,
};
use crate::oracle::{solve_consensus_optimum, OracleError, OracleTrajectory};
use crate::problems::{generate_sparse_regression, ProblemError, SparseRegressionScenario};
use crate::solvers::{
    run_online, Algorithm, DivergencePoint, SolverConfig, SolverError, StepSizePolicy,
};
use crate::stacked;

const TOPOLOGY_STREAM: u64 = 1;
const SCENARIO_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("oracle failed for replicate {replicate}: {source}")]
    Oracle {
        replicate: usize,
        #[source]
        source: OracleError,
    },
    #[error("worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from the master seed and a path of
/// stable indices.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p));
    }
    state
}

/// One grid cell: a (topology, solver, noise) combination with its resolved
/// step size.
#[derive(Debug, Clone)]
pub struct CellSpec {
    pub index: usize,
    pub id: String,
    pub topology_index: usize,
    pub topology: String,
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub inner_steps: usize,
    pub noise_index: usize,
    pub noise_id: String,
    pub reset_baseline_memory: bool,
    pub enforce_step_size: bool,
}

/// Per-replicate metrics of one cell.
#[derive(Debug, Clone)]
pub struct MetricSeries {
    /// `||x(t_k) - 1 (x) x*(t_k)||` per step.
    pub err: Vec<f64>,
    /// Cumulative tracking error: the running mean of `err[0..=k]`.
    pub cumulative: Vec<f64>,
    /// Empirical error vectors (needs tracked bounds).
    pub d_emp: Option<Vec<Vector3<f64>>>,
    /// Theory-bound recursion values (needs tracked bounds).
    pub d_bound: Option<Vec<Vector3<f64>>>,
    pub diverged: Option<DivergencePoint>,
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub series: MetricSeries,
    /// Reason the bound columns are missing, when they were requested.
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReplicateData {
    pub cells: Vec<CellRun>,
}

#[derive(Debug, Clone)]
pub struct CellSummary {
    pub cell: usize,
    /// Final cumulative tracking error of every completed replicate.
    pub finals: Vec<f64>,
    pub mean_final: f64,
    pub stderr_final: f64,
    pub completed_runs: usize,
    pub divergent_runs: usize,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub master_seed: u64,
    pub monte_carlo_runs: usize,
    pub horizon: usize,
    pub cells: Vec<CellSpec>,
    pub replicates: Vec<ReplicateData>,
    pub summaries: Vec<CellSummary>,
    pub warnings: Vec<String>,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn resolve_cells(
    config: &ExperimentConfig,
    nets: &[(String, ConsensusNetwork)],
) -> Result<Vec<CellSpec>, HarnessError> {
    let (lf, mf, _) = config.scenario.constants();
    let mut cells = Vec::new();
    for (t_idx, (label, net)) in nets.iter().enumerate() {
        for solver in &config.solver {
            let algorithm = solver.resolve_algorithm()?;
            let alpha = solver
                .alpha
                .unwrap_or_else(|| suggested_alpha(lf, mf, net.lambda_min()));
            for (n_idx, noise) in config.noise.iter().enumerate() {
                let index = cells.len();
                cells.push(CellSpec {
                    index,
                    id: format!("cell{index:03}"),
                    topology_index: t_idx,
                    topology: label.clone(),
                    algorithm,
                    alpha,
                    inner_steps: solver.inner_steps,
                    noise_index: n_idx,
                    noise_id: noise.id.clone(),
                    reset_baseline_memory: solver.reset_baseline_memory,
                    enforce_step_size: solver.enforce_step_size,
                });
            }
        }
    }
    Ok(cells)
}

fn build_networks(
    config: &ExperimentConfig,
) -> Result<Vec<(String, ConsensusNetwork)>, HarnessError> {
    config
        .topology
        .iter()
        .enumerate()
        .map(|(t_idx, t)| {
            let kind = t.resolve()?;
            let seed = derive_seed(config.master_seed, &[TOPOLOGY_STREAM, t_idx as u64]);
            let topology = build_topology(kind, config.scenario.nodes, seed)?;
            Ok((t.label(), metropolis_hastings(&topology)))
        })
        .collect()
}

fn scenario_seed(config: &ExperimentConfig, replicate: usize) -> u64 {
    let tag = if config.shared_scenario { 0 } else { replicate as u64 };
    derive_seed(config.master_seed, &[SCENARIO_STREAM, tag])
}

fn generate_scenario(
    config: &ExperimentConfig,
    replicate: usize,
) -> Result<SparseRegressionScenario, HarnessError> {
    let s = &config.scenario;
    Ok(generate_sparse_regression(
        s.nodes,
        s.dim,
        s.rows(),
        s.horizon,
        s.params(),
        scenario_seed(config, replicate),
    )?)
}

/// The theory-bound recursion over a horizon, seeded from the initial state's
/// error vector. The first interval carries no drift (the initial condition is
/// measured against the same cost it is about to solve); subsequent intervals
/// add the measured drift.
fn bound_recursion(
    system: &ErrorBoundSystem,
    inner_steps: usize,
    oracle: &OracleTrajectory,
    eta: f64,
    initial: &DVector<f64>,
) -> Vec<Vector3<f64>> {
    let horizon = oracle.horizon();
    let mut out = Vec::with_capacity(horizon);
    let d0 = empirical_error_vector(initial, oracle.x_star(0), oracle.x_tilde(0));
    let mut d = system.online_step(&d0, inner_steps, 0.0, oracle.sigma_prime, eta);
    out.push(d);
    for _ in 1..horizon {
        d = system.online_step(&d, inner_steps, oracle.sigma, oracle.sigma_prime, eta);
        out.push(d);
    }
    out
}

struct ReplicateContext<'a> {
    config: &'a ExperimentConfig,
    nets: &'a [(String, ConsensusNetwork)],
    cells: &'a [CellSpec],
}

fn run_replicate(ctx: &ReplicateContext<'_>, replicate: usize) -> Result<ReplicateData, HarnessError> {
    let config = ctx.config;
    let scenario = generate_scenario(config, replicate)?;
    let seq = scenario.problem_sequence()?;
    let stacked_dim = seq.stacked_dim();
    let horizon = seq.horizon();
    let tol = config.oracle.tol;

    // The consensus optimum trajectory is shared by every cell.
    let mut x_star: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let star = solve_consensus_optimum(&seq, k, tol, x_star.last())
            .map_err(|source| HarnessError::Oracle { replicate, source })?;
        x_star.push(star);
    }
    let lifted_star: Vec<DVector<f64>> =
        x_star.iter().map(|s| stacked::lift(s, seq.node_count())).collect();

    // Relaxed-optimum oracles are per (topology, alpha); a failure degrades
    // the affected cells to tracking-error-only metrics with a recorded note.
    let mut oracles: HashMap<(usize, u64), Result<OracleTrajectory, String>> = HashMap::new();
    if config.oracle.track_bounds {
        for cell in ctx.cells {
            let key = (cell.topology_index, cell.alpha.to_bits());
            oracles.entry(key).or_insert_with(|| {
                OracleTrajectory::compute(&seq, &ctx.nets[cell.topology_index].1, cell.alpha, tol)
                    .map_err(|e| e.to_string())
            });
        }
    }

    let agg = seq.constants();
    let mut cell_runs = Vec::with_capacity(ctx.cells.len());
    for cell in ctx.cells {
        let net = &ctx.nets[cell.topology_index].1;
        let noise = config.noise[cell.noise_index].model(stacked_dim)?;
        let solver_config = SolverConfig {
            algorithm: cell.algorithm,
            alpha: cell.alpha,
            inner_steps: cell.inner_steps,
            seed: derive_seed(
                config.master_seed,
                &[NOISE_STREAM, cell.noise_index as u64, replicate as u64],
            ),
            initial_state: None,
            record_inner: false,
            reset_baseline_memory: cell.reset_baseline_memory,
            step_size_policy: if cell.enforce_step_size {
                StepSizePolicy::Enforce
            } else {
                StepSizePolicy::Warn
            },
        };
        let traj = run_online(&seq, net, &solver_config, &noise)?;

        let mut err = Vec::with_capacity(traj.states.len());
        let mut cumulative = Vec::with_capacity(traj.states.len());
        let mut sum = 0.0;
        for (k, state) in traj.states.iter().enumerate() {
            let e = (state - &lifted_star[k]).norm();
            sum += e;
            err.push(e);
            cumulative.push(sum / (k + 1) as f64);
        }

        let mut note = traj.step_size_warning.clone().map(|w| format!("{}: {w}", cell.id));
        let (d_emp, d_bound) = if config.oracle.track_bounds {
            match &oracles[&(cell.topology_index, cell.alpha.to_bits())] {
                Ok(oracle) => {
                    let d_emp: Vec<Vector3<f64>> = traj
                        .states
                        .iter()
                        .enumerate()
                        .map(|(k, state)| {
                            empirical_error_vector(state, oracle.x_star(k), oracle.x_tilde(k))
                        })
                        .collect();
                    match TheoryConstants::compute(net, &agg, cell.alpha) {
                        Ok(tc) => {
                            let system = ErrorBoundSystem::new(tc);
                            let eta = noise.combined_eta(cell.alpha);
                            let trace = bound_recursion(
                                &system,
                                cell.inner_steps,
                                oracle,
                                eta,
                                &traj.initial,
                            );
                            (Some(d_emp), Some(trace))
                        }
                        Err(e) => {
                            note = Some(format!("{}: bound constants unavailable: {e}", cell.id));
                            (Some(d_emp), None)
                        }
                    }
                }
                Err(reason) => {
                    note = Some(format!("{}: relaxed oracle failed: {reason}", cell.id));
                    (None, None)
                }
            }
        } else {
            (None, None)
        };

        cell_runs.push(CellRun {
            series: MetricSeries { err, cumulative, d_emp, d_bound, diverged: traj.diverged },
            note,
        });
    }
    Ok(ReplicateData { cells: cell_runs })
}

fn run_replicates<F>(runs: usize, worker: F) -> Result<Vec<ReplicateData>, HarnessError>
where
    F: Fn(usize) -> Result<ReplicateData, HarnessError> + Sync,
{
    let compute = || (0..runs).into_par_iter().map(&worker).collect::<Result<Vec<_>, _>>();
    match std::env::var("DPGM_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(workers) if workers >= 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::ThreadPool(e.to_string()))?
            .install(compute),
        _ => compute(),
    }
}

/// Runs the full grid: every (topology, solver, noise) cell across all Monte
/// Carlo replicates. Deterministic in the master seed; replicates execute in
/// parallel (worker count overridable through `DPGM_WORKERS`).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let nets = build_networks(config)?;
    let cells = resolve_cells(config, &nets)?;
    let ctx = ReplicateContext { config, nets: &nets, cells: &cells };
    let replicates = run_replicates(config.monte_carlo_runs, |r| run_replicate(&ctx, r))?;

    let horizon = config.scenario.horizon;
    let mut summaries = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut finals = Vec::new();
        let mut divergent = 0usize;
        for rep in &replicates {
            let run = &rep.cells[cell.index];
            if run.series.diverged.is_some() {
                divergent += 1;
            } else if run.series.err.len() == horizon {
                finals.push(*run.series.cumulative.last().expect("nonempty series"));
            }
        }
        let (mean_final, stderr_final) = mean_stderr(&finals);
        summaries.push(CellSummary {
            cell: cell.index,
            completed_runs: finals.len(),
            finals,
            mean_final,
            stderr_final,
            divergent_runs: divergent,
        });
    }

    let mut warnings: BTreeSet<String> = BTreeSet::new();
    for rep in &replicates {
        for run in &rep.cells {
            if let Some(note) = &run.note {
                warnings.insert(note.clone());
            }
        }
    }

    Ok(ExperimentOutcome {
        master_seed: config.master_seed,
        monte_carlo_runs: config.monte_carlo_runs,
        horizon,
        cells,
        replicates,
        summaries,
        warnings: warnings.into_iter().collect(),
    })
}

const RESULTS_HEADER: &str = "cell_id,algorithm,topology,Mo,alpha,noise_id,replicate,k,err,E_k,d1,d2,d3,bound_d1,bound_d2,bound_d3,bound_out";

impl ExperimentOutcome {
    pub fn cell_summary(&self, cell: usize) -> &CellSummary {
        &self.summaries[cell]
    }

    /// Finds the unique cell matching a predicate; panics when ambiguous.
    pub fn find_cell<P: Fn(&CellSpec) -> bool>(&self, predicate: P) -> &CellSpec {
        let mut matches = self.cells.iter().filter(|c| predicate(c));
        let first = matches.next().expect("no matching cell");
        assert!(matches.next().is_none(), "cell predicate is ambiguous");
        first
    }

    /// The long-format results table, one row per (cell, replicate, k).
    pub fn results_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(RESULTS_HEADER);
        out.push('\n');
        for cell in &self.cells {
            for (r, rep) in self.replicates.iter().enumerate() {
                let run = &rep.cells[cell.index];
                for k in 0..run.series.err.len() {
                    let _ = write!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{}",
                        cell.id,
                        cell.algorithm,
                        cell.topology,
                        cell.inner_steps,
                        cell.alpha,
                        cell.noise_id,
                        r,
                        k,
                        run.series.err[k],
                        run.series.cumulative[k]
                    );
                    match (&run.series.d_emp, &run.series.d_bound) {
                        (Some(d), Some(b)) => {
                            let _ = write!(
                                out,
                                ",{},{},{},{},{},{},{}",
                                d[k][0],
                                d[k][1],
                                d[k][2],
                                b[k][0],
                                b[k][1],
                                b[k][2],
                                output_bound(&b[k])
                            );
                        }
                        (Some(d), None) => {
                            let _ = write!(out, ",{},{},{},,,,", d[k][0], d[k][1], d[k][2]);
                        }
                        _ => out.push_str(",,,,,,,"),
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Per-cell bound-trace CSV: per-k means over completed replicates of the
    /// bound recursion and the empirical error vector.
    pub fn bound_trace_csv(&self, cell: usize) -> Option<String> {
        let horizon = self.horizon;
        let complete: Vec<&CellRun> = self
            .replicates
            .iter()
            .map(|rep| &rep.cells[cell])
            .filter(|run| {
                run.series.err.len() == horizon
                    && run.series.d_emp.is_some()
                    && run.series.d_bound.is_some()
            })
            .collect();
        if complete.is_empty() {
            return None;
        }
        let m = complete.len() as f64;
        let mut out = String::from(
            "k,d1_bound,d2_bound,d3_bound,output_bound,d1_emp,d2_emp,d3_emp,output_emp\n",
        );
        for k in 0..horizon {
            let mut bound = Vector3::zeros();
            let mut emp = Vector3::zeros();
            for run in &complete {
                bound += run.series.d_bound.as_ref().unwrap()[k];
                emp += run.series.d_emp.as_ref().unwrap()[k];
            }
            bound /= m;
            emp /= m;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                k,
                bound[0],
                bound[1],
                bound[2],
                output_bound(&bound),
                emp[0],
                emp[1],
                emp[2],
                output_bound(&emp)
            );
        }
        Some(out)
    }

    /// Writes `results.csv`, `summary.txt`, and any per-cell bound traces.
    pub fn write_all(&self, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        let results = out_dir.join("results.csv");
        fs::write(&results, self.results_csv())?;
        written.push(results);
        let summary = out_dir.join("summary.txt");
        fs::write(&summary, summarize(self))?;
        written.push(summary);
        for cell in &self.cells {
            if let Some(csv) = self.bound_trace_csv(cell.index) {
                let path = out_dir.join(format!("bounds_{}.csv", cell.id));
                fs::write(&path, csv)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Renders the human-readable summary: per-cell statistics, per-topology
/// rankings, and plateau detection over the inner-step axis.
pub fn summarize(outcome: &ExperimentOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment summary");
    let _ = writeln!(out, "==================");
    let _ = writeln!(
        out,
        "monte-carlo runs: {}, master seed: {}, horizon: {}",
        outcome.monte_carlo_runs, outcome.master_seed, outcome.horizon
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<9} {:<9} {:<14} {:>4} {:>10} {:<14} {:>12} {:>12} {:>10}",
        "cell", "algo", "topology", "Mo", "alpha", "noise", "mean E_K", "stderr", "divergent"
    );
    for cell in &outcome.cells {
        let s = &outcome.summaries[cell.index];
        let _ = writeln!(
            out,
            "{:<9} {:<9} {:<14} {:>4} {:>10.6} {:<14} {:>12.6e} {:>12.6e} {:>7}/{}",
            cell.id,
            cell.algorithm.label(),
            cell.topology,
            cell.inner_steps,
            cell.alpha,
            cell.noise_id,
            s.mean_final,
            s.stderr_final,
            s.divergent_runs,
            outcome.monte_carlo_runs
        );
    }

    // Ranking per topology.
    let mut by_topology: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for cell in &outcome.cells {
        by_topology.entry(&cell.topology).or_default().push(cell.index);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "ranking per topology (ascending mean E_K):");
    for (topology, mut indices) in by_topology {
        indices.sort_by(|&a, &b| {
            outcome.summaries[a]
                .mean_final
                .partial_cmp(&outcome.summaries[b].mean_final)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let ranked: Vec<String> = indices
            .iter()
            .map(|&i| {
                let c = &outcome.cells[i];
                let s = &outcome.summaries[i];
                if s.divergent_runs > 0 && s.completed_runs == 0 {
                    format!("{} (Mo={}, divergent)", c.algorithm.label(), c.inner_steps)
                } else {
                    format!("{} (Mo={}, {:.4e})", c.algorithm.label(), c.inner_steps, s.mean_final)
                }
            })
            .collect();
        let _ = writeln!(out, "  {topology}: {}", ranked.join(" < "));
    }

    // Plateau detection over groups that vary only in the inner-step count.
    let mut groups: BTreeMap<(usize, &str, usize), Vec<usize>> = BTreeMap::new();
    for cell in &outcome.cells {
        groups
            .entry((cell.topology_index, cell.algorithm.label(), cell.noise_index))
            .or_default()
            .push(cell.index);
    }
    let mut plateau_lines = Vec::new();
    for ((_, algo, _), mut indices) in groups {
        if indices.len() < 2 {
            continue;
        }
        indices.sort_by_key(|&i| outcome.cells[i].inner_steps);
        let first = &outcome.cells[indices[0]];
        let label = format!("{}/{}/{}", algo, first.topology, first.noise_id);
        let mut plateau = None;
        for pair in indices.windows(2) {
            let (a, b) = (&outcome.summaries[pair[0]], &outcome.summaries[pair[1]]);
            if !a.mean_final.is_finite() || !b.mean_final.is_finite() {
                continue;
            }
            let improvement = (a.mean_final - b.mean_final) / a.mean_final;
            if improvement < 0.05 {
                plateau = Some((
                    outcome.cells[pair[0]].inner_steps,
                    a.mean_final,
                    outcome.cells[pair[1]].inner_steps,
                    b.mean_final,
                ));
                break;
            }
        }
        match plateau {
            Some((mo_a, e_a, mo_b, e_b)) => plateau_lines.push(format!(
                "  {label}: plateau from Mo = {mo_a} ({e_a:.4e} -> {e_b:.4e} at Mo = {mo_b})"
            )),
            None => plateau_lines
                .push(format!("  {label}: no plateau within the configured Mo grid")),
        }
    }
    if !plateau_lines.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "plateau detection (< 5% relative improvement):");
        for line in plateau_lines {
            let _ = writeln!(out, "{line}");
        }
    }

    if !outcome.warnings.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "warnings:");
        for w in &outcome.warnings {
            let _ = writeln!(out, "  {w}");
        }
    }
    out
}

/// Bound-only evaluation: the theory recursion per cell without running any
/// solver. Uses the replicate-0 scenario.
pub struct BoundsOnlyReport {
    pub cells: Vec<CellSpec>,
    pub traces: Vec<Option<Vec<Vector3<f64>>>>,
    pub warnings: Vec<String>,
}

impl BoundsOnlyReport {
    pub fn csv(&self, cell: usize) -> Option<String> {
        let trace = self.traces[cell].as_ref()?;
        let mut out = String::from(
            "k,d1_bound,d2_bound,d3_bound,output_bound,d1_emp,d2_emp,d3_emp,output_emp\n",
        );
        for (k, d) in trace.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},,,,",
                k,
                d[0],
                d[1],
                d[2],
                output_bound(d)
            );
        }
        Some(out)
    }

    pub fn write_all(&self, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        for cell in &self.cells {
            if let Some(csv) = self.csv(cell.index) {
                let path = out_dir.join(format!("bounds_{}.csv", cell.id));
                fs::write(&path, csv)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

pub fn run_bounds_only(config: &ExperimentConfig) -> Result<BoundsOnlyReport, HarnessError> {
    config.validate()?;
    let nets = build_networks(config)?;
    let cells = resolve_cells(config, &nets)?;
    let scenario = generate_scenario(config, 0)?;
    let seq = scenario.problem_sequence()?;
    let agg = seq.constants();
    let tol = config.oracle.tol;

    let mut oracles: HashMap<(usize, u64), Result<OracleTrajectory, String>> = HashMap::new();
    let mut traces = Vec::with_capacity(cells.len());
    let mut warnings = Vec::new();
    for cell in &cells {
        let net = &nets[cell.topology_index].1;
        let key = (cell.topology_index, cell.alpha.to_bits());
        let oracle = oracles.entry(key).or_insert_with(|| {
            OracleTrajectory::compute(&seq, net, cell.alpha, tol).map_err(|e| e.to_string())
        });
        match oracle {
            Ok(oracle) => match TheoryConstants::compute(net, &agg, cell.alpha) {
                Ok(tc) => {
                    let noise = config.noise[cell.noise_index].model(seq.stacked_dim())?;
                    let eta = noise.combined_eta(cell.alpha);
                    let system = ErrorBoundSystem::new(tc);
                    let initial = DVector::zeros(seq.stacked_dim());
                    traces.push(Some(bound_recursion(
                        &system,
                        cell.inner_steps,
                        oracle,
                        eta,
                        &initial,
                    )));
                }
                Err(e) => {
                    warnings.push(format!("{}: bound constants unavailable: {e}", cell.id));
                    traces.push(None);
                }
            },
            Err(reason) => {
                warnings.push(format!("{}: relaxed oracle failed: {reason}", cell.id));
                traces.push(None);
            }
        }
    }
    Ok(BoundsOnlyReport { cells, traces, warnings })
}

/// Ground-truth export for the first topology and first solver cell, on the
/// replicate-0 scenario.
pub fn compute_reference_oracle(
    config: &ExperimentConfig,
) -> Result<(OracleTrajectory, String), HarnessError> {
    config.validate()?;
    let nets = build_networks(config)?;
    let cells = resolve_cells(config, &nets)?;
    let scenario = generate_scenario(config, 0)?;
    let seq = scenario.problem_sequence()?;
    let cell = &cells[0];
    let oracle =
        OracleTrajectory::compute(&seq, &nets[cell.topology_index].1, cell.alpha, config.oracle.tol)
            .map_err(|source| HarnessError::Oracle { replicate: 0, source })?;
    Ok((oracle, cell.topology.clone()))
}

/// Invariant suite over a configured experiment: network structure, scenario
/// sanity, gradient and prox checks, step sizes, and an oracle probe.
pub struct ValidationReport {
    pub lines: Vec<String>,
    pub ok: bool,
}

pub fn validate_config(config: &ExperimentConfig) -> Result<ValidationReport, HarnessError> {
    use rand::Rng;
    use rand::SeedableRng;

    config.validate()?;
    let mut lines = Vec::new();
    let mut ok = true;
    let fail = |lines: &mut Vec<String>, ok: &mut bool, msg: String| {
        lines.push(format!("FAIL: {msg}"));
        *ok = false;
    };

    let nets = build_networks(config)?;
    for (label, net) in &nets {
        let report = spectral_check(net);
        if report.is_doubly_stochastic && report.sparsity_matches_adjacency {
            lines.push(format!(
                "ok: topology {label}: doubly stochastic (row residual {:.2e}), lambda_min {:.6}, rho {:.6}",
                report.row_sum_residual, report.lambda_min, report.rho
            ));
        } else {
            fail(&mut lines, &mut ok, format!("topology {label}: consensus matrix invalid"));
        }
    }

    let scenario = generate_scenario(config, 0)?;
    let seq = scenario.problem_sequence()?;
    lines.push(format!(
        "ok: scenario: {} nodes, dim {}, {} rows/node, horizon {}, support size {}",
        scenario.node_count,
        scenario.dim,
        scenario.rows_per_node,
        scenario.horizon,
        scenario.support.len()
    ));

    // Gradient finite-difference spot check.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, &[9]));
    let cost = &seq.local(0).smooth;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let x = DVector::from_fn(seq.dim(), |_, _| rng.gen_range(-2.0..2.0));
        let g = cost.gradient(&x, 0);
        for j in 0..seq.dim() {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (cost.value(&xp, 0) - cost.value(&xm, 0)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1.0));
        }
    }
    if worst <= 1e-5 {
        lines.push(format!("ok: gradient matches finite differences (worst rel err {worst:.2e})"));
    } else {
        fail(&mut lines, &mut ok, format!("gradient finite-difference mismatch ({worst:.2e})"));
    }

    // Prox implicit-update spot check.
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let y = DVector::from_fn(seq.stacked_dim(), |_, _| rng.gen_range(-2.0..2.0));
        let alpha = 0.3;
        let x = seq.stacked_prox(&y, alpha, 0);
        worst = worst.max(crate::bounds::l1_implicit_update_violation(&seq, &y, &x, alpha));
    }
    if worst <= 1e-9 {
        lines.push(format!("ok: prox satisfies the implicit-update identity ({worst:.2e})"));
    } else {
        fail(&mut lines, &mut ok, format!("prox implicit-update violation ({worst:.2e})"));
    }

    let agg = seq.constants();
    lines.push(format!("ok: constants Lf {:.6}, mf {:.6e}, Lg {:.6e}", agg.lf, agg.mf, agg.lg));

    let cells = resolve_cells(config, &nets)?;
    for cell in &cells {
        let net = &nets[cell.topology_index].1;
        let check = check_step_size(cell.alpha, agg.lf, agg.mf, net.lambda_min());
        if check.prop_ok {
            lines.push(format!(
                "ok: {} alpha {:.6} within stability bound {:.6}",
                cell.id, cell.alpha, check.prop_bound
            ));
        } else if cell.algorithm == Algorithm::Dpgm && cell.enforce_step_size {
            fail(
                &mut lines,
                &mut ok,
                format!(
                    "{} alphas {:.6} violates the enforced stability bound {:.6}",
                    cell.id, cell.alpha, check.prop_bound
                ),
            );
        } else {
            lines.push(format!(
                "warn: {} alpha {:.6} exceeds the stability bound {:.6}",
                cell.id, cell.alpha, check.prop_bound
            ));
        }
    }

    // Oracle probe on the first cell's topology and step size.
    let cell = &cells[0];
    let probe_tol = config.oracle.tol.max(1e-10);
    match solve_consensus_optimum(&seq, 0, probe_tol, None) {
        Ok(_) => lines.push("ok: consensus optimum solvable at k = 0".into()),
        Err(e) => fail(&mut lines, &mut ok, format!("consensus oracle: {e}")),
    }
    match crate::oracle::solve_relaxed_optimum(
        &seq,
        &nets[cell.topology_index].1,
        0,
        cell.alpha,
        probe_tol,
        None,
    ) {
        Ok(_) => lines.push("ok: relaxed optimum solvable at k = 0".into()),
        Err(e) => fail(&mut lines, &mut ok, format!("relaxed oracle: {e}")),
    }

    Ok(ValidationReport { lines, ok })
}
