//! High-precision ground truth for the online problem: the consensus optimum
//! trajectory `x*(t_k)`, the relaxed optimum trajectory `xtilde(t_k)`, and the
//! measured drift constants `sigma` and `sigma'`.
//!
//! The consensus optimum solves the centralized aggregate problem with a
//! proximal-gradient loop; the relaxed optimum is the fixed point of the exact
//! DPGM map itself, so it is found by iterating that map to tolerance. Both
//! solves warm-start from the previous time step.

use std::io;

use nalgebra::DVector;
use thiserror::Error;

use crate::bounds::check_step_size;
use crate::network::ConsensusNetwork;
use crate::problems::{soft_threshold, ProblemSequence};
use crate::solvers::{dpgm_step, SolverError, StepDraws};
use crate::stacked;

pub const DEFAULT_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{what} solve at k = {k} hit the iteration cap with residual {residual:.3e}")]
    IterationCap { what: &'static str, k: usize, residual: f64 },
    #[error("step size {alpha} violates the relaxed-problem bound {bound}; the exact DPGM map only contracts below it")]
    StepSize { alpha: f64, bound: f64 },
    #[error("network has {net} nodes, problem has {problem}")]
    NodeMismatch { net: usize, problem: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Solves the centralized problem `min_x sum_i f_i(x;t_k) + g_i(x;t_k)` to the
/// given fixed-point tolerance. Unique by strong convexity.
pub fn solve_consensus_optimum(
    seq: &ProblemSequence,
    k: usize,
    tol: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<DVector<f64>, OracleError> {
    let dim = seq.dim();
    let step = 1.0
        / (0..seq.node_count())
            .map(|i| seq.local(i).smooth.lipschitz())
            .sum::<f64>();
    let weight = seq.aggregate_l1_weight();
    let tau = step * weight;

    let mut x = warm_start.cloned().unwrap_or_else(|| DVector::zeros(dim));
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut grad = DVector::zeros(dim);
        for i in 0..seq.node_count() {
            grad += seq.local(i).smooth.gradient(&x, k);
        }
        let y = &x - step * grad;
        let x_next = if weight > 0.0 { y.map(|v| soft_threshold(v, tau)) } else { y };
        residual = (&x_next - &x).norm();
        x = x_next;
        if residual <= tol {
            return Ok(x);
        }
    }
    Err(OracleError::IterationCap { what: "consensus optimum", k, residual })
}

/// Solves the relaxed problem at `t_k` by iterating the exact DPGM map until
/// the fixed-point residual drops below `tol`. Requires a step size under the
/// relaxed-problem bound so the map contracts.
pub fn solve_relaxed_optimum(
    seq: &ProblemSequence,
    net: &ConsensusNetwork,
    k: usize,
    alpha: f64,
    tol: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<DVector<f64>, OracleError> {
    if net.node_count() != seq.node_count() {
        return Err(OracleError::NodeMismatch {
            net: net.node_count(),
            problem: seq.node_count(),
        });
    }
    let agg = seq.constants();
    let check = check_step_size(alpha, agg.lf, agg.mf, net.lambda_min());
    if !check.relaxed_ok {
        return Err(OracleError::StepSize { alpha, bound: check.relaxed_bound });
    }

    let mut x = warm_start.cloned().unwrap_or_else(|| DVector::zeros(seq.stacked_dim()));
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let next = dpgm_step(&x, seq, k, net, alpha, &StepDraws::exact())?.x_next;
        residual = (&next - &x).norm();
        x = next;
        if residual <= tol {
            return Ok(x);
        }
    }
    Err(OracleError::IterationCap { what: "relaxed optimum", k, residual })
}

/// Measured drift constants over a finite horizon: the largest consecutive
/// displacement of either optimal trajectory (`sigma`, with `x*` lifted to the
/// network), and the largest `||(I - W) xtilde(t_k)||` (`sigma'`).
pub fn drift_constants(
    x_star: &[DVector<f64>],
    x_tilde: &[DVector<f64>],
    net: &ConsensusNetwork,
) -> (f64, f64) {
    assert_eq!(x_star.len(), x_tilde.len());
    let n = net.node_count();
    let mut sigma = 0.0f64;
    for k in 1..x_star.len() {
        let star_drift = (n as f64).sqrt() * (&x_star[k] - &x_star[k - 1]).norm();
        let tilde_drift = (&x_tilde[k] - &x_tilde[k - 1]).norm();
        sigma = sigma.max(star_drift).max(tilde_drift);
    }
    let sigma_prime = x_tilde
        .iter()
        .map(|xt| {
            let dim = xt.len() / n;
            (xt - net.mix(xt, dim)).norm()
        })
        .fold(0.0f64, f64::max);
    (sigma, sigma_prime)
}

/// Ground-truth trajectories over a horizon, with the drift constants the
/// online theory consumes. The relaxed optimum depends on the step size, so
/// the trajectory is tied to one `alpha`.
#[derive(Debug, Clone)]
pub struct OracleTrajectory {
    pub alpha: f64,
    pub tol: f64,
    node_count: usize,
    x_star: Vec<DVector<f64>>,
    x_tilde: Vec<DVector<f64>>,
    iw_xtilde_norms: Vec<f64>,
    pub sigma: f64,
    pub sigma_prime: f64,
}

impl OracleTrajectory {
    /// Solves both trajectories for every time step of the sequence.
    pub fn compute(
        seq: &ProblemSequence,
        net: &ConsensusNetwork,
        alpha: f64,
        tol: f64,
    ) -> Result<Self, OracleError> {
        let horizon = seq.horizon();
        let dim = seq.dim();
        let mut x_star = Vec::with_capacity(horizon);
        let mut x_tilde = Vec::with_capacity(horizon);
        let mut iw_xtilde_norms = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let star = solve_consensus_optimum(seq, k, tol, x_star.last())?;
            let tilde = solve_relaxed_optimum(seq, net, k, alpha, tol, x_tilde.last())?;
            iw_xtilde_norms.push((&tilde - net.mix(&tilde, dim)).norm());
            x_star.push(star);
            x_tilde.push(tilde);
        }
        let (sigma, sigma_prime) = drift_constants(&x_star, &x_tilde, net);
        Ok(OracleTrajectory {
            alpha,
            tol,
            node_count: net.node_count(),
            x_star,
            x_tilde,
            iw_xtilde_norms,
            sigma,
            sigma_prime,
        })
    }

    pub fn horizon(&self) -> usize {
        self.x_star.len()
    }

    /// The consensus optimum at `t_k` (one per-node block).
    pub fn x_star(&self, k: usize) -> &DVector<f64> {
        &self.x_star[k]
    }

    /// The consensus optimum lifted to the network: `1 (x) x*(t_k)`.
    pub fn x_star_lifted(&self, k: usize) -> DVector<f64> {
        stacked::lift(&self.x_star[k], self.node_count)
    }

    /// The relaxed optimum at `t_k` (stacked, generally non-consensus).
    pub fn x_tilde(&self, k: usize) -> &DVector<f64> {
        &self.x_tilde[k]
    }

    /// `||(I - W) xtilde(t_k)||`, the per-step relaxation residual.
    pub fn iw_xtilde_norm(&self, k: usize) -> f64 {
        self.iw_xtilde_norms[k]
    }

    /// Streams one trajectory as CSV with columns `k,component,value`.
    pub fn write_x_star_csv<W: io::Write>(&self, w: W) -> io::Result<()> {
        write_trajectory_csv(&self.x_star, w)
    }

    pub fn write_x_tilde_csv<W: io::Write>(&self, w: W) -> io::Result<()> {
        write_trajectory_csv(&self.x_tilde, w)
    }
}

fn write_trajectory_csv<W: io::Write>(traj: &[DVector<f64>], mut w: W) -> io::Result<()> {
    writeln!(w, "k,component,value")?;
    for (k, v) in traj.iter().enumerate() {
        for (c, value) in v.iter().enumerate() {
            writeln!(w, "{k},{c},{value}")?;
        }
    }
    Ok(())
}
