//! DPGM, PG-EXTRA and NIDS under a shared online harness, with injectable
//! error sources on communicated states, gradients, and proximal evaluations.
//!
//! One interval of the online loop warm-starts from the previous output and
//! applies a fixed number of inner steps against the cost observed at that
//! time step. The noise model draws one optional error vector per source per
//! inner step, always in the order state, gradient, prox, so trajectories are
//! a pure function of `(seed, config, scenario)`.

use std::io;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bounds::{check_step_size, EtaSpec};
use crate::network::ConsensusNetwork;
use crate::problems::ProblemSequence;

/// States whose norm crosses this threshold are flagged divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-finite value in solver state")]
    NonFiniteState,
    #[error("non-finite value in solver state at interval {k}, inner step {l}")]
    NonFiniteStateAt { k: usize, l: usize },
    #[error("step size {alpha} violates the stability bound {bound}")]
    StepSize { alpha: f64, bound: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("noise variance must be nonnegative, got {0}")]
    NegativeVariance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Dpgm,
    PgExtra,
    Nids,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Dpgm => "dpgm",
            Algorithm::PgExtra => "pg-extra",
            Algorithm::Nids => "nids",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Gaussian error source with independent components.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    mean: DVector<f64>,
    std_dev: DVector<f64>,
}

impl NoiseSource {
    pub fn new(mean: DVector<f64>, variance: DVector<f64>) -> Result<Self, SolverError> {
        if mean.len() != variance.len() {
            return Err(SolverError::Dimension("noise mean and variance disagree".into()));
        }
        if let Some(v) = variance.iter().find(|v| **v < 0.0) {
            return Err(SolverError::NegativeVariance(*v));
        }
        Ok(NoiseSource { mean, std_dev: variance.map(f64::sqrt) })
    }

    /// Same mean and variance on every component.
    pub fn iid(dim: usize, mean: f64, variance: f64) -> Result<Self, SolverError> {
        Self::new(DVector::from_element(dim, mean), DVector::from_element(dim, variance))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Moment bound on `E||e||`: `sqrt(tr(Sigma) + ||mu||^2)`.
    pub fn eta(&self) -> f64 {
        (self.std_dev.iter().map(|s| s * s).sum::<f64>() + self.mean.norm_squared()).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| {
            self.mean[i] + self.std_dev[i] * rng.sample::<f64, _>(StandardNormal)
        })
    }
}

/// The three inexactness sources of one solver run. `None` means that source
/// is exact.
#[derive(Debug, Clone, Default)]
pub struct NoiseModel {
    pub state: Option<NoiseSource>,
    pub gradient: Option<NoiseSource>,
    pub prox: Option<NoiseSource>,
}

impl NoiseModel {
    pub fn exact() -> Self {
        NoiseModel::default()
    }

    /// Zero-mean Gaussian noise on the communicated states only.
    pub fn state_only(dim: usize, variance: f64) -> Result<Self, SolverError> {
        Ok(NoiseModel { state: Some(NoiseSource::iid(dim, 0.0, variance)?), ..Default::default() })
    }

    pub fn is_exact(&self) -> bool {
        self.state.is_none() && self.gradient.is_none() && self.prox.is_none()
    }

    /// Per-source moment bounds `(eta_s, eta_g, eta_p)`, zero for absent sources.
    pub fn etas(&self) -> (f64, f64, f64) {
        let eta = |s: &Option<NoiseSource>| s.as_ref().map_or(0.0, NoiseSource::eta);
        (eta(&self.state), eta(&self.gradient), eta(&self.prox))
    }

    /// Bound on the norm of the lumped per-iterate error:
    /// `eta_s + alpha * eta_g + eta_p`.
    pub fn combined_eta(&self, alpha: f64) -> f64 {
        let (s, g, p) = self.etas();
        s + alpha * g + p
    }

    pub fn eta_spec(&self) -> EtaSpec {
        let (state, gradient, prox) = self.etas();
        EtaSpec::PerSource { state, gradient, prox }
    }

    fn check_dims(&self, stacked_dim: usize) -> Result<(), SolverError> {
        for (name, source) in
            [("state", &self.state), ("gradient", &self.gradient), ("prox", &self.prox)]
        {
            if let Some(s) = source {
                if s.dim() != stacked_dim {
                    return Err(SolverError::Dimension(format!(
                        "{name} noise has dimension {}, expected {stacked_dim}",
                        s.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// One round of draws, in the fixed order state, gradient, prox.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> StepDraws {
        StepDraws {
            state: self.state.as_ref().map(|s| s.sample(rng)),
            gradient: self.gradient.as_ref().map(|s| s.sample(rng)),
            prox: self.prox.as_ref().map(|s| s.sample(rng)),
        }
    }
}

/// Error realizations for one inner step.
#[derive(Debug, Clone, Default)]
pub struct StepDraws {
    pub state: Option<DVector<f64>>,
    pub gradient: Option<DVector<f64>>,
    pub prox: Option<DVector<f64>>,
}

impl StepDraws {
    pub fn exact() -> Self {
        StepDraws::default()
    }
}

/// One prox-gradient transition: the pre-prox point and the new state.
#[derive(Debug, Clone)]
pub struct ProxGradStep {
    pub y: DVector<f64>,
    pub x_next: DVector<f64>,
}

fn ensure_finite(x: &DVector<f64>) -> Result<(), SolverError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonFiniteState)
    }
}

/// `W (x + e_s) - alpha (grad f(x;t_k) + e_g)`, the shared pre-prox target of
/// DPGM and of the first PG-EXTRA step.
fn prox_gradient_target(
    x: &DVector<f64>,
    seq: &ProblemSequence,
    k: usize,
    net: &ConsensusNetwork,
    alpha: f64,
    draws: &StepDraws,
) -> DVector<f64> {
    let dim = seq.dim();
    let mixed = match &draws.state {
        Some(e) => net.mix(&(x + e), dim),
        None => net.mix(x, dim),
    };
    let mut grad = seq.stacked_gradient(x, k);
    if let Some(e) = &draws.gradient {
        grad += e;
    }
    mixed - alpha * grad
}

/// One inexact DPGM step:
/// `y = W (x + e_s) - alpha (grad f(x;t_k) + e_g)`, then
/// `x+ = prox_{alpha g(.;t_k)}(y) + e_p`.
pub fn dpgm_step(
    x: &DVector<f64>,
    seq: &ProblemSequence,
    k: usize,
    net: &ConsensusNetwork,
    alpha: f64,
    draws: &StepDraws,
) -> Result<ProxGradStep, SolverError> {
    assert!(alpha > 0.0, "step size must be positive");
    ensure_finite(x)?;
    let y = prox_gradient_target(x, seq, k, net, alpha, draws);
    let mut x_next = seq.stacked_prox(&y, alpha, k);
    if let Some(e) = &draws.prox {
        x_next += e;
    }
    Ok(ProxGradStep { y, x_next })
}

/// Auxiliary memory of the gradient-tracking baselines: the running pre-prox
/// iterate, the previous local and received states, and the previous (noisy)
/// gradient.
#[derive(Debug, Clone)]
pub struct BaselineState {
    z: DVector<f64>,
    x_prev_local: DVector<f64>,
    x_prev_received: DVector<f64>,
    grad_prev: DVector<f64>,
    primed: bool,
}

impl BaselineState {
    pub fn new(stacked_dim: usize) -> Self {
        BaselineState {
            z: DVector::zeros(stacked_dim),
            x_prev_local: DVector::zeros(stacked_dim),
            x_prev_received: DVector::zeros(stacked_dim),
            grad_prev: DVector::zeros(stacked_dim),
            primed: false,
        }
    }

    /// Forgets all memory; the next step runs the cold-start branch.
    pub fn reset(&mut self) {
        self.primed = false;
    }

    pub fn is_primed(&self) -> bool {
        self.primed
    }

    /// Re-evaluates the stored gradient under the cost at `k`, applying fresh
    /// gradient noise if that source is active. Called at interval boundaries
    /// when the memory is carried across a cost change.
    fn refresh_gradient<R: Rng + ?Sized>(
        &mut self,
        seq: &ProblemSequence,
        k: usize,
        noise: &NoiseModel,
        rng: &mut R,
    ) {
        if !self.primed {
            return;
        }
        self.grad_prev = seq.stacked_gradient(&self.x_prev_local, k);
        if let Some(source) = &noise.gradient {
            self.grad_prev += source.sample(rng);
        }
    }
}

/// One inexact PG-EXTRA step with `W~ = (I + W) / 2`:
/// `z+ = z + W xhat - W~ xhat_prev - alpha (ghat - ghat_prev)`,
/// `x+ = prox_{alpha g}(z+) + e_p`, cold-started as one DPGM step.
/// The received states `xhat = x + e_s` are stored so the next step reuses the
/// values that were actually transmitted.
pub fn pg_extra_step(
    state: &mut BaselineState,
    x: &DVector<f64>,
    seq: &ProblemSequence,
    k: usize,
    net: &ConsensusNetwork,
    alpha: f64,
    draws: &StepDraws,
) -> Result<ProxGradStep, SolverError> {
    assert!(alpha > 0.0, "step size must be positive");
    ensure_finite(x)?;
    let dim = seq.dim();
    let received = match &draws.state {
        Some(e) => x + e,
        None => x.clone(),
    };
    let mut grad = seq.stacked_gradient(x, k);
    if let Some(e) = &draws.gradient {
        grad += e;
    }
    let z = if state.primed {
        &state.z + net.mix(&received, dim) - net.mix_half(&state.x_prev_received, dim)
            - alpha * (&grad - &state.grad_prev)
    } else {
        // Shared code path with DPGM so the first steps agree bit for bit.
        prox_gradient_target(x, seq, k, net, alpha, draws)
    };
    let mut x_next = seq.stacked_prox(&z, alpha, k);
    if let Some(e) = &draws.prox {
        x_next += e;
    }
    state.x_prev_local = x.clone();
    state.x_prev_received = received;
    state.grad_prev = grad;
    state.z = z.clone();
    state.primed = true;
    Ok(ProxGradStep { y: z, x_next })
}

/// One inexact NIDS step with `W~ = (I + W) / 2`:
/// `z+ = z - x + W~ (2x - x_prev - alpha (ghat - ghat_prev) + e_s)`,
/// `x+ = prox_{alpha g}(z+) + e_p`, cold-started as `z = x - alpha ghat`.
/// State noise enters the communicated vector under `W~`.
pub fn nids_step(
    state: &mut BaselineState,
    x: &DVector<f64>,
    seq: &ProblemSequence,
    k: usize,
    net: &ConsensusNetwork,
    alpha: f64,
    draws: &StepDraws,
) -> Result<ProxGradStep, SolverError> {
    assert!(alpha > 0.0, "step size must be positive");
    ensure_finite(x)?;
    let dim = seq.dim();
    let mut grad = seq.stacked_gradient(x, k);
    if let Some(e) = &draws.gradient {
        grad += e;
    }
    let z = if state.primed {
        let mut v = 2.0 * x - &state.x_prev_local - alpha * (&grad - &state.grad_prev);
        if let Some(e) = &draws.state {
            v += e;
        }
        &state.z - x + net.mix_half(&v, dim)
    } else {
        x - alpha * &grad
    };
    let mut x_next = seq.stacked_prox(&z, alpha, k);
    if let Some(e) = &draws.prox {
        x_next += e;
    }
    state.x_prev_local = x.clone();
    state.grad_prev = grad;
    state.z = z.clone();
    state.primed = true;
    Ok(ProxGradStep { y: z, x_next })
}

/// How run_online reacts to a DPGM step size that violates the stability bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepSizePolicy {
    /// Record a warning on the trajectory and run anyway.
    #[default]
    Warn,
    /// Refuse to run.
    Enforce,
}

/// Configuration of one online solver run.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Step size `alpha`.
    pub alpha: f64,
    /// Inner steps per sampling interval (`Mo`).
    pub inner_steps: usize,
    /// Seed of the noise stream.
    pub seed: u64,
    /// Initial network state `x(t_0)`; zeros when absent.
    pub initial_state: Option<DVector<f64>>,
    /// Record every inner iterate `(y, x)`.
    pub record_inner: bool,
    /// Reset the baselines' auxiliary memory at every interval boundary
    /// instead of carrying it.
    pub reset_baseline_memory: bool,
    pub step_size_policy: StepSizePolicy,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, alpha: f64, inner_steps: usize) -> Self {
        SolverConfig {
            algorithm,
            alpha,
            inner_steps,
            seed: 0,
            initial_state: None,
            record_inner: false,
            reset_baseline_memory: false,
            step_size_policy: StepSizePolicy::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Self {
        self.initial_state = Some(x0);
        self
    }

    pub fn with_recording(mut self) -> Self {
        self.record_inner = true;
        self
    }

    pub fn with_memory_reset(mut self) -> Self {
        self.reset_baseline_memory = true;
        self
    }

    pub fn with_step_size_policy(mut self, policy: StepSizePolicy) -> Self {
        self.step_size_policy = policy;
        self
    }
}

/// One recorded inner iterate.
#[derive(Debug, Clone)]
pub struct InnerRecord {
    pub k: usize,
    pub l: usize,
    pub y: DVector<f64>,
    pub x: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DivergencePoint {
    pub k: usize,
    pub l: usize,
    pub norm: f64,
}

/// Per-time-step network states of one run. `states[k]` is the output after
/// the inner steps against the cost at `t_k`; on divergence the trajectory is
/// truncated after the offending interval.
#[derive(Debug, Clone)]
pub struct SolverTrajectory {
    pub initial: DVector<f64>,
    pub states: Vec<DVector<f64>>,
    pub inner: Option<Vec<InnerRecord>>,
    pub diverged: Option<DivergencePoint>,
    pub step_size_warning: Option<String>,
}

impl SolverTrajectory {
    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    /// Streams the recorded inner iterates as CSV with columns
    /// `k,l,node,component,x,y`.
    pub fn write_inner_csv<W: io::Write>(&self, dim: usize, mut w: W) -> io::Result<()> {
        writeln!(w, "k,l,node,component,x,y")?;
        if let Some(records) = &self.inner {
            for r in records {
                for idx in 0..r.x.len() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        r.k,
                        r.l,
                        idx / dim,
                        idx % dim,
                        r.x[idx],
                        r.y[idx]
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Stepwise online solver: owns the network state, the baselines' auxiliary
/// memory, and the noise stream. [`run_online`] drives it over a whole
/// horizon; tests drive it interval by interval.
#[derive(Debug, Clone)]
pub struct OnlineSolver {
    config: SolverConfig,
    noise: NoiseModel,
    x: DVector<f64>,
    baseline: Option<BaselineState>,
    rng: ChaCha8Rng,
    inner_log: Option<Vec<InnerRecord>>,
    diverged: Option<DivergencePoint>,
}

impl OnlineSolver {
    pub fn new(
        config: SolverConfig,
        noise: NoiseModel,
        stacked_dim: usize,
    ) -> Result<Self, SolverError> {
        assert!(config.inner_steps >= 1, "need at least one inner step per interval");
        noise.check_dims(stacked_dim)?;
        let x = match &config.initial_state {
            Some(x0) => {
                if x0.len() != stacked_dim {
                    return Err(SolverError::Dimension(format!(
                        "initial state has length {}, expected {stacked_dim}",
                        x0.len()
                    )));
                }
                x0.clone()
            }
            None => DVector::zeros(stacked_dim),
        };
        let baseline = match config.algorithm {
            Algorithm::Dpgm => None,
            Algorithm::PgExtra | Algorithm::Nids => Some(BaselineState::new(stacked_dim)),
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let inner_log = config.record_inner.then(Vec::new);
        Ok(OnlineSolver { config, noise, x, baseline, rng, inner_log, diverged: None })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn diverged(&self) -> Option<DivergencePoint> {
        self.diverged
    }

    pub fn take_inner_log(&mut self) -> Option<Vec<InnerRecord>> {
        self.inner_log.take()
    }

    /// Runs the inner steps against the cost at `t_k`, warm-started from the
    /// current state. A divergent solver freezes: further calls are no-ops.
    pub fn advance(
        &mut self,
        seq: &ProblemSequence,
        net: &ConsensusNetwork,
        k: usize,
    ) -> Result<(), SolverError> {
        if self.diverged.is_some() {
            return Ok(());
        }
        if let Some(baseline) = &mut self.baseline {
            if self.config.reset_baseline_memory {
                baseline.reset();
            } else {
                baseline.refresh_gradient(seq, k, &self.noise, &mut self.rng);
            }
        }
        for l in 0..self.config.inner_steps {
            let draws = self.noise.draw(&mut self.rng);
            let step = match self.config.algorithm {
                Algorithm::Dpgm => dpgm_step(&self.x, seq, k, net, self.config.alpha, &draws),
                Algorithm::PgExtra => pg_extra_step(
                    self.baseline.as_mut().expect("baseline state"),
                    &self.x,
                    seq,
                    k,
                    net,
                    self.config.alpha,
                    &draws,
                ),
                Algorithm::Nids => nids_step(
                    self.baseline.as_mut().expect("baseline state"),
                    &self.x,
                    seq,
                    k,
                    net,
                    self.config.alpha,
                    &draws,
                ),
            }
            .map_err(|e| match e {
                SolverError::NonFiniteState => SolverError::NonFiniteStateAt { k, l },
                other => other,
            })?;
            if let Some(log) = &mut self.inner_log {
                log.push(InnerRecord { k, l, y: step.y.clone(), x: step.x_next.clone() });
            }
            self.x = step.x_next;
            let norm = self.x.norm();
            if !norm.is_finite() {
                return Err(SolverError::NonFiniteStateAt { k, l });
            }
            if norm > DIVERGENCE_NORM {
                self.diverged = Some(DivergencePoint { k, l, norm });
                break;
            }
        }
        Ok(())
    }
}

/// Runs the online loop over the whole horizon of a problem sequence.
///
/// For DPGM the step size is checked against the stability bound; depending on
/// the policy a violation either fails fast or is recorded as a warning on the
/// trajectory (the baselines are exempt).
pub fn run_online(
    seq: &ProblemSequence,
    net: &ConsensusNetwork,
    config: &SolverConfig,
    noise: &NoiseModel,
) -> Result<SolverTrajectory, SolverError> {
    if net.node_count() != seq.node_count() {
        return Err(SolverError::Dimension(format!(
            "network has {} nodes, problem has {}",
            net.node_count(),
            seq.node_count()
        )));
    }
    let mut step_size_warning = None;
    if config.algorithm == Algorithm::Dpgm {
        let agg = seq.constants();
        let check = check_step_size(config.alpha, agg.lf, agg.mf, net.lambda_min());
        if !check.prop_ok {
            match config.step_size_policy {
                StepSizePolicy::Enforce => {
                    return Err(SolverError::StepSize {
                        alpha: config.alpha,
                        bound: check.prop_bound,
                    });
                }
                StepSizePolicy::Warn => {
                    step_size_warning = Some(format!(
                        "step size {} exceeds the stability bound {}",
                        config.alpha, check.prop_bound
                    ));
                }
            }
        }
    }

    let mut solver = OnlineSolver::new(config.clone(), noise.clone(), seq.stacked_dim())?;
    let initial = solver.state().clone();
    let mut states = Vec::with_capacity(seq.horizon());
    for k in 0..seq.horizon() {
        solver.advance(seq, net, k)?;
        states.push(solver.state().clone());
        if solver.diverged().is_some() {
            break;
        }
    }
    let diverged = solver.diverged();
    let inner = solver.take_inner_log();
    Ok(SolverTrajectory { initial, states, inner, diverged, step_size_warning })
}

/// Iterates one fixed cost (`t_k` frozen) for a given number of steps,
/// recording every iterate. This is the static solver the per-iterate theory
/// talks about.
pub struct StaticRun {
    /// `x^0 .. x^iters`.
    pub states: Vec<DVector<f64>>,
    /// `y^1 .. y^iters` (pre-prox points).
    pub ys: Vec<DVector<f64>>,
    pub diverged: Option<DivergencePoint>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_static(
    seq: &ProblemSequence,
    net: &ConsensusNetwork,
    k: usize,
    alpha: f64,
    iters: usize,
    initial: &DVector<f64>,
    noise: &NoiseModel,
    seed: u64,
) -> Result<StaticRun, SolverError> {
    noise.check_dims(seq.stacked_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(iters + 1);
    let mut ys = Vec::with_capacity(iters);
    states.push(initial.clone());
    let mut x = initial.clone();
    for l in 0..iters {
        let draws = noise.draw(&mut rng);
        let step = dpgm_step(&x, seq, k, net, alpha, &draws).map_err(|e| match e {
            SolverError::NonFiniteState => SolverError::NonFiniteStateAt { k, l },
            other => other,
        })?;
        x = step.x_next;
        ys.push(step.y);
        states.push(x.clone());
        let norm = x.norm();
        if !norm.is_finite() {
            return Err(SolverError::NonFiniteStateAt { k, l });
        }
        if norm > DIVERGENCE_NORM {
            return Ok(StaticRun { states, ys, diverged: Some(DivergencePoint { k, l, norm }) });
        }
    }
    Ok(StaticRun { states, ys, diverged: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{metropolis_hastings, Topology};
    use crate::problems::{LocalCost, NonsmoothCost, SmoothCost};

    fn path_net(n: usize) -> ConsensusNetwork {
        metropolis_hastings(&Topology::new(n, (0..n - 1).map(|i| (i, i + 1))).unwrap())
    }

    fn quadratic_seq(thetas: &[f64], horizon: usize) -> ProblemSequence {
        let locals = thetas
            .iter()
            .map(|&t| LocalCost {
                smooth: SmoothCost::isotropic(DVector::from_vec(vec![t])),
                nonsmooth: NonsmoothCost::zero(1),
            })
            .collect();
        ProblemSequence::time_invariant(locals, horizon).unwrap()
    }

    #[test]
    fn scalar_gradient_step() {
        let net = metropolis_hastings(&Topology::new(1, []).unwrap());
        let seq = quadratic_seq(&[0.0], 1);
        let x = DVector::from_vec(vec![2.0]);
        let step = dpgm_step(&x, &seq, 0, &net, 0.5, &StepDraws::exact()).unwrap();
        assert_eq!(step.y[0], 1.0);
        assert_eq!(step.x_next[0], 1.0);
    }

    #[test]
    fn path_three_first_step_is_alpha_theta() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 1);
        let x = DVector::zeros(3);
        let step = dpgm_step(&x, &seq, 0, &net, 0.2, &StepDraws::exact()).unwrap();
        for (i, theta) in [0.0, 3.0, 6.0].iter().enumerate() {
            assert!((step.x_next[i] - 0.2 * theta).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_states_error_with_context() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 1);
        let x = DVector::from_vec(vec![f64::NAN, 0.0, 0.0]);
        assert!(matches!(
            dpgm_step(&x, &seq, 0, &net, 0.2, &StepDraws::exact()),
            Err(SolverError::NonFiniteState)
        ));
    }

    #[test]
    fn trajectories_are_bitwise_deterministic() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 5);
        let noise = NoiseModel::state_only(3, 1e-4).unwrap();
        let config = SolverConfig::new(Algorithm::Dpgm, 0.2, 3).with_seed(99);
        let a = run_online(&seq, &net, &config, &noise).unwrap();
        let b = run_online(&seq, &net, &config, &noise).unwrap();
        for k in 0..5 {
            assert_eq!(a.states[k], b.states[k]);
        }
    }

    #[test]
    fn warm_start_continuation_matches_full_run() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 4);
        let noise = NoiseModel::state_only(3, 1e-4).unwrap();
        let config = SolverConfig::new(Algorithm::Dpgm, 0.2, 2).with_seed(7);

        let full = run_online(&seq, &net, &config, &noise).unwrap();
        let mut stepwise = OnlineSolver::new(config, noise, 3).unwrap();
        for k in 0..4 {
            stepwise.advance(&seq, &net, k).unwrap();
            assert_eq!(stepwise.state(), full.state(k), "k = {k}");
        }
    }

    #[test]
    fn single_interval_single_step_equals_one_dpgm_step() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 1);
        let config = SolverConfig::new(Algorithm::Dpgm, 0.2, 1);
        let traj = run_online(&seq, &net, &config, &NoiseModel::exact()).unwrap();
        let direct =
            dpgm_step(&DVector::zeros(3), &seq, 0, &net, 0.2, &StepDraws::exact()).unwrap();
        assert_eq!(traj.states[0], direct.x_next);
    }

    #[test]
    fn pg_extra_first_interval_is_bitwise_dpgm_at_mo_one() {
        let net = path_net(5);
        let locals = (0..5)
            .map(|i| LocalCost {
                smooth: SmoothCost::isotropic(DVector::from_vec(vec![i as f64, -(i as f64)])),
                nonsmooth: NonsmoothCost::l1(0.05, 2).unwrap(),
            })
            .collect();
        let seq = ProblemSequence::time_invariant(locals, 1).unwrap();
        let dpgm = SolverConfig::new(Algorithm::Dpgm, 0.2, 1);
        let extra = SolverConfig::new(Algorithm::PgExtra, 0.2, 1);
        let a = run_online(&seq, &net, &dpgm, &NoiseModel::exact()).unwrap();
        let b = run_online(&seq, &net, &extra, &NoiseModel::exact()).unwrap();
        assert_eq!(a.states[0], b.states[0]);
    }

    #[test]
    fn oversized_step_warns_or_errors() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 2);
        let big = SolverConfig::new(Algorithm::Dpgm, 5.0, 1);
        let traj = run_online(&seq, &net, &big, &NoiseModel::exact()).unwrap();
        assert!(traj.step_size_warning.is_some());

        let strict = SolverConfig::new(Algorithm::Dpgm, 5.0, 1)
            .with_step_size_policy(StepSizePolicy::Enforce);
        assert!(matches!(
            run_online(&seq, &net, &strict, &NoiseModel::exact()),
            Err(SolverError::StepSize { .. })
        ));
    }

    #[test]
    fn runaway_step_size_is_flagged_divergent() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 50);
        let config = SolverConfig::new(Algorithm::Dpgm, 1e3, 10);
        let traj = run_online(&seq, &net, &config, &NoiseModel::exact()).unwrap();
        let point = traj.diverged.expect("expected divergence");
        assert!(traj.states.len() == point.k + 1);
        assert!(point.norm > DIVERGENCE_NORM);
    }

    #[test]
    fn inner_recording_has_expected_shape() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 2);
        let config = SolverConfig::new(Algorithm::Dpgm, 0.2, 3).with_recording();
        let traj = run_online(&seq, &net, &config, &NoiseModel::exact()).unwrap();
        let inner = traj.inner.as_ref().unwrap();
        assert_eq!(inner.len(), 6);
        assert_eq!((inner[0].k, inner[0].l), (0, 0));
        assert_eq!((inner[5].k, inner[5].l), (1, 2));
        // Last inner iterate of each interval equals the recorded state.
        assert_eq!(inner[2].x, traj.states[0]);
        assert_eq!(inner[5].x, traj.states[1]);

        let mut csv = Vec::new();
        traj.write_inner_csv(1, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("k,l,node,component,x,y\n"));
        assert_eq!(text.lines().count(), 1 + 6 * 3);
    }

    #[test]
    fn noise_eta_formula() {
        let source = NoiseSource::new(
            DVector::from_vec(vec![0.3, -0.4]),
            DVector::from_vec(vec![0.01, 0.03]),
        )
        .unwrap();
        assert!((source.eta() - (0.04f64 + 0.25).sqrt()).abs() < 1e-15);
        assert!(NoiseSource::iid(2, 0.0, -1.0).is_err());

        let model = NoiseModel {
            state: Some(NoiseSource::iid(2, 0.0, 0.04).unwrap()),
            gradient: Some(NoiseSource::iid(2, 0.0, 0.09).unwrap()),
            prox: None,
        };
        let (s, g, p) = model.etas();
        assert!((s - 0.08f64.sqrt()).abs() < 1e-15);
        assert!((g - 0.18f64.sqrt()).abs() < 1e-15);
        assert_eq!(p, 0.0);
        assert!((model.combined_eta(0.5) - (s + 0.5 * g)).abs() < 1e-15);
    }

    #[test]
    fn online_loop_on_a_static_problem_contracts_geometrically() {
        use crate::bounds::TheoryConstants;
        use crate::oracle::solve_relaxed_optimum;

        let net = path_net(3);
        let locals = [0.0f64, 3.0, 6.0]
            .iter()
            .map(|&t| LocalCost {
                smooth: SmoothCost::isotropic(DVector::from_vec(vec![t])),
                nonsmooth: NonsmoothCost::l1(0.05, 1).unwrap(),
            })
            .collect();
        let horizon = 5;
        let seq = ProblemSequence::time_invariant(locals, horizon).unwrap();
        let alpha = 0.3;
        let mo = 40;
        let tc = TheoryConstants::compute(&net, &seq.constants(), alpha).unwrap();
        let x_tilde = solve_relaxed_optimum(&seq, &net, 0, alpha, 1e-14, None).unwrap();

        let config = SolverConfig::new(Algorithm::Dpgm, alpha, mo);
        let traj = run_online(&seq, &net, &config, &NoiseModel::exact()).unwrap();
        let initial_dist = (&traj.initial - &x_tilde).norm();
        let final_dist = (traj.state(horizon - 1) - &x_tilde).norm();
        let budget = tc.zeta_phi.powi((horizon * mo) as i32) * initial_dist + 1e-10;
        assert!(final_dist <= budget, "{final_dist} > {budget}");
    }

    #[test]
    fn static_run_contracts_on_exact_quadratic() {
        let net = path_net(3);
        let seq = quadratic_seq(&[0.0, 3.0, 6.0], 1);
        let x0 = DVector::zeros(3);
        let run = run_static(&seq, &net, 0, 0.2, 200, &x0, &NoiseModel::exact(), 0).unwrap();
        assert!(run.diverged.is_none());
        assert_eq!(run.states.len(), 201);
        assert_eq!(run.ys.len(), 200);
        // The iterates settle: consecutive distance goes to zero.
        let last = (&run.states[200] - &run.states[199]).norm();
        assert!(last < 1e-12, "static run should have settled, step norm {last}");
    }
}
