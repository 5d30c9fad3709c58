//! Time-varying composite local costs `f_i(.;t_k) + g_i(.;t_k)` and the sparse
//! regression scenario generator.
//!
//! Each node holds a smooth strongly convex part handled through its gradient
//! and a nonsmooth convex part handled through its proximal operator. The only
//! shipped nonsmooth cost is the (possibly per-node weighted) L1 norm.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("smooth cost is not strongly convex (m = {0})")]
    NotStronglyConvex(f64),
    #[error("hessian must be square and symmetric")]
    BadHessian,
    #[error("least-squares cost needs at least one (A, b) term")]
    EmptyTerms,
    #[error("inconsistent dimensions: {0}")]
    DimensionMismatch(String),
    #[error("nonsmooth weight must be nonnegative, got {0}")]
    NegativeWeight(f64),
    #[error("problem sequence needs at least one node")]
    NoNodes,
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("sampling interval must be positive, got {0}")]
    BadSamplingInterval(f64),
    #[error("local cost of node {node} covers {covered} time steps, horizon is {horizon}")]
    HorizonNotCovered { node: usize, covered: usize, horizon: usize },
    #[error("rows per node ({rows}) must be at least the dimension ({dim}) so each local cost is strongly convex")]
    RowsBelowDim { rows: usize, dim: usize },
    #[error("invalid scenario parameter: {0}")]
    BadParameter(String),
    #[error("snapshot parse error at line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
}

/// One `(A_k, b_k)` regression pair per time step.
pub type RegressionTerms = Vec<(DMatrix<f64>, DVector<f64>)>;

/// Componentwise soft threshold: `sign(y_j) * max(|y_j| - tau, 0)`.
pub fn l1_prox(y: &DVector<f64>, tau: f64) -> DVector<f64> {
    assert!(tau > 0.0, "soft threshold needs tau > 0");
    y.map(|v| soft_threshold(v, tau))
}

#[inline]
pub(crate) fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// The canonical L1 subgradient: `lambda1 * sign(x_j)`, zero on zero entries.
pub fn l1_subgradient(x: &DVector<f64>, lambda1: f64) -> DVector<f64> {
    x.map(|v| {
        if v > 0.0 {
            lambda1
        } else if v < 0.0 {
            -lambda1
        } else {
            0.0
        }
    })
}

/// Smooth, strongly convex local cost, indexed by the time step `k`.
#[derive(Debug, Clone)]
pub enum SmoothCost {
    /// `0.5 (x - center)^T hessian (x - center)`, the same at every `k`.
    Quadratic { hessian: DMatrix<f64>, center: DVector<f64>, l: f64, m: f64 },
    /// `0.5 ||A_k x - b_k||^2` with one term per time step.
    LeastSquares { terms: Arc<RegressionTerms>, l: f64, m: f64 },
}

impl SmoothCost {
    /// Quadratic cost with an explicit SPD Hessian; the smoothness and strong
    /// convexity constants are its extreme eigenvalues.
    pub fn quadratic(hessian: DMatrix<f64>, center: DVector<f64>) -> Result<Self, ProblemError> {
        if !hessian.is_square() || hessian.nrows() != center.len() {
            return Err(ProblemError::BadHessian);
        }
        if (&hessian - hessian.transpose()).abs().max() > 1e-12 {
            return Err(ProblemError::BadHessian);
        }
        let eig = hessian.clone().symmetric_eigen().eigenvalues;
        let m = eig.min();
        let l = eig.max();
        if m <= 0.0 {
            return Err(ProblemError::NotStronglyConvex(m));
        }
        Ok(SmoothCost::Quadratic { hessian, center, l, m })
    }

    /// `0.5 ||x - center||^2`, identity Hessian.
    pub fn isotropic(center: DVector<f64>) -> Self {
        let dim = center.len();
        SmoothCost::Quadratic { hessian: DMatrix::identity(dim, dim), center, l: 1.0, m: 1.0 }
    }

    /// Least-squares cost; constants come from the extreme eigenvalues of
    /// `A_k^T A_k` across all terms.
    pub fn least_squares(terms: RegressionTerms) -> Result<Self, ProblemError> {
        if terms.is_empty() {
            return Err(ProblemError::EmptyTerms);
        }
        let dim = terms[0].0.ncols();
        let mut l = 0.0f64;
        let mut m = f64::INFINITY;
        for (a, b) in &terms {
            if a.ncols() != dim || a.nrows() != b.len() {
                return Err(ProblemError::DimensionMismatch(
                    "least-squares terms disagree on shape".into(),
                ));
            }
            let gram = a.transpose() * a;
            let eig = gram.symmetric_eigen().eigenvalues;
            l = l.max(eig.max());
            m = m.min(eig.min());
        }
        if m <= 0.0 {
            return Err(ProblemError::NotStronglyConvex(m));
        }
        Ok(SmoothCost::LeastSquares { terms: Arc::new(terms), l, m })
    }

    /// Least-squares cost with constants known from construction (skips the
    /// per-term eigendecompositions).
    pub(crate) fn least_squares_with_constants(
        terms: Arc<RegressionTerms>,
        l: f64,
        m: f64,
    ) -> Result<Self, ProblemError> {
        if terms.is_empty() {
            return Err(ProblemError::EmptyTerms);
        }
        if m <= 0.0 {
            return Err(ProblemError::NotStronglyConvex(m));
        }
        Ok(SmoothCost::LeastSquares { terms, l, m })
    }

    pub fn dim(&self) -> usize {
        match self {
            SmoothCost::Quadratic { center, .. } => center.len(),
            SmoothCost::LeastSquares { terms, .. } => terms[0].0.ncols(),
        }
    }

    /// Number of time steps this cost is defined for (`None` = all).
    pub fn coverage(&self) -> Option<usize> {
        match self {
            SmoothCost::Quadratic { .. } => None,
            SmoothCost::LeastSquares { terms, .. } => Some(terms.len()),
        }
    }

    pub fn value(&self, x: &DVector<f64>, k: usize) -> f64 {
        match self {
            SmoothCost::Quadratic { hessian, center, .. } => {
                let d = x - center;
                0.5 * (hessian * &d).dot(&d)
            }
            SmoothCost::LeastSquares { terms, .. } => {
                let (a, b) = &terms[k];
                let r = a * x - b;
                0.5 * r.norm_squared()
            }
        }
    }

    pub fn gradient(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        match self {
            SmoothCost::Quadratic { hessian, center, .. } => hessian * (x - center),
            SmoothCost::LeastSquares { terms, .. } => {
                let (a, b) = &terms[k];
                a.transpose() * (a * x - b)
            }
        }
    }

    /// Smoothness constant `L` (uniform over `k`).
    pub fn lipschitz(&self) -> f64 {
        match self {
            SmoothCost::Quadratic { l, .. } | SmoothCost::LeastSquares { l, .. } => *l,
        }
    }

    /// Strong convexity constant `m` (uniform over `k`).
    pub fn strong_convexity(&self) -> f64 {
        match self {
            SmoothCost::Quadratic { m, .. } | SmoothCost::LeastSquares { m, .. } => *m,
        }
    }
}

/// Nonsmooth convex local cost, handled through its proximal operator.
#[derive(Debug, Clone)]
pub enum NonsmoothCost {
    Zero { dim: usize },
    L1 { weight: f64, dim: usize },
}

impl NonsmoothCost {
    pub fn l1(weight: f64, dim: usize) -> Result<Self, ProblemError> {
        if weight < 0.0 {
            return Err(ProblemError::NegativeWeight(weight));
        }
        Ok(NonsmoothCost::L1 { weight, dim })
    }

    pub fn zero(dim: usize) -> Self {
        NonsmoothCost::Zero { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            NonsmoothCost::Zero { dim } | NonsmoothCost::L1 { dim, .. } => *dim,
        }
    }

    pub fn value(&self, x: &DVector<f64>, _k: usize) -> f64 {
        match self {
            NonsmoothCost::Zero { .. } => 0.0,
            NonsmoothCost::L1 { weight, .. } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// `prox_{step * g}(y)`.
    pub fn prox(&self, y: &DVector<f64>, step: f64, _k: usize) -> DVector<f64> {
        assert!(step > 0.0, "prox needs a positive step");
        match self {
            NonsmoothCost::Zero { .. } => y.clone(),
            NonsmoothCost::L1 { weight, .. } => {
                if *weight == 0.0 {
                    y.clone()
                } else {
                    y.map(|v| soft_threshold(v, step * weight))
                }
            }
        }
    }

    pub fn subgradient(&self, x: &DVector<f64>, _k: usize) -> DVector<f64> {
        match self {
            NonsmoothCost::Zero { .. } => DVector::zeros(x.len()),
            NonsmoothCost::L1 { weight, .. } => l1_subgradient(x, *weight),
        }
    }

    /// Lipschitz constant in the Euclidean norm: `weight * sqrt(dim)` for L1.
    pub fn lipschitz(&self) -> f64 {
        match self {
            NonsmoothCost::Zero { .. } => 0.0,
            NonsmoothCost::L1 { weight, dim } => weight * (*dim as f64).sqrt(),
        }
    }

    /// L1 weight; zero for the zero cost. Used when aggregating the prox of a
    /// sum of local costs evaluated at a shared point.
    pub fn l1_weight(&self) -> f64 {
        match self {
            NonsmoothCost::Zero { .. } => 0.0,
            NonsmoothCost::L1 { weight, .. } => *weight,
        }
    }
}

/// One node's composite cost.
#[derive(Debug, Clone)]
pub struct LocalCost {
    pub smooth: SmoothCost,
    pub nonsmooth: NonsmoothCost,
}

/// Aggregate constants over all nodes (and time steps): `Lf = max_i L_{f_i}`,
/// `mf = min_i m_{f_i}`, `Lg = max_i L_{g_i}`.
#[derive(Debug, Clone, Copy)]
pub struct AggregateConstants {
    pub lf: f64,
    pub mf: f64,
    pub lg: f64,
}

/// An indexed family of composite costs over a fixed set of nodes.
#[derive(Debug, Clone)]
pub struct ProblemSequence {
    locals: Vec<LocalCost>,
    dim: usize,
    horizon: usize,
    ts: f64,
}

impl ProblemSequence {
    pub fn new(locals: Vec<LocalCost>, horizon: usize, ts: f64) -> Result<Self, ProblemError> {
        if locals.is_empty() {
            return Err(ProblemError::NoNodes);
        }
        if horizon == 0 {
            return Err(ProblemError::EmptyHorizon);
        }
        if !ts.is_finite() || ts <= 0.0 {
            return Err(ProblemError::BadSamplingInterval(ts));
        }
        let dim = locals[0].smooth.dim();
        for (node, local) in locals.iter().enumerate() {
            if local.smooth.dim() != dim || local.nonsmooth.dim() != dim {
                return Err(ProblemError::DimensionMismatch(format!(
                    "node {node} disagrees on the variable dimension"
                )));
            }
            if let Some(covered) = local.smooth.coverage() {
                if covered < horizon {
                    return Err(ProblemError::HorizonNotCovered { node, covered, horizon });
                }
            }
        }
        Ok(ProblemSequence { locals, dim, horizon, ts })
    }

    /// Static sequence: the same costs at every time step.
    pub fn time_invariant(locals: Vec<LocalCost>, horizon: usize) -> Result<Self, ProblemError> {
        Self::new(locals, horizon, 1.0)
    }

    pub fn node_count(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total stacked dimension `N * n`.
    pub fn stacked_dim(&self) -> usize {
        self.locals.len() * self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    /// `t_k = k * Ts`, with `t_0 = 0`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.ts
    }

    pub fn local(&self, node: usize) -> &LocalCost {
        &self.locals[node]
    }

    pub fn constants(&self) -> AggregateConstants {
        let lf = self.locals.iter().map(|l| l.smooth.lipschitz()).fold(0.0, f64::max);
        let mf = self
            .locals
            .iter()
            .map(|l| l.smooth.strong_convexity())
            .fold(f64::INFINITY, f64::min);
        let lg = self.locals.iter().map(|l| l.nonsmooth.lipschitz()).fold(0.0, f64::max);
        AggregateConstants { lf, mf, lg }
    }

    /// Total cost `sum_i f_i(x_i;t_k) + g_i(x_i;t_k)` of a stacked state.
    pub fn stacked_value(&self, x: &DVector<f64>, k: usize) -> f64 {
        self.check_stacked(x);
        self.locals
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let xi = x.rows(i * self.dim, self.dim).into_owned();
                l.smooth.value(&xi, k) + l.nonsmooth.value(&xi, k)
            })
            .sum()
    }

    /// Blockwise gradient of `f(x;t_k) = sum_i f_i(x_i;t_k)`.
    pub fn stacked_gradient_into(&self, x: &DVector<f64>, k: usize, out: &mut DVector<f64>) {
        self.check_stacked(x);
        assert_eq!(out.len(), x.len());
        for (i, l) in self.locals.iter().enumerate() {
            let xi = x.rows(i * self.dim, self.dim).into_owned();
            let g = l.smooth.gradient(&xi, k);
            out.rows_mut(i * self.dim, self.dim).copy_from(&g);
        }
    }

    pub fn stacked_gradient(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.stacked_gradient_into(x, k, &mut out);
        out
    }

    /// Blockwise proximal operator of `alpha * g(.;t_k)`.
    pub fn stacked_prox_into(
        &self,
        y: &DVector<f64>,
        alpha: f64,
        k: usize,
        out: &mut DVector<f64>,
    ) {
        self.check_stacked(y);
        assert_eq!(out.len(), y.len());
        for (i, l) in self.locals.iter().enumerate() {
            let yi = y.rows(i * self.dim, self.dim).into_owned();
            let p = l.nonsmooth.prox(&yi, alpha, k);
            out.rows_mut(i * self.dim, self.dim).copy_from(&p);
        }
    }

    pub fn stacked_prox(&self, y: &DVector<f64>, alpha: f64, k: usize) -> DVector<f64> {
        let mut out = DVector::zeros(y.len());
        self.stacked_prox_into(y, alpha, k, &mut out);
        out
    }

    /// Blockwise canonical subgradient of `g(.;t_k)`.
    pub fn stacked_subgradient(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        self.check_stacked(x);
        let mut out = DVector::zeros(x.len());
        for (i, l) in self.locals.iter().enumerate() {
            let xi = x.rows(i * self.dim, self.dim).into_owned();
            let s = l.nonsmooth.subgradient(&xi, k);
            out.rows_mut(i * self.dim, self.dim).copy_from(&s);
        }
        out
    }

    /// Sum of the nodes' L1 weights; the nonsmooth part of the centralized
    /// problem `min_x sum_i f_i(x) + g_i(x)` is `(sum_i w_i) ||x||_1`.
    pub fn aggregate_l1_weight(&self) -> f64 {
        self.locals.iter().map(|l| l.nonsmooth.l1_weight()).sum()
    }

    fn check_stacked(&self, x: &DVector<f64>) {
        assert_eq!(x.len(), self.stacked_dim(), "stacked state has wrong length");
    }
}

/// Per the module contract, errors when the aggregated strong convexity is not
/// positive (cannot happen for costs built through the validated constructors).
pub fn aggregate_constants(seq: &ProblemSequence) -> Result<AggregateConstants, ProblemError> {
    let c = seq.constants();
    if c.mf <= 0.0 {
        return Err(ProblemError::NotStronglyConvex(c.mf));
    }
    Ok(c)
}

/// Parameters of the time-varying sparse regression scenario.
#[derive(Debug, Clone, Copy)]
pub struct SparseRegressionParams {
    /// L1 weight of every node.
    pub lambda1: f64,
    /// Variance of the measurement noise `e_{i,k}`.
    pub measurement_noise_var: f64,
    /// Target condition number of each regression matrix.
    pub condition_number: f64,
    /// Angular frequency of the sinusoidal signal components.
    pub omega: f64,
    /// Sampling interval.
    pub ts: f64,
    /// Largest singular value of each regression matrix.
    pub sigma_max: f64,
}

impl Default for SparseRegressionParams {
    fn default() -> Self {
        SparseRegressionParams {
            lambda1: 0.01,
            measurement_noise_var: 1e-3,
            condition_number: 100.0,
            omega: 0.5,
            ts: 0.01,
            sigma_max: 1.0,
        }
    }
}

/// A fully materialized sparse regression instance: per-node, per-step
/// regression data plus the ground sparse signal.
#[derive(Debug, Clone)]
pub struct SparseRegressionScenario {
    pub node_count: usize,
    pub dim: usize,
    pub rows_per_node: usize,
    pub horizon: usize,
    pub params: SparseRegressionParams,
    pub seed: u64,
    /// Sinusoid phases, one per component (only the support is active).
    pub phases: DVector<f64>,
    /// Indices of the active signal components, sorted.
    pub support: Vec<usize>,
    /// `matrices[i][k] = (A_{i,k}, b_{i,k})`.
    pub matrices: Vec<Arc<RegressionTerms>>,
    /// `signal[k] = y(t_k)`.
    pub signal: Vec<DVector<f64>>,
}

/// Generates the sparse regression scenario: per-step regression matrices with
/// prescribed singular values (log-spaced so that `sigma_max / sigma_min`
/// equals the condition number), measurements of a sparse sinusoidal signal,
/// and per-node L1 regularization. Deterministic under the seed.
pub fn generate_sparse_regression(
    node_count: usize,
    dim: usize,
    rows_per_node: usize,
    horizon: usize,
    params: SparseRegressionParams,
    seed: u64,
) -> Result<SparseRegressionScenario, ProblemError> {
    if node_count == 0 {
        return Err(ProblemError::NoNodes);
    }
    if horizon == 0 {
        return Err(ProblemError::EmptyHorizon);
    }
    if dim == 0 {
        return Err(ProblemError::BadParameter("dimension must be positive".into()));
    }
    if rows_per_node < dim {
        return Err(ProblemError::RowsBelowDim { rows: rows_per_node, dim });
    }
    if !params.condition_number.is_finite() || params.condition_number < 1.0 {
        return Err(ProblemError::BadParameter(format!(
            "condition number must be >= 1, got {}",
            params.condition_number
        )));
    }
    if params.lambda1 < 0.0 {
        return Err(ProblemError::NegativeWeight(params.lambda1));
    }
    if params.measurement_noise_var < 0.0 {
        return Err(ProblemError::BadParameter("noise variance must be >= 0".into()));
    }
    if !params.ts.is_finite() || params.ts <= 0.0 {
        return Err(ProblemError::BadSamplingInterval(params.ts));
    }
    if !params.sigma_max.is_finite() || params.sigma_max <= 0.0 {
        return Err(ProblemError::BadParameter("sigma_max must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_dist = Uniform::new_inclusive(0.0, std::f64::consts::PI);
    let phases = DVector::from_fn(dim, |_, _| phase_dist.sample(&mut rng));

    let mut support: Vec<usize> = (0..dim).collect();
    for i in (1..dim).rev() {
        // Fisher-Yates so the draw count is fixed.
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        support.swap(i, j);
    }
    support.truncate(dim / 2);
    support.sort_unstable();

    // Log-spaced singular values spanning [sigma_max / cond, sigma_max].
    let singular_values: Vec<f64> = if dim == 1 {
        vec![params.sigma_max]
    } else {
        (0..dim)
            .map(|j| {
                params.sigma_max
                    * params.condition_number.powf(-(j as f64) / (dim as f64 - 1.0))
            })
            .collect()
    };

    let noise_std = params.measurement_noise_var.sqrt();
    let mut matrices: Vec<RegressionTerms> = vec![Vec::new(); node_count];
    let mut signal = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let t = k as f64 * params.ts;
        let mut y = DVector::zeros(dim);
        for &j in &support {
            y[j] = (params.omega * t + phases[j]).sin();
        }
        for node_terms in matrices.iter_mut() {
            let gauss_u =
                DMatrix::<f64>::from_fn(rows_per_node, dim, |_, _| {
                    StandardNormal.sample(&mut rng)
                });
            let u = gauss_u.qr().q();
            let gauss_v =
                DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
            let v = gauss_v.qr().q();
            let mut a = u;
            for (j, s) in singular_values.iter().enumerate() {
                a.column_mut(j).scale_mut(*s);
            }
            let a = a * v.transpose();
            let noise = DVector::from_fn(rows_per_node, |_, _| {
                noise_std * rand::Rng::sample::<f64, _>(&mut rng, StandardNormal)
            });
            let b = &a * &y + noise;
            node_terms.push((a, b));
        }
        signal.push(y);
    }

    Ok(SparseRegressionScenario {
        node_count,
        dim,
        rows_per_node,
        horizon,
        params,
        seed,
        phases,
        support,
        matrices: matrices.into_iter().map(Arc::new).collect(),
        signal,
    })
}

impl SparseRegressionScenario {
    /// The induced problem sequence: `f_i(x;t_k) = 0.5 ||A_{i,k} x - b_{i,k}||^2`
    /// with `L = sigma_max^2` and `m = (sigma_max / cond)^2` exact from the
    /// construction, plus `g_i = lambda1 ||.||_1`.
    pub fn problem_sequence(&self) -> Result<ProblemSequence, ProblemError> {
        let l = self.params.sigma_max * self.params.sigma_max;
        let m = {
            let smin = self.params.sigma_max / self.params.condition_number;
            smin * smin
        };
        let locals = self
            .matrices
            .iter()
            .map(|terms| {
                Ok(LocalCost {
                    smooth: SmoothCost::least_squares_with_constants(Arc::clone(terms), l, m)?,
                    nonsmooth: NonsmoothCost::l1(self.params.lambda1, self.dim)?,
                })
            })
            .collect::<Result<Vec<_>, ProblemError>>()?;
        ProblemSequence::new(locals, self.horizon, self.params.ts)
    }

    pub fn signal(&self, k: usize) -> &DVector<f64> {
        &self.signal[k]
    }

    /// Text snapshot for exact replay: header plus row-major matrices, floats
    /// printed with shortest round-trip formatting.
    pub fn write_snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dpgm-scenario-v1");
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.node_count, self.dim, self.rows_per_node, self.horizon, self.seed
        );
        let p = &self.params;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            p.lambda1, p.measurement_noise_var, p.condition_number, p.omega, p.ts, p.sigma_max
        );
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "support {}",
            self.support.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        );
        let _ = writeln!(out, "phases {}", join(self.phases.as_slice()));
        for (k, y) in self.signal.iter().enumerate() {
            let _ = writeln!(out, "signal {k} {}", join(y.as_slice()));
        }
        for (i, terms) in self.matrices.iter().enumerate() {
            for (k, (a, b)) in terms.iter().enumerate() {
                let mut row_major = Vec::with_capacity(a.nrows() * a.ncols());
                for r in 0..a.nrows() {
                    for c in 0..a.ncols() {
                        row_major.push(a[(r, c)]);
                    }
                }
                let _ = writeln!(out, "a {i} {k} {}", join(&row_major));
                let _ = writeln!(out, "b {i} {k} {}", join(b.as_slice()));
            }
        }
        out
    }

    /// Parses a snapshot produced by [`SparseRegressionScenario::write_snapshot`].
    pub fn read_snapshot(text: &str) -> Result<Self, ProblemError> {
        let err = |line: usize, reason: &str| ProblemError::Snapshot {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (line, magic) = lines.next().ok_or_else(|| err(1, "empty snapshot"))?;
        if magic != "dpgm-scenario-v1" {
            return Err(err(line, "unknown snapshot format"));
        }
        let parse_floats = |line: usize, s: &str| -> Result<Vec<f64>, ProblemError> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(line, "expected a float")))
                .collect()
        };

        let (line, dims) = lines.next().ok_or_else(|| err(2, "missing dimensions"))?;
        let d: Vec<usize> = dims
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| err(line, "expected an integer")))
            .collect::<Result<_, _>>()?;
        if d.len() != 5 {
            return Err(err(line, "expected `N n r K seed`"));
        }
        let (node_count, dim, rows, horizon, seed) =
            (d[0], d[1], d[2], d[3], d[4] as u64);

        let (line, ps) = lines.next().ok_or_else(|| err(3, "missing parameters"))?;
        let pv = parse_floats(line, ps)?;
        if pv.len() != 6 {
            return Err(err(line, "expected six scenario parameters"));
        }
        let params = SparseRegressionParams {
            lambda1: pv[0],
            measurement_noise_var: pv[1],
            condition_number: pv[2],
            omega: pv[3],
            ts: pv[4],
            sigma_max: pv[5],
        };

        let mut support = Vec::new();
        let mut phases = DVector::zeros(dim);
        let mut signal = vec![DVector::zeros(dim); horizon];
        type Pending = Vec<Option<(DMatrix<f64>, DVector<f64>)>>;
        let mut mats: Vec<Pending> = vec![vec![None; horizon]; node_count];
        let mut pending_a: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; horizon]; node_count];

        for (line, l) in lines {
            if l.is_empty() {
                continue;
            }
            let (tag, rest) = l.split_once(' ').ok_or_else(|| err(line, "malformed record"))?;
            match tag {
                "support" => {
                    support = rest
                        .split_whitespace()
                        .map(|t| t.parse::<usize>().map_err(|_| err(line, "bad support index")))
                        .collect::<Result<_, _>>()?;
                }
                "phases" => {
                    let v = parse_floats(line, rest)?;
                    if v.len() != dim {
                        return Err(err(line, "phase count mismatch"));
                    }
                    phases = DVector::from_vec(v);
                }
                "signal" => {
                    let (k_tok, values) =
                        rest.split_once(' ').ok_or_else(|| err(line, "malformed signal"))?;
                    let k: usize = k_tok.parse().map_err(|_| err(line, "bad signal index"))?;
                    let v = parse_floats(line, values)?;
                    if k >= horizon || v.len() != dim {
                        return Err(err(line, "signal record out of range"));
                    }
                    signal[k] = DVector::from_vec(v);
                }
                "a" | "b" => {
                    let mut parts = rest.splitn(3, ' ');
                    let i: usize = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(line, "bad node index"))?;
                    let k: usize = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(line, "bad time index"))?;
                    let values = parse_floats(line, parts.next().unwrap_or(""))?;
                    if i >= node_count || k >= horizon {
                        return Err(err(line, "matrix record out of range"));
                    }
                    if tag == "a" {
                        if values.len() != rows * dim {
                            return Err(err(line, "matrix size mismatch"));
                        }
                        pending_a[i][k] = Some(values);
                    } else {
                        if values.len() != rows {
                            return Err(err(line, "vector size mismatch"));
                        }
                        let a_vals = pending_a[i][k]
                            .take()
                            .ok_or_else(|| err(line, "b record before its a record"))?;
                        let a = DMatrix::from_row_slice(rows, dim, &a_vals);
                        mats[i][k] = Some((a, DVector::from_vec(values)));
                    }
                }
                _ => return Err(err(line, "unknown record tag")),
            }
        }

        let matrices = mats
            .into_iter()
            .enumerate()
            .map(|(i, terms)| {
                let terms: Option<Vec<_>> = terms.into_iter().collect();
                terms
                    .map(Arc::new)
                    .ok_or_else(|| err(0, &format!("node {i} is missing matrix records")))
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(SparseRegressionScenario {
            node_count,
            dim,
            rows_per_node: rows,
            horizon,
            params,
            seed,
            phases,
            support,
            matrices,
            signal,
        })
    }
}
