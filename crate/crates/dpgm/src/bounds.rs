//! Constants and recursions of the tracking-error theory.
//!
//! The solver's error vector `d = (||xbar - x*||, ||x - xbar||, ||x - xtilde||)`
//! obeys, in expectation, a linear recursion driven by an upper-triangular
//! 3x3 matrix `A` with diagonal `(c, rho(W), zeta_phi)`. This module evaluates
//! those constants, the step-size conditions that make the recursion stable,
//! the per-iterate and per-interval bound steps, the asymptotic bound, and the
//! per-iterate inequalities used as runtime assertions by the test suites.

use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::network::ConsensusNetwork;
use crate::problems::{AggregateConstants, ProblemSequence};
use crate::stacked;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("aggregate strong convexity must be positive, got {0}")]
    NotStronglyConvex(f64),
    #[error("step size must be positive, got {0}")]
    NonPositiveStepSize(f64),
    #[error("step size {alpha} makes the contraction factor c undefined (needs alpha <= {max})")]
    ContractionUndefined { alpha: f64, max: f64 },
    #[error("asymptotic bound undefined: delta = {0} >= 1")]
    Unstable(f64),
}

/// Step-size admissibility against the two theory conditions.
#[derive(Debug, Clone, Copy)]
pub struct StepSizeCheck {
    /// `0 < alpha < (1 + lambda_min) / Lf`: the relaxed problem's prox-gradient
    /// map contracts.
    pub relaxed_ok: bool,
    /// `relaxed_ok` and `alpha < 2 / (Lf + mf)`: the full error recursion is
    /// stable.
    pub prop_ok: bool,
    pub relaxed_bound: f64,
    pub prop_bound: f64,
}

/// Evaluates both step-size conditions.
pub fn check_step_size(alpha: f64, lf: f64, mf: f64, lambda_min: f64) -> StepSizeCheck {
    let relaxed_bound = (1.0 + lambda_min) / lf;
    let prop_bound = relaxed_bound.min(2.0 / (lf + mf));
    StepSizeCheck {
        relaxed_ok: alpha > 0.0 && alpha < relaxed_bound,
        prop_ok: alpha > 0.0 && alpha < prop_bound,
        relaxed_bound,
        prop_bound,
    }
}

/// A conservative default step size: 0.9 times the stability bound.
pub fn suggested_alpha(lf: f64, mf: f64, lambda_min: f64) -> f64 {
    0.9 * check_step_size(1.0, lf, mf, lambda_min).prop_bound
}

/// Every constant the convergence theory derives from a (network, problem,
/// step size) triple.
#[derive(Debug, Clone, Copy)]
pub struct TheoryConstants {
    pub alpha: f64,
    pub lf: f64,
    pub mf: f64,
    pub lg: f64,
    pub lambda_min: f64,
    pub rho: f64,
    /// Smoothness of the relaxed objective: `1 - lambda_min + alpha Lf`.
    pub l_phi: f64,
    /// Strong convexity of the relaxed objective: `alpha mf`.
    pub m_phi: f64,
    /// Contraction factor of the unit-step prox-gradient on the relaxed
    /// problem: `max(|1 - L_phi|, |1 - m_phi|)`.
    pub zeta_phi: f64,
    /// Contraction of the network average towards the optimum:
    /// `sqrt(1 - 2 alpha mf Lf / (mf + Lf))`.
    pub c: f64,
    /// Spectral radius of the error matrix: `max(c, rho, zeta_phi)`.
    pub delta: f64,
    pub alpha_max_relaxed: f64,
    pub alpha_max_prop: f64,
}

impl TheoryConstants {
    pub fn compute(
        net: &ConsensusNetwork,
        constants: &AggregateConstants,
        alpha: f64,
    ) -> Result<Self, BoundsError> {
        Self::from_scalars(alpha, constants.lf, constants.mf, constants.lg, net.lambda_min(), net.rho())
    }

    /// Builds the constants from raw scalars (useful for hand-constructed
    /// cases in tests and for the geometric-series oracle).
    pub fn from_scalars(
        alpha: f64,
        lf: f64,
        mf: f64,
        lg: f64,
        lambda_min: f64,
        rho: f64,
    ) -> Result<Self, BoundsError> {
        if mf <= 0.0 {
            return Err(BoundsError::NotStronglyConvex(mf));
        }
        if alpha <= 0.0 {
            return Err(BoundsError::NonPositiveStepSize(alpha));
        }
        let c_sq = 1.0 - 2.0 * alpha * mf * lf / (mf + lf);
        if c_sq < 0.0 {
            return Err(BoundsError::ContractionUndefined {
                alpha,
                max: (mf + lf) / (2.0 * mf * lf),
            });
        }
        let l_phi = 1.0 - lambda_min + alpha * lf;
        let m_phi = alpha * mf;
        let zeta_phi = (1.0 - l_phi).abs().max((1.0 - m_phi).abs());
        let c = c_sq.sqrt();
        let check = check_step_size(alpha, lf, mf, lambda_min);
        Ok(TheoryConstants {
            alpha,
            lf,
            mf,
            lg,
            lambda_min,
            rho,
            l_phi,
            m_phi,
            zeta_phi,
            c,
            delta: c.max(rho).max(zeta_phi),
            alpha_max_relaxed: check.relaxed_bound,
            alpha_max_prop: check.prop_bound,
        })
    }

    pub fn step_size_check(&self) -> StepSizeCheck {
        check_step_size(self.alpha, self.lf, self.mf, self.lambda_min)
    }

    /// True when the error recursion matrix has spectral radius below one.
    pub fn is_contractive(&self) -> bool {
        self.delta < 1.0
    }
}

/// How the noise magnitude enters the bounds: either a single bound on
/// `E||e||`, or one bound per source combined as
/// `eta_s + alpha * eta_g + eta_p`.
#[derive(Debug, Clone, Copy)]
pub enum EtaSpec {
    Combined(f64),
    PerSource { state: f64, gradient: f64, prox: f64 },
}

impl EtaSpec {
    pub fn combined(&self, alpha: f64) -> f64 {
        match *self {
            EtaSpec::Combined(eta) => eta,
            EtaSpec::PerSource { state, gradient, prox } => state + alpha * gradient + prox,
        }
    }
}

/// The linear system bounding the expected error vector.
#[derive(Debug, Clone, Copy)]
pub struct ErrorBoundSystem {
    constants: TheoryConstants,
}

/// Output functional of the error system: `||x - x*|| <= d1 + d2`.
pub fn output_bound(d: &Vector3<f64>) -> f64 {
    d[0] + d[1]
}

impl ErrorBoundSystem {
    pub fn new(constants: TheoryConstants) -> Self {
        ErrorBoundSystem { constants }
    }

    pub fn constants(&self) -> &TheoryConstants {
        &self.constants
    }

    /// The upper-triangular matrix with diagonal `(c, rho, zeta_phi)` and
    /// `alpha Lf` on the first two superdiagonal entries.
    pub fn matrix(&self) -> Matrix3<f64> {
        let t = &self.constants;
        let al = t.alpha * t.lf;
        Matrix3::new(
            t.c, al, 0.0, //
            0.0, t.rho, al, //
            0.0, 0.0, t.zeta_phi,
        )
    }

    /// Static per-iterate input: `b + eta * 1` with
    /// `b = (2 alpha Lg, 2 alpha Lg + ||(I - W) xtilde||, 0)`.
    pub fn static_input(&self, iw_xtilde_norm: f64, eta: f64) -> Vector3<f64> {
        let t = &self.constants;
        let two_alg = 2.0 * t.alpha * t.lg;
        Vector3::new(two_alg + eta, two_alg + iw_xtilde_norm + eta, eta)
    }

    /// One step of the static recursion: `A d + b + eta * 1`.
    pub fn static_step(&self, d: &Vector3<f64>, iw_xtilde_norm: f64, eta: f64) -> Vector3<f64> {
        self.matrix() * d + self.static_input(iw_xtilde_norm, eta)
    }

    /// The composed per-interval input
    /// `b'' = sum_{l=0}^{Mo-1} A^(Mo-l-1) (b + eta 1) + A^Mo (sigma, 0, sigma)`.
    pub fn online_input(
        &self,
        inner_steps: usize,
        sigma: f64,
        sigma_prime: f64,
        eta: f64,
    ) -> Vector3<f64> {
        assert!(inner_steps >= 1, "online recursion needs at least one inner step");
        let a = self.matrix();
        let per_step = self.static_input(sigma_prime, eta);
        // Horner accumulation: out <- A out + per_step, Mo times.
        let mut acc = Vector3::zeros();
        let mut a_pow = Matrix3::identity();
        for _ in 0..inner_steps {
            acc = a * acc + per_step;
            a_pow = a * a_pow;
        }
        acc + a_pow * Vector3::new(sigma, 0.0, sigma)
    }

    /// One step of the per-interval recursion: `A^Mo d + b''`.
    pub fn online_step(
        &self,
        d: &Vector3<f64>,
        inner_steps: usize,
        sigma: f64,
        sigma_prime: f64,
        eta: f64,
    ) -> Vector3<f64> {
        let a = self.matrix();
        let mut out = *d;
        for _ in 0..inner_steps {
            out = a * out;
        }
        out + self.online_input(inner_steps, sigma, sigma_prime, eta)
    }

    /// The asymptotic tracking-error bound
    /// `(sigma delta^Mo + (1 - delta^(Mo+1)) / (1 - delta) (4 alpha Lg + sigma' + 2 eta)) / (1 - delta^Mo)`.
    pub fn asymptotic(
        &self,
        inner_steps: usize,
        sigma: f64,
        sigma_prime: f64,
        eta: EtaSpec,
    ) -> Result<f64, BoundsError> {
        assert!(inner_steps >= 1, "online recursion needs at least one inner step");
        let t = &self.constants;
        if t.delta >= 1.0 {
            return Err(BoundsError::Unstable(t.delta));
        }
        let delta = t.delta;
        let dm = delta.powi(inner_steps as i32);
        let eta = eta.combined(t.alpha);
        let drive = 4.0 * t.alpha * t.lg + sigma_prime + 2.0 * eta;
        let geometric = (1.0 - delta.powi(inner_steps as i32 + 1)) / (1.0 - delta);
        Ok((sigma * dm + geometric * drive) / (1.0 - dm))
    }
}

/// Free-function forms of the bound steps, mirroring the operation contracts.
pub fn static_bound_step(
    d: &Vector3<f64>,
    constants: &TheoryConstants,
    iw_xtilde_norm: f64,
    eta: f64,
) -> Vector3<f64> {
    ErrorBoundSystem::new(*constants).static_step(d, iw_xtilde_norm, eta)
}

pub fn online_bound_step(
    d: &Vector3<f64>,
    inner_steps: usize,
    constants: &TheoryConstants,
    sigma: f64,
    sigma_prime: f64,
    eta: f64,
) -> Vector3<f64> {
    ErrorBoundSystem::new(*constants).online_step(d, inner_steps, sigma, sigma_prime, eta)
}

pub fn asymptotic_bound(
    constants: &TheoryConstants,
    inner_steps: usize,
    sigma: f64,
    sigma_prime: f64,
    eta: EtaSpec,
) -> Result<f64, BoundsError> {
    ErrorBoundSystem::new(*constants).asymptotic(inner_steps, sigma, sigma_prime, eta)
}

/// Measures the error vector of a network state against the oracles at one
/// time step: `(||xbar - 1 (x) x*||, ||x - xbar||, ||x - xtilde||)`.
pub fn empirical_error_vector(
    x: &DVector<f64>,
    x_star: &DVector<f64>,
    x_tilde: &DVector<f64>,
) -> Vector3<f64> {
    assert_eq!(x.len(), x_tilde.len(), "state and relaxed optimum disagree");
    assert!(
        x_star.len() <= x.len() && x.len().is_multiple_of(x_star.len()),
        "consensus optimum does not divide the stacked state"
    );
    let blocks = x.len() / x_star.len();
    let xbar = stacked::block_average_lifted(x, blocks);
    let star = stacked::lift(x_star, blocks);
    Vector3::new((&xbar - star).norm(), (x - &xbar).norm(), (x - x_tilde).norm())
}

/// Residuals of the per-iterate recursion inequalities on one recorded exact
/// iterate transition; every gap must be nonnegative (up to norm arithmetic).
#[derive(Debug, Clone, Copy)]
pub struct RecursionGaps {
    /// Subgradient bound: `Lf ||x - xtilde|| + 2 Lg + ||(I-W) xtilde|| / alpha`
    /// minus `||grad f(x) + subgrad g(x+)||`.
    pub subgradient_bound: f64,
    /// Distance-from-average recursion slack.
    pub distance_from_average: f64,
    /// Distance-from-solution recursion slack.
    pub distance_from_solution: f64,
}

/// Evaluates the three per-iterate inequalities on one exact transition
/// `x -> (y+, x+)` recorded at time step `k`. The nonsmooth subgradient is the
/// implicit-update one, `(y+ - x+) / alpha`.
#[allow(clippy::too_many_arguments)]
pub fn recursion_gaps(
    seq: &ProblemSequence,
    k: usize,
    net: &ConsensusNetwork,
    constants: &TheoryConstants,
    x: &DVector<f64>,
    y_next: &DVector<f64>,
    x_next: &DVector<f64>,
    x_tilde: &DVector<f64>,
    x_star_lifted: &DVector<f64>,
) -> RecursionGaps {
    let n = seq.node_count();
    let dim = seq.dim();
    let alpha = constants.alpha;

    let grad = seq.stacked_gradient(x, k);
    let implicit_subgrad = (y_next - x_next) / alpha;
    let total = &grad + &implicit_subgrad;

    let iw_xtilde = (x_tilde - net.mix(x_tilde, dim)).norm();
    let subgradient_bound = constants.lf * (x - x_tilde).norm()
        + 2.0 * constants.lg
        + iw_xtilde / alpha
        - total.norm();

    let xbar = stacked::block_average_lifted(x, n);
    let xbar_next = stacked::block_average_lifted(x_next, n);
    let distance_from_average = constants.rho * (x - &xbar).norm() + alpha * total.norm()
        - (x_next - &xbar_next).norm();

    let distance_from_solution = constants.c * (&xbar - x_star_lifted).norm()
        + alpha * constants.lf * (x - &xbar).norm()
        + 2.0 * alpha * constants.lg
        - (&xbar_next - x_star_lifted).norm();

    RecursionGaps { subgradient_bound, distance_from_average, distance_from_solution }
}

/// Componentwise violation of the L1 implicit-update identity
/// `y - x in alpha * subdiff g(x)` for a per-node weighted L1 cost. Returns
/// the largest violation across components.
pub fn l1_implicit_update_violation(
    seq: &ProblemSequence,
    y: &DVector<f64>,
    x: &DVector<f64>,
    alpha: f64,
) -> f64 {
    let dim = seq.dim();
    let mut worst = 0.0f64;
    for node in 0..seq.node_count() {
        let weight = seq.local(node).nonsmooth.l1_weight();
        for c in 0..dim {
            let idx = node * dim + c;
            let s = (y[idx] - x[idx]) / alpha;
            let violation = if x[idx] != 0.0 {
                (s - weight * x[idx].signum()).abs()
            } else {
                (s.abs() - weight).max(0.0)
            };
            worst = worst.max(violation);
        }
    }
    worst
}
