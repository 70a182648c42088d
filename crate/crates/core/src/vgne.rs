//! Variational GNE of the deterministic game under a fixed `alpha`.
//!
//! The solver is a projected primal-dual forward-backward iteration on the
//! Nash-KKT operator. The dual step uses the reflected primal iterate
//! `2 x_{k+1} - x_k`, which makes the scheme converge for any cocoercive
//! pseudo-gradient once `1/tau - rho ||alpha||^2 > L^2 / (2 mu)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{GameConfig, GradientFamily, MonotonicityCertificate, PlayerMatrix, StrategyProfile};

/// How the primal and dual step sizes are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// `tau = mu / L^2`, dual step from the coupling-matrix norm.
    FromCertificate,
    Fixed { primal: f64, dual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Max-norm KKT residual at which iteration stops.
    pub tol: f64,
    pub max_iters: usize,
    pub step: StepPolicy,
    /// Iterate even when the certificate does not prove strong monotonicity.
    pub allow_nonmonotone: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 1_000_000,
            step: StepPolicy::FromCertificate,
            allow_nonmonotone: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("solver tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("max_iters must be positive".into()));
        }
        if let StepPolicy::Fixed { primal, dual } = self.step {
            if !(primal > 0.0 && dual > 0.0) {
                return Err(Error::Invalid("step sizes must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Resolved step sizes of a primal-dual run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub primal: f64,
    pub dual: f64,
}

/// Step sizes for a primal-dual scheme whose linear coupling has squared
/// Frobenius norm `coupling_norm_sq`.
pub(crate) fn resolve_steps(
    opts: &SolverOptions,
    cert: &MonotonicityCertificate,
    coupling_norm_sq: f64,
) -> Result<Steps> {
    opts.validate()?;
    if !cert.is_strongly_monotone() && !opts.allow_nonmonotone {
        return Err(Error::NotMonotone { mu: cert.mu });
    }
    match opts.step {
        StepPolicy::Fixed { primal, dual } => Ok(Steps { primal, dual }),
        StepPolicy::FromCertificate => {
            if !cert.is_strongly_monotone() {
                return Err(Error::NotMonotone { mu: cert.mu });
            }
            let inv_cocoercivity = cert.lipschitz * cert.lipschitz / cert.mu;
            let primal = 1.0 / inv_cocoercivity;
            // Leaves 1/tau - rho ||K||^2 >= 0.55 L^2 / mu.
            let dual = 0.45 * inv_cocoercivity / coupling_norm_sq.max(f64::MIN_POSITIVE);
            Ok(Steps { primal, dual })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgneResult {
    pub x_star: StrategyProfile,
    /// Unified multiplier of the coupling constraint.
    pub lambda_star: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_alpha(config: &GameConfig, alpha: &PlayerMatrix) -> Result<()> {
    if alpha.players() != config.players || alpha.dim() != config.dim {
        return Err(Error::Dimension(format!(
            "alpha is {}x{}, game is {}x{}",
            alpha.players(),
            alpha.dim(),
            config.players,
            config.dim
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::Invalid("alpha must be finite".into()));
    }
    Ok(())
}

fn steps_for(
    config: &GameConfig,
    beta: &[f64],
    alpha: &PlayerMatrix,
    opts: &SolverOptions,
) -> Result<Steps> {
    let cert = config.payoff.monotonicity_certificate(beta)?;
    let norm_sq = alpha.dot(alpha);
    resolve_steps(opts, &cert, norm_sq)
}

/// Fixed-point defects at `(x, lambda)` given `F(x)`.
fn defects(
    x: &PlayerMatrix,
    lambda: f64,
    grad: &PlayerMatrix,
    alpha: &PlayerMatrix,
    budget: f64,
    steps: Steps,
) -> f64 {
    let primal = x
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .zip(alpha.as_slice())
        .map(|((&xi, &fi), &ai)| (xi - (xi - steps.primal * (fi + lambda * ai)).max(0.0)).abs())
        .fold(0.0, f64::max);
    let slack = alpha.dot(x) - budget;
    let dual = (lambda - (lambda + steps.dual * slack).max(0.0)).abs();
    primal.max(dual)
}

/// Max-norm of the KKT fixed-point defects at `(x, lambda)`.
pub fn kkt_residual(
    config: &GameConfig,
    beta: &[f64],
    alpha: &PlayerMatrix,
    x: &StrategyProfile,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    check_alpha(config, alpha)?;
    if lambda < 0.0 {
        return Err(Error::Invalid("lambda must be nonnegative".into()));
    }
    let steps = steps_for(config, beta, alpha, opts)?;
    let grad = config.payoff.pseudo_gradient(x, beta)?;
    Ok(defects(x, lambda, &grad, alpha, config.budget, steps))
}

/// Computes the variational GNE of the game with coupling coefficients `alpha`.
///
/// Stops once the KKT residual is at most `tol` and the complementarity
/// product `|lambda (alpha^T x - b)|` is at most `10 tol`, then refines the
/// iterate by an exact solve on its active set when that does not increase
/// either quantity.
/// A run that exhausts `max_iters` returns the best iterate seen with
/// `converged = false`.
pub fn solve_vgne(
    config: &GameConfig,
    beta: &[f64],
    alpha: &PlayerMatrix,
    opts: &SolverOptions,
) -> Result<VgneResult> {
    check_alpha(config, alpha)?;
    let steps = steps_for(config, beta, alpha, opts)?;

    let mut x = PlayerMatrix::zeros(config.players, config.dim);
    let mut lambda = 0.0;
    let mut best = (f64::INFINITY, x.clone(), lambda, 0);

    for iter in 0..opts.max_iters {
        let grad = config.payoff.pseudo_gradient(&x, beta)?;
        let residual = defects(&x, lambda, &grad, alpha, config.budget, steps);
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("residual diverged at iteration {iter}")));
        }
        if residual < best.0 {
            best = (residual, x.clone(), lambda, iter);
        }
        let complementarity = (lambda * (alpha.dot(&x) - config.budget)).abs();
        if residual <= opts.tol && complementarity <= 10.0 * opts.tol {
            let (x, lambda, residual) = match polish(config, beta, alpha, &x, lambda, steps) {
                Some((px, pl, pr, pc)) if pr <= residual && pc <= complementarity => (px, pl, pr),
                _ => (x, lambda, residual),
            };
            return Ok(VgneResult {
                x_star: x,
                lambda_star: lambda,
                residual,
                iterations: iter,
                converged: true,
            });
        }

        let mut next = x.clone();
        for ((xn, &fi), &ai) in next
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(alpha.as_slice())
        {
            *xn = (*xn - steps.primal * (fi + lambda * ai)).max(0.0);
        }
        let reflected = next.lin_comb(2.0, &x, -1.0);
        lambda = (lambda + steps.dual * (alpha.dot(&reflected) - config.budget)).max(0.0);
        x = next;
    }

    let (residual, x_star, lambda_star, _) = best;
    Ok(VgneResult {
        x_star,
        lambda_star,
        residual,
        iterations: opts.max_iters,
        converged: false,
    })
}

/// Solves the KKT system restricted to the active set of a converged iterate:
/// `F_i(x) + lambda alpha_i = 0` on the support of `x`, and `alpha^T x = b`
/// when `lambda > 0`. `F` is affine, so this is one linear solve and removes
/// the step-size-scaled error left by the iteration. Returns the candidate
/// with its residual and complementarity, or `None` if it is singular or
/// leaves the sign constraints.
fn polish(
    config: &GameConfig,
    beta: &[f64],
    alpha: &PlayerMatrix,
    x: &StrategyProfile,
    lambda: f64,
    steps: Steps,
) -> Option<(StrategyProfile, f64, f64, f64)> {
    let jac = config.payoff.jacobian(beta).ok()?;
    let len = x.as_slice().len();
    if jac.nrows() != len || jac.ncols() != len {
        return None;
    }
    let zeros = PlayerMatrix::zeros(x.players(), x.dim());
    let offset = config.payoff.pseudo_gradient(&zeros, beta).ok()?;
    let support: Vec<usize> = (0..len).filter(|&i| x.as_slice()[i] > 0.0).collect();
    let binding = lambda > 0.0;
    let size = support.len() + binding as usize;
    if size == 0 {
        return None;
    }
    let a = alpha.as_slice();
    let mut m = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            m[(r, c)] = jac[(i, j)];
        }
        if binding {
            m[(r, size - 1)] = a[i];
        }
        rhs[r] = -offset.as_slice()[i];
    }
    if binding {
        for (c, &j) in support.iter().enumerate() {
            m[(size - 1, c)] = a[j];
        }
        rhs[size - 1] = config.budget;
    }
    let sol = m.lu().solve(&rhs)?;
    let mut out = zeros;
    for (r, &i) in support.iter().enumerate() {
        if !(sol[r] >= 0.0) {
            return None;
        }
        out.as_mut_slice()[i] = sol[r];
    }
    let lam = if binding { sol[size - 1] } else { 0.0 };
    if !(lam >= 0.0) {
        return None;
    }
    let grad = config.payoff.pseudo_gradient(&out, beta).ok()?;
    let residual = defects(&out, lam, &grad, alpha, config.budget, steps);
    let complementarity = (lam * (alpha.dot(&out) - config.budget)).abs();
    residual.is_finite().then_some((out, lam, residual, complementarity))
}

/// Least-squares estimate of the coupling multiplier of a candidate
/// equilibrium: over components with `x > 0`, `F_i + lambda alpha_i = 0`.
pub fn recover_multiplier(
    config: &GameConfig,
    beta: &[f64],
    alpha: &PlayerMatrix,
    x: &StrategyProfile,
) -> Result<f64> {
    check_alpha(config, alpha)?;
    let grad = config.payoff.pseudo_gradient(x, beta)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((&xi, &fi), &ai) in x.as_slice().iter().zip(grad.as_slice()).zip(alpha.as_slice()) {
        if xi > 0.0 {
            num -= fi * ai;
            den += ai * ai;
        }
    }
    Ok(if den > 0.0 { (num / den).max(0.0) } else { 0.0 })
}

/// Checks `x >= 0` and `sum_i alpha_i^T x_i <= b` up to a relative tolerance.
pub fn in_coupling_set(alpha: &PlayerMatrix, budget: f64, x: &PlayerMatrix) -> bool {
    let scale = 1.0 + budget.abs();
    x.same_shape(alpha)
        && x.as_slice().iter().all(|&v| v >= -1e-12 * scale)
        && alpha.dot(x) <= budget + 1e-9 * scale
}

/// `min_probe F(x*)^T (probe - x*)`; nonnegative at a solution of the VI.
pub fn vi_gap(
    config: &GameConfig,
    beta: &[f64],
    alpha: &PlayerMatrix,
    x_star: &StrategyProfile,
    probes: &[StrategyProfile],
) -> Result<f64> {
    check_alpha(config, alpha)?;
    if !x_star.is_finite() {
        return Err(Error::Invalid("x_star must be finite".into()));
    }
    let grad = config.payoff.pseudo_gradient(x_star, beta)?;
    let base = grad.dot(x_star);
    let mut gap = f64::INFINITY;
    for (k, probe) in probes.iter().enumerate() {
        if !in_coupling_set(alpha, config.budget, probe) {
            return Err(Error::Invalid(format!("probe {k} lies outside the coupling set")));
        }
        gap = gap.min(grad.dot(probe) - base);
    }
    Ok(gap)
}

/// Uniform draw from `{x >= 0 : sum alpha_i^T x_i <= b}`; requires `alpha > 0`.
///
/// Uses the spacings of sorted uniforms, which are uniform on the simplex.
pub fn sample_coupling_set<R: Rng + ?Sized>(
    alpha: &PlayerMatrix,
    budget: f64,
    rng: &mut R,
) -> Result<PlayerMatrix> {
    if alpha.as_slice().iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Invalid(
            "uniform coupling-set sampling requires positive alpha".into(),
        ));
    }
    let len = alpha.as_slice().len();
    let mut cuts: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    let data = cuts
        .iter()
        .zip(alpha.as_slice())
        .map(|(&c, &a)| {
            let w = c - prev;
            prev = c;
            budget * w / a
        })
        .collect();
    PlayerMatrix::from_vec(alpha.players(), alpha.dim(), data)
}
