//! Scenario-type generalisation bound of the learned feasibility pair and its
//! empirical counterpart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameConfig, GradientFamily};
use crate::learn::feasible_gamma_interval;
use crate::uncertainty::{generate_dataset, UncertaintyProfile};
use crate::vgne::SolverOptions;

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("epsilon must lie in (0, 1), got {epsilon}")))
    }
}

/// `sum_{l=0}^{min(N, M)} C(M, l) eps^l (1 - eps)^(M - l)`, accumulated in log
/// space so that large `M` neither overflows nor underflows.
pub fn binomial_tail(m: u64, n: u64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if m <= n {
        return Ok(1.0);
    }
    let log_odds = epsilon.ln() - (-epsilon).ln_1p();
    let mut term = m as f64 * (-epsilon).ln_1p();
    let mut logs = Vec::with_capacity(n as usize + 1);
    logs.push(term);
    for l in 0..n {
        term += ((m - l) as f64 / (l + 1) as f64).ln() + log_odds;
        logs.push(term);
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|t| (t - top).exp()).sum();
    Ok((top + sum.ln()).exp().min(1.0))
}

/// Smallest `M` with `binomial_tail(M, N, eps) <= delta_target`.
pub fn min_samples(epsilon: f64, delta_target: f64, n: u64) -> Result<u64> {
    check_epsilon(epsilon)?;
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(Error::Invalid(format!(
            "delta_target must lie in (0, 1), got {delta_target}"
        )));
    }
    // The tail is 1 up to M = N and nonincreasing afterwards.
    let mut lo = n;
    let mut hi = (n + 1).max(1);
    while binomial_tail(hi, n, epsilon)? > delta_target {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| Error::Numerical("sample count overflow".into()))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if binomial_tail(mid, n, epsilon)? <= delta_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    #[serde(rename = "M")]
    pub samples: u64,
    /// Player count; the learned decision `(beta, delta)` has `N + 1` entries.
    #[serde(rename = "N")]
    pub players: u64,
    pub delta_bound: f64,
}

impl BoundReport {
    pub fn new(epsilon: f64, samples: u64, players: u64) -> Result<Self> {
        Ok(Self {
            epsilon,
            samples,
            players,
            delta_bound: binomial_tail(samples, players, epsilon)?,
        })
    }
}

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEstimate {
    pub empirical_v: f64,
    pub trials: usize,
    pub violations: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl ViolationEstimate {
    pub fn from_counts(violations: usize, trials: usize) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(violations, trials);
        Self {
            empirical_v: if trials == 0 { 0.0 } else { violations as f64 / trials as f64 },
            trials,
            violations,
            ci_lo,
            ci_hi,
        }
    }
}

/// Fraction of fresh parameter draws whose equilibrium rejects `(beta, delta)`,
/// i.e. admits no feasible `gamma`.
pub fn estimate_violation(
    beta: &[f64],
    delta: f64,
    config: &GameConfig,
    profile: &UncertaintyProfile,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<ViolationEstimate> {
    if trials == 0 {
        return Err(Error::Invalid("trials must be at least 1".into()));
    }
    if beta.len() != config.players {
        return Err(Error::Dimension(format!(
            "beta has length {}, game has {} players",
            beta.len(),
            config.players
        )));
    }
    let fresh = generate_dataset(config, profile, trials, seed, opts)?;
    let mut violations = 0;
    for point in &fresh.points {
        let f = config.payoff.pseudo_gradient(&point.x_star, beta)?;
        let iv = feasible_gamma_interval(&f, &point.x_star, &point.alpha, config.budget, delta)?;
        if !iv.feasible {
            violations += 1;
        }
    }
    Ok(ViolationEstimate::from_counts(violations, trials))
}
