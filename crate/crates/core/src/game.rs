//! Aggregative game family: aggregator, payoffs and the pseudo-gradient.
//!
//! The aggregator is `sigma(x) = sum_i beta_i x_i`. Payoffs follow the
//! demand-response family `J_i = l_i (x_i - h_i)^2 + (q N sigma + p0) x_i`,
//! whose pseudo-gradient is affine in the weights `beta`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major `N x n` matrix with one row per player.
///
/// Used both for strategy profiles and for per-player parameters such as
/// the coupling coefficients `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerMatrix {
    players: usize,
    dim: usize,
    data: Vec<f64>,
}

/// A joint strategy `x`, row `i` being player `i`'s decision.
pub type StrategyProfile = PlayerMatrix;

impl PlayerMatrix {
    pub fn zeros(players: usize, dim: usize) -> Self {
        Self {
            players,
            dim,
            data: vec![0.0; players * dim],
        }
    }

    pub fn from_vec(players: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != players * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {players}x{dim} profile, got {}",
                players * dim,
                data.len()
            )));
        }
        Ok(Self { players, dim, data })
    }

    /// One-dimensional profile from a per-player vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            players: values.len(),
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn filled(players: usize, dim: usize, value: f64) -> Self {
        Self {
            players,
            dim,
            data: vec![value; players * dim],
        }
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flattened inner product `<self, other>`.
    pub fn dot(&self, other: &PlayerMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn same_shape(&self, other: &PlayerMatrix) -> bool {
        self.players == other.players && self.dim == other.dim
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            players: self.players,
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &PlayerMatrix, b: f64) -> Self {
        Self {
            players: self.players,
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &PlayerMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Coefficients of the quadratic demand-response payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticPayoffParams {
    /// Curvature `l_i > 0`.
    pub l: Vec<f64>,
    /// Nominal demand `h_i`.
    pub h: Vec<f64>,
    /// Price slope `q >= 0`.
    pub q: f64,
    /// Base price.
    pub p0: f64,
}

/// Constant Jacobian bounds of a monotone pseudo-gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityCertificate {
    /// Smallest eigenvalue of the symmetric part of the Jacobian.
    pub mu: f64,
    /// Spectral norm of the Jacobian.
    pub lipschitz: f64,
}

impl MonotonicityCertificate {
    pub fn is_strongly_monotone(&self) -> bool {
        self.mu > 0.0
    }
}

/// Decomposition `F(x; beta) = a(x) + B(x) beta` of a pseudo-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGradient {
    /// The beta-independent part, `N x n`.
    pub a: PlayerMatrix,
    /// Coefficients of `beta`, stored as `N x n x N` with index `(i, c, j)`.
    b: Vec<f64>,
    players: usize,
    dim: usize,
}

impl AffineGradient {
    pub fn new(a: PlayerMatrix, b: Vec<f64>) -> Result<Self> {
        let (players, dim) = (a.players(), a.dim());
        if b.len() != players * dim * players {
            return Err(Error::Dimension(format!(
                "beta coefficient tensor needs {} entries, got {}",
                players * dim * players,
                b.len()
            )));
        }
        Ok(Self { a, b, players, dim })
    }

    /// Coefficient of `beta_j` in component `(i, c)`.
    pub fn coeff(&self, i: usize, c: usize, j: usize) -> f64 {
        self.b[(i * self.dim + c) * self.players + j]
    }

    /// Row of beta coefficients for component `(i, c)`.
    pub fn coeff_row(&self, i: usize, c: usize) -> &[f64] {
        let start = (i * self.dim + c) * self.players;
        &self.b[start..start + self.players]
    }

    /// Evaluates `a + B beta`.
    pub fn evaluate(&self, beta: &[f64]) -> Result<PlayerMatrix> {
        if beta.len() != self.players {
            return Err(Error::Dimension(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.players
            )));
        }
        let mut out = self.a.clone();
        for i in 0..self.players {
            for c in 0..self.dim {
                let row = self.coeff_row(i, c);
                out.row_mut(i)[c] += row.iter().zip(beta).map(|(b, w)| b * w).sum::<f64>();
            }
        }
        Ok(out)
    }
}

/// A payoff family whose pseudo-gradient is affine in the aggregator weights.
pub trait GradientFamily {
    fn players(&self) -> usize;
    fn dim(&self) -> usize;
    fn pseudo_gradient(&self, x: &StrategyProfile, beta: &[f64]) -> Result<PlayerMatrix>;
    fn affine_decomposition(&self, x: &StrategyProfile) -> Result<AffineGradient>;
    fn monotonicity_certificate(&self, beta: &[f64]) -> Result<MonotonicityCertificate>;
}

/// `sigma(x) = sum_i beta_i x_i`.
pub fn aggregate(x: &StrategyProfile, beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != x.players() {
        return Err(Error::Dimension(format!(
            "beta has length {}, profile has {} players",
            beta.len(),
            x.players()
        )));
    }
    let mut sigma = vec![0.0; x.dim()];
    for (i, w) in beta.iter().enumerate() {
        for (s, v) in sigma.iter_mut().zip(x.row(i)) {
            *s += w * v;
        }
    }
    Ok(sigma)
}

impl QuadraticPayoffParams {
    pub fn validate(&self) -> Result<()> {
        if self.l.is_empty() {
            return Err(Error::Invalid("payoff.l must be non-empty".into()));
        }
        if self.h.len() != self.l.len() {
            return Err(Error::Invalid(format!(
                "payoff.h has length {}, payoff.l has {}",
                self.h.len(),
                self.l.len()
            )));
        }
        if let Some(i) = self.l.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("payoff.l[{i}] must be positive")));
        }
        if self.h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("payoff.h must be finite".into()));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::Invalid("payoff.q must be nonnegative".into()));
        }
        if !self.p0.is_finite() {
            return Err(Error::Invalid("payoff.p0 must be finite".into()));
        }
        Ok(())
    }

    fn check(&self, x: &StrategyProfile, beta: Option<&[f64]>) -> Result<()> {
        if x.dim() != 1 {
            return Err(Error::Unsupported(format!(
                "quadratic payoff family requires n = 1, got n = {}",
                x.dim()
            )));
        }
        if x.players() != self.l.len() {
            return Err(Error::Dimension(format!(
                "profile has {} players, payoff has {}",
                x.players(),
                self.l.len()
            )));
        }
        if let Some(beta) = beta {
            if beta.len() != self.l.len() {
                return Err(Error::Dimension(format!(
                    "beta has length {}, payoff has {} players",
                    beta.len(),
                    self.l.len()
                )));
            }
        }
        Ok(())
    }

    /// `J_i(x) = l_i (x_i - h_i)^2 + (q N sigma(x) + p0) x_i`.
    pub fn payoff_value(&self, i: usize, x: &StrategyProfile, beta: &[f64]) -> Result<f64> {
        self.check(x, Some(beta))?;
        if i >= self.l.len() {
            return Err(Error::Dimension(format!("player index {i} out of range")));
        }
        let n = self.l.len() as f64;
        let sigma = aggregate(x, beta)?[0];
        let xi = x.row(i)[0];
        let price = self.q * n * sigma + self.p0;
        Ok(self.l[i] * (xi - self.h[i]).powi(2) + price * xi)
    }

    /// Constant Jacobian of the pseudo-gradient: diagonal `2 l_i + 2 q N beta_i`,
    /// off-diagonal `(i, j) = q N beta_j`.
    pub fn jacobian(&self, beta: &[f64]) -> Result<DMatrix<f64>> {
        let players = self.l.len();
        if beta.len() != players {
            return Err(Error::Dimension(format!(
                "beta has length {}, payoff has {players} players",
                beta.len()
            )));
        }
        let qn = self.q * players as f64;
        Ok(DMatrix::from_fn(players, players, |i, j| {
            if i == j {
                2.0 * self.l[i] + 2.0 * qn * beta[i]
            } else {
                qn * beta[j]
            }
        }))
    }
}

impl GradientFamily for QuadraticPayoffParams {
    fn players(&self) -> usize {
        self.l.len()
    }

    fn dim(&self) -> usize {
        1
    }

    fn pseudo_gradient(&self, x: &StrategyProfile, beta: &[f64]) -> Result<PlayerMatrix> {
        self.check(x, Some(beta))?;
        let qn = self.q * self.l.len() as f64;
        let sigma = aggregate(x, beta)?[0];
        let data = (0..self.l.len())
            .map(|i| {
                let xi = x.row(i)[0];
                // 2 q N beta_i x_i + q N sum_{j != i} beta_j x_j = q N (beta_i x_i + sigma)
                2.0 * self.l[i] * (xi - self.h[i]) + qn * (beta[i] * xi + sigma) + self.p0
            })
            .collect();
        Ok(PlayerMatrix::column_from(data))
    }

    fn affine_decomposition(&self, x: &StrategyProfile) -> Result<AffineGradient> {
        self.check(x, None)?;
        let players = self.l.len();
        let qn = self.q * players as f64;
        let a = (0..players)
            .map(|i| 2.0 * self.l[i] * (x.row(i)[0] - self.h[i]) + self.p0)
            .collect();
        let mut b = vec![0.0; players * players];
        for i in 0..players {
            for j in 0..players {
                let factor = if i == j { 2.0 * qn } else { qn };
                b[i * players + j] = factor * x.row(j)[0];
            }
        }
        AffineGradient::new(PlayerMatrix::column_from(a), b)
    }

    fn monotonicity_certificate(&self, beta: &[f64]) -> Result<MonotonicityCertificate> {
        let jac = self.jacobian(beta)?;
        let sym = (&jac + jac.transpose()) * 0.5;
        let mu = sym.symmetric_eigenvalues().min();
        let lipschitz = jac.singular_values().max();
        Ok(MonotonicityCertificate { mu, lipschitz })
    }
}

impl PlayerMatrix {
    fn column_from(data: Vec<f64>) -> Self {
        Self {
            players: data.len(),
            dim: 1,
            data,
        }
    }
}

/// A configured game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub players: usize,
    pub dim: usize,
    /// Right-hand side of the coupling constraint `sum_i alpha_i^T x_i <= b`.
    pub budget: f64,
    pub payoff: QuadraticPayoffParams,
    /// Hidden aggregator weights; only present for synthetic runs.
    pub beta_true: Option<Vec<f64>>,
}

impl GameConfig {
    pub fn new(
        budget: f64,
        payoff: QuadraticPayoffParams,
        beta_true: Option<Vec<f64>>,
    ) -> Result<Self> {
        let cfg = Self {
            players: payoff.l.len(),
            dim: 1,
            budget,
            payoff,
            beta_true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.players == 0 {
            return Err(Error::Invalid("players must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Invalid("dim must be at least 1".into()));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::Invalid(format!(
                "budget must be positive, got {}",
                self.budget
            )));
        }
        self.payoff.validate()?;
        if self.payoff.l.len() != self.players {
            return Err(Error::Invalid(format!(
                "payoff arrays have length {}, expected {}",
                self.payoff.l.len(),
                self.players
            )));
        }
        if let Some(beta) = &self.beta_true {
            if beta.len() != self.players {
                return Err(Error::Invalid(format!(
                    "beta_true has length {}, expected {}",
                    beta.len(),
                    self.players
                )));
            }
            if beta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("beta_true must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn beta_true(&self) -> Result<&[f64]> {
        self.beta_true
            .as_deref()
            .ok_or_else(|| Error::Invalid("beta_true is required for synthetic runs".into()))
    }

    /// SHA-256 over the game definition, excluding `beta_true`.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.players as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        hasher.update(self.budget.to_bits().to_le_bytes());
        for v in self.payoff.l.iter().chain(&self.payoff.h) {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.update(self.payoff.q.to_bits().to_le_bytes());
        hasher.update(self.payoff.p0.to_bits().to_le_bytes());
        hex::encode(hasher.finalize())
    }
}

/// The four-household demand-response game used throughout the experiments.
pub fn demand_response_instance() -> GameConfig {
    GameConfig::new(
        75.0,
        QuadraticPayoffParams {
            l: vec![1.0; 4],
            h: vec![50.0, 55.0, 60.0, 65.0],
            q: 0.04,
            p0: 5.0,
        },
        Some(vec![0.1, 0.2, 0.3, 0.4]),
    )
    .expect("built-in instance is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta() -> Vec<f64> {
        vec![0.1, 0.2, 0.3, 0.4]
    }

    fn nominal() -> StrategyProfile {
        PlayerMatrix::column(&[50.0, 55.0, 60.0, 65.0])
    }

    #[test]
    fn aggregate_of_zero_is_zero() {
        let x = PlayerMatrix::zeros(3, 2);
        assert_eq!(aggregate(&x, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn aggregate_demand_response_point() {
        let sigma = aggregate(&nominal(), &beta()).unwrap();
        assert!((sigma[0] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_wrong_length() {
        assert!(matches!(
            aggregate(&nominal(), &[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn payoff_at_nominal_demand() {
        let game = demand_response_instance();
        let j1 = game.payoff.payoff_value(0, &nominal(), &beta()).unwrap();
        assert!((j1 - 730.0).abs() < 1e-10);
    }

    #[test]
    fn payoff_vanishes_without_price() {
        let params = QuadraticPayoffParams {
            l: vec![2.0, 3.0],
            h: vec![4.0, 7.0],
            q: 0.0,
            p0: 0.0,
        };
        let x = PlayerMatrix::column(&[4.0, 7.0]);
        for i in 0..2 {
            assert_eq!(params.payoff_value(i, &x, &[0.5, 0.5]).unwrap(), 0.0);
        }
    }

    #[test]
    fn payoff_rejects_vector_strategies() {
        let game = demand_response_instance();
        let x = PlayerMatrix::zeros(4, 2);
        assert!(matches!(
            game.payoff.payoff_value(0, &x, &beta()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn pseudo_gradient_at_nominal_demand() {
        // At x = h the quadratic term vanishes: F_i = qN(beta_i x_i + sigma) + p0.
        let game = demand_response_instance();
        let f = game.payoff.pseudo_gradient(&nominal(), &beta()).unwrap();
        let expected = [15.4, 16.36, 17.48, 18.76];
        for (got, want) in f.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn decoupled_game_ignores_beta() {
        let params = QuadraticPayoffParams {
            l: vec![1.0, 2.0],
            h: vec![3.0, 5.0],
            q: 0.0,
            p0: 1.5,
        };
        let x = PlayerMatrix::column(&[1.0, 2.0]);
        let f1 = params.pseudo_gradient(&x, &[0.0, 0.0]).unwrap();
        let f2 = params.pseudo_gradient(&x, &[7.0, -3.0]).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.as_slice(), &[2.0 * (1.0 - 3.0) + 1.5, 4.0 * (2.0 - 5.0) + 1.5]);
    }

    #[test]
    fn decomposition_at_zero_strategy() {
        let game = demand_response_instance();
        let dec = game.payoff.affine_decomposition(&PlayerMatrix::zeros(4, 1)).unwrap();
        for i in 0..4 {
            assert_eq!(dec.a.row(i)[0], -2.0 * game.payoff.h[i] + 5.0);
            assert!(dec.coeff_row(i, 0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn decomposition_demand_response_fixture() {
        let game = demand_response_instance();
        let dec = game.payoff.affine_decomposition(&nominal()).unwrap();
        assert!(dec.a.as_slice().iter().all(|&v| v == 5.0));
        // qN = 0.16: diagonal 0.32 x_i, off-diagonal 0.16 x_j.
        assert!((dec.coeff(0, 0, 0) - 16.0).abs() < 1e-12);
        assert!((dec.coeff(0, 0, 3) - 10.4).abs() < 1e-12);
        assert!((dec.coeff(2, 0, 1) - 8.8).abs() < 1e-12);
        assert!((dec.coeff(3, 0, 3) - 20.8).abs() < 1e-12);
    }

    #[test]
    fn certificate_of_decoupled_game() {
        let params = QuadraticPayoffParams {
            l: vec![0.5, 2.0, 1.0],
            h: vec![0.0; 3],
            q: 0.0,
            p0: 0.0,
        };
        let cert = params.monotonicity_certificate(&[0.3, 0.3, 0.3]).unwrap();
        assert!((cert.mu - 1.0).abs() < 1e-12);
        assert!((cert.lipschitz - 4.0).abs() < 1e-12);

        let game = demand_response_instance();
        let zero_beta = game.payoff.monotonicity_certificate(&[0.0; 4]).unwrap();
        assert!((zero_beta.mu - 2.0).abs() < 1e-12);
        assert!((zero_beta.lipschitz - 2.0).abs() < 1e-12);
    }

    #[test]
    fn certificate_demand_response_is_monotone() {
        let game = demand_response_instance();
        let cert = game.payoff.monotonicity_certificate(&beta()).unwrap();
        assert!(cert.mu > 2.0 && cert.mu < 2.2, "mu = {}", cert.mu);
        assert!(cert.lipschitz > cert.mu);
    }

    #[test]
    fn config_rejects_nonpositive_budget() {
        let mut cfg = demand_response_instance();
        cfg.budget = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_beta_but_not_payoff() {
        let cfg = demand_response_instance();
        let mut other = cfg.clone();
        other.beta_true = Some(vec![0.0; 4]);
        assert_eq!(cfg.fingerprint(), other.fingerprint());
        other.payoff.q = 0.05;
        assert_ne!(cfg.fingerprint(), other.fingerprint());
    }
}
