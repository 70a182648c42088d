//! Robust counterpart of the coupled game under polyhedral uncertainty.
//!
//! The worst case of `sum_i alpha_i^T x_i` over `D_i alpha_i <= d_i` is replaced
//! by its LP dual: player `i` owns `y_i >= 0` with `D_i^T y_i = x_i`, and the
//! shared constraint becomes `sum_i d_i^T y_i <= b`.

use serde::ser::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::game::{GradientFamily, PlayerMatrix, QuadraticPayoffParams, StrategyProfile};
use crate::lp::{solve_lp, LpProblem, LpStatus, RowSense};
use crate::uncertainty::{sample_alpha, Polyhedron, UncertaintyProfile};
use crate::vgne::{resolve_steps, SolverOptions, Steps};

/// Deterministic game whose equilibria are robust to every `alpha` in the
/// uncertainty profile, built from the learned weights.
#[derive(Debug, Clone)]
pub struct RobustGame {
    pub payoff: QuadraticPayoffParams,
    pub beta_hat: Vec<f64>,
    pub profile: UncertaintyProfile,
    pub budget: f64,
}

impl RobustGame {
    pub fn players(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn dim(&self) -> usize {
        self.profile.dim()
    }

    /// Number of auxiliary variables `m_i` of each player.
    pub fn aux_sizes(&self) -> Vec<usize> {
        self.profile.sets().iter().map(Polyhedron::num_rows).collect()
    }
}

pub fn build_robust_counterpart(
    payoff: &QuadraticPayoffParams,
    beta_hat: &[f64],
    profile: &UncertaintyProfile,
    budget: f64,
) -> Result<RobustGame> {
    payoff.validate()?;
    let players = payoff.l.len();
    if beta_hat.len() != players || profile.players() != players {
        return Err(Error::Dimension(format!(
            "{players} players, {} weights, {} uncertainty sets",
            beta_hat.len(),
            profile.players()
        )));
    }
    if profile.dim() != payoff.dim() {
        return Err(Error::Dimension(format!(
            "uncertainty sets have dimension {}, strategies {}",
            profile.dim(),
            payoff.dim()
        )));
    }
    if beta_hat.iter().any(|b| !b.is_finite()) {
        return Err(Error::Invalid("beta_hat must be finite".into()));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::Invalid("budget must be positive".into()));
    }
    for (i, set) in profile.sets().iter().enumerate() {
        if set.bounding_box()?.is_none() {
            return Err(Error::Unsupported(format!(
                "uncertainty set of player {} is unbounded",
                i + 1
            )));
        }
    }
    Ok(RobustGame {
        payoff: payoff.clone(),
        beta_hat: beta_hat.to_vec(),
        profile: profile.clone(),
        budget,
    })
}

/// `max alpha^T x` over the polyhedron, with a maximiser.
pub fn support_value(p: &Polyhedron, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != p.dim() {
        return Err(Error::Dimension(format!(
            "x has length {}, polyhedron dimension {}",
            x.len(),
            p.dim()
        )));
    }
    if let Some((lo, hi)) = p.as_box() {
        let arg: Vec<f64> = x
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&xc, (&l, &h))| if xc < 0.0 { l } else { h })
            .collect();
        let value = arg.iter().zip(x).map(|(a, b)| a * b).sum();
        return Ok((value, arg));
    }
    let mut lp = LpProblem::new();
    let cols: Vec<usize> = x
        .iter()
        .enumerate()
        .map(|(c, &xc)| lp.add_var(format!("alpha{c}"), f64::NEG_INFINITY, f64::INFINITY, -xc))
        .collect();
    for (row, &rhs) in p.rows().iter().zip(p.rhs()) {
        let coeffs: Vec<(usize, f64)> = cols.iter().copied().zip(row.iter().copied()).collect();
        lp.add_row(&coeffs, RowSense::Le, rhs);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok((-sol.objective, sol.primal)),
        LpStatus::Unbounded => Err(Error::Unbounded),
        LpStatus::Infeasible => Err(Error::Infeasible),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgneResult {
    pub x_star: StrategyProfile,
    /// Dual variables of each player's worst-case subproblem.
    pub y_star: Vec<Vec<f64>>,
    /// Multiplier of `sum_i d_i^T y_i <= b`.
    pub mu_star: f64,
    /// Multipliers of `D_i^T y_i = x_i`.
    pub omega_star: PlayerMatrix,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Serialize for RgneResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(serde::Serialize)]
        struct Doc<'a> {
            x_star: &'a [f64],
            y_star: &'a [Vec<f64>],
            mu_star: f64,
            omega_star: &'a [f64],
            residual: f64,
            iterations: usize,
            converged: bool,
        }
        Doc {
            x_star: self.x_star.as_slice(),
            y_star: &self.y_star,
            mu_star: self.mu_star,
            omega_star: self.omega_star.as_slice(),
            residual: self.residual,
            iterations: self.iterations,
            converged: self.converged,
        }
        .serialize(s)
    }
}

struct State {
    x: PlayerMatrix,
    y: Vec<Vec<f64>>,
    mu: f64,
    omega: PlayerMatrix,
}

/// `D_i^T y_i` for one player.
fn dt_y(set: &Polyhedron, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; set.dim()];
    for (row, &yr) in set.rows().iter().zip(y) {
        for (o, &d) in out.iter_mut().zip(row) {
            *o += d * yr;
        }
    }
    out
}

/// `D_i w` for one player.
fn d_w(set: &Polyhedron, w: &[f64]) -> Vec<f64> {
    set.rows()
        .iter()
        .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect()
}

fn dual_budget(g: &RobustGame, y: &[Vec<f64>]) -> f64 {
    g.profile
        .sets()
        .iter()
        .zip(y)
        .map(|(set, yi)| set.rhs().iter().zip(yi).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Max-norm fixed-point defect of the first-order system, together with the
/// equality defect `max_i ||D_i^T y_i - x_i||` and the budget slack.
fn defects(g: &RobustGame, st: &State, grad: &PlayerMatrix, steps: Steps) -> (f64, f64, f64) {
    let tau = steps.primal;
    let mut worst: f64 = 0.0;
    for ((&x, &f), &w) in st
        .x
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .zip(st.omega.as_slice())
    {
        worst = worst.max((x - (x - tau * (f - w)).max(0.0)).abs());
    }
    let mut equality: f64 = 0.0;
    for (i, set) in g.profile.sets().iter().enumerate() {
        let dw = d_w(set, st.omega.row(i));
        for ((&y, &d), &dwr) in st.y[i].iter().zip(set.rhs()).zip(&dw) {
            worst = worst.max((y - (y - tau * (st.mu * d + dwr)).max(0.0)).abs());
        }
        for (a, b) in dt_y(set, &st.y[i]).iter().zip(st.x.row(i)) {
            equality = equality.max((a - b).abs());
        }
    }
    let slack = dual_budget(g, &st.y) - g.budget;
    worst = worst.max((st.mu - (st.mu + steps.dual * slack).max(0.0)).abs());
    (worst.max(equality), equality, slack)
}

/// Computes a robust GNE with the projected primal-dual scheme used for the
/// nominal game, applied to the counterpart's extended KKT system.
pub fn solve_rgne(g: &RobustGame, opts: &SolverOptions) -> Result<RgneResult> {
    solve_rgne_traced(g, opts, |_, _, _| {})
}

/// As [`solve_rgne`], calling `trace(iteration, residual, x)` before every
/// update.
pub fn solve_rgne_traced(
    g: &RobustGame,
    opts: &SolverOptions,
    mut trace: impl FnMut(usize, f64, &StrategyProfile),
) -> Result<RgneResult> {
    let (players, dim) = (g.players(), g.dim());
    let cert = g.payoff.monotonicity_certificate(&g.beta_hat)?;
    let coupling_norm_sq: f64 = g
        .profile
        .sets()
        .iter()
        .map(|set| {
            let d2: f64 = set.rhs().iter().map(|v| v * v).sum();
            let big_d2: f64 = set.rows().iter().flatten().map(|v| v * v).sum();
            d2 + big_d2 + dim as f64
        })
        .sum();
    let steps = resolve_steps(opts, &cert, coupling_norm_sq)?;
    let (tau, rho) = (steps.primal, steps.dual);

    let mut st = State {
        x: PlayerMatrix::zeros(players, dim),
        y: g.aux_sizes().into_iter().map(|m| vec![0.0; m]).collect(),
        mu: 0.0,
        omega: PlayerMatrix::zeros(players, dim),
    };
    let mut best: Option<(f64, RgneResult)> = None;

    for iter in 0..opts.max_iters {
        let grad = g.payoff.pseudo_gradient(&st.x, &g.beta_hat)?;
        let (residual, _, slack) = defects(g, &st, &grad, steps);
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("residual diverged at iteration {iter}")));
        }
        trace(iter, residual, &st.x);
        let snapshot = |st: &State, converged| RgneResult {
            x_star: st.x.clone(),
            y_star: st.y.clone(),
            mu_star: st.mu,
            omega_star: st.omega.clone(),
            residual,
            iterations: iter,
            converged,
        };
        if (st.mu * slack).abs() <= 10.0 * opts.tol && residual <= opts.tol {
            return Ok(snapshot(&st, true));
        }
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, snapshot(&st, false)));
        }

        let mut x_next = st.x.clone();
        for ((xn, &f), &w) in x_next
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(st.omega.as_slice())
        {
            *xn = (*xn - tau * (f - w)).max(0.0);
        }
        let mut y_next = st.y.clone();
        for (i, set) in g.profile.sets().iter().enumerate() {
            let dw = d_w(set, st.omega.row(i));
            for ((yn, &d), &dwr) in y_next[i].iter_mut().zip(set.rhs()).zip(&dw) {
                *yn = (*yn - tau * (st.mu * d + dwr)).max(0.0);
            }
        }

        let x_bar = x_next.lin_comb(2.0, &st.x, -1.0);
        let y_bar: Vec<Vec<f64>> = y_next
            .iter()
            .zip(&st.y)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| 2.0 * p - q).collect())
            .collect();
        st.mu = (st.mu + rho * (dual_budget(g, &y_bar) - g.budget)).max(0.0);
        for (i, set) in g.profile.sets().iter().enumerate() {
            let dty = dt_y(set, &y_bar[i]);
            for ((w, a), b) in st.omega.row_mut(i).iter_mut().zip(&dty).zip(x_bar.row(i)) {
                *w += rho * (a - b);
            }
        }
        st.x = x_next;
        st.y = y_next;
    }

    let (_, mut out) = best.ok_or_else(|| Error::Invalid("max_iters must be positive".into()))?;
    out.iterations = opts.max_iters;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFeasibilityReport {
    /// `sum_i support_value(A_i, x_i)`, the exact worst case.
    pub worst_case_lhs: f64,
    /// Largest `sum_i alpha_i^T x_i` over the sampled parameters.
    pub max_lhs: f64,
    /// 0-based index of the sample attaining `max_lhs`.
    pub worst_sample: usize,
    pub pass: bool,
}

const ROBUST_TOL: f64 = 1e-8;

/// Checks `sum_i alpha_i^T x_i <= b` for every `alpha` in the profile, exactly
/// through support values and empirically over `trials` draws.
pub fn verify_robust_feasibility(
    x_star: &StrategyProfile,
    profile: &UncertaintyProfile,
    budget: f64,
    trials: usize,
    seed: u64,
) -> Result<RobustFeasibilityReport> {
    if x_star.players() != profile.players() || x_star.dim() != profile.dim() {
        return Err(Error::Dimension("x_star does not match the uncertainty profile".into()));
    }
    let mut worst_case_lhs = 0.0;
    for (i, set) in profile.sets().iter().enumerate() {
        worst_case_lhs += support_value(set, x_star.row(i))?.0;
    }
    let alphas = sample_alpha(profile, seed, trials)?;
    let (mut max_lhs, mut worst_sample) = (f64::NEG_INFINITY, 0);
    for (k, alpha) in alphas.iter().enumerate() {
        let lhs = alpha.dot(x_star);
        if lhs > max_lhs {
            max_lhs = lhs;
            worst_sample = k;
        }
    }
    Ok(RobustFeasibilityReport {
        worst_case_lhs,
        max_lhs,
        worst_sample,
        pass: worst_case_lhs <= budget + ROBUST_TOL && max_lhs <= budget + ROBUST_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::demand_response_instance;
    use crate::uncertainty::box_polyhedron;
    use crate::vgne::solve_vgne;

    fn demand_response_robust() -> RobustGame {
        let cfg = demand_response_instance();
        let profile = UncertaintyProfile::uniform(box_polyhedron(&[0.1], &[2.0]).unwrap(), 4).unwrap();
        build_robust_counterpart(&cfg.payoff, cfg.beta_true().unwrap(), &profile, cfg.budget).unwrap()
    }

    #[test]
    fn box_support_closed_form() {
        let p = box_polyhedron(&[0.1], &[2.0]).unwrap();
        assert_eq!(support_value(&p, &[5.0]).unwrap(), (10.0, vec![2.0]));
        let (v, arg) = support_value(&p, &[-3.0]).unwrap();
        assert!((v + 0.3).abs() < 1e-15);
        assert_eq!(arg, vec![0.1]);
    }

    #[test]
    fn triangle_support_uses_lp() {
        // alpha >= 0, alpha_1 + alpha_2 <= 1
        let p = Polyhedron::new(
            vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
            vec![0.0, 0.0, 1.0],
        )
        .unwrap();
        let (v, arg) = support_value(&p, &[1.0, 3.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        assert!((arg[1] - 1.0).abs() < 1e-12);
        let half_plane = Polyhedron::new(vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert!(matches!(support_value(&half_plane, &[0.0, 1.0]), Err(Error::Unbounded)));
    }

    #[test]
    fn unbounded_sets_are_rejected() {
        let cfg = demand_response_instance();
        let ray = Polyhedron::new(vec![vec![-1.0]], vec![-0.1]).unwrap();
        let profile = UncertaintyProfile::uniform(ray, 4).unwrap();
        assert!(build_robust_counterpart(&cfg.payoff, &[0.1; 4], &profile, cfg.budget).is_err());
    }

    #[test]
    fn demand_response_encoding() {
        let g = demand_response_robust();
        assert_eq!(g.aux_sizes(), vec![2; 4]);
        for set in g.profile.sets() {
            assert_eq!(set.rhs(), &[2.0, -0.1]);
        }
    }

    #[test]
    fn worst_case_is_upper_corner() {
        let g = demand_response_robust();
        let r = solve_rgne(&g, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        let expect = [2.09403441, 6.9988058, 11.82694013, 16.58021966];
        for (a, b) in r.x_star.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        assert!((r.mu_star - 44.44606655).abs() < 1e-6);

        let cfg = demand_response_instance();
        let nominal = solve_vgne(
            &cfg,
            cfg.beta_true().unwrap(),
            &PlayerMatrix::filled(4, 1, 2.0),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(r.x_star.max_abs_diff(&nominal.x_star) < 1e-6);

        for (i, set) in g.profile.sets().iter().enumerate() {
            let dual: f64 = set.rhs().iter().zip(&r.y_star[i]).map(|(a, b)| a * b).sum();
            let (support, _) = support_value(set, r.x_star.row(i)).unwrap();
            assert!((dual - support).abs() < 1e-6);
            assert!((dual - 2.0 * r.x_star.row(i)[0]).abs() < 1e-6);
            assert!((dt_y(set, &r.y_star[i])[0] - r.x_star.row(i)[0]).abs() < 1e-8);
            assert!(r.y_star[i].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn degenerate_box_reduces_to_nominal_game() {
        let cfg = demand_response_instance();
        let c = 0.7;
        let profile = UncertaintyProfile::uniform(box_polyhedron(&[c], &[c]).unwrap(), 4).unwrap();
        let g = build_robust_counterpart(&cfg.payoff, cfg.beta_true().unwrap(), &profile, cfg.budget).unwrap();
        let r = solve_rgne(&g, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        let nominal = solve_vgne(
            &cfg,
            cfg.beta_true().unwrap(),
            &PlayerMatrix::filled(4, 1, c),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(r.x_star.max_abs_diff(&nominal.x_star) < 1e-6);
    }

    #[test]
    fn feasibility_checks() {
        let g = demand_response_robust();
        let r = solve_rgne(&g, &SolverOptions::default()).unwrap();
        let ok = verify_robust_feasibility(&r.x_star, &g.profile, g.budget, 10_000, 3).unwrap();
        assert!(ok.pass);
        assert!((ok.worst_case_lhs - g.budget).abs() < 1e-6);
        assert!(ok.max_lhs <= ok.worst_case_lhs);

        let scaled = r.x_star.map(|v| 1.1 * v);
        assert!(!verify_robust_feasibility(&scaled, &g.profile, g.budget, 100, 3).unwrap().pass);

        let zero = PlayerMatrix::zeros(4, 1);
        let z = verify_robust_feasibility(&zero, &g.profile, g.budget, 100, 3).unwrap();
        assert!(z.pass && z.worst_case_lhs == 0.0);
    }

    #[test]
    fn trace_sees_every_iteration() {
        let g = demand_response_robust();
        let mut calls = Vec::new();
        let r = solve_rgne_traced(&g, &SolverOptions::default(), |k, res, _| calls.push((k, res))).unwrap();
        assert_eq!(calls.len(), r.iterations + 1);
        assert!(calls.last().unwrap().1 <= 1e-10);
    }

    #[test]
    fn json_shape() {
        let g = demand_response_robust();
        let r = solve_rgne(&g, &SolverOptions::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["x_star"].as_array().unwrap().len(), 4);
        assert_eq!(v["y_star"][0].as_array().unwrap().len(), 2);
        assert_eq!(v["converged"], true);
    }
}
