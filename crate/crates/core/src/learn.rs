//! Inverse variational-inequality learning of the aggregator weights.
//!
//! A point `x*` is a variational equilibrium under `alpha` iff some `gamma <= 0`
//! satisfies `F(x*)^T x* - gamma b <= delta` and `F_i(x*) - gamma alpha_i >= 0`
//! with `delta = 0`. Because `F` is affine in `beta`, stacking these relations
//! over a dataset and minimising the slack `delta` is a linear program.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AffineGradient, GradientFamily, PlayerMatrix, StrategyProfile};
use crate::lp::{solve_lp, LpProblem, LpSolution, LpStatus, RowSense};
use crate::uncertainty::Dataset;

/// Feasible range of the scalar `gamma` for one data point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaInterval {
    pub lo: f64,
    pub hi: f64,
    pub feasible: bool,
}

/// Closed-form intersection of the constraints on `gamma`:
/// `F^T x* - gamma b <= delta`, `F_ic - gamma alpha_ic >= 0`, `gamma <= 0`.
pub fn feasible_gamma_interval(
    f_vals: &PlayerMatrix,
    x_star: &StrategyProfile,
    alpha: &PlayerMatrix,
    budget: f64,
    delta: f64,
) -> Result<GammaInterval> {
    if !(budget > 0.0) {
        return Err(Error::Invalid("budget must be positive".into()));
    }
    if !(delta >= 0.0) {
        return Err(Error::Invalid("delta must be nonnegative".into()));
    }
    if !f_vals.same_shape(x_star) || !f_vals.same_shape(alpha) {
        return Err(Error::Dimension("F, x* and alpha must share a shape".into()));
    }
    let mut lo = (f_vals.dot(x_star) - delta) / budget;
    let mut hi: f64 = 0.0;
    let mut sign_ok = true;
    for (&f, &a) in f_vals.as_slice().iter().zip(alpha.as_slice()) {
        if a > 0.0 {
            hi = hi.min(f / a);
        } else if a < 0.0 {
            lo = lo.max(f / a);
        } else if f < 0.0 {
            sign_ok = false;
        }
    }
    Ok(GammaInterval {
        lo,
        hi,
        feasible: sign_ok && lo <= hi,
    })
}

/// Smallest slack `delta` for which `(beta, delta)` is consistent with one
/// data point, with the `gamma` attaining it. `None` when no slack suffices.
pub fn minimal_slack(
    f_vals: &PlayerMatrix,
    x_star: &StrategyProfile,
    alpha: &PlayerMatrix,
    budget: f64,
) -> Result<Option<(f64, f64)>> {
    // The slack row relaxes as gamma grows, so gamma sits at the upper end.
    let iv = feasible_gamma_interval(f_vals, x_star, alpha, budget, f64::MAX)?;
    if !iv.feasible {
        return Ok(None);
    }
    let gamma = iv.hi;
    let mut delta = (f_vals.dot(x_star) - gamma * budget).max(0.0);
    // Round up until the interval test agrees that the slack suffices.
    let mut bump = f64::EPSILON * (f_vals.dot(x_star).abs() + (gamma * budget).abs());
    while !feasible_gamma_interval(f_vals, x_star, alpha, budget, delta)?.feasible {
        delta = (delta + bump).max(delta.next_up());
        bump *= 2.0;
    }
    Ok(Some((delta, gamma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// One shared slack, `min max_k delta[k]`.
    Inf,
    /// Per-sample slacks, `min sum_k delta[k]`.
    L1,
}

impl std::str::FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" => Ok(Norm::Inf),
            "l1" => Ok(Norm::L1),
            other => Err(Error::Invalid(format!("unknown norm {other:?} (expected inf or l1)"))),
        }
    }
}

/// Box bounds applied to every weight inside the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for BetaBounds {
    fn default() -> Self {
        Self { lo: -10.0, hi: 10.0 }
    }
}

/// The inverse program with its column layout.
#[derive(Debug, Clone)]
pub struct InverseLp {
    pub problem: LpProblem,
    pub beta_cols: Vec<usize>,
    pub gamma_cols: Vec<usize>,
    /// One column for `Norm::Inf`, one per sample for `Norm::L1`.
    pub delta_cols: Vec<usize>,
    pub norm: Norm,
}

/// Assembles the data-driven inverse program in `(beta, gamma[1..M], delta)`.
pub fn build_inverse_lp<G: GradientFamily + ?Sized>(
    dataset: &Dataset,
    family: &G,
    budget: f64,
    norm: Norm,
    bounds: BetaBounds,
) -> Result<InverseLp> {
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot learn from an empty dataset".into()));
    }
    if !(bounds.lo <= bounds.hi) {
        return Err(Error::Invalid("beta bounds are inverted".into()));
    }
    let players = family.players();
    let mut p = LpProblem::new();
    let beta_cols: Vec<usize> = (0..players)
        .map(|j| p.add_var(format!("beta_{}", j + 1), bounds.lo, bounds.hi, 0.0))
        .collect();
    let gamma_cols: Vec<usize> = (1..=dataset.len())
        .map(|k| p.add_var(format!("gamma_{k}"), f64::NEG_INFINITY, 0.0, 0.0))
        .collect();
    let delta_cols: Vec<usize> = match norm {
        Norm::Inf => vec![p.add_var("delta", 0.0, f64::INFINITY, 1.0)],
        Norm::L1 => (1..=dataset.len())
            .map(|k| p.add_var(format!("delta_{k}"), 0.0, f64::INFINITY, 1.0))
            .collect(),
    };

    for (idx, point) in dataset.points.iter().enumerate() {
        if point.x_star.players() != players || !point.alpha.same_shape(&point.x_star) {
            return Err(Error::Dimension(format!("sample {} has the wrong shape", point.k)));
        }
        let dec: AffineGradient = family.affine_decomposition(&point.x_star)?;
        let x = &point.x_star;
        let gamma = gamma_cols[idx];
        let delta = delta_cols[if norm == Norm::Inf { 0 } else { idx }];

        // (a + B beta)^T x - gamma b - delta <= 0
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(players + 2);
        for (j, &col) in beta_cols.iter().enumerate() {
            let mut v = 0.0;
            for i in 0..players {
                for (c, &xic) in x.row(i).iter().enumerate() {
                    v += dec.coeff(i, c, j) * xic;
                }
            }
            coeffs.push((col, v));
        }
        coeffs.push((gamma, -budget));
        coeffs.push((delta, -1.0));
        p.add_row(&coeffs, RowSense::Le, -dec.a.dot(x));

        // a_ic + (B beta)_ic - gamma alpha_ic >= 0
        for i in 0..players {
            for c in 0..x.dim() {
                let mut coeffs: Vec<(usize, f64)> = beta_cols
                    .iter()
                    .enumerate()
                    .map(|(j, &col)| (col, dec.coeff(i, c, j)))
                    .collect();
                coeffs.push((gamma, -point.alpha.row(i)[c]));
                p.add_row(&coeffs, RowSense::Ge, -dec.a.row(i)[c]);
            }
        }
    }

    Ok(InverseLp {
        problem: p,
        beta_cols,
        gamma_cols,
        delta_cols,
        norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Apply only when the LP optimum is not provably unique.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnOptions {
    pub norm: Norm,
    pub beta_bounds: BetaBounds,
    pub tie_break: TieBreak,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            norm: Norm::Inf,
            beta_bounds: BetaBounds::default(),
            tie_break: TieBreak::Auto,
        }
    }
}

/// Slack of a learning result: a scalar under the infinity norm, one entry
/// per sample under the l1 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Slack {
    Shared(f64),
    PerSample(Vec<f64>),
}

impl Slack {
    /// Largest slack over samples.
    pub fn max(&self) -> f64 {
        match self {
            Slack::Shared(d) => *d,
            Slack::PerSample(v) => v.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub beta_hat: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Slack,
    pub norm: Norm,
    pub status: String,
    pub tie_break_applied: bool,
    /// Nonbasic LP columns with zero reduced cost; zero means a unique optimum.
    #[serde(default)]
    pub optimal_face_dim: usize,
}

impl LearnResult {
    /// Largest violation of the inverse program's rows on `dataset`.
    pub fn constraint_violation<G: GradientFamily + ?Sized>(
        &self,
        dataset: &Dataset,
        family: &G,
        budget: f64,
    ) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (idx, point) in dataset.points.iter().enumerate() {
            let f = family.pseudo_gradient(&point.x_star, &self.beta_hat)?;
            let gamma = self.gamma[idx];
            let delta = match &self.delta {
                Slack::Shared(d) => *d,
                Slack::PerSample(v) => v[idx],
            };
            worst = worst.max(f.dot(&point.x_star) - gamma * budget - delta);
            for (&fv, &a) in f.as_slice().iter().zip(point.alpha.as_slice()) {
                worst = worst.max(gamma * a - fv);
            }
            worst = worst.max(gamma).max(-delta);
        }
        Ok(worst)
    }
}

/// Learns the aggregator weights from equilibrium data.
pub fn learn_weights<G: GradientFamily + ?Sized>(
    dataset: &Dataset,
    family: &G,
    budget: f64,
    options: &LearnOptions,
) -> Result<LearnResult> {
    let inv = build_inverse_lp(dataset, family, budget, options.norm, options.beta_bounds)?;
    let sol = solve_lp(&inv.problem)?;
    match sol.status {
        LpStatus::Infeasible => return Err(Error::Infeasible),
        LpStatus::Unbounded => return Err(Error::Unbounded),
        LpStatus::Optimal => {}
    }
    let mut vertex = result_from_vertex(&inv, &sol);
    // The simplex meets its rows only to pivoting tolerance; recompute the
    // slacks exactly from the learned weights.
    if let Some((gamma, delta)) = closed_form_slacks(dataset, family, budget, &vertex.beta_hat, inv.norm)? {
        vertex.gamma = gamma;
        vertex.delta = delta;
    }
    let wants_tie_break = match options.tie_break {
        TieBreak::Always => true,
        TieBreak::Never => false,
        TieBreak::Auto => !sol.unique,
    };
    if !wants_tie_break {
        return Ok(vertex);
    }
    match min_norm_selection(dataset, family, budget, &inv, &sol, options)? {
        Some(selected) => Ok(selected),
        None => Ok(vertex),
    }
}

/// Smallest slacks consistent with `beta_hat`, and the `gamma` attaining them.
fn closed_form_slacks<G: GradientFamily + ?Sized>(
    dataset: &Dataset,
    family: &G,
    budget: f64,
    beta_hat: &[f64],
    norm: Norm,
) -> Result<Option<(Vec<f64>, Slack)>> {
    let mut gamma = Vec::with_capacity(dataset.len());
    let mut slacks = Vec::with_capacity(dataset.len());
    for point in &dataset.points {
        let f = family.pseudo_gradient(&point.x_star, beta_hat)?;
        match minimal_slack(&f, &point.x_star, &point.alpha, budget)? {
            Some((d, g)) => {
                slacks.push(d);
                gamma.push(g);
            }
            None => return Ok(None),
        }
    }
    let delta = match norm {
        Norm::Inf => Slack::Shared(slacks.iter().copied().fold(0.0, f64::max)),
        Norm::L1 => Slack::PerSample(slacks),
    };
    Ok(Some((gamma, delta)))
}

fn result_from_vertex(inv: &InverseLp, sol: &LpSolution) -> LearnResult {
    let pick = |cols: &[usize]| cols.iter().map(|&c| sol.primal[c]).collect::<Vec<_>>();
    let delta = pick(&inv.delta_cols);
    LearnResult {
        beta_hat: pick(&inv.beta_cols),
        gamma: pick(&inv.gamma_cols),
        delta: match inv.norm {
            Norm::Inf => Slack::Shared(delta[0]),
            Norm::L1 => Slack::PerSample(delta),
        },
        norm: inv.norm,
        status: "optimal".into(),
        tie_break_applied: false,
        optimal_face_dim: sol.zero_reduced_costs,
    }
}

/// Slack added to the optimal objective before the tie-break.
const TIE_BREAK_SLACK: f64 = 1e-9;
const TIE_BREAK_MAX_ITERS: usize = 50_000;

/// Minimal-Euclidean-norm point of the optimal face (relaxed by
/// [`TIE_BREAK_SLACK`]), found by accelerated projected gradient on the dual
/// `min_{u >= 0} 1/2 ||G^T u||^2 + h^T u` of `min 1/2 ||z||^2, G z <= h`.
///
/// `gamma` and `delta` are then reset from the closed-form interval so the
/// returned triple satisfies the inverse program exactly. Returns `None` if
/// the iteration fails to reach a point that is at least as good as the
/// vertex.
fn min_norm_selection<G: GradientFamily + ?Sized>(
    dataset: &Dataset,
    family: &G,
    budget: f64,
    inv: &InverseLp,
    sol: &LpSolution,
    options: &LearnOptions,
) -> Result<Option<LearnResult>> {
    let p = &inv.problem;
    let nvar = p.num_vars();
    let objective_cap = sol.objective + TIE_BREAK_SLACK;

    // Rows of G z <= h with unit-norm rows; z covers every LP column, and the
    // objective enters as the extra row c^T z <= objective_cap.
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    let mut push = |row: Vec<f64>, rhs: f64| {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            g_rows.push(row.iter().map(|v| v / n).collect());
            h.push(rhs / n);
        }
    };
    for r in 0..p.num_rows() {
        let row = p.row(r).to_vec();
        match p.sense(r) {
            RowSense::Le => push(row, p.rhs(r)),
            RowSense::Ge => push(row.iter().map(|v| -v).collect(), -p.rhs(r)),
            RowSense::Eq => {
                push(row.clone(), p.rhs(r));
                push(row.iter().map(|v| -v).collect(), -p.rhs(r));
            }
        }
    }
    for j in 0..nvar {
        let (lo, hi) = p.bounds(j);
        let mut e = vec![0.0; nvar];
        if hi.is_finite() {
            e[j] = 1.0;
            push(e.clone(), hi);
        }
        if lo.is_finite() {
            e[j] = -1.0;
            push(e, -lo);
        }
    }
    push(p.objective().to_vec(), objective_cap);

    let m = g_rows.len();
    // ||G||_2^2 by power iteration on G^T G.
    let apply_gt = |u: &[f64]| {
        let mut z = vec![0.0; nvar];
        for (row, &ui) in g_rows.iter().zip(u) {
            if ui != 0.0 {
                for (zj, gj) in z.iter_mut().zip(row) {
                    *zj += ui * gj;
                }
            }
        }
        z
    };
    let apply_g = |z: &[f64]| -> Vec<f64> {
        g_rows
            .iter()
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut v = vec![1.0; nvar];
    let mut lip = 1.0;
    for _ in 0..100 {
        let w = apply_gt(&apply_g(&v));
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            break;
        }
        lip = n / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / n).collect();
    }
    let step = 1.0 / (1.05 * lip);

    let mut u = vec![0.0; m];
    let mut y = u.clone();
    let mut t: f64 = 1.0;
    let mut z = vec![0.0; nvar];
    let mut converged = false;
    for _ in 0..TIE_BREAK_MAX_ITERS {
        // grad of dual objective at y: G G^T y + h, with z(y) = -G^T y.
        let zy: Vec<f64> = apply_gt(&y).iter().map(|v| -v).collect();
        let gz = apply_g(&zy);
        let mut next = vec![0.0; m];
        for i in 0..m {
            next[i] = (y[i] - step * (h[i] - gz[i])).max(0.0);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // Adaptive restart when the step opposes the momentum direction.
        let restart = next
            .iter()
            .zip(&u)
            .zip(&y)
            .map(|((n, o), yy)| (yy - n) * (n - o))
            .sum::<f64>()
            > 0.0;
        if restart {
            t = 1.0;
            y = next.clone();
        } else {
            y = next.iter().zip(&u).map(|(n, o)| n + momentum * (n - o)).collect();
            t = t_next;
        }
        u = next;

        z = apply_gt(&u).iter().map(|v| -v).collect();
        let gz = apply_g(&z);
        let infeas = gz
            .iter()
            .zip(&h)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max);
        let znorm: f64 = z.iter().map(|v| v * v).sum();
        let gap = znorm + h.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        if infeas <= 1e-13 && gap.abs() <= 1e-8 * (1.0 + znorm) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Ok(None);
    }

    let beta_hat: Vec<f64> = inv
        .beta_cols
        .iter()
        .map(|&c| z[c].clamp(options.beta_bounds.lo, options.beta_bounds.hi))
        .collect();
    let Some((gamma, delta)) = closed_form_slacks(dataset, family, budget, &beta_hat, inv.norm)? else {
        return Ok(None);
    };
    let achieved = match &delta {
        Slack::Shared(d) => *d,
        Slack::PerSample(v) => v.iter().sum(),
    };
    if achieved > objective_cap + 1e-7 * (1.0 + sol.objective.abs()) {
        return Ok(None);
    }
    Ok(Some(LearnResult {
        beta_hat,
        gamma,
        delta,
        norm: inv.norm,
        status: "optimal".into(),
        tie_break_applied: true,
        optimal_face_dim: sol.zero_reduced_costs,
    }))
}

/// Mean estimated error `(1/N) (sum_i (beta_hat_i - beta_i)^2)^{1/2}`.
pub fn mee(beta_hat: &[f64], beta_true: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta_true.len() || beta_hat.is_empty() {
        return Err(Error::Dimension(format!(
            "weight vectors have lengths {} and {}",
            beta_hat.len(),
            beta_true.len()
        )));
    }
    let ss: f64 = beta_hat
        .iter()
        .zip(beta_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(ss.sqrt() / beta_hat.len() as f64)
}
