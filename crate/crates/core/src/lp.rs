//! Dense two-phase simplex. Pricing is Dantzig's rule with a fallback to
//! Bland's anti-cycling rule on degenerate stalls, and the tableau is
//! periodically rebuilt from the original data.
//!
//! Problems are stated with general variable bounds and row senses and are
//! converted internally to `min c^T z, A z = r, z >= 0, r >= 0`. Every row
//! receives an artificial column, so the artificial block of the final
//! tableau holds `B^{-1}` and yields the row duals directly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

/// `min c^T x` subject to `A x (sense) r` and `lower <= x <= upper`.
#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    senses: Vec<RowSense>,
    rhs: Vec<f64>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a column and returns its index. Bounds may be infinite.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        for row in &mut self.rows {
            row.push(0.0);
        }
        self.objective.len() - 1
    }

    /// Adds a row given as sparse `(column, coefficient)` pairs.
    pub fn add_row(&mut self, coeffs: &[(usize, f64)], sense: RowSense, rhs: f64) -> usize {
        let mut row = vec![0.0; self.num_vars()];
        for &(j, v) in coeffs {
            row[j] += v;
        }
        self.rows.push(row);
        self.senses.push(sense);
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r]
    }

    pub fn sense(&self, r: usize) -> RowSense {
        self.senses[r]
    }

    pub fn rhs(&self, r: usize) -> f64 {
        self.rhs[r]
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn column_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, row) in self.rows.iter().enumerate() {
            let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match self.senses[r] {
                RowSense::Le => lhs - self.rhs[r],
                RowSense::Ge => self.rhs[r] - lhs,
                RowSense::Eq => (lhs - self.rhs[r]).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::Invalid(format!("bad bounds on column {}", self.names[j])));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::Invalid(format!("non-finite cost on {}", self.names[j])));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !self.rhs[r].is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("non-finite data in row {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values per column; empty unless optimal.
    pub primal: Vec<f64>,
    /// Row multipliers `y` with reduced costs `c - A^T y`. For a minimisation
    /// they are `<= 0` on `Le` rows and `>= 0` on `Ge` rows.
    pub duals: Vec<f64>,
    pub objective: f64,
    /// Nonbasic columns with zero reduced cost at the optimum. Zero proves
    /// the optimum unique; a positive count may stem from degeneracy alone.
    pub zero_reduced_costs: usize,
    /// Whether the optimal solution is unique, decided by maximising the
    /// zero-reduced-cost columns over the optimal face.
    pub unique: bool,
    pub pivots: usize,
}

impl LpSolution {
    fn with_status(status: LpStatus, pivots: usize) -> Self {
        Self {
            status,
            primal: Vec::new(),
            duals: Vec::new(),
            objective: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            zero_reduced_costs: 0,
            unique: false,
            pivots,
        }
    }

    /// `c - A^T y` per column.
    pub fn reduced_costs(&self, p: &LpProblem) -> Vec<f64> {
        (0..p.num_vars())
            .map(|j| {
                p.objective[j]
                    - p.rows
                        .iter()
                        .zip(&self.duals)
                        .map(|(row, y)| row[j] * y)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Lagrangian dual objective `r^T y + sum_j min_{l<=x<=u} d_j x_j`;
    /// reduced costs below `COST_TOL` in magnitude count as zero.
    pub fn dual_objective(&self, p: &LpProblem) -> f64 {
        let mut value: f64 = p.rhs.iter().zip(&self.duals).map(|(r, y)| r * y).sum();
        for (j, d) in self.reduced_costs(p).into_iter().enumerate() {
            if d > COST_TOL {
                value += d * p.lower[j];
            } else if d < -COST_TOL {
                value += d * p.upper[j];
            }
        }
        value
    }
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
/// Relative movement along the optimal face still treated as a single point.
const FACE_TOL: f64 = 1e-6;

/// How an original column is expressed in standard-form columns.
#[derive(Debug, Clone)]
struct ColumnMap {
    offset: f64,
    parts: Vec<(usize, f64)>,
}

struct StandardForm {
    maps: Vec<ColumnMap>,
    /// `(coefficients over structural+slack columns, rhs)`.
    rows: Vec<(Vec<f64>, f64)>,
    cost: Vec<f64>,
    cost_offset: f64,
    /// Multiplier turning a standard-row dual into the original-row dual.
    row_scale: Vec<f64>,
    /// Free variables are split in two; `twin[k]` is the other half.
    twin: Vec<Option<usize>>,
    original_rows: usize,
}

fn standard_form(p: &LpProblem) -> StandardForm {
    let mut maps = Vec::with_capacity(p.num_vars());
    let mut ncols = 0usize;
    let mut twin = Vec::new();
    let mut bound_rows = Vec::new();
    for j in 0..p.num_vars() {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        let map = if lo.is_finite() {
            let col = ncols;
            ncols += 1;
            twin.push(None);
            if hi.is_finite() {
                bound_rows.push((col, hi - lo));
            }
            ColumnMap {
                offset: lo,
                parts: vec![(col, 1.0)],
            }
        } else if hi.is_finite() {
            let col = ncols;
            ncols += 1;
            twin.push(None);
            ColumnMap {
                offset: hi,
                parts: vec![(col, -1.0)],
            }
        } else {
            let (plus, minus) = (ncols, ncols + 1);
            ncols += 2;
            twin.push(Some(minus));
            twin.push(Some(plus));
            ColumnMap {
                offset: 0.0,
                parts: vec![(plus, 1.0), (minus, -1.0)],
            }
        };
        maps.push(map);
    }

    let nslack = p
        .senses
        .iter()
        .filter(|s| **s != RowSense::Eq)
        .count()
        + bound_rows.len();
    let width = ncols + nslack;
    twin.resize(width, None);

    let mut rows = Vec::with_capacity(p.num_rows() + bound_rows.len());
    let mut row_scale = Vec::with_capacity(rows.capacity());
    let mut slack = ncols;
    let push_row = |mut coeffs: Vec<f64>, mut rhs: f64, rows: &mut Vec<(Vec<f64>, f64)>| {
        let scale = coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut factor = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        if rhs < 0.0 {
            factor = -factor;
        }
        for v in &mut coeffs {
            *v *= factor;
        }
        rhs *= factor;
        rows.push((coeffs, rhs));
        factor
    };

    for r in 0..p.num_rows() {
        let mut coeffs = vec![0.0; width];
        let mut rhs = p.rhs[r];
        for (j, &a) in p.rows[r].iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            rhs -= a * maps[j].offset;
            for &(col, sign) in &maps[j].parts {
                coeffs[col] += a * sign;
            }
        }
        match p.senses[r] {
            RowSense::Le => {
                coeffs[slack] = 1.0;
                slack += 1;
            }
            RowSense::Ge => {
                coeffs[slack] = -1.0;
                slack += 1;
            }
            RowSense::Eq => {}
        }
        let factor = push_row(coeffs, rhs, &mut rows);
        row_scale.push(factor);
    }
    for (col, width_bound) in bound_rows {
        let mut coeffs = vec![0.0; width];
        coeffs[col] = 1.0;
        coeffs[slack] = 1.0;
        slack += 1;
        let factor = push_row(coeffs, width_bound, &mut rows);
        row_scale.push(factor);
    }

    let mut cost = vec![0.0; width];
    let mut cost_offset = 0.0;
    for (j, map) in maps.iter().enumerate() {
        let c = p.objective[j];
        cost_offset += c * map.offset;
        for &(col, sign) in &map.parts {
            cost[col] += c * sign;
        }
    }

    StandardForm {
        maps,
        rows,
        cost,
        cost_offset,
        row_scale,
        twin,
        original_rows: p.num_rows(),
    }
}

struct Tableau {
    /// `m` rows of `width + m + 1` entries: structural, artificial, rhs.
    t: Vec<f64>,
    /// The initial tableau `[A | I | b]`, kept for refactorisation.
    orig: Vec<f64>,
    m: usize,
    width: usize,
    stride: usize,
    basis: Vec<usize>,
    pivots: usize,
    since_refactor: usize,
}

/// Pivots between rebuilding the tableau from the original data.
const REFACTOR_EVERY: usize = 64;
/// Consecutive degenerate pivots before pricing falls back to Bland's rule.
const STALL_LIMIT: usize = 30;

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let m = sf.rows.len();
        let width = sf.cost.len();
        let stride = width + m + 1;
        let mut t = vec![0.0; m * stride];
        for (i, (coeffs, rhs)) in sf.rows.iter().enumerate() {
            let row = &mut t[i * stride..(i + 1) * stride];
            row[..width].copy_from_slice(coeffs);
            row[width + i] = 1.0;
            row[stride - 1] = *rhs;
        }
        Self {
            orig: t.clone(),
            t,
            m,
            width,
            stride,
            basis: (width..width + m).collect(),
            pivots: 0,
            since_refactor: 0,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.stride + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.stride + self.stride - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let stride = self.stride;
        let p = self.t[r * stride + c];
        for v in &mut self.t[r * stride..(r + 1) * stride] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * stride..(r + 1) * stride].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * stride + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * stride..(i + 1) * stride];
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            row[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    /// Recomputes `B^{-1} [A | I | b]` from the original data to shed the
    /// rounding accumulated by successive pivots.
    fn refactor(&mut self) {
        self.since_refactor = 0;
        let (m, stride) = (self.m, self.stride);
        if m == 0 {
            return;
        }
        let orig = DMatrix::from_row_slice(m, stride, &self.orig);
        let b = DMatrix::from_fn(m, m, |i, k| orig[(i, self.basis[k])]);
        let Some(inv) = b.try_inverse() else {
            return;
        };
        let fresh = inv * orig;
        if !fresh.iter().all(|v| v.is_finite()) {
            return;
        }
        for i in 0..m {
            for j in 0..stride {
                self.t[i * stride + j] = fresh[(i, j)];
            }
        }
        for (i, &bj) in self.basis.iter().enumerate() {
            for k in 0..m {
                self.t[k * stride + bj] = if k == i { 1.0 } else { 0.0 };
            }
        }
    }

    /// Reduced costs `c_j - c_B^T B^{-1} a_j` for every column.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for (j, dj) in d.iter_mut().enumerate() {
                *dj -= cb * self.at(i, j);
            }
        }
        d
    }

    /// Minimises `cost` over columns with `eligible(j)`; returns false when an
    /// improving column has no blocking row (unbounded).
    ///
    /// Pricing is Dantzig's rule; after a run of degenerate pivots it
    /// switches to Bland's rule, which cannot cycle, until progress resumes.
    fn optimize(&mut self, cost: &[f64], eligible: impl Fn(usize) -> bool, limit: usize) -> Result<bool> {
        let mut stalled = 0usize;
        loop {
            if self.pivots > limit {
                return Err(Error::Numerical(format!(
                    "simplex exceeded {limit} pivots"
                )));
            }
            let bland = stalled >= STALL_LIMIT;
            let d = self.reduced_costs(cost);
            let candidates = (0..d.len()).filter(|&j| eligible(j) && d[j] < -COST_TOL);
            let enter = if bland {
                candidates.min()
            } else {
                candidates.min_by(|&a, &b| d[a].total_cmp(&d[b]))
            };
            let Some(enter) = enter else {
                return Ok(true);
            };
            let mut best_ratio = f64::INFINITY;
            // Harris bound: ratios with the right-hand side relaxed by the
            // feasibility tolerance.
            let mut harris = f64::INFINITY;
            for i in 0..self.m {
                let a = self.at(i, enter);
                if a > PIVOT_TOL {
                    best_ratio = best_ratio.min(self.rhs(i).max(0.0) / a);
                    harris = harris.min((self.rhs(i).max(0.0) + FEAS_TOL) / a);
                }
            }
            if best_ratio == f64::INFINITY {
                return Ok(false);
            }
            // Bland takes the smallest basic index among exact minimisers.
            // Otherwise every row within the Harris bound qualifies and the
            // largest pivot wins, which keeps the basis well conditioned.
            let tie = 1e-12 * (1.0 + best_ratio);
            let mut leave: Option<usize> = None;
            for i in 0..self.m {
                let a = self.at(i, enter);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                if (bland && ratio > best_ratio + tie) || (!bland && ratio > harris) {
                    continue;
                }
                leave = match leave {
                    None => Some(i),
                    Some(l) if bland && self.basis[i] < self.basis[l] => Some(i),
                    Some(l) if !bland && a > self.at(l, enter) => Some(i),
                    keep => keep,
                };
            }
            let r = leave.expect("a blocking row exists");
            if best_ratio * d[enter].abs() > 1e-12 {
                stalled = 0;
            } else {
                stalled += 1;
            }
            self.pivot(r, enter);
        }
    }
}

impl Tableau {
    /// [`Tableau::optimize`] followed by a rebuild, repeated until the clean
    /// tableau confirms optimality; drift can hide improving columns.
    fn optimize_clean(&mut self, cost: &[f64], eligible: impl Fn(usize) -> bool + Copy, limit: usize) -> Result<bool> {
        for _ in 0..8 {
            if !self.optimize(cost, eligible, limit)? {
                return Ok(false);
            }
            self.refactor();
            let d = self.reduced_costs(cost);
            if !(0..d.len()).any(|j| eligible(j) && d[j] < -COST_TOL) {
                return Ok(true);
            }
        }
        Err(Error::Numerical("simplex did not settle after refactorisation".into()))
    }
}

/// Solves the linear program. Infeasible and unbounded outcomes are
/// reported through [`LpStatus`]; `Err` is reserved for numerical failure.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let sf = standard_form(p);
    let mut tab = Tableau::new(&sf);
    let (m, width) = (tab.m, tab.width);
    let limit = 50 * (m + width) + 10_000;

    // Phase 1: minimise the sum of artificials.
    let mut phase1 = vec![0.0; width + m];
    for c in &mut phase1[width..] {
        *c = 1.0;
    }
    let bounded = tab.optimize_clean(&phase1, |j| j < width, limit)?;
    if !bounded {
        return Err(Error::Numerical("phase 1 reported unbounded".into()));
    }
    let infeasibility: f64 = (0..m)
        .filter(|&i| tab.basis[i] >= width)
        .map(|i| tab.rhs(i))
        .sum();
    let rhs_scale = 1.0 + sf.rows.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
    if infeasibility > FEAS_TOL * rhs_scale {
        return Ok(LpSolution::with_status(LpStatus::Infeasible, tab.pivots));
    }

    // Drive zero-level artificials out of the basis where possible.
    for i in 0..m {
        if tab.basis[i] < width {
            continue;
        }
        let best = (0..width)
            .map(|j| (j, tab.at(i, j).abs()))
            .filter(|&(_, a)| a > 1e-8)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            tab.pivot(i, j);
        }
    }

    // Phase 2.
    let mut cost = sf.cost.clone();
    cost.resize(width + m, 0.0);
    let bounded = tab.optimize_clean(&cost, |j| j < width, limit)?;
    if !bounded {
        return Ok(LpSolution::with_status(LpStatus::Unbounded, tab.pivots));
    }

    let mut z = vec![0.0; width];
    for i in 0..m {
        if tab.basis[i] < width {
            z[tab.basis[i]] = tab.rhs(i).max(0.0);
        }
    }
    let primal: Vec<f64> = sf
        .maps
        .iter()
        .map(|map| map.offset + map.parts.iter().map(|&(c, s)| s * z[c]).sum::<f64>())
        .collect();

    // y_std = c_B^T B^{-1}; B^{-1} sits in the artificial block.
    let duals: Vec<f64> = (0..sf.original_rows)
        .map(|r| {
            let y_std: f64 = (0..m)
                .map(|i| cost[tab.basis[i]] * tab.at(i, width + r))
                .sum();
            y_std * sf.row_scale[r]
        })
        .collect();

    let d = tab.reduced_costs(&cost);
    let basic: Vec<bool> = {
        let mut b = vec![false; width + m];
        for &j in &tab.basis {
            b[j] = true;
        }
        b
    };
    let face: Vec<usize> = (0..width)
        .filter(|&j| !basic[j] && d[j].abs() <= 1e-9)
        .filter(|&j| !matches!(sf.twin[j], Some(t) if basic[t] || t < j))
        .collect();
    let zero_reduced_costs = face.len();
    let unique = face.is_empty() || optimum_is_unique(&tab, &face, &basic, limit)?;

    let objective = sf.cost_offset + sf.cost.iter().zip(&z).map(|(c, v)| c * v).sum::<f64>();
    let residual = p.infeasibility(&primal);
    let scale = 1.0
        + primal.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        + p.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !residual.is_finite() || residual > 1e-7 * scale {
        return Err(Error::Numerical(format!(
            "primal residual {residual:.3e} after {} pivots",
            tab.pivots
        )));
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal,
        duals,
        objective,
        zero_reduced_costs,
        unique,
        pivots: tab.pivots,
    })
}

/// Maximises the sum of the zero-reduced-cost columns `face` over the
/// optimal face, on a copy of the final tableau. Nonbasic columns with a
/// positive reduced cost stay at zero, so a zero maximum pins the solution.
fn optimum_is_unique(tab: &Tableau, face: &[usize], basic: &[bool], limit: usize) -> Result<bool> {
    let mut probe = Tableau {
        t: tab.t.clone(),
        orig: tab.orig.clone(),
        basis: tab.basis.clone(),
        pivots: 0,
        ..*tab
    };
    let mut cost = vec![0.0; tab.width + tab.m];
    for &j in face {
        cost[j] = -1.0;
    }
    let width = tab.width;
    let in_face = |j: usize| j < width && (basic[j] || cost[j] != 0.0);
    if !probe.optimize(&cost, in_face, limit)? {
        return Ok(false);
    }
    let spread: f64 = (0..probe.m)
        .filter(|&i| face.contains(&probe.basis[i]))
        .map(|i| probe.rhs(i).max(0.0))
        .sum();
    // Data rounded at the 1e-10 level lets a degenerate vertex drift by a
    // few ulps of the solution; only movement beyond that counts.
    let scale = 1.0 + (0..tab.m).map(|i| tab.rhs(i).abs()).fold(0.0, f64::max);
    Ok(spread <= FACE_TOL * scale)
}
