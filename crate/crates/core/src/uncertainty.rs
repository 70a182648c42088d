//! Polyhedral uncertainty sets `A_i = {alpha : D alpha <= d}`, parameter
//! sampling and equilibrium dataset generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameConfig, PlayerMatrix, StrategyProfile};
use crate::lp::{solve_lp, LpProblem, LpStatus, RowSense};
use crate::vgne::{solve_vgne, SolverOptions};

/// Membership slack for generated parameters.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    /// `m x n`, unit-norm rows.
    d_matrix: Vec<Vec<f64>>,
    d_vector: Vec<f64>,
    dim: usize,
}

/// Outcome of [`slater_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlaterReport {
    pub feasible: bool,
    /// Largest ball radius inscribed in the set (capped); `> 0` means interior.
    pub margin: f64,
    pub witness: Option<Vec<f64>>,
}

impl Polyhedron {
    /// Builds `{alpha : D alpha <= d}`, normalising every row of `D` (and the
    /// matching entry of `d`) to unit Euclidean norm. Empty sets are rejected.
    pub fn new(d_matrix: Vec<Vec<f64>>, d_vector: Vec<f64>) -> Result<Self> {
        let p = Self::new_unchecked(d_matrix, d_vector)?;
        if !slater_check(&p).feasible {
            return Err(Error::Invalid("uncertainty polyhedron is empty".into()));
        }
        Ok(p)
    }

    fn new_unchecked(mut d_matrix: Vec<Vec<f64>>, mut d_vector: Vec<f64>) -> Result<Self> {
        if d_matrix.is_empty() {
            return Err(Error::Invalid("polyhedron needs at least one row".into()));
        }
        if d_matrix.len() != d_vector.len() {
            return Err(Error::Dimension(format!(
                "D has {} rows, d has {} entries",
                d_matrix.len(),
                d_vector.len()
            )));
        }
        let dim = d_matrix[0].len();
        if dim == 0 {
            return Err(Error::Invalid("polyhedron dimension must be positive".into()));
        }
        for (r, (row, rhs)) in d_matrix.iter_mut().zip(&mut d_vector).enumerate() {
            if row.len() != dim {
                return Err(Error::Dimension(format!("row {r} of D has wrong length")));
            }
            if row.iter().chain(std::iter::once(&*rhs)).any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("row {r} of D is not finite")));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Invalid(format!("row {r} of D is zero")));
            }
            if (norm - 1.0).abs() > 1e-15 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
                *rhs /= norm;
            }
        }
        Ok(Self {
            d_matrix,
            d_vector,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.d_matrix.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.d_matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.d_vector
    }

    pub fn contains(&self, alpha: &[f64], tol: f64) -> bool {
        alpha.len() == self.dim
            && self
                .d_matrix
                .iter()
                .zip(&self.d_vector)
                .all(|(row, &rhs)| row.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>() <= rhs + tol)
    }

    /// `(lo, hi)` when the rows are exactly `+e_c` and `-e_c` once per coordinate.
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.num_rows() != 2 * self.dim {
            return None;
        }
        let mut lo = vec![None; self.dim];
        let mut hi = vec![None; self.dim];
        for (row, &rhs) in self.d_matrix.iter().zip(&self.d_vector) {
            let nz: Vec<usize> = (0..self.dim).filter(|&c| row[c] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let c = nz[0];
            if row[c] == 1.0 && hi[c].is_none() {
                hi[c] = Some(rhs);
            } else if row[c] == -1.0 && lo[c].is_none() {
                lo[c] = Some(-rhs);
            } else {
                return None;
            }
        }
        let lo: Option<Vec<f64>> = lo.into_iter().collect();
        let hi: Option<Vec<f64>> = hi.into_iter().collect();
        Some((lo?, hi?))
    }

    /// Per-coordinate bounds of the set, or `None` if it is unbounded.
    pub fn bounding_box(&self) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        if let Some(b) = self.as_box() {
            return Ok(Some(b));
        }
        let mut lo = Vec::with_capacity(self.dim);
        let mut hi = Vec::with_capacity(self.dim);
        for c in 0..self.dim {
            let mut extremes = [0.0; 2];
            for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut p = LpProblem::new();
                let cols: Vec<usize> = (0..self.dim)
                    .map(|j| {
                        let cost = if j == c { sign } else { 0.0 };
                        p.add_var(format!("alpha{j}"), f64::NEG_INFINITY, f64::INFINITY, cost)
                    })
                    .collect();
                for (row, &rhs) in self.d_matrix.iter().zip(&self.d_vector) {
                    let coeffs: Vec<(usize, f64)> = cols.iter().copied().zip(row.iter().copied()).collect();
                    p.add_row(&coeffs, RowSense::Le, rhs);
                }
                let s = solve_lp(&p)?;
                match s.status {
                    LpStatus::Optimal => extremes[k] = s.primal[c],
                    LpStatus::Unbounded => return Ok(None),
                    LpStatus::Infeasible => {
                        return Err(Error::Invalid("uncertainty polyhedron is empty".into()))
                    }
                }
            }
            lo.push(extremes[0]);
            hi.push(extremes[1]);
        }
        Ok(Some((lo, hi)))
    }
}

/// Axis-aligned box `{alpha : lo <= alpha <= hi}` as a polyhedron with rows
/// `+e_c` (rhs `hi_c`) followed by `-e_c` (rhs `-lo_c`).
pub fn box_polyhedron(lo: &[f64], hi: &[f64]) -> Result<Polyhedron> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::Dimension("box bounds must have equal positive length".into()));
    }
    if let Some(c) = (0..lo.len()).find(|&c| !(lo[c] <= hi[c])) {
        return Err(Error::Invalid(format!(
            "box lower bound exceeds upper bound in coordinate {c}"
        )));
    }
    let n = lo.len();
    let mut rows = Vec::with_capacity(2 * n);
    let mut rhs = Vec::with_capacity(2 * n);
    for (c, &h) in hi.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[c] = 1.0;
        rows.push(row);
        rhs.push(h);
    }
    for (c, &l) in lo.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[c] = -1.0;
        rows.push(row);
        rhs.push(-l);
    }
    Polyhedron::new(rows, rhs)
}

/// Finds a point of the polyhedron, preferring its Chebyshev centre.
///
/// Solves `max t` subject to `D alpha + t 1 <= d`, `t <= 1e6`. A positive
/// optimum gives an interior witness; a zero optimum a boundary one.
pub fn slater_check(p: &Polyhedron) -> SlaterReport {
    let mut lp = LpProblem::new();
    let cols: Vec<usize> = (0..p.dim)
        .map(|j| lp.add_var(format!("alpha{j}"), f64::NEG_INFINITY, f64::INFINITY, 0.0))
        .collect();
    // Capped through a row: an offset bound of 1e6 would cost ~1e-10 accuracy.
    let t = lp.add_var("t", f64::NEG_INFINITY, f64::INFINITY, -1.0);
    lp.add_row(&[(t, 1.0)], RowSense::Le, 1e6);
    for (row, &rhs) in p.d_matrix.iter().zip(&p.d_vector) {
        let mut coeffs: Vec<(usize, f64)> = cols.iter().copied().zip(row.iter().copied()).collect();
        coeffs.push((t, 1.0));
        lp.add_row(&coeffs, RowSense::Le, rhs);
    }
    let infeasible = SlaterReport {
        feasible: false,
        margin: f64::NEG_INFINITY,
        witness: None,
    };
    match solve_lp(&lp) {
        Ok(s) if s.status == LpStatus::Optimal => {
            let margin = s.primal[t];
            if margin < -1e-9 {
                return SlaterReport {
                    margin,
                    ..infeasible
                };
            }
            SlaterReport {
                feasible: true,
                margin,
                witness: Some(cols.iter().map(|&c| s.primal[c]).collect()),
            }
        }
        _ => infeasible,
    }
}

/// One polyhedron per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyProfile {
    sets: Vec<Polyhedron>,
}

impl UncertaintyProfile {
    pub fn new(sets: Vec<Polyhedron>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Invalid("uncertainty profile needs at least one set".into()));
        }
        let dim = sets[0].dim();
        if sets.iter().any(|s| s.dim() != dim) {
            return Err(Error::Dimension("uncertainty sets differ in dimension".into()));
        }
        Ok(Self { sets })
    }

    /// Same set for each of `players` players.
    pub fn uniform(set: Polyhedron, players: usize) -> Result<Self> {
        Self::new(vec![set; players])
    }

    pub fn sets(&self) -> &[Polyhedron] {
        &self.sets
    }

    pub fn players(&self) -> usize {
        self.sets.len()
    }

    pub fn dim(&self) -> usize {
        self.sets[0].dim()
    }

    pub fn check_game(&self, config: &GameConfig) -> Result<()> {
        if self.players() != config.players || self.dim() != config.dim {
            return Err(Error::Dimension(format!(
                "uncertainty profile is {}x{}, game is {}x{}",
                self.players(),
                self.dim(),
                config.players,
                config.dim
            )));
        }
        Ok(())
    }

    pub fn contains(&self, alpha: &PlayerMatrix, tol: f64) -> bool {
        alpha.players() == self.players()
            && alpha.dim() == self.dim()
            && self
                .sets
                .iter()
                .enumerate()
                .all(|(i, s)| s.contains(alpha.row(i), tol))
    }
}

/// Independent RNG stream for sample `k` under a master seed.
pub fn sample_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

enum Sampler {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Rejection { lo: Vec<f64>, hi: Vec<f64> },
}

impl Sampler {
    fn for_set(p: &Polyhedron) -> Result<Self> {
        if let Some((lo, hi)) = p.as_box() {
            return Ok(Sampler::Box { lo, hi });
        }
        match p.bounding_box()? {
            Some((lo, hi)) => Ok(Sampler::Rejection { lo, hi }),
            None => Err(Error::Invalid(
                "cannot sample an unbounded uncertainty set".into(),
            )),
        }
    }

    fn draw<R: Rng>(&self, p: &Polyhedron, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            Sampler::Box { lo, hi } => {
                for (c, v) in out.iter_mut().enumerate() {
                    *v = if lo[c] == hi[c] {
                        lo[c]
                    } else {
                        lo[c] + (hi[c] - lo[c]) * rng.random::<f64>()
                    };
                }
                Ok(())
            }
            Sampler::Rejection { lo, hi } => {
                for _ in 0..1_000_000 {
                    for (c, v) in out.iter_mut().enumerate() {
                        *v = lo[c] + (hi[c] - lo[c]) * rng.random::<f64>();
                    }
                    if p.contains(out, 0.0) {
                        return Ok(());
                    }
                }
                Err(Error::Numerical("rejection sampling exhausted its budget".into()))
            }
        }
    }
}

/// Draws `count` parameter profiles, uniform on each player's set.
///
/// Sample `k` uses its own stream of `(seed, k)`, so the result does not
/// depend on evaluation order.
pub fn sample_alpha(profile: &UncertaintyProfile, seed: u64, count: usize) -> Result<Vec<PlayerMatrix>> {
    let samplers: Vec<Sampler> = profile.sets.iter().map(Sampler::for_set).collect::<Result<_>>()?;
    (0..count)
        .map(|k| {
            let mut rng = sample_rng(seed, k as u64);
            let mut alpha = PlayerMatrix::zeros(profile.players(), profile.dim());
            for (i, (set, sampler)) in profile.sets.iter().zip(&samplers).enumerate() {
                sampler.draw(set, &mut rng, alpha.row_mut(i))?;
            }
            Ok(alpha)
        })
        .collect()
}

/// A labelled sample `(alpha[k], x*_{alpha[k]})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    /// 1-based sample index.
    pub k: usize,
    pub alpha: PlayerMatrix,
    pub x_star: StrategyProfile,
    /// Coupling multiplier returned by the solver. Not part of the CSV
    /// schema; datasets read from disk carry [`recover_multiplier`]'s estimate.
    pub lambda: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
    pub seed: u64,
    /// [`GameConfig::fingerprint`] of the generating game.
    pub fingerprint: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks index contiguity, shapes and membership of every `alpha`.
    pub fn validate(&self, profile: &UncertaintyProfile) -> Result<()> {
        for (pos, p) in self.points.iter().enumerate() {
            if p.k != pos + 1 {
                return Err(Error::Invalid(format!(
                    "sample indices must be 1..M in order; found k = {} at row {}",
                    p.k,
                    pos + 1
                )));
            }
            if p.alpha.players() != profile.players() || !p.alpha.same_shape(&p.x_star) {
                return Err(Error::Dimension(format!("sample {} has the wrong shape", p.k)));
            }
            if !p.alpha.is_finite() || !p.x_star.is_finite() || !p.residual.is_finite() {
                return Err(Error::Invalid(format!("sample {} is not finite", p.k)));
            }
            if !profile.contains(&p.alpha, MEMBERSHIP_TOL) {
                return Err(Error::Invalid(format!(
                    "alpha of sample {} lies outside the uncertainty set",
                    p.k
                )));
            }
        }
        Ok(())
    }
}

/// Samples `count` parameters and labels each with the equilibrium of the
/// hidden-weight game. Solves run in parallel; output order is by index.
pub fn generate_dataset(
    config: &GameConfig,
    profile: &UncertaintyProfile,
    count: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<Dataset> {
    config.validate()?;
    profile.check_game(config)?;
    let beta = config.beta_true()?;
    let alphas = sample_alpha(profile, seed, count)?;
    let points = alphas
        .into_par_iter()
        .enumerate()
        .map(|(idx, alpha)| {
            let k = idx + 1;
            let wrap = |e: Error| Error::Sample {
                index: k,
                source: Box::new(e),
            };
            let res = solve_vgne(config, beta, &alpha, opts).map_err(wrap)?;
            if !res.converged {
                return Err(wrap(Error::NotConverged {
                    iterations: res.iterations,
                    residual: res.residual,
                }));
            }
            Ok(DataPoint {
                k,
                alpha,
                x_star: res.x_star,
                lambda: res.lambda_star,
                residual: res.residual,
            })
        })
        .collect::<Vec<Result<DataPoint>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        points,
        seed,
        fingerprint: config.fingerprint(),
    })
}
