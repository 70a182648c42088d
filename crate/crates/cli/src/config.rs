//! Strict JSON experiment configuration.

use std::path::{Path, PathBuf};

use rgne_core::game::{GameConfig, QuadraticPayoffParams};
use rgne_core::uncertainty::{box_polyhedron, slater_check, Polyhedron, UncertaintyProfile};
use rgne_core::vgne::SolverOptions;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    players: usize,
    dim: usize,
    budget: f64,
    payoff: QuadraticPayoffParams,
    #[serde(default)]
    beta_true: Option<Vec<f64>>,
    uncertainty: Vec<RawSet>,
    #[serde(default)]
    solver: Option<RawSolver>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum RawSet {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Polyhedron {
        #[serde(rename = "D")]
        d_matrix: Vec<Vec<f64>>,
        #[serde(rename = "d")]
        d_vector: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    tol: Option<f64>,
    max_iters: Option<usize>,
}

/// A validated configuration together with its provenance.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub game: GameConfig,
    pub profile: UncertaintyProfile,
    pub solver: SolverOptions,
    pub path: PathBuf,
    /// SHA-256 of the file bytes.
    pub sha256: String,
}

fn invalid(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {message}"))
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = parse_config(&bytes).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.path = path.to_path_buf();
    Ok(cfg)
}

/// Parses and validates configuration bytes; `path` is left empty.
pub fn parse_config(bytes: &[u8]) -> CliResult<LoadedConfig> {
    let raw: RawConfig =
        serde_json::from_slice(bytes).map_err(|e| CliError::Validation(format!("parse error: {e}")))?;
    let n = raw.players;
    if n == 0 {
        return Err(invalid("players", "must be positive"));
    }
    if raw.dim != 1 {
        return Err(invalid("dim", "the quadratic payoff family has scalar strategies; dim must be 1"));
    }
    if !(raw.budget > 0.0 && raw.budget.is_finite()) {
        return Err(invalid("budget", format!("must be positive, got {}", raw.budget)));
    }
    for (name, len) in [("payoff.l", raw.payoff.l.len()), ("payoff.h", raw.payoff.h.len())] {
        if len != n {
            return Err(invalid(name, format!("expected {n} entries, got {len}")));
        }
    }
    if let Some(beta) = &raw.beta_true {
        if beta.len() != n {
            return Err(invalid("beta_true", format!("expected {n} entries, got {}", beta.len())));
        }
    }
    let game = GameConfig::new(raw.budget, raw.payoff, raw.beta_true)
        .map_err(|e| invalid("payoff", e))?;

    let mut sets = Vec::with_capacity(raw.uncertainty.len());
    for (k, set) in raw.uncertainty.into_iter().enumerate() {
        let field = format!("uncertainty[{k}]");
        let poly = match set {
            RawSet::Box { lo, hi } => box_polyhedron(&lo, &hi).map_err(|e| invalid(&format!("{field}.box"), e))?,
            RawSet::Polyhedron { d_matrix, d_vector } => {
                Polyhedron::new(d_matrix, d_vector).map_err(|e| invalid(&format!("{field}.polyhedron"), e))?
            }
        };
        if poly.dim() != raw.dim {
            return Err(invalid(&field, format!("set has dimension {}, expected {}", poly.dim(), raw.dim)));
        }
        if !slater_check(&poly).feasible {
            return Err(invalid(&field, "set is empty"));
        }
        sets.push(poly);
    }
    let profile = match sets.len() {
        1 => UncertaintyProfile::uniform(sets.pop().expect("one set"), n),
        len if len == n => UncertaintyProfile::new(sets),
        len => return Err(invalid("uncertainty", format!("expected 1 or {n} sets, got {len}"))),
    }
    .map_err(|e| invalid("uncertainty", e))?;

    let mut solver = SolverOptions::default();
    if let Some(s) = raw.solver {
        if let Some(tol) = s.tol {
            solver.tol = tol;
        }
        if let Some(it) = s.max_iters {
            solver.max_iters = it;
        }
    }
    solver.validate().map_err(|e| invalid("solver", e))?;

    Ok(LoadedConfig {
        game,
        profile,
        solver,
        path: PathBuf::new(),
        sha256: hex::encode(Sha256::digest(bytes)),
    })
}
