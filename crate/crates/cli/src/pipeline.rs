//! The gen → learn → robust → bound chain and the sample-size sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rgne_core::bounds::BoundReport;
use rgne_core::learn::{learn_weights, mee, LearnOptions, LearnResult};
use rgne_core::robust::{build_robust_counterpart, solve_rgne_traced, RgneResult};
use rgne_core::uncertainty::{generate_dataset, Dataset};
use rgne_core::Error;
use serde::Deserialize;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::io::{read_dataset, write_dataset, write_json_artifact, write_table};
use crate::manifest::RunManifest;
use crate::stats::median;

pub fn stage_gen(cfg: &LoadedConfig, samples: usize, seed: u64) -> CliResult<Dataset> {
    if samples == 0 {
        return Err(CliError::stage("gen")(Error::Invalid("sample count must be at least 1".into())));
    }
    generate_dataset(&cfg.game, &cfg.profile, samples, seed, &cfg.solver).map_err(CliError::stage("gen"))
}

pub fn stage_learn(cfg: &LoadedConfig, dataset: &Dataset, opts: &LearnOptions) -> CliResult<LearnResult> {
    learn_weights(dataset, &cfg.game.payoff, cfg.game.budget, opts).map_err(CliError::stage("learn"))
}

/// Solves the robust game at `beta_hat`; `trace` sees every iterate.
pub fn stage_robust(
    cfg: &LoadedConfig,
    beta_hat: &[f64],
    trace: impl FnMut(usize, f64, &rgne_core::game::StrategyProfile),
) -> CliResult<RgneResult> {
    let wrap = CliError::stage("robust");
    let game = build_robust_counterpart(&cfg.game.payoff, beta_hat, &cfg.profile, cfg.game.budget)
        .map_err(CliError::stage("robust"))?;
    let res = solve_rgne_traced(&game, &cfg.solver, trace).map_err(CliError::stage("robust"))?;
    if !res.converged {
        return Err(wrap(Error::NotConverged {
            iterations: res.iterations,
            residual: res.residual,
        }));
    }
    Ok(res)
}

pub fn stage_bound(epsilon: f64, samples: u64, players: u64) -> CliResult<BoundReport> {
    BoundReport::new(epsilon, samples, players).map_err(CliError::stage("bound"))
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    pub learn: LearnOptions,
    pub epsilon: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            learn: LearnOptions::default(),
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub dataset: Dataset,
    pub learn: LearnResult,
    pub rgne: RgneResult,
    pub bound: BoundReport,
    pub manifest: RunManifest,
}

/// Runs all four stages, writing `dataset.csv`, `learn.json`, `rgne.json`,
/// `bound.json` and `manifest.json` under `outdir`. The learner reads the
/// dataset back from disk, exactly as a separate `learn` invocation would.
pub fn run_pipeline(
    cfg: &LoadedConfig,
    samples: usize,
    seed: u64,
    opts: &PipelineOptions,
    outdir: &Path,
) -> CliResult<PipelineOutputs> {
    let generated = stage_gen(cfg, samples, seed)?;
    let mut manifest = RunManifest::new(
        vec![
            "pipeline".into(),
            format!("samples={samples}"),
            format!("norm={:?}", opts.learn.norm),
            format!("tie_break={:?}", opts.learn.tie_break),
            format!("epsilon={:?}", opts.epsilon),
        ],
        Some(cfg),
        BTreeMap::from([("seed".to_string(), seed)]),
    );
    let hash = manifest.manifest_hash.clone();

    let data_path = outdir.join("dataset.csv");
    write_dataset(&data_path, &generated, cfg.game.players, cfg.game.dim)?;
    let dataset = read_dataset(&data_path, cfg)?;

    let learn = stage_learn(cfg, &dataset, &opts.learn)?;
    let learn_path = outdir.join("learn.json");
    write_json_artifact(&learn_path, &learn, &hash)?;

    let rgne = stage_robust(cfg, &learn.beta_hat, |_, _, _| {})?;
    let rgne_path = outdir.join("rgne.json");
    write_json_artifact(&rgne_path, &rgne, &hash)?;

    let bound = stage_bound(opts.epsilon, samples as u64, cfg.game.players as u64)?;
    let bound_path = outdir.join("bound.json");
    write_json_artifact(&bound_path, &bound, &hash)?;

    for p in [&data_path, &learn_path, &rgne_path, &bound_path] {
        manifest.record_output(p)?;
    }
    manifest.write(&outdir.join("manifest.json"))?;
    Ok(PipelineOutputs {
        dataset,
        learn,
        rgne,
        bound,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSchedule {
    pub m_values: Vec<u64>,
    pub repeats: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    0.1
}

impl ExperimentSchedule {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if let Some(m) = self.m_values.iter().find(|&&m| m == 0) {
            return bad(format!("m_values: sample counts must be positive, got {m}"));
        }
        if self.m_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("m_values: must be strictly increasing, got {:?}", self.m_values));
        }
        if !self.m_values.is_empty() && self.repeats == 0 {
            return bad("repeats: must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon: must lie in (0, 1), got {}", self.epsilon));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.m_values.is_empty() || self.repeats == 0
    }
}

/// Seed of repetition `repeat` at sample count `m`.
pub fn run_seed(master: u64, m: u64, repeat: u64) -> u64 {
    master.wrapping_add(m.wrapping_mul(1000)).wrapping_add(repeat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub m: u64,
    pub repeat: u64,
    pub seed: u64,
    pub mee: f64,
    pub delta_star: f64,
    pub beta_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub m: u64,
    pub median_mee: f64,
    pub delta_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub iteration: usize,
    pub residual: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub table: Vec<TableRow>,
    pub convergence: Vec<ConvergencePoint>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Learns `beta` for every `(M, repeat)` of the schedule, then solves the
/// robust game once at the estimate from the largest `M` (first repeat).
/// Writes `mee_vs_M.csv`, `table1.csv`, `convergence.csv` and `manifest.json`.
pub fn run_experiment(
    cfg: &LoadedConfig,
    schedule: &ExperimentSchedule,
    learn: &LearnOptions,
    outdir: &Path,
) -> CliResult<ExperimentReport> {
    schedule.validate()?;
    if schedule.is_empty() {
        return Ok(ExperimentReport {
            warnings: vec!["empty schedule; nothing to run".into()],
            ..Default::default()
        });
    }
    let beta_true = cfg
        .game
        .beta_true()
        .map_err(|e| CliError::Validation(format!("beta_true: {e}")))?
        .to_vec();

    let jobs: Vec<(u64, u64)> = schedule
        .m_values
        .iter()
        .flat_map(|&m| (0..schedule.repeats).map(move |r| (m, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(m, repeat)| {
            let seed = run_seed(schedule.seed, m, repeat);
            let dataset = stage_gen(cfg, m as usize, seed)?;
            let res = stage_learn(cfg, &dataset, learn)?;
            Ok(RunRecord {
                m,
                repeat,
                seed,
                mee: mee(&res.beta_hat, &beta_true).map_err(CliError::stage("learn"))?,
                delta_star: res.delta.max(),
                beta_hat: res.beta_hat,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut table = Vec::new();
    for &m in &schedule.m_values {
        let mees: Vec<f64> = runs.iter().filter(|r| r.m == m).map(|r| r.mee).collect();
        table.push(TableRow {
            m,
            median_mee: median(&mees).unwrap_or(f64::NAN),
            delta_bound: stage_bound(schedule.epsilon, m, cfg.game.players as u64)?.delta_bound,
        });
    }

    let m_max = *schedule.m_values.iter().max().expect("schedule is not empty");
    let anchor = runs
        .iter()
        .find(|r| r.m == m_max && r.repeat == 0)
        .expect("every job produced a record");
    let mut convergence = Vec::new();
    stage_robust(cfg, &anchor.beta_hat, |iteration, residual, x| {
        convergence.push(ConvergencePoint {
            iteration,
            residual,
            x: x.as_slice().to_vec(),
        })
    })?;

    let mut manifest = RunManifest::new(
        vec![
            "experiment".into(),
            format!("m_values={:?}", schedule.m_values),
            format!("repeats={}", schedule.repeats),
            format!("epsilon={:?}", schedule.epsilon),
            format!("norm={:?}", learn.norm),
            format!("tie_break={:?}", learn.tie_break),
        ],
        Some(cfg),
        BTreeMap::from([("seed".to_string(), schedule.seed)]),
    );

    let f = |v: f64| format!("{v:?}");
    let mee_path = outdir.join("mee_vs_M.csv");
    write_table(
        &mee_path,
        &["M", "repeat", "seed", "mee", "delta_star"].map(String::from),
        &runs
            .iter()
            .map(|r| vec![r.m.to_string(), r.repeat.to_string(), r.seed.to_string(), f(r.mee), f(r.delta_star)])
            .collect::<Vec<_>>(),
    )?;
    let table_path = outdir.join("table1.csv");
    write_table(
        &table_path,
        &["M", "median_mee", "delta_bound"].map(String::from),
        &table
            .iter()
            .map(|t| vec![t.m.to_string(), f(t.median_mee), f(t.delta_bound)])
            .collect::<Vec<_>>(),
    )?;
    let conv_path = outdir.join("convergence.csv");
    let conv_header: Vec<String> = ["iteration".to_string(), "residual".to_string()]
        .into_iter()
        .chain((1..=cfg.game.players).map(|i| format!("x_{i}")))
        .collect();
    write_table(
        &conv_path,
        &conv_header,
        &convergence
            .iter()
            .map(|c| {
                std::iter::once(c.iteration.to_string())
                    .chain(std::iter::once(f(c.residual)))
                    .chain(c.x.iter().map(|&v| f(v)))
                    .collect()
            })
            .collect::<Vec<_>>(),
    )?;
    let files = vec![mee_path, table_path, conv_path];
    for p in &files {
        manifest.record_output(p)?;
    }
    manifest.write(&outdir.join("manifest.json"))?;

    Ok(ExperimentReport {
        runs,
        table,
        convergence,
        files,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_follow_schedule_formula() {
        assert_eq!(run_seed(7, 10, 3), 7 + 10_000 + 3);
        assert_ne!(run_seed(0, 10, 0), run_seed(0, 20, 0));
    }

    #[test]
    fn schedule_validation() {
        let s = |m: Vec<u64>, repeats, epsilon| ExperimentSchedule {
            m_values: m,
            repeats,
            epsilon,
            seed: 0,
        };
        assert!(s(vec![10], 2, 0.1).validate().is_ok());
        assert!(s(vec![], 0, 0.1).validate().is_ok());
        assert!(s(vec![0], 2, 0.1).validate().is_err());
        assert!(s(vec![10], 0, 0.1).validate().is_err());
        assert!(s(vec![10], 2, 1.5).validate().is_err());
        assert!(s(vec![10, 5], 2, 0.1).validate().is_err());
        assert!(s(vec![5, 5], 2, 0.1).validate().is_err());
    }
}
