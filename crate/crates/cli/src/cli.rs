//! Argument parsing and subcommand dispatch.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rgne_core::bounds::{estimate_violation, min_samples};
use rgne_core::learn::{LearnOptions, LearnResult, Norm, TieBreak};
use rgne_core::robust::verify_robust_feasibility;
use sha2::{Digest, Sha256};

use crate::config::load_config;
use crate::error::{CliError, CliResult};
use crate::io::{read_dataset, read_json, write_dataset, write_json_artifact, write_table};
use crate::manifest::{sidecar_path, RunManifest};
use crate::pipeline::{
    run_experiment, run_pipeline, stage_bound, stage_gen, stage_learn, stage_robust, ExperimentSchedule,
    PipelineOptions,
};

#[derive(Debug, Parser)]
#[command(name = "rgne", version, about = "Learn aggregator weights from equilibrium data and solve robust games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Auto,
    Always,
    Never,
}

impl From<TieBreakArg> for TieBreak {
    fn from(t: TieBreakArg) -> Self {
        match t {
            TieBreakArg::Auto => TieBreak::Auto,
            TieBreakArg::Always => TieBreak::Always,
            TieBreakArg::Never => TieBreak::Never,
        }
    }
}

#[derive(Debug, Args)]
struct LearnArgs {
    /// Slack norm of the inverse program: inf or l1.
    #[arg(long, default_value = "inf")]
    norm: Norm,
    /// Minimum-norm selection among optimal LP solutions.
    #[arg(long, value_enum, default_value = "auto")]
    tie_break: TieBreakArg,
}

impl LearnArgs {
    fn options(&self) -> LearnOptions {
        LearnOptions {
            norm: self.norm,
            tie_break: self.tie_break.into(),
            ..LearnOptions::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample parameters and label them with equilibria of the hidden-weight game.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit aggregator weights to a dataset.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// Solve the robust game at learned weights.
    Robust {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration residual and strategies as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Parameter draws used to check robust feasibility.
        #[arg(long, default_value_t = 10_000)]
        check_trials: usize,
        #[arg(long, default_value_t = 0)]
        check_seed: u64,
    },
    /// Scenario bound for M samples, or the smallest M reaching a confidence.
    Bound {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        players: u64,
        #[arg(long, conflicts_with = "confidence", required_unless_present = "confidence")]
        samples: Option<u64>,
        /// Target bound; prints the minimal sample count.
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical violation probability of learned weights on fresh draws.
    Violation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Slack to test; defaults to the learned one.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep sample counts and repetitions from a schedule file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// gen, learn, robust and bound in one go.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        outdir: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[command(flatten)]
        learn: LearnArgs,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match dispatch(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn say(out: &mut impl Write, line: std::fmt::Arguments) -> CliResult<()> {
    writeln!(out, "{line}").map_err(|e| CliError::io("<stdout>", e))
}

fn finish(mut manifest: RunManifest, outputs: &[&Path], manifest_path: &Path) -> CliResult<()> {
    for p in outputs {
        manifest.record_output(p)?;
    }
    manifest.write(manifest_path)
}

fn dispatch(command: Command, out: &mut impl Write) -> CliResult<()> {
    match command {
        Command::Gen {
            config,
            samples,
            seed,
            out: path,
        } => {
            let cfg = load_config(&config)?;
            let dataset = stage_gen(&cfg, samples, seed)?;
            write_dataset(&path, &dataset, cfg.game.players, cfg.game.dim)?;
            let manifest = RunManifest::new(
                vec!["gen".into(), format!("samples={samples}")],
                Some(&cfg),
                BTreeMap::from([("seed".to_string(), seed)]),
            );
            finish(manifest, &[&path], &sidecar_path(&path))?;
            say(out, format_args!("wrote {} samples to {}", dataset.len(), path.display()))
        }
        Command::Learn {
            config,
            data,
            out: path,
            learn,
        } => {
            let cfg = load_config(&config)?;
            let dataset = read_dataset(&data, &cfg)?;
            let opts = learn.options();
            let res = stage_learn(&cfg, &dataset, &opts)?;
            let manifest = RunManifest::new(
                vec![
                    "learn".into(),
                    format!("norm={:?}", opts.norm),
                    format!("tie_break={:?}", opts.tie_break),
                    format!("data_sha256={}", file_sha256(&data)?),
                ],
                Some(&cfg),
                BTreeMap::new(),
            );
            write_json_artifact(&path, &res, &manifest.manifest_hash)?;
            finish(manifest, &[&path], &sidecar_path(&path))?;
            say(
                out,
                format_args!("beta_hat = {:?}, delta* = {:e}", res.beta_hat, res.delta.max()),
            )
        }
        Command::Robust {
            config,
            weights,
            out: path,
            trace,
            check_trials,
            check_seed,
        } => {
            let cfg = load_config(&config)?;
            let learned: LearnResult = read_json(&weights)?;
            let mut rows = Vec::new();
            let record = trace.is_some();
            let res = stage_robust(&cfg, &learned.beta_hat, |it, r, x| {
                if record {
                    rows.push(
                        [it.to_string(), format!("{r:?}")]
                            .into_iter()
                            .chain(x.as_slice().iter().map(|v| format!("{v:?}")))
                            .collect::<Vec<_>>(),
                    );
                }
            })?;
            let manifest = RunManifest::new(
                vec!["robust".into(), format!("weights_sha256={}", file_sha256(&weights)?)],
                Some(&cfg),
                BTreeMap::new(),
            );
            write_json_artifact(&path, &res, &manifest.manifest_hash)?;
            let mut outputs = vec![path.as_path()];
            if let Some(tp) = &trace {
                let header: Vec<String> = ["iteration".to_string(), "residual".to_string()]
                    .into_iter()
                    .chain((1..=cfg.game.players).map(|i| format!("x_{i}")))
                    .collect();
                write_table(tp, &header, &rows)?;
                outputs.push(tp);
            }
            finish(manifest, &outputs, &sidecar_path(&path))?;
            let check = verify_robust_feasibility(&res.x_star, &cfg.profile, cfg.game.budget, check_trials, check_seed)
                .map_err(CliError::stage("robust"))?;
            say(
                out,
                format_args!(
                    "x* = {:?} after {} iterations; worst-case load {:.6} vs budget {} ({})",
                    res.x_star.as_slice(),
                    res.iterations,
                    check.worst_case_lhs,
                    cfg.game.budget,
                    if check.pass { "robustly feasible" } else { "NOT robustly feasible" }
                ),
            )
        }
        Command::Bound {
            eps,
            players,
            samples,
            confidence,
            out: path,
        } => match (samples, confidence) {
            (Some(m), _) => {
                let report = stage_bound(eps, m, players)?;
                if let Some(p) = &path {
                    let manifest = RunManifest::new(
                        vec!["bound".into(), format!("eps={eps:?}"), format!("M={m}"), format!("N={players}")],
                        None,
                        BTreeMap::new(),
                    );
                    write_json_artifact(p, &report, &manifest.manifest_hash)?;
                    finish(manifest, &[p], &sidecar_path(p))?;
                }
                say(out, format_args!("{:.4}", report.delta_bound))
            }
            (None, Some(target)) => {
                let m = min_samples(eps, target, players).map_err(CliError::stage("bound"))?;
                if let Some(p) = &path {
                    let report = stage_bound(eps, m, players)?;
                    let manifest = RunManifest::new(
                        vec![
                            "bound".into(),
                            format!("eps={eps:?}"),
                            format!("confidence={target:?}"),
                            format!("N={players}"),
                        ],
                        None,
                        BTreeMap::new(),
                    );
                    write_json_artifact(p, &report, &manifest.manifest_hash)?;
                    finish(manifest, &[p], &sidecar_path(p))?;
                }
                say(out, format_args!("{m}"))
            }
            (None, None) => Err(CliError::Validation("one of --samples or --confidence is required".into())),
        },
        Command::Violation {
            config,
            weights,
            delta,
            trials,
            seed,
            out: path,
        } => {
            let cfg = load_config(&config)?;
            let learned: LearnResult = read_json(&weights)?;
            let delta = delta.unwrap_or_else(|| learned.delta.max());
            let est = estimate_violation(
                &learned.beta_hat,
                delta,
                &cfg.game,
                &cfg.profile,
                trials,
                seed,
                &cfg.solver,
            )
            .map_err(CliError::stage("violation"))?;
            if let Some(p) = &path {
                let manifest = RunManifest::new(
                    vec![
                        "violation".into(),
                        format!("delta={delta:?}"),
                        format!("trials={trials}"),
                        format!("weights_sha256={}", file_sha256(&weights)?),
                    ],
                    Some(&cfg),
                    BTreeMap::from([("seed".to_string(), seed)]),
                );
                write_json_artifact(p, &est, &manifest.manifest_hash)?;
                finish(manifest, &[p], &sidecar_path(p))?;
            }
            say(
                out,
                format_args!(
                    "empirical violation {:.4} ({}/{}), 95% CI [{:.4}, {:.4}]",
                    est.empirical_v, est.violations, est.trials, est.ci_lo, est.ci_hi
                ),
            )
        }
        Command::Experiment {
            config,
            schedule,
            outdir,
            learn,
        } => {
            let cfg = load_config(&config)?;
            let sched: ExperimentSchedule = read_json(&schedule)
                .map_err(|e| CliError::Validation(format!("schedule: {e}")))?;
            let report = run_experiment(&cfg, &sched, &learn.options(), &outdir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for row in &report.table {
                say(
                    out,
                    format_args!("M={:<5} median MEE {:.4e}  bound {:.4}", row.m, row.median_mee, row.delta_bound),
                )?;
            }
            Ok(())
        }
        Command::Pipeline {
            config,
            samples,
            seed,
            outdir,
            eps,
            learn,
        } => {
            let cfg = load_config(&config)?;
            let opts = PipelineOptions {
                learn: learn.options(),
                epsilon: eps,
            };
            let res = run_pipeline(&cfg, samples, seed, &opts, &outdir)?;
            say(
                out,
                format_args!(
                    "beta_hat = {:?}\nx* = {:?}\nbound = {:.4}\nwrote {}",
                    res.learn.beta_hat,
                    res.rgne.x_star.as_slice(),
                    res.bound.delta_bound,
                    outdir.display()
                ),
            )
        }
    }
}
