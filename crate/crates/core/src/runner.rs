//! Config-driven execution of every (strategy × seed) replica.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::harness::{aggregate, run_experiment, PreparedData, ReplicaResult, RunSummary};
use crate::report::{emit_csv, emit_summary, emit_svg, CurveMetric};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunFlags {
    pub dry_run: bool,
    /// Replica worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Overrides `output_dir` from the config.
    pub out: Option<PathBuf>,
    /// Added to every configured seed.
    pub seed_offset: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub replicas: Vec<ReplicaResult>,
    pub summary: RunSummary,
    pub output_dir: PathBuf,
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum RunError {
    Config(Error),
    Runtime(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(Error::io(path, e)))?;
    ExperimentConfig::parse(&text).map_err(RunError::Config)
}

/// Runs all replicas and writes outputs. Returns `Ok(None)` for a dry run.
pub fn execute(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    flags: &RunFlags,
) -> std::result::Result<Option<RunOutput>, RunError> {
    if let Some(0) = flags.jobs {
        return Err(RunError::Config(Error::InvalidConfig("--jobs must be >= 1".into())));
    }
    // A missing dataset file is a configuration problem.
    let data = PreparedData::prepare(cfg, base_dir).map_err(RunError::Config)?;
    if flags.dry_run {
        return Ok(None);
    }
    let output_dir = flags
        .out
        .clone()
        .unwrap_or_else(|| base_dir.join(&cfg.output_dir));
    let specs: Vec<_> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed.wrapping_add(flags.seed_offset))))
        .collect();
    let run_all = || -> Result<Vec<ReplicaResult>> {
        specs
            .par_iter()
            .map(|&(s, seed)| run_experiment(cfg, &data, s, seed))
            .collect()
    };
    let replicas = match flags.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunError::Runtime(Error::InvalidConfig(e.to_string())))?
            .install(run_all),
        None => run_all(),
    }
    .map_err(RunError::Runtime)?;
    let summary = aggregate(&replicas).map_err(RunError::Runtime)?;
    write_outputs(cfg, &output_dir, &replicas, &summary).map_err(RunError::Runtime)?;
    Ok(Some(RunOutput {
        replicas,
        summary,
        output_dir,
    }))
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn write_outputs(cfg: &ExperimentConfig, dir: &Path, replicas: &[ReplicaResult], summary: &RunSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let replica_dir = dir.join("replicas");
    std::fs::create_dir_all(&replica_dir).map_err(|e| Error::io(&replica_dir, e))?;
    for rep in replicas {
        let name = format!("{}_seed{}.csv", rep.strategy, rep.seed);
        write(replica_dir.join(name), &emit_csv(std::slice::from_ref(rep)))?;
    }
    write(dir.join("results.csv"), &emit_csv(replicas))?;
    write(dir.join("summary.json"), &emit_summary(&cfg.name, summary, replicas))?;
    if cfg.output.svg {
        for metric in [CurveMetric::TestAcc, CurveMetric::TestEce, CurveMetric::PoolEce] {
            write(dir.join(format!("{}.svg", metric.file_stem())), &emit_svg(summary, metric))?;
        }
    }
    Ok(())
}

/// CLI entry point: returns the process exit code and reports on stderr.
pub fn run(config_path: &Path, flags: &RunFlags) -> i32 {
    let result = load_config(config_path).and_then(|cfg| {
        let base = config_path.parent().unwrap_or(Path::new("."));
        execute(&cfg, base, flags)
    });
    match result {
        Ok(None) => {
            eprintln!("config ok: {}", config_path.display());
            EXIT_OK
        }
        Ok(Some(out)) => {
            for rep in &out.replicas {
                if let Some(w) = &rep.warning {
                    eprintln!("warning: {} seed {}: {w}", rep.strategy, rep.seed);
                }
            }
            eprintln!(
                "wrote {} replicas to {}",
                out.replicas.len(),
                out.output_dir.display()
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
