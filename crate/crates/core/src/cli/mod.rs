//! The `aapi` command-line front end: train, attack, report and verify.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod verify;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use commands::{cmd_attack, cmd_report, cmd_train, render_scores, seed_dir, CHECKPOINT_FILE};
use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "aapi", version, about = "Adversary-aware policy iteration, OA-TD3/OA-PPO and an action-attack bench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one policy per seed and write checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of `run.seeds`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate checkpoints under the configured attacks.
    Attack {
        #[arg(long)]
        config: PathBuf,
        /// Evaluate only `seed-<N>` under the output directory.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Explicit checkpoint files; repeatable. Defaults to every seed directory under the output.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Join attack runs and score them against two baseline runs.
    Report {
        /// Run directories containing summary.json and report.csv.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Run directory of the low baseline (n-score 0).
        #[arg(long)]
        z0: Option<PathBuf>,
        /// Run directory of the high baseline (n-score 1).
        #[arg(long)]
        z1: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write normalized training curves to plot.csv.
        #[arg(long)]
        plot: bool,
    },
    /// Check the tabular theorems on random instances.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplier on the instance counts.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

/// `--out`, then `run.out`, then `$AAPI_OUT/<name>`, then `runs/<name>`.
pub fn output_dir(flag: Option<&Path>, configured: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = flag.or(configured) {
        return p.to_path_buf();
    }
    let root = std::env::var_os("AAPI_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

fn config_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

/// Write `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Map `f` over `items` on up to `jobs` threads. Results keep input order;
/// on failure the error of the earliest failing item is returned.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let done: Vec<Vec<(usize, Result<R>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= items.len() {
                            break mine;
                        }
                        mine.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for (i, r) in done.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every item processed")).collect()
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out, jobs } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            let out = output_dir(out.as_deref(), cfg.run.out.as_deref(), &config_stem(&config));
            for t in cmd_train(&cfg, &out, jobs)? {
                println!("seed {}: {} {}", t.seed, t.checkpoint.display(), t.log.display());
            }
        }
        Command::Attack {
            config,
            seed,
            out,
            jobs,
            mut checkpoint,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = output_dir(out.as_deref(), cfg.run.out.as_deref(), &config_stem(&config));
            if let (Some(s), true) = (seed, checkpoint.is_empty()) {
                checkpoint.push(seed_dir(&out, s).join(CHECKPOINT_FILE));
            }
            print!("{}", cmd_attack(&cfg, &checkpoint, &out, jobs)?.table);
        }
        Command::Report { runs, z0, z1, out, plot } => {
            let out = output_dir(out.as_deref(), None, "report");
            let rows = cmd_report(&runs, z0.as_deref(), z1.as_deref(), &out, plot)?;
            print!("{}", render_scores(&rows));
        }
        Command::Verify { seed, scale } => {
            if !(scale > 0.0) {
                return Err(Error::Config("--scale must be positive".into()));
            }
            let outcomes = verify::run_suites(seed, scale)?;
            for c in &outcomes {
                println!("{c}");
            }
            if let Some(bad) = outcomes.iter().find(|c| !c.passed) {
                return Err(Error::Verification(bad.name.to_string()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order_and_first_error() {
        let xs: Vec<u32> = (0..40).collect();
        let ys = par_map(&xs, 4, |&x| Ok(x * 2)).unwrap();
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        let err = par_map(&xs, 3, |&x| if x % 7 == 3 { Err(Error::Config(x.to_string())) } else { Ok(x) }).unwrap_err();
        assert_eq!(err.to_string(), Error::Config("3".into()).to_string());
    }

    #[test]
    fn output_precedence() {
        let flag = Path::new("a");
        let cfg = Path::new("b");
        assert_eq!(output_dir(Some(flag), Some(cfg), "x"), PathBuf::from("a"));
        assert_eq!(output_dir(None, Some(cfg), "x"), PathBuf::from("b"));
    }
}
