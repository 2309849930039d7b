use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::{Checkpoint, Payload, CHECKPOINT_VERSION};
use super::config::{AlgorithmName, AlgorithmSettings, ExperimentConfig};
use super::{par_map, write_file};
use crate::agents::{oa_ppo_train, oa_td3_train, ppo_train, td3_train};
use crate::attack::{
    mean_stderr, n_score, render_table, report_csv, rollout_seed, summaries_from_json, summaries_to_json,
    tabular_critic, train_attack_critic, AttackCritic, AttackKind, AttackSpec, Attacker, CriticSource, EvalReport,
    EpisodeReturn, Policy, PolicyId, Summary,
};
use crate::error::{Error, Result};
use crate::mdp::policy_iteration;
use crate::nn::{DenseNet, NetFragment};
use crate::oapi::{oa_policy_iteration, trace_csv};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "log.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TABLE_TXT: &str = "table.txt";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Train one policy per seed; each lands in `out/seed-<n>/` beside the
/// resolved configuration at `out/config.resolved.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<TrainOutput>> {
    let resolved = cfg.resolved()?;
    write_file(&out.join(RESOLVED_CONFIG), &resolved.to_json())?;
    par_map(&cfg.run.seeds, jobs, |&seed| {
        let dir = seed_dir(out, seed);
        let (ck, log) = match train_one(cfg, seed) {
            Ok(x) => x,
            Err(Error::NonConvergence { max_iters, trace }) => {
                let path = dir.join(TRACE_FILE);
                write_file(&path, &trace_csv(&trace))?;
                eprintln!("seed {seed}: no stable policy after {max_iters} iterations, trace in {}", path.display());
                return Err(Error::NonConvergence { max_iters, trace });
            }
            Err(e) => return Err(e),
        };
        let checkpoint = dir.join(CHECKPOINT_FILE);
        let log_path = dir.join(LOG_FILE);
        write_file(&checkpoint, &ck.to_json())?;
        write_file(&log_path, &log)?;
        Ok(TrainOutput {
            seed,
            checkpoint,
            log: log_path,
        })
    })
}

/// Checkpoint and log text for one seed.
pub fn train_one(cfg: &ExperimentConfig, seed: u64) -> Result<(Checkpoint, String)> {
    let name = cfg.algorithm.name;
    let base = |epsilon: f64, omega: Option<f64>, step: usize, payload: Payload| Checkpoint {
        version: CHECKPOINT_VERSION,
        algorithm: name,
        env_id: cfg.env.id().to_string(),
        env: cfg.env.clone(),
        epsilon,
        omega,
        seed,
        step,
        payload,
    };
    match cfg.settings()? {
        AlgorithmSettings::Tabular(t) => {
            let mdp = cfg.env.tabular()?.ok_or_else(|| Error::Config("tabular algorithm on a continuous env".into()))?;
            let (policy, q, trace) = if name == AlgorithmName::Oapi {
                let r = oa_policy_iteration(&mdp, t.tol, t.max_iters)?;
                (r.policy, r.q_adv, r.trace)
            } else {
                let r = policy_iteration(&mdp, t.tol, t.max_iters)?;
                (r.policy, r.q, r.trace)
            };
            let eps = if name == AlgorithmName::Oapi { mdp.epsilon() } else { 0.0 };
            let ck = base(eps, None, trace.len(), Payload::Tabular { policy, q: q.to_rows() });
            Ok((ck, trace_csv(&trace)))
        }
        AlgorithmSettings::Td3(mut c) => {
            c.seed = seed;
            let mut env = cfg.env.build()?;
            let oa = name == AlgorithmName::OaTd3;
            let outcome = if oa { oa_td3_train(env.as_mut(), &c)? } else { td3_train(env.as_mut(), &c)? };
            let f = outcome.nets.fragments();
            let ck = base(
                if oa { c.epsilon } else { 0.0 },
                oa.then_some(c.omega),
                c.total_steps,
                Payload::Td3 {
                    actor: f.actor,
                    q1: f.q1,
                    q_adv: f.q_adv,
                },
            );
            Ok((ck, outcome.log.to_csv()))
        }
        AlgorithmSettings::Ppo(mut c) => {
            c.seed = seed;
            let mut env = cfg.env.build()?;
            let oa = name == AlgorithmName::OaPpo;
            let outcome = if oa { oa_ppo_train(env.as_mut(), &c)? } else { ppo_train(env.as_mut(), &c)? };
            let ck = base(
                if oa { c.epsilon } else { 0.0 },
                oa.then_some(c.omega),
                c.total_steps,
                Payload::Ppo {
                    policy: outcome.policy.to_fragment(),
                    value: outcome.value.to_fragment(),
                    q_adv: outcome.q_adv.as_ref().map(DenseNet::to_fragment),
                },
            );
            Ok((ck, outcome.log.to_csv()))
        }
    }
}

/// Checkpoints written by `train` under `out`, in seed order.
pub fn discover_checkpoints(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(out).map_err(|e| Error::io(out, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(out, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse::<u64>().ok()) {
            let ck = entry.path().join(CHECKPOINT_FILE);
            if ck.is_file() {
                found.push((seed, ck));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!("no checkpoints under {}", out.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn critic_for(
    cfg: &ExperimentConfig,
    policy: &Policy,
    spec: &AttackSpec,
    seed: u64,
    cache: &mut BTreeMap<(AttackKind, u64), AttackCritic>,
) -> Result<Option<AttackCritic>> {
    let Some(mode) = spec.kind.critic_mode() else {
        return Ok(None);
    };
    let key = (spec.kind, spec.budget().to_bits());
    if let CriticSource::Bench = spec.critic_source {
        if let Some(c) = cache.get(&key) {
            return Ok(Some(c.clone()));
        }
    }
    let critic = match (policy, &spec.critic_source) {
        (Policy::Tabular { mdp, policy }, _) => {
            AttackCritic::Table(tabular_critic(&mdp.with_epsilon(spec.budget())?, policy, mode)?)
        }
        (_, CriticSource::Checkpoint(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let frag: NetFragment = serde_json::from_str(&text)?;
            AttackCritic::Net(DenseNet::from_fragment(&frag)?)
        }
        (_, CriticSource::Bench) => {
            let mut env = cfg.env.build()?;
            let mut c = cfg.run.attack_critic.clone();
            c.seed = seed;
            AttackCritic::Net(train_attack_critic(policy, env.as_mut(), spec.budget(), mode, &c)?)
        }
    };
    if let CriticSource::Bench = spec.critic_source {
        cache.insert(key, critic.clone());
    }
    Ok(Some(critic))
}

/// Evaluate every checkpoint under every attack. A checkpoint's episodes are
/// rolled out with its training seed, so `n = episodes x checkpoints`.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, checkpoints: &[Checkpoint], jobs: usize) -> Result<Vec<EvalReport>> {
    let attacks = if cfg.attacks.is_empty() {
        vec![AttackSpec::nominal()]
    } else {
        cfg.attacks.clone()
    };
    let Some(first) = checkpoints.first() else {
        return Err(Error::Config("nothing to evaluate".into()));
    };
    let mut seeds: Vec<u64> = checkpoints.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != checkpoints.len() {
        return Err(Error::Config("two checkpoints share a seed".into()));
    }
    for ck in checkpoints {
        if ck.env_id != cfg.env.id() {
            return Err(Error::EnvMismatch {
                checkpoint: ck.env_id.clone(),
                config: cfg.env.id().to_string(),
            });
        }
        if ck.algorithm != first.algorithm {
            return Err(Error::Config(format!(
                "mixed algorithms in one evaluation: {} and {}",
                first.algorithm.as_str(),
                ck.algorithm.as_str()
            )));
        }
    }
    let per_ck: Vec<Vec<Vec<EpisodeReturn>>> = par_map(checkpoints, jobs, |ck| {
        let policy = ck.policy()?;
        let mut env = cfg.env.build()?;
        let mut cache = BTreeMap::new();
        attacks
            .iter()
            .map(|spec| {
                let critic = critic_for(cfg, &policy, spec, ck.seed, &mut cache)?;
                let attacker = Attacker::new(spec, &policy, critic.as_ref())?;
                rollout_seed(&attacker, &policy, env.as_mut(), cfg.run.episodes, ck.seed)
            })
            .collect()
    })?;
    let id = PolicyId {
        env: cfg.env.id().to_string(),
        algorithm: first.algorithm.as_str().to_string(),
    };
    attacks
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let eps = per_ck.iter().flat_map(|v| v[i].iter().cloned()).collect();
            EvalReport::from_episodes(id.clone(), spec.clone(), eps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutput {
    pub reports: Vec<EvalReport>,
    pub summaries: Vec<Summary>,
    pub table: String,
}

/// Evaluate checkpoints (by default every `seed-*/checkpoint.json` under
/// `out`) under the configured attacks and write CSV, JSON and table.
pub fn cmd_attack(cfg: &ExperimentConfig, checkpoints: &[PathBuf], out: &Path, jobs: usize) -> Result<AttackOutput> {
    let paths = if checkpoints.is_empty() {
        discover_checkpoints(out)?
    } else {
        checkpoints.to_vec()
    };
    let cks = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let reports = evaluate_checkpoints(cfg, &cks, jobs)?;
    let summaries: Vec<Summary> = reports.iter().map(Summary::from).collect();
    let table = render_table(&summaries);
    write_file(&out.join(REPORT_CSV), &report_csv(&reports))?;
    write_file(&out.join(SUMMARY_JSON), &summaries_to_json(&summaries))?;
    write_file(&out.join(TABLE_TXT), &table)?;
    Ok(AttackOutput {
        reports,
        summaries,
        table,
    })
}

/// One aggregate row of `report`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub run: String,
    pub algorithm: String,
    pub env: String,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub seeds: usize,
    pub mean_return: f64,
    /// Mean over seeds of the per-seed n-score, and its standard error.
    pub n_score: f64,
    pub n_score_stderr: f64,
}

type RowKey = (String, String, AttackKind, u64);

/// Per-seed mean returns from a run's `report.csv`, keyed by
/// (algorithm, env, attack, epsilon bits).
fn seed_means(dir: &Path) -> Result<BTreeMap<RowKey, (f64, BTreeMap<u64, Vec<f64>>)>> {
    let path = dir.join(REPORT_CSV);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out: BTreeMap<RowKey, (f64, BTreeMap<u64, Vec<f64>>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Config(format!("{}:{}: malformed row", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let eps: f64 = f[3].parse().map_err(|_| bad())?;
        let seed: u64 = f[4].parse().map_err(|_| bad())?;
        let ret: f64 = f[6].parse().map_err(|_| bad())?;
        let key = (f[1].to_string(), f[0].to_string(), f[2].parse()?, eps.to_bits());
        out.entry(key).or_insert((eps, BTreeMap::new())).1.entry(seed).or_default().push(ret);
    }
    Ok(out)
}

fn load_summaries(dir: &Path) -> Result<Vec<Summary>> {
    let path = dir.join(SUMMARY_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    summaries_from_json(&text)
}

fn baseline(rows: &[Summary], env: &str, attack: AttackKind, eps: f64, which: &'static str) -> Result<f64> {
    rows.iter()
        .find(|r| r.env == env && r.attack == attack && r.epsilon.to_bits() == eps.to_bits())
        .map(|r| r.mean)
        .ok_or(Error::MissingBaseline(which))
}

/// Join runs and score them against the Z0 and Z1 baseline runs.
pub fn cmd_report(runs: &[PathBuf], z0: Option<&Path>, z1: Option<&Path>, out: &Path, plot: bool) -> Result<Vec<ScoreRow>> {
    let z0_rows = load_summaries(z0.ok_or(Error::MissingBaseline("Z0"))?)?;
    let z1_rows = load_summaries(z1.ok_or(Error::MissingBaseline("Z1"))?)?;
    let mut rows = Vec::new();
    for dir in runs {
        load_summaries(dir)?;
        let run = dir.display().to_string();
        for ((algorithm, env, attack, _), (eps, per_seed)) in seed_means(dir)? {
            let lo = baseline(&z0_rows, &env, attack, eps, "Z0")?;
            let hi = baseline(&z1_rows, &env, attack, eps, "Z1")?;
            let means: Vec<f64> = per_seed.values().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
            let scores = means.iter().map(|&z| n_score(z, lo, hi)).collect::<Result<Vec<_>>>()?;
            let (mean_return, _) = mean_stderr(&means);
            let (n_score, n_score_stderr) = mean_stderr(&scores);
            rows.push(ScoreRow {
                run: run.clone(),
                algorithm,
                env,
                attack,
                epsilon: eps,
                seeds: means.len(),
                mean_return,
                n_score,
                n_score_stderr,
            });
        }
    }
    let mut csv = String::from("run,algorithm,env,attack,epsilon,seeds,mean_return,n_score,n_score_stderr\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.run, r.algorithm, r.env, r.attack, r.epsilon, r.seeds, r.mean_return, r.n_score, r.n_score_stderr
        );
    }
    write_file(&out.join("aggregate.csv"), &csv)?;
    write_file(&out.join("nscore.txt"), &render_scores(&rows))?;
    if plot {
        let (lo, hi) = (&z0_rows, &z1_rows);
        write_file(&out.join("plot.csv"), &plot_data(runs, lo, hi)?)?;
    }
    Ok(rows)
}

pub fn render_scores(rows: &[ScoreRow]) -> String {
    let mut out = String::from("| run | algorithm | attack | epsilon | n-score |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3} ± {:.3} |",
            r.run, r.algorithm, r.attack, r.epsilon, r.n_score, r.n_score_stderr
        );
    }
    out
}

/// Normalized training curves: for every run with training logs, episode
/// index against the mean (over seeds) n-score of the nominal return.
fn plot_data(runs: &[PathBuf], z0: &[Summary], z1: &[Summary]) -> Result<String> {
    let mut out = String::from("run,episode,step,n_score,stderr\n");
    for dir in runs {
        let summaries = load_summaries(dir)?;
        let Some(env) = summaries.first().map(|s| s.env.clone()) else {
            continue;
        };
        let lo = baseline(z0, &env, AttackKind::Nominal, 0.0, "Z0")?;
        let hi = baseline(z1, &env, AttackKind::Nominal, 0.0, "Z1")?;
        let mut curves: Vec<Vec<(f64, f64)>> = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path().join(LOG_FILE);
            let Ok(text) = std::fs::read_to_string(&path) else {
                continue;
            };
            if !text.starts_with("step,episode,nominal_return") {
                continue;
            }
            let curve = text
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    Some((f.first()?.parse().ok()?, f.get(2)?.parse().ok()?))
                })
                .collect();
            curves.push(curve);
        }
        let len = curves.iter().map(Vec::len).min().unwrap_or(0);
        for i in 0..len {
            let steps: Vec<f64> = curves.iter().map(|c| c[i].0).collect();
            let scores = curves.iter().map(|c| n_score(c[i].1, lo, hi)).collect::<Result<Vec<_>>>()?;
            let (s, band) = mean_stderr(&scores);
            let (step, _) = mean_stderr(&steps);
            let _ = writeln!(out, "{},{},{},{},{}", dir.display(), i, step, s, band);
        }
    }
    Ok(out)
}
