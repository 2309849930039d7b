use std::path::Path;
use std::process::{Command, Output};

use aapi_core::attack::{AttackKind, Summary};
use aapi_core::cli::checkpoint::{Checkpoint, Payload};
use aapi_core::cli::commands::{cmd_attack, cmd_report, cmd_train, train_one};
use aapi_core::cli::config::ExperimentConfig;
use aapi_core::envs::make_hazard_gridworld;
use aapi_core::mdp::{FiniteAAMdp, TabularPolicy};
use aapi_core::oapi::{exhaustive_maximin, oa_policy_evaluation};
use aapi_core::Error;

fn aapi(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aapi"))
        .args(args)
        .env("AAPI_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

fn grid_config(algorithm: &str, n: usize, eps: f64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{"env": {{"id": "hazard_gridworld", "n": {n}, "epsilon": {eps}}}, "algorithm": {{"name": "{algorithm}"}}}}"#
    ))
    .unwrap()
}

fn tabular_policy(ck: &Checkpoint) -> TabularPolicy {
    match &ck.payload {
        Payload::Tabular { policy, .. } => policy.clone(),
        other => panic!("not tabular: {other:?}"),
    }
}

fn objective(m: &FiniteAAMdp, v: &[f64]) -> f64 {
    m.rho().iter().zip(v).map(|(p, x)| p * x).sum()
}

/// Maximin value iteration: V(s) = max_a min_k [R + gamma P V](s, shift(a, k)).
fn maximin_values(m: &FiniteAAMdp) -> Vec<f64> {
    let mut v = vec![0.0; m.n_states()];
    loop {
        let q = |s: usize, a: usize, v: &[f64]| {
            m.reward(s, a) + m.gamma() * m.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
        };
        let next: Vec<f64> = (0..m.n_states())
            .map(|s| {
                (0..m.n_actions())
                    .map(|a| (0..m.n_offsets()).map(|k| q(s, m.shift(a, k), &v)).fold(f64::INFINITY, f64::min))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let step = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if step < 1e-13 {
            return v;
        }
    }
}

#[test]
fn oapi_checkpoint_is_maximin_optimal() {
    // n = 3 is small enough to enumerate every deterministic policy
    let m3 = make_hazard_gridworld(3, -50.0, 1.0).unwrap();
    let (ck, _) = train_one(&grid_config("oapi", 3, 1.0), 0).unwrap();
    let v = oa_policy_evaluation(&tabular_policy(&ck), &m3, 1e-12).unwrap().values;
    let brute = exhaustive_maximin(&m3).unwrap();
    assert!((objective(&m3, &v) - brute.objective).abs() <= 1e-8);

    // n = 4 is past the enumeration limit; compare with maximin value iteration
    let m4 = make_hazard_gridworld(4, -50.0, 1.0).unwrap();
    assert!(matches!(exhaustive_maximin(&m4), Err(Error::TooLarge { .. })));
    let (ck, _) = train_one(&grid_config("oapi", 4, 1.0), 0).unwrap();
    let v = oa_policy_evaluation(&tabular_policy(&ck), &m4, 1e-12).unwrap().values;
    let oracle = maximin_values(&m4);
    for (a, b) in v.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }
}

#[test]
fn zero_budget_oapi_and_pi_agree() {
    let (a, _) = train_one(&grid_config("oapi", 4, 0.0), 0).unwrap();
    let (b, _) = train_one(&grid_config("pi", 4, 0.0), 0).unwrap();
    assert_eq!(tabular_policy(&a), tabular_policy(&b));
}

#[test]
fn reruns_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("di.json");
    write(
        &cfg,
        r#"{"env": {"id": "double_integrator"},
            "algorithm": {"name": "oa_td3", "config": {"total_steps": 600, "learning_starts": 200, "hidden": [8, 8]}},
            "attacks": [{"kind": "nominal"}, {"kind": "random", "epsilon": 0.2}, {"kind": "min_oa_q", "epsilon": 0.2}],
            "run": {"seeds": [3, 4], "episodes": 2,
                    "attack_critic": {"total_steps": 400, "learning_starts": 100, "hidden": [8], "pgd_steps": 4}}}"#,
    );
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for (dir, jobs) in [("a", "1"), ("b", "2")] {
        let out = root.path().join(dir);
        let out_s = out.to_str().unwrap();
        let r = aapi(&["train", "--config", cfg, "--out", out_s, "--jobs", jobs], root.path());
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let r = aapi(&["attack", "--config", cfg, "--out", out_s, "--jobs", jobs], root.path());
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let read = |p: &str| std::fs::read(out.join(p)).unwrap();
        outputs.push([
            read("seed-3/checkpoint.json"),
            read("seed-4/checkpoint.json"),
            read("seed-3/log.csv"),
            read("report.csv"),
            read("summary.json"),
            read("config.resolved.json"),
        ]);
    }
    assert!(outputs[0] == outputs[1]);

    // the resolved copy reproduces the run
    let again = root.path().join("c");
    let resolved = root.path().join("a/config.resolved.json");
    let r = aapi(
        &["train", "--config", resolved.to_str().unwrap(), "--seed", "3", "--out", again.to_str().unwrap()],
        root.path(),
    );
    assert!(r.status.success());
    assert_eq!(std::fs::read(again.join("seed-3/checkpoint.json")).unwrap(), outputs[0][0]);
    assert!(!again.join("seed-4").exists());
}

#[test]
fn nominal_only_table_matches_plain_rollouts() {
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(
        r#"{"env": {"id": "hazard_gridworld"}, "algorithm": {"name": "pi"}, "run": {"seeds": [0, 1], "episodes": 5}}"#,
    )
    .unwrap();
    cmd_train(&cfg, out.path(), 1).unwrap();
    let result = cmd_attack(&cfg, &[], out.path(), 1).unwrap();
    assert_eq!(result.summaries.len(), 1);
    assert_eq!(result.summaries[0].attack, AttackKind::Nominal);
    assert_eq!(result.table.lines().count(), 3);

    // plain evaluation: follow the policy with no attacker in the loop
    let mut returns = Vec::new();
    for seed in [0u64, 1] {
        let ck = Checkpoint::load(&out.path().join(format!("seed-{seed}/checkpoint.json"))).unwrap();
        let policy = ck.policy().unwrap();
        let mut env = cfg.env.build().unwrap();
        let mut rng = aapi_core::agents::stream::rng(seed, aapi_core::agents::stream::ATTACK);
        for ep in 0..5 {
            let mut s = env.reset(aapi_core::agents::stream::episode_seed(seed, ep));
            let (mut ret, mut w) = (0.0, 1.0);
            loop {
                let a = policy.act(&s, &mut rng).unwrap();
                let step = env.step(&a).unwrap();
                ret += w * step.reward;
                w *= env.return_discount();
                if step.done {
                    break;
                }
                s = step.observation;
            }
            returns.push(ret);
        }
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    assert_eq!(result.summaries[0].mean, mean);
    assert_eq!(result.summaries[0].n, 10);
}

#[test]
fn summary_validates_against_bundled_schema() {
    let out = tempfile::tempdir().unwrap();
    let cfg = grid_config("oapi", 4, 1.0);
    let cfg = ExperimentConfig {
        attacks: AttackKind::ALL
            .iter()
            .map(|&k| aapi_core::attack::AttackSpec::new(k, if k == AttackKind::Nominal { 0.0 } else { 1.0 }))
            .collect(),
        ..cfg
    };
    cmd_train(&cfg, out.path(), 1).unwrap();
    cmd_attack(&cfg, &[], out.path(), 1).unwrap();
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schemas/summary.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert!(validator.is_valid(&doc));
    assert_eq!(doc.as_array().unwrap().len(), 5);
    let mut bad = doc.clone();
    bad[0]["surprise"] = 1.into();
    assert!(!validator.is_valid(&bad));
}

#[test]
fn env_mismatch_is_refused_with_both_ids() {
    let root = tempfile::tempdir().unwrap();
    let grid = root.path().join("grid.json");
    let di = root.path().join("di.json");
    write(&grid, r#"{"env": {"id": "hazard_gridworld"}, "algorithm": {"name": "oapi"}}"#);
    write(&di, r#"{"env": {"id": "double_integrator"}, "algorithm": {"name": "td3"}}"#);
    let out = root.path().join("run");
    let out_s = out.to_str().unwrap();
    assert!(aapi(&["train", "--config", grid.to_str().unwrap(), "--out", out_s], root.path()).status.success());
    let r = aapi(&["attack", "--config", di.to_str().unwrap(), "--out", out_s], root.path());
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("hazard_gridworld") && err.contains("double_integrator"), "{err}");
}

#[test]
fn schema_violations_exit_with_field_path() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.json");
    write(&cfg, r#"{"env": {"id": "double_integrator"}, "algorithm": {"name": "td3", "config": {"tau": 0.1, "polcy_delay": 2}}}"#);
    let r = aapi(&["train", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("algorithm.config.polcy_delay"));
    assert!(std::fs::read_dir(root.path()).unwrap().count() == 1, "nothing written on a config error");
}

#[test]
fn default_output_goes_under_aapi_out() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("tiny_grid.json");
    write(&cfg, r#"{"env": {"id": "hazard_gridworld", "n": 3}, "algorithm": {"name": "pi"}}"#);
    let r = aapi(&["train", "--config", cfg.to_str().unwrap()], root.path());
    assert!(r.status.success());
    assert!(root.path().join("tiny_grid/seed-0/checkpoint.json").is_file());
}

fn fake_run(dir: &Path, algorithm: &str, per_seed: &[(u64, f64)]) {
    let mut csv = String::from("env,algorithm,attack,epsilon,seed,episode,return\n");
    for (seed, ret) in per_seed {
        csv.push_str(&format!("double_integrator,{algorithm},min_oa_q,0.2,{seed},0,{ret}\n"));
    }
    write(&dir.join("report.csv"), &csv);
    let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / per_seed.len() as f64;
    let summary = vec![Summary {
        env: "double_integrator".into(),
        algorithm: algorithm.into(),
        attack: AttackKind::MinOaQ,
        epsilon: 0.2,
        mean,
        stderr: 0.0,
        n: per_seed.len(),
    }];
    write(&dir.join("summary.json"), &aapi_core::attack::summaries_to_json(&summary));
}

#[test]
fn report_scores_against_baselines() {
    let root = tempfile::tempdir().unwrap();
    let p = root.path();
    fake_run(&p.join("run"), "oa_td3", &[(0, -60.0), (1, -65.0), (2, -70.0)]);
    fake_run(&p.join("z0"), "random", &[(0, -200.0)]);
    fake_run(&p.join("z1"), "expert", &[(0, -20.0)]);
    let rows = cmd_report(&[p.join("run")], Some(&p.join("z0")), Some(&p.join("z1")), &p.join("out"), false).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].n_score - 0.75).abs() < 1e-15);
    assert_eq!(rows[0].seeds, 3);
    assert!(p.join("out/aggregate.csv").is_file());

    let same = cmd_report(&[p.join("z1")], Some(&p.join("z0")), Some(&p.join("z1")), &p.join("out2"), false).unwrap();
    assert_eq!(same[0].n_score, 1.0);

    let err = cmd_report(&[p.join("run")], Some(&p.join("z1")), Some(&p.join("z1")), &p.join("out3"), false).unwrap_err();
    assert!(matches!(err, Error::DegenerateBaseline(_)));
    let err = cmd_report(&[p.join("run")], Some(&p.join("z0")), None, &p.join("out4"), false).unwrap_err();
    assert!(err.to_string().contains("Z1"));

    let r = aapi(&["report", p.join("run").to_str().unwrap(), "--z1", p.join("z1").to_str().unwrap()], p);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("Z0"));
    let r = aapi(
        &[
            "report",
            p.join("run").to_str().unwrap(),
            "--z0",
            p.join("z1").to_str().unwrap(),
            "--z1",
            p.join("z1").to_str().unwrap(),
            "--out",
            p.join("out5").to_str().unwrap(),
        ],
        p,
    );
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn verify_prints_pass_lines() {
    let root = tempfile::tempdir().unwrap();
    let r = aapi(&["verify", "--seed", "3", "--scale", "0.05"], root.path());
    assert!(r.status.success());
    let text = String::from_utf8_lossy(&r.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{text}");
}
