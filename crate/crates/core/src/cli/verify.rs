//! Property suites behind `aapi verify`: the tabular theorems checked on
//! random instances.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mdp::random::{random_instance, random_policy, random_q};
use crate::mdp::policy_iteration;
use crate::oapi::{adversary_oracle, exhaustive_maximin, oa_bellman_backup, oa_policy_evaluation, oa_policy_iteration};

const TOL: f64 = 1e-12;
const MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} ({}; {:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Result<CheckOutcome> {
    let t = Instant::now();
    let (passed, detail) = body()?;
    Ok(CheckOutcome {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Run every suite with instances drawn from `seed`; `scale` multiplies the
/// instance counts (1.0 = the acceptance sizes).
pub fn run_suites(seed: u64, scale: f64) -> Result<Vec<CheckOutcome>> {
    let count = |n: usize| ((n as f64 * scale).ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(timed("contraction", || {
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..count(200) {
            let m = random_instance(&mut rng, 20, 5);
            let pi = random_policy(&mut rng, &m, true);
            let (q1, q2) = (random_q(&mut rng, &m, 10.0), random_q(&mut rng, &m, 10.0));
            let lhs = oa_bellman_backup(&q1, &pi, &m)?.sup_distance(&oa_bellman_backup(&q2, &pi, &m)?);
            worst = worst.max(lhs - m.gamma() * q1.sup_distance(&q2));
        }
        Ok((worst <= 1e-12, format!("max excess {worst:.3e}")))
    })?);

    let mut monotone_violation: f64 = 0.0;
    out.push(timed("adversary oracle", || {
        let mut worst: f64 = 0.0;
        for _ in 0..count(100) {
            let m = random_instance(&mut rng, 10, 4);
            let stochastic = rand::Rng::gen_bool(&mut rng, 0.5);
            let pi = random_policy(&mut rng, &m, stochastic);
            let fixed = oa_policy_evaluation(&pi, &m, TOL)?.values;
            let (_, oracle) = adversary_oracle(&m, &pi, TOL)?;
            worst = worst.max(fixed.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            let run = oa_policy_iteration(&m, TOL, MAX_ITERS)?;
            for w in run.trace.windows(2) {
                for (a, b) in w[0].values.iter().zip(&w[1].values) {
                    monotone_violation = monotone_violation.max(a - b);
                }
            }
        }
        Ok((worst <= 1e-8, format!("max gap {worst:.3e}")))
    })?);
    out.push(CheckOutcome {
        name: "monotone improvement",
        passed: monotone_violation <= 1e-10,
        detail: format!("largest per-state decrease {monotone_violation:.3e}"),
        seconds: 0.0,
    });

    out.push(timed("optimality", || {
        let mut worst: f64 = 0.0;
        for _ in 0..count(50) {
            let m = random_instance(&mut rng, 4, 3);
            let run = oa_policy_iteration(&m, TOL, MAX_ITERS)?;
            let brute = exhaustive_maximin(&m)?;
            worst = worst.max((run.objective() - brute.objective).abs());
        }
        Ok((worst <= 1e-8, format!("max gap {worst:.3e}")))
    })?);

    out.push(timed("zero-budget reduction", || {
        let mut same = true;
        let mut worst: f64 = 0.0;
        for _ in 0..count(50) {
            let m = random_instance(&mut rng, 10, 4).with_epsilon(0.0)?;
            let oa = oa_policy_iteration(&m, TOL, MAX_ITERS)?;
            let pi = policy_iteration(&m, TOL, MAX_ITERS)?;
            same &= oa.policy == pi.policy;
            worst = worst.max(oa.q_adv.sup_distance(&pi.q));
        }
        Ok((same && worst <= 1e-10, format!("policies equal: {same}, max Q gap {worst:.3e}")))
    })?);

    Ok(out)
}
