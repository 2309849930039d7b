//! Report rows: per-episode CSV, JSON summaries, and the text table that
//! mirrors the layout of robustness tables (rows = attacks, mean ± stderr).
//!
//! Numbers are printed with the shortest representation that parses back to
//! the same `f64`, so JSON -> table -> JSON is lossless.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AttackKind, EvalReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub env: String,
    pub algorithm: String,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl From<&EvalReport> for Summary {
    fn from(r: &EvalReport) -> Self {
        Summary {
            env: r.policy.env.clone(),
            algorithm: r.policy.algorithm.clone(),
            attack: r.attack.kind,
            epsilon: r.attack.budget(),
            mean: r.mean,
            stderr: r.stderr,
            n: r.n,
        }
    }
}

/// `env,algorithm,attack,epsilon,seed,episode,return`, one line per episode.
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("env,algorithm,attack,epsilon,seed,episode,return\n");
    for r in reports {
        for e in &r.episodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.policy.env,
                r.policy.algorithm,
                r.attack.kind,
                r.attack.budget(),
                e.seed,
                e.episode,
                e.ret
            );
        }
    }
    out
}

pub fn summaries_to_json(rows: &[Summary]) -> String {
    serde_json::to_string_pretty(rows).expect("summaries serialize")
}

pub fn summaries_from_json(text: &str) -> Result<Vec<Summary>> {
    Ok(serde_json::from_str(text)?)
}

const HEADER: [&str; 6] = ["algorithm", "env", "attack", "epsilon", "return", "n"];

pub fn render_table(rows: &[Summary]) -> String {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.algorithm.clone(),
                r.env.clone(),
                r.attack.to_string(),
                r.epsilon.to_string(),
                format!("{} ± {}", r.mean, r.stderr),
                r.n.to_string(),
            ]
        })
        .collect();
    let mut width: [usize; 6] = HEADER.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: &[String]| {
        let mut s = String::from("|");
        for (c, w) in row.iter().zip(&width) {
            let pad = w - c.chars().count();
            let _ = write!(s, " {c}{} |", " ".repeat(pad));
        }
        s.push('\n');
        s
    };
    let mut out = line(&HEADER.map(String::from));
    out.push('|');
    for w in &width {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row));
    }
    out
}

/// Inverse of [`render_table`].
pub fn parse_table(text: &str) -> Result<Vec<Summary>> {
    let bad = |line: usize, what: &str| Error::Config(format!("table line {}: {what}", line + 1));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, header) = lines.next().ok_or_else(|| bad(0, "empty table"))?;
    if split_row(header) != HEADER {
        return Err(bad(i, "unexpected header"));
    }
    lines.next().ok_or_else(|| bad(i + 1, "missing rule"))?;
    let mut out = Vec::new();
    for (i, l) in lines {
        let c = split_row(l);
        if c.len() != 6 {
            return Err(bad(i, "expected 6 cells"));
        }
        let (mean, stderr) = c[4].split_once(" ± ").ok_or_else(|| bad(i, "return is not `mean ± stderr`"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i, &format!("`{s}` is not a number")));
        out.push(Summary {
            algorithm: c[0].to_string(),
            env: c[1].to_string(),
            attack: c[2].parse()?,
            epsilon: num(c[3])?,
            mean: num(mean)?,
            stderr: num(stderr)?,
            n: c[5].parse().map_err(|_| bad(i, "n is not a count"))?,
        });
    }
    Ok(out)
}

fn split_row(line: &str) -> Vec<&str> {
    let t = line.trim();
    let t = t.strip_prefix('|').unwrap_or(t);
    let t = t.strip_suffix('|').unwrap_or(t);
    t.split('|').map(str::trim).collect()
}
