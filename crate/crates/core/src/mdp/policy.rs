use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PROBABILITY_SLACK;

/// Dense state-by-action value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_states * n_actions);
        for row in rows {
            if row.len() != n_actions {
                return Err(Error::Dimension {
                    axis: "q row",
                    expected: n_actions,
                    actual: row.len(),
                });
            }
            values.extend(row);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("q table has non-finite entries".into()));
        }
        Ok(QTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.row(s).to_vec()).collect()
    }

    /// `max |self - other|`.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_flat(n_states: usize, n_actions: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_states * n_actions);
        QTable {
            n_states,
            n_actions,
            values,
        }
    }
}

/// Deterministic (action index per state) or stochastic tabular policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabularPolicy {
    Deterministic(Vec<usize>),
    Stochastic(Vec<Vec<f64>>),
}

impl TabularPolicy {
    pub fn stochastic(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > PROBABILITY_SLACK {
                return Err(Error::InvalidModel(format!(
                    "policy row {s} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(TabularPolicy::Stochastic(rows))
    }

    pub fn n_states(&self) -> usize {
        match self {
            TabularPolicy::Deterministic(v) => v.len(),
            TabularPolicy::Stochastic(rows) => rows.len(),
        }
    }

    /// `pi(a | s)`
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        match self {
            TabularPolicy::Deterministic(v) => {
                if v[s] == a {
                    1.0
                } else {
                    0.0
                }
            }
            TabularPolicy::Stochastic(rows) => rows[s][a],
        }
    }

    /// Actions with positive probability in `s`, with their probabilities.
    pub fn support(&self, s: usize) -> Vec<(usize, f64)> {
        match self {
            TabularPolicy::Deterministic(v) => vec![(v[s], 1.0)],
            TabularPolicy::Stochastic(rows) => rows[s]
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(a, p)| (a, *p))
                .collect(),
        }
    }

    pub fn as_deterministic(&self) -> Option<&[usize]> {
        match self {
            TabularPolicy::Deterministic(v) => Some(v),
            TabularPolicy::Stochastic(_) => None,
        }
    }

    pub(crate) fn check_against(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states() != n_states {
            return Err(Error::Dimension {
                axis: "policy states",
                expected: n_states,
                actual: self.n_states(),
            });
        }
        match self {
            TabularPolicy::Deterministic(v) => {
                if let Some(&a) = v.iter().find(|&&a| a >= n_actions) {
                    return Err(Error::Dimension {
                        axis: "policy action index",
                        expected: n_actions,
                        actual: a,
                    });
                }
            }
            TabularPolicy::Stochastic(rows) => {
                if let Some(r) = rows.iter().find(|r| r.len() != n_actions) {
                    return Err(Error::Dimension {
                        axis: "policy actions",
                        expected: n_actions,
                        actual: r.len(),
                    });
                }
            }
        }
        Ok(())
    }
}
