use std::collections::BTreeMap;

use super::AgentError;
use crate::envs::StackedState;
use crate::nn::NetworkParams;

/// Q-values keyed by environment state key. Unvisited rows read as zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTable {
    action_count: usize,
    rows: BTreeMap<u64, Vec<f64>>,
}

impl QTable {
    pub fn new(action_count: usize) -> Self {
        Self { action_count, rows: BTreeMap::new() }
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn get(&self, key: u64, k: usize) -> f64 {
        self.rows.get(&key).map_or(0.0, |row| row[k])
    }

    pub fn row(&self, key: u64) -> Vec<f64> {
        self.rows.get(&key).cloned().unwrap_or_else(|| vec![0.0; self.action_count])
    }

    pub fn row_mut(&mut self, key: u64) -> &mut [f64] {
        let n = self.action_count;
        self.rows.entry(key).or_insert_with(|| vec![0.0; n])
    }

    pub fn set(&mut self, key: u64, k: usize, value: f64) {
        self.row_mut(key)[k] = value;
    }

    /// Visited rows in key order.
    pub fn rows(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.rows.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Parameterized `Q(s, .)` over all extended actions.
#[derive(Debug, Clone, PartialEq)]
pub enum QFunction {
    Tabular(QTable),
    Network(NetworkParams),
}

impl QFunction {
    pub fn action_count(&self) -> usize {
        match self {
            QFunction::Tabular(t) => t.action_count(),
            QFunction::Network(n) => n.output_count(),
        }
    }

    /// Values for every extended action in `state`.
    pub fn values(&self, state: &StackedState) -> Result<Vec<f64>, AgentError> {
        match self {
            QFunction::Tabular(t) => Ok(t.row(state.key)),
            QFunction::Network(n) => Ok(n.forward(state.data())?),
        }
    }

    pub fn max_value(&self, state: &StackedState) -> Result<f64, AgentError> {
        Ok(self.values(state)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Copy the learnable values of `src` into `self`.
    pub fn sync_from(&mut self, src: &QFunction) {
        match (self, src) {
            (QFunction::Network(dst), QFunction::Network(s)) => dst.load_weights_from(s),
            (dst, s) => *dst = s.clone(),
        }
    }
}
