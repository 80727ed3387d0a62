//! Discrete factor models with log-potential tables.

mod generate;
mod io;

use std::collections::BTreeMap;

pub use generate::{generate, observe_pattern, parse_observe, Family, ModelSpec, QMR_INHIBITION_RANGE, QMR_LEAK, QMR_PRIOR_RANGE};

use crate::error::{Error, Result};
use crate::regions::absorb_contained;
use crate::table::{is_subset, projection_map, table_len};
use crate::VarId;

/// Log-potential value used for impossible states.
pub const LOG_CLAMP: f64 = -1e3;

/// A log-potential table over a sorted scope.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    scope: Vec<VarId>,
    log_table: Vec<f64>,
}

impl Factor {
    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn log_table(&self) -> &[f64] {
        &self.log_table
    }
}

/// Variables with cardinalities and one log-potential table per outer cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    cards: Vec<usize>,
    factors: Vec<Factor>,
    meta: BTreeMap<String, String>,
}

fn clamp_log(value: f64) -> Result<f64> {
    if value.is_nan() || value == f64::INFINITY {
        return Err(Error::InvalidModel(format!("log-potential {value} is not allowed")));
    }
    Ok(value.max(LOG_CLAMP))
}

impl FactorModel {
    pub fn new(cards: Vec<usize>) -> Result<Self> {
        if let Some(i) = cards.iter().position(|&c| c < 2) {
            return Err(Error::InvalidModel(format!("variable {i} has cardinality {} < 2", cards[i])));
        }
        Ok(FactorModel { cards, factors: Vec::new(), meta: BTreeMap::new() })
    }

    /// Append a factor. The scope must be strictly increasing; table entries
    /// below [`LOG_CLAMP`] (including `-inf`) are clamped.
    pub fn add_factor(&mut self, scope: Vec<VarId>, log_table: Vec<f64>) -> Result<usize> {
        if scope.is_empty() {
            return Err(Error::InvalidModel("factor with empty scope".into()));
        }
        if scope.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidModel(format!("factor scope {scope:?} is not strictly increasing")));
        }
        if let Some(&v) = scope.iter().find(|&&v| v >= self.cards.len()) {
            return Err(Error::InvalidModel(format!("factor references unknown variable {v}")));
        }
        let expected = table_len(&scope, &self.cards);
        if log_table.len() != expected {
            return Err(Error::InvalidModel(format!(
                "table for scope {scope:?} has {} entries, expected {expected}",
                log_table.len()
            )));
        }
        let log_table = log_table.into_iter().map(clamp_log).collect::<Result<Vec<_>>>()?;
        self.factors.push(Factor { scope, log_table });
        Ok(self.factors.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &Factor {
        &self.factors[i]
    }

    pub fn clusters(&self) -> Vec<Vec<VarId>> {
        self.factors.iter().map(|f| f.scope.clone()).collect()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key: String = key.into();
        assert!(!key.contains(char::is_whitespace), "meta keys are single tokens");
        self.meta.insert(key, value.to_string());
    }

    /// Total number of joint states, as a float to survive overflow.
    pub fn state_space(&self) -> f64 {
        self.cards.iter().map(|&c| c as f64).product()
    }

    /// Copy with every table replaced; used for modified potentials.
    pub(crate) fn with_tables(&self, tables: Vec<Vec<f64>>) -> FactorModel {
        let factors = self
            .factors
            .iter()
            .zip(tables)
            .map(|(f, log_table)| Factor { scope: f.scope.clone(), log_table })
            .collect();
        FactorModel { cards: self.cards.clone(), factors, meta: self.meta.clone() }
    }

    /// Reassign the potentials onto the given clusters: contained or duplicate
    /// clusters are absorbed, each factor is added into the first remaining
    /// cluster that contains its scope, and every cluster becomes one factor
    /// (zero table when nothing lands in it). Variables that no cluster
    /// mentions keep their factors as extra outer clusters.
    pub fn regroup(&self, clusters: &[Vec<VarId>]) -> Result<FactorModel> {
        let mut normalized: Vec<Vec<VarId>> = clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        for (i, c) in normalized.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::EmptyCluster { cluster: i });
            }
            if let Some(&var) = c.iter().find(|&&v| v >= self.num_vars()) {
                return Err(Error::UnknownVariable { cluster: i, var, num_vars: self.num_vars() });
            }
        }
        // factors that fit nowhere become clusters of their own
        for f in &self.factors {
            if !normalized.iter().any(|c| is_subset(&f.scope, c)) {
                normalized.push(f.scope.clone());
            }
        }
        let (kept, _) = absorb_contained(normalized);
        let mut tables: Vec<Vec<f64>> = kept.iter().map(|c| vec![0.0; table_len(c, &self.cards)]).collect();
        for f in &self.factors {
            let target = kept.iter().position(|c| is_subset(&f.scope, c)).expect("covered above");
            let map = projection_map(&kept[target], &f.scope, &self.cards);
            for (entry, &j) in tables[target].iter_mut().zip(&map) {
                *entry += f.log_table[j];
            }
        }
        let mut out = FactorModel::new(self.cards.clone())?;
        out.meta = self.meta.clone();
        for (scope, table) in kept.into_iter().zip(tables) {
            out.add_factor(scope, table)?;
        }
        Ok(out)
    }

    /// Regroup onto the model's own scopes, absorbing contained factors.
    pub fn regroup_maximal(&self) -> Result<FactorModel> {
        self.regroup(&self.clusters())
    }

    /// Sum of log-potentials for a full joint assignment.
    pub fn log_weight(&self, states: &[usize]) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let mut idx = 0;
                for &v in &f.scope {
                    idx = idx * self.cards[v] + states[v];
                }
                f.log_table[idx]
            })
            .sum()
    }
}
