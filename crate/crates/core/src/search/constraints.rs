use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::graph::{toposort, Role};

/// Structural restrictions on the search, by column name.
///
/// Outcome columns are always sinks; they need not be listed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(default)]
    pub forbidden: Vec<(String, String)>,
    #[serde(default)]
    pub required: Vec<(String, String)>,
    /// Nodes that may not receive any edge.
    #[serde(default)]
    pub forced_sources: Vec<String>,
}

/// Index form of [`Constraints`] for a specific table.
#[derive(Debug, Clone)]
pub(crate) struct Resolved {
    n: usize,
    allowed: Vec<bool>,
    required: Vec<bool>,
    pub required_edges: Vec<(usize, usize)>,
    pub max_in_degree: usize,
}

impl Resolved {
    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[from * self.n + to]
    }

    pub fn required(&self, from: usize, to: usize) -> bool {
        self.required[from * self.n + to]
    }
}

impl Constraints {
    pub(crate) fn resolve(&self, data: &DataMatrix, max_in_degree: usize) -> Result<Resolved> {
        let n = data.n_columns();
        let lookup = |name: &str| {
            data.index_of(name)
                .map_err(|_| Error::InvalidConstraints(format!("unknown node `{name}`")))
        };
        let mut allowed = vec![true; n * n];
        for i in 0..n {
            allowed[i * n + i] = false;
        }
        for (j, c) in data.columns().iter().enumerate() {
            if c.role == Role::Outcome {
                for t in 0..n {
                    allowed[j * n + t] = false;
                }
            }
        }
        for s in &self.forced_sources {
            let j = lookup(s)?;
            for f in 0..n {
                allowed[f * n + j] = false;
            }
        }
        for (f, t) in &self.forbidden {
            let (f, t) = (lookup(f)?, lookup(t)?);
            allowed[f * n + t] = false;
        }
        let mut required = vec![false; n * n];
        let mut required_edges = Vec::new();
        let mut parents = vec![Vec::new(); n];
        for (fname, tname) in &self.required {
            let (f, t) = (lookup(fname)?, lookup(tname)?);
            if !allowed[f * n + t] {
                return Err(Error::InvalidConstraints(format!(
                    "required edge {fname} -> {tname} is forbidden by roles or constraints"
                )));
            }
            if !required[f * n + t] {
                required[f * n + t] = true;
                required_edges.push((f, t));
                parents[t].push(f);
            }
        }
        if toposort(&parents).is_err() {
            return Err(Error::InvalidConstraints("required edges form a cycle".into()));
        }
        if let Some(t) = (0..n).find(|&t| parents[t].len() > max_in_degree) {
            return Err(Error::InvalidConstraints(format!(
                "`{}` has more required parents than the in-degree cap {max_in_degree}",
                data.columns()[t].name
            )));
        }
        required_edges.sort_unstable();
        Ok(Resolved {
            n,
            allowed,
            required,
            required_edges,
            max_in_degree,
        })
    }
}
