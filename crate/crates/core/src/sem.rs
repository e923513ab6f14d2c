//! Linear-Gaussian structural equation models attached to a [`Dag`].

use serde::{Deserialize, Serialize};

use crate::data::ColumnKind;
use crate::error::{Error, Result};
use crate::graph::{Dag, Role};

/// Local model of one node: `intercept + sum(coeffs[k] * parent_k) + N(0, noise_sd^2)`.
/// `coeffs` is aligned with `Dag::parents(node)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    pub intercept: f64,
    pub coeffs: Vec<f64>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSem {
    dag: Dag,
    params: Vec<NodeParams>,
}

impl LinearSem {
    pub fn new(dag: Dag, params: Vec<NodeParams>) -> Result<Self> {
        if params.len() != dag.n_nodes() {
            return Err(Error::InvalidConfig(format!(
                "{} parameter blocks for {} nodes",
                params.len(),
                dag.n_nodes()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.coeffs.len() != dag.parents(i).len() {
                return Err(Error::InvalidConfig(format!(
                    "node `{}` has {} parents but {} coefficients",
                    dag.name(i),
                    dag.parents(i).len(),
                    p.coeffs.len()
                )));
            }
            if !(p.noise_sd > 0.0) || !p.noise_sd.is_finite() {
                return Err(Error::DegenerateVariance {
                    node: dag.name(i).to_string(),
                });
            }
            if !p.intercept.is_finite() || p.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "node `{}` has non-finite parameters",
                    dag.name(i)
                )));
            }
        }
        Ok(Self { dag, params })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn params(&self, node: usize) -> &NodeParams {
        &self.params[node]
    }

    pub fn all_params(&self) -> &[NodeParams] {
        &self.params
    }

    /// Coefficient on `parent -> child`, if that edge exists.
    pub fn coeff(&self, parent: usize, child: usize) -> Option<f64> {
        self.dag
            .parents(child)
            .iter()
            .position(|&p| p == parent)
            .map(|k| self.params[child].coeffs[k])
    }

    pub fn coeff_by_name(&self, parent: &str, child: &str) -> Result<Option<f64>> {
        Ok(self.coeff(self.dag.index_of(parent)?, self.dag.index_of(child)?))
    }

    /// Serializable form, the layout used by `truth.json` and graph exports.
    pub fn to_document(&self, kinds: Option<&[ColumnKind]>) -> SemDocument {
        let nodes = (0..self.dag.n_nodes())
            .map(|i| NodeDocument {
                name: self.dag.name(i).to_string(),
                role: self.dag.role(i),
                kind: kinds.map(|k| k[i]).unwrap_or_default(),
                intercept: self.params[i].intercept,
                noise_sd: self.params[i].noise_sd,
            })
            .collect();
        let edges = self
            .dag
            .edges()
            .into_iter()
            .map(|(f, t)| EdgeDocument {
                from: self.dag.name(f).to_string(),
                to: self.dag.name(t).to_string(),
                coeff: self.coeff(f, t).unwrap(),
            })
            .collect();
        SemDocument { nodes, edges }
    }

    pub fn from_document(doc: &SemDocument) -> Result<Self> {
        let nodes: Vec<(String, Role)> = doc.nodes.iter().map(|n| (n.name.clone(), n.role)).collect();
        let pairs: Vec<(&str, &str)> = doc.edges.iter().map(|e| (e.from.as_str(), e.to.as_str())).collect();
        let dag = Dag::new(nodes, &pairs)?;
        let mut params: Vec<NodeParams> = doc
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeParams {
                intercept: n.intercept,
                coeffs: vec![0.0; dag.parents(i).len()],
                noise_sd: n.noise_sd,
            })
            .collect();
        for e in &doc.edges {
            let (f, t) = (dag.index_of(&e.from)?, dag.index_of(&e.to)?);
            let k = dag.parents(t).iter().position(|&p| p == f).unwrap();
            params[t].coeffs[k] = e.coeff;
        }
        LinearSem::new(dag, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDocument {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub kind: ColumnKind,
    pub intercept: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDocument {
    pub from: String,
    pub to: String,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemDocument {
    pub nodes: Vec<NodeDocument>,
    pub edges: Vec<EdgeDocument>,
}
