//! Node-wise Gaussian likelihood and BIC.
//!
//! The BIC of a node with `p` parents fitted on `s` samples is
//! `-2 loglik + (p + 2) ln s`: the intercept and the noise variance count as
//! parameters alongside the `p` slopes. Lower is better.

use std::f64::consts::PI;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::ols::{ols, OlsFailure, OlsFit};
use crate::sem::{LinearSem, NodeParams};

/// Below this fraction of the total sum of squares a fit counts as exact.
pub(crate) const DEGENERATE_RSS: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub intercept: f64,
    pub coeffs: Vec<f64>,
    /// Maximum-likelihood residual standard deviation, `sqrt(rss / s)`.
    pub noise_sd: f64,
    /// Gaussian log-likelihood at the fit; `+inf` for an exact fit.
    pub loglik: f64,
    pub n_samples: usize,
    pub(crate) rss: f64,
    pub(crate) tss: f64,
}

impl LocalFit {
    pub(crate) fn from_ols(fit: OlsFit) -> Self {
        let n = fit.n as f64;
        let var = fit.rss / n;
        Self {
            intercept: fit.intercept,
            noise_sd: var.sqrt(),
            loglik: gaussian_loglik(fit.rss, fit.n),
            coeffs: fit.coeffs,
            n_samples: fit.n,
            rss: fit.rss,
            tss: fit.tss,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.rss <= DEGENERATE_RSS * self.tss
    }

    /// BIC of this fit with `coeffs.len() + 2` parameters.
    pub fn bic(&self) -> Option<f64> {
        if self.is_degenerate() {
            return None;
        }
        Some(bic_from_rss(self.rss, self.n_samples, self.coeffs.len()))
    }
}

/// Maximized Gaussian log-likelihood given a residual sum of squares.
pub fn gaussian_loglik(rss: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * PI * rss / n).ln() + 1.0)
}

pub(crate) fn bic_from_rss(rss: f64, n: usize, n_parents: usize) -> f64 {
    -2.0 * gaussian_loglik(rss, n) + (n_parents as f64 + 2.0) * (n as f64).ln()
}

pub(crate) fn map_ols(e: OlsFailure, node: &str) -> Error {
    match e {
        OlsFailure::ZeroVarianceResponse => Error::DegenerateVariance { node: node.to_string() },
        OlsFailure::RankDeficient => Error::RankDeficient { node: node.to_string() },
    }
}

/// Least-squares fit of `node` on `parents` with an intercept.
pub fn fit_node(data: &DataMatrix, node: &str, parents: &[&str]) -> Result<LocalFit> {
    let j = data.index_of(node)?;
    let ps = parents
        .iter()
        .map(|p| data.index_of(p))
        .collect::<Result<Vec<_>>>()?;
    fit_node_idx(data, j, &ps)
}

pub fn fit_node_idx(data: &DataMatrix, node: usize, parents: &[usize]) -> Result<LocalFit> {
    let name = &data.columns()[node].name;
    if parents.contains(&node) {
        return Err(Error::SelfLoop(name.clone()));
    }
    if data.n_samples() <= parents.len() + 2 {
        return Err(Error::InvalidData(format!(
            "{} samples cannot support {} parents of `{name}`",
            data.n_samples(),
            parents.len()
        )));
    }
    let xs: Vec<_> = parents.iter().map(|&p| data.column(p)).collect();
    ols(data.column(node), &xs)
        .map(LocalFit::from_ols)
        .map_err(|e| map_ols(e, name))
}

/// Node-wise BIC; errors with `DegenerateVariance` on an exact fit.
pub fn node_bic(data: &DataMatrix, node: &str, parents: &[&str]) -> Result<f64> {
    let fit = fit_node(data, node, parents)?;
    fit.bic().ok_or_else(|| Error::DegenerateVariance { node: node.to_string() })
}

pub fn node_bic_idx(data: &DataMatrix, node: usize, parents: &[usize]) -> Result<f64> {
    let fit = fit_node_idx(data, node, parents)?;
    fit.bic().ok_or_else(|| Error::DegenerateVariance {
        node: data.columns()[node].name.clone(),
    })
}

/// A DAG with its least-squares parameters and decomposed BIC.
#[derive(Debug, Clone)]
pub struct ScoredGraph {
    pub sem: LinearSem,
    pub node_bic: Vec<f64>,
    pub bic_total: f64,
    pub n_samples: usize,
    /// Total BIC after every accepted move, one list per climb (initial climb
    /// first, then one per restart). Empty for graphs that were not searched.
    pub climb_traces: Vec<Vec<f64>>,
}

impl ScoredGraph {
    pub fn dag(&self) -> &Dag {
        self.sem.dag()
    }
}

/// Fits every node of `dag` on the matching data columns (by name).
pub fn fit_dag(data: &DataMatrix, dag: &Dag) -> Result<ScoredGraph> {
    let cols = dag
        .names()
        .iter()
        .map(|n| data.index_of(n))
        .collect::<Result<Vec<_>>>()?;
    let mut params = Vec::with_capacity(dag.n_nodes());
    let mut bics = Vec::with_capacity(dag.n_nodes());
    for i in 0..dag.n_nodes() {
        let ps: Vec<usize> = dag.parents(i).iter().map(|&p| cols[p]).collect();
        let fit = fit_node_idx(data, cols[i], &ps)?;
        let bic = fit.bic().ok_or_else(|| Error::DegenerateVariance {
            node: dag.name(i).to_string(),
        })?;
        bics.push(bic);
        params.push(NodeParams {
            intercept: fit.intercept,
            coeffs: fit.coeffs,
            noise_sd: fit.noise_sd,
        });
    }
    let sem = LinearSem::new(dag.clone(), params)?;
    Ok(ScoredGraph {
        bic_total: bics.iter().sum(),
        node_bic: bics,
        sem,
        n_samples: data.n_samples(),
        climb_traces: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn constant_column_is_degenerate() {
        let d = DataMatrix::from_columns(&["Y"], DMatrix::from_element(20, 1, 3.0)).unwrap();
        assert!(matches!(fit_node(&d, "Y", &[]), Err(Error::DegenerateVariance { .. })));
        assert!(matches!(node_bic(&d, "Y", &[]), Err(Error::DegenerateVariance { .. })));
    }

    #[test]
    fn exact_line_fits_but_has_no_bic() {
        let v: Vec<f64> = (0..30).flat_map(|i| {
            let x = (i as f64 * 0.73).sin() * 3.0;
            [x, 2.0 * x]
        }).collect();
        let d = DataMatrix::from_columns(&["X", "Y"], DMatrix::from_row_slice(30, 2, &v)).unwrap();
        let fit = fit_node(&d, "Y", &["X"]).unwrap();
        assert!((fit.coeffs[0] - 2.0).abs() < 1e-10);
        assert!(fit.intercept.abs() < 1e-10);
        assert!(fit.noise_sd < 1e-10);
        assert!(matches!(node_bic(&d, "Y", &["X"]), Err(Error::DegenerateVariance { .. })));
    }

    #[test]
    fn penalty_grows_by_log_s_per_parent() {
        // Same rss, one more parent: difference is exactly ln(s).
        let a = bic_from_rss(12.5, 1000, 2);
        let b = bic_from_rss(12.5, 1000, 3);
        assert!((b - a - (1000f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        let d = DataMatrix::from_columns(&["A", "B"], DMatrix::from_row_slice(3, 2, &[1., 2., 2., 1., 3., 5.])).unwrap();
        assert!(matches!(fit_node(&d, "A", &["B"]), Err(Error::InvalidData(_))));
    }
}
