//! Residuals of a fitted linear SEM, on the data scale or the probability scale.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{ColumnKind, ColumnMeta, DataMatrix, ResidualMatrix};
use crate::error::{Error, Result};
use crate::graph::Role;
use crate::sem::LinearSem;

/// How a residual matrix is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ResidualSpec {
    /// Drop the contribution of latent-estimate parents from every prediction.
    pub clamp_latents: bool,
    /// Use probability-scale residuals for continuous nodes as well.
    pub psr_continuous: bool,
}

/// Per-sample prediction of `node` from its parents in `sem`, reading parent
/// values from the like-named columns of `data`. Parents listed in `clamp`
/// contribute nothing beyond the intercept.
pub fn predict_node(sem: &LinearSem, data: &DataMatrix, node: &str, clamp: &[&str]) -> Result<DVector<f64>> {
    let dag = sem.dag();
    let j = dag.index_of(node)?;
    for c in clamp {
        dag.index_of(c)?;
    }
    let p = sem.params(j);
    let mut out = DVector::from_element(data.n_samples(), p.intercept);
    for (k, &parent) in dag.parents(j).iter().enumerate() {
        let name = dag.name(parent);
        if clamp.contains(&name) {
            continue;
        }
        out.axpy(p.coeffs[k], &data.column_by_name(name)?, 1.0);
    }
    Ok(out)
}

/// `data[node] - prediction` for a continuous node.
pub fn continuous_residual(data: &DataMatrix, node: &str, prediction: &DVector<f64>) -> Result<DVector<f64>> {
    let j = data.index_of(node)?;
    if data.columns()[j].kind != ColumnKind::Continuous {
        return Err(Error::KindMismatch { node: node.to_string() });
    }
    if prediction.len() != data.n_samples() {
        return Err(Error::ShapeMismatch {
            expected: data.n_samples(),
            found: prediction.len(),
        });
    }
    Ok(data.column(j) - prediction)
}

/// Fitted conditional distribution of a node given its parents, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionalCdf {
    /// `N(mean[i], sd^2)`.
    Normal { mean: DVector<f64>, sd: f64 },
    /// `N(mean[i], sd^2)` on the code scale, cut at half-integers into
    /// `levels` ordered categories: `F(k) = Phi((k + 0.5 - mean) / sd)` for
    /// `k < levels - 1` and `F(levels - 1) = 1`.
    DiscretizedNormal { mean: DVector<f64>, sd: f64, levels: usize },
    /// Explicit level probabilities per sample.
    Probabilities(Vec<Vec<f64>>),
}

const PROB_TOL: f64 = 1e-9;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn level_code(y: f64, levels: usize, node: &str) -> Result<usize> {
    if y.fract() != 0.0 || y < 0.0 || y >= levels as f64 {
        return Err(Error::InvalidData(format!("`{node}`: {y} is not a level code in 0..{levels}")));
    }
    Ok(y as usize)
}

/// Probability-scale residual `F(y-) + F(y) - 1` of every sample of `node`,
/// where `F(y-)` is the left limit of the fitted conditional CDF at the
/// observed value. For a continuous CDF this is `2 F(y) - 1`.
pub fn psr(data: &DataMatrix, node: &str, cdf: &ConditionalCdf) -> Result<DVector<f64>> {
    let y = data.column_by_name(node)?;
    let s = y.len();
    let phi = std_normal();
    let check_len = |n: usize| {
        if n == s {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { expected: s, found: n })
        }
    };
    match cdf {
        ConditionalCdf::Normal { mean, sd } => {
            check_len(mean.len())?;
            if !(*sd > 0.0) || !sd.is_finite() {
                return Err(Error::InvalidCdf(format!("scale {sd} is not positive")));
            }
            Ok(DVector::from_fn(s, |i, _| 2.0 * phi.cdf((y[i] - mean[i]) / sd) - 1.0))
        }
        ConditionalCdf::DiscretizedNormal { mean, sd, levels } => {
            check_len(mean.len())?;
            if !(*sd > 0.0) || !sd.is_finite() {
                return Err(Error::InvalidCdf(format!("scale {sd} is not positive")));
            }
            if *levels < 2 {
                return Err(Error::InvalidCdf("fewer than two levels".into()));
            }
            let upper = |k: isize, mu: f64| -> f64 {
                if k < 0 {
                    0.0
                } else if k as usize >= levels - 1 {
                    1.0
                } else {
                    phi.cdf((k as f64 + 0.5 - mu) / sd)
                }
            };
            let mut out = DVector::zeros(s);
            for i in 0..s {
                let k = level_code(y[i], *levels, node)? as isize;
                out[i] = upper(k - 1, mean[i]) + upper(k, mean[i]) - 1.0;
            }
            Ok(out)
        }
        ConditionalCdf::Probabilities(probs) => {
            check_len(probs.len())?;
            let mut out = DVector::zeros(s);
            for (i, p) in probs.iter().enumerate() {
                if p.iter().any(|&v| !(-PROB_TOL..=1.0 + PROB_TOL).contains(&v)) {
                    return Err(Error::InvalidCdf(format!("sample {}: probability outside [0, 1]", i + 1)));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidCdf(format!(
                        "sample {}: probabilities sum to {total}",
                        i + 1
                    )));
                }
                let k = level_code(y[i], p.len(), node)?;
                let below: f64 = p[..k].iter().sum();
                out[i] = (below + (below + p[k]).min(1.0) - 1.0).clamp(-1.0, 1.0);
            }
            Ok(out)
        }
    }
}

/// Residual of one node: ordinary for continuous nodes (unless
/// `psr_continuous`), probability-scale under a Gaussian model on the level
/// codes for ordinal nodes.
fn node_residual(
    sem: &LinearSem,
    data: &DataMatrix,
    meta: &ColumnMeta,
    clamp: &[&str],
    spec: ResidualSpec,
) -> Result<DVector<f64>> {
    let pred = predict_node(sem, data, &meta.name, clamp)?;
    let sd = sem.params(sem.dag().index_of(&meta.name)?).noise_sd;
    match meta.kind {
        ColumnKind::Continuous if !spec.psr_continuous => continuous_residual(data, &meta.name, &pred),
        ColumnKind::Continuous => psr(data, &meta.name, &ConditionalCdf::Normal { mean: pred, sd }),
        ColumnKind::Ordinal { levels } => psr(
            data,
            &meta.name,
            &ConditionalCdf::DiscretizedNormal { mean: pred, sd, levels },
        ),
    }
}

/// One residual column for every node of `sem` that is neither a true latent
/// nor a latent estimate, in the column order of `data`.
pub fn residual_matrix(data: &DataMatrix, sem: &LinearSem, spec: ResidualSpec) -> Result<ResidualMatrix> {
    let dag = sem.dag();
    let in_graph: HashSet<&str> = dag.names().iter().map(String::as_str).collect();
    for name in &in_graph {
        data.index_of(name)?;
    }
    let clamp: Vec<&str> = if spec.clamp_latents {
        (0..dag.n_nodes())
            .filter(|&i| dag.role(i) == Role::LatentEstimate)
            .map(|i| dag.name(i))
            .collect()
    } else {
        Vec::new()
    };
    let modeled: Vec<ColumnMeta> = data
        .columns()
        .iter()
        .filter(|c| in_graph.contains(c.name.as_str()))
        .filter(|c| {
            let role = dag.role(dag.index_of(&c.name).unwrap());
            !matches!(role, Role::Latent | Role::LatentEstimate)
        })
        .cloned()
        .collect();
    let cols = modeled
        .par_iter()
        .map(|meta| node_residual(sem, data, meta, &clamp, spec))
        .collect::<Result<Vec<_>>>()?;
    let mut values = DMatrix::zeros(data.n_samples(), cols.len());
    for (j, c) in cols.iter().enumerate() {
        values.set_column(j, c);
    }
    ResidualMatrix::new(&modeled, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dag;
    use crate::sem::NodeParams;

    fn ordinal_table(codes: &[f64], levels: usize) -> DataMatrix {
        let meta = ColumnMeta {
            name: "Y".into(),
            role: Role::Predictor,
            kind: ColumnKind::Ordinal { levels },
        };
        DataMatrix::new(vec![meta], DMatrix::from_column_slice(codes.len(), 1, codes)).unwrap()
    }

    #[test]
    fn binary_psr_arithmetic() {
        let d = ordinal_table(&[1.0], 2);
        let r = psr(&d, "Y", &ConditionalCdf::Probabilities(vec![vec![0.5, 0.5]])).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_level_psr_arithmetic() {
        let d = ordinal_table(&[1.0], 3);
        let r = psr(&d, "Y", &ConditionalCdf::Probabilities(vec![vec![0.2, 0.5, 0.3]])).unwrap();
        assert!((r[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn continuous_psr_at_median_is_zero() {
        let d = DataMatrix::from_columns(&["Y"], DMatrix::from_column_slice(1, 1, &[2.5])).unwrap();
        let cdf = ConditionalCdf::Normal { mean: DVector::from_element(1, 2.5), sd: 0.7 };
        assert!(psr(&d, "Y", &cdf).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn invalid_probabilities_rejected() {
        let d = ordinal_table(&[0.0], 2);
        for p in [vec![1.2, -0.2], vec![0.3, 0.3]] {
            let r = psr(&d, "Y", &ConditionalCdf::Probabilities(vec![p]));
            assert!(matches!(r, Err(Error::InvalidCdf(_))));
        }
        let cdf = ConditionalCdf::Normal { mean: DVector::zeros(1), sd: 0.0 };
        let d = DataMatrix::from_columns(&["Y"], DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(psr(&d, "Y", &cdf), Err(Error::InvalidCdf(_))));
    }

    #[test]
    fn discretized_normal_uses_left_limits() {
        // Mean exactly on level 1 of three: F(0) = Phi(-0.5/sd), F(1) = Phi(0.5/sd).
        let d = ordinal_table(&[1.0], 3);
        let cdf = ConditionalCdf::DiscretizedNormal { mean: DVector::from_element(1, 1.0), sd: 1.0, levels: 3 };
        assert!(psr(&d, "Y", &cdf).unwrap()[0].abs() < 1e-12);
        let d = ordinal_table(&[2.0], 3);
        let r = psr(&d, "Y", &cdf).unwrap()[0];
        let expect = std_normal().cdf(0.5);
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn clamped_parent_is_ignored() {
        let nodes = vec![
            ("A".to_string(), Role::Predictor),
            ("B".to_string(), Role::Predictor),
            ("C".to_string(), Role::Predictor),
        ];
        let dag = Dag::new(nodes, &[("A", "C"), ("B", "C")]).unwrap();
        let params = vec![
            NodeParams { intercept: 0.0, coeffs: vec![], noise_sd: 1.0 },
            NodeParams { intercept: 0.0, coeffs: vec![], noise_sd: 1.0 },
            NodeParams { intercept: 1.0, coeffs: vec![2.0, 3.0], noise_sd: 1.0 },
        ];
        let sem = LinearSem::new(dag, params).unwrap();
        let d = DataMatrix::from_columns(&["A", "B", "C"], DMatrix::from_row_slice(2, 3, &[1., 10., 0., 2., 20., 0.])).unwrap();
        let p = predict_node(&sem, &d, "C", &["B"]).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 5.0]);
        let p = predict_node(&sem, &d, "A", &[]).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0]);
        assert!(matches!(predict_node(&sem, &d, "Q", &[]), Err(Error::UnknownNode(_))));
    }
}
