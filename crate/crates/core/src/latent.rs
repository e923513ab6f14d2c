//! Latent-space estimation from a residual matrix by PCA, with the number of
//! components chosen by parallel analysis under a hard-threshold ceiling.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardize_columns, ResidualMatrix};
use crate::error::{Error, Result};
use crate::graph::Role;
use crate::rng;

/// Full principal component decomposition of a standardized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `s x r` component scores `U * S`, with `r = min(s, m)`.
    pub scores: DMatrix<f64>,
    /// `m x r` loadings (right singular vectors).
    pub loadings: DMatrix<f64>,
    /// Descending singular values.
    pub singular_values: Vec<f64>,
    /// Component variances `singular_value^2 / (s - 1)`.
    pub eigenvalues: Vec<f64>,
}

fn standardized(residuals: &ResidualMatrix) -> Result<DMatrix<f64>> {
    if residuals.n_samples() < 2 || residuals.n_columns() == 0 {
        return Err(Error::DegenerateInput(format!(
            "PCA needs at least 2 samples and 1 column, got {} x {}",
            residuals.n_samples(),
            residuals.n_columns()
        )));
    }
    residuals.standardized()
}

/// PCA of the residual columns after standardizing each to mean 0 and sd 1.
pub fn pca(residuals: &ResidualMatrix) -> Result<Pca> {
    Ok(pca_standardized(&standardized(residuals)?))
}

/// PCA of an already standardized matrix. Each loading column is signed so
/// that its largest-magnitude entry is positive (first such entry on ties).
pub fn pca_standardized(x: &DMatrix<f64>) -> Pca {
    let s = x.nrows();
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut scores = DMatrix::zeros(s, r);
    let mut loadings = DMatrix::zeros(x.ncols(), r);
    let mut singular_values = Vec::with_capacity(r);
    for (k, &c) in order.iter().enumerate() {
        let sv = svd.singular_values[c];
        let mut v = vt.row(c).transpose();
        let mut best = 0;
        for i in 1..v.len() {
            if v[i].abs() > v[best].abs() {
                best = i;
            }
        }
        let sign = if v[best] < 0.0 { -1.0 } else { 1.0 };
        v *= sign;
        loadings.set_column(k, &v);
        scores.set_column(k, &(u.column(c) * (sv * sign)));
        singular_values.push(sv);
    }
    let denom = (s as f64 - 1.0).max(1.0);
    let eigenvalues = singular_values.iter().map(|v| v * v / denom).collect();
    Pca {
        scores,
        loadings,
        singular_values,
        eigenvalues,
    }
}

/// Coefficient `omega(beta)` of the hard threshold for unknown noise level.
pub fn threshold_coefficient(beta: f64) -> f64 {
    0.56 * beta.powi(3) - 0.95 * beta.powi(2) + 1.82 * beta + 1.43
}

/// Number of singular values above `omega(beta) * median(singular values)`,
/// with `beta = min(s, m) / max(s, m)`. Takes the component variances of an
/// `s x m` decomposition.
pub fn hard_threshold_ceiling(eigenvalues: &[f64], s: usize, m: usize) -> usize {
    if eigenvalues.is_empty() || s == 0 || m == 0 {
        return 0;
    }
    let denom = (s as f64 - 1.0).max(1.0);
    let mut sv: Vec<f64> = eigenvalues.iter().map(|e| (e.max(0.0) * denom).sqrt()).collect();
    sv.sort_by(|a, b| a.total_cmp(b));
    let n = sv.len();
    let median = if n % 2 == 1 {
        sv[n / 2]
    } else {
        0.5 * (sv[n / 2 - 1] + sv[n / 2])
    };
    let beta = s.min(m) as f64 / s.max(m) as f64;
    let tau = threshold_coefficient(beta) * median;
    sv.iter().filter(|&&v| v > tau).count()
}

/// Sample quantile by linear interpolation between order statistics
/// (the usual "type 7" definition). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub n_perm: usize,
    pub quantile: f64,
    pub seed: u64,
    /// Feed outcome residuals into the PCA along with the predictors.
    pub include_outcomes: bool,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            n_perm: 50,
            quantile: 0.95,
            seed: 0,
            include_outcomes: false,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_perm == 0 {
            return Err(Error::InvalidConfig("n_perm must be at least 1".into()));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::InvalidConfig(format!("quantile {} outside (0, 1)", self.quantile)));
        }
        Ok(())
    }
}

/// Eigenvalues of `x` after independently permuting every column, one
/// descending vector per permutation.
fn permuted_spectra(x: &DMatrix<f64>, n_perm: usize, seed: u64) -> Vec<Vec<f64>> {
    let s = x.nrows();
    (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, "parallel-analysis", p as u64);
            let mut y = x.clone();
            let mut idx: Vec<usize> = (0..s).collect();
            for j in 0..y.ncols() {
                idx.shuffle(&mut rng);
                let col: Vec<f64> = idx.iter().map(|&i| x[(i, j)]).collect();
                y.column_mut(j).copy_from_slice(&col);
            }
            let mut sv: Vec<f64> = y.singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            sv.iter().map(|v| v * v / (s as f64 - 1.0)).collect()
        })
        .collect()
}

/// Number of leading components of the decomposition `observed` whose
/// variance exceeds the `quantile` of the same-rank variances of
/// column-permuted data, capped at `ceiling`.
fn retained(observed: &[f64], x: &DMatrix<f64>, config: &LatentConfig, ceiling: usize) -> usize {
    let spectra = permuted_spectra(x, config.n_perm, config.seed);
    let mut q = 0;
    for (k, &ev) in observed.iter().enumerate() {
        let mut at_rank: Vec<f64> = spectra.iter().map(|sp| sp[k]).collect();
        at_rank.sort_by(|a, b| a.total_cmp(b));
        if ev > quantile_sorted(&at_rank, config.quantile) {
            q += 1;
        } else {
            break;
        }
    }
    q.min(ceiling)
}

/// Parallel-analysis dimensionality of the standardized residual matrix.
pub fn parallel_analysis(residuals: &ResidualMatrix, n_perm: usize, quantile: f64, seed: u64) -> Result<usize> {
    let config = LatentConfig {
        n_perm,
        quantile,
        seed,
        include_outcomes: true,
    };
    config.validate()?;
    let x = standardized(residuals)?;
    let p = pca_standardized(&x);
    let ceiling = hard_threshold_ceiling(&p.eigenvalues, x.nrows(), x.ncols());
    Ok(retained(&p.eigenvalues, &x, &config, ceiling))
}

/// Estimated latent space: the leading `q` components of the residual PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEstimate {
    /// `s x q` component scores.
    pub scores: DMatrix<f64>,
    /// `m x q` loadings over `residual_names`.
    pub loadings: DMatrix<f64>,
    /// Variances of the retained components, descending.
    pub eigenvalues: Vec<f64>,
    /// Variances of all components.
    pub spectrum: Vec<f64>,
    pub q: usize,
    pub ceiling_q: usize,
    /// Residual columns that entered the decomposition.
    pub residual_names: Vec<String>,
}

impl LatentEstimate {
    /// Names given to the latent columns when appended to a table.
    pub fn column_names(&self) -> Vec<String> {
        latent_column_names(self.q)
    }

    /// `{eigenvalues, spectrum, ceiling_q, q}` summary.
    pub fn report(&self) -> EigenReport {
        EigenReport {
            eigenvalues: self.eigenvalues.clone(),
            spectrum: self.spectrum.clone(),
            ceiling_q: self.ceiling_q,
            q: self.q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub eigenvalues: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub ceiling_q: usize,
    pub q: usize,
}

/// `Ū1, ..., Ūq`.
pub fn latent_column_names(q: usize) -> Vec<String> {
    (1..=q).map(|k| format!("Ū{k}")).collect()
}

/// PCA of the standardized residuals, a hard-threshold ceiling, and parallel
/// analysis for the retained dimensionality.
pub fn estimate_latents(residuals: &ResidualMatrix, config: &LatentConfig) -> Result<LatentEstimate> {
    config.validate()?;
    let input = if config.include_outcomes {
        residuals.filter_roles(|r| r != Role::LatentEstimate)
    } else {
        residuals.filter_roles(|r| !matches!(r, Role::LatentEstimate | Role::Outcome))
    };
    let x = standardized(&input)?;
    let p = pca_standardized(&x);
    let ceiling_q = hard_threshold_ceiling(&p.eigenvalues, x.nrows(), x.ncols());
    let q = retained(&p.eigenvalues, &x, config, ceiling_q);
    Ok(LatentEstimate {
        scores: p.scores.columns(0, q).into_owned(),
        loadings: p.loadings.columns(0, q).into_owned(),
        eigenvalues: p.eigenvalues[..q].to_vec(),
        spectrum: p.eigenvalues,
        q,
        ceiling_q,
        residual_names: input.names().to_vec(),
    })
}

/// Column-standardized copy of the latent scores, ready to be appended as data.
pub fn standardized_scores(latents: &LatentEstimate) -> Result<DMatrix<f64>> {
    standardize_columns(&latents.scores)
        .map_err(|j| Error::DegenerateInput(format!("latent score column {} is constant", j + 1)))
}
