//! Bootstrap ensembles of hill-climbed graphs and their consensus.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constraints::Constraints;
use super::hill_climb::{hill_climb, HillClimbConfig};
use super::score::ScoredGraph;
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::graph::{would_create_cycle, Dag, Role};
use crate::rng;
use crate::sem::{LinearSem, NodeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    /// Minimum fraction of replicates (either orientation) for a consensus edge.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 50,
            threshold: 0.4,
            seed: 0,
        }
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} outside (0, 1]")));
    }
    Ok(())
}

/// Edge statistics over bootstrap replicates plus the consensus graph.
#[derive(Debug, Clone)]
pub struct EnsembleGraph {
    names: Vec<String>,
    roles: Vec<Role>,
    n_boot: usize,
    threshold: f64,
    /// `counts[i * n + j]`: replicates containing `i -> j`.
    counts: Vec<u32>,
    /// Mean coefficient of `i -> j` over the replicates containing it.
    edge_mean: BTreeMap<(usize, usize), f64>,
    /// Per-node intercept and noise sd averaged over all replicates.
    node_mean: Vec<(f64, f64)>,
    replicate_edges: Vec<Vec<(usize, usize)>>,
    consensus: Dag,
    averaged: LinearSem,
}

impl EnsembleGraph {
    /// Aggregates already-learned replicates over the same columns.
    pub fn from_replicates(replicates: &[ScoredGraph], threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        let first = replicates
            .first()
            .ok_or_else(|| Error::InvalidConfig("no bootstrap replicates".into()))?;
        let names = first.dag().names().to_vec();
        let roles = first.dag().roles().to_vec();
        let n = names.len();
        let mut counts = vec![0u32; n * n];
        let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut node_sum = vec![(0.0, 0.0); n];
        let mut replicate_edges = Vec::with_capacity(replicates.len());
        for rep in replicates {
            let dag = rep.dag();
            if dag.names() != names.as_slice() {
                return Err(Error::NodeSetMismatch("replicates disagree on columns".into()));
            }
            for (f, t) in dag.edges() {
                counts[f * n + t] += 1;
                *sums.entry((f, t)).or_default() += rep.sem.coeff(f, t).unwrap();
            }
            for (j, acc) in node_sum.iter_mut().enumerate() {
                let p = rep.sem.params(j);
                acc.0 += p.intercept;
                acc.1 += p.noise_sd;
            }
            replicate_edges.push(dag.edges());
        }
        let n_boot = replicates.len();
        let edge_mean: BTreeMap<_, _> = sums
            .into_iter()
            .map(|((f, t), s)| ((f, t), s / counts[f * n + t] as f64))
            .collect();
        let node_mean: Vec<(f64, f64)> = node_sum
            .into_iter()
            .map(|(a, b)| (a / n_boot as f64, b / n_boot as f64))
            .collect();
        let consensus = consensus_dag(&names, &roles, &counts, n_boot, threshold)?;
        let averaged = average_onto(&consensus, &edge_mean, &node_mean)?;
        Ok(EnsembleGraph {
            names,
            roles,
            n_boot,
            threshold,
            counts,
            edge_mean,
            node_mean,
            replicate_edges,
            consensus,
            averaged,
        })
    }

    pub fn n_boot(&self) -> usize {
        self.n_boot
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn consensus_dag(&self) -> &Dag {
        &self.consensus
    }

    /// Consensus graph carrying coefficients averaged over the replicates in
    /// which each edge appeared (intercepts and noise over all replicates).
    pub fn averaged_sem(&self) -> &LinearSem {
        &self.averaged
    }

    /// Edge lists (sorted) of the individual replicates.
    pub fn replicate_edges(&self) -> &[Vec<(usize, usize)>] {
        &self.replicate_edges
    }

    /// Fraction of replicates containing `from -> to` in that orientation.
    pub fn directed_frequency(&self, from: usize, to: usize) -> f64 {
        self.counts[from * self.names.len() + to] as f64 / self.n_boot as f64
    }

    /// Fraction of replicates containing the pair in either orientation.
    pub fn edge_frequency(&self, a: usize, b: usize) -> f64 {
        let n = self.names.len();
        (self.counts[a * n + b] + self.counts[b * n + a]) as f64 / self.n_boot as f64
    }

    /// Directed frequencies of every edge seen at least once, by name.
    pub fn frequency_table(&self) -> BTreeMap<(String, String), f64> {
        let n = self.names.len();
        let mut out = BTreeMap::new();
        for i in 0..n {
            for j in 0..n {
                if self.counts[i * n + j] > 0 {
                    out.insert(
                        (self.names[i].clone(), self.names[j].clone()),
                        self.directed_frequency(i, j),
                    );
                }
            }
        }
        out
    }

    /// Consensus for another threshold over the same replicates.
    pub fn with_threshold(&self, threshold: f64) -> Result<EnsembleGraph> {
        check_threshold(threshold)?;
        let consensus = consensus_dag(&self.names, &self.roles, &self.counts, self.n_boot, threshold)?;
        let averaged = average_onto(&consensus, &self.edge_mean, &self.node_mean)?;
        Ok(EnsembleGraph {
            threshold,
            consensus,
            averaged,
            ..self.clone()
        })
    }
}

fn average_onto(
    dag: &Dag,
    edge_mean: &BTreeMap<(usize, usize), f64>,
    node_mean: &[(f64, f64)],
) -> Result<LinearSem> {
    let params = (0..dag.n_nodes())
        .map(|j| NodeParams {
            intercept: node_mean[j].0,
            coeffs: dag.parents(j).iter().map(|&p| edge_mean[&(p, j)]).collect(),
            noise_sd: node_mean[j].1,
        })
        .collect();
    LinearSem::new(dag.clone(), params)
}

/// Keeps pairs seen in at least `threshold` of the replicates, orients each by
/// majority (ties toward the lower column index), then inserts them in order
/// of decreasing frequency, dropping any edge that would close a cycle.
///
/// Because a higher threshold selects a prefix of the same insertion order,
/// raising the threshold can only remove edges.
fn consensus_dag(names: &[String], roles: &[Role], counts: &[u32], n_boot: usize, threshold: f64) -> Result<Dag> {
    let n = names.len();
    // Compare counts rather than fractions to avoid rounding at the cutoff.
    let min_count = (threshold * n_boot as f64 - 1e-9).ceil().max(1.0) as u32;
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let (ab, ba) = (counts[a * n + b], counts[b * n + a]);
            if ab + ba >= min_count {
                let edge = if ab >= ba { (a, b) } else { (b, a) };
                pairs.push((ab + ba, edge));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut children = vec![Vec::new(); n];
    let mut kept = Vec::with_capacity(pairs.len());
    for (_, (f, t)) in pairs {
        if !would_create_cycle(&children, f, t) {
            children[f].push(t);
            kept.push((f, t));
        }
    }
    Dag::from_indices(names.to_vec(), roles.to_vec(), kept)
}

/// Row indices of bootstrap replicate `replicate` (sampled with replacement).
pub fn bootstrap_rows(n_samples: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, "bootstrap-rows", replicate as u64);
    (0..n_samples).map(|_| rng.random_range(0..n_samples)).collect()
}

pub fn bootstrap_resample(data: &DataMatrix, seed: u64, replicate: usize) -> DataMatrix {
    data.select_rows(&bootstrap_rows(data.n_samples(), seed, replicate))
}

/// Climbing configuration used for replicate `replicate`.
pub fn replicate_search_config(search: &HillClimbConfig, seed: u64, replicate: usize) -> HillClimbConfig {
    HillClimbConfig {
        seed: rng::derive_seed(seed, "bootstrap-climb", replicate as u64),
        ..search.clone()
    }
}

/// Hill climbing on `n_boot` nonparametric bootstrap resamples, aggregated
/// into an [`EnsembleGraph`]. Replicates run in parallel; the result does not
/// depend on the thread count.
pub fn bootstrap_consensus(
    data: &DataMatrix,
    constraints: &Constraints,
    search: &HillClimbConfig,
    boot: &BootstrapConfig,
) -> Result<EnsembleGraph> {
    if boot.n_boot == 0 {
        return Err(Error::InvalidConfig("n_boot must be at least 1".into()));
    }
    check_threshold(boot.threshold)?;
    let replicates = (0..boot.n_boot)
        .into_par_iter()
        .map(|r| {
            let sample = bootstrap_resample(data, boot.seed, r);
            hill_climb(&sample, constraints, &replicate_search_config(search, boot.seed, r))
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleGraph::from_replicates(&replicates, boot.threshold)
}
