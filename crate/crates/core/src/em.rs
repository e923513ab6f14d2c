//! Alternating structure learning and latent re-estimation.
//!
//! Each iteration appends the current latent estimate to the data as source
//! columns, learns a bootstrap consensus graph over the extended table, scores
//! it, and re-estimates the latents from the residuals of that graph with the
//! latent columns' contributions removed.

use serde::{Deserialize, Serialize};

use crate::data::{ColumnMeta, DataMatrix};
use crate::error::{Error, Result};
use crate::graph::Role;
use crate::latent::{estimate_latents, standardized_scores, LatentConfig, LatentEstimate};
use crate::residuals::{residual_matrix, ResidualSpec};
use crate::rng;
use crate::search::{bootstrap_consensus, fit_dag, BootstrapConfig, Constraints, EnsembleGraph, HillClimbConfig, ScoredGraph};

/// When the iteration stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "epsilon")]
pub enum StopRule {
    /// Continue while the score improves by more than `1e-6 * |baseline score|`.
    RelativeImprovement,
    /// Continue while the score improves by more than the given amount.
    Improvement(f64),
    /// Run all `max_iter` iterations regardless of the score.
    Fixed,
}

impl StopRule {
    /// Rule for a user-supplied tolerance: zero means fixed iterations.
    pub fn from_epsilon(epsilon: Option<f64>) -> Result<Self> {
        match epsilon {
            None => Ok(StopRule::RelativeImprovement),
            Some(e) if e == 0.0 => Ok(StopRule::Fixed),
            Some(e) if e > 0.0 && e.is_finite() => Ok(StopRule::Improvement(e)),
            Some(e) => Err(Error::InvalidConfig(format!("epsilon {e} must be positive or zero"))),
        }
    }
}

/// Which coefficients produce the residuals that the latents are estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSource {
    /// Edge coefficients averaged over the bootstrap replicates.
    #[default]
    BootstrapAverage,
    /// Least-squares refit of the consensus graph on the full table.
    Refit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub stop: StopRule,
    pub max_iter: usize,
    /// Forbid edges into the latent columns.
    pub latents_are_sources: bool,
    /// Use probability-scale residuals for continuous nodes.
    pub psr: bool,
    pub residuals: ResidualSource,
    pub constraints: Constraints,
    pub search: HillClimbConfig,
    pub boot: BootstrapConfig,
    pub latent: LatentConfig,
    /// Root seed; per-iteration seeds for bootstrap and permutations derive from it.
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            stop: StopRule::RelativeImprovement,
            max_iter: 20,
            latents_are_sources: true,
            psr: false,
            residuals: ResidualSource::BootstrapAverage,
            constraints: Constraints::default(),
            search: HillClimbConfig::default(),
            boot: BootstrapConfig::default(),
            latent: LatentConfig::default(),
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if let StopRule::Improvement(e) = self.stop {
            if !(e > 0.0) {
                return Err(Error::InvalidConfig(format!("epsilon {e} must be positive")));
            }
        }
        self.latent.validate()
    }
}

/// One learned graph of the run. Iteration 0 is the latent-free baseline.
#[derive(Debug, Clone)]
pub struct EmIterate {
    pub iteration: usize,
    /// Total BIC over the observed (non-latent-estimate) nodes.
    pub score: f64,
    pub ensemble: EnsembleGraph,
    /// Consensus graph refitted by least squares on the full table.
    pub fitted: ScoredGraph,
    /// Latent columns that were part of this iteration's table.
    pub latents: Option<LatentEstimate>,
    /// The table the graph was learned on.
    pub data: DataMatrix,
}

impl EmIterate {
    pub fn q(&self) -> usize {
        self.latents.as_ref().map_or(0, |l| l.q)
    }

    pub fn edge_count(&self) -> usize {
        self.ensemble.consensus_dag().n_edges()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The residuals showed no latent structure.
    NoLatentDetected,
    /// The score stopped improving by more than the tolerance.
    Converged,
    /// `max_iter` iterations were run.
    MaxIterations,
}

/// Row of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub bic: f64,
    pub q: usize,
    pub edge_count: usize,
}

#[derive(Debug, Clone)]
pub struct EmTrace {
    pub iterates: Vec<EmIterate>,
    /// Index into `iterates` of the lowest score (earliest on ties).
    pub best: usize,
    pub stop_reason: StopReason,
    /// Residual-based estimate computed after the last iterate; it was not
    /// used to learn a graph.
    pub pending: Option<LatentEstimate>,
}

impl EmTrace {
    pub fn best_iterate(&self) -> &EmIterate {
        &self.iterates[self.best]
    }

    pub fn baseline(&self) -> &EmIterate {
        &self.iterates[0]
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        self.iterates
            .iter()
            .map(|it| TraceRow {
                iteration: it.iteration,
                bic: it.score,
                q: it.q(),
                edge_count: it.edge_count(),
            })
            .collect()
    }
}

/// Appends standardized latent scores as columns `Ū1..Ūq` with the
/// latent-estimate role. With `q = 0` the input comes back unchanged.
pub fn append_latents(data: &DataMatrix, latents: &LatentEstimate) -> Result<DataMatrix> {
    if latents.q == 0 {
        return Ok(data.clone());
    }
    if latents.scores.nrows() != data.n_samples() {
        return Err(Error::ShapeMismatch {
            expected: data.n_samples(),
            found: latents.scores.nrows(),
        });
    }
    let meta = latents
        .column_names()
        .into_iter()
        .map(|n| ColumnMeta::continuous(n, Role::LatentEstimate))
        .collect();
    data.append_columns(meta, &standardized_scores(latents)?)
}

/// Total BIC over every node that is not a latent estimate.
pub fn score_graph(graph: &ScoredGraph) -> f64 {
    let dag = graph.dag();
    (0..dag.n_nodes())
        .filter(|&i| dag.role(i) != Role::LatentEstimate)
        .map(|i| graph.node_bic[i])
        .sum()
}

fn learn(data: &DataMatrix, constraints: &Constraints, config: &EmConfig, iteration: usize) -> Result<(EnsembleGraph, ScoredGraph)> {
    let boot = BootstrapConfig {
        seed: rng::derive_seed(config.seed, "em-bootstrap", iteration as u64),
        ..config.boot.clone()
    };
    let ensemble = bootstrap_consensus(data, constraints, &config.search, &boot)?;
    let fitted = fit_dag(data, ensemble.consensus_dag())?;
    Ok((ensemble, fitted))
}

fn latents_from(
    data: &DataMatrix,
    ensemble: &EnsembleGraph,
    fitted: &ScoredGraph,
    config: &EmConfig,
    iteration: usize,
    clamp: bool,
) -> Result<LatentEstimate> {
    let spec = ResidualSpec {
        clamp_latents: clamp,
        psr_continuous: config.psr,
    };
    let sem = match config.residuals {
        ResidualSource::BootstrapAverage => ensemble.averaged_sem(),
        ResidualSource::Refit => &fitted.sem,
    };
    let residuals = residual_matrix(data, sem, spec)?;
    let latent = LatentConfig {
        seed: rng::derive_seed(config.seed, "em-latent", iteration as u64),
        ..config.latent.clone()
    };
    estimate_latents(&residuals, &latent)
}

/// Runs the alternation on `data` (which must not already hold latent-estimate
/// columns) and returns every iterate; the best one is the result.
pub fn run_em(data: &DataMatrix, config: &EmConfig) -> Result<EmTrace> {
    config.validate()?;
    if let Some(c) = data.columns().iter().find(|c| c.role == Role::LatentEstimate) {
        return Err(Error::InvalidConfig(format!(
            "input already contains latent-estimate column `{}`",
            c.name
        )));
    }
    let (ensemble, fitted) = learn(data, &config.constraints, config, 0)?;
    let baseline_score = score_graph(&fitted);
    let epsilon = match config.stop {
        StopRule::RelativeImprovement => 1e-6 * baseline_score.abs(),
        StopRule::Improvement(e) => e,
        StopRule::Fixed => 0.0,
    };
    let mut latents = latents_from(data, &ensemble, &fitted, config, 0, false)?;
    let mut iterates = vec![EmIterate {
        iteration: 0,
        score: baseline_score,
        ensemble,
        fitted,
        latents: None,
        data: data.clone(),
    }];
    let mut previous = baseline_score;
    let mut stop_reason = StopReason::MaxIterations;
    let mut pending = None;
    for k in 1..=config.max_iter {
        if latents.q == 0 {
            stop_reason = StopReason::NoLatentDetected;
            pending = Some(latents);
            break;
        }
        let extended = append_latents(data, &latents)?;
        let mut constraints = config.constraints.clone();
        if config.latents_are_sources {
            constraints.forced_sources.extend(latents.column_names());
        }
        let (ensemble, fitted) = learn(&extended, &constraints, config, k)?;
        let score = score_graph(&fitted);
        let next = latents_from(&extended, &ensemble, &fitted, config, k, true)?;
        iterates.push(EmIterate {
            iteration: k,
            score,
            ensemble,
            fitted,
            latents: Some(latents),
            data: extended,
        });
        let improved = previous - score > epsilon;
        if config.stop != StopRule::Fixed && !improved {
            stop_reason = StopReason::Converged;
            pending = Some(next);
            break;
        }
        previous = score;
        latents = next;
        if k == config.max_iter {
            pending = Some(latents.clone());
        }
    }
    let best = iterates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap();
    Ok(EmTrace {
        iterates,
        best,
        stop_reason,
        pending,
    })
}
