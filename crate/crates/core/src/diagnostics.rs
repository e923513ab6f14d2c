//! Quality measures of a deconfounded model against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, DataMatrix};
use crate::error::{Error, Result};
use crate::graph::{Dag, Role};
use crate::ols::{ols, OlsFailure};
use crate::search::ScoredGraph;
use crate::sem::LinearSem;
use crate::simulate::GroundTruth;

/// Which outcome coefficients enter [`coefficient_rmse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseScope {
    /// Every edge into an outcome, estimated or true, whose parent is an
    /// observed node of the estimated model.
    AllIntoOutcomes,
    /// The observed true parents of each outcome.
    TrueDrivers,
}

/// Root mean squared coefficient error over edges into the truth's outcomes.
/// A missing edge counts with coefficient 0 on whichever side lacks it.
/// Latent-estimate parents are never scored; true-latent parents are scored
/// only when the estimated model contains a node of that name. An empty scope
/// gives 0.
pub fn coefficient_rmse(estimated: &LinearSem, truth: &GroundTruth, scope: RmseScope) -> Result<f64> {
    if truth.outcome_names().is_empty() {
        return Err(Error::NoOutcomeNodes);
    }
    let est = estimated.dag();
    let tdag = truth.dag();
    let mut sq = 0.0;
    let mut count = 0usize;
    for outcome in truth.outcome_names() {
        let t_out = tdag.index_of(outcome)?;
        let e_out = est.index_of(outcome).ok();
        let mut parents: BTreeSet<String> = BTreeSet::new();
        for &p in tdag.parents(t_out) {
            let name = tdag.name(p);
            let observed = tdag.role(p) != Role::Latent;
            let keep = match scope {
                RmseScope::TrueDrivers => observed,
                RmseScope::AllIntoOutcomes => est.index_of(name).is_ok_and(|i| est.role(i) != Role::LatentEstimate),
            };
            if keep {
                parents.insert(name.to_string());
            }
        }
        if scope == RmseScope::AllIntoOutcomes {
            if let Some(j) = e_out {
                for &p in est.parents(j) {
                    if est.role(p) != Role::LatentEstimate {
                        parents.insert(est.name(p).to_string());
                    }
                }
            }
        }
        for p in &parents {
            let t = truth.sem().coeff_by_name(p, outcome).unwrap_or(None).unwrap_or(0.0);
            let e = match e_out {
                Some(_) => estimated.coeff_by_name(p, outcome).unwrap_or(None).unwrap_or(0.0),
                None => 0.0,
            };
            sq += (e - t).powi(2);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { (sq / count as f64).sqrt() })
}

/// `1 - (1 - R^2)(s - 1)/(s - q - 1)`.
pub fn adjusted_r2(r2: f64, s: usize, q: usize) -> f64 {
    1.0 - (1.0 - r2) * (s as f64 - 1.0) / (s as f64 - q as f64 - 1.0)
}

/// Adjusted R² of each named true latent regressed (with intercept) on all
/// columns of `scores`.
pub fn latent_r2(true_latents: &[(String, DVector<f64>)], scores: &DMatrix<f64>) -> Result<BTreeMap<String, f64>> {
    let (s, q) = scores.shape();
    if q == 0 {
        return Err(Error::DegenerateInput("no latent score columns".into()));
    }
    if s <= q + 1 {
        return Err(Error::DegenerateInput(format!("{s} samples for {q} score columns")));
    }
    let xs: Vec<_> = (0..q).map(|k| scores.column(k)).collect();
    let mut out = BTreeMap::new();
    for (name, u) in true_latents {
        if u.len() != s {
            return Err(Error::ShapeMismatch { expected: s, found: u.len() });
        }
        let fit = ols(u.column(0), &xs).map_err(|e| {
            Error::DegenerateInput(match e {
                OlsFailure::ZeroVarianceResponse => format!("latent `{name}` is constant"),
                OlsFailure::RankDeficient => "latent score columns are collinear".to_string(),
            })
        })?;
        out.insert(name.clone(), adjusted_r2(fit.r_squared(), s, q));
    }
    Ok(out)
}

/// Variance inflation factor `1 / (1 - rho^2)` of `target` among `parents`,
/// where `rho^2` is the R² of `target` on the other parents. A singleton set
/// gives 1. Perfect collinearity, or a constant target, gives `+inf`.
pub fn vif(columns: &BTreeMap<String, DVector<f64>>, parents: &[&str], target: &str) -> Result<f64> {
    if !parents.contains(&target) {
        return Err(Error::InvalidConfig(format!("`{target}` is not in the parent set")));
    }
    let get = |n: &str| columns.get(n).ok_or_else(|| Error::UnknownNode(n.to_string()));
    let y = get(target)?;
    let others = parents
        .iter()
        .filter(|&&p| p != target)
        .map(|p| get(p).map(|c| c.column(0)))
        .collect::<Result<Vec<_>>>()?;
    if others.is_empty() {
        return Ok(1.0);
    }
    match ols(y.column(0), &others) {
        Ok(fit) => {
            let r2 = fit.r_squared();
            Ok(if r2 >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - r2) })
        }
        Err(_) => Ok(f64::INFINITY),
    }
}

/// Outcome of the improvement-cap check for one outcome node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapRecord {
    /// Outcome BIC in the confounded graph minus outcome BIC in the final graph.
    pub lhs: f64,
    /// `|X \ W| - |U|`.
    pub k: i64,
    /// `k * ln(s)`.
    pub bound: f64,
    pub satisfied: bool,
}

/// Checks `lhs <= k ln(s)`.
pub fn cap_check(lhs: f64, k: i64, s: usize) -> CapRecord {
    let bound = k as f64 * (s as f64).ln();
    CapRecord {
        lhs,
        k,
        bound,
        satisfied: lhs <= bound,
    }
}

/// Cap on the BIC improvement of `outcome`'s local model from modeling the
/// latent space. `X` is the set of observed children of the true latents
/// other than the outcome, `W` the outcome's parents in the confounded graph,
/// and `|U|` the number of true latents that are parents of the outcome.
/// Both graphs must share their observed node set.
pub fn improvement_cap(confounded: &ScoredGraph, final_graph: &ScoredGraph, truth: &GroundTruth, outcome: &str) -> Result<CapRecord> {
    let observed = |d: &Dag| -> BTreeSet<String> {
        (0..d.n_nodes())
            .filter(|&i| d.role(i) != Role::LatentEstimate)
            .map(|i| d.name(i).to_string())
            .collect()
    };
    if confounded.n_samples != final_graph.n_samples || observed(confounded.dag()) != observed(final_graph.dag()) {
        return Err(Error::NonComparableScores);
    }
    let b_c = confounded.node_bic[confounded.dag().index_of(outcome)?];
    let b_f = final_graph.node_bic[final_graph.dag().index_of(outcome)?];
    let tdag = truth.dag();
    let t_out = tdag.index_of(outcome)?;
    let mut x: BTreeSet<&str> = BTreeSet::new();
    for l in truth.latent_names() {
        for &c in tdag.children(tdag.index_of(l)?) {
            if c != t_out && tdag.role(c) != Role::Latent {
                x.insert(tdag.name(c));
            }
        }
    }
    let w = confounded.dag().markov_parents(outcome)?;
    let x_minus_w = x.iter().filter(|n| !w.contains(**n)).count() as i64;
    let u = tdag.parents(t_out).iter().filter(|&&p| tdag.role(p) == Role::Latent).count() as i64;
    Ok(cap_check(b_c - b_f, x_minus_w - u, confounded.n_samples))
}

/// Edge-set comparison between an estimate and the truth over the observed
/// nodes (true latents and latent estimates are dropped first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralMetrics {
    pub true_positive: Vec<(String, String)>,
    pub false_positive: Vec<(String, String)>,
    pub false_negative: Vec<(String, String)>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub skeleton_precision: f64,
    pub skeleton_recall: f64,
    pub skeleton_f1: f64,
}

fn prf(tp: usize, n_est: usize, n_true: usize) -> (f64, f64, f64) {
    let p = if n_est == 0 { 1.0 } else { tp as f64 / n_est as f64 };
    let r = if n_true == 0 { 1.0 } else { tp as f64 / n_true as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn observed_edges(d: &Dag) -> (BTreeSet<String>, BTreeSet<(String, String)>) {
    let hidden = |i: usize| matches!(d.role(i), Role::Latent | Role::LatentEstimate);
    let nodes = (0..d.n_nodes()).filter(|&i| !hidden(i)).map(|i| d.name(i).to_string()).collect();
    let edges = d
        .edges()
        .into_iter()
        .filter(|&(f, t)| !hidden(f) && !hidden(t))
        .map(|(f, t)| (d.name(f).to_string(), d.name(t).to_string()))
        .collect();
    (nodes, edges)
}

fn undirected(edges: &BTreeSet<(String, String)>) -> BTreeSet<(String, String)> {
    edges
        .iter()
        .map(|(a, b)| if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) })
        .collect()
}

/// Directed and skeleton precision, recall and F1. An empty estimate has
/// precision 1; an empty truth has recall 1.
pub fn structural_metrics(estimated: &Dag, truth: &Dag) -> Result<StructuralMetrics> {
    let (en, ee) = observed_edges(estimated);
    let (tn, te) = observed_edges(truth);
    if en != tn {
        let diff: Vec<_> = en.symmetric_difference(&tn).cloned().collect();
        return Err(Error::NodeSetMismatch(diff.join(", ")));
    }
    let tp: Vec<_> = ee.intersection(&te).cloned().collect();
    let fp: Vec<_> = ee.difference(&te).cloned().collect();
    let fneg: Vec<_> = te.difference(&ee).cloned().collect();
    let (precision, recall, f1) = prf(tp.len(), ee.len(), te.len());
    let (es, ts) = (undirected(&ee), undirected(&te));
    let stp = es.intersection(&ts).count();
    let (skeleton_precision, skeleton_recall, skeleton_f1) = prf(stp, es.len(), ts.len());
    Ok(StructuralMetrics {
        true_positive: tp,
        false_positive: fp,
        false_negative: fneg,
        precision,
        recall,
        f1,
        skeleton_precision,
        skeleton_recall,
        skeleton_f1,
    })
}

/// Observed parents of `outcome` in `estimated` that are not its true parents.
pub fn spurious_parents(estimated: &Dag, truth: &Dag, outcome: &str) -> Result<Vec<String>> {
    let truth_parents = truth.markov_parents(outcome)?;
    let j = estimated.index_of(outcome)?;
    Ok(estimated
        .parents(j)
        .iter()
        .filter(|&&p| estimated.role(p) != Role::LatentEstimate)
        .map(|&p| estimated.name(p).to_string())
        .filter(|p| !truth_parents.contains(p))
        .collect())
}

/// Locally weighted linear regression with tricube weights over the nearest
/// `ceil(span * n)` points, evaluated at every `x`.
pub fn loess(x: &[f64], y: &[f64], span: f64) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len(), "loess needs paired data");
    if n == 0 {
        return Vec::new();
    }
    let k = ((span * n as f64).ceil() as usize).clamp(2.min(n), n);
    x.iter()
        .map(|&x0| {
            let mut d: Vec<f64> = x.iter().map(|xi| (xi - x0).abs()).collect();
            let mut sorted = d.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let h = sorted[k - 1].max(f64::MIN_POSITIVE) * 1.000_001;
            for v in d.iter_mut() {
                let u = *v / h;
                *v = if u < 1.0 { (1.0 - u.powi(3)).powi(3) } else { 0.0 };
            }
            let sw: f64 = d.iter().sum();
            let mx = d.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() / sw;
            let my = d.iter().zip(y).map(|(w, yi)| w * yi).sum::<f64>() / sw;
            let sxx: f64 = d.iter().zip(x).map(|(w, xi)| w * (xi - mx).powi(2)).sum();
            let sxy: f64 = d.iter().zip(x).zip(y).map(|((w, xi), yi)| w * (xi - mx) * (yi - my)).sum();
            if sxx <= 1e-12 * sw {
                my
            } else {
                my + sxy / sxx * (x0 - mx)
            }
        })
        .collect()
}

/// Ground truth, optionally with the complete simulated table holding the
/// true latent columns (needed for latent R²).
#[derive(Debug, Clone, Copy)]
pub struct TruthContext<'a> {
    pub truth: &'a GroundTruth,
    pub full_data: Option<&'a DataMatrix>,
}

impl TruthContext<'_> {
    fn latent_columns(&self) -> Result<Option<Vec<(String, DVector<f64>)>>> {
        let Some(full) = self.full_data else {
            return Ok(None);
        };
        self.truth
            .latent_names()
            .iter()
            .map(|n| Ok((n.clone(), full.column_by_name(n)?.into_owned())))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Written in place of the cap records when no truth is available.
pub const NOT_EVALUABLE: &str = "not evaluable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapStatus {
    /// One record per outcome.
    Evaluated(BTreeMap<String, CapRecord>),
    NotEvaluable(String),
}

/// Summary of a finished run. Truth-dependent fields are absent without a truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bic_baseline: f64,
    pub bic_final: f64,
    pub q: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coef_rmse_all: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coef_rmse_drivers: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub latent_r2: BTreeMap<String, f64>,
    /// Outcome, then parent, to VIF in the final graph; `None` stands for `+inf`.
    pub vif: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    pub cap: CapStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructuralMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spurious_parents: Option<BTreeMap<String, Vec<String>>>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// VIF of every parent of every outcome of `graph`, from the columns of `data`.
pub fn outcome_vifs(data: &DataMatrix, graph: &ScoredGraph) -> Result<BTreeMap<String, BTreeMap<String, Option<f64>>>> {
    let dag = graph.dag();
    let mut out = BTreeMap::new();
    for j in (0..dag.n_nodes()).filter(|&j| dag.role(j) == Role::Outcome) {
        let parents: Vec<&str> = dag.parents(j).iter().map(|&p| dag.name(p)).collect();
        let columns: BTreeMap<String, DVector<f64>> = parents
            .iter()
            .map(|&p| Ok((p.to_string(), data.column_by_name(p)?.into_owned())))
            .collect::<Result<_>>()?;
        let mut per = BTreeMap::new();
        for &p in &parents {
            per.insert(p.to_string(), finite(vif(&columns, &parents, p)?));
        }
        out.insert(dag.name(j).to_string(), per);
    }
    Ok(out)
}

/// Builds the report for a run whose baseline and final graphs are given.
/// `data` is the table the final graph was learned on; `scores` are the
/// latent columns in it, if any.
pub fn metrics_report(
    data: &DataMatrix,
    baseline: &ScoredGraph,
    final_graph: &ScoredGraph,
    scores: Option<&DMatrix<f64>>,
    truth: Option<TruthContext>,
) -> Result<MetricsReport> {
    let observed_bic = |g: &ScoredGraph| -> f64 {
        (0..g.dag().n_nodes())
            .filter(|&i| g.dag().role(i) != Role::LatentEstimate)
            .map(|i| g.node_bic[i])
            .sum()
    };
    let q = scores.map_or(0, |s| s.ncols());
    let mut report = MetricsReport {
        bic_baseline: observed_bic(baseline),
        bic_final: observed_bic(final_graph),
        q,
        coef_rmse_all: None,
        coef_rmse_drivers: None,
        latent_r2: BTreeMap::new(),
        vif: outcome_vifs(data, final_graph)?,
        cap: CapStatus::NotEvaluable(NOT_EVALUABLE.into()),
        structure: None,
        spurious_parents: None,
    };
    let Some(ctx) = truth else {
        return Ok(report);
    };
    let t = ctx.truth;
    report.coef_rmse_all = Some(coefficient_rmse(&final_graph.sem, t, RmseScope::AllIntoOutcomes)?);
    report.coef_rmse_drivers = Some(coefficient_rmse(&final_graph.sem, t, RmseScope::TrueDrivers)?);
    if let (Some(s), Some(cols)) = (scores.filter(|s| s.ncols() > 0), ctx.latent_columns()?) {
        report.latent_r2 = latent_r2(&cols, s)?;
    }
    let mut caps = BTreeMap::new();
    let mut spurious = BTreeMap::new();
    for o in t.outcome_names() {
        caps.insert(o.clone(), improvement_cap(baseline, final_graph, t, o)?);
        spurious.insert(o.clone(), spurious_parents(final_graph.dag(), t.dag(), o)?);
    }
    report.cap = CapStatus::Evaluated(caps);
    report.spurious_parents = Some(spurious);
    report.structure = Some(structural_metrics(final_graph.dag(), t.dag())?);
    Ok(report)
}

impl MetricsReport {
    /// Header and values of the flat single-row CSV form.
    pub fn csv_row(&self) -> (Vec<String>, Vec<String>) {
        let num = |v: f64| if v.is_finite() { format_f64(v) } else { "inf".to_string() };
        let mut cols: Vec<(String, String)> = vec![
            ("bic_baseline".into(), num(self.bic_baseline)),
            ("bic_final".into(), num(self.bic_final)),
            ("q".into(), self.q.to_string()),
        ];
        if let Some(v) = self.coef_rmse_all {
            cols.push(("coef_rmse_all".into(), num(v)));
        }
        if let Some(v) = self.coef_rmse_drivers {
            cols.push(("coef_rmse_drivers".into(), num(v)));
        }
        for (k, v) in &self.latent_r2 {
            cols.push((format!("latent_r2_{k}"), num(*v)));
        }
        for (o, per) in &self.vif {
            let vals: Vec<f64> = per.values().map(|v| v.unwrap_or(f64::INFINITY)).collect();
            let mean = if vals.is_empty() { 1.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
            cols.push((format!("mean_vif_{o}"), num(mean)));
        }
        match &self.cap {
            CapStatus::Evaluated(caps) => {
                for (o, c) in caps {
                    cols.push((format!("cap_lhs_{o}"), num(c.lhs)));
                    cols.push((format!("cap_bound_{o}"), num(c.bound)));
                    cols.push((format!("cap_satisfied_{o}"), c.satisfied.to_string()));
                }
            }
            CapStatus::NotEvaluable(s) => cols.push(("cap".into(), s.clone())),
        }
        if let Some(st) = &self.structure {
            cols.push(("skeleton_f1".into(), num(st.skeleton_f1)));
            cols.push(("false_positive_edges".into(), st.false_positive.len().to_string()));
        }
        for (o, p) in self.spurious_parents.iter().flatten() {
            cols.push((format!("spurious_parents_{o}"), p.len().to_string()));
        }
        cols.into_iter().unzip()
    }
}

/// One `(iteration, metric, value)` row of the plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
}

/// Per-iteration curves: score, dimensionality, edge count and, with a
/// truth, coefficient errors, latent R² and spurious outcome parents.
pub fn iteration_metrics(
    iteration: usize,
    score: f64,
    graph: &ScoredGraph,
    scores: Option<&DMatrix<f64>>,
    truth: Option<TruthContext>,
) -> Result<Vec<PlotRow>> {
    let mut rows = Vec::new();
    let mut push = |metric: String, value: f64| rows.push(PlotRow { iteration, metric, value });
    push("bic".into(), score);
    push("q".into(), scores.map_or(0, |s| s.ncols()) as f64);
    push("edge_count".into(), graph.dag().n_edges() as f64);
    if let Some(ctx) = truth {
        push("coef_rmse_all".into(), coefficient_rmse(&graph.sem, ctx.truth, RmseScope::AllIntoOutcomes)?);
        push("coef_rmse_drivers".into(), coefficient_rmse(&graph.sem, ctx.truth, RmseScope::TrueDrivers)?);
        if let (Some(s), Some(cols)) = (scores.filter(|s| s.ncols() > 0), ctx.latent_columns()?) {
            for (k, v) in latent_r2(&cols, s)? {
                push(format!("latent_r2_{k}"), v);
            }
        }
        for o in ctx.truth.outcome_names() {
            let n = spurious_parents(graph.dag(), ctx.truth.dag(), o)?.len();
            push(format!("spurious_parents_{o}"), n as f64);
        }
    }
    Ok(rows)
}
