//! On-disk artifact formats: graph JSON and DOT, coefficient and frequency
//! tables, latent scores and loadings, and the roles sidecar.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, read_numeric_csv, write_numeric_csv, ColumnKind, ColumnMeta, DataMatrix};
use crate::error::{Error, Result};
use crate::graph::{Dag, Role};
use crate::latent::{standardized_scores, LatentEstimate};
use crate::search::{EnsembleGraph, ScoredGraph};
use crate::sem::{LinearSem, NodeParams};
use crate::simulate::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub kind: ColumnKind,
    pub intercept: f64,
    pub noise_sd: f64,
    /// Local BIC of the node under the full-data fit.
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    /// Least-squares coefficient on the full table.
    pub coeff: f64,
    /// Mean coefficient over the bootstrap replicates containing this edge.
    pub averaged_coeff: f64,
    /// Fraction of replicates containing the edge in either orientation.
    pub frequency: f64,
}

/// `graph.json`: a consensus graph with its full-data fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n_samples: usize,
    pub bic_total: f64,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl GraphDocument {
    pub fn new(ensemble: &EnsembleGraph, fitted: &ScoredGraph, kinds: &[ColumnKind]) -> Result<Self> {
        let dag = fitted.dag();
        if dag.names() != ensemble.names() || kinds.len() != dag.n_nodes() {
            return Err(Error::NodeSetMismatch("ensemble and fit disagree on columns".into()));
        }
        let nodes = (0..dag.n_nodes())
            .map(|i| {
                let p = fitted.sem.params(i);
                GraphNode {
                    name: dag.name(i).to_string(),
                    role: dag.role(i),
                    kind: kinds[i],
                    intercept: p.intercept,
                    noise_sd: p.noise_sd,
                    bic: fitted.node_bic[i],
                }
            })
            .collect();
        let edges = dag
            .edges()
            .into_iter()
            .map(|(f, t)| GraphEdge {
                from: dag.name(f).to_string(),
                to: dag.name(t).to_string(),
                coeff: fitted.sem.coeff(f, t).unwrap(),
                averaged_coeff: ensemble.averaged_sem().coeff(f, t).unwrap(),
                frequency: ensemble.edge_frequency(f, t),
            })
            .collect();
        Ok(Self {
            n_samples: fitted.n_samples,
            bic_total: fitted.bic_total,
            nodes,
            edges,
        })
    }

    fn dag(&self) -> Result<Dag> {
        let nodes = self.nodes.iter().map(|n| (n.name.clone(), n.role)).collect();
        let pairs: Vec<(&str, &str)> = self.edges.iter().map(|e| (e.from.as_str(), e.to.as_str())).collect();
        Dag::new(nodes, &pairs)
    }

    fn sem_with(&self, coeff: impl Fn(&GraphEdge) -> f64) -> Result<LinearSem> {
        let dag = self.dag()?;
        let mut params: Vec<NodeParams> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeParams {
                intercept: n.intercept,
                coeffs: vec![0.0; dag.parents(i).len()],
                noise_sd: n.noise_sd,
            })
            .collect();
        for e in &self.edges {
            let (f, t) = (dag.index_of(&e.from)?, dag.index_of(&e.to)?);
            let k = dag.parents(t).iter().position(|&p| p == f).unwrap();
            params[t].coeffs[k] = coeff(e);
        }
        LinearSem::new(dag, params)
    }

    /// The full-data fit as a scored graph.
    pub fn scored(&self) -> Result<ScoredGraph> {
        Ok(ScoredGraph {
            sem: self.sem_with(|e| e.coeff)?,
            node_bic: self.nodes.iter().map(|n| n.bic).collect(),
            bic_total: self.bic_total,
            n_samples: self.n_samples,
            climb_traces: Vec::new(),
        })
    }

    /// The same graph carrying the bootstrap-averaged coefficients.
    pub fn averaged_sem(&self) -> Result<LinearSem> {
        self.sem_with(|e| e.averaged_coeff)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn fill_color(role: Role) -> &'static str {
    match role {
        Role::Predictor => "white",
        Role::Outcome => "gold",
        Role::LatentEstimate => "lightblue",
        Role::Latent => "lightpink",
    }
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering. Edge width grows with bootstrap frequency and labels
/// carry the full-data coefficient. Given a truth, edges into an outcome from
/// one of its true parents are drawn red.
pub fn graph_dot(doc: &GraphDocument, truth: Option<&GroundTruth>) -> String {
    let drivers: BTreeSet<(String, String)> = truth
        .map(|t| {
            let d = t.dag();
            d.edges()
                .into_iter()
                .filter(|&(_, to)| d.role(to) == Role::Outcome)
                .map(|(f, to)| (d.name(f).to_string(), d.name(to).to_string()))
                .collect()
        })
        .unwrap_or_default();
    let mut out = String::from("digraph G {\n  node [style=filled, fontname=\"Helvetica\"];\n");
    for n in &doc.nodes {
        let shape = if n.role == Role::LatentEstimate { "ellipse" } else { "box" };
        let _ = writeln!(
            out,
            "  {} [shape={shape}, fillcolor={}];",
            dot_id(&n.name),
            fill_color(n.role)
        );
    }
    for e in &doc.edges {
        let color = if drivers.contains(&(e.from.clone(), e.to.clone())) { "red" } else { "black" };
        let _ = writeln!(
            out,
            "  {} -> {} [label=\"{:.2}\", penwidth={:.2}, color={color}];",
            dot_id(&e.from),
            dot_id(&e.to),
            e.coeff,
            0.5 + 4.5 * e.frequency
        );
    }
    out.push_str("}\n");
    out
}

/// `coefficients.csv`: one row per consensus edge.
pub fn write_coefficients_csv<W: Write>(writer: W, doc: &GraphDocument) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["from", "to", "coeff", "averaged_coeff", "frequency"])
        .map_err(csv_io)?;
    for e in &doc.edges {
        w.write_record([
            e.from.clone(),
            e.to.clone(),
            format_f64(e.coeff),
            format_f64(e.averaged_coeff),
            format_f64(e.frequency),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// `edge_frequencies.csv`: every directed edge seen in at least one replicate.
pub fn write_edge_frequencies_csv<W: Write>(writer: W, ensemble: &EnsembleGraph) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["from", "to", "directed_frequency", "frequency", "in_consensus"])
        .map_err(csv_io)?;
    let names = ensemble.names();
    let consensus = ensemble.consensus_dag();
    for f in 0..names.len() {
        for t in 0..names.len() {
            let d = ensemble.directed_frequency(f, t);
            if d > 0.0 {
                w.write_record([
                    names[f].clone(),
                    names[t].clone(),
                    format_f64(d),
                    format_f64(ensemble.edge_frequency(f, t)),
                    consensus.contains_edge(f, t).to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::InvalidData(format!("{other:?}")),
    }
}

pub fn write_matrix_csv(path: &Path, names: &[String], values: &DMatrix<f64>) -> Result<()> {
    write_numeric_csv(std::fs::File::create(path)?, names, values)
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_numeric_csv(std::io::BufReader::new(f))
}

/// Writes `latents.csv` (standardized scores, as appended to the table),
/// `loadings.csv` and `eigen.json` into `dir`.
pub fn write_latents(dir: &Path, latents: &LatentEstimate) -> Result<()> {
    let names = latents.column_names();
    write_matrix_csv(&dir.join("latents.csv"), &names, &standardized_scores(latents)?)?;
    let mut header = vec!["residual".to_string()];
    header.extend(names);
    let mut w = csv::Writer::from_writer(std::fs::File::create(dir.join("loadings.csv"))?);
    w.write_record(&header).map_err(csv_io)?;
    for (i, r) in latents.residual_names.iter().enumerate() {
        let mut row = vec![r.clone()];
        row.extend((0..latents.q).map(|k| format_f64(latents.loadings[(i, k)])));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    write_json(&dir.join("eigen.json"), &latents.report())
}

/// Roles sidecar: `{"columns": [{"name", "role", "kind"}, ...]}`. A
/// `truth.json` is accepted too; its latent nodes are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolesDocument {
    pub columns: Vec<ColumnMeta>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RolesInput {
    Columns(RolesDocument),
    Truth { nodes: Vec<ColumnMeta> },
}

impl RolesDocument {
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let parsed: RolesInput = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("roles file {}: {e}", path.display())))?;
        Ok(match parsed {
            RolesInput::Columns(doc) => doc,
            RolesInput::Truth { nodes } => RolesDocument {
                columns: nodes.into_iter().filter(|c| c.role != Role::Latent).collect(),
            },
        })
    }

    /// Applies the declared metadata to `data`. Every declared column must
    /// exist, and only observed roles may be declared.
    pub fn apply(&self, data: &DataMatrix) -> Result<DataMatrix> {
        for c in &self.columns {
            if data.index_of(&c.name).is_err() {
                return Err(Error::InvalidConfig(format!("roles file names unknown column `{}`", c.name)));
            }
            if !matches!(c.role, Role::Predictor | Role::Outcome) {
                return Err(Error::InvalidConfig(format!(
                    "column `{}` may only be a predictor or an outcome",
                    c.name
                )));
            }
        }
        data.with_metadata(&self.columns)
    }
}
