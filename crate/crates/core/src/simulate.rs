//! Synthetic data from linear-Gaussian SEMs with hidden confounders.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnMeta, DataMatrix};
use crate::error::{Error, Result};
use crate::graph::{Dag, Role};
use crate::rng;
use crate::sem::{LinearSem, NodeDocument, EdgeDocument, NodeParams, SemDocument};

/// Data-generating model including its latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    sem: LinearSem,
    latent_names: Vec<String>,
    outcome_names: Vec<String>,
}

impl GroundTruth {
    /// Latents and outcomes are read from the node roles of `sem`.
    pub fn new(sem: LinearSem) -> Result<Self> {
        let dag = sem.dag();
        let mut latent_names = Vec::new();
        let mut outcome_names = Vec::new();
        for i in 0..dag.n_nodes() {
            match dag.role(i) {
                Role::Latent => {
                    if dag.children(i).len() < 2 {
                        return Err(Error::InvalidConfig(format!(
                            "latent `{}` needs at least two children",
                            dag.name(i)
                        )));
                    }
                    latent_names.push(dag.name(i).to_string());
                }
                Role::Outcome => outcome_names.push(dag.name(i).to_string()),
                _ => {}
            }
        }
        Ok(Self {
            sem,
            latent_names,
            outcome_names,
        })
    }

    pub fn sem(&self) -> &LinearSem {
        &self.sem
    }

    pub fn dag(&self) -> &Dag {
        self.sem.dag()
    }

    pub fn latent_names(&self) -> &[String] {
        &self.latent_names
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn is_latent(&self, node: usize) -> bool {
        self.dag().role(node) == Role::Latent
    }

    /// Model-implied covariance `(I - B)^-T diag(sd^2) (I - B)^-1` in node order,
    /// where `B[p, c]` is the coefficient of `p -> c`.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let t = self.total_effects();
        let n = t.nrows();
        let d = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.sem.params(i).noise_sd.powi(2)
            } else {
                0.0
            }
        });
        t.transpose() * d * t
    }

    /// `T[i, j]`: total causal effect of node i on node j (identity on the diagonal).
    pub fn total_effects(&self) -> DMatrix<f64> {
        let n = self.dag().n_nodes();
        let mut t = DMatrix::identity(n, n);
        for &j in &self.dag().topological_order() {
            for (k, &p) in self.dag().parents(j).iter().enumerate() {
                let c = self.sem.params(j).coeffs[k];
                for i in 0..n {
                    t[(i, j)] += t[(i, p)] * c;
                }
            }
        }
        t
    }

    pub fn to_document(&self, seed: u64) -> TruthDocument {
        let SemDocument { nodes, edges } = self.sem.to_document(None);
        TruthDocument {
            seed,
            latent_names: self.latent_names.clone(),
            outcome_names: self.outcome_names.clone(),
            nodes,
            edges,
        }
    }

    pub fn from_document(doc: &TruthDocument) -> Result<Self> {
        let sem = LinearSem::from_document(&SemDocument {
            nodes: doc.nodes.clone(),
            edges: doc.edges.clone(),
        })?;
        Self::new(sem)
    }

    pub fn read_json(path: &Path) -> Result<(Self, u64)> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let doc: TruthDocument = serde_json::from_str(&text)?;
        Ok((Self::from_document(&doc)?, doc.seed))
    }
}

/// On-disk form of a [`GroundTruth`] (`truth.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub seed: u64,
    pub latent_names: Vec<String>,
    pub outcome_names: Vec<String>,
    pub nodes: Vec<NodeDocument>,
    pub edges: Vec<EdgeDocument>,
}

#[derive(Debug, Clone)]
pub struct SimBundle {
    pub full_data: DataMatrix,
    pub observed_data: DataMatrix,
    pub truth: GroundTruth,
    pub seed: u64,
}

impl SimBundle {
    /// Writes `observed.csv`, `full.csv` and `truth.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.observed_data
            .write_csv(std::fs::File::create(dir.join("observed.csv"))?)?;
        self.full_data.write_csv(std::fs::File::create(dir.join("full.csv"))?)?;
        let json = serde_json::to_string_pretty(&self.truth.to_document(self.seed))?;
        std::fs::write(dir.join("truth.json"), json + "\n")?;
        Ok(())
    }
}

/// Ancestral sampling of every node of `truth`. Each node draws its noise
/// from its own stream, so a column never depends on which other columns exist.
pub fn sample_sem(truth: &GroundTruth, n_samples: usize, seed: u64) -> Result<SimBundle> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let dag = truth.dag();
    let n = dag.n_nodes();
    let mut values = DMatrix::zeros(n_samples, n);
    for &j in &dag.topological_order() {
        let p = truth.sem.params(j);
        let mut rng = rng::stream(seed, "sample-node", j as u64);
        for i in 0..n_samples {
            let mut v = p.intercept;
            for (k, &parent) in dag.parents(j).iter().enumerate() {
                v += p.coeffs[k] * values[(i, parent)];
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(i, j)] = v + p.noise_sd * z;
        }
    }
    let columns: Vec<ColumnMeta> = (0..n)
        .map(|j| ColumnMeta::continuous(dag.name(j), dag.role(j)))
        .collect();
    let full_data = DataMatrix::new(columns, values)?;
    let latents: Vec<&str> = truth.latent_names.iter().map(String::as_str).collect();
    let observed_data = full_data.drop_columns(&latents)?;
    Ok(SimBundle {
        full_data,
        observed_data,
        truth: truth.clone(),
        seed,
    })
}

fn signed_coeff(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.5..=1.5);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Smallest total effect allowed between an ancestor and a descendant.
const MIN_TOTAL_EFFECT: f64 = 0.3;

fn is_faithful(truth: &GroundTruth) -> bool {
    let dag = truth.dag();
    let t = truth.total_effects();
    let n = dag.n_nodes();
    (0..n).all(|i| (0..n).all(|j| i == j || !dag.reaches(i, j) || t[(i, j)].abs() >= MIN_TOTAL_EFFECT))
}

/// Shape of the benchmark network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDesign {
    /// Children of each latent besides `V1`, `V2` and `Z`.
    pub children_per_latent: usize,
    /// Noise sd of those children.
    pub child_noise_sd: f64,
    /// Noise sd of `V1` and `V2`.
    pub driver_noise_sd: f64,
    /// Noise sd of `Z`. The latents have sd 1.
    pub outcome_noise_sd: f64,
}

impl Default for BenchmarkDesign {
    fn default() -> Self {
        Self {
            children_per_latent: 20,
            child_noise_sd: 1.0,
            driver_noise_sd: 1.0,
            outcome_noise_sd: 1.0,
        }
    }
}

/// Ground truth of the benchmark network: outcome `Z` driven by `V1` and `V2`,
/// latent confounders `U1` and `U2` pointing at `V1`, `V2`, `Z` and at their
/// own blocks of observed children (`A1..` for `U1`, `B1..` for `U2`) that do
/// not affect `Z`. Two edges inside each block make the observed part
/// non-trivial. Coefficients are drawn from `±[0.5, 1.5]` and redrawn until no
/// ancestor's total effect on a descendant falls below 0.3.
pub fn benchmark_truth(design: &BenchmarkDesign, seed: u64) -> Result<GroundTruth> {
    if design.children_per_latent < 4 {
        return Err(Error::InvalidConfig("benchmark latents need at least 4 extra children".into()));
    }
    for sd in [design.child_noise_sd, design.driver_noise_sd, design.outcome_noise_sd] {
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::InvalidConfig(format!("noise sd {sd} must be positive")));
        }
    }
    let mut nodes: Vec<(String, Role)> = vec![
        ("U1".into(), Role::Latent),
        ("U2".into(), Role::Latent),
        ("V1".into(), Role::Predictor),
        ("V2".into(), Role::Predictor),
    ];
    for block in ["A", "B"] {
        for k in 1..=design.children_per_latent {
            nodes.push((format!("{block}{k}"), Role::Predictor));
        }
    }
    nodes.push(("Z".into(), Role::Outcome));
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut edge = |f: &str, t: &str| edges.push((f.to_string(), t.to_string()));
    for (u, block) in [("U1", "A"), ("U2", "B")] {
        for t in ["V1", "V2", "Z"] {
            edge(u, t);
        }
        for k in 1..=design.children_per_latent {
            edge(u, &format!("{block}{k}"));
        }
        edge(&format!("{block}1"), &format!("{block}2"));
        edge(&format!("{block}3"), &format!("{block}4"));
    }
    edge("V1", "Z");
    edge("V2", "Z");
    let dag = Dag::new(nodes, &edges)?;
    let mut rng = rng::stream(seed, "benchmark-coefficients", 0);
    loop {
        let params = (0..dag.n_nodes())
            .map(|j| NodeParams {
                intercept: 0.0,
                coeffs: dag.parents(j).iter().map(|_| signed_coeff(&mut rng)).collect(),
                noise_sd: match dag.name(j).as_bytes()[0] {
                    b'A' | b'B' => design.child_noise_sd,
                    b'V' => design.driver_noise_sd,
                    b'Z' => design.outcome_noise_sd,
                    _ => 1.0,
                },
            })
            .collect();
        let truth = GroundTruth::new(LinearSem::new(dag.clone(), params)?)?;
        if is_faithful(&truth) {
            return Ok(truth);
        }
    }
}

/// Benchmark network with the default design, sampled at `n_samples` rows.
pub fn paper_benchmark(n_samples: usize, seed: u64) -> Result<SimBundle> {
    benchmark_with(&BenchmarkDesign::default(), n_samples, seed)
}

pub fn benchmark_with(design: &BenchmarkDesign, n_samples: usize, seed: u64) -> Result<SimBundle> {
    sample_sem(&benchmark_truth(design, seed)?, n_samples, seed)
}

/// Random DAG over observed nodes `X1..Xn` plus latent sources `L1..Lk`
/// (listed first), each latent pointing at `children_per_latent` distinct
/// observed nodes. Observed edges follow a random ordering and are present
/// with probability `edge_density`. There are no outcome nodes.
pub fn random_pleiotropic_truth(
    n_observed: usize,
    n_latent: usize,
    children_per_latent: usize,
    edge_density: f64,
    seed: u64,
) -> Result<GroundTruth> {
    if n_observed == 0 {
        return Err(Error::InvalidConfig("need at least one observed node".into()));
    }
    if children_per_latent < 2 {
        return Err(Error::InvalidConfig("every latent needs at least two children".into()));
    }
    if children_per_latent > n_observed {
        return Err(Error::InvalidConfig(format!(
            "{children_per_latent} children per latent but only {n_observed} observed nodes"
        )));
    }
    if !(0.0..=1.0).contains(&edge_density) {
        return Err(Error::InvalidConfig(format!("edge density {edge_density} outside [0, 1]")));
    }
    let mut rng = rng::stream(seed, "random-truth", 0);
    let mut names = Vec::with_capacity(n_latent + n_observed);
    let mut roles = Vec::with_capacity(n_latent + n_observed);
    for k in 1..=n_latent {
        names.push(format!("L{k}"));
        roles.push(Role::Latent);
    }
    for k in 1..=n_observed {
        names.push(format!("X{k}"));
        roles.push(Role::Predictor);
    }
    let mut order: Vec<usize> = (n_latent..n_latent + n_observed).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut edges = Vec::new();
    for a in 0..order.len() {
        for b in (a + 1)..order.len() {
            if rng.random_bool(edge_density) {
                edges.push((order[a], order[b]));
            }
        }
    }
    for l in 0..n_latent {
        let picks = rand::seq::index::sample(&mut rng, n_observed, children_per_latent);
        let mut picks: Vec<usize> = picks.into_iter().map(|c| c + n_latent).collect();
        picks.sort_unstable();
        edges.extend(picks.into_iter().map(|c| (l, c)));
    }
    let dag = Dag::from_indices(names, roles, edges)?;
    let params = (0..dag.n_nodes())
        .map(|j| NodeParams {
            intercept: 0.0,
            coeffs: dag.parents(j).iter().map(|_| signed_coeff(&mut rng)).collect(),
            noise_sd: rng.random_range(0.5..=1.5),
        })
        .collect();
    GroundTruth::new(LinearSem::new(dag, params)?)
}
