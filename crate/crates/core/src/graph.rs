//! Directed acyclic graphs over named variables.
//!
//! Nodes are addressed by index internally; the index order is the canonical
//! node order (it follows the column order of the data the graph describes)
//! and every iteration in this crate walks nodes in that order so that tie
//! breaking is reproducible.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a variable stands for in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Observed predictor.
    #[default]
    Predictor,
    /// Outcome of interest; always a sink.
    Outcome,
    /// Column reconstructed from residuals.
    LatentEstimate,
    /// True latent variable, only present in simulation ground truth.
    Latent,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Predictor => "predictor",
            Role::Outcome => "outcome",
            Role::LatentEstimate => "latent_estimate",
            Role::Latent => "latent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    roles: Vec<Role>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds a graph from named nodes and named edges.
    pub fn new<S: AsRef<str>>(nodes: Vec<(String, Role)>, edges: &[(S, S)]) -> Result<Self> {
        let index = build_index(nodes.iter().map(|(n, _)| n.as_str()))?;
        let mut idx_edges = Vec::with_capacity(edges.len());
        for (from, to) in edges {
            let f = *index
                .get(from.as_ref())
                .ok_or_else(|| Error::UnknownNode(from.as_ref().to_string()))?;
            let t = *index
                .get(to.as_ref())
                .ok_or_else(|| Error::UnknownNode(to.as_ref().to_string()))?;
            idx_edges.push((f, t));
        }
        let (names, roles) = nodes.into_iter().unzip();
        Self::from_indices(names, roles, idx_edges)
    }

    /// Builds a graph from node metadata and index-based edges.
    pub fn from_indices(
        names: Vec<String>,
        roles: Vec<Role>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        assert_eq!(names.len(), roles.len(), "one role per node");
        let index = build_index(names.iter().map(String::as_str))?;
        let n = names.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for (f, t) in edges {
            if f >= n {
                return Err(Error::UnknownNode(format!("#{f}")));
            }
            if t >= n {
                return Err(Error::UnknownNode(format!("#{t}")));
            }
            if f == t {
                return Err(Error::SelfLoop(names[f].clone()));
            }
            if !seen.insert((f, t)) {
                return Err(Error::DuplicateEdge(names[f].clone(), names[t].clone()));
            }
            if roles[f] == Role::Outcome {
                return Err(Error::OutcomeNotSink(names[f].clone()));
            }
            parents[t].push(f);
            children[f].push(t);
        }
        for p in parents.iter_mut().chain(children.iter_mut()) {
            p.sort_unstable();
        }
        if let Err(cycle) = toposort(&parents) {
            return Err(Error::CycleDetected(
                cycle.into_iter().map(|i| names[i].clone()).collect(),
            ));
        }
        Ok(Self {
            names,
            roles,
            index,
            parents,
            children,
        })
    }

    /// A graph with the given nodes and no edges.
    pub fn empty(names: Vec<String>, roles: Vec<Role>) -> Result<Self> {
        Self::from_indices(names, roles, std::iter::empty())
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn contains_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].binary_search(&from).is_ok()
    }

    pub fn n_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// All edges, sorted by (parent, child).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(t, ps)| ps.iter().map(move |&f| (f, t)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn named_edges(&self) -> Vec<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(f, t)| (self.names[f].clone(), self.names[t].clone()))
            .collect()
    }

    /// Parents-before-children ordering. Among ready nodes the lowest index
    /// goes first, so the result is unique for a given graph.
    pub fn topological_order(&self) -> Vec<usize> {
        toposort(&self.parents).expect("Dag is acyclic by construction")
    }

    pub fn topological_names(&self) -> Vec<&str> {
        self.topological_order()
            .into_iter()
            .map(|i| self.names[i].as_str())
            .collect()
    }

    /// Exact parent set of a named node.
    pub fn markov_parents(&self, node: &str) -> Result<BTreeSet<String>> {
        let i = self.index_of(node)?;
        Ok(self.parents[i].iter().map(|&p| self.names[p].clone()).collect())
    }

    /// Whether inserting `from -> to` would close a directed cycle.
    pub fn would_create_cycle(&self, from: &str, to: &str) -> Result<bool> {
        let f = self.index_of(from)?;
        let t = self.index_of(to)?;
        Ok(would_create_cycle(&self.children, f, t))
    }

    /// Whether `to` can be reached from `from` along directed edges.
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        reaches(&self.children, from, to, None)
    }

    /// Copy of this graph restricted to the nodes for which `keep` holds.
    pub fn induced(&self, keep: impl Fn(usize) -> bool) -> Dag {
        let kept: Vec<usize> = (0..self.n_nodes()).filter(|&i| keep(i)).collect();
        let mut remap = vec![usize::MAX; self.n_nodes()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .filter(|&(f, t)| remap[f] != usize::MAX && remap[t] != usize::MAX)
            .map(|(f, t)| (remap[f], remap[t]))
            .collect();
        Dag::from_indices(
            kept.iter().map(|&i| self.names[i].clone()).collect(),
            kept.iter().map(|&i| self.roles[i]).collect(),
            edges,
        )
        .expect("subgraph of a DAG is a DAG")
    }
}

fn build_index<'a>(names: impl Iterator<Item = &'a str>) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (i, n) in names.enumerate() {
        if index.insert(n.to_string(), i).is_some() {
            return Err(Error::DuplicateNode(n.to_string()));
        }
    }
    Ok(index)
}

/// Kahn's algorithm over a parent list. On failure returns the nodes of one
/// directed cycle, in edge order.
pub fn toposort(parents: &[Vec<usize>]) -> std::result::Result<Vec<usize>, Vec<usize>> {
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (t, ps) in parents.iter().enumerate() {
        for &f in ps {
            children[f].push(t);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Every leftover node has a leftover parent; walking parents must revisit a node.
    let start = (0..n).find(|&i| indeg[i] > 0).unwrap();
    let mut pos = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    while pos[cur] == usize::MAX {
        pos[cur] = path.len();
        path.push(cur);
        cur = *parents[cur].iter().find(|&&p| indeg[p] > 0).unwrap();
    }
    let mut cycle = path[pos[cur]..].to_vec();
    cycle.reverse();
    Err(cycle)
}

/// Depth-first reachability over a child list, optionally ignoring one edge.
pub(crate) fn reaches(
    children: &[Vec<usize>],
    from: usize,
    to: usize,
    skip_edge: Option<(usize, usize)>,
) -> bool {
    if from == to {
        return true;
    }
    let mut seen = vec![false; children.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        for &c in &children[v] {
            if skip_edge == Some((v, c)) || seen[c] {
                continue;
            }
            if c == to {
                return true;
            }
            seen[c] = true;
            stack.push(c);
        }
    }
    false
}

pub(crate) fn would_create_cycle(children: &[Vec<usize>], from: usize, to: usize) -> bool {
    reaches(children, to, from, None)
}
