//! Greedy BIC hill climbing over single-edge additions, deletions and
//! reversals, with perturbation restarts.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::constraints::{Constraints, Resolved};
use super::score::{bic_from_rss, ScoredGraph};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::graph::{reaches, would_create_cycle, Dag};
use crate::ols::CrossProducts;
use crate::rng;
use crate::sem::{LinearSem, NodeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillClimbConfig {
    pub max_in_degree: usize,
    /// Number of perturb-and-reclimb rounds after the first climb.
    pub restarts: usize,
    /// Random moves applied to the incumbent before each restart.
    pub perturb: usize,
    /// Recently changed node pairs that non-improving moves may not touch.
    pub tabu_length: usize,
    /// Consecutive non-improving moves allowed before a climb stops.
    pub max_tabu: usize,
    pub seed: u64,
}

impl Default for HillClimbConfig {
    fn default() -> Self {
        Self {
            max_in_degree: 8,
            restarts: 5,
            perturb: 3,
            tabu_length: 10,
            max_tabu: 10,
            seed: 0,
        }
    }
}

const MOMENT_DEGENERATE_RSS: f64 = 1e-10;
/// Below these the incremental add scores defer to a full refit.
const SAFE_PIVOT: f64 = 1e-6;
const SAFE_RSS: f64 = 1e-6;

/// Node-score oracle backed by cached cross products.
struct LocalScorer {
    cp: CrossProducts,
    cache: HashMap<(usize, Vec<usize>), Option<f64>>,
}

impl LocalScorer {
    fn new(data: &DataMatrix) -> Self {
        Self {
            cp: CrossProducts::new(data.values()),
            cache: HashMap::new(),
        }
    }

    /// BIC of `node` given sorted `parents`; `None` when the family cannot be fitted.
    fn score(&mut self, node: usize, parents: &[usize]) -> Option<f64> {
        if let Some(&s) = self.cache.get(&(node, parents.to_vec())) {
            return s;
        }
        let s = self.cp.regress(node, parents).ok().and_then(|fit| {
            // The moment route loses relative precision near an exact fit, so
            // its degeneracy cutoff is looser than the QR route's.
            (fit.rss > MOMENT_DEGENERATE_RSS * fit.tss).then(|| bic_from_rss(fit.rss, fit.n, parents.len()))
        });
        self.cache.insert((node, parents.to_vec()), s);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

#[derive(Clone)]
struct State {
    n: usize,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    /// `adj[f * n + t]`: edge `f -> t` present.
    adj: Vec<bool>,
    node_score: Vec<f64>,
    /// `add[j * n + i]`: change in node j's score from adding parent i.
    add: Vec<f64>,
    /// `del[j * n + i]`: change in node j's score from dropping parent i.
    del: Vec<f64>,
}

fn insert_sorted(v: &mut Vec<usize>, x: usize) {
    let pos = v.binary_search(&x).unwrap_err();
    v.insert(pos, x);
}

fn remove_sorted(v: &mut Vec<usize>, x: usize) {
    let pos = v.binary_search(&x).unwrap();
    v.remove(pos);
}

impl State {
    /// Starts from the required edges; fails with a node that cannot be scored.
    fn new(n: usize, scorer: &mut LocalScorer, cons: &Resolved) -> std::result::Result<Self, usize> {
        let mut st = State {
            n,
            parents: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
            adj: vec![false; n * n],
            node_score: vec![0.0; n],
            add: vec![f64::INFINITY; n * n],
            del: vec![f64::INFINITY; n * n],
        };
        for &(f, t) in &cons.required_edges {
            st.link(f, t);
        }
        for j in 0..n {
            st.node_score[j] = scorer.score(j, &st.parents[j]).ok_or(j)?;
        }
        for j in 0..n {
            st.refresh(j, scorer, cons);
        }
        Ok(st)
    }

    fn total(&self) -> f64 {
        self.node_score.iter().sum()
    }

    fn has_edge(&self, f: usize, t: usize) -> bool {
        self.adj[f * self.n + t]
    }

    fn link(&mut self, f: usize, t: usize) {
        insert_sorted(&mut self.parents[t], f);
        insert_sorted(&mut self.children[f], t);
        self.adj[f * self.n + t] = true;
    }

    fn unlink(&mut self, f: usize, t: usize) {
        remove_sorted(&mut self.parents[t], f);
        remove_sorted(&mut self.children[f], t);
        self.adj[f * self.n + t] = false;
    }

    fn refresh(&mut self, j: usize, scorer: &mut LocalScorer, cons: &Resolved) {
        let n = self.n;
        let cur = self.node_score[j];
        let mut buf = Vec::with_capacity(self.parents[j].len() + 1);
        let mut exact = Vec::new();
        let mut ext = scorer.cp.extender(j, &self.parents[j]);
        let tss = scorer.cp.cross()[(j, j)];
        let n_samples = scorer.cp.n();
        let k = self.parents[j].len() + 1;
        for i in 0..n {
            self.add[j * n + i] = f64::INFINITY;
            self.del[j * n + i] = f64::INFINITY;
            if i == j || self.has_edge(i, j) || !cons.allowed(i, j) {
                continue;
            }
            let fast = ext
                .as_mut()
                .and_then(|e| e.rss_with(i, SAFE_PIVOT))
                .filter(|&rss| rss > SAFE_RSS * tss && n_samples > k);
            match fast {
                Some(rss) => self.add[j * n + i] = bic_from_rss(rss, n_samples, k) - cur,
                None => exact.push(i),
            }
        }
        drop(ext);
        for i in exact {
            buf.clear();
            buf.extend_from_slice(&self.parents[j]);
            insert_sorted(&mut buf, i);
            if let Some(s) = scorer.score(j, &buf) {
                self.add[j * n + i] = s - cur;
            }
        }
        for idx in 0..self.parents[j].len() {
            let i = self.parents[j][idx];
            buf.clear();
            buf.extend(self.parents[j].iter().copied().filter(|&p| p != i));
            if let Some(s) = scorer.score(j, &buf) {
                self.del[j * n + i] = s - cur;
            }
        }
    }

    fn delta(&self, mv: Move) -> f64 {
        let n = self.n;
        match mv {
            Move::Add(i, j) => self.add[j * n + i],
            Move::Delete(i, j) => self.del[j * n + i],
            Move::Reverse(i, j) => self.del[j * n + i] + self.add[i * n + j],
        }
    }

    /// Moves permitted by the constraints, without the acyclicity check.
    fn candidate_moves(&self, cons: &Resolved) -> Vec<Move> {
        let mut out = Vec::new();
        self.for_each_move(cons, |m| out.push(m));
        out
    }

    fn for_each_move(&self, cons: &Resolved, mut f: impl FnMut(Move)) {
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                if self.has_edge(i, j) {
                    if !cons.required(i, j) {
                        f(Move::Delete(i, j));
                        if cons.allowed(j, i) && self.parents[i].len() < cons.max_in_degree {
                            f(Move::Reverse(i, j));
                        }
                    }
                } else if !self.has_edge(j, i)
                    && cons.allowed(i, j)
                    && self.parents[j].len() < cons.max_in_degree
                {
                    f(Move::Add(i, j));
                }
            }
        }
    }

    fn keeps_acyclic(&self, mv: Move) -> bool {
        match mv {
            Move::Add(i, j) => !would_create_cycle(&self.children, i, j),
            Move::Delete(..) => true,
            Move::Reverse(i, j) => !reaches(&self.children, i, j, Some((i, j))),
        }
    }

    fn apply(&mut self, mv: Move, scorer: &mut LocalScorer, cons: &Resolved) {
        match mv {
            Move::Add(i, j) => {
                self.link(i, j);
                self.rescore(j, scorer, cons);
            }
            Move::Delete(i, j) => {
                self.unlink(i, j);
                self.rescore(j, scorer, cons);
            }
            Move::Reverse(i, j) => {
                self.unlink(i, j);
                self.link(j, i);
                self.rescore(i, scorer, cons);
                self.rescore(j, scorer, cons);
            }
        }
    }

    fn rescore(&mut self, j: usize, scorer: &mut LocalScorer, cons: &Resolved) {
        self.node_score[j] = scorer
            .score(j, &self.parents[j])
            .expect("moves are only taken when the new family scores");
        self.refresh(j, scorer, cons);
    }
}

/// Descendant sets of every node as bit rows, each node counting as its own
/// descendant.
struct Descendants {
    words: usize,
    bits: Vec<u64>,
}

impl Descendants {
    fn of(children: &[Vec<usize>]) -> Self {
        let n = children.len();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        let mut indegree = vec![0usize; n];
        for cs in children {
            for &c in cs {
                indegree[c] += 1;
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    order.push(c);
                }
            }
        }
        for &v in order.iter().rev() {
            bits[v * words + v / 64] |= 1 << (v % 64);
            for &c in &children[v] {
                for w in 0..words {
                    bits[v * words + w] |= bits[c * words + w];
                }
            }
        }
        Self { words, bits }
    }

    fn contains(&self, from: usize, to: usize) -> bool {
        self.bits[from * self.words + to / 64] & (1 << (to % 64)) != 0
    }
}

fn tolerance(total: f64) -> f64 {
    1e-9 * (1.0 + total.abs())
}

fn by_delta(a: &(f64, Move), b: &(f64, Move)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Best-scoring move that passes `legal`. Sorts only a leading block of the
/// candidates unless every move in it is rejected.
fn best_acyclic(cands: &mut [(f64, Move)], legal: impl Fn(Move) -> bool) -> Option<Move> {
    const BLOCK: usize = 64;
    if cands.len() > BLOCK {
        cands.select_nth_unstable_by(BLOCK, by_delta);
        let head = &mut cands[..BLOCK];
        head.sort_unstable_by(by_delta);
        if let Some(&(_, m)) = head.iter().find(|(_, m)| legal(*m)) {
            return Some(m);
        }
    }
    cands.sort_unstable_by(by_delta);
    cands.iter().find(|(_, m)| legal(*m)).map(|&(_, m)| m)
}

/// Steepest descent, then tabu moves until `max_tabu` steps pass without a new best.
///
/// Leaves `st` at the best state visited; the trace holds best-so-far totals.
fn climb(st: &mut State, scorer: &mut LocalScorer, cons: &Resolved, config: &HillClimbConfig) -> Vec<f64> {
    let mut best = st.clone();
    let mut trace = vec![best.total()];
    let mut tabu: VecDeque<(usize, usize)> = VecDeque::new();
    let mut misses = 0;
    loop {
        let tol = tolerance(best.total());
        let gap = st.total() - best.total();
        let mut cands: Vec<(f64, Move)> = Vec::new();
        st.for_each_move(cons, |m| {
            let d = st.delta(m);
            if !d.is_finite() {
                return;
            }
            // Tabu pairs stay open to moves that would set a new best.
            if gap + d < -tol || !tabu.contains(&pair(m)) {
                cands.push((d, m));
            }
        });
        let reach = Descendants::of(&st.children);
        let Some(mv) = best_acyclic(&mut cands, |m| match m {
            Move::Add(i, j) => !reach.contains(j, i),
            other => st.keeps_acyclic(other),
        }) else {
            break;
        };
        st.apply(mv, scorer, cons);
        if config.tabu_length > 0 {
            if tabu.len() == config.tabu_length {
                tabu.pop_front();
            }
            tabu.push_back(pair(mv));
        }
        if st.total() < best.total() - tol {
            best = st.clone();
            misses = 0;
            trace.push(best.total());
        } else {
            misses += 1;
            if misses >= config.max_tabu {
                break;
            }
        }
    }
    *st = best;
    trace
}

fn pair(mv: Move) -> (usize, usize) {
    let (Move::Add(i, j) | Move::Delete(i, j) | Move::Reverse(i, j)) = mv;
    (i.min(j), i.max(j))
}

fn perturb(st: &mut State, scorer: &mut LocalScorer, cons: &Resolved, rng: &mut ChaCha8Rng, steps: usize) {
    for _ in 0..steps {
        let mut moves = st.candidate_moves(cons);
        // Uniform over legal moves: draw, and discard illegal draws.
        let mv = loop {
            if moves.is_empty() {
                return;
            }
            let k = rng.random_range(0..moves.len());
            let m = moves.swap_remove(k);
            if st.delta(m).is_finite() && st.keeps_acyclic(m) {
                break m;
            }
        };
        st.apply(mv, scorer, cons);
    }
}

/// Learns a DAG over all columns of `data` by greedy BIC descent.
pub fn hill_climb(data: &DataMatrix, constraints: &Constraints, config: &HillClimbConfig) -> Result<ScoredGraph> {
    let cons = constraints.resolve(data, config.max_in_degree)?;
    let mut scorer = LocalScorer::new(data);
    let n = data.n_columns();
    let mut best = State::new(n, &mut scorer, &cons).map_err(|j| Error::DegenerateVariance {
        node: data.columns()[j].name.clone(),
    })?;
    let mut traces = vec![climb(&mut best, &mut scorer, &cons, config)];
    let mut rng = rng::stream(config.seed, "hill-climb-restart", 0);
    for _ in 0..config.restarts {
        let mut st = best.clone();
        perturb(&mut st, &mut scorer, &cons, &mut rng, config.perturb);
        traces.push(climb(&mut st, &mut scorer, &cons, config));
        if st.total() < best.total() - tolerance(best.total()) {
            best = st;
        }
    }
    finish(data, &mut scorer, best, traces)
}

fn finish(data: &DataMatrix, scorer: &mut LocalScorer, st: State, traces: Vec<Vec<f64>>) -> Result<ScoredGraph> {
    let edges = st
        .parents
        .iter()
        .enumerate()
        .flat_map(|(t, ps)| ps.iter().map(move |&f| (f, t)));
    let dag = Dag::from_indices(data.names(), data.roles(), edges)?;
    let mut params = Vec::with_capacity(st.n);
    for j in 0..st.n {
        let name = &data.columns()[j].name;
        let fit = scorer
            .cp
            .regress(j, dag.parents(j))
            .map_err(|e| super::score::map_ols(e, name))?;
        params.push(NodeParams {
            intercept: fit.intercept,
            noise_sd: fit.ml_variance().sqrt(),
            coeffs: fit.coeffs,
        });
    }
    let sem = LinearSem::new(dag, params)?;
    Ok(ScoredGraph {
        bic_total: st.node_score.iter().sum(),
        node_bic: st.node_score,
        sem,
        n_samples: data.n_samples(),
        climb_traces: traces,
    })
}
