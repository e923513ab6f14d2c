use std::collections::BTreeSet;

use latentdag::search::bootstrap::replicate_search_config;
use latentdag::search::{
    bootstrap_consensus, bootstrap_resample, fit_dag, fit_node, hill_climb, node_bic, BootstrapConfig, Constraints,
    HillClimbConfig,
};
use latentdag::simulate::{paper_benchmark, random_pleiotropic_truth, sample_sem, GroundTruth};
use latentdag::{Dag, DataMatrix, Error, LinearSem, NodeParams, Role};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn chain_data(n: usize, seed: u64) -> DataMatrix {
    let dag = Dag::new(
        ["A", "B", "C"].iter().map(|s| (s.to_string(), Role::Predictor)).collect(),
        &[("A", "B"), ("B", "C")],
    )
    .unwrap();
    let params = vec![
        NodeParams { intercept: 0.0, coeffs: vec![], noise_sd: 1.0 },
        NodeParams { intercept: 1.0, coeffs: vec![0.8], noise_sd: 1.0 },
        NodeParams { intercept: -1.0, coeffs: vec![-0.7], noise_sd: 1.0 },
    ];
    let truth = GroundTruth::new(LinearSem::new(dag, params).unwrap()).unwrap();
    sample_sem(&truth, n, seed).unwrap().observed_data
}

fn skeleton(d: &Dag) -> BTreeSet<(String, String)> {
    d.named_edges()
        .into_iter()
        .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect()
}

fn pairs(list: &[(&str, &str)]) -> BTreeSet<(String, String)> {
    list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Coefficients (intercept first) from `(X'X)^-1 X'y` with an explicit inverse.
fn normal_equations(y: &DVector<f64>, xs: &DMatrix<f64>) -> DVector<f64> {
    let n = y.len();
    let x = DMatrix::from_fn(n, xs.ncols() + 1, |i, j| if j == 0 { 1.0 } else { xs[(i, j - 1)] });
    let xt = x.transpose();
    (&xt * &x).try_inverse().unwrap() * xt * y
}

#[test]
fn fit_node_matches_normal_equations() {
    for seed in 0..100u64 {
        let mut m = normal_matrix(50, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for i in 0..50 {
            let noise: f64 = StandardNormal.sample(&mut rng);
            m[(i, 0)] = 0.5 + 1.5 * m[(i, 1)] - 0.8 * m[(i, 2)] + 0.3 * noise;
        }
        let data = DataMatrix::from_columns(&["Y", "X1", "X2"], m.clone()).unwrap();
        let fit = fit_node(&data, "Y", &["X1", "X2"]).unwrap();
        let oracle = normal_equations(&m.column(0).into_owned(), &m.columns(1, 2).into_owned());
        assert!((fit.intercept - oracle[0]).abs() < 1e-8, "seed {seed}");
        assert!((fit.coeffs[0] - oracle[1]).abs() < 1e-8, "seed {seed}");
        assert!((fit.coeffs[1] - oracle[2]).abs() < 1e-8, "seed {seed}");
    }
}

#[test]
fn exact_line_is_recovered() {
    let x = normal_matrix(30, 1, 2);
    let m = DMatrix::from_fn(30, 2, |i, j| if j == 0 { x[i] } else { 2.0 * x[i] });
    let data = DataMatrix::from_columns(&["X", "Y"], m).unwrap();
    let fit = fit_node(&data, "Y", &["X"]).unwrap();
    assert!((fit.coeffs[0] - 2.0).abs() < 1e-10);
    assert!(fit.intercept.abs() < 1e-10);
    assert!(matches!(node_bic(&data, "Y", &["X"]), Err(Error::DegenerateVariance { .. })));
}

#[test]
fn constant_column_is_degenerate() {
    let m = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 3.0 } else { i as f64 });
    let data = DataMatrix::from_columns(&["Y", "X"], m).unwrap();
    assert!(matches!(fit_node(&data, "Y", &[]), Err(Error::DegenerateVariance { .. })));
    assert!(matches!(node_bic(&data, "Y", &[]), Err(Error::DegenerateVariance { .. })));
}

#[test]
fn each_parent_costs_exactly_log_s_in_penalty() {
    let data = DataMatrix::from_columns(&["Y", "A", "B"], normal_matrix(400, 3, 5)).unwrap();
    let ln_s = 400f64.ln();
    let sets: [&[&str]; 3] = [&[], &["A"], &["A", "B"]];
    for w in sets.windows(2) {
        let (small, big) = (w[0], w[1]);
        let lik_small = fit_node(&data, "Y", small).unwrap().loglik;
        let lik_big = fit_node(&data, "Y", big).unwrap().loglik;
        let diff = node_bic(&data, "Y", big).unwrap() - node_bic(&data, "Y", small).unwrap();
        assert!((diff - (-2.0 * (lik_big - lik_small) + ln_s)).abs() < 1e-9);
    }
}

#[test]
fn useless_parent_penalty_follows_chi_square() {
    let s = 1000;
    let reps = 200;
    let mut diffs = Vec::with_capacity(reps);
    for seed in 0..reps as u64 {
        let m = normal_matrix(s, 2, 7000 + seed);
        let data = DataMatrix::from_columns(&["Y", "X"], m.clone()).unwrap();
        let diff = node_bic(&data, "Y", &["X"]).unwrap() - node_bic(&data, "Y", &[]).unwrap();
        // Likelihood-ratio statistic from residual sums of squares.
        let y = m.column(0).into_owned();
        let ybar = y.mean();
        let rss0: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let beta = normal_equations(&y, &m.columns(1, 1).into_owned());
        let rss1: f64 = (0..s).map(|i| (y[i] - beta[0] - beta[1] * m[(i, 1)]).powi(2)).sum();
        let lr = s as f64 * (rss0 / rss1).ln();
        assert!((diff - ((s as f64).ln() - lr)).abs() < 1e-8);
        diffs.push(diff);
    }
    // E[chi2(1)] = 1, so the mean difference sits one unit below log(s).
    let mean = diffs.iter().sum::<f64>() / reps as f64;
    assert!((mean - (s as f64).ln()).abs() < 2.0, "mean {mean}");
    assert!((mean - ((s as f64).ln() - 1.0)).abs() < 0.3, "mean {mean}");
}

#[test]
fn chain_skeleton_is_recovered() {
    let data = chain_data(10_000, 3);
    let g = hill_climb(&data, &Constraints::default(), &HillClimbConfig::default()).unwrap();
    assert_eq!(skeleton(g.dag()), pairs(&[("A", "B"), ("B", "C")]));
}

#[test]
fn independent_columns_give_empty_graph() {
    let data = DataMatrix::from_columns(&["A", "B", "C", "D"], normal_matrix(10_000, 4, 9)).unwrap();
    let g = hill_climb(&data, &Constraints::default(), &HillClimbConfig::default()).unwrap();
    assert_eq!(g.dag().n_edges(), 0);
}

#[test]
fn confounded_outcome_gets_spurious_parents() {
    let b = paper_benchmark(2000, 1).unwrap();
    let g = hill_climb(&b.observed_data, &Constraints::default(), &HillClimbConfig::default()).unwrap();
    let parents = g.dag().markov_parents("Z").unwrap();
    let extra: Vec<_> = parents.iter().filter(|p| *p != "V1" && *p != "V2").collect();
    assert!(!extra.is_empty(), "parents of Z: {parents:?}");
}

fn total_bic(data: &DataMatrix, parents: &[Vec<usize>]) -> f64 {
    let names = data.names();
    parents
        .iter()
        .enumerate()
        .map(|(j, ps)| {
            let p: Vec<&str> = ps.iter().map(|&k| names[k].as_str()).collect();
            node_bic(data, &names[j], &p).unwrap()
        })
        .sum()
}

fn acyclic(n: usize, parents: &[Vec<usize>]) -> bool {
    let edges: Vec<(usize, usize)> = parents.iter().enumerate().flat_map(|(t, ps)| ps.iter().map(move |&f| (f, t))).collect();
    Dag::from_indices((0..n).map(|i| format!("n{i}")).collect(), vec![Role::Predictor; n], edges).is_ok()
}

#[test]
fn result_is_a_local_optimum_and_traces_do_not_increase() {
    for seed in 0..4u64 {
        let truth = random_pleiotropic_truth(9, 1, 3, 0.3, seed).unwrap();
        let data = sample_sem(&truth, 800, seed).unwrap().observed_data;
        let config = HillClimbConfig { max_in_degree: 3, seed, ..Default::default() };
        let g = hill_climb(&data, &Constraints::default(), &config).unwrap();
        for trace in &g.climb_traces {
            assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
        let n = data.n_columns();
        let parents: Vec<Vec<usize>> = (0..n).map(|j| g.dag().parents(j).to_vec()).collect();
        let base = total_bic(&data, &parents);
        assert!((base - g.bic_total).abs() < 1e-6 * base.abs());
        let tol = 1e-6 * base.abs();
        for f in 0..n {
            for t in 0..n {
                if f == t {
                    continue;
                }
                let mut alt = parents.clone();
                if parents[t].contains(&f) {
                    alt[t].retain(|&p| p != f);
                    assert!(total_bic(&data, &alt) >= base - tol, "deleting {f}->{t} improves");
                    alt[f].push(t);
                    if alt[f].len() <= config.max_in_degree && acyclic(n, &alt) {
                        assert!(total_bic(&data, &alt) >= base - tol, "reversing {f}->{t} improves");
                    }
                } else if !parents[f].contains(&t) {
                    alt[t].push(f);
                    if alt[t].len() <= config.max_in_degree && acyclic(n, &alt) {
                        assert!(total_bic(&data, &alt) >= base - tol, "adding {f}->{t} improves");
                    }
                }
            }
        }
    }
}

#[test]
fn single_replicate_consensus_equals_its_climb() {
    let data = chain_data(2000, 4);
    let search = HillClimbConfig::default();
    let boot = BootstrapConfig { n_boot: 1, threshold: 0.4, seed: 12 };
    let ens = bootstrap_consensus(&data, &Constraints::default(), &search, &boot).unwrap();
    let direct = hill_climb(&bootstrap_resample(&data, 12, 0), &Constraints::default(), &replicate_search_config(&search, 12, 0)).unwrap();
    assert_eq!(ens.consensus_dag().named_edges(), direct.dag().named_edges());
}

#[test]
fn chain_consensus_matches_truth_skeleton() {
    let data = chain_data(10_000, 5);
    let boot = BootstrapConfig { n_boot: 20, threshold: 0.4, seed: 1 };
    let ens = bootstrap_consensus(&data, &Constraints::default(), &HillClimbConfig::default(), &boot).unwrap();
    assert_eq!(skeleton(ens.consensus_dag()), pairs(&[("A", "B"), ("B", "C")]));
}

fn noisy_data() -> DataMatrix {
    let truth = random_pleiotropic_truth(8, 1, 3, 0.35, 21).unwrap();
    sample_sem(&truth, 150, 21).unwrap().observed_data
}

fn noisy_ensemble() -> latentdag::search::EnsembleGraph {
    let boot = BootstrapConfig { n_boot: 20, threshold: 0.4, seed: 2 };
    bootstrap_consensus(&noisy_data(), &Constraints::default(), &HillClimbConfig::default(), &boot).unwrap()
}

#[test]
fn averaged_coefficients_are_means_over_holding_replicates() {
    let data = noisy_data();
    let search = HillClimbConfig::default();
    let ens = noisy_ensemble();
    let replicates: Vec<_> = (0..20)
        .map(|r| hill_climb(&bootstrap_resample(&data, 2, r), &Constraints::default(), &replicate_search_config(&search, 2, r)).unwrap())
        .collect();
    let avg = ens.averaged_sem();
    assert!(ens.consensus_dag().n_edges() > 0);
    for (f, t) in ens.consensus_dag().edges() {
        let held: Vec<f64> = replicates.iter().filter_map(|g| g.sem.coeff(f, t)).collect();
        let mean = held.iter().sum::<f64>() / held.len() as f64;
        assert!((avg.coeff(f, t).unwrap() - mean).abs() < 1e-12, "{f}->{t}");
    }
}

#[test]
fn unanimous_threshold_keeps_only_edges_of_every_replicate() {
    let ens = noisy_ensemble().with_threshold(1.0).unwrap();
    let names = ens.names().to_vec();
    for rep in ens.replicate_edges() {
        let rep_skeleton: BTreeSet<(String, String)> = rep
            .iter()
            .map(|&(a, b)| (names[a.min(b)].clone(), names[a.max(b)].clone()))
            .collect();
        assert!(skeleton(ens.consensus_dag()).is_subset(&rep_skeleton));
    }
}

#[test]
fn consensus_edges_meet_threshold_and_average_their_replicates() {
    let ens = noisy_ensemble();
    let d = ens.consensus_dag();
    for (f, t) in d.edges() {
        assert!(ens.edge_frequency(f, t) >= 0.4);
        let holders: Vec<usize> = ens
            .replicate_edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.contains(&(f, t)))
            .map(|(r, _)| r)
            .collect();
        assert!(!holders.is_empty());
        assert!((ens.directed_frequency(f, t) - holders.len() as f64 / ens.n_boot() as f64).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn higher_threshold_gives_edge_subset(t1 in 0.05f64..1.0, gap in 0.0f64..0.95) {
        let t2 = (t1 + gap).min(1.0);
        let ens = noisy_ensemble();
        let low: BTreeSet<_> = ens.with_threshold(t1).unwrap().consensus_dag().named_edges().into_iter().collect();
        let high: BTreeSet<_> = ens.with_threshold(t2).unwrap().consensus_dag().named_edges().into_iter().collect();
        prop_assert!(high.is_subset(&low), "t1 {} t2 {}", t1, t2);
    }

    #[test]
    fn total_bic_is_sum_of_node_bics(
        n in 2usize..7,
        mask in any::<u32>(),
        perm_seed in any::<u64>(),
        data_seed in any::<u64>(),
    ) {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut edges = Vec::new();
        let mut bit = 0;
        for i in 0..n {
            for j in i + 1..n {
                if mask >> bit & 1 == 1 {
                    edges.push((order[i], order[j]));
                }
                bit += 1;
            }
        }
        let names: Vec<String> = (0..n).map(|i| format!("X{i}")).collect();
        let dag = Dag::from_indices(names.clone(), vec![Role::Predictor; n], edges).unwrap();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let data = DataMatrix::from_columns(&refs, normal_matrix(60, n, data_seed)).unwrap();
        let scored = fit_dag(&data, &dag).unwrap();
        let mut sum = 0.0;
        for j in 0..n {
            let ps: Vec<&str> = dag.parents(j).iter().map(|&p| refs[p]).collect();
            let b = node_bic(&data, refs[j], &ps).unwrap();
            prop_assert!((scored.node_bic[j] - b).abs() < 1e-9 * b.abs().max(1.0));
            sum += b;
        }
        prop_assert!((scored.bic_total - sum).abs() < 1e-9 * sum.abs().max(1.0));
    }
}
