use std::path::{Path, PathBuf};

use latentdag::diagnostics::{iteration_metrics, metrics_report, MetricsReport, PlotRow, TruthContext};
use latentdag::em::{run_em, EmConfig, EmIterate, ResidualSource, StopRule};
use latentdag::export::{
    graph_dot, read_json, read_matrix_csv, write_coefficients_csv, write_edge_frequencies_csv, write_json,
    write_latents, GraphDocument, RolesDocument,
};
use latentdag::latent::{latent_column_names, LatentConfig};
use latentdag::rng::derive_seed;
use latentdag::search::{bootstrap_consensus, fit_dag, BootstrapConfig, Constraints, EnsembleGraph, HillClimbConfig, ScoredGraph};
use latentdag::simulate::{benchmark_with, random_pleiotropic_truth, sample_sem, BenchmarkDesign, GroundTruth};
use latentdag::{ColumnKind, ColumnMeta, DataMatrix, Error, Result, Role};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{DataArgs, DeconfoundArgs, Design, EvalArgs, LearnArgs, Residuals, SimulateArgs};
use crate::manifest::Manifest;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateConfig {
    design: Design,
    samples: usize,
    children: usize,
    child_noise: Option<f64>,
    observed: Option<usize>,
    latents: Option<usize>,
    density: Option<f64>,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.samples == 0 {
        return Err(Error::InvalidConfig("--samples must be positive".into()));
    }
    let (bundle, config) = match args.design {
        Design::Benchmark => {
            let design = BenchmarkDesign {
                children_per_latent: args.children.unwrap_or(BenchmarkDesign::default().children_per_latent),
                child_noise_sd: args.child_noise,
                ..Default::default()
            };
            let config = SimulateConfig {
                design: args.design,
                samples: args.samples,
                children: design.children_per_latent,
                child_noise: Some(args.child_noise),
                observed: None,
                latents: None,
                density: None,
            };
            (benchmark_with(&design, args.samples, args.seed)?, config)
        }
        Design::Random => {
            let children = args.children.unwrap_or(5.min(args.observed));
            let truth = random_pleiotropic_truth(args.observed, args.latents, children, args.density, args.seed)?;
            let config = SimulateConfig {
                design: args.design,
                samples: args.samples,
                children,
                child_noise: None,
                observed: Some(args.observed),
                latents: Some(args.latents),
                density: Some(args.density),
            };
            (sample_sem(&truth, args.samples, args.seed)?, config)
        }
    };
    create_dir(&args.out)?;
    bundle.write_dir(&args.out)?;
    Manifest::new("simulate", args.seed, &config)?.write(&args.out)
}

struct Loaded {
    data: DataMatrix,
    constraints: Constraints,
    truth: Option<GroundTruth>,
}

fn load(args: &DataArgs, manifest: &mut Manifest) -> Result<Loaded> {
    manifest.add_input("input", &args.input)?;
    let mut data = DataMatrix::read_csv_path(&args.input)?;
    if let Some(p) = &args.roles {
        manifest.add_input("roles", p)?;
        data = RolesDocument::read_json(p)?.apply(&data)?;
    }
    let constraints = match &args.constraints {
        Some(p) => {
            manifest.add_input("constraints", p)?;
            read_json(p).map_err(|e| match e {
                Error::Json(e) => Error::InvalidConfig(format!("constraints file {}: {e}", p.display())),
                other => other,
            })?
        }
        None => Constraints::default(),
    };
    let truth = match &args.truth {
        Some(p) => {
            manifest.add_input("truth", p)?;
            Some(GroundTruth::read_json(p)?.0)
        }
        None => None,
    };
    Ok(Loaded {
        data,
        constraints,
        truth,
    })
}

fn search_configs(args: &DataArgs) -> Result<(HillClimbConfig, BootstrapConfig)> {
    if args.boot == 0 {
        return Err(Error::InvalidConfig("--boot must be at least 1".into()));
    }
    let search = HillClimbConfig {
        max_in_degree: args.max_in_degree,
        seed: args.seed,
        ..Default::default()
    };
    let boot = BootstrapConfig {
        n_boot: args.boot,
        threshold: args.threshold,
        seed: args.seed,
    };
    Ok((search, boot))
}

fn kinds(data: &DataMatrix) -> Vec<ColumnKind> {
    data.columns().iter().map(|c| c.kind).collect()
}

/// `graph.json`, `graph.dot`, `coefficients.csv` and `edge_frequencies.csv`.
fn write_graph(dir: &Path, data: &DataMatrix, ensemble: &EnsembleGraph, fitted: &ScoredGraph, truth: Option<&GroundTruth>) -> Result<()> {
    create_dir(dir)?;
    let doc = GraphDocument::new(ensemble, fitted, &kinds(data))?;
    doc.write_json(&dir.join("graph.json"))?;
    std::fs::write(dir.join("graph.dot"), graph_dot(&doc, truth))?;
    write_coefficients_csv(std::fs::File::create(dir.join("coefficients.csv"))?, &doc)?;
    write_edge_frequencies_csv(std::fs::File::create(dir.join("edge_frequencies.csv"))?, ensemble)
}

#[derive(Serialize)]
struct LearnConfig {
    search: HillClimbConfig,
    boot: BootstrapConfig,
    constraints: Constraints,
}

pub fn learn(args: &LearnArgs) -> Result<()> {
    let a = &args.data;
    let (search, boot) = search_configs(a)?;
    let mut manifest = Manifest::new("learn", a.seed, &())?;
    let loaded = load(a, &mut manifest)?;
    // Same bootstrap stream as the baseline of `deconfound` with this seed.
    let boot = BootstrapConfig {
        seed: derive_seed(a.seed, "em-bootstrap", 0),
        ..boot
    };
    let ensemble = bootstrap_consensus(&loaded.data, &loaded.constraints, &search, &boot)?;
    let fitted = fit_dag(&loaded.data, ensemble.consensus_dag())?;
    write_graph(&a.out, &loaded.data, &ensemble, &fitted, loaded.truth.as_ref())?;
    manifest.config = serde_json::to_value(LearnConfig {
        search,
        boot,
        constraints: loaded.constraints,
    })?;
    manifest.write(&a.out)
}

fn latent_scores(it: &EmIterate) -> Option<DMatrix<f64>> {
    let names = latent_column_names(it.q());
    if names.is_empty() {
        return None;
    }
    let idx: Vec<usize> = names.iter().map(|n| it.data.index_of(n).unwrap()).collect();
    Some(it.data.values().select_columns(&idx))
}

fn write_iterate(dir: &Path, it: &EmIterate, truth: Option<&GroundTruth>) -> Result<()> {
    write_graph(dir, &it.data, &it.ensemble, &it.fitted, truth)?;
    if let Some(l) = &it.latents {
        write_latents(dir, l)?;
    }
    Ok(())
}

fn write_trace(path: &Path, rows: &[latentdag::em::TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::InvalidData(format!("{other:?}")),
    }
}

fn write_plot_data(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "metric", "value"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.iteration.to_string(), r.metric.clone(), latentdag::data::format_f64(r.value)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics(dir: &Path, report: &MetricsReport, plot: &[PlotRow]) -> Result<()> {
    write_json(&dir.join("metrics.json"), report)?;
    let (header, row) = report.csv_row();
    let mut w = csv::Writer::from_path(dir.join("metrics.csv")).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    w.write_record(&row).map_err(csv_err)?;
    w.flush()?;
    write_plot_data(&dir.join("plot_data.csv"), plot)
}

fn full_data_path(explicit: Option<&PathBuf>, truth: Option<&PathBuf>) -> Option<PathBuf> {
    explicit.cloned().or_else(|| {
        let p = truth?.parent()?.join("full.csv");
        p.exists().then_some(p)
    })
}

#[derive(Serialize)]
struct RunSummary {
    iterations: usize,
    best_iteration: usize,
    stop_reason: latentdag::em::StopReason,
}

pub fn deconfound(args: &DeconfoundArgs) -> Result<()> {
    let a = &args.data;
    let (search, boot) = search_configs(a)?;
    let mut manifest = Manifest::new("deconfound", a.seed, &())?;
    let loaded = load(a, &mut manifest)?;
    let full_path = full_data_path(args.full.as_ref(), a.truth.as_ref());
    let full = match (&loaded.truth, &full_path) {
        (Some(_), Some(p)) => {
            manifest.add_input("full", p)?;
            Some(DataMatrix::read_csv_path(p)?)
        }
        _ => None,
    };
    let config = EmConfig {
        stop: StopRule::from_epsilon(args.epsilon)?,
        max_iter: args.max_iter,
        latents_are_sources: args.latents_as_sources,
        psr: args.psr,
        residuals: match args.residuals {
            Residuals::Averaged => ResidualSource::BootstrapAverage,
            Residuals::Refit => ResidualSource::Refit,
        },
        constraints: loaded.constraints.clone(),
        search,
        boot,
        latent: LatentConfig {
            n_perm: args.n_perm,
            include_outcomes: args.include_outcomes,
            ..Default::default()
        },
        seed: a.seed,
    };
    manifest.config = serde_json::to_value(&config)?;
    let trace = run_em(&loaded.data, &config)?;

    let out = &a.out;
    create_dir(out)?;
    let truth = loaded.truth.as_ref();
    let ctx = truth.map(|t| TruthContext {
        truth: t,
        full_data: full.as_ref(),
    });
    let mut plot = Vec::new();
    for it in &trace.iterates {
        let dir = if it.iteration == 0 {
            out.join("baseline")
        } else {
            out.join(format!("iter_{}", it.iteration))
        };
        write_iterate(&dir, it, truth)?;
        plot.extend(iteration_metrics(it.iteration, it.score, &it.fitted, latent_scores(it).as_ref(), ctx)?);
    }
    let best = trace.best_iterate();
    write_iterate(&out.join("final"), best, truth)?;
    if let Some(p) = &trace.pending {
        write_json(&out.join("pending_eigen.json"), &p.report())?;
    }
    write_trace(&out.join("trace.csv"), &trace.rows())?;
    write_json(
        &out.join("summary.json"),
        &RunSummary {
            iterations: trace.iterates.len() - 1,
            best_iteration: best.iteration,
            stop_reason: trace.stop_reason,
        },
    )?;
    let report = metrics_report(&best.data, &trace.baseline().fitted, &best.fitted, latent_scores(best).as_ref(), ctx)?;
    write_metrics(out, &report, &plot)?;
    manifest.write(out)
}

/// Iterate directories of a run in iteration order, baseline first.
fn iterate_dirs(run: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut dirs = vec![(0, run.join("baseline"))];
    let mut k = 1;
    while run.join(format!("iter_{k}")).is_dir() {
        dirs.push((k, run.join(format!("iter_{k}"))));
        k += 1;
    }
    Ok(dirs)
}

/// Table an iterate was learned on: the input plus its stored latent columns.
fn iterate_table(input: &DataMatrix, dir: &Path) -> Result<(DataMatrix, Option<DMatrix<f64>>)> {
    let path = dir.join("latents.csv");
    if !path.exists() {
        return Ok((input.clone(), None));
    }
    let (names, scores) = read_matrix_csv(&path)?;
    let meta = names.into_iter().map(|n| ColumnMeta::continuous(n, Role::LatentEstimate)).collect();
    Ok((input.append_columns(meta, &scores)?, Some(scores)))
}

fn observed_score(g: &ScoredGraph) -> f64 {
    (0..g.dag().n_nodes())
        .filter(|&i| g.dag().role(i) != Role::LatentEstimate)
        .map(|i| g.node_bic[i])
        .sum()
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let run_manifest = Manifest::read(&args.run)?;
    let mut manifest = Manifest::new("eval", run_manifest.seed, &run_manifest.config)?;
    let input = run_manifest
        .inputs
        .get("input")
        .ok_or_else(|| Error::InvalidConfig("run manifest lists no input".into()))?;
    let input_path = PathBuf::from(&input.path);
    manifest.add_input("input", &input_path)?;
    manifest.add_input("run_manifest", &args.run.join("manifest.json"))?;
    let mut data = DataMatrix::read_csv_path(&input_path)?;
    if let Some(r) = run_manifest.inputs.get("roles") {
        let p = PathBuf::from(&r.path);
        manifest.add_input("roles", &p)?;
        data = RolesDocument::read_json(&p)?.apply(&data)?;
    }
    let truth = match &args.truth {
        Some(p) => {
            manifest.add_input("truth", p)?;
            Some(GroundTruth::read_json(p)?.0)
        }
        None => None,
    };
    let full = match (&truth, full_data_path(args.full.as_ref(), args.truth.as_ref())) {
        (Some(_), Some(p)) => {
            manifest.add_input("full", &p)?;
            Some(DataMatrix::read_csv_path(&p)?)
        }
        _ => None,
    };
    let ctx = truth.as_ref().map(|t| TruthContext {
        truth: t,
        full_data: full.as_ref(),
    });
    let mut plot = Vec::new();
    for (k, dir) in iterate_dirs(&args.run)? {
        let graph = GraphDocument::read_json(&dir.join("graph.json"))?.scored()?;
        let (_, scores) = iterate_table(&data, &dir)?;
        plot.extend(iteration_metrics(k, observed_score(&graph), &graph, scores.as_ref(), ctx)?);
    }
    let baseline = GraphDocument::read_json(&args.run.join("baseline").join("graph.json"))?.scored()?;
    let final_dir = args.run.join("final");
    let final_graph = GraphDocument::read_json(&final_dir.join("graph.json"))?.scored()?;
    let (table, scores) = iterate_table(&data, &final_dir)?;
    let report = metrics_report(&table, &baseline, &final_graph, scores.as_ref(), ctx)?;
    create_dir(&args.out)?;
    write_metrics(&args.out, &report, &plot)?;
    manifest.write(&args.out)
}
