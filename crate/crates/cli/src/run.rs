//! Executes a validated configuration and writes the artifacts.

use std::path::PathBuf;

use frogsim_core::estimators::{cluster_size_tail, phi_report, survival_indicators_with_budget};
use frogsim_core::experiments::{
    abelian_invariance_check, bernoulli_edge_coupling, linear_growth_experiment, nonamenable_pipeline,
    renormalization_experiment, ExperimentReport, PipelineOptions, CSV_HEADER,
};
use frogsim_core::graph::{build_graph_with_budget, spectral_radius_estimate, GraphFamily};
use frogsim_core::rng::{derive, label_hash};
use frogsim_core::{Estimate, FrogParams, Graph, GraphSpec};

use crate::config::{Diagnostic, Experiment, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration")]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Core(#[from] frogsim_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// `2` for configuration problems, `3` for exhausted budgets, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        use frogsim_core::Error as E;
        match self {
            RunError::Invalid(_) => 2,
            RunError::Core(E::BudgetExhausted(_) | E::VertexBudget { .. }) => 3,
            RunError::Core(E::InvalidArgument(_) | E::InvalidSpec(_) | E::Amenable(_) | E::ProfileTooLarge { .. }) => 2,
            RunError::Core(_) | RunError::Io(_) => 1,
        }
    }
}

/// Reports produced by a run and the files written.
#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<ExperimentReport>,
    pub files: Vec<PathBuf>,
}

/// Runs the experiment on a pool of `cfg.workers` threads and writes
/// `results.csv`, `report.json`, `plot.gp` and `<experiment>-<seed>.{csv,json}`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RunError::Io(std::io::Error::other(e)))?;
    let reports = pool.install(|| execute(cfg))?;
    let files = write_artifacts(cfg, &reports)?;
    Ok(RunOutcome { reports, files })
}

/// Concatenated CSV of all reports, with one header.
pub fn results_csv(reports: &[ExperimentReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

fn write_artifacts(cfg: &RunConfig, reports: &[ExperimentReport]) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(&cfg.output)?;
    let csv = results_csv(reports);
    let json = serde_json::to_string_pretty(reports).map_err(frogsim_core::Error::from)?;
    let stem = format!("{}-{}", cfg.experiment.name(), cfg.seed);
    let files = [
        ("results.csv".to_string(), csv.clone()),
        ("report.json".to_string(), json.clone()),
        ("plot.gp".to_string(), plot_script(cfg)),
        (format!("{stem}.csv"), csv),
        (format!("{stem}.json"), json),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = cfg.output.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// A gnuplot script reading only `results.csv`.
fn plot_script(cfg: &RunConfig) -> String {
    let (column, label) = match cfg.experiment {
        Experiment::Survival if cfg.lambda.len() == 1 && cfg.t.len() > 1 => ("4", "t"),
        Experiment::Survival => ("3", "lambda"),
        Experiment::Nonamenable => ("0", "row"),
        _ => ("0", "row"),
    };
    format!(
        "# Reads results.csv written next to this script.\n\
         set datafile separator ','\n\
         set key top left\n\
         set xlabel '{label}'\n\
         set ylabel 'mean'\n\
         set title '{name} (seed {seed})'\n\
         plot 'results.csv' every ::1 using {column}:9:10 with yerrorbars title '{name}'\n",
        name = cfg.experiment.name(),
        seed = cfg.seed,
    )
}

fn graph(cfg: &RunConfig) -> Result<(Graph, &GraphSpec), RunError> {
    let spec = cfg.graph.as_ref().ok_or_else(|| RunError::Invalid(vec![Diagnostic::new("graph", "missing")]))?;
    Ok((build_graph_with_budget(spec, cfg.max_vertices)?, spec))
}

fn single(values: &[f64]) -> f64 {
    values[0]
}

fn execute(cfg: &RunConfig) -> Result<Vec<ExperimentReport>, RunError> {
    // Replica streams split from (master seed, experiment name, replica).
    let seed = derive(cfg.seed, label_hash(cfg.experiment.name()));
    let mut reports = match cfg.experiment {
        Experiment::Survival => {
            let (g, spec) = graph(cfg)?;
            let n = cfg.n.unwrap_or(g.radius());
            let mut out = Vec::new();
            for &lambda in &cfg.lambda {
                for &t in &cfg.t {
                    let params = FrogParams::new(lambda, t)?;
                    let hits = survival_indicators_with_budget(&g, params, n, cfg.replicas, seed, cfg.max_particles)?;
                    let mut r = ExperimentReport::new("survival", &spec.to_string(), cfg.seed);
                    r.input("lambda", lambda).input("t", t).input("n", n as f64);
                    r.metric(
                        "survival",
                        Estimate::proportion(hits.iter().filter(|&&h| h).count(), cfg.replicas, seed, "mc-survival"),
                    );
                    out.push(r);
                }
            }
            out
        }
        Experiment::ClusterTail => {
            let (g, spec) = graph(cfg)?;
            let params = FrogParams::new(single(&cfg.lambda), single(&cfg.t))?;
            let nmax = cfg.n.unwrap_or(100);
            let tail = cluster_size_tail(&g, params, nmax, cfg.replicas, seed)?;
            let mut r = ExperimentReport::new("cluster-tail", &spec.to_string(), cfg.seed);
            r.input("lambda", params.lambda).input("t", params.t).input("n", nmax as f64);
            for (i, p) in tail.tail.iter().enumerate() {
                r.metric(
                    &format!("tail@{:04}", i + 1),
                    Estimate::proportion((p * cfg.replicas as f64).round() as usize, cfg.replicas, seed, "mc-tail"),
                );
            }
            r.metric("log_slope", Estimate::exact(tail.slope, "least-squares"));
            r.metric("r_squared", Estimate::exact(tail.r_squared, "least-squares"));
            r.check("tail_decays", tail.slope < 0.0);
            vec![r]
        }
        Experiment::Phi => {
            let (g, spec) = graph(cfg)?;
            let params = FrogParams::new(single(&cfg.lambda), single(&cfg.t))?;
            let radius = cfg.n.unwrap_or(1);
            let set = g.ball(g.origin(), radius)?;
            let rep = phi_report(&g, &set, &format!("B({radius})"), params, cfg.replicas, seed)?;
            let mut r = ExperimentReport::new("phi", &spec.to_string(), cfg.seed);
            r.input("lambda", params.lambda).input("t", params.t).input("n", radius as f64);
            r.metric("phi", rep.phi_hat);
            r.metric("phi_tilde", rep.phi_tilde_hat);
            r.metric("ln_C", Estimate::exact(rep.constants.ln_big_c, "closed-form"));
            r.check("phi_below_c", rep.subcritical);
            vec![r]
        }
        Experiment::EdgeCoupling => {
            let (g, spec) = graph(cfg)?;
            let params = FrogParams::new(single(&cfg.lambda), single(&cfg.t))?;
            let mut r = bernoulli_edge_coupling(&g, params, cfg.replicas, seed)?;
            r.graph = spec.to_string();
            vec![r]
        }
        Experiment::Renormalization => {
            vec![renormalization_experiment(&cfg.net, single(&cfg.lambda), cfg.replicas, seed)?]
        }
        Experiment::Abelian => {
            let (g, spec) = graph(cfg)?;
            let params = FrogParams::new(single(&cfg.lambda), single(&cfg.t))?;
            let seeds: Vec<u64> = (0..cfg.replicas as u64).map(|k| derive(seed, k)).collect();
            let mut r = abelian_invariance_check(&g, params, &seeds)?;
            r.graph = spec.to_string();
            vec![r]
        }
        Experiment::LinearGrowth => {
            let spec = cfg.graph.as_ref().expect("validated");
            let GraphFamily::Ladder { width, length } = spec.family else {
                return Err(RunError::Invalid(vec![Diagnostic::new("graph", "linear-growth needs a ladder graph")]));
            };
            let params = FrogParams::new(single(&cfg.lambda), single(&cfg.t))?;
            vec![linear_growth_experiment(width, length, params, cfg.replicas, seed)?]
        }
        Experiment::Nonamenable => {
            let (g, spec) = graph(cfg)?;
            let opts = PipelineOptions {
                spectral_steps: cfg.spectral_steps,
                survival_radius: cfg.n,
                ..PipelineOptions::default()
            };
            let mut r = nonamenable_pipeline(&g, single(&cfg.lambda), &cfg.t, cfg.replicas, seed, &opts)?;
            r.graph = spec.to_string();
            vec![r]
        }
        Experiment::Spectral => {
            let (g, spec) = graph(cfg)?;
            let est = spectral_radius_estimate(&g, g.origin(), cfg.spectral_steps)?;
            let mut r = ExperimentReport::new("spectral", &spec.to_string(), cfg.seed);
            r.input("n", cfg.spectral_steps as f64);
            r.metric("spectral_radius", Estimate::exact(est.rho(), "return-probability-extrapolation"));
            r.metric("frontier_mass", Estimate::exact(est.boundary_mass, "exact"));
            r.check("frontier_mass_small", !est.truncation_warning);
            vec![r]
        }
    };
    for r in &mut reports {
        r.seed = cfg.seed;
    }
    Ok(reports)
}
