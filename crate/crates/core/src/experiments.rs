//! Runnable packages of the coupling and renormalization constructions: the
//! Bernoulli edge coupling, group-net renormalization on the square lattice,
//! abelian and linear-growth checks, and the non-amenable existence pipeline.
//!
//! Every experiment returns an [`ExperimentReport`]; property checks that fail
//! are findings recorded in the report, not errors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{linear_fit, replicate, Estimate};
use crate::estimators::{nonamenable_t_bound, replica_field, survival_indicators, DEFAULT_PARTICLE_BUDGET};
use crate::frogs::{explore_cluster, FrogParams, ParticleField, ParticleSource, Schedule, StopReason, StopRule};
use crate::graph::{interior_control_constant, spectral_radius_estimate, BoundaryMode, Graph, GraphSpec, Vertex};
use crate::rng::{derive_path, label_hash, stream};
use crate::walks::{exit_probability_exact, Trajectory, DEFAULT_TOL};

/// CSV header shared by every experiment output.
pub const CSV_HEADER: &str = "experiment,graph,lambda,t,n,replicas,seed,metric,mean,stderr";

/// Outcome of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub graph: String,
    pub inputs: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, Estimate>,
    pub checks: BTreeMap<String, bool>,
    pub notes: Vec<String>,
    pub seed: u64,
}

impl ExperimentReport {
    pub fn new(name: &str, graph: &str, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            graph: graph.to_string(),
            inputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
            checks: BTreeMap::new(),
            notes: Vec::new(),
            seed,
        }
    }

    pub fn input(&mut self, key: &str, value: f64) -> &mut Self {
        self.inputs.insert(key.to_string(), value);
        self
    }

    pub fn metric(&mut self, key: &str, value: Estimate) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    pub fn check(&mut self, key: &str, ok: bool) -> &mut Self {
        self.checks.insert(key.to_string(), ok);
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|&ok| ok)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, &ok)| !ok).map(|(k, _)| k.as_str()).collect()
    }

    /// CSV rows (no header), one per metric, in metric-name order.
    pub fn csv_rows(&self) -> String {
        let cell = |k: &str| self.inputs.get(k).map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::new();
        for (metric, e) in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.name,
                self.graph,
                cell("lambda"),
                cell("t"),
                cell("n"),
                e.replicas,
                self.seed,
                metric,
                e.mean,
                e.stderr
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<name>-<seed>.json` and `<name>-<seed>.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("{}-{}", self.name, self.seed);
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&json, self.to_json()?)?;
        std::fs::write(&csv, self.to_csv())?;
        Ok((json, csv))
    }
}

fn need_replicas(replicas: usize) -> Result<()> {
    if replicas == 0 {
        Err(Error::InvalidArgument("replicas must be >= 1".into()))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Bernoulli edge coupling

/// Per-edge open probability of the first-jump coupling at maximum degree `max_degree`.
pub fn edge_open_probability(params: FrogParams, max_degree: usize) -> f64 {
    let one_sided = -(-params.lambda * (-(-params.t).exp_m1()) / max_degree as f64).exp_m1();
    one_sided * one_sided
}

/// First-jump targets of the particles at `x`.
fn first_jumps(g: &Graph, field: &ParticleField, x: Vertex) -> HashSet<Vertex> {
    field.particles(g, x).iter().filter_map(|w| w.jumps.first().copied()).collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// An edge `{x, y}` is open when some particle of `x` first jumps to `y` and
/// some particle of `y` first jumps to `x`. Edges touching the frontier are
/// closed (no particles live there).
pub fn bernoulli_edge_coupling(g: &Graph, params: FrogParams, replicas: usize, seed: u64) -> Result<ExperimentReport> {
    g.require_undirected()?;
    params.validate()?;
    need_replicas(replicas)?;
    let delta = g.max_out_degree();
    let mut edges: Vec<(Vertex, Vertex)> = Vec::new();
    for x in g.interior() {
        for y in g.neighbors(x) {
            if x < y && !g.is_boundary(y) {
                edges.push((x, y));
            }
        }
    }
    // The closed form is exact on edges whose endpoints both have degree Delta.
    let full: Vec<usize> =
        (0..edges.len()).filter(|&i| g.out_degree(edges[i].0) == delta && g.out_degree(edges[i].1) == delta).collect();

    struct Run {
        open: Vec<bool>,
        included: Option<bool>,
        open_cluster: usize,
        frog_cluster: usize,
    }
    let runs = replicate(replicas, |r| {
        let field = replica_field(seed, "edge-coupling", r, params);
        let marks: HashMap<Vertex, HashSet<Vertex>> = g.interior().map(|x| (x, first_jumps(g, &field, x))).collect();
        let open: Vec<bool> = edges.iter().map(|&(x, y)| marks[&x].contains(&y) && marks[&y].contains(&x)).collect();

        let mut adjacency: HashMap<Vertex, Vec<Vertex>> = HashMap::new();
        for (&(x, y), &o) in edges.iter().zip(&open) {
            if o {
                adjacency.entry(x).or_default().push(y);
                adjacency.entry(y).or_default().push(x);
            }
        }
        let mut cluster = vec![g.origin()];
        let mut seen = HashSet::from([g.origin()]);
        let mut head = 0;
        while head < cluster.len() {
            let v = cluster[head];
            head += 1;
            for &u in adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(u) {
                    cluster.push(u);
                }
            }
        }
        let frogs = explore_cluster(
            g,
            &field,
            StopRule::exhaust().with_particle_budget(DEFAULT_PARTICLE_BUDGET),
            Schedule::Fifo,
        );
        let included = (frogs.stop_reason == StopReason::Exhausted).then(|| {
            let activated = frogs.activated();
            cluster.iter().all(|v| activated.contains(v))
        });
        Run { open, included, open_cluster: cluster.len(), frog_cluster: frogs.size() }
    });

    let mut report = ExperimentReport::new("edge-coupling", g.label(), seed);
    report.input("lambda", params.lambda).input("t", params.t).input("max_degree", delta as f64);
    let target = edge_open_probability(params, delta);
    let trials = replicas * full.len();
    if trials > 0 {
        let successes: usize = runs.iter().map(|run| full.iter().filter(|&&i| run.open[i]).count()).sum();
        let rate = Estimate::proportion(successes, trials, seed, "mc-edge-open");
        report.check("edge_rate_within_3se", rate.agrees_with(target, 3.0));
        report.metric("edge_open_rate", rate);
    } else {
        report.notes.push("no edge joins two vertices of maximum degree".into());
    }
    report.metric("edge_open_target", Estimate::exact(target, "closed-form"));

    // Disjoint pairs (e_{2k}, e_{2k+1}); disjoint pairs of edges are
    // independent, so the mean Pearson coefficient has s.e. 1/sqrt(R K).
    let mut correlations = Vec::new();
    let mut i = 0;
    while i + 1 < edges.len() {
        let (a, b) = (edges[i], edges[i + 1]);
        if a.0 != b.0 && a.0 != b.1 && a.1 != b.0 && a.1 != b.1 {
            let xs: Vec<f64> = runs.iter().map(|run| f64::from(u8::from(run.open[i]))).collect();
            let ys: Vec<f64> = runs.iter().map(|run| f64::from(u8::from(run.open[i + 1]))).collect();
            correlations.push(pearson(&xs, &ys));
            i += 2;
        } else {
            i += 1;
        }
    }
    if !correlations.is_empty() && replicas > 1 {
        let mean = correlations.iter().sum::<f64>() / correlations.len() as f64;
        let se = 1.0 / ((replicas * correlations.len()) as f64).sqrt();
        report.check("pair_independence", mean.abs() <= 3.0 * se);
        report.metric("pair_correlation", Estimate { mean, stderr: se, replicas, seed, method: "mean-pearson".into() });
    }

    let checked: Vec<bool> = runs.iter().filter_map(|run| run.included).collect();
    if checked.len() < replicas {
        report.notes.push(format!(
            "{} replicas hit the particle budget; inclusion not checked there",
            replicas - checked.len()
        ));
    }
    report.check("open_cluster_inside_frog_cluster", checked.iter().all(|&ok| ok));
    let sizes = |f: fn(&Run) -> usize| runs.iter().map(|run| f(run) as f64).collect::<Vec<_>>();
    report.metric("open_cluster_size", Estimate::from_samples(&sizes(|run| run.open_cluster), seed, "mc"));
    report.metric("frog_cluster_size", Estimate::from_samples(&sizes(|run| run.frog_cluster), seed, "mc"));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Group-net renormalization on the square lattice

/// The net `(aZ)^2` on a box of the square lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Spacing of the net.
    pub a: usize,
    /// Net vertices `v, w` are adjacent when `d(v, w) <= 4 beta a`.
    pub beta: f64,
    /// Net vertices are `a (i, j)` with `|i| + |j| <= net_radius`.
    pub net_radius: usize,
    /// Density of the single field used for the good-vertex decay curve;
    /// `None` uses the phase-1 density `lambda / 2`.
    pub decay_lambda: Option<f64>,
}

impl NetConfig {
    pub fn new(a: usize) -> Self {
        Self { a, beta: 0.25, net_radius: 2, decay_lambda: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a < 3 {
            return Err(Error::InvalidArgument(format!("net spacing must be >= 3, got {}", self.a)));
        }
        if !(self.beta >= 0.25 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be >= 1/4 so that net vertices have neighbours, got {}",
                self.beta
            )));
        }
        if let Some(l) = self.decay_lambda {
            FrogParams::new(l, 0.0)?;
        }
        Ok(())
    }

    /// `t = a^2`.
    pub fn lifespan(&self) -> f64 {
        (self.a * self.a) as f64
    }

    /// Radius of the balls `B_v(a/3)`.
    pub fn cell_radius(&self) -> usize {
        self.a / 3
    }

    /// Largest net-neighbour distance `4 beta a`.
    pub fn reach(&self) -> usize {
        (4.0 * self.beta * self.a as f64 + 1e-9).floor() as usize
    }

    /// Box radius holding every cell, every neighbour cell and a halo of
    /// `4 sqrt(t)` for the walks.
    pub fn box_radius(&self) -> usize {
        self.net_radius * self.a + self.reach() + self.cell_radius() + 4 * self.a
    }

    pub fn graph_spec(&self) -> GraphSpec {
        GraphSpec::lattice_box(2, self.box_radius(), BoundaryMode::Absorbing)
    }

    /// Net coordinates `(i, j)`, sorted.
    pub fn net_sites(&self) -> Vec<(i32, i32)> {
        let m = self.net_radius as i32;
        let mut out = Vec::new();
        for i in -m..=m {
            for j in -m..=m {
                if i.abs() + j.abs() <= m {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Net offsets `(di, dj) != 0` of the neighbours of a net vertex.
    pub fn neighbour_offsets(&self) -> Vec<(i32, i32)> {
        let a = self.a as i32;
        let reach = self.reach() as i32;
        let k = reach / a;
        let mut out = Vec::new();
        for di in -k..=k {
            for dj in -k..=k {
                if (di, dj) != (0, 0) && (di.abs() + dj.abs()) * a <= reach {
                    out.push((di, dj));
                }
            }
        }
        out
    }
}

/// Precomputed cells of one net.
struct Net {
    sites: Vec<(i32, i32)>,
    cells: Vec<Vec<Vertex>>,
    cell_sets: Vec<HashSet<Vertex>>,
    /// `B^_v`: union of the neighbour cells.
    targets: Vec<Vec<Vertex>>,
    adjacency: Vec<Vec<usize>>,
}

impl Net {
    fn build(g: &Graph, cfg: &NetConfig) -> Result<Self> {
        let a = cfg.a as i32;
        let cell = |(i, j): (i32, i32)| -> Result<Vec<Vertex>> {
            let v = g
                .vertex_at(&[a * i, a * j])
                .ok_or_else(|| Error::InvalidArgument(format!("net site ({i}, {j}) is outside the box")))?;
            g.ball(v, cfg.cell_radius())
        };
        let sites = cfg.net_sites();
        let offsets = cfg.neighbour_offsets();
        let mut cells = Vec::with_capacity(sites.len());
        let mut targets = Vec::with_capacity(sites.len());
        for &(i, j) in &sites {
            cells.push(cell((i, j))?);
            let mut hat = Vec::new();
            for &(di, dj) in &offsets {
                hat.extend(cell((i + di, j + dj))?);
            }
            hat.sort_unstable();
            hat.dedup();
            targets.push(hat);
        }
        let index: HashMap<(i32, i32), usize> = sites.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        let adjacency = sites
            .iter()
            .map(|&(i, j)| offsets.iter().filter_map(|&(di, dj)| index.get(&(i + di, j + dj)).copied()).collect())
            .collect();
        let cell_sets = cells.iter().map(|c| c.iter().copied().collect()).collect();
        Ok(Self { sites, cells, cell_sets, targets, adjacency })
    }
}

/// Particles inside `inside` come from `local`, all others from `foreign`.
struct Spliced<'a> {
    inside: &'a HashSet<Vertex>,
    local: &'a ParticleField,
    foreign: ParticleField,
}

impl ParticleSource for Spliced<'_> {
    fn particles(&self, g: &Graph, x: Vertex) -> Vec<Trajectory> {
        if self.inside.contains(&x) {
            self.local.particles(g, x)
        } else {
            self.foreign.particles(g, x)
        }
    }
}

/// For each `y` in `set`, the vertices of `set` visited by particles of `y`.
fn arrows_within<P: ParticleSource + ?Sized>(
    g: &Graph,
    set: &[Vertex],
    members: &HashSet<Vertex>,
    source: &P,
) -> HashMap<Vertex, Vec<Vertex>> {
    set.iter()
        .map(|&y| {
            let mut hit: Vec<Vertex> = source
                .particles(g, y)
                .iter()
                .flat_map(|w| w.jumps.iter().copied())
                .filter(|v| members.contains(v))
                .collect();
            hit.sort_unstable();
            hit.dedup();
            (y, hit)
        })
        .collect()
}

/// `A_x^B`: vertices of `B` reachable from `x` along the arrows. Equal to
/// [`crate::frogs::local_activation`] on the same source.
fn activated_from(arrows: &HashMap<Vertex, Vec<Vertex>>, x: Vertex) -> Vec<Vertex> {
    let mut seen = HashSet::from([x]);
    let mut order = vec![x];
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &u in &arrows[&v] {
            if seen.insert(u) {
                order.push(u);
            }
        }
    }
    order
}

/// `v` is open when some phase-1 good vertex `x` of its cell has an activated
/// set whose phase-2 particles cover every neighbour cell.
fn cell_is_open<P1, P2>(
    g: &Graph,
    cell: &[Vertex],
    cell_set: &HashSet<Vertex>,
    target: &[Vertex],
    phase1: &P1,
    phase2: &P2,
) -> bool
where
    P1: ParticleSource + ?Sized,
    P2: ParticleSource + ?Sized,
{
    let arrows = arrows_within(g, cell, cell_set, phase1);
    let mut ranges: HashMap<Vertex, HashSet<Vertex>> = HashMap::new();
    let mut tried: HashSet<Vec<Vertex>> = HashSet::new();
    for &x in cell {
        let mut activated = activated_from(&arrows, x);
        if 4 * activated.len() < cell.len() {
            continue;
        }
        activated.sort_unstable();
        if !tried.insert(activated.clone()) {
            continue;
        }
        let mut covered: HashSet<Vertex> = HashSet::new();
        for &y in &activated {
            let r = ranges.entry(y).or_insert_with(|| {
                phase2.particles(g, y).iter().flat_map(|w| w.visits().collect::<Vec<_>>()).collect()
            });
            covered.extend(r.iter().copied());
        }
        if target.iter().all(|v| covered.contains(v)) {
            return true;
        }
    }
    false
}

/// Index of the first good vertex of `ball` in BFS order from its centre.
fn first_good(
    g: &Graph,
    order: &[Vertex],
    ball: &[Vertex],
    members: &HashSet<Vertex>,
    field: &ParticleField,
) -> Option<usize> {
    let arrows = arrows_within(g, ball, members, field);
    order.iter().position(|&x| 4 * activated_from(&arrows, x).len() >= ball.len())
}

/// Sizes of `A` for the good-vertex decay curve.
pub const DECAY_SIZES: [usize; 3] = [4, 16, 64];

/// Phase-1 and phase-2 fields are independent Poisson(`lambda / 2`) fields
/// with `t = a^2`.
pub fn renormalization_experiment(
    net: &NetConfig,
    lambda: f64,
    replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    net.validate()?;
    need_replicas(replicas)?;
    let half = FrogParams::new(lambda / 2.0, net.lifespan())?;
    let g = crate::graph::build_graph(&net.graph_spec())?;
    let cells = Net::build(&g, net)?;
    let origin_site = cells.sites.iter().position(|&s| s == (0, 0)).expect("the origin is a net site");
    let sites = cells.sites.len();

    struct Run {
        open: Vec<bool>,
        cluster: usize,
        first_good: Option<usize>,
    }
    let decay_params = FrogParams::new(net.decay_lambda.unwrap_or(half.lambda), net.lifespan())?;
    let decay_ball: Vec<Vertex> = g.bfs_within(g.origin(), net.a)?.into_iter().map(|(v, _)| v).collect();
    let decay_set: HashSet<Vertex> = decay_ball.iter().copied().collect();
    let decay_order = &decay_ball[..DECAY_SIZES[2].min(decay_ball.len())];

    let runs = replicate(replicas, |r| {
        let phase1 = replica_field(seed, "renormalization-phase-1", r, half);
        let phase2 = replica_field(seed, "renormalization-phase-2", r, half);
        let open: Vec<bool> = (0..sites)
            .map(|k| cell_is_open(&g, &cells.cells[k], &cells.cell_sets[k], &cells.targets[k], &phase1, &phase2))
            .collect();
        let mut cluster = 0;
        if open[origin_site] {
            let mut stack = vec![origin_site];
            let mut seen = HashSet::from([origin_site]);
            while let Some(k) = stack.pop() {
                cluster += 1;
                for &w in &cells.adjacency[k] {
                    if open[w] && seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
        }
        let decay_field = replica_field(seed, "renormalization-decay", r, decay_params);
        Run { open, cluster, first_good: first_good(&g, decay_order, &decay_ball, &decay_set, &decay_field) }
    });

    let mut report = ExperimentReport::new("renormalization", g.label(), seed);
    report
        .input("lambda", lambda)
        .input("t", net.lifespan())
        .input("a", net.a as f64)
        .input("beta", net.beta)
        .input("net_sites", sites as f64)
        .input("decay_lambda", decay_params.lambda);
    let fractions: Vec<f64> =
        runs.iter().map(|run| run.open.iter().filter(|&&o| o).count() as f64 / sites as f64).collect();
    let freq = Estimate::from_samples(&fractions, seed, "mc-open-fraction");
    for (k, &(i, j)) in cells.sites.iter().enumerate() {
        let hits = runs.iter().filter(|run| run.open[k]).count();
        report.metric(&format!("open_frequency@{i}:{j}"), Estimate::proportion(hits, replicas, seed, "mc-open"));
    }
    report.check("open_frequency_pin", freq.mean >= 0.75);
    report.metric("open_frequency", freq);
    let clusters: Vec<f64> = runs.iter().map(|run| run.cluster as f64).collect();
    report.metric("origin_net_cluster", Estimate::from_samples(&clusters, seed, "mc"));

    let mut probs = Vec::new();
    for &size in &DECAY_SIZES {
        let misses = runs.iter().filter(|run| run.first_good.is_none_or(|i| i >= size)).count();
        let e = Estimate::proportion(misses, replicas, seed, "mc-no-good");
        probs.push(e.mean);
        report.metric(&format!("no_good_in_A@{size}"), e);
    }
    report.check("decay_strictly_decreasing", probs.windows(2).all(|w| w[1] < w[0]));
    let positive: Vec<(f64, f64)> =
        DECAY_SIZES.iter().zip(&probs).filter(|(_, &p)| p > 0.0).map(|(&s, &p)| (s as f64, p.ln())).collect();
    if positive.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        if let Some((slope, _, _)) = linear_fit(&xs, &ys) {
            report.check("decay_slope_negative", slope < 0.0);
            report.metric("decay_log_slope", Estimate::exact(slope, "least-squares"));
        }
    } else {
        report.check("decay_slope_negative", false);
        report.notes.push("fewer than two decay sizes with a positive miss probability".into());
    }

    // Locality: replace every particle outside the cell and redo the test.
    let locality_runs = replicas.min(32);
    let stable = replicate(locality_runs, |r| {
        let phase1 = replica_field(seed, "renormalization-phase-1", r, half);
        let phase2 = replica_field(seed, "renormalization-phase-2", r, half);
        (0..sites).all(|k| {
            let inside = &cells.cell_sets[k];
            let s1 = Spliced { inside, local: &phase1, foreign: phase1.refreshed(u64::MAX - r) };
            let s2 = Spliced { inside, local: &phase2, foreign: phase2.refreshed(u64::MAX - r) };
            let base = cell_is_open(&g, &cells.cells[k], inside, &cells.targets[k], &phase1, &phase2);
            base == cell_is_open(&g, &cells.cells[k], inside, &cells.targets[k], &s1, &s2)
        })
    });
    report.check("locality", stable.iter().all(|&ok| ok));
    Ok(report)
}

/// `(spacing, open frequency)` per scanned spacing.
pub type ScanRows = Vec<(usize, Estimate)>;

/// Mean open frequency for each spacing in `spacings`, and the smallest
/// spacing reaching `4/5`.
pub fn working_point_scan(
    template: &NetConfig,
    lambda: f64,
    spacings: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<(ScanRows, Option<usize>)> {
    let mut rows = Vec::new();
    for &a in spacings {
        let cfg = NetConfig { a, ..template.clone() };
        let report = renormalization_experiment(&cfg, lambda, replicas, seed)?;
        rows.push((a, report.metrics["open_frequency"].clone()));
    }
    let found = rows.iter().find(|(_, e)| e.mean >= 0.8).map(|&(a, _)| a);
    Ok((rows, found))
}

// ---------------------------------------------------------------------------
// Abelian invariance

/// Runs every schedule on the same field for each seed and compares the
/// activated sets.
pub fn abelian_invariance_check(g: &Graph, params: FrogParams, seeds: &[u64]) -> Result<ExperimentReport> {
    params.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let stop = StopRule::exhaust().with_particle_budget(DEFAULT_PARTICLE_BUDGET);
    let outcomes = replicate(seeds.len(), |k| {
        let field = ParticleField::new(seeds[k as usize], params);
        let runs: Vec<_> = Schedule::ALL.iter().map(|&s| explore_cluster(g, &field, stop, s)).collect();
        if runs.iter().any(|c| c.stop_reason != StopReason::Exhausted) {
            return Err(Error::BudgetExhausted(format!("seed {} exceeded the particle budget", seeds[k as usize])));
        }
        let sets: Vec<Vec<Vertex>> = runs.iter().map(|c| c.sorted()).collect();
        let mismatch = (1..sets.len()).find(|&i| sets[i] != sets[0]).map(|i| (Schedule::ALL[0], Schedule::ALL[i]));
        Ok((mismatch, sets[0].len()))
    });
    let mut report = ExperimentReport::new("abelian", g.label(), seeds[0]);
    report.input("lambda", params.lambda).input("t", params.t).input("seeds", seeds.len() as f64);
    let mut matches = 0;
    let mut sizes = Vec::with_capacity(seeds.len());
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let (mismatch, size) = outcome?;
        sizes.push(size as f64);
        match mismatch {
            None => matches += 1,
            Some((a, b)) => report.notes.push(format!("seed {}: {a:?} and {b:?} activate different sets", seeds[k])),
        }
    }
    report.check("all_schedules_agree", matches == seeds.len());
    report.metric("match_rate", Estimate::proportion(matches, seeds.len(), seeds[0], "exact-comparison"));
    report.metric("cluster_size", Estimate::from_samples(&sizes, seeds[0], "mc"));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Linear growth

/// Survival to distances `length/4, length/2, 3 length/4, length` on a
/// ladder, and the blocking event of the annulus `B(m) \ B(m/2)` with
/// `m = length/4`.
pub fn linear_growth_experiment(
    width: usize,
    length: usize,
    params: FrogParams,
    replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    params.validate()?;
    need_replicas(replicas)?;
    if length < 8 {
        return Err(Error::InvalidArgument(format!("ladder length must be >= 8, got {length}")));
    }
    let g = crate::graph::build_graph(&GraphSpec::ladder(width, length))?;
    let mut report = ExperimentReport::new("linear-growth", g.label(), seed);
    report.input("lambda", params.lambda).input("t", params.t).input("n", length as f64).input("width", width as f64);

    let distances: Vec<usize> = (1..=4).map(|k| length * k / 4).collect();
    let mut columns = Vec::new();
    for &n in &distances {
        columns.push(survival_indicators(&g, params, n, replicas, seed)?);
    }
    let per_seed = (0..replicas).all(|r| columns.windows(2).all(|w| w[0][r] >= w[1][r]));
    let mut means = Vec::new();
    for (n, col) in distances.iter().zip(&columns) {
        let e = Estimate::proportion(col.iter().filter(|&&h| h).count(), replicas, seed, "mc-survival");
        means.push(e.mean);
        report.metric(&format!("survival@{n}"), e);
    }
    report.check("survival_non_increasing", per_seed && means.windows(2).all(|w| w[1] <= w[0]));

    let outer = length / 4;
    let inner = outer / 2;
    let ball = g.ball(g.origin(), outer)?;
    let table = exit_probability_exact(&g, &ball, params.t, DEFAULT_TOL)?;
    let annulus: Vec<Vertex> = ball.iter().copied().filter(|&x| g.depth(x) > inner).collect();
    let exposure: f64 = annulus.iter().map(|&x| table.get(x).unwrap_or(0.0)).sum();
    let blocking = (-params.lambda * exposure).exp();
    let inside: HashSet<Vertex> = ball.iter().copied().collect();
    let blocked = replicate(replicas, |r| {
        let field = replica_field(seed, "blocking", r, params);
        annulus.iter().all(|&x| field.particles(&g, x).iter().all(|w| !w.leaves(|v| inside.contains(&v))))
    });
    let mc = Estimate::proportion(blocked.iter().filter(|&&b| b).count(), replicas, seed, "mc-blocking");
    report.input("annulus_inner", inner as f64).input("annulus_outer", outer as f64);
    report.check("blocking_positive", blocking > 0.0);
    report.check("blocking_mc_agrees", mc.agrees_with(blocking, 3.0));
    report.metric(
        "blocking_exact",
        Estimate {
            mean: blocking,
            stderr: params.lambda * table.truncation_error * annulus.len() as f64,
            replicas: 1,
            seed: 0,
            method: "poisson-thinning".into(),
        },
    );
    report.metric("blocking_mc", mc);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Non-amenable pipeline

/// Spectral radius estimates above this are rejected as amenable.
pub const AMENABLE_THRESHOLD: f64 = 0.99;

/// Tuning of [`nonamenable_pipeline`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Steps of the return-probability sequence.
    pub spectral_steps: usize,
    /// Survival is measured to this distance; `None` means the truncation radius.
    pub survival_radius: Option<usize>,
    /// `A = B(escape_radius)` for the escape-probability check.
    pub escape_radius: usize,
    /// Discrete steps after which a walk that has not come back counts as escaped.
    pub escape_horizon: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { spectral_steps: 20, survival_radius: None, escape_radius: 3, escape_horizon: 400 }
    }
}

/// `pi_A`-weighted probability that the jump chain started in `A` does not
/// return to `A` within `horizon` steps. Reaching the frontier counts as escape.
pub fn escape_probability(g: &Graph, set: &[Vertex], horizon: usize, replicas: usize, seed: u64) -> Result<Estimate> {
    need_replicas(replicas)?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("escape set must be non-empty".into()));
    }
    let inside: HashSet<Vertex> = set.iter().copied().collect();
    let total: f64 = set.iter().map(|&x| g.pi(x)).sum();
    let key = derive_path(seed, &[label_hash("escape")]);
    let (mut mean, mut var) = (0.0, 0.0);
    for &x in set {
        let escapes = replicate(replicas, |r| {
            let mut rng = stream(derive_path(key, &[x as u64, r]));
            let mut v = x;
            for _ in 0..horizon {
                if g.is_boundary(v) {
                    return true;
                }
                v = g.step(v, &mut rng);
                if inside.contains(&v) {
                    return false;
                }
            }
            true
        });
        let p = escapes.iter().filter(|&&e| e).count() as f64 / replicas as f64;
        let w = g.pi(x) / total;
        mean += w * p;
        var += w * w * p * (1.0 - p) / replicas as f64;
    }
    Ok(Estimate { mean, stderr: var.sqrt(), replicas, seed, method: "mc-escape".into() })
}

/// Spectral radius, control constant, the lifespan bound, survival over
/// `t_list` and the escape-probability check.
pub fn nonamenable_pipeline(
    g: &Graph,
    lambda: f64,
    t_list: &[f64],
    replicas: usize,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<ExperimentReport> {
    need_replicas(replicas)?;
    if t_list.is_empty() {
        return Err(Error::InvalidArgument("t_list must be non-empty".into()));
    }
    let spectral = spectral_radius_estimate(g, g.origin(), opts.spectral_steps)?;
    let rho = spectral.rho();
    if rho > AMENABLE_THRESHOLD {
        return Err(Error::Amenable(rho));
    }
    let control = interior_control_constant(g);
    let bound = nonamenable_t_bound(rho, control, lambda)?;

    let mut report = ExperimentReport::new("nonamenable", g.label(), seed);
    report.input("lambda", lambda);
    report.metric("spectral_radius", Estimate::exact(rho, "return-probability-extrapolation"));
    report.metric("control_constant", Estimate::exact(control, "stationary-ratio"));
    report.metric("t_bound", Estimate::exact(bound.bound, "closed-form"));
    if spectral.truncation_warning {
        report.notes.push(format!("spectral estimate lost {:.3e} mass to the frontier", spectral.boundary_mass));
    }

    let radius = opts.survival_radius.unwrap_or(g.radius());
    report.input("n", radius as f64);
    let mut sorted = t_list.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut hi = None;
    let mut lo = 0.0;
    for &t in &sorted {
        let params = FrogParams::new(lambda, t)?;
        let hits = survival_indicators(g, params, radius, replicas, seed)?;
        let e = Estimate::proportion(hits.iter().filter(|&&h| h).count(), replicas, seed, "mc-survival");
        if hi.is_none() {
            if e.mean >= 0.5 {
                hi = Some(t);
            } else {
                lo = t;
            }
        }
        report.metric(&format!("survival@t={t}"), e);
    }
    report.metric("bracket_lo", Estimate::exact(lo, "scan"));
    match hi {
        Some(h) => {
            report.metric("bracket_hi", Estimate::exact(h, "scan"));
            report.check("bracket_below_bound", h <= bound.bound);
        }
        None => report.notes.push("no lifespan in the list reached survival 1/2".into()),
    }

    let set = g.ball(g.origin(), opts.escape_radius)?;
    let escape = escape_probability(g, &set, opts.escape_horizon, replicas, seed)?;
    report.check("escape_above_spectral_gap", escape.mean >= (1.0 - rho) - 0.05);
    report.metric("escape_probability", escape);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    #[test]
    fn edge_probability_closed_form() {
        let p = edge_open_probability(FrogParams::new(2.0, 1.0).unwrap(), 3);
        let one = 1.0 - (-2.0 * (1.0 - (-1.0f64).exp()) / 3.0).exp();
        assert!((p - one * one).abs() < 1e-15);
        assert!((p - 0.118_254_4).abs() < 1e-7);
    }

    #[test]
    fn edge_coupling_closed_without_particles_or_time() {
        let g = build_graph(&GraphSpec::regular_tree(3, 5)).unwrap();
        for params in [FrogParams::new(0.0, 1.0).unwrap(), FrogParams::new(2.0, 0.0).unwrap()] {
            let rep = bernoulli_edge_coupling(&g, params, 20, 3).unwrap();
            assert_eq!(rep.metrics["edge_open_rate"].mean, 0.0);
            assert!(rep.passed(), "{:?}", rep.failed_checks());
        }
    }

    #[test]
    fn net_cells_are_separated() {
        let cfg = NetConfig::new(8);
        let g = build_graph(&cfg.graph_spec()).unwrap();
        let net = Net::build(&g, &cfg).unwrap();
        let mut seen = HashSet::new();
        for cell in &net.cells {
            assert_eq!(cell.len(), 13);
            for &v in cell {
                assert!(seen.insert(v), "cells overlap");
            }
        }
        assert_eq!(cfg.neighbour_offsets().len(), 4);
        for (k, target) in net.targets.iter().enumerate() {
            assert_eq!(target.len(), 4 * 13);
            assert!(target.iter().all(|v| !net.cell_sets[k].contains(v)));
        }
    }

    #[test]
    fn cached_arrows_match_local_activation() {
        let g = build_graph(&GraphSpec::lattice_box(2, 20, BoundaryMode::Absorbing)).unwrap();
        let ball = g.ball(0, 3).unwrap();
        let members: HashSet<Vertex> = ball.iter().copied().collect();
        for seed in 0..20 {
            let field = ParticleField::new(seed, FrogParams::new(0.7, 9.0).unwrap());
            let arrows = arrows_within(&g, &ball, &members, &field);
            for &x in &ball {
                let mut a = activated_from(&arrows, x);
                let mut b = crate::frogs::local_activation(&g, &members, x, &field);
                a.sort_unstable();
                b.sort_unstable();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn no_particles_means_closed() {
        let cfg = NetConfig { net_radius: 1, ..NetConfig::new(6) };
        let rep = renormalization_experiment(&cfg, 0.0, 4, 1).unwrap();
        assert_eq!(rep.metrics["open_frequency"].mean, 0.0);
        assert!(rep.checks["locality"]);
    }

    #[test]
    fn abelian_trivial_without_particles() {
        let g = build_graph(&GraphSpec::regular_tree(3, 6)).unwrap();
        let rep = abelian_invariance_check(&g, FrogParams::new(0.0, 1.0).unwrap(), &[1, 2, 3]).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.metrics["cluster_size"].mean, 1.0);
    }

    #[test]
    fn report_csv_schema() {
        let mut rep = ExperimentReport::new("demo", "tree:3:4", 9);
        rep.input("lambda", 1.5).input("t", 2.0);
        rep.metric("m", Estimate::exact(0.25, "exact"));
        assert_eq!(rep.to_csv(), format!("{CSV_HEADER}\ndemo,tree:3:4,1.5,2,,1,9,m,0.25,0\n"));
        let back: ExperimentReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn escape_from_tree_ball_matches_biased_walk() {
        // From the sphere of B(3) on T_3: step out w.p. 2/3, then never come
        // back w.p. 1/2; interior vertices of the ball cannot escape.
        let g = build_graph(&GraphSpec::regular_tree(3, 18)).unwrap();
        let set = g.ball(g.origin(), 3).unwrap();
        let e = escape_probability(&g, &set, 2000, 4000, 5).unwrap();
        let oracle = 24.0 / 46.0 / 3.0;
        assert!(e.agrees_with(oracle, 4.0), "{e:?} vs {oracle}");
    }
}
