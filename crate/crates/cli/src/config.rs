//! Flat `key = value` run configurations with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use frogsim_core::estimators::DEFAULT_PARTICLE_BUDGET;
use frogsim_core::experiments::NetConfig;
use frogsim_core::graph::{GraphFamily, DEFAULT_VERTEX_BUDGET};
use frogsim_core::GraphSpec;

/// Every key a configuration may set.
pub const KEYS: &[&str] = &[
    "experiment",
    "graph",
    "lambda",
    "t",
    "n",
    "replicas",
    "seed",
    "output",
    "workers",
    "max_particles",
    "max_vertices",
    "a",
    "beta",
    "net_radius",
    "decay_lambda",
    "spectral_steps",
];

/// Upper limit on the number of points in one grid.
pub const MAX_GRID_POINTS: usize = 10_000;

/// One configuration problem, tied to the field that causes it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Survival,
    ClusterTail,
    Phi,
    EdgeCoupling,
    Renormalization,
    Abelian,
    LinearGrowth,
    Nonamenable,
    Spectral,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Survival,
        Experiment::ClusterTail,
        Experiment::Phi,
        Experiment::EdgeCoupling,
        Experiment::Renormalization,
        Experiment::Abelian,
        Experiment::LinearGrowth,
        Experiment::Nonamenable,
        Experiment::Spectral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Survival => "survival",
            Experiment::ClusterTail => "cluster-tail",
            Experiment::Phi => "phi",
            Experiment::EdgeCoupling => "edge-coupling",
            Experiment::Renormalization => "renormalization",
            Experiment::Abelian => "abelian",
            Experiment::LinearGrowth => "linear-growth",
            Experiment::Nonamenable => "nonamenable",
            Experiment::Spectral => "spectral",
        }
    }

    fn needs_graph(self) -> bool {
        self != Experiment::Renormalization
    }

    fn needs_lifespan(self) -> bool {
        !matches!(self, Experiment::Renormalization | Experiment::Spectral)
    }

    fn needs_lambda(self) -> bool {
        self != Experiment::Spectral
    }

    fn needs_n(self) -> bool {
        matches!(self, Experiment::Survival | Experiment::ClusterTail | Experiment::Phi)
    }

    /// Whether `n` is a distance that must fit inside the truncation radius.
    fn n_is_distance(self) -> bool {
        matches!(self, Experiment::Survival | Experiment::Phi | Experiment::Nonamenable)
    }

    fn lambda_grid(self) -> bool {
        self == Experiment::Survival
    }

    fn t_grid(self) -> bool {
        matches!(self, Experiment::Survival | Experiment::Nonamenable)
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
            format!("unknown experiment {s:?} (known: {})", known.join(", "))
        })
    }
}

/// `v`, `v1,v2,...` or `lo:hi:step` (inclusive of `hi` up to rounding).
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |p: &str| -> Result<f64, String> {
        let v: f64 = p.trim().parse().map_err(|_| format!("{p:?} is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{p:?} is not finite"))
        }
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if step.is_nan() || step <= 0.0 {
                return Err(format!("grid step must be positive, got {step}"));
            }
            if hi < lo {
                return Err(format!("grid upper end {hi} is below lower end {lo}"));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            if count > MAX_GRID_POINTS {
                return Err(format!("grid has {count} points, more than {MAX_GRID_POINTS}"));
            }
            // Rounded to 12 significant digits so that 0.1 steps print cleanly.
            Ok((0..count).map(|k| round12(lo + k as f64 * step)).collect())
        }
        [single] => single.split(',').map(num).collect(),
        _ => Err(format!("{s:?} is neither a value list nor lo:hi:step")),
    }
}

fn round12(v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(11 - v.abs().log10().floor() as i32);
    (v * scale).round() / scale
}

/// Raw `key = value` entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    syntax: Vec<Diagnostic>,
}

impl ConfigFile {
    /// Blank lines and `#` comments are ignored. Problems are kept and
    /// reported by [`ConfigFile::resolve`].
    pub fn parse(text: &str) -> Self {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let key = k.trim().to_string();
                    if cfg.entries.contains_key(&key) {
                        cfg.syntax.push(Diagnostic::new(&key, format!("set twice (line {})", i + 1)));
                    }
                    cfg.entries.insert(key, v.trim().to_string());
                }
                None => {
                    cfg.syntax.push(Diagnostic::new("config", format!("line {} is not key = value: {line:?}", i + 1)))
                }
            }
        }
        cfg
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.trim().to_string(), value.trim().to_string());
    }

    /// Applies a `key=value` command-line override.
    pub fn apply_override(&mut self, arg: &str) -> Result<(), Diagnostic> {
        let (k, v) =
            arg.split_once('=').ok_or_else(|| Diagnostic::new("override", format!("{arg:?} is not key=value")))?;
        self.set(k, v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Every violation, never just the first.
    pub fn validate(&self) -> Vec<Diagnostic> {
        self.resolve().err().unwrap_or_default()
    }

    pub fn resolve(&self) -> Result<RunConfig, Vec<Diagnostic>> {
        let mut diags = self.syntax.clone();
        for key in self.entries.keys() {
            if !KEYS.contains(&key.as_str()) {
                diags.push(Diagnostic::new(key, "unknown key"));
            }
        }

        fn parsed<T: FromStr>(cfg: &ConfigFile, diags: &mut Vec<Diagnostic>, key: &str, what: &str) -> Option<T> {
            let raw = cfg.get(key)?;
            match raw.parse() {
                Ok(v) => Some(v),
                Err(_) => {
                    diags.push(Diagnostic::new(key, format!("{raw:?} is not {what}")));
                    None
                }
            }
        }

        let experiment = match self.get("experiment") {
            None => {
                diags.push(Diagnostic::new("experiment", "missing"));
                None
            }
            Some(raw) => raw.parse::<Experiment>().map_err(|m| diags.push(Diagnostic::new("experiment", m))).ok(),
        };

        let graph = match self.get("graph") {
            None => None,
            Some(raw) => match raw.parse::<GraphSpec>() {
                Ok(spec) => {
                    for problem in spec.validate() {
                        diags.push(Diagnostic::new("graph", problem));
                    }
                    Some(spec)
                }
                Err(e) => {
                    diags.push(Diagnostic::new("graph", e.to_string()));
                    None
                }
            },
        };

        let mut grid = |key: &str| -> Option<Vec<f64>> {
            let raw = self.get(key)?;
            match parse_grid(raw) {
                Ok(values) => {
                    if let Some(bad) = values.iter().find(|v| **v < 0.0) {
                        diags.push(Diagnostic::new(key, format!("must be >= 0, got {bad}")));
                    }
                    Some(values)
                }
                Err(m) => {
                    diags.push(Diagnostic::new(key, m));
                    None
                }
            }
        };
        let lambda = grid("lambda");
        let t = grid("t");
        let decay_lambda = grid("decay_lambda");

        let n: Option<usize> = parsed(self, &mut diags, "n", "a non-negative integer");
        let replicas: Option<usize> = parsed(self, &mut diags, "replicas", "a non-negative integer");
        let seed: Option<u64> = parsed(self, &mut diags, "seed", "an unsigned 64-bit integer");
        let workers: usize = parsed(self, &mut diags, "workers", "a non-negative integer").unwrap_or(0);
        let max_particles: usize =
            parsed(self, &mut diags, "max_particles", "a positive integer").unwrap_or(DEFAULT_PARTICLE_BUDGET);
        let max_vertices: usize =
            parsed(self, &mut diags, "max_vertices", "a positive integer").unwrap_or(DEFAULT_VERTEX_BUDGET);
        let a: usize = parsed(self, &mut diags, "a", "a positive integer").unwrap_or(8);
        let beta: f64 = parsed(self, &mut diags, "beta", "a number").unwrap_or(0.25);
        let net_radius: usize = parsed(self, &mut diags, "net_radius", "a non-negative integer").unwrap_or(2);
        let spectral_steps: usize = parsed(self, &mut diags, "spectral_steps", "an even integer").unwrap_or(30);

        match replicas {
            None => diags.push(Diagnostic::new("replicas", "missing")),
            Some(0) => diags.push(Diagnostic::new("replicas", "must be >= 1")),
            Some(_) => {}
        }
        if seed.is_none() && self.get("seed").is_none() {
            diags.push(Diagnostic::new("seed", "missing (there is no clock-based default)"));
        }
        if max_particles == 0 {
            diags.push(Diagnostic::new("max_particles", "must be positive"));
        }
        if max_vertices == 0 {
            diags.push(Diagnostic::new("max_vertices", "must be positive"));
        }
        let net =
            NetConfig { a, beta, net_radius, decay_lambda: decay_lambda.as_ref().and_then(|v| v.first().copied()) };
        if let Err(e) = net.validate() {
            diags.push(Diagnostic::new("a", e.to_string()));
        }
        if spectral_steps < 4 || !spectral_steps.is_multiple_of(2) {
            diags.push(Diagnostic::new("spectral_steps", "must be an even integer >= 4"));
        }

        if let Some(exp) = experiment {
            if exp.needs_graph() && graph.is_none() && self.get("graph").is_none() {
                diags.push(Diagnostic::new("graph", format!("required by {}", exp.name())));
            }
            if exp.needs_lambda() && lambda.is_none() && self.get("lambda").is_none() {
                diags.push(Diagnostic::new("lambda", format!("required by {}", exp.name())));
            }
            if exp.needs_lifespan() && t.is_none() && self.get("t").is_none() {
                diags.push(Diagnostic::new("t", format!("required by {}", exp.name())));
            }
            if exp.needs_n() && self.get("n").is_none() {
                diags.push(Diagnostic::new("n", format!("required by {}", exp.name())));
            }
            if !exp.lambda_grid() && lambda.as_ref().is_some_and(|v| v.len() != 1) {
                diags.push(Diagnostic::new("lambda", format!("{} takes a single value", exp.name())));
            }
            if !exp.t_grid() && t.as_ref().is_some_and(|v| v.len() != 1) {
                diags.push(Diagnostic::new("t", format!("{} takes a single value", exp.name())));
            }
            if let (Some(spec), Some(n)) = (&graph, n) {
                if exp.n_is_distance() {
                    if let Some(radius) = spec.truncation_radius() {
                        if n > radius {
                            diags.push(Diagnostic::new(
                                "n",
                                format!("distance {n} exceeds the truncation radius {radius}"),
                            ));
                        }
                    }
                }
            }
            if let Some(spec) = &graph {
                match (exp, &spec.family) {
                    (Experiment::LinearGrowth, GraphFamily::Ladder { .. }) => {}
                    (Experiment::LinearGrowth, _) => {
                        diags.push(Diagnostic::new("graph", "linear-growth needs a ladder graph"))
                    }
                    (Experiment::Nonamenable, GraphFamily::LatticeBox { .. } | GraphFamily::Ladder { .. }) => {
                        diags.push(Diagnostic::new("graph", "nonamenable needs a tree or a weighted file"))
                    }
                    _ => {}
                }
            }
        }

        if !diags.is_empty() {
            return Err(diags);
        }
        let experiment = experiment.expect("checked above");
        Ok(RunConfig {
            experiment,
            graph,
            lambda: lambda.unwrap_or_default(),
            t: t.unwrap_or_default(),
            n,
            replicas: replicas.expect("checked above"),
            seed: seed.expect("checked above"),
            output: self.get("output").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
            workers,
            max_particles,
            max_vertices,
            net,
            spectral_steps,
        })
    }
}

/// A validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub graph: Option<GraphSpec>,
    pub lambda: Vec<f64>,
    pub t: Vec<f64>,
    pub n: Option<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Rayon worker threads; `0` lets rayon choose.
    pub workers: usize,
    pub max_particles: usize,
    pub max_vertices: usize,
    pub net: NetConfig,
    pub spectral_steps: usize,
}
