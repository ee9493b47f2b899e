//! Continuous-time random walks: sampling, and exact killed-walk quantities by
//! uniformization.
//!
//! A rate-1 walk run for time `t` makes `Poisson(t)` jumps of the chain
//! `P(x, y) = w(x, y) / pi(x)`, so every quantity here is a Poisson mixture of
//! jump-chain powers. Series are cut once a certified bound on the remaining
//! Poisson mass drops below the requested tolerance.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{replicate, Estimate};
use crate::graph::{BoundaryMode, Graph, Vertex};
use crate::rng::{derive_path, label_hash, stream};

/// Default absolute tolerance of the exact series.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Series length cap for lifespan `t`.
pub fn max_terms(t: f64) -> usize {
    (20.0 * t).ceil() as usize + 200
}

/// Draws `N(t) ~ Poisson(t)`.
pub fn sample_jump_count<R: Rng + ?Sized>(t: f64, rng: &mut R) -> u64 {
    if t <= 0.0 {
        return 0;
    }
    Poisson::new(t).expect("positive finite rate").sample(rng) as u64
}

/// One particle's walk: positions after each jump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub start: Vertex,
    pub jumps: Vec<Vertex>,
    pub lifespan: f64,
    /// The walk met the truncation frontier and was stopped or killed there.
    pub hit_boundary: bool,
}

impl Trajectory {
    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// Visited vertices with repetition, starting point first.
    pub fn visits(&self) -> impl Iterator<Item = Vertex> + '_ {
        std::iter::once(self.start).chain(self.jumps.iter().copied())
    }

    /// Whether some visited vertex fails `inside`.
    pub fn leaves(&self, inside: impl Fn(Vertex) -> bool) -> bool {
        self.jumps.iter().any(|&v| !inside(v))
    }

    pub fn range(&self) -> HashSet<Vertex> {
        self.visits().collect()
    }
}

/// Samples a walk from `x` up to time `t`.
///
/// Each jump consumes one `Exp(1)` holding time and then one neighbour choice,
/// so for a fixed stream the walk for `t` is a prefix of the walk for `t' > t`.
pub fn sample_trajectory<R: Rng + ?Sized>(g: &Graph, x: Vertex, t: f64, rng: &mut R) -> Trajectory {
    let mut jumps = Vec::new();
    let mut hit_boundary = g.is_boundary(x);
    let mut clock = 0.0;
    let mut at = x;
    if !hit_boundary {
        loop {
            let hold: f64 = Exp1.sample(rng);
            clock += hold;
            if clock > t {
                break;
            }
            let next = g.step(at, rng);
            if g.is_boundary(next) {
                hit_boundary = true;
                if g.boundary_mode() == BoundaryMode::Absorbing {
                    jumps.push(next);
                }
                break;
            }
            jumps.push(next);
            at = next;
        }
    }
    Trajectory { start: x, jumps, lifespan: t, hit_boundary }
}

/// Poisson(t) probabilities `p_0, p_1, ...`, computed in log space so large
/// `t` does not underflow the leading terms.
#[derive(Clone, Debug)]
struct PoissonTerms {
    t: f64,
    k: usize,
    log_p: f64,
}

impl PoissonTerms {
    fn new(t: f64) -> Self {
        Self { t, k: 0, log_p: -t }
    }
}

impl Iterator for PoissonTerms {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        let p = if self.t == 0.0 {
            if self.k == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.log_p.exp()
        };
        self.k += 1;
        if self.t > 0.0 {
            self.log_p += self.t.ln() - (self.k as f64).ln();
        }
        Some(p)
    }
}

/// Upper bound on `P(Po(t) > k)` given `p_k = P(Po(t) = k)`; infinite until
/// the terms start decreasing geometrically.
fn poisson_tail_after(t: f64, k: usize, p_k: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let ratio = t / (k as f64 + 2.0);
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    p_k * t / (k as f64 + 1.0) / (1.0 - ratio)
}

fn check_horizon(t: f64, tol: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!("lifespan must be finite and >= 0, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Exit probabilities `P_x(tau_{S^c} <= t)` for every `x` in `S`.
#[derive(Clone, Debug, Serialize)]
pub struct KilledWalkTable {
    pub domain: Vec<Vertex>,
    pub horizon: f64,
    pub exit_prob: Vec<f64>,
    pub truncation_error: f64,
    #[serde(skip)]
    index: HashMap<Vertex, usize>,
}

impl KilledWalkTable {
    pub fn get(&self, x: Vertex) -> Option<f64> {
        self.index.get(&x).map(|&i| self.exit_prob[i])
    }
}

/// The jump chain restricted to a vertex set, in local indices.
struct Restricted {
    verts: Vec<Vertex>,
    index: HashMap<Vertex, usize>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Restricted {
    fn new(g: &Graph, set: &[Vertex]) -> Result<Self> {
        let mut verts = set.to_vec();
        verts.sort_unstable();
        verts.dedup();
        let index: HashMap<Vertex, usize> = verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut rows = Vec::with_capacity(verts.len());
        for &v in &verts {
            g.check_vertex(v)?;
            if g.is_boundary(v) {
                return Err(Error::InvalidArgument(format!(
                    "vertex {v} of the domain lies on the truncation frontier"
                )));
            }
            rows.push(g.transitions(v).filter_map(|(u, p)| index.get(&u).map(|&j| (j, p))).collect());
        }
        Ok(Self { verts, index, rows })
    }
}

/// `P_x(tau_{S^c} <= t) = 1 - sum_k Po(t, k) (Q_S^k 1)(x)`.
pub fn exit_probability_exact(g: &Graph, set: &[Vertex], t: f64, tol: f64) -> Result<KilledWalkTable> {
    check_horizon(t, tol)?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("exit domain is empty".into()));
    }
    let q = Restricted::new(g, set)?;
    let n = q.verts.len();
    let mut stay = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut survive = vec![0.0; n];
    let mut err = f64::INFINITY;
    for (k, p) in PoissonTerms::new(t).enumerate().take(max_terms(t)) {
        for i in 0..n {
            survive[i] += p * stay[i];
        }
        err = poisson_tail_after(t, k, p);
        if err < tol {
            break;
        }
        for (i, row) in q.rows.iter().enumerate() {
            next[i] = row.iter().map(|&(j, pj)| pj * stay[j]).sum();
        }
        std::mem::swap(&mut stay, &mut next);
    }
    if err >= tol {
        return Err(Error::ToleranceUnreachable { tol, max_terms: max_terms(t) });
    }
    Ok(KilledWalkTable {
        exit_prob: survive.iter().map(|s| (1.0 - s).clamp(0.0, 1.0)).collect(),
        domain: q.verts,
        horizon: t,
        truncation_error: err,
        index: q.index,
    })
}

/// A distribution over vertices kept dense, with its support tracked.
struct Mass {
    value: Vec<f64>,
    support: Vec<Vertex>,
    marked: Vec<bool>,
}

impl Mass {
    fn point(n: usize, x: Vertex) -> Self {
        let mut m = Self { value: vec![0.0; n], support: Vec::new(), marked: vec![false; n] };
        m.add(x, 1.0);
        m
    }

    fn add(&mut self, v: Vertex, w: f64) {
        if !self.marked[v] {
            self.marked[v] = true;
            self.support.push(v);
        }
        self.value[v] += w;
    }
}

/// Removed mass per step: `(entered keep-rejected interior vertex, entered frontier)`.
#[derive(Clone, Copy, Default)]
struct Removed {
    rejected: f64,
    frontier: f64,
}

/// One uniformized sweep of the jump chain from a point mass. Mass entering a
/// boundary vertex, or a vertex rejected by `keep`, is removed.
/// `visit(k, mass, removed)` sees the live mass after `k` jumps and the mass
/// removed by jump `k`; it returns `false` to stop early.
fn propagate(
    g: &Graph,
    x: Vertex,
    steps: usize,
    keep: impl Fn(Vertex) -> bool,
    mut visit: impl FnMut(usize, &Mass, Removed) -> bool,
) {
    let n = g.vertex_count();
    let mut cur = Mass::point(n, x);
    let mut next = Mass { value: vec![0.0; n], support: Vec::new(), marked: vec![false; n] };
    if !visit(0, &cur, Removed::default()) {
        return;
    }
    for k in 1..=steps {
        let mut removed = Removed::default();
        for &v in &cur.support {
            let m = cur.value[v];
            if m == 0.0 {
                continue;
            }
            for (u, p) in g.transitions(v) {
                if !keep(u) {
                    removed.rejected += m * p;
                } else if g.is_boundary(u) {
                    removed.frontier += m * p;
                } else {
                    next.add(u, m * p);
                }
            }
        }
        for &v in &cur.support {
            cur.value[v] = 0.0;
            cur.marked[v] = false;
        }
        cur.support.clear();
        std::mem::swap(&mut cur, &mut next);
        if !visit(k, &cur, removed) {
            return;
        }
    }
}

/// `P_x(tau_y <= t)` for the walk killed on hitting `y`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HittingProbability {
    pub value: f64,
    /// Poisson-weighted mass absorbed at the truncation frontier before hitting
    /// `y`; the infinite-graph value lies in `[value, value + leakage]`.
    pub leakage: f64,
    pub truncation_error: f64,
}

pub fn hitting_probability_exact(g: &Graph, x: Vertex, y: Vertex, t: f64, tol: f64) -> Result<HittingProbability> {
    check_horizon(t, tol)?;
    g.check_vertex(x)?;
    g.check_vertex(y)?;
    if x == y {
        return Ok(HittingProbability { value: 1.0, leakage: 0.0, truncation_error: 0.0 });
    }
    let mut hit_by = 0.0; // P(discrete chain hits y within k jumps)
    let mut lost_by = 0.0;
    let mut value = 0.0;
    let mut leakage = 0.0;
    let mut err = f64::INFINITY;
    let mut terms = PoissonTerms::new(t);
    let cap = max_terms(t);
    propagate(
        g,
        x,
        cap,
        |u| u != y,
        |k, _, removed| {
            hit_by += removed.rejected;
            lost_by += removed.frontier;
            let p = terms.next().unwrap();
            value += p * hit_by;
            leakage += p * lost_by;
            err = poisson_tail_after(t, k, p);
            err >= tol
        },
    );
    if err >= tol {
        return Err(Error::ToleranceUnreachable { tol, max_terms: cap });
    }
    Ok(HittingProbability { value: value.min(1.0), leakage, truncation_error: err })
}

/// The row `y -> p_t(x, y)` of the heat kernel.
#[derive(Clone, Debug, Serialize)]
pub struct HeatKernelRow {
    pub values: HashMap<Vertex, f64>,
    /// Mass absorbed at the truncation frontier, Poisson-weighted.
    pub leakage: f64,
    pub truncation_error: f64,
}

impl HeatKernelRow {
    pub fn get(&self, y: Vertex) -> f64 {
        self.values.get(&y).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        let mut v: Vec<f64> = self.values.values().copied().collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum()
    }
}

pub fn heat_kernel_row(g: &Graph, x: Vertex, t: f64, tol: f64) -> Result<HeatKernelRow> {
    check_horizon(t, tol)?;
    g.check_vertex(x)?;
    let mut acc: HashMap<Vertex, f64> = HashMap::new();
    let mut lost_by = 0.0;
    let mut leakage = 0.0;
    let mut err = f64::INFINITY;
    let mut terms = PoissonTerms::new(t);
    let cap = max_terms(t);
    propagate(
        g,
        x,
        cap,
        |_| true,
        |k, mass, removed| {
            lost_by += removed.frontier;
            let p = terms.next().unwrap();
            for &v in &mass.support {
                *acc.entry(v).or_insert(0.0) += p * mass.value[v];
            }
            leakage += p * lost_by;
            err = poisson_tail_after(t, k, p);
            err >= tol
        },
    );
    if err >= tol {
        return Err(Error::ToleranceUnreachable { tol, max_terms: cap });
    }
    Ok(HeatKernelRow { values: acc, leakage, truncation_error: err })
}

/// `p_t(x, y)`; fails when the truncation frontier absorbs more than `tol`.
pub fn heat_kernel_exact(g: &Graph, x: Vertex, y: Vertex, t: f64, tol: f64) -> Result<f64> {
    g.check_vertex(y)?;
    let row = heat_kernel_row(g, x, t, tol)?;
    if row.leakage > tol {
        return Err(Error::LeakageExceeded { leakage: row.leakage, budget: tol });
    }
    Ok(row.get(y))
}

/// `G_t(x, y) = int_0^t p_s(x, y) ds = sum_k p^k(x, y) P(Po(t) >= k + 1)`.
pub fn truncated_green(g: &Graph, x: Vertex, y: Vertex, t: f64, tol: f64) -> Result<f64> {
    check_horizon(t, tol)?;
    g.check_vertex(x)?;
    g.check_vertex(y)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut value = 0.0;
    let mut cum = 0.0; // P(Po(t) <= k)
    let mut lost = 0.0;
    let mut weighted_loss = 0.0;
    let mut err = f64::INFINITY;
    let mut terms = PoissonTerms::new(t);
    let cap = max_terms(t);
    propagate(
        g,
        x,
        cap,
        |_| true,
        |k, mass, removed| {
            let p = terms.next().unwrap();
            cum += p;
            lost += removed.frontier;
            let weight = (1.0 - cum).max(0.0);
            value += weight * mass.value[y];
            weighted_loss += weight * lost;
            // Remaining weights sum to E[(Po(t) - k - 1)^+], bounded by a
            // geometric series once the Poisson terms decrease.
            let tail_k = poisson_tail_after(t, k, p);
            let r = t / (k as f64 + 3.0);
            err = if r < 1.0 { tail_k / (1.0 - r) } else { f64::INFINITY };
            err >= tol
        },
    );
    if err >= tol {
        return Err(Error::ToleranceUnreachable { tol, max_terms: cap });
    }
    if weighted_loss > tol {
        return Err(Error::LeakageExceeded { leakage: weighted_loss, budget: tol });
    }
    Ok(value)
}

/// Monte Carlo summaries of the range `R(t)` of a single walk.
#[derive(Clone, Debug, Serialize)]
pub struct RangeStatistics {
    /// `E|R(t)|`.
    pub size: Estimate,
    /// `E|R(t) \ H|`.
    pub outside: Estimate,
    /// `P(|R(t)| <= alpha t)`.
    pub small_range: Estimate,
    pub alpha: f64,
    pub boundary_hits: usize,
}

pub fn range_statistics(
    g: &Graph,
    x: Vertex,
    t: f64,
    excluded: &[Vertex],
    alpha: f64,
    replicas: usize,
    seed: u64,
) -> Result<RangeStatistics> {
    check_horizon(t, 1.0)?;
    g.check_vertex(x)?;
    if replicas == 0 {
        return Err(Error::InvalidArgument("replicas must be >= 1".into()));
    }
    let h: HashSet<Vertex> = excluded.iter().copied().collect();
    let key = derive_path(seed, &[label_hash("range")]);
    let samples = replicate(replicas, |r| {
        let traj = sample_trajectory(g, x, t, &mut stream(crate::rng::derive(key, r)));
        let range = traj.range();
        let out = range.iter().filter(|v| !h.contains(v)).count();
        (range.len(), out, traj.hit_boundary)
    });
    let sizes: Vec<f64> = samples.iter().map(|s| s.0 as f64).collect();
    let outs: Vec<f64> = samples.iter().map(|s| s.1 as f64).collect();
    let small = samples.iter().filter(|s| (s.0 as f64) <= alpha * t).count();
    Ok(RangeStatistics {
        size: Estimate::from_samples(&sizes, seed, "mc-range"),
        outside: Estimate::from_samples(&outs, seed, "mc-range"),
        small_range: Estimate::proportion(small, replicas, seed, "mc-range"),
        alpha,
        boundary_hits: samples.iter().filter(|s| s.2).count(),
    })
}

/// Repetitions in the every-`m`-th subsequence of the jump chain.
#[derive(Clone, Debug, Serialize)]
pub struct SelfIntersection {
    /// Mean number of pairs `i < j <= floor(t / 2m)` with `Y(i) = Y(j)`,
    /// where `Y(i) = X(m i)`.
    pub pairs: Estimate,
    /// Replicas whose chain was absorbed before the last subsampled time;
    /// their remaining terms are dropped.
    pub truncated: usize,
}

impl SelfIntersection {
    /// `t rho^m / (2m (1 - rho^m))`.
    pub fn bound(t: f64, m: usize, rho: f64) -> f64 {
        let rm = rho.powi(m as i32);
        t * rm / (2.0 * m as f64 * (1.0 - rm))
    }
}

pub fn self_intersection_profile(
    g: &Graph,
    x: Vertex,
    t: f64,
    m: usize,
    replicas: usize,
    seed: u64,
) -> Result<SelfIntersection> {
    g.check_vertex(x)?;
    if m == 0 {
        return Err(Error::InvalidArgument("subsampling step m must be >= 1".into()));
    }
    if replicas == 0 {
        return Err(Error::InvalidArgument("replicas must be >= 1".into()));
    }
    let terms = (t / (2.0 * m as f64)).floor().max(0.0) as usize;
    let key = derive_path(seed, &[label_hash("self-intersection"), m as u64]);
    let samples = replicate(replicas, |r| {
        let mut rng = stream(crate::rng::derive(key, r));
        let mut counts: HashMap<Vertex, usize> = HashMap::new();
        counts.insert(x, 1);
        let mut pairs = 0usize;
        let mut at = x;
        let mut truncated = false;
        'outer: for _ in 0..terms {
            for _ in 0..m {
                at = g.step(at, &mut rng);
                if g.is_boundary(at) {
                    truncated = true;
                    break 'outer;
                }
            }
            let c = counts.entry(at).or_insert(0);
            pairs += *c;
            *c += 1;
        }
        (pairs as f64, truncated)
    });
    let values: Vec<f64> = samples.iter().map(|s| s.0).collect();
    Ok(SelfIntersection {
        pairs: Estimate::from_samples(&values, seed, "mc-self-intersection"),
        truncated: samples.iter().filter(|s| s.1).count(),
    })
}
