//! Monte Carlo estimators of survival and cluster statistics, the sharpness
//! functionals, their explicit constants, critical-parameter searches and
//! branching-process oracles.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{linear_fit, replicate, Estimate};
use crate::frogs::{explore_cluster, restricted_activation, FrogParams, ParticleField, Schedule, StopReason, StopRule};
use crate::graph::{Graph, Vertex};
use crate::rng::{derive, derive_path, label_hash};
use crate::walks::{exit_probability_exact, sample_trajectory, DEFAULT_TOL};

/// Particle cap per exploration; hitting it aborts the estimate.
pub const DEFAULT_PARTICLE_BUDGET: usize = 5_000_000;

/// Field of replica `r` for a named estimator. The key ignores the parameters,
/// so runs at different `(lambda, t)` with one seed share randomness.
pub fn replica_field(seed: u64, purpose: &str, r: u64, params: FrogParams) -> ParticleField {
    ParticleField::new(derive_path(seed, &[label_hash(purpose), r]), params)
}

fn need_replicas(replicas: usize) -> Result<()> {
    if replicas == 0 {
        Err(Error::InvalidArgument("replicas must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// Per-replica indicators of reaching distance `n` (for `n = 0`: of the
/// cluster not being `{origin}`).
pub fn survival_indicators(g: &Graph, params: FrogParams, n: usize, replicas: usize, seed: u64) -> Result<Vec<bool>> {
    survival_indicators_with_budget(g, params, n, replicas, seed, DEFAULT_PARTICLE_BUDGET)
}

/// [`survival_indicators`] with an explicit per-exploration particle cap.
pub fn survival_indicators_with_budget(
    g: &Graph,
    params: FrogParams,
    n: usize,
    replicas: usize,
    seed: u64,
    budget: usize,
) -> Result<Vec<bool>> {
    params.validate()?;
    need_replicas(replicas)?;
    if n > g.radius() {
        return Err(Error::InvalidArgument(format!(
            "survival radius {n} exceeds the truncation radius {}",
            g.radius()
        )));
    }
    let stop = StopRule::radius(n).with_particle_budget(budget);
    let outcomes = replicate(replicas, |r| {
        let field = replica_field(seed, "survival", r, params);
        explore_cluster(g, &field, stop, Schedule::Lifo).stop_reason
    });
    if outcomes.contains(&StopReason::ParticleBudget) {
        return Err(Error::BudgetExhausted(format!("an exploration activated more than {budget} particles")));
    }
    Ok(outcomes.into_iter().map(|s| s == StopReason::RadiusReached).collect())
}

/// `P(cluster reaches distance n)`.
pub fn survival_probability(g: &Graph, params: FrogParams, n: usize, replicas: usize, seed: u64) -> Result<Estimate> {
    let hits = survival_indicators(g, params, n, replicas, seed)?;
    Ok(Estimate::proportion(hits.iter().filter(|&&h| h).count(), replicas, seed, "mc-survival"))
}

/// Empirical `P(|C_0| >= n)` with a log-linear fit.
#[derive(Clone, Debug, Serialize)]
pub struct ClusterTail {
    /// `tail[n - 1] = P(|C_0| >= n)` for `n = 1..=nmax`.
    pub tail: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Range of `n` used by the fit.
    pub fit_range: (usize, usize),
    /// Replicas stopped at `nmax` vertices; they count as `|C_0| >= nmax`.
    pub censored: usize,
}

/// Minimum number of replicas at a tail point for it to enter the fit.
pub const TAIL_FIT_MIN_COUNT: usize = 10;

/// The fit covers `n` in `[n_hi / 2, n_hi]`, where `n_hi <= nmax` is the largest
/// size reached by at least `TAIL_FIT_MIN_COUNT` replicas.
pub fn cluster_size_tail(
    g: &Graph,
    params: FrogParams,
    nmax: usize,
    replicas: usize,
    seed: u64,
) -> Result<ClusterTail> {
    params.validate()?;
    need_replicas(replicas)?;
    if nmax < 2 {
        return Err(Error::InvalidArgument("nmax must be >= 2".into()));
    }
    let stop = StopRule::exhaust().with_vertex_budget(nmax).with_particle_budget(DEFAULT_PARTICLE_BUDGET);
    let sizes = replicate(replicas, |r| {
        let c = explore_cluster(g, &replica_field(seed, "cluster-tail", r, params), stop, Schedule::Fifo);
        (c.size(), c.stop_reason)
    });
    let mut counts = vec![0usize; nmax + 1];
    for &(s, _) in &sizes {
        counts[s.min(nmax)] += 1;
    }
    let mut at_least = vec![0usize; nmax + 2];
    for n in (1..=nmax).rev() {
        at_least[n] = at_least[n + 1] + counts[n];
    }
    let tail: Vec<f64> = (1..=nmax).map(|n| at_least[n] as f64 / replicas as f64).collect();
    let n_hi = (1..=nmax).rev().find(|&n| at_least[n] >= TAIL_FIT_MIN_COUNT).unwrap_or(1);
    let n_lo = (n_hi / 2).max(1);
    let (slope, intercept, r_squared) = if n_hi > n_lo {
        let xs: Vec<f64> = (n_lo..=n_hi).map(|n| n as f64).collect();
        let ys: Vec<f64> = (n_lo..=n_hi).map(|n| tail[n - 1].ln()).collect();
        linear_fit(&xs, &ys).unwrap_or((0.0, 0.0, 0.0))
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(ClusterTail {
        tail,
        slope,
        intercept,
        r_squared,
        fit_range: (n_lo, n_hi),
        censored: sizes.iter().filter(|s| s.1 == StopReason::VertexBudget).count(),
    })
}

/// Explicit constants of the sharpness argument.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SharpnessConstants {
    pub max_degree: usize,
    /// `1 - exp(-(lambda / Delta) t e^{-t})`.
    pub delta: f64,
    /// `Delta / delta`.
    pub k: f64,
    /// `max{4 Delta, 2 Delta^2 e^t / (lambda t)}`.
    pub k_cap: f64,
    /// `ln C`; `C` itself overflows `f64` for most inputs.
    pub ln_big_c: f64,
    /// `C`, possibly `+inf`.
    pub big_c: f64,
    /// `c = 1 / C`, possibly `0` by underflow or convention.
    pub small_c: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Relative size at which the series for `C` is cut.
const SERIES_REL_TOL: f64 = 1e-12;
const SERIES_MAX_TERMS: usize = 10_000_000;

pub fn sharpness_constants(max_degree: usize, lambda: f64, t: f64) -> Result<SharpnessConstants> {
    if max_degree < 1 {
        return Err(Error::InvalidArgument("the degree bound must be >= 1".into()));
    }
    FrogParams::new(lambda, t)?;
    let d = max_degree as f64;
    let delta = -(-(lambda / d) * t * (-t).exp()).exp_m1();
    let k = d / delta;
    let k_cap = (4.0 * d).max(2.0 * d * d * t.exp() / (lambda * t));
    if lambda == 0.0 || t == 0.0 {
        return Ok(SharpnessConstants {
            max_degree,
            delta,
            k,
            k_cap,
            ln_big_c: f64::INFINITY,
            big_c: f64::INFINITY,
            small_c: 0.0,
        });
    }
    let m = 4.0 * d * d + 2.0 * d.powi(3) * t.exp() / (lambda * t);
    let ln_m = m.ln();
    let one_minus = -(-t).exp_m1();
    let ln_head = (2.0 * (t + 1.0).powi(2) * d / one_minus).ln() + (t + 1.0) * ln_m;
    let ln_term = |r: f64| (r - 1.0) * ln_m + r - t + (r - 1.0) * (t.ln() - r.ln());
    let r0 = (t + 1.0).floor().max(1.0);
    let mut ln_sum = f64::NEG_INFINITY;
    let mut r = r0;
    let mut converged = false;
    for _ in 0..SERIES_MAX_TERMS {
        let lt = ln_term(r);
        ln_sum = log_add_exp(ln_sum, lt);
        let ln_ratio = ln_term(r + 1.0) - lt;
        // Past the peak the term ratio decreases, so the remainder is at most
        // a geometric series started at the next term.
        if ln_ratio < 0.0 {
            let ratio = ln_ratio.exp();
            let ln_rest = ln_term(r + 1.0) - (-ratio).ln_1p();
            if ln_rest - ln_sum < SERIES_REL_TOL.ln() {
                converged = true;
                break;
            }
        }
        r += 1.0;
    }
    if !converged {
        return Err(Error::InvalidArgument("the series for C did not converge within the term cap".into()));
    }
    let ln_tail = (2.0 * t * d * d / one_minus).ln() + ln_sum;
    let ln_big_c = log_add_exp(ln_head, ln_tail);
    Ok(SharpnessConstants { max_degree, delta, k, k_cap, ln_big_c, big_c: ln_big_c.exp(), small_c: (-ln_big_c).exp() })
}

fn domain_with_origin(g: &Graph, set: &[Vertex]) -> Result<HashSet<Vertex>> {
    let domain: HashSet<Vertex> = set.iter().copied().collect();
    if !domain.contains(&g.origin()) {
        return Err(Error::InvalidArgument("the domain must contain the origin".into()));
    }
    Ok(domain)
}

/// Per-replica harpoon sets from the origin inside `S`.
fn harpoon_samples(
    g: &Graph,
    domain: &HashSet<Vertex>,
    params: FrogParams,
    replicas: usize,
    seed: u64,
    purpose: &str,
) -> Result<Vec<(Vec<Vertex>, usize)>> {
    replicate(replicas, |r| {
        let act = restricted_activation(g, domain, g.origin(), &replica_field(seed, purpose, r, params))?;
        let exiters = act.exiters();
        Ok((act.harpoon, exiters))
    })
    .into_iter()
    .collect()
}

/// `sum_x lambda P_x(tau_{S^c} <= t) P(0 harpoon x)` with exact exit
/// probabilities and sampled harpoon indicators.
pub fn phi_hat(g: &Graph, set: &[Vertex], params: FrogParams, replicas: usize, seed: u64) -> Result<Estimate> {
    params.validate()?;
    need_replicas(replicas)?;
    let domain = domain_with_origin(g, set)?;
    let exits = exit_probability_exact(g, set, params.t, DEFAULT_TOL)?;
    let samples = harpoon_samples(g, &domain, params, replicas, seed, "phi")?;
    let values: Vec<f64> =
        samples.iter().map(|(h, _)| h.iter().map(|&x| params.lambda * exits.get(x).unwrap_or(0.0)).sum()).collect();
    Ok(Estimate::from_samples(&values, seed, "exact-exit-x-mc-harpoon"))
}

/// `E|N(S)|`, the mean number of particles at harpoon-reached vertices whose
/// walk leaves `S`; estimates the same quantity as [`phi_hat`] independently.
pub fn exiter_count(g: &Graph, set: &[Vertex], params: FrogParams, replicas: usize, seed: u64) -> Result<Estimate> {
    params.validate()?;
    need_replicas(replicas)?;
    let domain = domain_with_origin(g, set)?;
    let samples = harpoon_samples(g, &domain, params, replicas, seed, "exiters")?;
    let values: Vec<f64> = samples.iter().map(|&(_, e)| e as f64).collect();
    Ok(Estimate::from_samples(&values, seed, "mc-exiters"))
}

/// `phi` weighted by `E_x[N(t) | tau_{S^c} <= t]`.
#[derive(Clone, Debug, Serialize)]
pub struct PhiTilde {
    pub estimate: Estimate,
    /// Vertices whose conditional mean fell back to the `Delta^D (t + D)` cap because no
    /// sampled walk left `S`.
    pub capped: Vec<Vertex>,
}

pub fn phi_tilde_hat(g: &Graph, set: &[Vertex], params: FrogParams, replicas: usize, seed: u64) -> Result<PhiTilde> {
    params.validate()?;
    need_replicas(replicas)?;
    let domain = domain_with_origin(g, set)?;
    let exits = exit_probability_exact(g, set, params.t, DEFAULT_TOL)?;
    let samples = harpoon_samples(g, &domain, params, replicas, seed, "phi")?;
    let mut reached: Vec<Vertex> =
        samples.iter().flat_map(|(h, _)| h.iter().copied()).collect::<HashSet<_>>().into_iter().collect();
    reached.sort_unstable();

    // Conditional jump means and their squared standard errors.
    let delta = g.max_out_degree() as f64;
    let mut cond: HashMap<Vertex, (f64, f64)> = HashMap::new();
    let mut capped = Vec::new();
    let key = derive_path(seed, &[label_hash("phi-tilde-jumps")]);
    for &x in &reached {
        let draws = replicate(replicas, |r| {
            let w = sample_trajectory(g, x, params.t, &mut crate::rng::stream(derive_path(key, &[x as u64, r])));
            w.leaves(|v| domain.contains(&v)).then_some(w.jump_count() as f64)
        });
        let acc: Vec<f64> = draws.into_iter().flatten().collect();
        if acc.is_empty() {
            let dx = distance_out(g, &domain, x).unwrap_or(1) as i32;
            cond.insert(x, (delta.powi(dx) * (params.t + f64::from(dx)), 0.0));
            capped.push(x);
        } else {
            let e = Estimate::from_samples(&acc, seed, "");
            cond.insert(x, (e.mean, e.stderr * e.stderr));
        }
    }
    let weight = |x: Vertex| params.lambda * exits.get(x).unwrap_or(0.0);
    let values: Vec<f64> = samples.iter().map(|(h, _)| h.iter().map(|&x| weight(x) * cond[&x].0).sum()).collect();
    let mut est = Estimate::from_samples(&values, seed, "exact-exit-x-mc-harpoon-x-mc-jumps");
    // Delta method: add the uncertainty of the conditional means.
    let mut freq: HashMap<Vertex, f64> = HashMap::new();
    for (h, _) in &samples {
        for &x in h {
            *freq.entry(x).or_insert(0.0) += 1.0 / replicas as f64;
        }
    }
    let extra: f64 = reached.iter().map(|&x| (weight(x) * freq[&x]).powi(2) * cond[&x].1).sum();
    est.stderr = (est.stderr * est.stderr + extra).sqrt();
    Ok(PhiTilde { estimate: est, capped })
}

fn distance_out(g: &Graph, domain: &HashSet<Vertex>, x: Vertex) -> Option<usize> {
    let mut seen = HashSet::from([x]);
    let mut frontier = vec![x];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for v in frontier {
            for u in g.neighbors(v) {
                if !domain.contains(&u) {
                    return Some(d);
                }
                if seen.insert(u) {
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    None
}

/// Both sharpness functionals on one domain, with the constants they are
/// compared against.
#[derive(Clone, Debug, Serialize)]
pub struct PhiReport {
    pub domain: String,
    pub phi_hat: Estimate,
    pub phi_tilde_hat: Estimate,
    pub constants: SharpnessConstants,
    /// `phi_hat + 3 se < c`.
    pub subcritical: bool,
}

pub fn phi_report(
    g: &Graph,
    set: &[Vertex],
    label: &str,
    params: FrogParams,
    replicas: usize,
    seed: u64,
) -> Result<PhiReport> {
    let phi = phi_hat(g, set, params, replicas, seed)?;
    let tilde = phi_tilde_hat(g, set, params, replicas, seed)?;
    let constants = sharpness_constants(g.max_out_degree().max(1), params.lambda, params.t)?;
    Ok(PhiReport {
        domain: label.to_string(),
        subcritical: phi.upper(3.0) < constants.small_c,
        phi_hat: phi,
        phi_tilde_hat: tilde.estimate,
        constants,
    })
}

/// Which parameter a search moves; the other is held at the given value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParameter {
    /// Search over `lambda` at fixed `t`.
    Lambda { t: f64 },
    /// Search over `t` at fixed `lambda`.
    Lifespan { lambda: f64 },
}

impl FreeParameter {
    pub fn params(&self, value: f64) -> Result<FrogParams> {
        match *self {
            FreeParameter::Lambda { t } => FrogParams::new(value, t),
            FreeParameter::Lifespan { lambda } => FrogParams::new(lambda, value),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalBracket {
    pub lo: f64,
    pub hi: f64,
    pub parameter: FreeParameter,
    pub at_lo: Estimate,
    pub at_hi: Estimate,
    pub notes: Vec<String>,
}

/// Settings of [`critical_bisection`].
#[derive(Clone, Copy, Debug)]
pub struct BisectionConfig {
    pub radius: usize,
    pub threshold: f64,
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub replicas: usize,
    /// Replicas double at an ambiguous midpoint up to this cap.
    pub max_replicas: usize,
    pub seed: u64,
}

/// Bisects on `survival(n) = threshold`, moving an end only when the midpoint
/// estimate is 3 standard errors away from the threshold.
pub fn critical_bisection(g: &Graph, free: FreeParameter, cfg: BisectionConfig) -> Result<CriticalBracket> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::InvalidArgument("threshold must lie in (0, 1)".into()));
    }
    if !(cfg.lo < cfg.hi) || !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("need lo < hi and tol > 0".into()));
    }
    let eval = |v: f64, n: usize| survival_probability(g, free.params(v)?, cfg.radius, n, cfg.seed);
    let mut at_lo = eval(cfg.lo, cfg.replicas)?;
    let mut at_hi = eval(cfg.hi, cfg.replicas)?;
    if at_hi.lower(3.0) <= cfg.threshold {
        return Err(Error::NoCrossing { threshold: cfg.threshold, lo: cfg.lo, hi: cfg.hi });
    }
    let mut notes = Vec::new();
    if at_lo.upper(3.0) >= cfg.threshold {
        notes.push("survival at the lower end is not confidently below the threshold".into());
    }
    let (mut lo, mut hi) = (cfg.lo, cfg.hi);
    let mut replicas = cfg.replicas;
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        let e = eval(mid, replicas)?;
        if e.lower(3.0) > cfg.threshold {
            hi = mid;
            at_hi = e;
        } else if e.upper(3.0) < cfg.threshold {
            lo = mid;
            at_lo = e;
        } else if replicas * 2 <= cfg.max_replicas {
            replicas *= 2;
        } else {
            notes.push(format!("midpoint {mid} stayed within 3 s.e. of the threshold at {replicas} replicas"));
            break;
        }
    }
    Ok(CriticalBracket { lo, hi, parameter: free, at_lo, at_hi, notes })
}

/// One grid point of the ball-restricted tilde scan.
#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub t: f64,
    /// `min over the radii of phi_hat(B(r))`.
    pub inf_phi: Estimate,
    pub argmin_radius: usize,
    pub small_c: f64,
    pub ln_big_c: f64,
    /// `inf_phi + 3 se < c`.
    pub subcritical: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TildeScan {
    pub rows: Vec<ScanRow>,
    /// Grid values around the last change of the subcritical flag.
    pub crossing: Option<(f64, f64)>,
    pub note: &'static str,
}

pub fn tilde_critical_scan(
    g: &Graph,
    free: FreeParameter,
    radii: &[usize],
    grid: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<TildeScan> {
    if radii.is_empty() || grid.is_empty() {
        return Err(Error::InvalidArgument("radii and grid must be non-empty".into()));
    }
    let delta = g.max_out_degree().max(1);
    let balls: Vec<Vec<Vertex>> = radii.iter().map(|&r| g.ball(g.origin(), r)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for &v in grid {
        let params = free.params(v)?;
        let mut best: Option<(Estimate, usize)> = None;
        for (ball, &r) in balls.iter().zip(radii) {
            let e = phi_hat(g, ball, params, replicas, seed)?;
            if best.as_ref().is_none_or(|(b, _)| e.mean < b.mean) {
                best = Some((e, r));
            }
        }
        let (inf_phi, argmin_radius) = best.unwrap();
        let k = sharpness_constants(delta, params.lambda, params.t)?;
        rows.push(ScanRow {
            lambda: params.lambda,
            t: params.t,
            subcritical: inf_phi.upper(3.0) < k.small_c,
            inf_phi,
            argmin_radius,
            small_c: k.small_c,
            ln_big_c: k.ln_big_c,
        });
    }
    let crossing = rows
        .windows(2)
        .rfind(|w| w[0].subcritical != w[1].subcritical)
        .map(|w| (grid_value(free, &w[0]), grid_value(free, &w[1])));
    Ok(TildeScan { rows, crossing, note: "ball-restricted infimum; brackets the tilde parameter from one side" })
}

fn grid_value(free: FreeParameter, row: &ScanRow) -> f64 {
    match free {
        FreeParameter::Lambda { .. } => row.lambda,
        FreeParameter::Lifespan { .. } => row.t,
    }
}

/// Direction of the finite difference in [`russo_inequality_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Lambda(f64),
    Lifespan(f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct RussoReport {
    /// Central difference of `P(0 -> Lambda^c)` under common random numbers.
    pub derivative: Estimate,
    pub probability: Estimate,
    /// `inf over balls S in Lambda of phi_hat(S)`.
    pub inf_phi: Estimate,
    /// `prefactor * inf_phi * (1 - P)`.
    pub rhs: Estimate,
    /// `derivative >= rhs - 3 se` with the standard errors combined.
    pub holds: bool,
    /// The difference estimate is resolved (nonzero and at least 3 s.e.).
    pub precise: bool,
}

/// Finite-difference form of the differential inequalities for
/// `P(0 -> B(radius)^c)`, with `S` ranging over the balls inside `B(radius)`.
pub fn russo_inequality_check(
    g: &Graph,
    radius: usize,
    params: FrogParams,
    step: Perturbation,
    replicas: usize,
    seed: u64,
) -> Result<RussoReport> {
    params.validate()?;
    need_replicas(replicas)?;
    let shift = |s: f64| -> Result<FrogParams> {
        match step {
            Perturbation::Lambda(h) => FrogParams::new(params.lambda + s * h, params.t),
            Perturbation::Lifespan(h) => FrogParams::new(params.lambda, params.t + s * h),
        }
    };
    let h = match step {
        Perturbation::Lambda(h) | Perturbation::Lifespan(h) => h,
    };
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("the finite-difference step must be positive".into()));
    }
    let n = radius + 1;
    let lo = survival_indicators(g, shift(-1.0)?, n, replicas, seed)?;
    let mid = survival_indicators(g, params, n, replicas, seed)?;
    let hi = survival_indicators(g, shift(1.0)?, n, replicas, seed)?;
    let diffs: Vec<f64> =
        lo.iter().zip(&hi).map(|(&a, &b)| (f64::from(u8::from(b)) - f64::from(u8::from(a))) / (2.0 * h)).collect();
    let derivative = Estimate::from_samples(&diffs, seed, "crn-central-difference");
    let probability = Estimate::proportion(mid.iter().filter(|&&b| b).count(), replicas, seed, "mc-survival");

    let mut inf_phi: Option<Estimate> = None;
    for r in 0..=radius {
        let e = phi_hat(g, &g.ball(g.origin(), r)?, params, replicas, derive(seed, r as u64))?;
        if inf_phi.as_ref().is_none_or(|b| e.mean < b.mean) {
            inf_phi = Some(e);
        }
    }
    let inf_phi = inf_phi.unwrap();
    let prefactor = match step {
        Perturbation::Lambda(_) => 1.0 / params.lambda,
        Perturbation::Lifespan(_) => params.lambda * (-params.t).exp() / params.t,
    };
    let q = 1.0 - probability.mean;
    let rhs_mean = prefactor * inf_phi.mean * q;
    let rhs_se = prefactor * ((inf_phi.stderr * q).powi(2) + (inf_phi.mean * probability.stderr).powi(2)).sqrt();
    let rhs = Estimate { mean: rhs_mean, stderr: rhs_se, replicas, seed, method: "ball-restricted-rhs".into() };
    let combined = (derivative.stderr.powi(2) + rhs_se.powi(2)).sqrt();
    Ok(RussoReport {
        holds: derivative.mean >= rhs_mean - 3.0 * combined,
        precise: derivative.mean > 3.0 * derivative.stderr,
        derivative,
        probability,
        inf_phi,
        rhs,
    })
}

/// Galton-Watson process with offspring pgf `exp(lambda (e^{t(s-1)} - 1))`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GwOracle {
    pub mean: f64,
    pub extinction: f64,
    /// `|f(q) - q|`.
    pub residual: f64,
    /// Some `s` in `(1, 2]` has `f(s) < s`, so the total progeny has an
    /// exponential moment.
    pub exponential_moment: bool,
}

pub fn gw_pgf(lambda: f64, t: f64, s: f64) -> f64 {
    (lambda * (t * (s - 1.0)).exp_m1()).exp()
}

pub fn gw_oracle(lambda: f64, t: f64, tol: f64) -> Result<GwOracle> {
    FrogParams::new(lambda, t)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let f = |s: f64| gw_pgf(lambda, t, s);
    let mean = lambda * t;
    let extinction = if mean <= 1.0 {
        1.0
    } else {
        let mut q = 0.0;
        for _ in 0..100_000 {
            let next = f(q);
            let done = (next - q).abs() < tol;
            q = next;
            if done {
                break;
            }
        }
        // Newton polish on f(s) - s; f'(s) = f(s) lambda t e^{t(s-1)}.
        for _ in 0..50 {
            let fq = f(q);
            let d = fq * lambda * t * (t * (q - 1.0)).exp() - 1.0;
            let step = (fq - q) / d;
            q -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        q
    };
    let exponential_moment = (1..=1000).any(|i| {
        let s = 1.0 + f64::from(i) / 1000.0;
        f(s) < s
    });
    Ok(GwOracle { mean, extinction, residual: (f(extinction) - extinction).abs(), exponential_moment })
}

/// The lifespan above which a non-amenable network is supercritical at density `lambda`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NonamenableBound {
    pub bound: f64,
    /// `log_rho((1 - rho) / (32 K))`.
    pub log_term: f64,
    /// `1 / (4 ceil(log_term))`.
    pub alpha: f64,
}

pub fn nonamenable_t_bound(rho: f64, control: f64, lambda: f64) -> Result<NonamenableBound> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("spectral radius must be positive, got {rho}")));
    }
    if rho >= 1.0 {
        return Err(Error::Amenable(rho));
    }
    if !(control >= 1.0) {
        return Err(Error::InvalidArgument(format!("control constant must be >= 1, got {control}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let log_term = ((1.0 - rho) / (32.0 * control)).ln() / rho.ln();
    let bound = 200.0 * control * control * (log_term + 1.0) / ((1.0 - rho).powi(2) * lambda.min(1.0));
    Ok(NonamenableBound { bound, log_term, alpha: 1.0 / (4.0 * log_term.ceil()) })
}

/// Estimated good set `G_A = {x in A : P_x(|R(t) \ A| > alpha t) >= (1 - rho) / (4K)}`.
#[derive(Clone, Debug, Serialize)]
pub struct GoodSet {
    pub members: Vec<Vertex>,
    pub fraction: f64,
    /// `(1 - rho) / (4K)`, the membership threshold.
    pub threshold: f64,
    /// `(1 - rho) / (2K)`, the guaranteed fraction.
    pub guaranteed_fraction: f64,
    pub per_vertex: Vec<(Vertex, Estimate)>,
}

#[allow(clippy::too_many_arguments)]
pub fn good_set_estimate(
    g: &Graph,
    set: &[Vertex],
    t: f64,
    alpha: f64,
    rho: f64,
    control: f64,
    replicas: usize,
    seed: u64,
) -> Result<GoodSet> {
    need_replicas(replicas)?;
    if set.is_empty() || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("need a non-empty set and alpha > 0".into()));
    }
    let domain: HashSet<Vertex> = set.iter().copied().collect();
    let key = derive_path(seed, &[label_hash("good-set")]);
    let mut per_vertex = Vec::with_capacity(set.len());
    for &x in set {
        let hits = replicate(replicas, |r| {
            let w = sample_trajectory(g, x, t, &mut crate::rng::stream(derive_path(key, &[x as u64, r])));
            let outside = w.range().into_iter().filter(|v| !domain.contains(v)).count();
            outside as f64 > alpha * t
        });
        per_vertex
            .push((x, Estimate::proportion(hits.iter().filter(|&&h| h).count(), replicas, seed, "mc-range-outside")));
    }
    let threshold = (1.0 - rho) / (4.0 * control);
    let members: Vec<Vertex> = per_vertex.iter().filter(|(_, e)| e.mean >= threshold).map(|&(x, _)| x).collect();
    Ok(GoodSet {
        fraction: members.len() as f64 / set.len() as f64,
        members,
        threshold,
        guaranteed_fraction: (1.0 - rho) / (2.0 * control),
        per_vertex,
    })
}
