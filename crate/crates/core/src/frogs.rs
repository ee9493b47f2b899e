//! The frog-model engine: lazily sampled particle fields and activation
//! explorations over them.
//!
//! A field is a pure function of its key. The particle count at `x` is the
//! Poisson quantile of a uniform read off `(key, x)`, and particle `i` at `x`
//! walks with its own stream keyed by `(key, x, i)`. Fields with the same key
//! and larger density or lifespan therefore contain the smaller ones: counts
//! grow with `lambda` and each walk for `t` is a prefix of the walk for `t' > t`.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{replicate, Estimate};
use crate::graph::{Graph, Vertex};
use crate::rng::{derive, derive_path, label_hash, stream, unit_from_key};
use crate::walks::{sample_trajectory, Trajectory};

/// Particle density and lifespan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrogParams {
    pub lambda: f64,
    pub t: f64,
}

impl FrogParams {
    pub fn new(lambda: f64, t: f64) -> Result<Self> {
        let p = Self { lambda, t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::InvalidArgument(format!("t must be finite and >= 0, got {}", self.t)));
        }
        Ok(())
    }
}

/// Smallest `k` with `P(Po(lambda) <= k) > u`.
pub fn poisson_quantile(lambda: f64, u: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while cdf <= u {
        k += 1;
        p *= lambda / k as f64;
        if p == 0.0 && k as f64 > lambda {
            break;
        }
        cdf += p;
    }
    k
}

/// A lazily sampled Poisson particle configuration with walks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleField {
    key: u64,
    pub params: FrogParams,
}

impl ParticleField {
    pub fn new(seed: u64, params: FrogParams) -> Self {
        Self { key: derive(seed, label_hash("particle-field")), params }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// An independent field with the same parameters.
    pub fn refreshed(&self, counter: u64) -> Self {
        Self { key: derive(self.key, counter), params: self.params }
    }

    /// The same randomness read at other parameters (the monotone coupling).
    pub fn with_params(&self, params: FrogParams) -> Self {
        Self { key: self.key, params }
    }

    /// Uniform mark driving the particle count at `x`.
    pub fn count_mark(&self, x: Vertex) -> f64 {
        unit_from_key(derive_path(self.key, &[x as u64, u64::MAX]))
    }

    /// `eta_x`; frontier vertices carry no particles.
    pub fn count(&self, g: &Graph, x: Vertex) -> usize {
        if g.is_boundary(x) {
            return 0;
        }
        poisson_quantile(self.params.lambda, self.count_mark(x))
    }

    pub fn trajectory(&self, g: &Graph, x: Vertex, i: usize) -> Trajectory {
        let mut rng = stream(derive_path(self.key, &[x as u64, i as u64]));
        sample_trajectory(g, x, self.params.t, &mut rng)
    }

    /// `(eta_x, walks)`, identical on every call.
    pub fn particles(&self, g: &Graph, x: Vertex) -> Vec<Trajectory> {
        (0..self.count(g, x)).map(|i| self.trajectory(g, x, i)).collect()
    }
}

/// Anything that assigns walks to the particles of a vertex.
pub trait ParticleSource {
    fn particles(&self, g: &Graph, x: Vertex) -> Vec<Trajectory>;
}

impl ParticleSource for ParticleField {
    fn particles(&self, g: &Graph, x: Vertex) -> Vec<Trajectory> {
        ParticleField::particles(self, g, x)
    }
}

/// Order in which active particles are revealed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Fifo,
    Lifo,
    Random,
}

impl Schedule {
    pub const ALL: [Schedule; 3] = [Schedule::Fifo, Schedule::Lifo, Schedule::Random];
}

/// When an exploration may stop before exhausting the cluster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once a vertex at distance `>= n` from the origin is activated.
    /// `Some(0)` stops at the first vertex other than the origin.
    pub radius: Option<usize>,
    /// Stop once more than this many particles have been activated.
    pub particle_budget: Option<usize>,
    /// Stop once this many vertices have been activated.
    pub vertex_budget: Option<usize>,
}

impl StopRule {
    pub fn exhaust() -> Self {
        Self::default()
    }

    pub fn radius(n: usize) -> Self {
        Self { radius: Some(n), ..Self::default() }
    }

    pub fn with_particle_budget(mut self, b: usize) -> Self {
        self.particle_budget = Some(b);
        self
    }

    pub fn with_vertex_budget(mut self, b: usize) -> Self {
        self.vertex_budget = Some(b);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Exhausted,
    RadiusReached,
    ParticleBudget,
    VertexBudget,
}

/// The activated set of an exploration from the origin.
#[derive(Clone, Debug, Serialize)]
pub struct Cluster {
    pub activation_order: Vec<Vertex>,
    /// Particles at activated vertices.
    pub total_particles: usize,
    pub reached_radius: usize,
    pub stop_reason: StopReason,
    /// Some activated walk met the truncation frontier.
    pub touched_boundary: bool,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.activation_order.len()
    }

    pub fn activated(&self) -> HashSet<Vertex> {
        self.activation_order.iter().copied().collect()
    }

    pub fn sorted(&self) -> Vec<Vertex> {
        let mut v = self.activation_order.clone();
        v.sort_unstable();
        v
    }
}

enum Pending {
    Fifo(VecDeque<(Vertex, usize)>),
    Lifo(Vec<(Vertex, usize)>),
    Random(Vec<(Vertex, usize)>, Box<crate::rng::StreamRng>),
}

impl Pending {
    fn new(schedule: Schedule, key: u64) -> Self {
        match schedule {
            Schedule::Fifo => Self::Fifo(VecDeque::new()),
            Schedule::Lifo => Self::Lifo(Vec::new()),
            Schedule::Random => Self::Random(Vec::new(), Box::new(stream(derive(key, label_hash("schedule"))))),
        }
    }

    fn push(&mut self, item: (Vertex, usize)) {
        match self {
            Self::Fifo(q) => q.push_back(item),
            Self::Lifo(s) | Self::Random(s, _) => s.push(item),
        }
    }

    fn pop(&mut self) -> Option<(Vertex, usize)> {
        match self {
            Self::Fifo(q) => q.pop_front(),
            Self::Lifo(s) => s.pop(),
            Self::Random(s, rng) => {
                if s.is_empty() {
                    None
                } else {
                    let i = rng.random_range(0..s.len());
                    Some(s.swap_remove(i))
                }
            }
        }
    }
}

/// Reveals active particles one at a time in `schedule` order, activating the
/// particles of every newly visited vertex, until nothing is active or `stop`
/// fires. Without a stop rule the activated set is the same for every schedule.
pub fn explore_cluster(g: &Graph, field: &ParticleField, stop: StopRule, schedule: Schedule) -> Cluster {
    let origin = g.origin();
    let mut visited: HashSet<Vertex> = HashSet::new();
    let mut order = Vec::new();
    let mut pending = Pending::new(schedule, field.key());
    let mut total = 0usize;
    let mut reached = 0usize;
    let mut touched = false;

    // Returns a stop reason if activating `v` ends the exploration.
    let mut activate =
        |v: Vertex, pending: &mut Pending, order: &mut Vec<Vertex>, total: &mut usize| -> Option<StopReason> {
            order.push(v);
            let d = g.depth(v);
            reached = reached.max(d);
            if g.is_boundary(v) {
                touched = true;
            }
            let eta = field.count(g, v);
            *total += eta;
            for i in 0..eta {
                pending.push((v, i));
            }
            match stop.radius {
                Some(0) if v != origin => return Some(StopReason::RadiusReached),
                Some(n) if n > 0 && d >= n => return Some(StopReason::RadiusReached),
                _ => {}
            }
            if stop.particle_budget.is_some_and(|b| *total > b) {
                return Some(StopReason::ParticleBudget);
            }
            if stop.vertex_budget.is_some_and(|b| order.len() >= b) {
                return Some(StopReason::VertexBudget);
            }
            None
        };

    visited.insert(origin);
    let mut reason = activate(origin, &mut pending, &mut order, &mut total);
    'outer: while reason.is_none() {
        let Some((x, i)) = pending.pop() else { break };
        let walk = field.trajectory(g, x, i);
        for v in walk.jumps {
            if visited.insert(v) {
                reason = activate(v, &mut pending, &mut order, &mut total);
                if reason.is_some() {
                    break 'outer;
                }
            }
        }
    }
    Cluster {
        activation_order: order,
        total_particles: total,
        reached_radius: reached,
        stop_reason: reason.unwrap_or(StopReason::Exhausted),
        touched_boundary: touched,
    }
}

/// Harpoon connectivity inside `S` from a root, and the particles leaving `S`.
#[derive(Clone, Debug, Serialize)]
pub struct RestrictedActivation {
    pub root: Vertex,
    /// Vertices `x` with `root` harpoon-connected to `x` inside `S`, in
    /// discovery order; always starts with the root.
    pub harpoon: Vec<Vertex>,
    /// `A_S(x)` for every harpoon-reached `x`: indices of particles at `x`
    /// whose walk never leaves `S`.
    pub stay_sets: HashMap<Vertex, Vec<usize>>,
    /// Walks of particles at harpoon-reached vertices that leave `S`.
    pub exiting: Vec<Trajectory>,
}

impl RestrictedActivation {
    /// `|N(S)|`.
    pub fn exiters(&self) -> usize {
        self.exiting.len()
    }

    pub fn reaches(&self, x: Vertex) -> bool {
        self.stay_sets.contains_key(&x)
    }

    /// `| union over exiting walks of (range minus its start) |`.
    pub fn children(&self) -> HashSet<Vertex> {
        let mut out = HashSet::new();
        for w in &self.exiting {
            out.extend(w.jumps.iter().copied().filter(|&v| v != w.start));
        }
        out
    }
}

/// Reachability over arrows `x => y` with `y` on a walk from `x` that stays in
/// `S`. The root reaches itself through the empty chain.
pub fn restricted_activation(
    g: &Graph,
    set: &HashSet<Vertex>,
    root: Vertex,
    field: &ParticleField,
) -> Result<RestrictedActivation> {
    if !set.contains(&root) {
        return Err(Error::InvalidArgument(format!("root {root} is not in the domain")));
    }
    let mut harpoon = vec![root];
    let mut stay_sets = HashMap::new();
    let mut exiting = Vec::new();
    stay_sets.insert(root, Vec::new());
    let mut head = 0;
    while head < harpoon.len() {
        let x = harpoon[head];
        head += 1;
        let mut stays = Vec::new();
        for (i, walk) in field.particles(g, x).into_iter().enumerate() {
            if walk.leaves(|v| set.contains(&v)) {
                exiting.push(walk);
                continue;
            }
            stays.push(i);
            for &v in &walk.jumps {
                if let std::collections::hash_map::Entry::Vacant(e) = stay_sets.entry(v) {
                    e.insert(Vec::new());
                    harpoon.push(v);
                }
            }
        }
        stay_sets.insert(x, stays);
    }
    Ok(RestrictedActivation { root, harpoon, stay_sets, exiting })
}

/// Vertices of `B` activated from `x` when only particles starting in `B` may
/// be woken. Walks may wander outside `B`; vertices they visit there are not
/// recorded and wake nothing.
pub fn local_activation<P: ParticleSource + ?Sized>(
    g: &Graph,
    ball: &HashSet<Vertex>,
    x: Vertex,
    field: &P,
) -> Vec<Vertex> {
    let mut seen: HashSet<Vertex> = HashSet::from([x]);
    let mut order = vec![x];
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for walk in field.particles(g, v) {
            for &u in &walk.jumps {
                if ball.contains(&u) && seen.insert(u) {
                    order.push(u);
                }
            }
        }
    }
    order
}

/// Good vertices of `B`: those whose `B`-local activation reaches a quarter
/// of `B`. Each candidate explores its own fresh field.
pub fn good_vertices(g: &Graph, ball: &[Vertex], params: FrogParams, seed: u64) -> Vec<Vertex> {
    let set: HashSet<Vertex> = ball.iter().copied().collect();
    let base = ParticleField::new(derive(seed, label_hash("good-vertices")), params);
    let mut good: Vec<Vertex> = ball
        .iter()
        .copied()
        .filter(|&x| 4 * local_activation(g, &set, x, &base.refreshed(x as u64)).len() >= set.len())
        .collect();
    good.sort_unstable();
    good
}

/// Generation sizes of one run of the subcritical exploration process.
#[derive(Clone, Debug, Serialize)]
pub struct EpSample {
    pub generations: Vec<usize>,
    /// `sum (|range| - 1)` over exiting walks of the first generation.
    pub first_jump_sum: usize,
    /// Jumps of exiting walks of the first generation, `sum N(t)`.
    pub first_jump_count: usize,
    pub extinct: bool,
    /// Some translated domain touched the truncation frontier.
    pub touched_boundary: bool,
}

/// Runs the exploration process with domain `B_p(radius)` around each parent
/// `p`, refreshing the field for every parent, for at most `max_generations`
/// generations or `budget` individuals.
pub fn ep_exploration_sample(
    g: &Graph,
    radius: usize,
    params: FrogParams,
    seed: u64,
    max_generations: usize,
    budget: usize,
) -> Result<EpSample> {
    params.validate()?;
    let base = ParticleField::new(derive(seed, label_hash("ep")), params);
    let mut generations = vec![1usize];
    let mut parents = vec![g.origin()];
    let mut touched = false;
    let mut first_jump_sum = 0;
    let mut first_jump_count = 0;
    let mut total = 1usize;
    for gen in 0..max_generations {
        let mut next = Vec::new();
        for (idx, &p) in parents.iter().enumerate() {
            let domain: HashSet<Vertex> = g.ball(p, radius)?.into_iter().collect();
            if domain.iter().any(|&v| g.is_boundary(v)) {
                touched = true;
            }
            let field = base.refreshed(derive(gen as u64, idx as u64));
            let act = restricted_activation(g, &domain, p, &field)?;
            if gen == 0 {
                for w in &act.exiting {
                    first_jump_sum += w.range().len() - 1;
                    first_jump_count += w.jump_count();
                }
            }
            let mut kids: Vec<Vertex> = act.children().into_iter().collect();
            kids.sort_unstable();
            next.extend(kids);
        }
        total += next.len();
        generations.push(next.len());
        if next.is_empty() {
            return Ok(EpSample {
                generations,
                first_jump_sum,
                first_jump_count,
                extinct: true,
                touched_boundary: touched,
            });
        }
        if total > budget {
            break;
        }
        parents = next;
    }
    Ok(EpSample { generations, first_jump_sum, first_jump_count, extinct: false, touched_boundary: touched })
}

/// `{x in S : d(x, S^c) = r}` for `r = 1..`, indexed from `r = 1`.
pub fn distance_shells(g: &Graph, set: &[Vertex]) -> Vec<Vec<Vertex>> {
    let dist = g.distance_to_complement(set);
    let mut shells: Vec<Vec<Vertex>> = Vec::new();
    let mut keys: Vec<Vertex> = set.to_vec();
    keys.sort_unstable();
    keys.dedup();
    for x in keys {
        if let Some(Some(d)) = dist.get(&x) {
            if shells.len() < *d {
                shells.resize(*d, Vec::new());
            }
            shells[d - 1].push(x);
        }
    }
    shells
}

/// `E|A_r|` for each distance shell, `A_r` the harpoon-reached part of shell `r`.
pub fn sphere_activation_profile(
    g: &Graph,
    set: &[Vertex],
    params: FrogParams,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    params.validate()?;
    if replicas == 0 {
        return Err(Error::InvalidArgument("replicas must be >= 1".into()));
    }
    let domain: HashSet<Vertex> = set.iter().copied().collect();
    let shells = distance_shells(g, set);
    let base = ParticleField::new(derive(seed, label_hash("shells")), params);
    let counts = replicate(replicas, |r| {
        let act = restricted_activation(g, &domain, g.origin(), &base.refreshed(r))?;
        Ok(shells.iter().map(|s| s.iter().filter(|&&x| act.reaches(x)).count()).collect::<Vec<usize>>())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((0..shells.len())
        .map(|r| {
            let v: Vec<f64> = counts.iter().map(|c| c[r] as f64).collect();
            Estimate::from_samples(&v, seed, "mc-shell-activation")
        })
        .collect())
}

/// `E_x[N(t) | tau_{S^c} <= t]` by rejection.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionalJumps {
    pub estimate: Estimate,
    pub accepted: usize,
    pub exit_frequency: f64,
    /// `Delta^{D_x} (t + D_x)`, `D_x` the distance from `x` to `S^c`.
    pub bound: f64,
}

pub fn exit_conditional_jumps(
    g: &Graph,
    set: &[Vertex],
    x: Vertex,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<ConditionalJumps> {
    let domain: HashSet<Vertex> = set.iter().copied().collect();
    if !domain.contains(&x) {
        return Err(Error::InvalidArgument(format!("start {x} is not in the domain")));
    }
    if replicas == 0 {
        return Err(Error::InvalidArgument("replicas must be >= 1".into()));
    }
    let key = derive_path(seed, &[label_hash("conditional-jumps"), x as u64]);
    let draws = replicate(replicas, |r| {
        let w = sample_trajectory(g, x, t, &mut stream(derive(key, r)));
        w.leaves(|v| domain.contains(&v)).then_some(w.jump_count() as f64)
    });
    let accepted: Vec<f64> = draws.into_iter().flatten().collect();
    let exit_frequency = accepted.len() as f64 / replicas as f64;
    if accepted.is_empty() {
        return Err(Error::NoAcceptedSamples { exit_probability: exit_frequency, replicas });
    }
    let dx = distance_to_complement_of(g, &domain, x).unwrap_or(1) as i32;
    let delta = g.max_out_degree() as f64;
    Ok(ConditionalJumps {
        estimate: Estimate::from_samples(&accepted, seed, "mc-rejection"),
        accepted: accepted.len(),
        exit_frequency,
        bound: delta.powi(dx) * (t + f64::from(dx)),
    })
}

fn distance_to_complement_of(g: &Graph, domain: &HashSet<Vertex>, x: Vertex) -> Option<usize> {
    let mut seen = HashSet::from([x]);
    let mut q = VecDeque::from([(x, 0usize)]);
    while let Some((v, d)) = q.pop_front() {
        for u in g.neighbors(v) {
            if !domain.contains(&u) {
                return Some(d + 1);
            }
            if seen.insert(u) {
                q.push_back((u, d + 1));
            }
        }
    }
    None
}
