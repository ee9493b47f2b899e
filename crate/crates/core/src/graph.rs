//! Finite graph instances: lattice boxes, regular trees, ladders and weighted
//! networks read from file.
//!
//! Vertices are dense integers in BFS order from the origin, so the origin is
//! always vertex `0` and `depth` is non-decreasing in the vertex id. Infinite
//! graphs are truncated; the truncation frontier is the `boundary` set.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vertex = usize;

/// Default cap on the number of vertices a spec may build.
pub const DEFAULT_VERTEX_BUDGET: usize = 8_000_000;

/// What happens to a walk that reaches the truncation frontier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// The walk enters the boundary vertex and stops there.
    Absorbing,
    /// The walk is killed by the step into the boundary; the boundary vertex
    /// is never part of a range.
    OpenKilling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum GraphFamily {
    /// The l1 ball of the given radius in the nearest-neighbour lattice Z^d.
    LatticeBox {
        dim: usize,
        radius: usize,
    },
    /// The ball of the given depth in the `degree`-regular tree.
    RegularTree {
        degree: usize,
        depth: usize,
    },
    /// `width` parallel paths over columns `-length..=length`, with rungs.
    Ladder {
        width: usize,
        length: usize,
    },
    WeightedFile {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub family: GraphFamily,
    pub boundary_mode: BoundaryMode,
}

impl GraphSpec {
    pub fn lattice_box(dim: usize, radius: usize, boundary_mode: BoundaryMode) -> Self {
        Self { family: GraphFamily::LatticeBox { dim, radius }, boundary_mode }
    }

    pub fn regular_tree(degree: usize, depth: usize) -> Self {
        Self { family: GraphFamily::RegularTree { degree, depth }, boundary_mode: BoundaryMode::Absorbing }
    }

    pub fn ladder(width: usize, length: usize) -> Self {
        Self { family: GraphFamily::Ladder { width, length }, boundary_mode: BoundaryMode::Absorbing }
    }

    pub fn weighted_file(path: impl Into<PathBuf>) -> Self {
        Self { family: GraphFamily::WeightedFile { path: path.into() }, boundary_mode: BoundaryMode::Absorbing }
    }

    pub fn with_boundary(mut self, mode: BoundaryMode) -> Self {
        self.boundary_mode = mode;
        self
    }

    /// Truncation radius when it is known without building the graph.
    pub fn truncation_radius(&self) -> Option<usize> {
        match self.family {
            GraphFamily::LatticeBox { radius, .. } => Some(radius),
            GraphFamily::RegularTree { depth, .. } => Some(depth),
            GraphFamily::Ladder { length, .. } => Some(length),
            GraphFamily::WeightedFile { .. } => None,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.family {
            GraphFamily::LatticeBox { dim, radius } => {
                if *dim < 1 {
                    out.push("lattice dimension must be >= 1".into());
                }
                if *radius < 1 {
                    out.push("lattice radius must be >= 1".into());
                }
            }
            GraphFamily::RegularTree { degree, depth } => {
                if *degree < 3 {
                    out.push("tree degree must be >= 3".into());
                }
                if *depth < 1 {
                    out.push("tree depth must be >= 1".into());
                }
            }
            GraphFamily::Ladder { width, length } => {
                if *width < 1 {
                    out.push("ladder width must be >= 1".into());
                }
                if *length < 1 {
                    out.push("ladder length must be >= 1".into());
                }
            }
            GraphFamily::WeightedFile { path } => {
                if path.as_os_str().is_empty() {
                    out.push("weighted file path is empty".into());
                }
            }
        }
        out
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.boundary_mode {
            BoundaryMode::Absorbing => "absorbing",
            BoundaryMode::OpenKilling => "open-killing",
        };
        match &self.family {
            GraphFamily::LatticeBox { dim, radius } => write!(f, "lattice:{dim}:{radius}:{mode}"),
            GraphFamily::RegularTree { degree, depth } => write!(f, "tree:{degree}:{depth}"),
            GraphFamily::Ladder { width, length } => write!(f, "ladder:{width}:{length}"),
            GraphFamily::WeightedFile { path } => write!(f, "file:{}", path.display()),
        }
    }
}

impl FromStr for GraphSpec {
    type Err = Error;

    /// `lattice:<d>:<radius>[:absorbing|open-killing]`, `tree:<degree>:<depth>`,
    /// `ladder:<width>:<length>`, `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("cannot parse graph descriptor {s:?}"));
        let num = |p: Option<&str>| -> Result<usize> { p.ok_or_else(bad)?.trim().parse().map_err(|_| bad()) };
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let mut parts = rest.split(':');
        let spec = match kind.trim() {
            "lattice" | "box" => {
                let dim = num(parts.next())?;
                let radius = num(parts.next())?;
                let mode = match parts.next().map(str::trim) {
                    None | Some("absorbing") => BoundaryMode::Absorbing,
                    Some("open-killing") => BoundaryMode::OpenKilling,
                    Some(_) => return Err(bad()),
                };
                GraphSpec::lattice_box(dim, radius, mode)
            }
            "tree" => {
                let degree = num(parts.next())?;
                GraphSpec::regular_tree(degree, num(parts.next())?)
            }
            "ladder" => {
                let width = num(parts.next())?;
                GraphSpec::ladder(width, num(parts.next())?)
            }
            "file" => return Ok(GraphSpec::weighted_file(rest.trim())),
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(spec)
    }
}

/// Coordinates of lattice vertices, kept for the renormalization experiments.
#[derive(Clone, Debug)]
struct LatticeIndex {
    dim: usize,
    radius: i64,
    coords: Vec<i32>,
    index: HashMap<u64, u32>,
}

impl LatticeIndex {
    fn key(&self, c: &[i32]) -> Option<u64> {
        let base = (2 * self.radius + 1) as u64;
        let mut k = 0u64;
        for &x in c.iter().rev() {
            let x = i64::from(x);
            if x.abs() > self.radius {
                return None;
            }
            k = k * base + (x + self.radius) as u64;
        }
        Some(k)
    }
}

/// A finite, locally finite (possibly directed) weighted graph.
#[derive(Clone, Debug)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    /// `None` when every weight is 1.
    weights: Option<Vec<f64>>,
    pi: Vec<f64>,
    directed: bool,
    boundary: Vec<bool>,
    depth: Vec<u32>,
    radius: usize,
    mode: BoundaryMode,
    lattice: Option<LatticeIndex>,
    label: String,
}

impl Graph {
    pub fn vertex_count(&self) -> usize {
        self.pi.len()
    }

    pub fn origin(&self) -> Vertex {
        0
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Largest distance from the origin (the truncation radius).
    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Graph distance from the origin.
    pub fn depth(&self, v: Vertex) -> usize {
        self.depth[v] as usize
    }

    pub fn is_boundary(&self, v: Vertex) -> bool {
        self.boundary[v]
    }

    pub fn boundary_set(&self) -> Vec<Vertex> {
        (0..self.vertex_count()).filter(|&v| self.boundary[v]).collect()
    }

    pub fn interior(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.vertex_count()).filter(|&v| !self.boundary[v])
    }

    pub fn check_vertex(&self, v: Vertex) -> Result<()> {
        if v < self.vertex_count() {
            Ok(())
        } else {
            Err(Error::InvalidVertex(v))
        }
    }

    pub fn require_undirected(&self) -> Result<()> {
        if self.directed {
            Err(Error::DirectedGraph)
        } else {
            Ok(())
        }
    }

    pub fn out_degree(&self, v: Vertex) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Maximum out-degree over interior vertices.
    pub fn max_out_degree(&self) -> usize {
        self.interior().map(|v| self.out_degree(v)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, v: Vertex) -> impl ExactSizeIterator<Item = Vertex> + '_ {
        self.targets[self.offsets[v]..self.offsets[v + 1]].iter().map(|&u| u as usize)
    }

    /// `(neighbor, w(v, neighbor))` pairs.
    pub fn edges(&self, v: Vertex) -> impl Iterator<Item = (Vertex, f64)> + '_ {
        let (a, b) = (self.offsets[v], self.offsets[v + 1]);
        (a..b).map(move |i| (self.targets[i] as usize, self.weights.as_ref().map_or(1.0, |w| w[i])))
    }

    /// `(neighbor, P(v, neighbor))` pairs of the jump chain.
    pub fn transitions(&self, v: Vertex) -> impl Iterator<Item = (Vertex, f64)> + '_ {
        let p = self.pi[v];
        self.edges(v).map(move |(u, w)| (u, w / p))
    }

    pub fn weight(&self, x: Vertex, y: Vertex) -> f64 {
        self.edges(x).filter(|&(u, _)| u == y).map(|(_, w)| w).sum()
    }

    pub fn pi(&self, v: Vertex) -> f64 {
        self.pi[v]
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    /// One jump of the chain `P(x, y) = w(x, y) / pi(x)`.
    pub fn step<R: Rng + ?Sized>(&self, v: Vertex, rng: &mut R) -> Vertex {
        let (a, b) = (self.offsets[v], self.offsets[v + 1]);
        match &self.weights {
            None => self.targets[a + rng.random_range(0..b - a)] as usize,
            Some(w) => {
                let mut u = rng.random::<f64>() * self.pi[v];
                for (&y, &wy) in self.targets[a..b].iter().zip(&w[a..b]) {
                    u -= wy;
                    if u < 0.0 {
                        return y as usize;
                    }
                }
                self.targets[b - 1] as usize
            }
        }
    }

    /// Distances from `x` up to `r`, as `(vertex, distance)` in BFS order.
    pub fn bfs_within(&self, x: Vertex, r: usize) -> Result<Vec<(Vertex, usize)>> {
        self.check_vertex(x)?;
        let mut seen: HashMap<Vertex, usize> = HashMap::new();
        let mut out = vec![(x, 0)];
        seen.insert(x, 0);
        let mut head = 0;
        while head < out.len() {
            let (v, d) = out[head];
            head += 1;
            if d == r {
                continue;
            }
            for u in self.neighbors(v) {
                if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(u) {
                    e.insert(d + 1);
                    out.push((u, d + 1));
                }
            }
        }
        Ok(out)
    }

    /// `{y : d(x, y) <= r}`, sorted.
    pub fn ball(&self, x: Vertex, r: usize) -> Result<Vec<Vertex>> {
        let mut b: Vec<Vertex> = self.bfs_within(x, r)?.into_iter().map(|(v, _)| v).collect();
        b.sort_unstable();
        Ok(b)
    }

    /// `B(r) \ B(r - 1)`, sorted.
    pub fn sphere(&self, x: Vertex, r: usize) -> Result<Vec<Vertex>> {
        let mut s: Vec<Vertex> = self.bfs_within(x, r)?.into_iter().filter(|&(_, d)| d == r).map(|(v, _)| v).collect();
        s.sort_unstable();
        Ok(s)
    }

    /// Distance from every vertex of `set` to the complement of `set`
    /// (out-distance for directed graphs). Vertices with no path out get `None`.
    pub fn distance_to_complement(&self, set: &[Vertex]) -> HashMap<Vertex, Option<usize>> {
        let member: std::collections::HashSet<Vertex> = set.iter().copied().collect();
        // Reverse BFS from the complement restricted to `set` needs in-edges;
        // sets are small, so run a forward BFS from each vertex instead.
        let mut out = HashMap::with_capacity(set.len());
        for &x in set {
            let mut seen = std::collections::HashSet::new();
            let mut q = VecDeque::from([(x, 0usize)]);
            seen.insert(x);
            let mut found = None;
            'bfs: while let Some((v, d)) = q.pop_front() {
                for u in self.neighbors(v) {
                    if !member.contains(&u) {
                        found = Some(d + 1);
                        break 'bfs;
                    }
                    if seen.insert(u) {
                        q.push_back((u, d + 1));
                    }
                }
            }
            out.insert(x, found);
        }
        out
    }

    /// Lattice coordinates of `v` (lattice boxes only).
    pub fn coords(&self, v: Vertex) -> Option<&[i32]> {
        let l = self.lattice.as_ref()?;
        Some(&l.coords[v * l.dim..(v + 1) * l.dim])
    }

    /// Vertex at the given lattice coordinates (lattice boxes only).
    pub fn vertex_at(&self, c: &[i32]) -> Option<Vertex> {
        let l = self.lattice.as_ref()?;
        if c.len() != l.dim {
            return None;
        }
        l.index.get(&l.key(c)?).map(|&v| v as usize)
    }

    pub fn lattice_dim(&self) -> Option<usize> {
        self.lattice.as_ref().map(|l| l.dim)
    }
}

/// Builds a graph with the default vertex budget.
pub fn build_graph(spec: &GraphSpec) -> Result<Graph> {
    build_graph_with_budget(spec, DEFAULT_VERTEX_BUDGET)
}

pub fn build_graph_with_budget(spec: &GraphSpec, budget: usize) -> Result<Graph> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidSpec(problems.join("; ")));
    }
    let label = spec.to_string();
    match &spec.family {
        GraphFamily::LatticeBox { dim, radius } => lattice_box(*dim, *radius, spec.boundary_mode, budget, label),
        GraphFamily::RegularTree { degree, depth } => regular_tree(*degree, *depth, spec.boundary_mode, budget, label),
        GraphFamily::Ladder { width, length } => ladder(*width, *length, spec.boundary_mode, budget, label),
        GraphFamily::WeightedFile { path } => {
            let text = std::fs::read_to_string(path)?;
            parse_weighted(&text, spec.boundary_mode, budget, label)
        }
    }
}

/// Number of points of Z^d within l1 distance r of the origin.
pub fn l1_ball_size(dim: usize, r: usize) -> Option<usize> {
    // |B_d(r)| = sum_k 2^k C(d, k) C(r, k)
    let mut total: u128 = 0;
    for k in 0..=dim.min(r) {
        let term = (1u128 << k) * binom(dim as u128, k as u128)? * binom(r as u128, k as u128)?;
        total = total.checked_add(term)?;
    }
    usize::try_from(total).ok()
}

fn binom(n: u128, k: u128) -> Option<u128> {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

fn lattice_box(dim: usize, radius: usize, mode: BoundaryMode, budget: usize, label: String) -> Result<Graph> {
    let needed = l1_ball_size(dim, radius).unwrap_or(usize::MAX);
    if needed > budget {
        return Err(Error::VertexBudget { needed, budget });
    }
    let r = radius as i64;
    let mut lat = LatticeIndex {
        dim,
        radius: r,
        coords: Vec::with_capacity(needed * dim),
        index: HashMap::with_capacity(needed),
    };
    let origin = vec![0i32; dim];
    lat.index.insert(lat.key(&origin).unwrap(), 0);
    lat.coords.extend_from_slice(&origin);
    let mut depth = vec![0u32];
    let mut adjacency: Vec<Vec<u32>> = Vec::with_capacity(needed);
    let mut head = 0usize;
    let mut c = vec![0i32; dim];
    while head < depth.len() {
        c.copy_from_slice(&lat.coords[head * dim..(head + 1) * dim]);
        let mut nbrs = Vec::with_capacity(2 * dim);
        for axis in 0..dim {
            for delta in [1i32, -1] {
                c[axis] += delta;
                let l1: i64 = c.iter().map(|&x| i64::from(x).abs()).sum();
                if l1 <= r {
                    let key = lat.key(&c).unwrap();
                    let id = match lat.index.get(&key) {
                        Some(&id) => id,
                        None => {
                            let id = depth.len() as u32;
                            lat.index.insert(key, id);
                            lat.coords.extend_from_slice(&c);
                            depth.push(l1 as u32);
                            id
                        }
                    };
                    nbrs.push(id);
                }
                c[axis] -= delta;
            }
        }
        adjacency.push(nbrs);
        head += 1;
    }
    let boundary: Vec<bool> = depth.iter().map(|&d| d as usize == radius).collect();
    let mut g = from_adjacency(adjacency, None, false, depth, boundary, mode, label);
    g.lattice = Some(lat);
    Ok(g)
}

/// Vertex count of the depth-`depth` ball in the `degree`-regular tree.
pub fn tree_size(degree: usize, depth: usize) -> Option<usize> {
    let mut total: usize = 1;
    let mut level: usize = degree;
    for _ in 0..depth {
        total = total.checked_add(level)?;
        level = level.checked_mul(degree - 1)?;
    }
    Some(total)
}

fn regular_tree(degree: usize, depth: usize, mode: BoundaryMode, budget: usize, label: String) -> Result<Graph> {
    let needed = tree_size(degree, depth).unwrap_or(usize::MAX);
    if needed > budget {
        return Err(Error::VertexBudget { needed, budget });
    }
    // BFS numbering: children of each vertex are contiguous and appear in
    // parent order, so child blocks can be assigned by a running counter.
    let mut offsets = Vec::with_capacity(needed + 1);
    let mut targets: Vec<u32> = Vec::with_capacity(2 * needed);
    let mut dep = Vec::with_capacity(needed);
    let mut parent = vec![u32::MAX; needed];
    let mut next_child = 1usize;
    offsets.push(0);
    for v in 0..needed {
        let d = if v == 0 { 0 } else { dep[parent[v] as usize] + 1 };
        dep.push(d);
        if v != 0 {
            targets.push(parent[v]);
        }
        if (d as usize) < depth {
            let k = if v == 0 { degree } else { degree - 1 };
            parent[next_child..next_child + k].fill(v as u32);
            targets.extend((next_child..next_child + k).map(|c| c as u32));
            next_child += k;
        }
        offsets.push(targets.len());
    }
    let boundary = dep.iter().map(|&d| d as usize == depth).collect();
    let pi = (0..needed).map(|v| (offsets[v + 1] - offsets[v]) as f64).collect();
    Ok(Graph {
        offsets,
        targets,
        weights: None,
        pi,
        directed: false,
        boundary,
        depth: dep,
        radius: depth,
        mode,
        lattice: None,
        label,
    })
}

fn ladder(width: usize, length: usize, mode: BoundaryMode, budget: usize, label: String) -> Result<Graph> {
    let cols = 2 * length + 1;
    let needed = cols.saturating_mul(width);
    if needed > budget {
        return Err(Error::VertexBudget { needed, budget });
    }
    let l = length as i64;
    // Raw id of (column c in -l..=l, row w).
    let raw = |c: i64, w: usize| ((c + l) as usize) * width + w;
    let mut raw_adj: Vec<Vec<usize>> = vec![Vec::new(); needed];
    let mut column = vec![0i64; needed];
    for c in -l..=l {
        for w in 0..width {
            let id = raw(c, w);
            column[id] = c;
            if c > -l {
                raw_adj[id].push(raw(c - 1, w));
            }
            if c < l {
                raw_adj[id].push(raw(c + 1, w));
            }
            if w > 0 {
                raw_adj[id].push(raw(c, w - 1));
            }
            if w + 1 < width {
                raw_adj[id].push(raw(c, w + 1));
            }
        }
    }
    if width == 1 && length == 0 {
        return Err(Error::InvalidSpec("ladder has a single vertex".into()));
    }
    // Renumber in BFS order from column 0, row 0.
    let start = raw(0, 0);
    let (order, dist) = bfs_order(&raw_adj, start);
    let mut new_id = vec![u32::MAX; needed];
    for (i, &v) in order.iter().enumerate() {
        new_id[v] = i as u32;
    }
    let adjacency = order.iter().map(|&v| raw_adj[v].iter().map(|&u| new_id[u]).collect()).collect();
    let depth: Vec<u32> = order.iter().map(|&v| dist[v]).collect();
    // The truncation frontier of a ladder is its two end columns.
    let boundary = order.iter().map(|&v| column[v].abs() == l).collect();
    let mut g = from_adjacency(adjacency, None, false, depth, boundary, mode, label);
    g.radius = length;
    Ok(g)
}

fn bfs_order(adj: &[Vec<usize>], start: usize) -> (Vec<usize>, Vec<u32>) {
    let mut dist = vec![u32::MAX; adj.len()];
    let mut order = vec![start];
    dist[start] = 0;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &u in &adj[v] {
            if dist[u] == u32::MAX {
                dist[u] = dist[v] + 1;
                order.push(u);
            }
        }
    }
    (order, dist)
}

fn from_adjacency(
    adjacency: Vec<Vec<u32>>,
    weights: Option<Vec<Vec<f64>>>,
    directed: bool,
    depth: Vec<u32>,
    boundary: Vec<bool>,
    mode: BoundaryMode,
    label: String,
) -> Graph {
    let n = adjacency.len();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let mut targets = Vec::new();
    for nb in &adjacency {
        targets.extend_from_slice(nb);
        offsets.push(targets.len());
    }
    let (flat_w, pi) = match weights {
        None => (None, adjacency.iter().map(|nb| nb.len() as f64).collect()),
        Some(w) => {
            let pi = w.iter().map(|row| row.iter().sum()).collect();
            (Some(w.into_iter().flatten().collect()), pi)
        }
    };
    let radius = depth.iter().copied().max().unwrap_or(0) as usize;
    Graph { offsets, targets, weights: flat_w, pi, directed, boundary, depth, radius, mode, lattice: None, label }
}

/// Parses the `frogsim-graph v1` edge-list format.
pub fn parse_weighted(text: &str, mode: BoundaryMode, budget: usize, label: String) -> Result<Graph> {
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    });
    let (hline, header) = lines.next().ok_or(Error::MalformedFile { line: 0, msg: "missing header".into() })?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let directed = match h.as_slice() {
        ["frogsim-graph", "v1", "directed"] => true,
        ["frogsim-graph", "v1", "undirected"] => false,
        _ => {
            return Err(Error::MalformedFile {
                line: hline,
                msg: "expected `frogsim-graph v1 <directed|undirected>`".into(),
            })
        }
    };
    let mut ids: HashMap<i64, usize> = HashMap::new();
    let mut raw_ids: Vec<i64> = Vec::new();
    let mut out: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut intern = |id: i64, out: &mut Vec<Vec<(usize, f64)>>| -> usize {
        *ids.entry(id).or_insert_with(|| {
            raw_ids.push(id);
            out.push(Vec::new());
            out.len() - 1
        })
    };
    for (line, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        let bad = |msg: &str| Error::MalformedFile { line, msg: msg.to_string() };
        if f.len() != 3 {
            return Err(bad("expected `u v w`"));
        }
        let u: i64 = f[0].parse().map_err(|_| bad("vertex id is not an integer"))?;
        let v: i64 = f[1].parse().map_err(|_| bad("vertex id is not an integer"))?;
        let w: f64 = f[2].parse().map_err(|_| bad("weight is not a number"))?;
        if !(w.is_finite() && w > 0.0) {
            return Err(bad("weight must be positive and finite"));
        }
        let a = intern(u, &mut out);
        let b = intern(v, &mut out);
        if out.len() > budget {
            return Err(Error::VertexBudget { needed: out.len(), budget });
        }
        out[a].push((b, w));
        if !directed && a != b {
            out[b].push((a, w));
        }
    }
    if out.len() < 2 {
        return Err(Error::MalformedFile { line: 0, msg: "graph needs at least two vertices".into() });
    }
    if let Some(v) = out.iter().position(Vec::is_empty) {
        return Err(Error::MalformedFile { line: 0, msg: format!("vertex {} has no outgoing edge", raw_ids[v]) });
    }
    // Origin: the smallest id in the file.
    let start = (0..raw_ids.len()).min_by_key(|&i| raw_ids[i]).unwrap();
    let adj: Vec<Vec<usize>> = out.iter().map(|row| row.iter().map(|&(u, _)| u).collect()).collect();
    let (order, dist) = bfs_order(&adj, start);
    if order.len() != out.len() {
        return Err(Error::MalformedFile { line: 0, msg: "some vertices are unreachable from the origin".into() });
    }
    let mut new_id = vec![0u32; out.len()];
    for (i, &v) in order.iter().enumerate() {
        new_id[v] = i as u32;
    }
    let adjacency = order.iter().map(|&v| out[v].iter().map(|&(u, _)| new_id[u]).collect()).collect();
    let weights = order.iter().map(|&v| out[v].iter().map(|&(_, w)| w).collect()).collect();
    let depth: Vec<u32> = order.iter().map(|&v| dist[v]).collect();
    let maxd = *depth.iter().max().unwrap();
    let boundary = depth.iter().map(|&d| d == maxd).collect();
    Ok(from_adjacency(adjacency, Some(weights), directed, depth, boundary, mode, label))
}

/// Ball sizes `g(0..=rmax)` around a vertex and fitted growth rates.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthProfile {
    pub counts: Vec<usize>,
    /// Least-squares slope of `log g(n)` against `log n` over `n in [rmax/2, rmax]`.
    pub exponent: f64,
    pub nearest_integer: i64,
    /// `log g(rmax) / rmax`, the exponential rate.
    pub log_growth_rate: f64,
}

pub fn growth_profile(g: &Graph, x: Vertex, rmax: usize) -> Result<GrowthProfile> {
    g.check_vertex(x)?;
    if rmax < 2 {
        return Err(Error::InvalidArgument("growth profile needs rmax >= 2".into()));
    }
    let layers = g.bfs_within(x, rmax)?;
    if layers.iter().any(|&(v, _)| g.is_boundary(v)) {
        return Err(Error::ProfileTooLarge { rmax, radius: g.radius() });
    }
    let mut counts = vec![0usize; rmax + 1];
    for &(_, d) in &layers {
        counts[d] += 1;
    }
    for n in 1..=rmax {
        counts[n] += counts[n - 1];
    }
    let lo = (rmax / 2).max(1);
    let xs: Vec<f64> = (lo..=rmax).map(|n| (n as f64).ln()).collect();
    let ys: Vec<f64> = (lo..=rmax).map(|n| (counts[n] as f64).ln()).collect();
    let (exponent, _, _) =
        crate::estimate::linear_fit(&xs, &ys).ok_or_else(|| Error::InvalidArgument("degenerate growth fit".into()))?;
    Ok(GrowthProfile {
        log_growth_rate: (counts[rmax] as f64).ln() / rmax as f64,
        nearest_integer: exponent.round() as i64,
        exponent,
        counts,
    })
}

/// Edge-boundary weight over volume, `sum_{a in A, b notin A} w(a,b) / pi(A)`.
pub fn cheeger_of_set(g: &Graph, set: &[Vertex]) -> Result<f64> {
    g.require_undirected()?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("Cheeger ratio of an empty set".into()));
    }
    let mut member = vec![false; g.vertex_count()];
    for &a in set {
        g.check_vertex(a)?;
        member[a] = true;
    }
    let mut out = 0.0;
    let mut vol = 0.0;
    for &a in set {
        vol += g.pi(a);
        out += g.edges(a).filter(|&(b, _)| !member[b]).map(|(_, w)| w).sum::<f64>();
    }
    Ok(out / vol)
}

/// `max_x pi(x) / min_x pi(x)` over all vertices.
pub fn stationary_control_constant(g: &Graph) -> f64 {
    control_over(g, 0..g.vertex_count())
}

/// Same ratio over interior vertices only (the truncation frontier excluded).
pub fn interior_control_constant(g: &Graph) -> f64 {
    control_over(g, g.interior())
}

fn control_over(g: &Graph, vs: impl Iterator<Item = Vertex>) -> f64 {
    let (lo, hi) = vs.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(g.pi(v)), hi.max(g.pi(v))));
    hi / lo
}

/// Return-probability estimate of the spectral radius.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralEstimate {
    /// `p_{2n}(x, x)` for `n = 1..=nmax/2`.
    pub returns: Vec<f64>,
    /// `p_{2n}(x, x)^{1/2n}`.
    pub roots: Vec<f64>,
    /// `sqrt(p_{2n+2} / p_{2n})`.
    pub ratios: Vec<f64>,
    /// Richardson extrapolation of the ratio sequence, `2 r_N - r_{N/2}`.
    pub extrapolated: f64,
    /// Whether `p_{2n}(x, x)` is non-increasing in `n`.
    pub monotone_returns: bool,
    /// Mass absorbed at the truncation frontier by step `nmax`.
    pub boundary_mass: f64,
    pub truncation_warning: bool,
}

impl SpectralEstimate {
    /// The point estimate: the extrapolation clamped into `[0, 1]`.
    pub fn rho(&self) -> f64 {
        self.extrapolated.clamp(0.0, 1.0)
    }
}

/// Boundary mass above which the spectral estimate is flagged as truncated.
pub const SPECTRAL_LEAKAGE_TOLERANCE: f64 = 1e-3;

pub fn spectral_radius_estimate(g: &Graph, x: Vertex, nmax: usize) -> Result<SpectralEstimate> {
    g.require_undirected()?;
    g.check_vertex(x)?;
    if nmax < 4 || !nmax.is_multiple_of(2) {
        return Err(Error::InvalidArgument("nmax must be an even integer >= 4".into()));
    }
    let n = g.vertex_count();
    let mut mu = vec![0.0; n];
    let mut next = vec![0.0; n];
    mu[x] = 1.0;
    let mut absorbed = 0.0;
    let mut returns = Vec::with_capacity(nmax / 2);
    // Only vertices within distance k of x can carry mass at step k.
    let reach = g.bfs_within(x, nmax / 2 + 1)?;
    let support: Vec<Vertex> = reach.iter().map(|&(v, _)| v).collect();
    for step in 1..=nmax {
        let active = support.iter().copied().filter(|&v| mu[v] != 0.0);
        for v in active {
            let m = mu[v];
            for (u, p) in g.transitions(v) {
                next[u] += m * p;
            }
        }
        for &v in &support {
            mu[v] = 0.0;
        }
        for &v in &support {
            let m = next[v];
            next[v] = 0.0;
            if g.is_boundary(v) {
                absorbed += m;
            } else {
                mu[v] = m;
            }
        }
        // Mass leaving the support sits farther than nmax/2 + 1 from x and
        // cannot return by step nmax; it is dropped.
        if step % 2 == 0 {
            returns.push(mu[x]);
        }
    }
    let roots: Vec<f64> = returns.iter().enumerate().map(|(i, &p)| p.powf(1.0 / (2.0 * (i + 1) as f64))).collect();
    let ratios: Vec<f64> = returns.windows(2).map(|w| (w[1] / w[0]).sqrt()).collect();
    let nr = ratios.len();
    let extrapolated = if nr >= 2 {
        let big = ratios[nr - 1];
        let half = ratios[nr / 2 - 1];
        // r_n ~ rho + a/n with n indexed from 1; ratios[i] corresponds to n = i + 1.
        let (n1, n2) = ((nr / 2) as f64, nr as f64);
        (n2 * big - n1 * half) / (n2 - n1)
    } else {
        *roots.last().unwrap()
    };
    let monotone_returns = returns.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok(SpectralEstimate {
        extrapolated,
        monotone_returns,
        truncation_warning: absorbed > SPECTRAL_LEAKAGE_TOLERANCE,
        boundary_mass: absorbed,
        returns,
        roots,
        ratios,
    })
}

pub fn read_graph(path: &Path, mode: BoundaryMode) -> Result<Graph> {
    build_graph(&GraphSpec { family: GraphFamily::WeightedFile { path: path.to_path_buf() }, boundary_mode: mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z2(r: usize) -> Graph {
        build_graph(&GraphSpec::lattice_box(2, r, BoundaryMode::Absorbing)).unwrap()
    }

    #[test]
    fn small_instances_have_expected_sizes() {
        assert_eq!(z2(1).vertex_count(), 5);
        assert_eq!(build_graph(&GraphSpec::regular_tree(3, 2)).unwrap().vertex_count(), 10);
        assert_eq!(z2(40).vertex_count(), 3281);
        assert_eq!(l1_ball_size(3, 2), Some(25));
    }

    #[test]
    fn vertex_ids_follow_bfs_order() {
        for g in [
            z2(6),
            build_graph(&GraphSpec::regular_tree(4, 4)).unwrap(),
            build_graph(&GraphSpec::ladder(3, 5)).unwrap(),
        ] {
            assert_eq!(g.depth(0), 0);
            assert!((1..g.vertex_count()).all(|v| g.depth(v) >= g.depth(v - 1)));
            assert!(!g.is_boundary(g.origin()));
        }
    }

    #[test]
    fn tree_structure() {
        let g = build_graph(&GraphSpec::regular_tree(3, 3)).unwrap();
        assert_eq!(g.out_degree(0), 3);
        for v in 1..g.vertex_count() {
            let want = if g.is_boundary(v) { 1 } else { 3 };
            assert_eq!(g.out_degree(v), want, "vertex {v}");
        }
        assert_eq!(g.boundary_set().len(), 12);
        assert_eq!(g.max_out_degree(), 3);
    }

    #[test]
    fn lattice_coordinates_round_trip() {
        let g = z2(5);
        for v in 0..g.vertex_count() {
            let c = g.coords(v).unwrap().to_vec();
            assert_eq!(g.vertex_at(&c), Some(v));
            assert_eq!(c.iter().map(|x| x.unsigned_abs() as usize).sum::<usize>(), g.depth(v));
        }
        assert_eq!(g.vertex_at(&[6, 0]), None);
        assert_eq!(g.vertex_at(&[3, 3]), None);
    }

    #[test]
    fn ladder_shape() {
        let g = build_graph(&GraphSpec::ladder(2, 10)).unwrap();
        assert_eq!(g.vertex_count(), 42);
        assert_eq!(g.boundary_set().len(), 4);
        assert_eq!(g.radius(), 10);
    }

    #[test]
    fn ball_and_sphere() {
        let g = z2(40);
        assert_eq!(g.ball(0, 0).unwrap(), vec![0]);
        assert_eq!(g.ball(0, 1).unwrap().len(), 5);
        assert_eq!(g.sphere(0, 3).unwrap().len(), 12);
        let t = build_graph(&GraphSpec::regular_tree(3, 10)).unwrap();
        assert_eq!(t.ball(0, 2).unwrap().len(), 10);
        assert!(g.ball(g.vertex_count(), 1).is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        for s in ["lattice:2:40:absorbing", "lattice:3:5:open-killing", "tree:3:12", "ladder:2:400", "file:/tmp/x.txt"]
        {
            let spec: GraphSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("tree:3".parse::<GraphSpec>().is_err());
        assert!("torus:3:3".parse::<GraphSpec>().is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build_graph(&GraphSpec::regular_tree(2, 3)).is_err());
        assert!(build_graph(&GraphSpec::lattice_box(0, 3, BoundaryMode::Absorbing)).is_err());
        assert!(matches!(
            build_graph_with_budget(&GraphSpec::lattice_box(2, 40, BoundaryMode::Absorbing), 100),
            Err(Error::VertexBudget { needed: 3281, budget: 100 })
        ));
    }

    #[test]
    fn weighted_file_parsing() {
        let text = "# comment\nfrogsim-graph v1 undirected\n\n10 20 1.5\n20 30 2 # trailing\n30 10 1\n";
        let g = parse_weighted(text, BoundaryMode::Absorbing, 100, "t".into()).unwrap();
        assert_eq!(g.vertex_count(), 3);
        assert!(g.is_weighted());
        assert!((g.pi(0) - 2.5).abs() < 1e-15);
        for bad in [
            "frogsim-graph v2 undirected\n1 2 1\n",
            "frogsim-graph v1 undirected\n1 2\n",
            "frogsim-graph v1 undirected\n1 2 -1\n",
            "frogsim-graph v1 undirected\n1 x 1\n",
            "frogsim-graph v1 directed\n1 2 1\n",
            "frogsim-graph v1 undirected\n1 2 1\n3 4 1\n",
        ] {
            assert!(parse_weighted(bad, BoundaryMode::Absorbing, 100, "t".into()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn cheeger_examples() {
        let g = z2(40);
        assert_eq!(cheeger_of_set(&g, &[0]).unwrap(), 1.0);
        let b10 = g.ball(0, 10).unwrap();
        let phi = cheeger_of_set(&g, &b10).unwrap();
        assert!((phi - 84.0 / 884.0).abs() < 1e-15);
        assert!(cheeger_of_set(&g, &[]).is_err());
    }

    #[test]
    fn growth_profile_rejects_boundary_distortion() {
        let g = z2(10);
        assert!(matches!(growth_profile(&g, 0, 10), Err(Error::ProfileTooLarge { .. })));
        assert!(growth_profile(&g, 0, 9).is_ok());
    }
}
