//! Information-sharing graph, threshold-filtered neighborhoods and the
//! compressed cluster representation.
//!
//! A user `n` trusts information from `m` when there is a social edge,
//! `δ_nm ≥ η_n` (trust threshold of `n`) and `δ_mn ≥ φ_m` (cooperation
//! threshold of `m`). A cluster is a set of users that all share with one
//! another and share with the same set of outside users.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Users, social edges with directed tie strengths, and per-user thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    /// `ties[n][m] = δ_nm`; the key set is symmetric.
    ties: Vec<BTreeMap<usize, f64>>,
    trust: Vec<f64>,
    cooperation: Vec<f64>,
}

impl SocialGraph {
    /// `users` isolated users with all thresholds 0.
    pub fn new(users: usize) -> Self {
        Self {
            ties: vec![BTreeMap::new(); users],
            trust: vec![0.0; users],
            cooperation: vec![0.0; users],
        }
    }

    /// Complete graph with unit ties.
    pub fn complete(users: usize) -> Self {
        let mut g = Self::new(users);
        for u in 0..users {
            for v in u + 1..users {
                g.add_edge(u, v).expect("indices in range");
            }
        }
        g
    }

    pub fn from_edges(users: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new(users);
        for &(u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    pub fn users(&self) -> usize {
        self.ties.len()
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        self.add_edge_with_ties(u, v, 1.0, 1.0)
    }

    /// Adds edge `u–v` with `δ_uv` and `δ_vu`.
    pub fn add_edge_with_ties(&mut self, u: usize, v: usize, d_uv: f64, d_vu: f64) -> Result<()> {
        let n = self.users();
        if u >= n || v >= n {
            return Err(Error::InvalidGraph(format!(
                "edge {u}-{v} references a user >= {n}"
            )));
        }
        if u == v {
            return Err(Error::InvalidGraph(format!("self loop on user {u}")));
        }
        for d in [d_uv, d_vu] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::InvalidGraph(format!(
                    "tie strength {d} outside [0,1]"
                )));
            }
        }
        self.ties[u].insert(v, d_uv);
        self.ties[v].insert(u, d_vu);
        Ok(())
    }

    /// Sets trust `η_n` and cooperation `φ_n` thresholds.
    pub fn set_thresholds(&mut self, n: usize, trust: f64, cooperation: f64) -> Result<()> {
        if n >= self.users() {
            return Err(Error::InvalidGraph(format!(
                "threshold for unknown user {n}"
            )));
        }
        for t in [trust, cooperation] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidGraph(format!("threshold {t} outside [0,1]")));
            }
        }
        self.trust[n] = trust;
        self.cooperation[n] = cooperation;
        Ok(())
    }

    pub fn tie(&self, n: usize, m: usize) -> Option<f64> {
        self.ties.get(n)?.get(&m).copied()
    }

    pub fn thresholds(&self, n: usize) -> (f64, f64) {
        (self.trust[n], self.cooperation[n])
    }

    pub fn edge_count(&self) -> usize {
        self.ties.iter().map(BTreeMap::len).sum::<usize>() / 2
    }

    /// Undirected edges `(u, v, δ_uv, δ_vu)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        self.ties.iter().enumerate().flat_map(move |(u, row)| {
            row.range(u + 1..)
                .map(move |(&v, &d_uv)| (u, v, d_uv, self.ties[v][&u]))
        })
    }

    /// Users whose information `n` accepts, in ascending order.
    pub fn neighborhood(&self, n: usize) -> Vec<usize> {
        self.ties[n]
            .iter()
            .filter(|&(&k, &d_nk)| d_nk >= self.trust[n] && self.ties[k][&n] >= self.cooperation[k])
            .map(|(&k, _)| k)
            .collect()
    }

    /// All neighborhoods after threshold filtering.
    pub fn effective(&self) -> EffectiveGraph {
        EffectiveGraph {
            adj: (0..self.users()).map(|n| self.neighborhood(n)).collect(),
        }
    }

    /// Parses the edge-list format (see the book chapter on file formats).
    pub fn parse_edge_list(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut declared: Option<usize> = None;
        let mut edges = Vec::new();
        let mut thresholds = Vec::new();
        let mut max_id: Option<usize> = None;
        let bump = |id: usize, max_id: &mut Option<usize>| {
            *max_id = Some(max_id.map_or(id, |m: usize| m.max(id)));
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "#users" => {
                    if fields.len() != 2 {
                        return Err(err(line_no, "expected `#users N`".into()));
                    }
                    declared = Some(parse_num(fields[1]).map_err(|m| err(line_no, m))?);
                }
                "#user" => {
                    if fields.len() != 4 {
                        return Err(err(line_no, "expected `#user n trust cooperation`".into()));
                    }
                    let n: usize = parse_num(fields[1]).map_err(|m| err(line_no, m))?;
                    let trust: f64 = parse_num(fields[2]).map_err(|m| err(line_no, m))?;
                    let coop: f64 = parse_num(fields[3]).map_err(|m| err(line_no, m))?;
                    bump(n, &mut max_id);
                    thresholds.push((line_no, n, trust, coop));
                }
                f if f.starts_with('#') => {}
                _ => {
                    if fields.len() != 2 && fields.len() != 4 {
                        return Err(err(line_no, "expected `u v` or `u v d_uv d_vu`".into()));
                    }
                    let u: usize = parse_num(fields[0]).map_err(|m| err(line_no, m))?;
                    let v: usize = parse_num(fields[1]).map_err(|m| err(line_no, m))?;
                    let (d_uv, d_vu) = if fields.len() == 4 {
                        (
                            parse_num(fields[2]).map_err(|m| err(line_no, m))?,
                            parse_num(fields[3]).map_err(|m| err(line_no, m))?,
                        )
                    } else {
                        (1.0, 1.0)
                    };
                    bump(u, &mut max_id);
                    bump(v, &mut max_id);
                    edges.push((line_no, u, v, d_uv, d_vu));
                }
            }
        }
        let implied = max_id.map_or(0, |m| m + 1);
        let users = match declared {
            Some(n) if n < implied => {
                return Err(err(
                    0,
                    format!("#users {n} but user {} referenced", implied - 1),
                ))
            }
            Some(n) => n,
            None => implied,
        };
        let mut g = SocialGraph::new(users);
        for (line_no, u, v, d_uv, d_vu) in edges {
            g.add_edge_with_ties(u, v, d_uv, d_vu)
                .map_err(|e| err(line_no, e.to_string()))?;
        }
        for (line_no, n, trust, coop) in thresholds {
            g.set_thresholds(n, trust, coop)
                .map_err(|e| err(line_no, e.to_string()))?;
        }
        Ok(g)
    }

    pub fn load_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text, path)
    }

    /// Serializes to the edge-list format; parsing the output gives back an equal graph.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#users {}", self.users());
        for n in 0..self.users() {
            if self.trust[n] != 0.0 || self.cooperation[n] != 0.0 {
                let _ = writeln!(out, "#user {n} {} {}", self.trust[n], self.cooperation[n]);
            }
        }
        for (u, v, d_uv, d_vu) in self.edges() {
            if d_uv == 1.0 && d_vu == 1.0 {
                let _ = writeln!(out, "{u} {v}");
            } else {
                let _ = writeln!(out, "{u} {v} {d_uv} {d_vu}");
            }
        }
        out
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse `{s}`"))
}

/// Threshold-filtered neighborhoods: `adj[n]` is the sorted set `𝒩_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveGraph {
    adj: Vec<Vec<usize>>,
}

impl EffectiveGraph {
    pub fn from_adjacency(adj: Vec<Vec<usize>>) -> Result<Self> {
        let n = adj.len();
        let mut adj = adj;
        for (u, row) in adj.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.iter().any(|&v| v >= n || v == u) {
                return Err(Error::InvalidGraph(format!(
                    "bad neighbor list for user {u}"
                )));
            }
        }
        Ok(Self { adj })
    }

    pub fn users(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.adj[n]
    }

    pub fn contains(&self, n: usize, m: usize) -> bool {
        self.adj[n].binary_search(&m).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adj
            .iter()
            .enumerate()
            .all(|(u, row)| row.iter().all(|&v| self.contains(v, u)))
    }

    /// Keeps only pairs that accept each other.
    pub fn mutual(&self) -> Self {
        Self {
            adj: self
                .adj
                .iter()
                .enumerate()
                .map(|(u, row)| {
                    row.iter()
                        .copied()
                        .filter(|&v| self.contains(v, u))
                        .collect()
                })
                .collect(),
        }
    }

    /// Strong connectivity along neighborhood edges (plain connectivity when symmetric).
    pub fn is_connected(&self) -> bool {
        let n = self.users();
        if n <= 1 {
            return true;
        }
        let forward = reach_count(n, |u| self.adj[u].clone());
        if forward != n {
            return false;
        }
        let mut reverse = vec![Vec::new(); n];
        for (u, row) in self.adj.iter().enumerate() {
            for &v in row {
                reverse[v].push(u);
            }
        }
        reach_count(n, |u| reverse[u].clone()) == n
    }
}

fn reach_count(n: usize, next: impl Fn(usize) -> Vec<usize>) -> usize {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for v in next(u) {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

/// How the clustering pass walks the candidate neighbors of a seed user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateScan {
    /// Candidates are fixed when the seed is picked.
    #[default]
    Frozen,
    /// Re-scan the union of member neighborhoods until nothing is added.
    UntilClosure,
}

/// Clusters of users plus the communication links between clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterGraph {
    membership: Vec<usize>,
    members: Vec<Vec<usize>>,
    links: Vec<Vec<usize>>,
}

impl ClusterGraph {
    /// Builds from explicit member sets and cluster links, e.g. for mean-field input.
    pub fn from_parts(members: Vec<Vec<usize>>, links: Vec<Vec<usize>>) -> Result<Self> {
        let k = members.len();
        if links.len() != k {
            return Err(Error::InvalidGraph(
                "one link list per cluster expected".into(),
            ));
        }
        let users: usize = members.iter().map(Vec::len).sum();
        let mut membership = vec![usize::MAX; users];
        for (c, ms) in members.iter().enumerate() {
            if ms.is_empty() {
                return Err(Error::InvalidGraph(format!("cluster {c} is empty")));
            }
            for &u in ms {
                if u >= users || membership[u] != usize::MAX {
                    return Err(Error::InvalidGraph("clusters must partition 0..N".into()));
                }
                membership[u] = c;
            }
        }
        let mut links = links;
        for (c, row) in links.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.iter().any(|&h| h >= k || h == c) {
                return Err(Error::InvalidGraph(format!(
                    "bad link list for cluster {c}"
                )));
            }
        }
        for (c, row) in links.iter().enumerate() {
            if row.iter().any(|&h| links[h].binary_search(&c).is_err()) {
                return Err(Error::InvalidGraph(
                    "cluster links must be symmetric".into(),
                ));
            }
        }
        let mut members = members;
        members.iter_mut().for_each(|m| m.sort_unstable());
        Ok(Self {
            membership,
            members,
            links,
        })
    }

    /// Cluster graph given only sizes and links; users are numbered cluster by cluster.
    pub fn from_sizes(sizes: &[usize], links: Vec<Vec<usize>>) -> Result<Self> {
        let mut next = 0;
        let members = sizes
            .iter()
            .map(|&z| {
                let m: Vec<usize> = (next..next + z).collect();
                next += z;
                m
            })
            .collect();
        Self::from_parts(members, links)
    }

    pub fn cluster_count(&self) -> usize {
        self.members.len()
    }

    pub fn users(&self) -> usize {
        self.membership.len()
    }

    pub fn cluster_of(&self, n: usize) -> usize {
        self.membership[n]
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// `𝒦_k`: clusters communicating with `k`.
    pub fn communicating(&self, k: usize) -> &[usize] {
        &self.links[k]
    }

    /// `𝒞_k = 𝒦_k ∪ {k}`, sorted.
    pub fn closed(&self, k: usize) -> Vec<usize> {
        let mut c = self.links[k].clone();
        let pos = c.binary_search(&k).unwrap_err();
        c.insert(pos, k);
        c
    }

    pub fn linked(&self, a: usize, b: usize) -> bool {
        self.links[a].binary_search(&b).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        let k = self.cluster_count();
        k <= 1 || reach_count(k, |c| self.links[c].clone()) == k
    }

    /// Users sharing with `n` according to the clusters: `∪_{k'∈𝒞_k(n)} 𝒩(k') \ {n}`.
    pub fn implied_neighborhood(&self, n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .closed(self.cluster_of(n))
            .into_iter()
            .flat_map(|c| self.members[c].iter().copied())
            .filter(|&u| u != n)
            .collect();
        out.sort_unstable();
        out
    }

    /// Checks that every cluster is internally complete and that its
    /// members see identical outside neighbors.
    pub fn satisfies_cluster_definition(&self, graph: &EffectiveGraph) -> bool {
        self.members.iter().all(|ms| {
            let outside = |u: usize| -> BTreeSet<usize> {
                graph
                    .neighbors(u)
                    .iter()
                    .copied()
                    .filter(|v| !ms.contains(v))
                    .collect()
            };
            let first = outside(ms[0]);
            ms.iter()
                .all(|&u| ms.iter().all(|&v| u == v || graph.contains(u, v)) && outside(u) == first)
        })
    }

    /// Expands the cluster graph into a user-level graph: complete inside clusters,
    /// complete bipartite between linked clusters.
    pub fn expand(&self) -> SocialGraph {
        let mut g = SocialGraph::new(self.users());
        for (k, ms) in self.members.iter().enumerate() {
            for (i, &u) in ms.iter().enumerate() {
                for &v in &ms[i + 1..] {
                    g.add_edge(u, v).expect("valid ids");
                }
            }
            for &h in self.links[k].iter().filter(|&&h| h > k) {
                for &u in ms {
                    for &v in &self.members[h] {
                        g.add_edge(u, v).expect("valid ids");
                    }
                }
            }
        }
        g
    }

    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "clusters {}", self.cluster_count());
        for (k, ms) in self.members.iter().enumerate() {
            let ids: Vec<String> = ms.iter().map(usize::to_string).collect();
            let links: Vec<String> = self.links[k].iter().map(usize::to_string).collect();
            let _ = writeln!(
                out,
                "cluster {k} size {} links [{}] members [{}]",
                ms.len(),
                links.join(" "),
                ids.join(" ")
            );
        }
        let _ = writeln!(out, "connected {}", self.is_connected());
        out
    }
}

/// Greedy clustering followed by inter-cluster links.
///
/// A seed user is picked at random among the unmerged users; each candidate
/// neighbor `m` joins when `𝒩_n \ {m} = 𝒩_m \ {n}`. Two clusters are linked
/// when some pair of their members accept each other.
pub fn build_cluster_graph<R: Rng + ?Sized>(
    graph: &EffectiveGraph,
    scan: CandidateScan,
    rng: &mut R,
) -> Result<ClusterGraph> {
    if !graph.is_symmetric() {
        return Err(Error::InvalidGraph(
            "clustering needs a symmetric neighborhood structure; use `mutual()`".into(),
        ));
    }
    let n = graph.users();
    let mut unmerged: Vec<usize> = (0..n).collect();
    let mut merged = vec![false; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let same_outside = |a: usize, b: usize| -> bool {
        let na = graph.neighbors(a).iter().filter(|&&x| x != b);
        let nb = graph.neighbors(b).iter().filter(|&&x| x != a);
        na.eq(nb)
    };

    while !unmerged.is_empty() {
        let pick = rng.random_range(0..unmerged.len());
        let seed = unmerged[pick];
        let mut cluster = vec![seed];
        merged[seed] = true;
        let mut frontier: Vec<usize> = graph.neighbors(seed).to_vec();
        loop {
            let mut grew = false;
            for &m in &frontier {
                if !merged[m] && same_outside(seed, m) {
                    merged[m] = true;
                    cluster.push(m);
                    grew = true;
                }
            }
            if scan == CandidateScan::Frozen || !grew {
                break;
            }
            let mut next: Vec<usize> = cluster
                .iter()
                .flat_map(|&u| graph.neighbors(u).iter().copied())
                .filter(|&u| !merged[u])
                .collect();
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        unmerged.retain(|&u| !merged[u]);
        members.push(cluster);
    }

    let mut membership = vec![0; n];
    for (k, ms) in members.iter().enumerate() {
        for &u in ms {
            membership[u] = k;
        }
    }
    let k = members.len();
    let mut links = vec![BTreeSet::new(); k];
    for u in 0..n {
        for &v in graph.neighbors(u) {
            let (a, b) = (membership[u], membership[v]);
            if a != b && graph.contains(v, u) {
                links[a].insert(b);
                links[b].insert(a);
            }
        }
    }
    ClusterGraph::from_parts(
        members,
        links.into_iter().map(|s| s.into_iter().collect()).collect(),
    )
}

/// Repeatedly clusters the cluster graph itself until the cluster count stops shrinking.
pub fn remerge_clusters<R: Rng + ?Sized>(cg: &ClusterGraph, rng: &mut R) -> Result<ClusterGraph> {
    let mut current = cg.clone();
    loop {
        let quotient = EffectiveGraph::from_adjacency(current.links.clone())?;
        let coarse = build_cluster_graph(&quotient, CandidateScan::Frozen, rng)?;
        if coarse.cluster_count() == current.cluster_count() {
            return Ok(current);
        }
        let members = (0..coarse.cluster_count())
            .map(|c| {
                coarse
                    .members(c)
                    .iter()
                    .flat_map(|&old| current.members[old].iter().copied())
                    .collect()
            })
            .collect();
        current = ClusterGraph::from_parts(members, coarse.links.clone())?;
    }
}

/// Uniform points in a square; an edge joins points within `radius`.
#[derive(Debug, Clone)]
pub struct GeometricGraph {
    pub graph: SocialGraph,
    pub positions: Vec<(f64, f64)>,
    pub radius: f64,
}

/// Random geometric graph on a `side × side` square. With `radius = None`
/// the smallest radius that connects the sampled points is used.
pub fn random_geometric<R: Rng + ?Sized>(
    users: usize,
    side: f64,
    radius: Option<f64>,
    rng: &mut R,
) -> Result<GeometricGraph> {
    if !(side > 0.0) {
        return Err(Error::InvalidParameter(
            "square side must be positive".into(),
        ));
    }
    let positions: Vec<(f64, f64)> = (0..users)
        .map(|_| (rng.random_range(0.0..side), rng.random_range(0.0..side)))
        .collect();
    let radius = match radius {
        Some(r) if r >= 0.0 => r,
        Some(r) => return Err(Error::InvalidParameter(format!("radius {r} is negative"))),
        None => connecting_radius(&positions),
    };
    let mut graph = SocialGraph::new(users);
    for u in 0..users {
        for v in u + 1..users {
            if dist(positions[u], positions[v]) <= radius {
                graph.add_edge(u, v)?;
            }
        }
    }
    Ok(GeometricGraph {
        graph,
        positions,
        radius,
    })
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Longest edge of the Euclidean minimum spanning tree (Prim, O(n²)).
pub fn connecting_radius(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    if n <= 1 {
        return 0.0;
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut longest: f64 = 0.0;
    for _ in 0..n {
        let u = (0..n)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .expect("some vertex remains");
        in_tree[u] = true;
        longest = longest.max(best[u]);
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(dist(points[u], points[v]));
            }
        }
    }
    longest
}

/// G(n, p) with unit ties.
pub fn erdos_renyi<R: Rng + ?Sized>(users: usize, p: f64, rng: &mut R) -> SocialGraph {
    let mut g = SocialGraph::new(users);
    for u in 0..users {
        for v in u + 1..users {
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                g.add_edge(u, v).expect("valid ids");
            }
        }
    }
    g
}

/// Random graph with planted twin groups so that clustering has something to merge.
pub fn planted_clusters<R: Rng + ?Sized>(
    groups: usize,
    max_size: usize,
    p: f64,
    rng: &mut R,
) -> SocialGraph {
    let sizes: Vec<usize> = (0..groups)
        .map(|_| rng.random_range(1..=max_size))
        .collect();
    let mut links = vec![Vec::new(); groups];
    for a in 0..groups {
        for b in a + 1..groups {
            if rng.random_bool(p) {
                links[a].push(b);
                links[b].push(a);
            }
        }
    }
    let cg = ClusterGraph::from_sizes(&sizes, links).expect("consistent parts");
    // shuffle user ids so clusters are not contiguous
    let g = cg.expand();
    let mut perm: Vec<usize> = (0..g.users()).collect();
    perm.shuffle(rng);
    let mut out = SocialGraph::new(g.users());
    for (u, v, _, _) in g.edges() {
        out.add_edge(perm[u], perm[v]).expect("valid ids");
    }
    out
}
