//! Equilibrium checks, fairness, centralized baselines and the price of imitation.

use std::fmt::Write as _;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::contention::{grab_probability, ContentionConfig};
use crate::error::{Error, Result};
use crate::graph::{ClusterGraph, EffectiveGraph};
use crate::meanfield::PopulationState;
use crate::model::{occupancy, ThroughputModel};

/// Outcome of checking that no user sees a strictly better channel among
/// those held by its neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub allocation: Vec<usize>,
    /// Channels held by each user's neighbors, plus the user's own.
    pub visible: Vec<Vec<usize>>,
    /// Each user's expected throughput on its own channel.
    pub own: Vec<f64>,
    /// Best other visible channel and its throughput for that user.
    pub best_alternative: Vec<Option<(usize, f64)>>,
    /// Expected throughput on each channel at the current occupancy (shared rates, else user 0).
    pub channel_throughput: Vec<f64>,
    /// Largest `best_alternative − own` over users, floored at zero.
    pub residual: f64,
    pub epsilon: f64,
    pub passed: bool,
}

impl EquilibriumReport {
    /// Users whose best alternative beats their own channel by more than `ε`.
    pub fn violators(&self) -> Vec<usize> {
        (0..self.allocation.len())
            .filter(|&n| {
                self.best_alternative[n].is_some_and(|(_, v)| v > self.own[n] + self.epsilon)
            })
            .collect()
    }
}

pub fn check_imitation_equilibrium(
    allocation: &[usize],
    graph: &EffectiveGraph,
    model: &ThroughputModel,
    epsilon: f64,
) -> Result<EquilibriumReport> {
    let m = model.channels();
    if allocation.len() != graph.users() {
        return Err(Error::InvalidParameter(format!(
            "allocation covers {} users, graph has {}",
            allocation.len(),
            graph.users()
        )));
    }
    if let Some(&bad) = allocation.iter().find(|&&a| a >= m) {
        return Err(Error::InvalidParameter(format!(
            "channel {bad} does not exist"
        )));
    }
    let counts = occupancy(allocation, m);
    let mut visible = Vec::with_capacity(allocation.len());
    let mut own = Vec::with_capacity(allocation.len());
    let mut best_alternative = Vec::with_capacity(allocation.len());
    let mut residual: f64 = 0.0;
    for (n, &a) in allocation.iter().enumerate() {
        let mut seen: Vec<usize> = graph.neighbors(n).iter().map(|&v| allocation[v]).collect();
        seen.push(a);
        seen.sort_unstable();
        seen.dedup();
        let mine = model.utility(n, a, counts[a]);
        let best = seen
            .iter()
            .filter(|&&c| c != a)
            .map(|&c| (c, model.utility(n, c, counts[c])))
            .fold(None, |acc: Option<(usize, f64)>, cand| match acc {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        if let Some((_, v)) = best {
            residual = residual.max(v - mine);
        }
        visible.push(seen);
        own.push(mine);
        best_alternative.push(best);
    }
    let channel_throughput = (0..m).map(|c| model.utility(0, c, counts[c])).collect();
    Ok(EquilibriumReport {
        allocation: allocation.to_vec(),
        visible,
        own,
        best_alternative,
        channel_throughput,
        residual,
        epsilon,
        passed: residual <= epsilon,
    })
}

/// `(Σv)² / (N Σv²)`.
pub fn jain_index(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Undefined("Jain index of an empty list"));
    }
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter(
            "Jain index needs non-negative values".into(),
        ));
    }
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(Error::Undefined("Jain index of all-zero throughputs"));
    }
    Ok(sum * sum / (values.len() as f64 * sq))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedOptimum {
    pub counts: Vec<usize>,
    pub value: f64,
}

/// Maximizes `Σ_m k_m θ_m B_m g(k_m)` over compositions of `users` by
/// dynamic programming over (channel, users assigned so far).
pub fn centralized_optimum(model: &ThroughputModel, users: usize) -> Result<CentralizedOptimum> {
    if !model.is_homogeneous() {
        return Err(Error::InvalidParameter(
            "centralized optimum needs rates shared by all users".into(),
        ));
    }
    if users == 0 {
        return Err(Error::InvalidParameter(
            "at least one user is required".into(),
        ));
    }
    let m = model.channels();
    let value_of = |c: usize, k: usize| {
        if k == 0 {
            0.0
        } else {
            k as f64 * model.utility(0, c, k)
        }
    };
    // best[c][j]: best value placing j users on channels 0..=c
    let mut best = vec![vec![f64::NEG_INFINITY; users + 1]; m];
    let mut pick = vec![vec![0usize; users + 1]; m];
    for j in 0..=users {
        best[0][j] = value_of(0, j);
        pick[0][j] = j;
    }
    for c in 1..m {
        for j in 0..=users {
            for k in 0..=j {
                let v = best[c - 1][j - k] + value_of(c, k);
                if v > best[c][j] {
                    best[c][j] = v;
                    pick[c][j] = k;
                }
            }
        }
    }
    let mut counts = vec![0; m];
    let mut left = users;
    for c in (0..m).rev() {
        counts[c] = pick[c][left];
        left -= counts[c];
    }
    Ok(CentralizedOptimum {
        counts,
        value: best[m - 1][users],
    })
}

/// How [`heterogeneous_optimum`] obtained its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimumMethod {
    /// Every channel assignment enumerated.
    Exhaustive,
    /// Every occupancy vector enumerated, users matched to slots by maximum-weight assignment.
    Compositions,
    /// Best of randomized move/swap local searches.
    LocalSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousOptimum {
    pub assignment: Vec<usize>,
    pub value: f64,
    pub exact: bool,
    pub method: OptimumMethod,
}

/// Limits deciding which method [`heterogeneous_optimum`] uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimumBudget {
    /// Enumerate assignments when `M^N` is at most this.
    pub exhaustive: f64,
    /// Enumerate compositions when their number is at most this.
    pub compositions: f64,
    pub restarts: usize,
}

impl Default for OptimumBudget {
    fn default() -> Self {
        Self {
            exhaustive: 1e7,
            compositions: 2e5,
            restarts: 32,
        }
    }
}

/// Weights are scaled to integers for the assignment solver.
const WEIGHT_SCALE: f64 = 1e9;

/// Maximizes `Σ_n θ_{a_n} B_{a_n}^n g(k_{a_n})` over all channel assignments.
///
/// Exact when `M^N` or the number of occupancy vectors is small enough for
/// the budget, otherwise a local-search value flagged `exact = false`.
pub fn heterogeneous_optimum<R: Rng + ?Sized>(
    model: &ThroughputModel,
    users: usize,
    budget: OptimumBudget,
    rng: &mut R,
) -> Result<HeterogeneousOptimum> {
    if users == 0 {
        return Err(Error::InvalidParameter(
            "at least one user is required".into(),
        ));
    }
    if let Some(rows) = model.user_rows() {
        if rows != users {
            return Err(Error::InvalidParameter(format!(
                "rate table has {rows} rows for {users} users"
            )));
        }
    }
    let m = model.channels();
    if (m as f64).powi(users as i32) <= budget.exhaustive {
        return Ok(exhaustive_assignment(model, users));
    }
    if composition_count(users, m) <= budget.compositions {
        return Ok(composition_assignment(model, users));
    }
    Ok(local_search(model, users, budget.restarts, rng))
}

/// `C(N+M−1, M−1)`, as a float to avoid overflow.
pub fn composition_count(users: usize, channels: usize) -> f64 {
    let mut c = 1.0;
    for i in 1..channels {
        c = c * (users + i) as f64 / i as f64;
    }
    c.round()
}

/// Calls `f` on every vector of `channels` non-negative counts summing to `users`.
pub fn for_each_composition(users: usize, channels: usize, mut f: impl FnMut(&[usize])) {
    let mut counts = vec![0; channels];
    fn rec(pos: usize, left: usize, counts: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pos + 1 == counts.len() {
            counts[pos] = left;
            f(counts);
            return;
        }
        for k in 0..=left {
            counts[pos] = k;
            rec(pos + 1, left - k, counts, f);
        }
    }
    rec(0, users, &mut counts, &mut f);
}

fn assignment_value(model: &ThroughputModel, assignment: &[usize]) -> f64 {
    model.allocation_utilities(assignment).iter().sum()
}

fn exhaustive_assignment(model: &ThroughputModel, users: usize) -> HeterogeneousOptimum {
    let m = model.channels();
    let mut current = vec![0usize; users];
    let mut best = (f64::NEG_INFINITY, current.clone());
    loop {
        let v = assignment_value(model, &current);
        if v > best.0 {
            best = (v, current.clone());
        }
        let mut i = 0;
        while i < users && current[i] + 1 == m {
            current[i] = 0;
            i += 1;
        }
        if i == users {
            break;
        }
        current[i] += 1;
    }
    HeterogeneousOptimum {
        assignment: best.1,
        value: best.0,
        exact: true,
        method: OptimumMethod::Exhaustive,
    }
}

fn composition_assignment(model: &ThroughputModel, users: usize) -> HeterogeneousOptimum {
    let m = model.channels();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for_each_composition(users, m, |counts| {
        let slots: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        let rows: Vec<Vec<i64>> = (0..users)
            .map(|n| {
                slots
                    .iter()
                    .map(|&c| (model.utility(n, c, counts[c]) * WEIGHT_SCALE).round() as i64)
                    .collect()
            })
            .collect();
        let weights = Matrix::from_rows(rows).expect("square weight matrix");
        let (_, cols) = kuhn_munkres(&weights);
        let assignment: Vec<usize> = cols.iter().map(|&s| slots[s]).collect();
        let v = assignment_value(model, &assignment);
        if v > best.0 {
            best = (v, assignment);
        }
    });
    HeterogeneousOptimum {
        assignment: best.1,
        value: best.0,
        exact: true,
        method: OptimumMethod::Compositions,
    }
}

fn local_search<R: Rng + ?Sized>(
    model: &ThroughputModel,
    users: usize,
    restarts: usize,
    rng: &mut R,
) -> HeterogeneousOptimum {
    let m = model.channels();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for _ in 0..restarts.max(1) {
        let mut a: Vec<usize> = (0..users).map(|_| rng.random_range(0..m)).collect();
        let mut value = assignment_value(model, &a);
        let mut order: Vec<usize> = (0..users).collect();
        loop {
            let mut improved = false;
            order.shuffle(rng);
            for &n in &order {
                let keep = a[n];
                for c in 0..m {
                    if c == keep {
                        continue;
                    }
                    a[n] = c;
                    let v = assignment_value(model, &a);
                    if v > value + 1e-12 {
                        value = v;
                        improved = true;
                        break;
                    }
                    a[n] = keep;
                }
            }
            for i in 0..users {
                for j in i + 1..users {
                    if a[i] == a[j] {
                        continue;
                    }
                    a.swap(i, j);
                    let v = assignment_value(model, &a);
                    if v > value + 1e-12 {
                        value = v;
                        improved = true;
                    } else {
                        a.swap(i, j);
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if value > best.0 {
            best = (value, a);
        }
    }
    HeterogeneousOptimum {
        assignment: best.1,
        value: best.0,
        exact: false,
        method: OptimumMethod::LocalSearch,
    }
}

/// Equilibrium system throughput over the optimum.
pub fn price_of_imitation(equilibrium_value: f64, optimum_value: f64) -> Result<f64> {
    if optimum_value == 0.0 {
        return Err(Error::Undefined("price of imitation with a zero optimum"));
    }
    Ok(equilibrium_value / optimum_value)
}

/// `N g(N/Z) / M` for homogeneous channels with `Z` utilized.
pub fn poi_lower_bound(
    users: usize,
    utilized: usize,
    channels: usize,
    cfg: ContentionConfig,
) -> Result<f64> {
    if utilized == 0 || channels == 0 || users == 0 {
        return Err(Error::InvalidParameter(
            "users, utilized and channel counts must be positive".into(),
        ));
    }
    let k = (users as f64 / utilized as f64).max(1.0);
    Ok(users as f64 * grab_probability(k, cfg)? / channels as f64)
}

/// Rounds non-negative `values` to integers summing to `total`: floors
/// first, then one extra unit to the largest remainders (ties to the lower index).
pub fn largest_remainder(values: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = values.iter().map(|v| v.max(0.0).floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] - values[a].floor();
        let rb = values[b] - values[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Integer allocation from a fractional state: each cluster's `z_k X_m^k`
/// rounded by largest remainder, members filled in channel order.
pub fn project_to_allocation(
    state: &PopulationState,
    clusters: &ClusterGraph,
) -> Result<Vec<usize>> {
    if state.clusters() != clusters.cluster_count() {
        return Err(Error::InvalidParameter(
            "state and cluster graph disagree".into(),
        ));
    }
    let mut allocation = vec![0; clusters.users()];
    for k in 0..clusters.cluster_count() {
        let members = clusters.members(k);
        let z = members.len();
        let targets: Vec<f64> = state.fractions()[k].iter().map(|x| x * z as f64).collect();
        let counts = largest_remainder(&targets, z);
        let channels = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k));
        for (&n, c) in members.iter().zip(channels) {
            allocation[n] = c;
        }
    }
    Ok(allocation)
}

/// Summary of one run. Serialized as one CSV row under [`MetricsReport::CSV_HEADER`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub per_user: Vec<f64>,
    pub system: f64,
    pub jain: f64,
    pub utilized: usize,
    pub optimum: Option<f64>,
    pub poi: Option<f64>,
    pub poi_bound: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "label,users,system_throughput,mean_throughput,jain,utilized_channels,optimum,poi,poi_bound";

    /// Fills in system throughput and Jain index from per-user throughputs.
    pub fn new(label: impl Into<String>, per_user: Vec<f64>, utilized: usize) -> Result<Self> {
        let jain = jain_index(&per_user)?;
        Ok(Self {
            label: label.into(),
            system: per_user.iter().sum(),
            per_user,
            jain,
            utilized,
            optimum: None,
            poi: None,
            poi_bound: None,
        })
    }

    pub fn with_optimum(mut self, optimum: f64) -> Result<Self> {
        self.poi = Some(price_of_imitation(self.system, optimum)?);
        self.optimum = Some(optimum);
        Ok(self)
    }

    pub fn mean(&self) -> f64 {
        self.system / self.per_user.len() as f64
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{},{},{},{},{},{}",
            self.label,
            self.per_user.len(),
            self.system,
            self.mean(),
            self.jain,
            self.utilized,
            opt(self.optimum),
            opt(self.poi),
            opt(self.poi_bound)
        );
        row
    }
}
