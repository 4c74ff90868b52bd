//! Deterministic large-population dynamics on a cluster graph.
//!
//! `X[k][m]` is the fraction of cluster `k` on channel `m`. One step of the
//! map moves mass from channel `i` to `j` in proportion to how much of the
//! cluster's closed neighborhood sits on `j` and to the probability
//! `Q(U_j − U_i)` that a noisy comparison favors `j`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::estimation::NoiseModel;
use crate::graph::ClusterGraph;
use crate::model::ThroughputModel;

/// Shared-rate throughput model plus the cluster structure it runs on.
#[derive(Debug, Clone)]
pub struct MeanFieldSpec {
    model: ThroughputModel,
    clusters: ClusterGraph,
    /// Per cluster: `(k', z_{k'} / Σ_{l∈C_k} z_l)` over the closed neighborhood.
    weights: Vec<Vec<(usize, f64)>>,
}

impl MeanFieldSpec {
    pub fn new(model: ThroughputModel, clusters: ClusterGraph) -> Result<Self> {
        if !model.is_homogeneous() {
            return Err(Error::InvalidParameter(
                "mean-field dynamics need rates shared by all users".into(),
            ));
        }
        let sizes = clusters.sizes();
        let weights = (0..clusters.cluster_count())
            .map(|k| {
                let closed = clusters.closed(k);
                let total: usize = closed.iter().map(|&l| sizes[l]).sum();
                closed
                    .into_iter()
                    .map(|l| (l, sizes[l] as f64 / total as f64))
                    .collect()
            })
            .collect();
        Ok(Self {
            model,
            clusters,
            weights,
        })
    }

    pub fn model(&self) -> &ThroughputModel {
        &self.model
    }

    pub fn clusters(&self) -> &ClusterGraph {
        &self.clusters
    }

    pub fn channels(&self) -> usize {
        self.model.channels()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.clusters
            .sizes()
            .into_iter()
            .map(|z| z as f64)
            .collect()
    }

    /// Default spread tolerance `1e−6 · max θB`.
    pub fn default_throughput_tol(&self) -> f64 {
        1e-6 * self.model.max_peak()
    }
}

/// Per-cluster channel fractions with the cluster sizes they weigh.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    x: Vec<Vec<f64>>,
    sizes: Vec<f64>,
}

impl PopulationState {
    pub fn new(x: Vec<Vec<f64>>, sizes: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != sizes.len() {
            return Err(Error::InvalidParameter(
                "one fraction row per cluster is required".into(),
            ));
        }
        let m = x[0].len();
        for (k, row) in x.iter().enumerate() {
            if row.len() != m || m == 0 {
                return Err(Error::InvalidParameter(format!(
                    "cluster {k} has a ragged row"
                )));
            }
            if row.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "cluster {k} has a negative fraction"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "cluster {k} fractions sum to {s}"
                )));
            }
        }
        if sizes.iter().any(|z| !(*z > 0.0)) {
            return Err(Error::InvalidParameter(
                "cluster sizes must be positive".into(),
            ));
        }
        Ok(Self { x, sizes })
    }

    /// Every cluster spread evenly over `channels`.
    pub fn uniform(sizes: Vec<f64>, channels: usize) -> Result<Self> {
        let row = vec![1.0 / channels as f64; channels];
        Self::new(vec![row; sizes.len()], sizes)
    }

    pub fn fractions(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn get(&self, cluster: usize, channel: usize) -> f64 {
        self.x[cluster][channel]
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn clusters(&self) -> usize {
        self.x.len()
    }

    pub fn channels(&self) -> usize {
        self.x[0].len()
    }

    /// `n_m = Σ_k z_k X_m^k`.
    pub fn mass(&self, channel: usize) -> f64 {
        self.x
            .iter()
            .zip(&self.sizes)
            .map(|(row, z)| z * row[channel])
            .sum()
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.channels()).map(|m| self.mass(m)).collect()
    }

    pub fn population(&self) -> f64 {
        self.sizes.iter().sum()
    }

    /// Share of the whole population on each channel.
    pub fn overall_fractions(&self) -> Vec<f64> {
        let n = self.population();
        self.masses().into_iter().map(|v| v / n).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.x
            .iter()
            .flatten()
            .zip(other.x.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// CDF `Q` of the difference of two independent noise draws.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDiffCdf {
    /// No noise: `Q` is a step with `Q(0) = 1/2`.
    Step,
    /// Difference of two `U(−a, a)` draws: triangular on `(−2a, 2a)`.
    Uniform { half_width: f64 },
    /// Numerical convolution tabulated on `[lo, hi]`, interpolated linearly.
    Tabulated { lo: f64, hi: f64, values: Vec<f64> },
}

/// Grid intervals for the tabulated CDF.
pub const CDF_GRID: usize = 4000;

/// Builds `Q` for a noise model: closed form for the uniform family,
/// otherwise `q(s) = ∫ f(ω) f(s+ω) dω` by the trapezoid rule on a grid of
/// [`CDF_GRID`] intervals over each axis, then cumulative trapezoid.
pub fn noise_diff_cdf(model: &NoiseModel) -> NoiseDiffCdf {
    let a = model.half_width();
    if a == 0.0 {
        return NoiseDiffCdf::Step;
    }
    if let NoiseModel::Uniform { half_width } = *model {
        return NoiseDiffCdf::Uniform { half_width };
    }
    let (wl, wu) = model.support();
    let (lo, hi) = (wl - wu, wu - wl);
    let n = CDF_GRID;
    let ds = (hi - lo) / n as f64;
    let dw = (wu - wl) / n as f64;
    let density: Vec<f64> = (0..=n)
        .map(|i| {
            let s = lo + i as f64 * ds;
            let mut acc = 0.0;
            for j in 0..=n {
                let w = wl + j as f64 * dw;
                let weight = if j == 0 || j == n { 0.5 } else { 1.0 };
                acc += weight * model.density(w) * model.density(s + w);
            }
            acc * dw
        })
        .collect();
    let mut cum = vec![0.0; n + 1];
    for i in 1..=n {
        cum[i] = cum[i - 1] + 0.5 * (density[i - 1] + density[i]) * ds;
    }
    let total = cum[n];
    // symmetrize so that Q(0) = 1/2 and Q(−s) = 1 − Q(s) hold exactly on the grid
    let values = (0..=n)
        .map(|i| 0.5 * (cum[i] / total + 1.0 - cum[n - i] / total))
        .collect();
    NoiseDiffCdf::Tabulated { lo, hi, values }
}

impl NoiseDiffCdf {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            NoiseDiffCdf::Step => {
                if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            NoiseDiffCdf::Uniform { half_width } => {
                let a = *half_width;
                if s <= -2.0 * a {
                    0.0
                } else if s >= 2.0 * a {
                    1.0
                } else if s <= 0.0 {
                    (s + 2.0 * a).powi(2) / (8.0 * a * a)
                } else {
                    1.0 - (2.0 * a - s).powi(2) / (8.0 * a * a)
                }
            }
            NoiseDiffCdf::Tabulated { lo, hi, values } => {
                if s <= *lo {
                    return 0.0;
                }
                if s >= *hi {
                    return 1.0;
                }
                let pos = (s - lo) / (hi - lo) * (values.len() - 1) as f64;
                let i = (pos.floor() as usize).min(values.len() - 2);
                let t = pos - i as f64;
                values[i] * (1.0 - t) + values[i + 1] * t
            }
        }
    }

    /// Interval outside which `Q` is 0 or 1.
    pub fn support(&self) -> (f64, f64) {
        match self {
            NoiseDiffCdf::Step => (0.0, 0.0),
            NoiseDiffCdf::Uniform { half_width } => (-2.0 * half_width, 2.0 * half_width),
            NoiseDiffCdf::Tabulated { lo, hi, .. } => (*lo, *hi),
        }
    }
}

/// `U(m, X) = θ_m B_m g(n_m)`.
pub fn expected_throughput(channel: usize, x: &PopulationState, spec: &MeanFieldSpec) -> f64 {
    spec.model.utility_at_mass(channel, x.mass(channel))
}

pub fn throughputs(x: &PopulationState, spec: &MeanFieldSpec) -> Vec<f64> {
    (0..spec.channels())
        .map(|m| expected_throughput(m, x, spec))
        .collect()
}

/// Mass of cluster `k`'s closed neighborhood sitting on each channel.
fn neighbor_mass(k: usize, x: &PopulationState, spec: &MeanFieldSpec) -> Vec<f64> {
    let mut y = vec![0.0; x.channels()];
    for &(l, w) in &spec.weights[k] {
        for (yj, xj) in y.iter_mut().zip(&x.x[l]) {
            *yj += w * xj;
        }
    }
    y
}

/// Probability that a user of cluster `k` on channel `i` moves to `j` in one step.
/// For `i == j` this is the probability of staying.
pub fn flow_probability(
    i: usize,
    j: usize,
    k: usize,
    x: &PopulationState,
    spec: &MeanFieldSpec,
    q: &NoiseDiffCdf,
) -> f64 {
    let u = throughputs(x, spec);
    flow_row(i, k, x, spec, q, &u)[j]
}

/// Row `i` of cluster `k`'s transition matrix.
pub fn flow_row(
    i: usize,
    k: usize,
    x: &PopulationState,
    spec: &MeanFieldSpec,
    q: &NoiseDiffCdf,
    u: &[f64],
) -> Vec<f64> {
    let y = neighbor_mass(k, x, spec);
    row_from(i, &y, q, u)
}

fn row_from(i: usize, y: &[f64], q: &NoiseDiffCdf, u: &[f64]) -> Vec<f64> {
    let mut row: Vec<f64> = (0..u.len())
        .map(|j| {
            if j == i {
                0.0
            } else {
                y[j] * q.eval(u[j] - u[i])
            }
        })
        .collect();
    row[i] = 1.0 - row.iter().sum::<f64>();
    row
}

/// One application of the exact discrete map.
pub fn step(x: &PopulationState, spec: &MeanFieldSpec, q: &NoiseDiffCdf) -> PopulationState {
    let u = throughputs(x, spec);
    step_with(x, spec, q, &u)
}

fn step_with(
    x: &PopulationState,
    spec: &MeanFieldSpec,
    q: &NoiseDiffCdf,
    u: &[f64],
) -> PopulationState {
    let m = x.channels();
    let next = (0..x.clusters())
        .map(|k| {
            let y = neighbor_mass(k, x, spec);
            let xk = &x.x[k];
            let mut out = xk.clone();
            for i in 0..m {
                if xk[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    if j != i {
                        let moved = xk[i] * y[j] * q.eval(u[j] - u[i]);
                        out[i] -= moved;
                        out[j] += moved;
                    }
                }
            }
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        })
        .collect();
    PopulationState {
        x: next,
        sizes: x.sizes.clone(),
    }
}

/// `Σ_k Σ_m (−z_k U(m, X)) Ẋ_m^k` with `Ẋ = step(X) − X`.
pub fn lyapunov_descent(x: &PopulationState, spec: &MeanFieldSpec, q: &NoiseDiffCdf) -> f64 {
    let u = throughputs(x, spec);
    let next = step_with(x, spec, q, &u);
    descent_between(x, &next, &u)
}

fn descent_between(x: &PopulationState, next: &PopulationState, u: &[f64]) -> f64 {
    let mut v = 0.0;
    for k in 0..x.clusters() {
        for (m, um) in u.iter().enumerate() {
            v -= x.sizes[k] * um * (next.x[k][m] - x.x[k][m]);
        }
    }
    v
}

/// Largest `|U(m) − U(i)|` over channels holding more than `floor` of the population.
pub fn utilized_spread(x: &PopulationState, spec: &MeanFieldSpec, floor: f64) -> f64 {
    let u = throughputs(x, spec);
    let used: Vec<f64> = x
        .overall_fractions()
        .iter()
        .zip(&u)
        .filter(|(f, _)| **f > floor)
        .map(|(_, v)| *v)
        .collect();
    let hi = used.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = used.iter().copied().fold(f64::INFINITY, f64::min);
    if used.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Stopping rule and diagnostics for [`iterate_to_equilibrium`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub tol: f64,
    /// `None` means `1e−6 · max θB`.
    pub throughput_tol: Option<f64>,
    pub max_iters: usize,
    pub mass_floor: f64,
    /// Keep every `n`-th state (plus the last) in the report.
    pub record_every: Option<usize>,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            throughput_tol: None,
            max_iters: 1_000_000,
            mass_floor: 1e-6,
            record_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumRun {
    pub state: PopulationState,
    pub converged: bool,
    pub iterations: usize,
    pub last_change: f64,
    pub spread: f64,
    /// Largest directional derivative seen along the trajectory.
    pub max_descent: f64,
    /// `(iteration, state)` pairs when recording was requested.
    pub trajectory: Vec<(usize, PopulationState)>,
}

impl EquilibriumRun {
    /// Channels above the mass floor at the end of the run.
    pub fn utilized_channels(&self, floor: f64) -> usize {
        self.state
            .overall_fractions()
            .iter()
            .filter(|f| **f > floor)
            .count()
    }
}

/// Iterates [`step`] until the max-norm change drops below `tol` or the
/// iteration budget runs out. `converged` additionally requires the
/// utilized-channel throughput spread to be under the throughput tolerance.
pub fn iterate_to_equilibrium(
    x0: PopulationState,
    spec: &MeanFieldSpec,
    q: &NoiseDiffCdf,
    opts: IterationOptions,
) -> EquilibriumRun {
    let throughput_tol = opts
        .throughput_tol
        .unwrap_or_else(|| spec.default_throughput_tol());
    let mut x = x0;
    let mut trajectory = Vec::new();
    let mut max_descent = f64::NEG_INFINITY;
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    let record = |t: usize, s: &PopulationState, out: &mut Vec<(usize, PopulationState)>| {
        if let Some(every) = opts.record_every {
            if t % every.max(1) == 0 {
                out.push((t, s.clone()));
            }
        }
    };
    record(0, &x, &mut trajectory);
    while iterations < opts.max_iters {
        let u = throughputs(&x, spec);
        let next = step_with(&x, spec, q, &u);
        max_descent = max_descent.max(descent_between(&x, &next, &u));
        last_change = next.max_abs_diff(&x);
        x = next;
        iterations += 1;
        record(iterations, &x, &mut trajectory);
        if last_change < opts.tol {
            break;
        }
    }
    if opts.record_every.is_some() && trajectory.last().map(|t| t.0) != Some(iterations) {
        trajectory.push((iterations, x.clone()));
    }
    let spread = utilized_spread(&x, spec, opts.mass_floor);
    EquilibriumRun {
        converged: last_change < opts.tol && spread < throughput_tol,
        state: x,
        iterations,
        last_change,
        spread,
        max_descent,
        trajectory,
    }
}

pub const TRAJECTORY_HEADER: &str = "period,cluster,channel,fraction,throughput";

/// One row per `(period, cluster, channel)`.
pub fn trajectory_csv(trajectory: &[(usize, PopulationState)], spec: &MeanFieldSpec) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (t, x) in trajectory {
        let u = throughputs(x, spec);
        for k in 0..x.clusters() {
            for (m, um) in u.iter().enumerate() {
                let _ = writeln!(out, "{t},{k},{m},{},{}", x.x[k][m], um);
            }
        }
    }
    out
}
