//! Turns a [`Scenario`] into a network, runs it and writes CSV outputs.
//!
//! Output files (all with a header row):
//!
//! | file | columns |
//! |------|---------|
//! | `trace.csv` | `period,user,channel,estimate,realized` |
//! | `user_throughput.csv` | `user,cluster,mean_throughput` |
//! | `occupancy.csv` | `period,channel,count,fraction` |
//! | `metrics.csv` | [`MetricsReport::CSV_HEADER`] |
//! | `meanfield.csv` | [`TRAJECTORY_HEADER`] (only when requested) |
//!
//! plus `scenario.resolved` (the scenario with defaults filled in) and
//! `metadata.txt` (`key = value` lines).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::analysis::{
    centralized_optimum, heterogeneous_optimum, poi_lower_bound, MetricsReport, OptimumBudget,
};
use crate::channel::{dbm_to_mw, IdleModel};
use crate::contention::ContentionConfig;
use crate::engine::{
    detect_convergence, run_simulation, Convergence, EngineConfig, Estimator, Network,
    RadioDefaults, Rates, SimulationTrace,
};
use crate::error::{Error, Result};
use crate::estimation::NoiseModel;
use crate::graph::{
    build_cluster_graph, erdos_renyi, random_geometric, CandidateScan, ClusterGraph, SocialGraph,
};
use crate::meanfield::{
    iterate_to_equilibrium, noise_diff_cdf, trajectory_csv, IterationOptions, MeanFieldSpec,
    PopulationState,
};
use crate::rng::{aux_stream, Aux};
use crate::scenario::{mode_name, EstimatorKind, GraphSource, IdleKind, NoiseShape, Scenario};

/// Iteration cap for the mean-field equilibrium reported in `metadata.txt`.
/// Small populations can cycle under the discrete map and never settle.
pub const MEANFIELD_MAX_ITERS: usize = 100_000;

/// A scenario made concrete for one seed.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: SocialGraph,
    pub network: Network,
    /// Present when the effective graph is symmetric.
    pub clusters: Option<ClusterGraph>,
    /// Connection radius actually used by a geometric graph.
    pub radius: Option<f64>,
    pub engine: EngineConfig,
    /// Users whose rates were drawn at random.
    pub heterogeneous_users: Vec<usize>,
}

pub fn idle_models(scenario: &Scenario) -> Result<Vec<IdleModel>> {
    scenario
        .channels
        .theta
        .iter()
        .map(|&theta| match scenario.channels.idle {
            IdleKind::Iid => Ok(IdleModel::Iid { theta }),
            IdleKind::Markov { mu } => IdleModel::markov_from_theta(theta, mu),
        })
        .collect()
}

fn max_peak(scenario: &Scenario, rates: &Rates) -> f64 {
    let theta = &scenario.channels.theta;
    let row_peak = |row: &[f64]| {
        row.iter()
            .zip(theta)
            .map(|(b, t)| b * t)
            .fold(0.0, f64::max)
    };
    match rates {
        Rates::Shared(row) => row_peak(row),
        Rates::PerUser(rows) => rows.iter().map(|r| row_peak(r)).fold(0.0, f64::max),
    }
}

pub fn build_instance(scenario: &Scenario) -> Result<Instance> {
    let n = scenario.users.count;
    let seed = scenario.seed;
    let mut graph_rng = aux_stream(seed, Aux::Graph);
    let mut radius = None;
    let mut clusters = None;
    let graph = match &scenario.graph {
        GraphSource::Complete => SocialGraph::complete(n),
        GraphSource::File(path) => {
            let g = SocialGraph::load_edge_list(path)?;
            if g.users() != n {
                return Err(Error::InvalidParameter(format!(
                    "{} has {} users, scenario has {n}",
                    path.display(),
                    g.users()
                )));
            }
            g
        }
        GraphSource::Geometric { side, radius: r } => {
            let geo = random_geometric(n, *side, *r, &mut graph_rng)?;
            radius = Some(geo.radius);
            geo.graph
        }
        GraphSource::Topology { kind, sizes } => {
            let cg = kind.build(sizes)?;
            let g = cg.expand();
            clusters = Some(cg);
            g
        }
        GraphSource::ErdosRenyi { p } => erdos_renyi(n, *p, &mut graph_rng),
    };
    let effective = graph.effective();
    if clusters.is_none() && effective.is_symmetric() {
        let mut rng = aux_stream(seed, Aux::Clustering);
        clusters = Some(build_cluster_graph(
            &effective,
            CandidateScan::Frozen,
            &mut rng,
        )?);
    }

    let shared = scenario.channels.rate.clone();
    let (rates, heterogeneous_users) = if scenario.users.heterogeneous == 0 {
        (Rates::Shared(shared), Vec::new())
    } else {
        let mut rng = aux_stream(seed, Aux::Rates);
        let mut chosen = index::sample(&mut rng, n, scenario.users.heterogeneous).into_vec();
        chosen.sort_unstable();
        let mut table = vec![shared.clone(); n];
        for &u in &chosen {
            for b in table[u].iter_mut() {
                *b =
                    scenario.users.random_base + rng.random::<f64>() * scenario.users.random_spread;
            }
        }
        (Rates::PerUser(table), chosen)
    };

    let e = &scenario.engine;
    let estimator = match e.estimator {
        EstimatorKind::Mle => Estimator::Mle,
        EstimatorKind::Noise => {
            let a = e
                .noise_half_width
                .unwrap_or(0.05 * max_peak(scenario, &rates));
            Estimator::AbstractNoise(match e.noise {
                NoiseShape::Uniform => NoiseModel::uniform(a)?,
                NoiseShape::Triangular => NoiseModel::triangular(a)?,
            })
        }
    };
    let engine = EngineConfig {
        slots_per_period: e.slots,
        fanout: e.fanout,
        delay: e.delay,
        mode: e.mode,
        periods: e.periods,
        estimator,
        reset_on_return: e.reset_on_return,
    };
    let radio = RadioDefaults {
        bandwidth_mhz: scenario.channels.bandwidth_mhz,
        noise_power_mw: dbm_to_mw(scenario.channels.noise_dbm),
        tx_power_mw: scenario.users.tx_power_mw,
    };
    let network = Network::calibrated(
        &idle_models(scenario)?,
        &rates,
        radio,
        ContentionConfig::new(e.lambda_max)?,
        effective,
    )?;
    Ok(Instance {
        graph,
        network,
        clusters,
        radius,
        engine,
        heterogeneous_users,
    })
}

/// What [`run_experiment`] produced.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub trace: SimulationTrace,
    pub convergence: Convergence,
    /// First period of the averaging window used for per-user throughput.
    pub average_from: usize,
    pub metrics: MetricsReport,
    pub radius: Option<f64>,
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Creates `out_dir` and checks it is writable.
fn prepare_dir(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let probe = out_dir.join(".write-test");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Runs one scenario and writes all outputs into `out_dir`.
pub fn run_experiment(scenario: &Scenario, out_dir: &Path) -> Result<ExperimentSummary> {
    prepare_dir(out_dir)?;
    let inst = build_instance(scenario)?;
    let trace = run_simulation(&inst.network, inst.engine, scenario.seed)?;
    let convergence = detect_convergence(
        &trace,
        trace.scan_periods,
        scenario.analysis.window,
        scenario.analysis.threshold,
    );
    let average_from = convergence
        .converged_at
        .unwrap_or(trace.scan_periods + (trace.periods() - trace.scan_periods) / 2);
    let per_user = trace.time_average_throughput(average_from);
    let occupancy = trace.time_averaged_occupancy(average_from);
    let utilized = occupancy.iter().filter(|f| **f > 0.0).count();
    let mut metrics =
        MetricsReport::new(format!("seed{}", scenario.seed), per_user.clone(), utilized)?;
    let model = &inst.network.model;
    let n = inst.network.users();
    if scenario.analysis.optimum {
        let optimum = if model.is_homogeneous() {
            centralized_optimum(model, n)?.value
        } else {
            let mut rng = aux_stream(scenario.seed, Aux::Optimum);
            heterogeneous_optimum(model, n, OptimumBudget::default(), &mut rng)?.value
        };
        metrics = metrics.with_optimum(optimum)?;
        let peaks: Vec<f64> = (0..model.channels()).map(|m| model.peak(0, m)).collect();
        if model.is_homogeneous() && peaks.iter().all(|p| (p - peaks[0]).abs() < 1e-12) {
            metrics.poi_bound = Some(poi_lower_bound(
                n,
                utilized.max(1),
                model.channels(),
                model.contention(),
            )?);
        }
    }

    let mut csv = String::from("period,user,channel,estimate,realized\n");
    for t in 0..trace.periods() {
        for u in 0..n {
            let _ = writeln!(
                csv,
                "{t},{u},{},{},{}",
                trace.choices[t][u], trace.estimates[t][u], trace.realized[t][u]
            );
        }
    }
    write(out_dir.join("trace.csv"), &csv)?;

    let mut csv = String::from("user,cluster,mean_throughput\n");
    for (u, v) in per_user.iter().enumerate() {
        let cluster = inst
            .clusters
            .as_ref()
            .map(|c| c.cluster_of(u).to_string())
            .unwrap_or_default();
        let _ = writeln!(csv, "{u},{cluster},{v}");
    }
    write(out_dir.join("user_throughput.csv"), &csv)?;

    let mut csv = String::from("period,channel,count,fraction\n");
    for t in 0..trace.periods() {
        for (m, &c) in trace.occupancy[t].iter().enumerate() {
            let _ = writeln!(csv, "{t},{m},{c},{}", c as f64 / n as f64);
        }
    }
    write(out_dir.join("occupancy.csv"), &csv)?;

    write(
        out_dir.join("metrics.csv"),
        &format!("{}\n{}\n", MetricsReport::CSV_HEADER, metrics.to_csv_row()),
    )?;

    let mut meta = String::new();
    let _ = writeln!(meta, "seed = {}", scenario.seed);
    let _ = writeln!(meta, "users = {n}");
    let _ = writeln!(meta, "channels = {}", inst.network.channel_count());
    let _ = writeln!(meta, "mode = {}", mode_name(inst.engine.mode));
    let _ = writeln!(meta, "edges = {}", inst.graph.edge_count());
    let _ = writeln!(
        meta,
        "graph_connected = {}",
        inst.network.neighborhoods.is_connected()
    );
    if let Some(r) = inst.radius {
        let _ = writeln!(meta, "radius = {r}");
    }
    if let Some(c) = &inst.clusters {
        let _ = writeln!(meta, "clusters = {}", c.cluster_count());
    }
    let _ = writeln!(
        meta,
        "converged_at = {}",
        convergence
            .converged_at
            .map_or("none".to_string(), |t| t.to_string())
    );
    let _ = writeln!(meta, "average_from = {average_from}");
    if !inst.heterogeneous_users.is_empty() {
        let ids: Vec<String> = inst
            .heterogeneous_users
            .iter()
            .map(usize::to_string)
            .collect();
        let _ = writeln!(meta, "heterogeneous_users = {}", ids.join(","));
    }

    if scenario.analysis.meanfield {
        let clusters = inst.clusters.clone().ok_or_else(|| {
            Error::InvalidGraph("mean-field output needs a symmetric graph".into())
        })?;
        let spec = MeanFieldSpec::new(model.clone(), clusters)?;
        let noise = match inst.engine.estimator {
            Estimator::AbstractNoise(nm) => nm,
            Estimator::Mle => NoiseModel::default_for(model.max_peak()),
        };
        let q = noise_diff_cdf(&noise);
        let x0 = PopulationState::uniform(spec.sizes(), spec.channels())?;
        let shown = iterate_to_equilibrium(
            x0.clone(),
            &spec,
            &q,
            IterationOptions {
                max_iters: trace.periods(),
                tol: 0.0,
                record_every: Some(1),
                ..IterationOptions::default()
            },
        );
        write(
            out_dir.join("meanfield.csv"),
            &trajectory_csv(&shown.trajectory, &spec),
        )?;
        let eq = iterate_to_equilibrium(
            x0,
            &spec,
            &q,
            IterationOptions {
                max_iters: MEANFIELD_MAX_ITERS,
                ..IterationOptions::default()
            },
        );
        let _ = writeln!(meta, "meanfield_converged = {}", eq.converged);
        let _ = writeln!(meta, "meanfield_iterations = {}", eq.iterations);
        let _ = writeln!(meta, "meanfield_spread = {}", eq.spread);
    }
    write(out_dir.join("metadata.txt"), &meta)?;
    write(out_dir.join("scenario.resolved"), &scenario.to_text())?;

    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        trace,
        convergence,
        average_from,
        metrics,
        radius: inst.radius,
    })
}

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub converged_at: Option<usize>,
    pub final_occupancy: Vec<f64>,
}

pub const SWEEP_HEADER: &str = "label,seed,converged_at,system_throughput,jain,poi,final_occupancy";

fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for p in points {
        let occ: Vec<String> = p.final_occupancy.iter().map(f64::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.label,
            p.seed,
            p.converged_at.map_or(String::new(), |t| t.to_string()),
            p.metrics.system,
            p.metrics.jain,
            p.metrics.poi.map_or(String::new(), |v| v.to_string()),
            occ.join(";")
        );
    }
    out
}

/// Runs `variants` in parallel, each in `out_dir/<label>-seed<s>/`, then writes `summary.csv`.
fn sweep(
    variants: Vec<(String, Scenario)>,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    prepare_dir(out_dir)?;
    let jobs: Vec<(String, Scenario)> = variants
        .into_iter()
        .flat_map(|(label, s)| {
            seeds.iter().map(move |&seed| {
                let mut s = s.clone();
                s.seed = seed;
                (label.clone(), s)
            })
        })
        .collect();
    let points = jobs
        .par_iter()
        .map(|(label, s)| {
            let dir = out_dir.join(format!("{label}-seed{}", s.seed));
            let r = run_experiment(s, &dir)?;
            let window = s.analysis.window.min(r.trace.periods());
            let final_occupancy = r.trace.time_averaged_occupancy(r.trace.periods() - window);
            Ok(SweepPoint {
                label: label.clone(),
                seed: s.seed,
                metrics: r.metrics,
                converged_at: r.convergence.converged_at,
                final_occupancy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write(out_dir.join("summary.csv"), &sweep_csv(&points))?;
    Ok(points)
}

/// One run per delay value and seed.
pub fn delay_sweep(
    base: &Scenario,
    delays: &[usize],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    let variants = delays
        .iter()
        .map(|&d| {
            let mut s = base.clone();
            s.engine.delay = d;
            (format!("delay{d}"), s)
        })
        .collect();
    sweep(variants, seeds, out_dir)
}

/// One run per population size and seed; heterogeneous users scale with `N`.
pub fn user_sweep(
    base: &Scenario,
    counts: &[usize],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    let share = base.users.heterogeneous as f64 / base.users.count as f64;
    let variants = counts
        .iter()
        .map(|&n| {
            let mut s = base.clone();
            s.users.count = n;
            s.users.heterogeneous = (share * n as f64).round() as usize;
            if let GraphSource::Topology { sizes, .. } = &mut s.graph {
                *sizes = vec![n];
            }
            (format!("users{n}"), s)
        })
        .collect();
    sweep(variants, seeds, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Mode;

    fn small() -> Scenario {
        let text = "[users]\ncount = 12\n[graph]\nsource = topology\ntopology = chain\nsizes = 4, 4, 4\n\
                    [engine]\nperiods = 40\n[analysis]\nmeanfield = true\noptimum = true\nwindow = 10\n";
        Scenario::parse(text, Path::new("s.scn")).unwrap()
    }

    #[test]
    fn writes_every_output() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&small(), dir.path()).unwrap();
        for f in [
            "trace.csv",
            "user_throughput.csv",
            "occupancy.csv",
            "metrics.csv",
            "meanfield.csv",
            "metadata.txt",
            "scenario.resolved",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 40 * 12);
        assert!(r.metrics.poi.is_some());
    }

    #[test]
    fn identical_seed_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&small(), a.path()).unwrap();
        run_experiment(&small(), b.path()).unwrap();
        for f in [
            "trace.csv",
            "occupancy.csv",
            "metrics.csv",
            "meanfield.csv",
            "metadata.txt",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn heterogeneous_instance_marks_users() {
        let mut s = small();
        s.users.heterogeneous = 3;
        s.engine.mode = Mode::Heterogeneous;
        s.analysis.meanfield = false;
        let inst = build_instance(&s).unwrap();
        assert_eq!(inst.heterogeneous_users.len(), 3);
        let u = inst.heterogeneous_users[0];
        assert!((100.0..=200.0).contains(&inst.network.model.rate(u, 0)));
    }

    #[test]
    fn geometric_radius_recorded() {
        let mut s = small();
        s.graph = GraphSource::Geometric {
            side: 250.0,
            radius: None,
        };
        s.analysis.meanfield = false;
        let inst = build_instance(&s).unwrap();
        assert!(inst.radius.unwrap() > 0.0);
        assert!(inst.network.neighborhoods.is_connected());
    }

    #[test]
    fn unwritable_output_fails_first() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        assert!(matches!(
            run_experiment(&small(), &file.join("sub")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn sweeps_write_summaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = small();
        s.analysis.meanfield = false;
        let pts = delay_sweep(&s, &[0, 5], &[1, 2], dir.path()).unwrap();
        assert_eq!(pts.len(), 4);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().next().unwrap(), SWEEP_HEADER);
        assert_eq!(summary.lines().count(), 5);
        let pts = user_sweep(&s, &[6, 9], &[1], &dir.path().join("n")).unwrap();
        assert_eq!(pts[1].metrics.per_user.len(), 9);
    }
}
