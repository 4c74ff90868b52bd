use proptest::prelude::*;
use spectrum_imitation::analysis::{check_imitation_equilibrium, project_to_allocation};
use spectrum_imitation::channel::IdleModel;
use spectrum_imitation::contention::ContentionConfig;
use spectrum_imitation::engine::{
    run_engine, Engine, EngineConfig, Estimator, Network, RadioDefaults, Rates,
};
use spectrum_imitation::estimation::NoiseModel;
use spectrum_imitation::meanfield::{
    flow_row, iterate_to_equilibrium, lyapunov_descent, noise_diff_cdf, step, throughputs,
    IterationOptions, MeanFieldSpec, NoiseDiffCdf, PopulationState,
};
use spectrum_imitation::model::ThroughputModel;
use spectrum_imitation::topology::ClusterTopology;

fn model_strategy() -> impl Strategy<Value = ThroughputModel> {
    (2usize..6).prop_flat_map(|m| {
        (
            prop::collection::vec(0.1f64..0.95, m),
            prop::collection::vec(5.0f64..120.0, m),
            2u32..60,
        )
            .prop_map(|(theta, rate, l)| {
                ThroughputModel::homogeneous(theta, rate, ContentionConfig::new(l).unwrap())
                    .unwrap()
            })
    })
}

fn row(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0f64..1.0], m).prop_map(|mut w| {
        if w.iter().sum::<f64>() == 0.0 {
            w[0] = 1.0;
        }
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    })
}

/// Model, topology, sizes, state and noise half-width (as a fraction of max θB).
fn case(
    topologies: &'static [ClusterTopology],
    equal_sizes: bool,
) -> impl Strategy<Value = (MeanFieldSpec, PopulationState, NoiseDiffCdf)> {
    (
        model_strategy(),
        1usize..5,
        prop::sample::select(topologies),
        0u8..3,
        0.01f64..0.5,
    )
        .prop_flat_map(move |(model, k, topo, shape, width)| {
            let m = model.channels();
            let sizes = if equal_sizes {
                Just(vec![20usize; k]).boxed()
            } else {
                prop::collection::vec(1usize..80, k).boxed()
            };
            (
                Just(model),
                Just(topo),
                sizes,
                prop::collection::vec(row(m), k),
                Just(shape),
                Just(width),
            )
        })
        .prop_map(|(model, topo, sizes, x, shape, width)| {
            let a = width * model.max_peak();
            let q = match shape {
                0 => noise_diff_cdf(&NoiseModel::uniform(a).unwrap()),
                1 => noise_diff_cdf(&NoiseModel::triangular(a).unwrap()),
                _ => NoiseDiffCdf::Step,
            };
            let z: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
            let spec = MeanFieldSpec::new(model, topo.build(&sizes).unwrap()).unwrap();
            (spec, PopulationState::new(x, z).unwrap(), q)
        })
}

const ANY: &[ClusterTopology] = &ClusterTopology::ALL;
// topologies where every pair of linked clusters has the same closed-neighborhood mass
const BALANCED_ANY_SIZES: &[ClusterTopology] =
    &[ClusterTopology::Complete, ClusterTopology::Isolated];
const BALANCED_EQUAL_SIZES: &[ClusterTopology] = &[
    ClusterTopology::Complete,
    ClusterTopology::Isolated,
    ClusterTopology::Ring,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn step_stays_on_the_simplex((spec, x, q) in case(ANY, false)) {
        let next = step(&x, &spec, &q);
        for k in 0..next.clusters() {
            let row = &next.fractions()[k];
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_rows_are_stochastic((spec, x, q) in case(ANY, false)) {
        let u = throughputs(&x, &spec);
        for k in 0..x.clusters() {
            for i in 0..x.channels() {
                let r = flow_row(i, k, &x, &spec, &q, &u);
                prop_assert!(r.iter().all(|p| *p >= -1e-15 && *p <= 1.0 + 1e-15));
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_descent_on_balanced_graphs((spec, x, q) in case(BALANCED_ANY_SIZES, false)) {
        prop_assert!(lyapunov_descent(&x, &spec, &q) <= 1e-12 * spec.model().max_peak() * x.population());
    }

    #[test]
    fn lyapunov_descent_on_equal_rings((spec, x, q) in case(BALANCED_EQUAL_SIZES, true)) {
        prop_assert!(lyapunov_descent(&x, &spec, &q) <= 1e-12 * spec.model().max_peak() * x.population());
    }

    #[test]
    fn noise_difference_cdf_shape(a in 0.01f64..50.0, triangular: bool, s in -120.0f64..120.0) {
        let noise = if triangular { NoiseModel::triangular(a) } else { NoiseModel::uniform(a) }.unwrap();
        let q = noise_diff_cdf(&noise);
        prop_assert!((q.eval(0.0) - 0.5).abs() < 1e-12);
        prop_assert_eq!(q.eval(-2.0 * a - 1e-9), 0.0);
        prop_assert_eq!(q.eval(2.0 * a + 1e-9), 1.0);
        prop_assert!(q.eval(s) <= q.eval(s + 0.01 * a) + 1e-12);
        prop_assert!((q.eval(s) + q.eval(-s) - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converged_states_equalize_and_pass_the_check(
        model in model_strategy(),
        topo in prop::sample::select(vec![ClusterTopology::Chain, ClusterTopology::Star, ClusterTopology::Complete, ClusterTopology::Ring]),
        sizes in prop::collection::vec(20usize..60, 1..4),
    ) {
        let q = noise_diff_cdf(&NoiseModel::default_for(model.max_peak()));
        let cg = topo.build(&sizes).unwrap();
        let spec = MeanFieldSpec::new(model.clone(), cg.clone()).unwrap();
        let z: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let x0 = PopulationState::uniform(z, model.channels()).unwrap();
        let run = iterate_to_equilibrium(x0, &spec, &q, IterationOptions { max_iters: 200_000, ..IterationOptions::default() });
        prop_assume!(run.converged);
        prop_assert!(run.spread < spec.default_throughput_tol());
        // rounding moves each channel's count by less than one user per cluster
        let shift = sizes.len() as f64;
        let alloc = project_to_allocation(&run.state, &cg).unwrap();
        let eps = 2.0
            * (0..model.channels())
                .map(|m| {
                    let mass = run.state.mass(m);
                    model.utility_at_mass(m, (mass - shift).max(1.0)) - model.utility_at_mass(m, mass + shift)
                })
                .fold(0.0, f64::max)
            + 1e-9;
        let graph = cg.expand().effective();
        let report = check_imitation_equilibrium(&alloc, &graph, &model, eps).unwrap();
        prop_assert!(report.passed, "residual {} > eps {}", report.residual, eps);
    }
}

/// Occupancy fractions of each cluster over time, from a stochastic run.
fn cluster_fractions(
    choices: &[Vec<usize>],
    members: &[Vec<usize>],
    channels: usize,
) -> Vec<Vec<Vec<f64>>> {
    choices
        .iter()
        .map(|row| {
            members
                .iter()
                .map(|ms| {
                    let mut f = vec![0.0; channels];
                    for &u in ms {
                        f[row[u]] += 1.0 / ms.len() as f64;
                    }
                    f
                })
                .collect()
        })
        .collect()
}

#[test]
fn stochastic_runs_concentrate_as_clusters_grow() {
    let theta = vec![2.0 / 3.0, 4.0 / 7.0, 5.0 / 9.0, 0.5, 0.8];
    let rate = vec![15.0, 70.0, 90.0, 40.0, 100.0];
    let start = [0.4, 0.3, 0.1, 0.1, 0.1];
    let horizon = 30;
    let mut medians = Vec::new();
    for z in [50usize, 200, 800] {
        let cg = ClusterTopology::Chain.build(&[z, z, z]).unwrap();
        let members: Vec<Vec<usize>> = (0..3).map(|k| cg.members(k).to_vec()).collect();
        let model = ThroughputModel::homogeneous(
            theta.clone(),
            rate.clone(),
            ContentionConfig::new(50).unwrap(),
        )
        .unwrap();
        let noise = NoiseModel::default_for(model.max_peak());
        let spec = MeanFieldSpec::new(model, cg.clone()).unwrap();
        let q = noise_diff_cdf(&noise);
        let mut det =
            vec![PopulationState::new(vec![start.to_vec(); 3], vec![z as f64; 3]).unwrap()];
        for _ in 0..horizon {
            det.push(step(det.last().unwrap(), &spec, &q));
        }
        let idle: Vec<IdleModel> = theta.iter().map(|&t| IdleModel::Iid { theta: t }).collect();
        let net = Network::calibrated(
            &idle,
            &Rates::Shared(rate.clone()),
            RadioDefaults::default(),
            ContentionConfig::new(50).unwrap(),
            cg.expand().effective(),
        )
        .unwrap();
        let mut initial = vec![0; 3 * z];
        for ms in &members {
            let mut seat = 0;
            for (c, f) in start.iter().enumerate() {
                let take = (f * z as f64).round() as usize;
                for &u in &ms[seat..seat + take] {
                    initial[u] = c;
                }
                seat += take;
            }
        }
        let cfg = EngineConfig {
            periods: horizon + 1,
            estimator: Estimator::AbstractNoise(noise),
            ..EngineConfig::default()
        };
        let mut deviations: Vec<f64> = (0..20u64)
            .map(|seed| {
                let mut engine = Engine::new(&net, cfg, seed)
                    .unwrap()
                    .with_initial_choices(initial.clone())
                    .unwrap();
                let trace = run_engine(&mut engine, horizon + 1);
                let sto = cluster_fractions(&trace.choices, &members, 5);
                let mut worst: f64 = 0.0;
                for t in 0..=horizon {
                    for k in 0..3 {
                        for m in 0..5 {
                            worst = worst.max((sto[t][k][m] - det[t].get(k, m)).abs());
                        }
                    }
                }
                worst
            })
            .collect();
        deviations.sort_by(f64::total_cmp);
        medians.push(0.5 * (deviations[9] + deviations[10]));
    }
    assert!(
        medians[0] >= medians[1] && medians[1] >= medians[2],
        "medians {medians:?}"
    );
}
