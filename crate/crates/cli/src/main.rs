use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use spectrum_imitation::contention::{ContentionConfig, GrabTable};
use spectrum_imitation::engine::Mode;
use spectrum_imitation::experiment::{delay_sweep, run_experiment, user_sweep};
use spectrum_imitation::graph::{build_cluster_graph, CandidateScan, SocialGraph};
use spectrum_imitation::rng::{aux_stream, Aux};
use spectrum_imitation::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "specimit",
    version,
    about = "Imitation-based spectrum sharing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hom,
    Het,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Delay,
    Users,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write CSV outputs.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[run] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        periods: Option<usize>,
        #[arg(long)]
        delay: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Also write the mean-field trajectory.
        #[arg(long)]
        meanfield: bool,
    },
    /// Print the cluster graph of an edge-list file.
    Cluster {
        graph: PathBuf,
        /// Seed for the random order in which clusters are grown.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only mutual neighbor relations before clustering.
        #[arg(long)]
        mutual: bool,
    },
    /// Print the grab-probability table g(1..=kmax).
    Gtable {
        #[arg(long)]
        lambda_max: u32,
        #[arg(long)]
        kmax: usize,
    },
    /// Run a scenario over several delays or population sizes and seeds in parallel.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        over: SweepKind,
        /// Comma-separated delays or user counts.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            periods,
            delay,
            mode,
            meanfield,
        } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(t) = periods {
                if t == 0 {
                    bail!("--periods must be at least 1");
                }
                s.engine.periods = t;
            }
            if let Some(d) = delay {
                s.engine.delay = d;
            }
            if let Some(m) = mode {
                s.engine.mode = match m {
                    ModeArg::Hom => Mode::Homogeneous,
                    ModeArg::Het => Mode::Heterogeneous,
                };
            }
            s.analysis.meanfield |= meanfield;
            let r = run_experiment(&s, &out)?;
            println!(
                "periods {} converged_at {} system {} jain {}",
                r.trace.periods(),
                r.convergence
                    .converged_at
                    .map_or("none".to_string(), |t| t.to_string()),
                r.metrics.system,
                r.metrics.jain
            );
            println!("wrote {}", out.display());
        }
        Command::Cluster {
            graph,
            seed,
            mutual,
        } => {
            let g = SocialGraph::load_edge_list(&graph)?;
            let mut eff = g.effective();
            if mutual {
                eff = eff.mutual();
            }
            let mut rng = aux_stream(seed, Aux::Clustering);
            let cg = build_cluster_graph(&eff, CandidateScan::Frozen, &mut rng)
                .with_context(|| format!("clustering {}", graph.display()))?;
            print!("{}", cg.describe());
        }
        Command::Gtable { lambda_max, kmax } => {
            let table = GrabTable::new(ContentionConfig::new(lambda_max)?, kmax);
            println!("k,g");
            for k in 1..=kmax {
                println!("{k},{}", table.get(k));
            }
        }
        Command::Sweep {
            scenario,
            out,
            over,
            values,
            seeds,
        } => {
            let s = Scenario::load(&scenario)?;
            if matches!(over, SweepKind::Users) && values.contains(&0) {
                bail!("user counts must be positive");
            }
            let points = match over {
                SweepKind::Delay => delay_sweep(&s, &values, &seeds, &out)?,
                SweepKind::Users => user_sweep(&s, &values, &seeds, &out)?,
            };
            println!(
                "{} runs, summary in {}",
                points.len(),
                out.join("summary.csv").display()
            );
        }
    }
    Ok(())
}
