//! Command-line front end: graph metrics, single election runs, batch
//! sweeps from a TOML spec, scaling fits, and the wrong-size demo.

use std::path::PathBuf;
use std::process::ExitCode;

use anonle::known_n::elect_known_n;
use anonle::metrics::GraphMetrics;
use anonle::revocable::{run_revocable, PotentialMode, RevocableConfig};
use anonle_cli::{
    fit_rows, known_n_params_for, load_spec, pumping_wheel_demo, run_experiment, write_csv,
    write_summary, GraphFamily, GraphSpec, ParamOverrides, TrialRow,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anonle", about = "Anonymous-network leader election experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GraphArgs {
    /// Graph family: cycle | complete | random_regular | erdos_renyi | edge_list
    #[arg(long, default_value = "cycle")]
    family: GraphFamily,
    /// Node count (ignored for edge_list).
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Degree for random_regular.
    #[arg(long)]
    degree: Option<usize>,
    /// Edge probability for erdos_renyi.
    #[arg(long)]
    p: Option<f64>,
    /// Edge-list file for edge_list.
    #[arg(long)]
    path: Option<String>,
    /// Seed for randomized generators.
    #[arg(long, default_value_t = 1)]
    graph_seed: u64,
}

impl GraphArgs {
    fn build(&self) -> anonle::Result<anonle::PortGraph> {
        let spec = GraphSpec {
            family: self.family.clone(),
            sizes: vec![self.n],
            degree: self.degree,
            p: self.p,
            path: self.path.clone(),
        };
        spec.build(self.n, self.graph_seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute conductance, isoperimetric number, and mixing time.
    Metrics {
        #[command(flatten)]
        graph: GraphArgs,
    },
    /// Run one known-n election and print the outcome as JSON.
    ElectKnownN {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Candidate-probability constant.
        #[arg(long, default_value_t = 4)]
        c: u64,
        #[arg(long, default_value_t = 2.0 / 3.0)]
        x_multiplier: f64,
    },
    /// Run one revocable election and print the outcome as JSON.
    ElectRevocable {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        xi: f64,
        #[arg(long, default_value_t = 1.0)]
        r_scale: f64,
        #[arg(long, default_value_t = 1.0)]
        f_scale: f64,
        /// Cap the estimate sequence at this k instead of the stop policy.
        #[arg(long)]
        k_max: Option<u64>,
    },
    /// Run a batch sweep from a TOML spec file.
    Sweep { spec: PathBuf },
    /// Fit a log-log scaling exponent from a sweep CSV.
    Fit { csv: PathBuf },
    /// Run the known-n protocol with wrong size knowledge on a long cycle.
    PumpingDemo {
        #[arg(long, default_value_t = 8)]
        n_claimed: usize,
        #[arg(long, default_value_t = 64)]
        n_actual: usize,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn run(cli: Cli) -> anonle::Result<()> {
    match cli.command {
        Command::Metrics { graph } => {
            let g = graph.build()?;
            let m = GraphMetrics::compute(&g)?;
            print_json(&m);
            for w in m.sanity_warnings() {
                eprintln!("warning: {w}");
            }
        }
        Command::ElectKnownN { graph, seed, c, x_multiplier } => {
            let g = graph.build()?;
            let ov = ParamOverrides { c: Some(c), x_multiplier: Some(x_multiplier), ..Default::default() };
            let params = known_n_params_for(&g, &ov)?;
            let out = elect_known_n(&g, &params, seed)?;
            print_json(&out);
        }
        Command::ElectRevocable { graph, seed, epsilon, xi, r_scale, f_scale, k_max } => {
            let g = graph.build()?;
            let n = g.node_count();
            let i_g = if (2..=20).contains(&n) {
                Some(anonle::metrics::isoperimetric_exact(&g)?)
            } else {
                None
            };
            let cfg = RevocableConfig {
                epsilon,
                xi,
                i_g,
                r_scale,
                f_scale,
                mode: PotentialMode::Fixed,
                k_max_override: k_max,
            };
            let out = run_revocable(&g, &cfg, seed)?;
            print_json(&out);
        }
        Command::Sweep { spec } => {
            let spec = load_spec(&spec)?;
            let result = run_experiment(&spec)?;
            if let Some(csv) = &spec.output.csv {
                write_csv(&result.rows, csv.as_ref())?;
                eprintln!("wrote {} rows to {csv}", result.rows.len());
            }
            if let Some(summary) = &spec.output.summary {
                write_summary(&result.summary, summary.as_ref())?;
                eprintln!("wrote summary to {summary}");
            }
            print_json(&result.summary);
        }
        Command::Fit { csv } => {
            let mut rdr = csv::Reader::from_path(&csv).map_err(|e| {
                anonle::Error::InvalidParameter(format!("opening {}: {e}", csv.display()))
            })?;
            let mut rows: Vec<TrialRow> = Vec::new();
            for record in rdr.deserialize::<TrialRow>() {
                rows.push(record.map_err(|e| {
                    anonle::Error::InvalidParameter(format!("reading csv: {e}"))
                })?);
            }
            let fit = fit_rows(&rows)?;
            print_json(&fit);
        }
        Command::PumpingDemo { n_claimed, n_actual, trials, seed } => {
            let report = pumping_wheel_demo(n_claimed, n_actual, trials, seed)?;
            print_json(&report);
            if report.not_one_leader == 0 {
                eprintln!(
                    "warning: every trial elected exactly one leader; the wrong-size \
                     failure is probabilistic and this seed set happened to pass"
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
