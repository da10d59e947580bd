use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctmap::element::Integrator;
use ctmap_bench::experiment::{filter_means, write_simulation, write_trajectory};
use ctmap_bench::{estimate, prepare, run_experiment, run_sweep, ExperimentConfig, Method, ModelChoice, Result};

#[derive(Parser)]
#[command(name = "ctmap-bench", version, about = "Continuous-time MAP estimation experiments")]
struct Cli {
    /// Cap on parallel workers (`auto` for the default pool).
    #[arg(long, global = true)]
    threads: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the model and write truth and measurements.
    Simulate(RunArgs),
    /// Run one estimator once and write the trajectory file.
    Estimate(RunArgs),
    /// Timed repeated runs, optionally swept over T.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated block counts; runs every method at each.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        /// Methods for the sweep (default: all four).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelChoice>,
    #[arg(long)]
    method: Option<Method>,
    /// Number of blocks.
    #[arg(short = 'T', long = "blocks")]
    blocks: Option<usize>,
    /// Euler substeps per block.
    #[arg(short = 'n', long = "substeps")]
    substeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Use the 4th-order block integrator.
    #[arg(long)]
    rk4: bool,
    #[arg(long)]
    w_scale: Option<f64>,
    #[arg(long)]
    r_scale: Option<f64>,
}

impl RunArgs {
    fn resolve(self, threads: Option<&str>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(model, method, blocks, substeps, seed, repeats, out, iterations, w_scale, r_scale);
        if self.rk4 {
            cfg.integrator = Integrator::Rk4;
        }
        match threads {
            None => {}
            Some("auto") => cfg.threads = None,
            Some(n) => {
                cfg.threads = Some(n.parse().map_err(|_| {
                    ctmap_bench::BenchError::Invalid(format!("--threads expects a count or `auto`, got `{n}`"))
                })?)
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create_out(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|source| ctmap_bench::BenchError::Io {
        path: cfg.out.clone(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.as_deref();
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.resolve(threads)?;
            let scenario = prepare(&cfg)?;
            create_out(&cfg)?;
            let path = cfg.out.join("simulation.csv");
            write_simulation(&path, &scenario)?;
            println!("wrote {}", path.display());
        }
        Command::Estimate(args) => {
            let cfg = args.resolve(threads)?;
            let scenario = prepare(&cfg)?;
            let map = estimate(&scenario, cfg.method, &cfg)?;
            let means = filter_means(&scenario, &map)?;
            create_out(&cfg)?;
            let path = cfg.out.join("trajectory.csv");
            write_trajectory(&path, &scenario, Some(&means), &map)?;
            let cost = ctmap::om_cost(scenario.model.as_dyn(), &map, &scenario.meas, &scenario.grid)?;
            println!("{} on {}: cost {cost:.6e}, wrote {}", cfg.method, cfg.model, path.display());
        }
        Command::Bench { run, sweep, methods } => {
            let cfg = run.resolve(threads)?;
            if sweep.is_empty() {
                let records = run_experiment(&cfg)?;
                for r in &records {
                    match &r.failure {
                        Some(reason) => println!("run {}: failed: {reason}", r.run_index),
                        None => println!(
                            "run {}: {:.6} s, diff vs seq {}",
                            r.run_index,
                            r.runtime_seconds,
                            r.max_abs_diff_vs_seq.map_or("-".into(), |d| format!("{d:.3e}"))
                        ),
                    }
                }
            } else {
                let methods = if methods.is_empty() { Method::ALL.to_vec() } else { methods };
                for row in run_sweep(&cfg, &sweep, &methods)? {
                    let cells: Vec<String> = row
                        .mean_runtime
                        .iter()
                        .map(|(m, t)| format!("{m} {}", t.map_or("failed".into(), |t| format!("{t:.4} s"))))
                        .collect();
                    println!("T={}: {}", row.blocks, cells.join(", "));
                }
            }
            println!("wrote {}", cfg.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
