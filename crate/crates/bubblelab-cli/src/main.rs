use bubblelab::experiments::{run, ExperimentConfig, ExperimentKind, Outcome};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Bubble decomposition experiments on model manifolds.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Projection constants, closed form against quadrature
    Constants(Common),
    /// Bubble equations on random points and the interaction envelope
    EuclidCheck(Common),
    /// Deficit and fit distance along a delta sweep
    Scaling(Common),
    /// Constrained single-bubble construction at N = 6
    Optimality(Common),
    /// Coercivity gap with and without constraints
    Coercivity(Common),
    /// Manifold sanity checks and the radius scan of the linearized operator
    Nondegeneracy(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; the built-in preset when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads for delta sweeps
    #[arg(long)]
    jobs: Option<usize>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Constants(c) => (ExperimentKind::Constants, c),
            Command::EuclidCheck(c) => (ExperimentKind::EuclidCheck, c),
            Command::Scaling(c) => (ExperimentKind::Scaling, c),
            Command::Optimality(c) => (ExperimentKind::Optimality, c),
            Command::Coercivity(c) => (ExperimentKind::Coercivity, c),
            Command::Nondegeneracy(c) => (ExperimentKind::Nondegeneracy, c),
        }
    }
}

fn execute(kind: ExperimentKind, args: Common) -> bubblelab::Result<Outcome> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(kind),
    };
    if config.experiment != kind {
        return Err(bubblelab::Error::InvalidInput(format!(
            "configuration describes `{}`, not `{}`",
            config.experiment.name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .or_else(|| config.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    run(&config, &out, jobs)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match execute(kind, args) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {}: {:.6e} (want {})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.bound);
            }
            for a in &outcome.artifacts {
                println!("wrote {}", a.display());
            }
            println!("{} in {:.1} s", if outcome.passed() { "passed" } else { "failed" }, outcome.wall_time_s);
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
