use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parahyp::harness::{load_scenario, run_experiment, Experiment};

/// Null-controllability experiments for coupled parabolic-transport systems.
#[derive(Parser, Debug)]
#[command(name = "parahyp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Free evolution of a random initial state.
    Simulate(Common),
    /// Spectrum of the mode generators and the branch splitting.
    Spectrum(Common),
    /// Obstruction witness sweep below the minimal time.
    Obstruct(Common),
    /// Lebeau-Robbiano control of the parabolic part and moment Gram conditioning.
    Control(Common),
    /// Null control of the full system above the minimal time.
    Pipeline(Common),
    /// Kalman rank of (K22, K21), cascade form and elimination chain.
    Kalman(Common),
    /// Moment control of the memory-type counterexample.
    Counterexample(Common),
    /// Scan of pure transport adjoint solutions.
    #[command(name = "appendix-a")]
    AppendixA(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Builtin name, e.g. `nscl(1,1,1,1.4,1)`, or a scenario TOML file.
    #[arg(long)]
    scenario: String,
    /// Output directory; defaults to `out/<experiment>`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fourier truncation.
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon as a multiple of the minimal time T*.
    #[arg(long)]
    t_factor: Option<f64>,
    /// Absolute horizon; overrides --t-factor.
    #[arg(long)]
    t: Option<f64>,
    /// Comma separated witness orders for `obstruct`.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Simulate(a) => (Experiment::Simulate, a),
        Command::Spectrum(a) => (Experiment::Spectrum, a),
        Command::Obstruct(a) => (Experiment::Obstruct, a),
        Command::Control(a) => (Experiment::Control, a),
        Command::Pipeline(a) => (Experiment::Pipeline, a),
        Command::Kalman(a) => (Experiment::Kalman, a),
        Command::Counterexample(a) => (Experiment::Counterexample, a),
        Command::AppendixA(a) => (Experiment::AppendixA, a),
    };
    let run = || -> parahyp::Result<parahyp::harness::RunSummary> {
        let mut sc = load_scenario(&args.scenario)?;
        sc.experiment = kind;
        if let Some(n) = args.nmax {
            sc.nmax = n;
        }
        if let Some(s) = args.seed {
            sc.seed = s;
        }
        if let Some(f) = args.t_factor {
            sc.t_factor = Some(f);
        }
        if let Some(t) = args.t {
            sc.t = Some(t);
        }
        if let Some(o) = &args.orders {
            sc.orders = o.clone();
        }
        let dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
        run_experiment(&sc, kind, &dir)
    };
    match run() {
        Ok(s) => {
            for l in &s.lines {
                println!("{l}");
            }
            println!("wrote {} files to {}", s.outputs.len() + 1, s.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
