use clap::{Args, Parser, Subcommand};
use punctum::config::{help_text, parse_config_for, ExperimentKind};
use punctum::runner::run_with;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "punctum", version, about = "Numerical experiments for critical elliptic problems in punctured domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Name each step on stderr as it starts.
    #[arg(long)]
    progress: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form bubble, kernel and Newtonian identities.
    VerifyBubble(RunArgs),
    /// Regular part of the Green's function.
    Greens(RunArgs),
    /// Projections of bubbles onto punctured domains and remainder ratios.
    Project(RunArgs),
    /// Size of the finite-dimensional reduction correction over an epsilon sweep.
    CorrectionSweep(RunArgs),
    /// Reduced energy over an epsilon sweep against its limit profile.
    ReducedEnergySweep(RunArgs),
    /// Scan of the limit profile.
    Landscape(RunArgs),
    /// Critical point of the limit profile.
    CriticalPoint(RunArgs),
    /// Newton's method from the reduced ansatz over an epsilon sweep.
    NewtonContinuation(RunArgs),
    /// Normed-algebra and Hopf-map identities.
    HopfCheck(RunArgs),
    /// Meridian reduction residuals over block dimensions.
    MeridianCheck(RunArgs),
    /// List every configuration key with its default.
    Keys,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Keys => {
            print!("{}", help_text());
            return ExitCode::SUCCESS;
        }
        Command::VerifyBubble(a) => (ExperimentKind::VerifyBubble, a),
        Command::Greens(a) => (ExperimentKind::Greens, a),
        Command::Project(a) => (ExperimentKind::Project, a),
        Command::CorrectionSweep(a) => (ExperimentKind::CorrectionSweep, a),
        Command::ReducedEnergySweep(a) => (ExperimentKind::ReducedEnergySweep, a),
        Command::Landscape(a) => (ExperimentKind::Landscape, a),
        Command::CriticalPoint(a) => (ExperimentKind::CriticalPoint, a),
        Command::NewtonContinuation(a) => (ExperimentKind::NewtonContinuation, a),
        Command::HopfCheck(a) => (ExperimentKind::HopfCheck, a),
        Command::MeridianCheck(a) => (ExperimentKind::MeridianCheck, a),
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config_for(&text, Some(kind)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run_with(&cfg, &args.out, args.progress)) {
        Ok(m) if m.pass => {
            println!("{kind}: pass ({})", args.out.display());
            ExitCode::SUCCESS
        }
        Ok(_) => {
            println!("{kind}: FAIL (see {}/summary.json)", args.out.display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
