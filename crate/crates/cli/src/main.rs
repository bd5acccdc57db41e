use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use mfentropy_cli::{commands, with_workers, Outcome, RunConfig};

#[derive(Parser)]
#[command(name = "mfentropy", version, about = "Entropy dissipation and Fisher-information diagnostics for mean-field diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides simulation.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write SVG plots where available.
    #[arg(long, global = true)]
    svg: bool,
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Figure data for the linear and self-interacting examples.
    ReproduceFigures,
    /// Entropy dissipation identity along the grid solution.
    Dissipation,
    /// Steepest-descent slopes and the metric-derivative cross-check.
    GradientFlow,
    /// Randomized entropy-transport inequality suites.
    Hwbi,
    /// Closed-form expected cumulative Fisher information.
    Oracle,
    /// Simulate the configured system and check its martingale decomposition.
    Simulate,
    /// Print the effective configuration.
    ShowConfig,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.simulation.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.display().to_string();
    }
    if cli.svg {
        cfg.output.svg = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load(cli)?;
    for w in cfg.potentials()?.interaction.warnings() {
        eprintln!("warning: {w}");
    }
    let f = match cli.command {
        Command::ReproduceFigures => commands::reproduce_figures,
        Command::Dissipation => commands::dissipation,
        Command::GradientFlow => commands::gradient_flow,
        Command::Hwbi => commands::hwbi,
        Command::Oracle => commands::oracle,
        Command::Simulate => commands::simulate_cmd,
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            println!("# sha256 {}", cfg.hash());
            return Ok(true);
        }
    };
    let out: Outcome = with_workers(cli.workers, || f(&cfg))??;
    for l in &out.lines {
        println!("{l}");
    }
    for c in &out.checks {
        println!("{c}");
    }
    for p in &out.files {
        eprintln!("wrote {}", p.display());
    }
    Ok(out.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
