use clap::{Args, Parser, Subcommand};
use nmips_core::pdefam::Family;
use nmips_harness::report::RESULT_HEADER;
use nmips_harness::{cmd_ablate, cmd_eval, cmd_generate, cmd_noise_sweep, cmd_solve, ExperimentConfig, HarnessError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nmips", about = "Multitask symbolic regression for PDE families")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write training datasets and a manifest for every seed.
    Generate(Common),
    /// Run the search on generated datasets and write results.csv.
    Solve(Common),
    /// Score a fixed expression against the evaluation grid.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        expr: String,
        #[arg(long)]
        task: Option<usize>,
    },
    /// Matched runs with and without transfer.
    Ablate(Common),
    /// Solve at each configured noise level.
    NoiseSweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_transfer: bool,
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Family::ALL.iter().map(|f| f.name()).collect();
        format!("unknown family `{s}` (expected one of {})", names.join(", "))
    })
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, Vec<u64>), HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(f) = self.family {
            if f != cfg.family && !cfg.params.is_empty() {
                return Err(HarnessError::Config(format!(
                    "--family {} conflicts with the parameter list in the config",
                    f.name()
                )));
            }
            cfg.family = f;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if self.no_transfer {
            cfg.solver.transfer_enabled = false;
        }
        cfg.validate()?;
        let seeds = cfg.resolve_seeds(self.seed)?;
        Ok((cfg, seeds))
    }
}

fn print_rows<T: serde::Serialize>(rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, seeds) = c.resolve()?;
            for dir in cmd_generate(&cfg, &seeds)? {
                println!("{}", dir.display());
            }
        }
        Command::Solve(c) => {
            let (cfg, seeds) = c.resolve()?;
            print_rows(&cmd_solve(&cfg, &seeds)?)?;
        }
        Command::Eval { common, expr, task } => {
            let (cfg, seeds) = common.resolve()?;
            let mut rows = Vec::new();
            for seed in seeds {
                rows.extend(cmd_eval(&cfg, seed, &expr, task)?);
            }
            if rows.is_empty() {
                println!("{RESULT_HEADER}");
            }
            print_rows(&rows)?;
        }
        Command::Ablate(c) => {
            let (cfg, seeds) = c.resolve()?;
            let (_, summary) = cmd_ablate(&cfg, &seeds)?;
            print_rows(&summary)?;
        }
        Command::NoiseSweep(c) => {
            let (cfg, seeds) = c.resolve()?;
            print_rows(&cmd_noise_sweep(&cfg, &seeds)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
