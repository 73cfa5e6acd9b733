use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cablegff_cli::config::{Command, ExperimentConfig, TableFormat, VertexSpec};
use cablegff_cli::error::{CliError, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cablegff", version, about = "Free field and interlacement experiments on cable systems")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Green function, capacity and refinement identities (deterministic).
    Potential(Flags),
    /// Capacity law of the level-set cluster at x0.
    CapLaw(Flags),
    /// Interlacement vacancy, excursion count and the isomorphisms.
    Isom(Flags),
    /// Convergence along growing domains with infinite killing outside.
    Approx(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph spec: inline JSON or a path to a JSON file.
    #[arg(long)]
    graph: Option<String>,
    /// Root vertex: an id, or grid coordinates such as `3,3`.
    #[arg(long)]
    x0: Option<String>,
    /// Levels h, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    h: Option<Vec<f64>>,
    /// Interlacement levels u, comma separated.
    #[arg(long, value_delimiter = ',')]
    u: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<u64>,
    /// Refinement levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    refine: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<TableFormat>,
}

impl Flags {
    fn config(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(g) = self.graph {
            c.graph = Some(match serde_json::from_str::<serde_json::Value>(&g) {
                Ok(v @ serde_json::Value::Object(_)) => v,
                _ => serde_json::Value::String(g),
            });
        }
        if let Some(x) = self.x0 {
            c.x0 = Some(VertexSpec::parse_flag(&x));
        }
        c.h = self.h.or(c.h);
        c.u = self.u.or(c.u);
        c.samples = self.samples.or(c.samples);
        c.refine = self.refine.or(c.refine);
        c.seed = self.seed.or(c.seed);
        c.workers = self.workers.or(c.workers);
        c.out = self.out.or(c.out);
        c.format = self.format.or(c.format);
        Ok(c)
    }
}

fn execute(command: Command, flags: Flags) -> Result<bool> {
    let cfg = flags.config()?.resolve(command)?;
    let start = Instant::now();
    let outcome = cablegff_cli::run(&cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    for r in &outcome.reports {
        let p = r.p_value.map(|p| format!(" p={p:.3e}")).unwrap_or_default();
        println!("{} {} stat={:.4e}{p}", if r.pass { "PASS" } else { "FAIL" }, r.experiment, r.statistic);
    }
    let passed = outcome.reports.iter().filter(|r| r.pass).count();
    println!("{}: {passed}/{} checks passed in {elapsed:.2}s", command.name(), outcome.reports.len());
    if let Some(dir) = &cfg.out {
        outcome.write(dir, &cfg)?;
        println!("results written to {}", dir.display());
    }
    Ok(outcome.pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Sub::Potential(f) => (Command::Potential, f),
        Sub::CapLaw(f) => (Command::CapLaw, f),
        Sub::Isom(f) => (Command::Isom, f),
        Sub::Approx(f) => (Command::Approx, f),
    };
    match execute(command, flags) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
