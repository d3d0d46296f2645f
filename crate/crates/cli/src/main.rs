//! `bbm`: batch driver for nonlocal-energy experiments.
//!
//! Exit status: 0 when every row evaluated and every tolerance held, 1 when
//! the run completed with failures (a JSON manifest goes to stderr and, with
//! `--out`, next to the output), 2 when the configuration was rejected.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bbm_core::experiments::{run, ConfigOverrides, EnergyCache, Experiment, ExperimentConfig, OutputFormat};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bbm", version, about = "Nonlocal energies, kernel conditions and their ε → 0 limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// F_ε[u] in both forms against the predicted limit, per ε.
    Converge(Common),
    /// Condition (i), (i′), Lévy, (levy2), the ω-condition and (ii).
    Conditions(Common),
    /// Pairings of ρ_ε with radial probes and the estimated limit measure.
    ProbeNu(Common),
    /// Short-range sphere measures and their anisotropy matrices.
    SphereMeasure(Common),
    /// Physical-space against Fourier-space energies.
    Parseval(Common),
    /// Rescaling identities of û.
    Scaling(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    /// Kernel family id, e.g. `fractional`, `annulus:r0=1`, `table:<csv>`, or `all`.
    #[arg(long)]
    family: Option<String>,
    /// Test function id.
    #[arg(long)]
    function: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Strictly decreasing, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    eps_seq: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    r_grid: Option<Vec<f64>>,
    /// Short-range radius (default √ε).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// JSON config; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            family: self.family.clone(),
            function: self.function.clone(),
            dim: self.dim,
            eps_seq: self.eps_seq.clone(),
            r_grid: self.r_grid.clone(),
            delta: self.delta,
            tol: self.tol,
            out: self.out.clone(),
            format: self.format.map(|f| match f {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            }),
            ..Default::default()
        }
    }
}

fn resolve(experiment: Experiment, common: &Common) -> bbm_core::Result<ExperimentConfig> {
    let file = match &common.config {
        Some(path) => ConfigOverrides::from_json_file(path)?,
        None => ConfigOverrides::default(),
    };
    ExperimentConfig::resolve(experiment, common.overrides().over(file))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match &cli.command {
        Command::Converge(c) => (Experiment::Converge, c),
        Command::Conditions(c) => (Experiment::Conditions, c),
        Command::ProbeNu(c) => (Experiment::ProbeNu, c),
        Command::SphereMeasure(c) => (Experiment::SphereMeasure, c),
        Command::Parseval(c) => (Experiment::Parseval, c),
        Command::Scaling(c) => (Experiment::Scaling, c),
    };
    if let Some(n) = common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("bbm: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match resolve(experiment, common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("bbm: {e}");
            return ExitCode::from(2);
        }
    };
    let output = match run(&cfg, &EnergyCache::from_env()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("bbm {}: {e}", experiment.name());
            return ExitCode::from(2);
        }
    };

    let text = output.render();
    match &cfg.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("bbm: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                // a closed pipe (e.g. `| head`) is not an error worth reporting
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    eprintln!("bbm: cannot write output: {e}");
                    return ExitCode::from(2);
                }
            }
        }
    }
    if output.succeeded() {
        return ExitCode::SUCCESS;
    }
    let manifest = serde_json::to_string_pretty(&output.failure_manifest()).expect("manifest serializes");
    if let Some(path) = &cfg.out {
        let mut name = path.clone().into_os_string();
        name.push(".failures.json");
        if let Err(e) = std::fs::write(&name, &manifest) {
            eprintln!("bbm: cannot write failure manifest: {e}");
        }
    }
    eprintln!("{manifest}");
    ExitCode::from(1)
}
