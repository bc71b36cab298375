use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sinkflow::cli::{self, CliError, RunReport};
use sinkflow::flow::Tolerance;

#[derive(Parser)]
#[command(name = "sinkflow", version, about = "Run singular-flow experiments from JSON scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues, hyperbolicity and sectional dissipativity of singularities.
    Classify(RunArgs),
    /// Refine a periodic orbit and certify it as an (alpha, T)-uniform sink.
    CertifySink(RunArgs),
    /// Certify a sink and extract a contracted point from it.
    PlissExtract(RunArgs),
    /// Dominated splitting and domination-ratio fit at a singularity.
    Splitting(RunArgs),
    /// Backward cone invariance and distance doubling near a singularity.
    ConeClaim(RunArgs),
    /// Normal disks of points in the cone-like region against W^F.
    DiskIntersection(RunArgs),
    /// Entry times of a sequence tending to a singularity into the cone-like region.
    EntryTime(RunArgs),
    /// Diameter of sectional-map images of a normal disk.
    ShrinkProbe(RunArgs),
    /// Sink -> contracted point -> uniform scale -> entry time -> disk intersection.
    Pipeline(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json and plot tables; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sets both absolute and relative integration tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Plot series to write (repeatable).
    #[arg(long)]
    emit: Vec<String>,
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Classify(a) => ("classify", a),
            Command::CertifySink(a) => ("certify_sink", a),
            Command::PlissExtract(a) => ("pliss_extract", a),
            Command::Splitting(a) => ("splitting", a),
            Command::ConeClaim(a) => ("cone_claim", a),
            Command::DiskIntersection(a) => ("disk_intersection", a),
            Command::EntryTime(a) => ("entry_time", a),
            Command::ShrinkProbe(a) => ("shrink_probe", a),
            Command::Pipeline(a) => ("pipeline", a),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn execute(kind: &str, args: &RunArgs) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut config = cli::parse_config(&text, Some(kind))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(tol) = args.tol {
        config.tolerance = Tolerance::new(tol, tol);
    }
    if let Some(out) = &args.out {
        config.output.dir = Some(out.display().to_string());
    }
    config.output.emit.extend(args.emit.iter().cloned());

    let report = cli::run(&config)?;
    let tables = config
        .output
        .emit
        .iter()
        .map(|s| cli::emit_plotdata(&report, s).map(|t| (s.clone(), t)))
        .collect::<Result<Vec<_>, _>>()?;
    match &config.output.dir {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            write(&dir.join("report.json"), &report.to_json())?;
            for (name, table) in &tables {
                write(&dir.join(format!("{name}.dat")), table)?;
            }
        }
        None => {
            println!("{}", report.to_json());
            for (_, table) in &tables {
                print!("{table}");
            }
        }
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.parts();
    match execute(kind, args) {
        Ok(report) => {
            for v in &report.verdicts {
                eprintln!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sinkflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
