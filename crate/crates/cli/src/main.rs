use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carnot_cap::experiment::{csv_path, json_path, run_and_write, ExperimentConfig};
use carnot_cap::tiling::{export_tiles, DEPTH_CAP};
use carnot_cap::verify::{run_suite, Suite};
use carnot_cap::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "carnot-cap", version, about = "Capacity and content experiments on the Heisenberg group")]
struct Cli {
    /// Overrides the seed of the config (or of the verification suite).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write `<output>.csv` and `<output>.json`.
    Run { config: PathBuf },
    /// Export tile centers and radii of one level as CSV.
    Tiles {
        #[arg(long)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the identity checks and print a JSON report.
    Verify {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Ibp,
    Identities,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Ibp => Suite::Ibp,
            SuiteArg::Identities => Suite::Identities,
            SuiteArg::All => Suite::All,
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 1;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidGroup(_)
        | Error::GroupMismatch { .. }
        | Error::InvalidWord(_)
        | Error::ExponentOutOfRange { .. }
        | Error::UnsupportedOrder(_)
        | Error::Precondition(_)
        | Error::NonPositiveDilation(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_NUMERIC,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match exit_code(e) {
        EXIT_CONFIG => "config",
        EXIT_IO => "io",
        _ => "numeric",
    }
}

fn fail(e: &Error) -> ExitCode {
    let msg = serde_json::json!({ "error": error_kind(e), "message": e.to_string() });
    eprintln!("{msg}");
    ExitCode::from(exit_code(e))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if same_file(&json_path(&cfg.output), &config) || same_file(&csv_path(&cfg.output), &config) {
                return fail(&Error::Config("output would overwrite the config file".into()));
            }
            match run_and_write(&cfg) {
                Ok(out) => {
                    println!(
                        "{} rows -> {} (metadata {})",
                        out.rows.len(),
                        csv_path(&cfg.output).display(),
                        json_path(&cfg.output).display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Tiles { level, out } => {
            if level > DEPTH_CAP {
                return fail(&Error::Config(format!("level {level} exceeds the cap {DEPTH_CAP}")));
            }
            let written = File::create(&out).map_err(Error::from).and_then(|f| {
                let mut w = BufWriter::new(f);
                let n = export_tiles(level, &mut w)?;
                w.flush()?;
                Ok(n)
            });
            match written {
                Ok(n) => {
                    println!("{n} tiles -> {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Verify { suite, out } => {
            let report = match run_suite(suite.into(), cli.seed.unwrap_or(0)) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            let json = report.to_json();
            let written = match &out {
                Some(p) => std::fs::write(p, &json).map_err(Error::from),
                None => {
                    println!("{json}");
                    Ok(())
                }
            };
            if let Err(e) = written {
                return fail(&e);
            }
            for c in report.failures() {
                eprintln!("failed: {} {} residual {:e} > {:e}", c.identity, c.case, c.residual, c.tolerance);
            }
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NUMERIC)
            }
        }
    }
}
