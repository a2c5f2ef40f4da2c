use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crois_cli::{export_curves, gen_data, run_command, CliError};

#[derive(Parser)]
#[command(name = "crois", version, about = "Group-robust training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a TOML document.
    Run {
        config: PathBuf,
        /// Output root; a fresh run directory is created inside it.
        #[arg(long, env = crois_cli::OUT_ENV)]
        out: Option<PathBuf>,
        /// Jobs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Print the resolved configurations and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Rewrite the learning-curve CSVs of a run directory.
    ExportCurves { run_dir: PathBuf },
    /// Write one synthetic split as an embedding CSV.
    GenData {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result: Result<(), CliError> = match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            dry_run,
        } => run_command(&config, out.as_deref(), jobs, dry_run).map(|_| ()),
        Command::ExportCurves { run_dir } => export_curves(&run_dir).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::GenData { spec, out } => gen_data(&spec, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
