use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use vpbridge::adapter::AdapterOptions;
use vpbridge::harness::{self, ModelSource, RunConfig, Verdict};

#[derive(Parser)]
#[command(name = "cosim", about = "Run co-simulation scenarios against an FMU")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario, write the trace and report the verdict.
    #[command(group(ArgGroup::new("model").required(true).args(["fmu", "md"])))]
    Run {
        /// Packed FMU to unpack and run.
        #[arg(long)]
        fmu: Option<PathBuf>,
        /// Bare model description; its platform executable path is resolved beside it.
        #[arg(long)]
        md: Option<PathBuf>,
        /// Scenario CSV with step, stop, start, at and expect rows.
        #[arg(long)]
        scenario: PathBuf,
        /// Trace CSV written after the run.
        #[arg(long)]
        trace: PathBuf,
        /// Attach to a running platform on this host instead of spawning one.
        #[arg(long)]
        host: Option<String>,
        /// Port to use instead of the one in the model description.
        #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
        port: Option<u16>,
        /// Drive the FMU through its exported library functions.
        #[arg(long, requires = "fmu", conflicts_with_all = ["host", "port"])]
        via_fmi: bool,
        /// Write the command transcript to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Cmd::Run { fmu, md, scenario, trace, host, port, via_fmi, transcript } = Cli::parse().command;
    let mut options = match AdapterOptions::from_env() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cosim: {e}");
            return ExitCode::from(2);
        }
    };
    options.host = host.or(options.host);
    options.port = port.or(options.port);
    let model = match (fmu, md) {
        (Some(f), _) => ModelSource::Fmu(f),
        (None, Some(m)) => ModelSource::ModelDescription(m),
        (None, None) => unreachable!("clap enforces one model source"),
    };
    let config = RunConfig { model, scenario, trace, options, via_fmi };
    match harness::run(&config) {
        Ok(report) => {
            print!("{}", report.summary());
            if let Some(path) = transcript {
                let text = vpbridge::server::TranscriptEntry::to_lines(&report.transcript);
                if let Err(e) = std::fs::write(&path, text) {
                    eprintln!("cosim: {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            match report.outcome.verdict() {
                Verdict::Pass => ExitCode::SUCCESS,
                Verdict::Fail => ExitCode::from(1),
            }
        }
        Err(e) => {
            eprintln!("cosim: {e}");
            ExitCode::from(2)
        }
    }
}
