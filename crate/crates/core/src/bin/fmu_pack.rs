use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vpbridge::packager::{self, PackInput};

#[derive(Parser)]
#[command(name = "fmu-pack", about = "Assemble and inspect FMU archives")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an FMU from a model description and binaries.
    Pack {
        /// Model description to validate and store.
        #[arg(long)]
        md: PathBuf,
        /// Platform library as `<platform-tuple>=<file>`, e.g. `x86_64-linux=libvpbridge.so`.
        #[arg(long = "lib", value_name = "PLATFORM=FILE", value_parser = split_pair)]
        libs: Vec<(String, String)>,
        /// Platform executable, stored at the path the model description names.
        #[arg(long)]
        vp: Option<PathBuf>,
        /// Extra resource as `<src>=<dst>`, with `dst` relative to `resources/`.
        #[arg(long = "resource", value_name = "SRC=DST", value_parser = split_pair)]
        resources: Vec<(String, String)>,
        /// Archive to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// List an FMU and check its layout.
    Inspect { fmu: PathBuf },
    /// Extract an FMU into a directory.
    Unpack { fmu: PathBuf, dir: PathBuf },
}

fn split_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .map(|(a, b)| (a.to_owned(), b.to_owned()))
        .ok_or_else(|| format!("expected A=B, got {s:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Pack { md, libs, vp, resources, out } => {
            let input = PackInput {
                model_description: md,
                libraries: libs.into_iter().map(|(p, f)| (p, PathBuf::from(f))).collect(),
                vp_binary: vp,
                resources: resources.into_iter().map(|(s, d)| (PathBuf::from(s), d)).collect(),
            };
            packager::pack(&input, &out).map(|()| println!("wrote {}", out.display())).map_err(|e| e.to_string())
        }
        Cmd::Inspect { fmu } => packager::inspect(&fmu).map(|m| print!("{m}")).map_err(|e| e.to_string()),
        Cmd::Unpack { fmu, dir } => packager::unpack(&fmu, &dir)
            .map(|m| println!("extracted {} entries to {}", m.entries.len(), dir.display()))
            .map_err(|e| e.to_string()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fmu-pack: {e}");
            ExitCode::FAILURE
        }
    }
}
