use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Run one sensitivity experiment described by a TOML config.
#[derive(Parser)]
#[command(name = "lyapsens", version)]
struct Args {
    /// Experiment config file.
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (also settable via LYAPSENS_OUT_DIR).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match lyapsens_cli::execute(&args.config, args.seed, args.out_dir.as_deref()) {
        Ok((dir, outcome)) => {
            print!("{}", outcome.summary);
            println!("outputs written to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
