//! Command-line driver for temporal-generalization experiments.
//!
//! `tg run <manifest>` evaluates methods over seeded trajectories,
//! `tg synth [flags]` writes a synthetic task to disk, and
//! `tg figures <dir>` turns a run directory into plot-data CSVs.
//!
//! Exit codes: 0 success, 2 bad input (manifest schema, flags, missing
//! files), 3 runtime failure (partial outputs kept, `FAILED` marker written).

pub mod figures;
pub mod manifest;
pub mod output;
pub mod run;
pub mod synth;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tg", version, about = "Parameter-space temporal generalization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment manifest.
    Run {
        manifest: PathBuf,
        /// Tune on the next timestamp's validation split instead of the
        /// current one. Diagnostic only: this leaks future data, and every
        /// output row is marked `oracle=true`.
        #[arg(long)]
        oracle_future: bool,
    },
    /// Generate a synthetic task: trajectory, datasets and task description.
    Synth(synth::SynthArgs),
    /// Write plot-data CSVs for a run directory.
    Figures { dir: PathBuf },
}

pub fn cmd_run(manifest_path: &Path, opts: run::RunOptions) -> i32 {
    let text = match std::fs::read_to_string(manifest_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", manifest_path.display());
            return EXIT_INPUT;
        }
    };
    let manifest = match manifest::parse(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {}: {e}", manifest_path.display());
            return EXIT_INPUT;
        }
    };
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));
    match run::run(&manifest, base, opts) {
        Ok((_, run::RunOutcome::Ok)) => EXIT_OK,
        Ok((out, run::RunOutcome::Failed(errs))) => {
            for e in errs {
                eprintln!("error: {e}");
            }
            eprintln!("run FAILED; partial outputs in {}", out.display());
            EXIT_RUNTIME
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

pub fn cmd_synth(args: &synth::SynthArgs) -> i32 {
    if let Err(e) = synth::check(args) {
        eprintln!("error: invalid flags: {e}");
        return EXIT_INPUT;
    }
    match synth::synth(args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

pub fn cmd_figures(dir: &Path) -> i32 {
    if !figures::has_inputs(dir) {
        eprintln!("error: {} has no results.csv", dir.display());
        return EXIT_INPUT;
    }
    match figures::figures(dir) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

/// Dispatches a parsed command line and returns the process exit code.
pub fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { manifest, oracle_future } => cmd_run(&manifest, run::RunOptions { oracle_future }),
        Command::Synth(args) => cmd_synth(&args),
        Command::Figures { dir } => cmd_figures(&dir),
    }
}
