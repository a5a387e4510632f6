//! `fsde`: run, list, and post-process the experiments exposed by fsde-core.
//!
//! Exit codes: 0 success, 1 io, 2 config or schema violation, 3 runtime
//! blow-up, 4 acceptance check failure on an otherwise complete run.

mod catalog;
mod config;
mod failure;
mod plot;
mod runner;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use failure::{Failure, Result};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fsde", version, about = "Slow-fast fractional SDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or a named preset
    Run {
        /// Path to a TOML or JSON config, or a preset name from `fsde list`
        config: String,
        /// Override the master seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for path ensembles (default: all cores)
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (default: $FSDE_OUT/<name> or results/<name>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the versioned experiment catalog
    List {
        /// Dump the named preset config instead of the catalog
        #[arg(long)]
        preset: Option<String>,
    },
    /// Merge result CSVs into one long-format table for plotting
    PlotData {
        /// Result files produced by `fsde run`
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Write the merged CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("fsde: {} error: {f}", f.label());
            ExitCode::from(f.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::List { preset: None } => {
            print!("{}", catalog::render_list());
            Ok(ExitCode::SUCCESS)
        }
        Command::List { preset: Some(name) } => {
            let p = catalog::preset(&name).ok_or_else(|| {
                Failure::Schema(format!("no preset named \"{name}\"; presets: {}", preset_names()))
            })?;
            print!("{}", p.toml);
            Ok(ExitCode::SUCCESS)
        }
        Command::PlotData { results, out } => {
            let csv = plot::emit(&results)?;
            match out {
                Some(p) => fs::write(&p, csv)
                    .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, seed, workers, out } => run_command(&config, seed, workers, out),
    }
}

fn run_command(
    source: &str,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let (mut cfg, name) = load_config(source)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    config::validate(&cfg)?;
    if let Some(w) = cfg.workers {
        if w > 0 {
            // Jobs are pure and aggregation is single threaded, so the pool
            // size changes wall time only, never results.
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build_global()
                .map_err(|e| Failure::Schema(format!("worker pool: {e}")))?;
        }
    }
    let out_dir = resolve_out_dir(&cfg, &name);
    let hash = config::config_hash(&cfg.spec, cfg.seed);
    println!(
        "fsde {} | {} | seed {} | config {hash}",
        env!("CARGO_PKG_VERSION"),
        cfg.spec.kind(),
        cfg.seed
    );
    let outcome = runner::run(&cfg, &out_dir)?;
    for c in &outcome.checks {
        println!("  [{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    for w in &outcome.warnings {
        println!("  warning: {w}");
    }
    println!("{} files in {}", outcome.files.len(), outcome.out_dir.display());
    if outcome.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        let failed = outcome.checks.iter().filter(|c| !c.passed).count();
        Err(Failure::Acceptance(format!(
            "{failed} of {} checks failed; results kept in {}",
            outcome.checks.len(),
            outcome.out_dir.display()
        )))
    }
}

/// A path that exists wins; otherwise the source may name a preset.
fn load_config(source: &str) -> Result<(ExperimentConfig, String)> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("{source}: {e}")))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = config::parse_str(&text, json)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        Ok((cfg, name))
    } else if let Some(p) = catalog::preset(source) {
        Ok((config::parse_str(p.toml, false)?, p.name.to_string()))
    } else {
        Err(Failure::Schema(format!(
            "no config file or preset named \"{source}\"; presets: {}",
            preset_names()
        )))
    }
}

fn preset_names() -> String {
    catalog::PRESETS
        .iter()
        .map(|p| p.name)
        .collect::<Vec<_>>()
        .join(", ")
}

fn resolve_out_dir(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    if let Some(o) = &cfg.out {
        return o.clone();
    }
    if let Ok(root) = std::env::var("FSDE_OUT") {
        if !root.is_empty() {
            return PathBuf::from(root).join(name);
        }
    }
    PathBuf::from("results").join(name)
}
