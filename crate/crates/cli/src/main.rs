use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ldpbench::datasets::{generate, write_population, GeneratorConfig, GeneratorKind};
use ldpbench::engine::config::{ExperimentConfig, OutputFormat};
use ldpbench::engine::run_matrix;
use ldpbench::metrics::MetricKind;
use ldpbench::report::{
    emit_results, read_results, render_win_table_csv, render_win_table_text, win_table,
};
use ldpbench::{validate, ExecPolicy};

/// Benchmark frequency estimation under local differential privacy.
#[derive(Debug, Parser)]
#[command(name = "ldpbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic population to a file.
    Generate(GenerateArgs),
    /// Execute an experiment config and write per-run results.
    Run(RunArgs),
    /// Compute win tables from a results file.
    Report(ReportArgs),
    /// Run the invariant self-checks.
    Validate,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    kind: GeneratorKind,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1.5)]
    s: f64,
    #[arg(long, default_value_t = 50.0)]
    mu: f64,
    #[arg(long, default_value_t = 10.0)]
    sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `max_threads` in the config.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results file (`.csv` or `.json`).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    metric: Option<MetricKind>,
    /// Label each cell by lowest mean instead of most per-run wins.
    #[arg(long)]
    by_mean: bool,
    /// Write the table as CSV instead of printing text.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let config = GeneratorConfig {
        kind: args.kind,
        n: args.n,
        d: args.d,
        mu: args.mu,
        sd: args.sd,
        s: args.s,
        seed: args.seed,
    };
    let pop = generate(&config, &ExecPolicy::default())?;
    write_population(&pop, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} values over d = {} to {}",
        pop.len(),
        pop.d(),
        args.out.display()
    );
    Ok(())
}

fn results_path(dir: &Path, format: OutputFormat) -> PathBuf {
    dir.join(match format {
        OutputFormat::Csv => "results.csv",
        OutputFormat::Json => "results.json",
    })
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let config = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let Some(dir) = args.out.or_else(|| config.output_dir.clone()) else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    let exec = ExecPolicy::with_threads(args.threads.unwrap_or(config.max_threads));
    let results = run_matrix(&config, &exec)?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for &format in &config.formats {
        let path = results_path(&dir, format);
        emit_results(&results, format, &path)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    let failed: Vec<_> = results
        .iter()
        .filter_map(|(k, r)| r.error.as_ref().map(|e| (k, e)))
        .collect();
    for (key, err) in &failed {
        eprintln!("cell {key} failed: {err}");
    }
    println!("{} cells, {} failed", results.len(), failed.len());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let results =
        read_results(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let mut entries = win_table(&results, args.by_mean)?;
    if let Some(metric) = args.metric {
        entries.retain(|e| e.metric == metric);
        if entries.is_empty() {
            bail!("no cells with metric {metric} in {}", args.input.display());
        }
    }
    match args.out {
        Some(path) => {
            std::fs::write(&path, render_win_table_csv(&entries)?)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} rows to {}", entries.len(), path.display());
        }
        None => print!("{}", render_win_table_text(&entries)),
    }
    Ok(())
}

fn cmd_validate() -> anyhow::Result<bool> {
    let checks = validate::run_all();
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args).map(|_| true),
        Command::Run(args) => cmd_run(args).map(|_| true),
        Command::Report(args) => cmd_report(args).map(|_| true),
        Command::Validate => cmd_validate(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
