use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use weightmix_core::config::ProtocolConfig;
use weightmix_core::protocol::{replication_csv, run_protocol, RunManifest, RunOptions, Stage};
use weightmix_core::reference::{published_fixture, replicate_paper_significance};

#[derive(Parser)]
#[command(name = "weightmix", version, about = "Initialization regimes and weight-space ensembles under distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults are used for anything not given
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the configuration)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this stage
    #[arg(long, value_parser = parse_stage)]
    stage: Option<Stage>,
    /// Suppress progress output on stderr
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate cohorts and splits
    Generate(Common),
    /// Train the partial- and full-data models (runs the alpha search they need)
    Train(Common),
    /// Search the shrink factor for both partial-data models
    SearchAlpha(Common),
    /// Build the averaged and attention-guided ensembles
    Ensemble(Common),
    /// Score every model on the internal and external test sets
    Evaluate(Common),
    /// Pairwise significance tests
    Significance(Common),
    /// Significance chain over the transcribed published values
    ReplicatePaper {
        /// Also write the table to this CSV file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write tables and figure data (resumes earlier stages as needed)
    Report(Common),
    /// Run the whole protocol
    RunAll(Common),
    /// Print the effective configuration as TOML
    ShowConfig(Common),
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: weightmix_core::Error| e.to_string())
}

fn load_config(c: &Common) -> Result<ProtocolConfig> {
    let mut cfg = match &c.config {
        Some(p) => ProtocolConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ProtocolConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(c: &Common, default_until: Stage) -> Result<bool> {
    let cfg = load_config(c)?;
    let until = c.stage.unwrap_or(default_until);
    let manifest = run_protocol(&cfg, &RunOptions { until, verbose: !c.quiet })?;
    print_summary(&manifest, &cfg);
    Ok(manifest.success)
}

fn print_summary(m: &RunManifest, cfg: &ProtocolConfig) {
    println!("output: {}", cfg.output_dir.display());
    println!("stages through {}: {}", m.until, if m.success { "all succeeded" } else { "FAILURES" });
    for (seed, stages) in &m.stages {
        for (stage, status) in stages {
            if *status != weightmix_core::protocol::StageStatus::Done {
                println!("  {seed} {stage}: {status:?}");
            }
        }
    }
    if let Some(d) = &m.directional {
        println!(
            "pretrained init reaches val loss {} faster: {}/{} seeds",
            d.target_val_loss, d.pretrained_faster_seeds, d.seeds_run
        );
        for (regime, n) in &d.if_beats_rf_seeds {
            println!("{regime}-IF beats {regime}-RF on internal MCC: {n}/{} seeds", d.seeds_run);
        }
        println!("ensemble recall >= best constituent (external): {}/{} seeds", d.recall_seeds, d.seeds_run);
    }
}

fn replicate(out: Option<&PathBuf>) -> Result<bool> {
    let rows = replicate_paper_significance(&published_fixture())?;
    let csv = replication_csv(&rows);
    print!("{}", csv.as_str());
    if let Some(p) = out {
        csv.write(p)?;
    }
    let disagreements = rows.iter().filter(|r| r.result.significant != r.reported_significant).count();
    eprintln!("{} comparisons, {disagreements} disagree with the reported verdict", rows.len());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(c) => run(c, Stage::Generate),
        Command::Train(c) => run(c, Stage::TrainF),
        Command::SearchAlpha(c) => run(c, Stage::SearchAlpha),
        Command::Ensemble(c) => run(c, Stage::Ensemble),
        Command::Evaluate(c) => run(c, Stage::Evaluate),
        Command::Significance(c) => run(c, Stage::Significance),
        Command::Report(c) | Command::RunAll(c) => run(c, Stage::Report),
        Command::ReplicatePaper { out } => replicate(out.as_ref()),
        Command::ShowConfig(c) => load_config(c).and_then(|cfg| {
            print!("{}", cfg.to_toml()?);
            Ok(true)
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
