use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing::{error, info};
use tracing_subscriber::EnvFilter;
use triagesim_cli::demo::init_demo;
use triagesim_cli::{CliError, LoadedConfig, Pipeline, Runtime, Stage};

#[derive(Parser)]
#[command(
    name = "triagesim",
    version,
    about = "Simulated ED triage conversation corpus builder"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "config.toml")]
    config: PathBuf,
    /// Redo work even when outputs exist and are intact.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for per-conversation work.
    #[arg(long, short, global = true, default_value_t = default_jobs())]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate seed case files.
    Ingest,
    /// Sample nurse and patient personas per conversation.
    Personas,
    /// Run the dialogue engine.
    Generate,
    /// Insert phrase-break tokens.
    Annotate,
    /// Render utterances and assemble per-conversation speech.
    Synthesize,
    /// Overlay ambient and event noise.
    Mix,
    /// Disfluency, behaviour, ASR, speaker and red-flag metrics.
    Evaluate,
    /// Acuity classification and kappa per scale.
    Classify,
    /// Corpus statistics by acuity level.
    Stats,
    /// Recompute artifact checksums against the manifest.
    Verify,
    /// Every stage enabled in the config, in order.
    Run,
    /// Write a runnable offline demo project into a directory.
    InitDemo {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
}

fn stages_for(command: &Command, loaded: &LoadedConfig) -> Vec<Stage> {
    let single = match command {
        Command::Ingest => Stage::Ingest,
        Command::Personas => Stage::Personas,
        Command::Generate => Stage::Generate,
        Command::Annotate => Stage::Annotate,
        Command::Synthesize => Stage::Synthesize,
        Command::Mix => Stage::Mix,
        Command::Evaluate => Stage::Evaluate,
        Command::Classify => Stage::Classify,
        Command::Stats => Stage::Stats,
        Command::Run => {
            let t = loaded.config.stages;
            return Stage::ALL
                .into_iter()
                .filter(|s| match s {
                    Stage::Synthesize | Stage::Annotate => t.synthesize,
                    Stage::Mix => t.synthesize && t.mix,
                    Stage::Evaluate => t.evaluate,
                    Stage::Classify => t.classify,
                    Stage::Stats => t.stats,
                    _ => true,
                })
                .collect();
        }
        Command::Verify | Command::InitDemo { .. } => return Vec::new(),
    };
    vec![single]
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Command::InitDemo { dir } = &cli.command {
        init_demo(dir)?;
        info!(dir = %dir.display(), "demo project written; run `triagesim run` there");
        return Ok(true);
    }
    let loaded = LoadedConfig::load(&cli.config)?;
    if let Command::Verify = cli.command {
        let corpus = triagesim_cli::Corpus::new(loaded.output_dir());
        let manifest = corpus
            .load_manifest()?
            .ok_or_else(|| CliError::Stage(format!("no manifest in {}", corpus.root.display())))?;
        let mismatches = corpus.verify(&manifest);
        for m in &mismatches {
            error!(path = %m.path, problem = %m.problem, "artifact mismatch");
        }
        info!(
            artifacts = manifest.artifacts().count(),
            mismatches = mismatches.len(),
            "verify finished"
        );
        return Ok(mismatches.is_empty());
    }
    let stages = stages_for(&cli.command, &loaded);
    let runtime = Runtime::from_config(&loaded)?;
    let mut pipeline = Pipeline::open(loaded, runtime, cli.force, cli.jobs)?;
    let mut clean = true;
    for stage in stages {
        let report = pipeline.run_stage(stage)?;
        clean &= report.failures.is_empty();
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    }
    Ok(clean)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!(error = %e, "failed");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
