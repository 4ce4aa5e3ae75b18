use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmcss::cli::{error_json, resolve_config, run_command, Command, Overrides, Profile};

/// Joint CMC + CSS contrastive learning on five-modality cohorts.
#[derive(Parser)]
#[command(name = "cmcss", version)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Overrides CMCSS_SEED and the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic cohort into paths.cohort_dir.
    GenData,
    /// Contrastive pretraining on the whole cohort.
    Pretrain,
    /// Fine-tune a pretrained checkpoint with an inner validation split.
    Finetune,
    /// Repeated stratified cross-validation; writes report.json.
    Evaluate,
    /// Run the ablation selected by ablation.which.
    Ablate,
    /// Write per-modality embeddings of a checkpoint as CSV.
    ExportEmbeddings,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::GenData => Command::GenData,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Finetune => Command::Finetune,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Ablate => Command::Ablate,
        Cmd::ExportEmbeddings => Command::ExportEmbeddings,
    };
    let overrides = Overrides {
        profile: args.profile,
        seed: args.seed,
        env_seed: None,
    }
    .with_env();
    let result = match &args.config {
        Some(path) => resolve_config(path, &overrides),
        None => cmcss::cli::resolve_config_str("{}", std::path::Path::new("."), &overrides),
    }
    .and_then(|config| run_command(command, &config));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
