//! `preflab`: train, analyze, verify, and synthesize data for exact
//! KL-constrained preference optimization on tabular policies.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use preflab::commands::{
    cmd_analyze, cmd_oracle, cmd_synth, cmd_train, AnalyzeArgs, OracleArgs, SynthArgs, TrainArgs,
};

#[derive(Parser)]
#[command(
    name = "preflab",
    about = "Exact preference-optimization laboratory over tabular policies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy under a preference objective, sweeping β values.
    Train(TrainCli),
    /// Compute ranking, token-difference, and EOS diagnostics as CSVs.
    Analyze(AnalyzeCli),
    /// Run brute-force oracle property checks.
    #[command(alias = "oracle-check")]
    Oracle(OracleCli),
    /// Generate a synthetic preference dataset from a seeded reward table.
    Synth(SynthCli),
}

#[derive(Args)]
struct TrainCli {
    /// TOML experiment config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// dpo | posterior_prob | likelihood
    #[arg(long)]
    objective: Option<String>,
    /// Comma-separated β sweep, e.g. 0.1,0.05,0.02,0.01,0.005
    #[arg(long)]
    beta: Option<String>,
    /// Reference binding: self | uniform | checkpoint path
    #[arg(long = "ref")]
    reference: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    #[arg(long = "outdir")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    context_order: Option<usize>,
    /// Policy initialization: uniform | gaussian
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct AnalyzeCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// ranking | tokens | eos | all
    #[arg(long, default_value = "all")]
    which: String,
    #[arg(long = "outdir", default_value = ".")]
    output_dir: PathBuf,
    #[arg(long, default_value = "dpo")]
    objective: String,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Length-normalize sequence log-probabilities in the policy ranking.
    #[arg(long)]
    length_normalized: bool,
    #[arg(long, default_value_t = 0.5)]
    bin_width: f64,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Minimum occurrences for the downweighted-token ranking
    /// (default: max(5, corpus/500)).
    #[arg(long)]
    min_count: Option<usize>,
}

#[derive(Args)]
struct OracleCli {
    /// Check name, or `all`.
    #[arg(long, default_value = "all")]
    check: String,
    #[arg(short = 'V', long, default_value_t = 4)]
    vocab_size: u32,
    #[arg(short = 'L', long, default_value_t = 4)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "outdir", default_value = ".")]
    output_dir: PathBuf,
    /// Deliberately corrupt a named check (negative-control test hook).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct SynthCli {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'V', long, default_value_t = 4)]
    vocab_size: u32,
    #[arg(short = 'L', long, default_value_t = 4)]
    max_len: usize,
    /// EOS token id (default: vocab_size - 1).
    #[arg(long)]
    eos_id: Option<u32>,
    #[arg(long, default_value_t = 4)]
    prompts: u32,
    /// Preference pairs per prompt.
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    /// sampled | expected
    #[arg(long, default_value = "sampled")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(&TrainArgs {
            config: args.config,
            objective: args.objective,
            beta: args.beta,
            reference: args.reference,
            dataset: args.dataset,
            valid_fraction: args.valid_fraction,
            output_dir: args.output_dir,
            seed: args.seed,
            epochs: args.epochs,
            batch_size: args.batch_size,
            base_lr: args.base_lr,
            context_order: args.context_order,
            init: args.init,
            sigma: args.sigma,
        }),
        Command::Analyze(args) => cmd_analyze(&AnalyzeArgs {
            checkpoint: args.checkpoint,
            reference: args.reference,
            dataset: args.dataset,
            which: args.which,
            output_dir: args.output_dir,
            objective: args.objective,
            beta: args.beta,
            length_normalized: args.length_normalized,
            bin_width: args.bin_width,
            top_k: args.top_k,
            min_count: args.min_count,
        }),
        Command::Oracle(args) => cmd_oracle(&OracleArgs {
            check: args.check,
            vocab_size: args.vocab_size,
            max_len: args.max_len,
            seed: args.seed,
            output_dir: args.output_dir,
            corrupt: args.corrupt,
        }),
        Command::Synth(args) => cmd_synth(&SynthArgs {
            seed: args.seed,
            vocab_size: args.vocab_size,
            max_len: args.max_len,
            eos_id: args.eos_id,
            n_prompts: args.prompts,
            pairs: args.pairs,
            mode: args.mode,
            out: args.out,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
