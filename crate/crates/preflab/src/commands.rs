//! Implementations behind the CLI subcommands. Each returns `Ok(())` on
//! success and a [`CliError`] whose exit code follows the convention:
//! 0 success, 1 failed checks, 2 configuration, 3 numerical abort.
//!
//! Every command is deterministic given its config and seed: rerunning
//! writes byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use preflab_core::analysis::{
    default_min_count, eos_stats, ranking_accuracy, token_diff_histogram,
    top_downweighted_tokens,
};
use preflab_core::data::{split, synth_generate, Dataset, LabelMode};
use preflab_core::objectives::{ObjectiveConfig, ObjectiveKind};
use preflab_core::oracle::{EnumSpace, GroundTruthReward};
use preflab_core::trainer::train;
use preflab_core::{InitScheme, Mode, Policy, PromptId, PromptScope, Sequence, Vocab};

use crate::checkpoint;
use crate::dataset_io;
use crate::error::{from_core, CliError, Result};
use crate::expconfig::{parse_beta_list, ExperimentConfig};
use crate::report;
use crate::suite::{run_all, run_check, CheckOutcome, SuiteParams};

fn parse_kind(name: &str) -> Result<ObjectiveKind> {
    match name {
        "dpo" => Ok(ObjectiveKind::Dpo),
        "posterior_prob" => Ok(ObjectiveKind::PosteriorProb),
        "likelihood" => Ok(ObjectiveKind::Likelihood),
        other => Err(CliError::config(format!(
            "unknown objective `{other}` (expected dpo | posterior_prob | likelihood)"
        ))),
    }
}

/// `train` subcommand arguments after flag/file merging is applied.
#[derive(Debug, Default, Clone)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub objective: Option<String>,
    pub beta: Option<String>,
    pub reference: Option<String>,
    pub dataset: Option<PathBuf>,
    pub valid_fraction: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub context_order: Option<usize>,
    pub init: Option<String>,
    pub sigma: Option<f64>,
}

/// File values merged with flag overrides (flags win).
pub fn effective_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(objective) = &args.objective {
        cfg.objective = objective.clone();
    }
    if let Some(beta) = &args.beta {
        cfg.beta = parse_beta_list(beta)?;
    }
    if let Some(reference) = &args.reference {
        cfg.reference = Some(reference.clone());
    }
    if let Some(dataset) = &args.dataset {
        cfg.dataset = Some(dataset.display().to_string());
    }
    if let Some(valid_fraction) = args.valid_fraction {
        cfg.valid_fraction = valid_fraction;
    }
    if let Some(output_dir) = &args.output_dir {
        cfg.output_dir = output_dir.display().to_string();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch_size) = args.batch_size {
        cfg.train.batch_size = batch_size;
    }
    if let Some(base_lr) = args.base_lr {
        cfg.train.base_lr = base_lr;
    }
    if let Some(order) = args.context_order {
        cfg.policy.context_order = Some(order);
    }
    if let Some(init) = &args.init {
        cfg.policy.init = init.clone();
    }
    if let Some(sigma) = args.sigma {
        cfg.policy.sigma = sigma;
    }
    Ok(cfg)
}

fn init_policy(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Policy> {
    let prompts: Vec<PromptId> = {
        let mut ids: Vec<PromptId> = dataset.examples.iter().map(|e| e.prompt_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let order = cfg
        .policy
        .context_order
        .unwrap_or_else(|| dataset.manifest.max_len.saturating_sub(1));
    let scheme = match cfg.policy.init.as_str() {
        "uniform" => InitScheme::Uniform,
        "gaussian" => InitScheme::Gaussian { sigma: cfg.policy.sigma },
        other => {
            return Err(CliError::config(format!(
                "unknown init scheme `{other}` (expected uniform | gaussian)"
            )));
        }
    };
    Policy::init(
        dataset.manifest.vocab,
        order,
        PromptScope::Prompts(prompts),
        scheme,
        cfg.seed,
    )
    .map_err(from_core)
}

fn bind_reference(
    kind: ObjectiveKind,
    spec: Option<&str>,
    initial: &Policy,
) -> Result<Option<Arc<Policy>>> {
    match kind {
        ObjectiveKind::PosteriorProb => {
            if spec.is_some() {
                return Err(CliError::config("reference forbidden for posterior_prob"));
            }
            Ok(None)
        }
        ObjectiveKind::Dpo => {
            let spec = spec.unwrap_or("self");
            let reference = match spec {
                "self" => initial.frozen_snapshot(),
                "uniform" => {
                    let prompts: Vec<PromptId> = initial.prompt_ids().collect();
                    Policy::init(
                        *initial.vocab(),
                        initial.context_order(),
                        PromptScope::Prompts(prompts),
                        InitScheme::Uniform,
                        0,
                    )
                    .map_err(from_core)?
                    .freeze()
                }
                path => load_reference_checkpoint(Path::new(path), initial)?,
            };
            Ok(Some(Arc::new(reference)))
        }
        ObjectiveKind::Likelihood => {
            let spec = spec.ok_or_else(|| {
                CliError::config(
                    "likelihood requires --ref uniform or an unconditional checkpoint path",
                )
            })?;
            let reference = match spec {
                "self" => {
                    return Err(CliError::config(
                        "likelihood reference must be unconditional; `self` is prompt-conditioned",
                    ));
                }
                "uniform" => Policy::init(
                    *initial.vocab(),
                    initial.context_order(),
                    PromptScope::Unconditional,
                    InitScheme::Uniform,
                    0,
                )
                .map_err(from_core)?
                .freeze(),
                path => {
                    let loaded = load_reference_checkpoint(Path::new(path), initial)?;
                    if !loaded.is_unconditional() {
                        return Err(CliError::config(
                            "likelihood reference checkpoint must be unconditional",
                        ));
                    }
                    loaded
                }
            };
            Ok(Some(Arc::new(reference)))
        }
    }
}

fn load_reference_checkpoint(path: &Path, initial: &Policy) -> Result<Policy> {
    let loaded = checkpoint::load(path)?;
    if loaded.vocab() != initial.vocab() {
        return Err(CliError::config(format!(
            "reference checkpoint {} has a different vocabulary",
            path.display()
        )));
    }
    Ok(match loaded.mode() {
        Mode::Frozen => loaded,
        Mode::Trainable => loaded.freeze(),
    })
}

fn beta_dir_name(beta: f64) -> String {
    format!("beta-{beta}")
}

/// Runs one training experiment per β in the sweep, writing a checkpoint,
/// train-report CSV, and degeneration CSV into a subdirectory each, plus
/// the effective config at the output root. Degeneration is reported, not
/// fatal.
pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = effective_config(args)?;
    let dataset_path = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::config("no dataset given (--dataset or config key)"))?;
    let dataset = dataset_io::load(Path::new(&dataset_path))?;
    let kind = parse_kind(&cfg.objective)?;

    let out_root = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_root)?;
    fs::write(out_root.join("effective.toml"), cfg.to_toml())?;

    let (train_ds, valid_ds) = split(&dataset, cfg.valid_fraction, cfg.seed).map_err(from_core)?;
    let initial = init_policy(&cfg, &dataset)?;
    let reference = bind_reference(kind, cfg.reference.as_deref(), &initial)?;
    let train_cfg = cfg.train_config();

    for &beta in &cfg.beta {
        let objective =
            ObjectiveConfig::build(kind, beta, reference.clone()).map_err(from_core)?;
        let started = Instant::now();
        let (policy, mut report) =
            train(&train_cfg, &objective, initial.clone(), &train_ds, &valid_ds)
                .map_err(from_core)?;
        report.wall_clock_secs = started.elapsed().as_secs_f64();

        let dir = out_root.join(beta_dir_name(beta));
        fs::create_dir_all(&dir)?;
        checkpoint::save(&policy, &dir.join("policy.ckpt"))?;
        fs::write(dir.join("train_report.csv"), report::train_report_csv(&report))?;
        fs::write(dir.join("degeneration.csv"), report::degeneration_csv(&report.degeneration))?;

        let status = if report.degeneration.flagged { "degenerate" } else { "ok" };
        println!(
            "train {} beta {beta}: selected step {} valid_loss {:.6} [{status}] ({:.2}s)",
            cfg.objective,
            report.selected_step,
            report
                .checkpoints
                .iter()
                .find(|c| c.step == report.selected_step)
                .map(|c| c.valid_loss)
                .unwrap_or(f64::NAN),
            report.wall_clock_secs,
        );
    }
    Ok(())
}

/// `analyze` subcommand arguments.
#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
    pub reference: PathBuf,
    pub dataset: PathBuf,
    pub which: String,
    pub output_dir: PathBuf,
    pub objective: String,
    pub beta: f64,
    pub length_normalized: bool,
    pub bin_width: f64,
    pub top_k: usize,
    pub min_count: Option<usize>,
}

/// Writes the requested diagnostic CSVs (`ranking.csv`, `token_hist.csv`,
/// `eos.csv`); idempotent and byte-stable across reruns.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let policy = checkpoint::load(&args.checkpoint)?;
    let reference = checkpoint::load(&args.reference)?.freeze();
    if policy.vocab() != reference.vocab() {
        return Err(CliError::config("checkpoint and reference vocabularies differ"));
    }
    let dataset = dataset_io::load(&args.dataset)?;
    if dataset.manifest.vocab != *policy.vocab() {
        return Err(CliError::config("dataset vocabulary differs from the checkpoint"));
    }
    let which = args.which.as_str();
    if !matches!(which, "ranking" | "tokens" | "eos" | "all") {
        return Err(CliError::config(format!(
            "unknown analysis `{which}` (expected ranking | tokens | eos | all)"
        )));
    }
    fs::create_dir_all(&args.output_dir)?;

    if matches!(which, "ranking" | "all") {
        let kind = parse_kind(&args.objective)?;
        let reference_arc = Arc::new(reference.clone());
        let config = match kind {
            ObjectiveKind::PosteriorProb => {
                ObjectiveConfig::posterior_prob(args.beta).map_err(from_core)?
            }
            _ => ObjectiveConfig::build(kind, args.beta, Some(reference_arc.clone()))
                .map_err(from_core)?,
        };
        let result =
            ranking_accuracy(&config, &policy, &dataset.examples, args.length_normalized)
                .map_err(from_core)?;
        fs::write(
            args.output_dir.join("ranking.csv"),
            report::ranking_csv(&args.objective, args.beta, &result),
        )?;
        println!(
            "ranking: reward {:.3} policy {:.3} over {} examples",
            result.reward_accuracy, result.policy_accuracy, result.n_examples
        );
    }

    if matches!(which, "tokens" | "all") {
        let corpus: Vec<(PromptId, Sequence)> = dataset
            .examples
            .iter()
            .flat_map(|e| {
                [(e.prompt_id, e.chosen.clone()), (e.prompt_id, e.rejected.clone())]
            })
            .collect();
        let hist = token_diff_histogram(&policy, &reference, &corpus, args.bin_width)
            .map_err(from_core)?;
        fs::write(args.output_dir.join("token_hist.csv"), report::token_hist_csv(&hist))?;
        let min_count = args.min_count.unwrap_or_else(|| default_min_count(hist.total_occurrences));
        let top = top_downweighted_tokens(&hist, args.top_k, min_count).map_err(from_core)?;
        for stat in &top.tokens {
            println!(
                "downweighted token {}: mean diff {:.4} over {} occurrences",
                stat.token, stat.mean_diff, stat.count
            );
        }
        if let Some(missing) = top.shortfall {
            println!(
                "note: only {} of {} requested tokens meet min_count {min_count} \
                 ({missing} short)",
                top.tokens.len(),
                args.top_k
            );
        }
    }

    if matches!(which, "eos" | "all") {
        let stats = eos_stats(&policy, &dataset.examples).map_err(from_core)?;
        fs::write(args.output_dir.join("eos.csv"), report::eos_csv(&stats))?;
        println!("eos: value {:.4} difference {:.4}", stats.mean_log_prob, stats.mean_diff);
    }
    Ok(())
}

/// `oracle` subcommand arguments.
#[derive(Debug, Clone)]
pub struct OracleArgs {
    pub check: String,
    pub vocab_size: u32,
    pub max_len: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corrupt: Option<String>,
}

/// Runs the selected oracle property suites, writes the pass/fail table as
/// CSV, and fails (exit 1) iff any check fails. Timing goes to stdout only
/// so the CSV artifact stays byte-stable.
pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let params = SuiteParams {
        vocab_size: args.vocab_size,
        max_len: args.max_len,
        seed: args.seed,
        corrupt: args.corrupt.clone(),
    };
    let mut outcomes: Vec<CheckOutcome> = Vec::new();
    let mut timings = Vec::new();
    if args.check == "all" {
        let names: Vec<&str> = crate::suite::CHECK_NAMES.to_vec();
        for name in names {
            let started = Instant::now();
            outcomes.push(run_check(name, &params)?);
            timings.push(started.elapsed());
        }
        debug_assert_eq!(outcomes.len(), run_all(&params).map(|v| v.len()).unwrap_or(0));
    } else {
        let started = Instant::now();
        outcomes.push(run_check(&args.check, &params)?);
        timings.push(started.elapsed());
    }

    let mut csv = String::from("check,pass,metric,threshold\n");
    for outcome in &outcomes {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            outcome.name,
            outcome.pass,
            report::fmt_float(outcome.metric),
            report::fmt_float(outcome.threshold)
        ));
    }
    fs::create_dir_all(&args.output_dir)?;
    fs::write(args.output_dir.join("oracle_checks.csv"), csv)?;

    let mut failures = 0;
    for (outcome, timing) in outcomes.iter().zip(&timings) {
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "check {:<20} {status}  {}  [{:.1} ms]",
            outcome.name,
            outcome.detail,
            timing.as_secs_f64() * 1e3
        );
        if !outcome.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::CheckFailed(format!("{failures} oracle check(s) failed")));
    }
    Ok(())
}

/// `synth` subcommand arguments.
#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub seed: u64,
    pub vocab_size: u32,
    pub max_len: usize,
    pub eos_id: Option<u32>,
    pub n_prompts: u32,
    pub pairs: usize,
    pub mode: String,
    pub out: PathBuf,
}

/// Generates a synthetic preference dataset from a seeded random reward
/// table and writes it with its manifest; prints the reward hash for
/// provenance.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let eos = args.eos_id.unwrap_or(args.vocab_size.saturating_sub(1));
    let vocab = Vocab::new(args.vocab_size, eos).map_err(from_core)?;
    let space = EnumSpace::enumerate(vocab, args.max_len).map_err(from_core)?;
    let prompts: Vec<PromptId> = (0..args.n_prompts).map(PromptId).collect();
    let mode = match args.mode.as_str() {
        "sampled" => LabelMode::Sampled,
        "expected" => LabelMode::Expected,
        other => {
            return Err(CliError::config(format!(
                "unknown label mode `{other}` (expected sampled | expected)"
            )));
        }
    };
    // r* comes from the master seed; label draws use a derived stream.
    let r_star = GroundTruthReward::random(&space, &prompts, args.seed, 1.0);
    let dataset =
        synth_generate(&r_star, &space, args.n_prompts, args.pairs, mode, args.seed.wrapping_add(1))
            .map_err(from_core)?;
    dataset_io::save(&dataset, &args.out)?;
    let hash = preflab_core::data::reward_hash(&r_star);
    println!(
        "synth: {} examples over {} prompts, space {} sequences, reward hash {hash}",
        dataset.examples.len(),
        args.n_prompts,
        space.len()
    );
    Ok(())
}
