//! CSV emission for reports. All floats are written with 9 significant
//! decimal digits and all writers are deterministic, so artifacts from
//! seeded runs compare byte-for-byte.

use std::fmt::Write as _;

use preflab_core::analysis::{EosStats, RankingResult, TokenDiffHistogram};
use preflab_core::trainer::TrainReport;

/// Decimal float with 9 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// `step,lr,train_loss,valid_loss,flags` with one row per optimizer step.
/// `valid_loss` is filled at checkpoint steps; flags mark `checkpoint` and
/// `selected`.
pub fn train_report_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,lr,train_loss,valid_loss,flags\n");
    for step in &report.steps {
        let checkpoint = report.checkpoints.iter().find(|c| c.step == step.step);
        let valid = checkpoint.map(|c| fmt_float(c.valid_loss)).unwrap_or_default();
        let flags = match checkpoint {
            Some(c) if c.step == report.selected_step => "checkpoint;selected",
            Some(_) => "checkpoint",
            None => "",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            step.step,
            fmt_float(step.lr),
            fmt_float(step.train_loss),
            valid,
            flags
        );
    }
    out
}

/// One-row summary of the degeneration detector.
pub fn degeneration_csv(report: &preflab_core::trainer::DegenerationReport) -> String {
    let mut out = String::from(
        "flagged,mean_step_entropy,truncation_fraction,modal_trigram_frequency,zero_length_fraction,fired\n",
    );
    let entropy = report.mean_step_entropy.map(fmt_float).unwrap_or_default();
    let fired: Vec<&str> = report.evidence.iter().map(|e| e.criterion.name()).collect();
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        report.flagged,
        entropy,
        fmt_float(report.truncation_fraction),
        fmt_float(report.modal_trigram_frequency),
        fmt_float(report.zero_length_fraction),
        fired.join(";")
    );
    out
}

/// One row per analyzed configuration.
pub fn ranking_csv(objective: &str, beta: f64, result: &RankingResult) -> String {
    let mut out = String::from(
        "objective,beta,reward_accuracy,policy_accuracy,n_examples,n_reward_ties,n_policy_ties\n",
    );
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        objective,
        fmt_float(beta),
        fmt_float(result.reward_accuracy),
        fmt_float(result.policy_accuracy),
        result.n_examples,
        result.n_reward_ties,
        result.n_policy_ties
    );
    out
}

/// Per-token means of the log-probability difference with their bins.
pub fn token_hist_csv(hist: &TokenDiffHistogram) -> String {
    let mut out = String::from("token id,count,mean diff,bin\n");
    for stat in &hist.stats {
        let bin = hist.bin_start(hist.bin_index(stat.mean_diff));
        let _ = writeln!(
            out,
            "{},{},{},{}",
            stat.token,
            stat.count,
            fmt_float(stat.mean_diff),
            fmt_float(bin)
        );
    }
    out
}

/// EOS value and chosen-rejected difference.
pub fn eos_csv(stats: &EosStats) -> String {
    let mut out = String::from("value,difference\n");
    let _ = writeln!(out, "{},{}", fmt_float(stats.mean_log_prob), fmt_float(stats.mean_diff));
    out
}
