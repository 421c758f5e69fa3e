//! Named oracle property checks: each verifies one closed-form or
//! equivalence result against brute-force computation and reports a
//! headline metric against its pinned threshold.
//!
//! The `corrupt` hook deliberately breaks a named check's computation so
//! the harness itself can be tested end to end (a negative control).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use preflab_core::data::PreferenceExample;
use preflab_core::math;
use preflab_core::objectives::{
    loss, loss_and_grad, LossBatch, ObjectiveConfig, ObjectiveKind,
};
use preflab_core::oracle::{
    check_equivalence_class, exact_entropy, exact_kl, expected_pairwise_loss,
    kl_constrained_optimal_policy, log_partition, maxent_objective, maxent_optimal_policy,
    recover_optimal_policy, reward_projection, total_variation, EnumSpace, GroundTruthReward,
    RecoverySettings,
};
use preflab_core::{
    ContextKey, InitScheme, LogitGrad, Policy, PromptId, PromptScope, Vocab,
};

use crate::error::{from_core, CliError, Result};

/// Size and seed bounds for a suite run.
#[derive(Debug, Clone)]
pub struct SuiteParams {
    pub vocab_size: u32,
    pub max_len: usize,
    pub seed: u64,
    /// Name of a check whose computation is deliberately broken.
    pub corrupt: Option<String>,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self { vocab_size: 4, max_len: 4, seed: 0, corrupt: None }
    }
}

impl SuiteParams {
    fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.vocab_size, self.vocab_size - 1).map_err(from_core)
    }

    fn space(&self) -> Result<EnumSpace> {
        EnumSpace::enumerate(self.vocab()?, self.max_len).map_err(from_core)
    }

    fn corrupts(&self, name: &str) -> bool {
        self.corrupt.as_deref() == Some(name)
    }
}

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn bounded(name: &'static str, metric: f64, threshold: f64, detail: String) -> Self {
        Self { name, pass: metric <= threshold, metric, threshold, detail }
    }
}

pub const CHECK_NAMES: &[&str] = &[
    "enumeration",
    "partition",
    "maxent-optimum",
    "kl-constrained",
    "gibbs-kl",
    "entropy",
    "projection",
    "equivalence-class",
    "gibbs-optimality",
    "expected-loss",
    "recovery-posterior",
    "recovery-dpo",
    "recovery-likelihood",
    "implicit-reward",
    "gradient-fd",
];

pub fn run_check(name: &str, params: &SuiteParams) -> Result<CheckOutcome> {
    match name {
        "enumeration" => check_enumeration(params),
        "partition" => check_partition(params),
        "maxent-optimum" => check_maxent_optimum(params),
        "kl-constrained" => check_kl_constrained(params),
        "gibbs-kl" => check_gibbs_kl(params),
        "entropy" => check_entropy(params),
        "projection" => check_projection(params),
        "equivalence-class" => check_equivalence(params),
        "gibbs-optimality" => check_gibbs_optimality(params),
        "expected-loss" => check_expected_loss(params),
        "recovery-posterior" => check_recovery(params, ObjectiveKind::PosteriorProb),
        "recovery-dpo" => check_recovery(params, ObjectiveKind::Dpo),
        "recovery-likelihood" => check_recovery(params, ObjectiveKind::Likelihood),
        "implicit-reward" => check_implicit_reward(params),
        "gradient-fd" => check_gradient_fd(params),
        other => Err(CliError::config(format!(
            "unknown check `{other}`; known: {}",
            CHECK_NAMES.join(", ")
        ))),
    }
}

pub fn run_all(params: &SuiteParams) -> Result<Vec<CheckOutcome>> {
    CHECK_NAMES.iter().map(|name| run_check(name, params)).collect()
}

fn check_enumeration(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let base = (params.vocab_size - 1) as u128;
    let mut expected: u128 = 0;
    let mut pow: u128 = 1;
    for _ in 0..params.max_len {
        expected += pow;
        pow *= base;
    }
    let mut tokens: Vec<&[u32]> = space.sequences().iter().map(|s| s.tokens()).collect();
    tokens.sort();
    tokens.dedup();
    let duplicate_free = tokens.len() == space.len();
    let again = params.space()?;
    let deterministic = again == space;
    let metric = (space.len() as f64 - expected as f64).abs();
    let mut outcome = CheckOutcome::bounded(
        "enumeration",
        metric,
        0.0,
        format!("count {} (expected {expected})", space.len()),
    );
    outcome.pass = outcome.pass && duplicate_free && deterministic;
    Ok(outcome)
}

fn check_partition(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let prompt = PromptId(0);
    let zero = GroundTruthReward::zero(&space, &[prompt]);
    let log_count = (space.len() as f64).ln();
    let zero_dev =
        (log_partition(&zero, 0.7, prompt, &space).map_err(from_core)? - log_count).abs();

    let r = GroundTruthReward::random(&space, &[prompt], params.seed, 1.0);
    let base = log_partition(&r, 0.4, prompt, &space).map_err(from_core)?;
    let scaled_tables: BTreeMap<PromptId, Vec<f64>> = r
        .tables()
        .map(|(p, v)| (p, v.iter().map(|x| x * 8.0).collect()))
        .collect();
    let scaled = GroundTruthReward::from_tables(scaled_tables, &space).map_err(from_core)?;
    let scale_dev = (log_partition(&scaled, 3.2, prompt, &space).map_err(from_core)? - base).abs();

    let metric = zero_dev.max(scale_dev);
    Ok(CheckOutcome::bounded(
        "partition",
        metric,
        1e-12,
        format!("zero-reward dev {zero_dev:.2e}, scale-invariance dev {scale_dev:.2e}"),
    ))
}

fn check_maxent_optimum(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let prompt = PromptId(0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut max_norm_dev = 0.0f64;
    for i in 0..20 {
        let r = GroundTruthReward::random(&space, &[prompt], params.seed + i, 1.0);
        let beta = 0.05 * math::exp(rng.gen::<f64>() * 4.0);
        let p = maxent_optimal_policy(&r, beta, prompt, &space).map_err(from_core)?;
        max_norm_dev = max_norm_dev.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    // Large-β limit flattens to uniform.
    let r = GroundTruthReward::random(&space, &[prompt], params.seed + 100, 1.0);
    let max_abs = r
        .values(prompt)
        .map_err(from_core)?
        .iter()
        .fold(0.0f64, |m, &x| m.max(x.abs()));
    let p = maxent_optimal_policy(&r, 1e6 * max_abs, prompt, &space).map_err(from_core)?;
    let uniform = vec![1.0 / space.len() as f64; space.len()];
    let limit_tv = total_variation(&p, &uniform);

    let mut outcome = CheckOutcome::bounded(
        "maxent-optimum",
        max_norm_dev,
        1e-12,
        format!("max |Σp - 1| {max_norm_dev:.2e}, large-beta TV to uniform {limit_tv:.2e}"),
    );
    outcome.pass = outcome.pass && limit_tv <= 1e-3;
    Ok(outcome)
}

fn check_kl_constrained(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let prompt = PromptId(0);
    let r = GroundTruthReward::random(&space, &[prompt], params.seed + 7, 1.5);
    let uniform = vec![1.0 / space.len() as f64; space.len()];
    let direct = maxent_optimal_policy(&r, 0.6, prompt, &space).map_err(from_core)?;
    let reduced =
        kl_constrained_optimal_policy(&r, 0.6, &uniform, prompt, &space).map_err(from_core)?;
    let reduction_gap = direct
        .iter()
        .zip(&reduced)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    // Two-sequence hand value: reference (0.9, 0.1) against r = (0, β ln 9).
    let two = EnumSpace::enumerate(Vocab::new(2, 1).unwrap(), 2).map_err(from_core)?;
    let beta = 0.05;
    let mut tables = BTreeMap::new();
    tables.insert(prompt, vec![0.0, beta * 9f64.ln()]);
    let hand = GroundTruthReward::from_tables(tables, &two).map_err(from_core)?;
    let p = kl_constrained_optimal_policy(&hand, beta, &[0.9, 0.1], prompt, &two)
        .map_err(from_core)?;
    let hand_gap = (p[0] - 0.5).abs().max((p[1] - 0.5).abs());

    let mut outcome = CheckOutcome::bounded(
        "kl-constrained",
        reduction_gap,
        1e-15,
        format!("uniform-reference gap {reduction_gap:.2e}, hand-value gap {hand_gap:.2e}"),
    );
    outcome.pass = outcome.pass && hand_gap <= 1e-12;
    Ok(outcome)
}

fn check_gibbs_kl(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut min_kl = f64::INFINITY;
    let draw = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..space.len()).map(|_| rng.gen::<f64>() + 1e-6).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect::<Vec<f64>>()
    };
    for _ in 0..1000 {
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        min_kl = min_kl.min(exact_kl(&p, &q, &space).map_err(from_core)?);
    }
    let p = draw(&mut rng);
    let identity = exact_kl(&p, &p, &space).map_err(from_core)?;
    let metric = (-min_kl).max(identity.abs());
    Ok(CheckOutcome::bounded(
        "gibbs-kl",
        metric,
        0.0,
        format!("min KL {min_kl:.2e} over 1000 pairs, identity {identity:.2e}"),
    ))
}

fn check_entropy(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let n = space.len();
    let uniform = vec![1.0 / n as f64; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed + 3);
    let mut max_dev = 0.0f64;
    for _ in 0..50 {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.into_iter().map(|x| x / total).collect();
        let h = exact_entropy(&p);
        if !(0.0..=(n as f64).ln() + 1e-12).contains(&h) {
            max_dev = f64::INFINITY;
        }
        let identity = (n as f64).ln() - exact_kl(&p, &uniform, &space).map_err(from_core)?;
        max_dev = max_dev.max((h - identity).abs());
    }
    Ok(CheckOutcome::bounded(
        "entropy",
        max_dev,
        1e-12,
        format!("max |H - (log N - KL(p, uniform))| {max_dev:.2e}"),
    ))
}

fn check_projection(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let prompt = PromptId(0);
    let mut max_dev = 0.0f64;
    for i in 0..20 {
        let r = GroundTruthReward::random(&space, &[prompt], params.seed + i, 1.0);
        let beta = 0.2 + 0.1 * i as f64;
        let projected = if params.corrupts("projection") {
            // Negative-control hook: skip the log-partition term.
            r.values(prompt).map_err(from_core)?.to_vec()
        } else {
            reward_projection(&r, beta, prompt, &space).map_err(from_core)?
        };
        let p = maxent_optimal_policy(&r, beta, prompt, &space).map_err(from_core)?;
        for (v, pi) in projected.iter().zip(&p) {
            max_dev = max_dev.max((v - beta * pi.ln()).abs());
        }
        // Idempotence: projecting the projection is the identity.
        let mut tables = BTreeMap::new();
        tables.insert(prompt, projected.clone());
        let r2 = GroundTruthReward::from_tables(tables, &space).map_err(from_core)?;
        let twice = reward_projection(&r2, beta, prompt, &space).map_err(from_core)?;
        for (a, b) in projected.iter().zip(&twice) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    Ok(CheckOutcome::bounded(
        "projection",
        max_dev,
        1e-12,
        format!("max |r' - beta log p_r| and idempotence dev {max_dev:.2e}"),
    ))
}

fn check_equivalence(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let prompts = [PromptId(0), PromptId(1)];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed + 11);
    let mut max_tv = 0.0f64;
    for i in 0..100 {
        let r = GroundTruthReward::random(&space, &prompts, params.seed + 200 + i, 1.0);
        let mut shifts = BTreeMap::new();
        for &p in &prompts {
            shifts.insert(p, (rng.gen::<f64>() - 0.5) * 2000.0);
        }
        let beta = 0.1 + rng.gen::<f64>();
        max_tv = max_tv.max(check_equivalence_class(&r, &shifts, beta, &space).map_err(from_core)?);
    }
    Ok(CheckOutcome::bounded(
        "equivalence-class",
        max_tv,
        1e-10,
        format!("max TV over 100 random shifts {max_tv:.2e}"),
    ))
}

fn check_gibbs_optimality(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let prompt = PromptId(0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed + 13);
    let mut min_margin = f64::INFINITY;
    for i in 0..100 {
        let r = GroundTruthReward::random(&space, &[prompt], params.seed + 400 + i, 1.0);
        // Softer betas keep the optimum away from a point mass, so the
        // dominance margin over log-space perturbations stays well above
        // rounding noise while instances remain random.
        let beta = 0.2 + rng.gen::<f64>() * 2.0;
        let values = r.values(prompt).map_err(from_core)?;
        let p_star = maxent_optimal_policy(&r, beta, prompt, &space).map_err(from_core)?;
        let best = maxent_objective(&p_star, values, beta);
        for _ in 0..50 {
            let logits: Vec<f64> = p_star
                .iter()
                .map(|pi| pi.ln() + 0.4 * (rng.gen::<f64>() - 0.5))
                .collect();
            let lse = math::logsumexp(&logits);
            let perturbed: Vec<f64> = logits.iter().map(|&l| math::exp(l - lse)).collect();
            min_margin = min_margin.min(best - maxent_objective(&perturbed, values, beta));
        }
    }
    let mut outcome = CheckOutcome::bounded(
        "gibbs-optimality",
        -min_margin,
        0.0,
        format!("min dominance margin {min_margin:.2e} over 100x50 perturbations"),
    );
    outcome.pass = min_margin > 0.0;
    Ok(outcome)
}

fn check_expected_loss(params: &SuiteParams) -> Result<CheckOutcome> {
    let space = params.space()?;
    let prompt = PromptId(0);
    let mut max_dev = 0.0f64;
    for i in 0..20 {
        let r = GroundTruthReward::random(&space, &[prompt], params.seed + 500 + i, 1.0);
        let targets = r.values(prompt).map_err(from_core)?;
        // At margins equal to the BT-inverse, each pair attains the binary
        // entropy of its true preference: the analytic minimum.
        let (sum, pairs) = expected_pairwise_loss(targets, targets);
        let mut entropy_sum = 0.0;
        for a in 0..space.len() {
            for b in (a + 1)..space.len() {
                let p = math::sigmoid(targets[a] - targets[b]);
                entropy_sum += -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
            }
        }
        max_dev = max_dev.max((sum - entropy_sum).abs() / pairs as f64);

        // Shifting r* by a prompt constant moves no margin.
        let mut shifts = BTreeMap::new();
        shifts.insert(prompt, 37.5);
        let shifted = r.shifted(&shifts);
        let moved = expected_pairwise_loss(targets, shifted.values(prompt).map_err(from_core)?);
        max_dev = max_dev.max((sum - moved.0).abs() / pairs as f64);
    }
    Ok(CheckOutcome::bounded(
        "expected-loss",
        max_dev,
        1e-10,
        format!("max per-pair deviation {max_dev:.2e}"),
    ))
}

struct Recovery {
    tv: f64,
    reward_dev: f64,
}

fn run_recoveries(params: &SuiteParams, kind: ObjectiveKind) -> Result<Vec<Recovery>> {
    let space = params.space()?;
    let prompt = PromptId(0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed + 17);
    let mut out = Vec::new();
    for i in 0..10 {
        let r = GroundTruthReward::random(&space, &[prompt], params.seed + 600 + i, 1.0);
        let targets = r.values(prompt).map_err(from_core)?;
        let beta = 0.05 * math::exp(rng.gen::<f64>() * 5.0); // log-uniform ~[0.05, 7.4]
        let reference: Option<Vec<f64>> = match kind {
            ObjectiveKind::PosteriorProb => None,
            _ => {
                let raw: Vec<f64> =
                    (0..space.len()).map(|_| rng.gen::<f64>() + 0.05).collect();
                let total: f64 = raw.iter().sum();
                Some(raw.into_iter().map(|x| x / total).collect())
            }
        };
        let outcome = recover_optimal_policy(
            kind,
            beta,
            targets,
            reference.as_deref(),
            RecoverySettings::default(),
        )
        .map_err(from_core)?;
        let closed_form = match &reference {
            None => maxent_optimal_policy(&r, beta, prompt, &space).map_err(from_core)?,
            Some(q) => kl_constrained_optimal_policy(&r, beta, q, prompt, &space)
                .map_err(from_core)?,
        };
        let tv = total_variation(&outcome.distribution, &closed_form);

        let center = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - mean).collect::<Vec<f64>>()
        };
        let fitted = center(&outcome.implicit_rewards);
        let truth = center(targets);
        let reward_dev = fitted
            .iter()
            .zip(&truth)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        out.push(Recovery { tv, reward_dev });
    }
    Ok(out)
}

fn check_recovery(params: &SuiteParams, kind: ObjectiveKind) -> Result<CheckOutcome> {
    let recoveries = run_recoveries(params, kind)?;
    let max_tv = recoveries.iter().fold(0.0f64, |m, r| m.max(r.tv));
    let name = match kind {
        ObjectiveKind::PosteriorProb => "recovery-posterior",
        ObjectiveKind::Dpo => "recovery-dpo",
        ObjectiveKind::Likelihood => "recovery-likelihood",
    };
    Ok(CheckOutcome::bounded(
        name,
        max_tv,
        1e-3,
        format!("max TV to the closed-form optimum over 10 instances {max_tv:.2e}"),
    ))
}

fn check_implicit_reward(params: &SuiteParams) -> Result<CheckOutcome> {
    let mut max_dev = 0.0f64;
    for kind in [ObjectiveKind::PosteriorProb, ObjectiveKind::Dpo, ObjectiveKind::Likelihood] {
        for recovery in run_recoveries(params, kind)? {
            max_dev = max_dev.max(recovery.reward_dev);
        }
    }
    Ok(CheckOutcome::bounded(
        "implicit-reward",
        max_dev,
        5e-3,
        format!("max centered reward deviation at the optima {max_dev:.2e}"),
    ))
}

/// Central finite differences against every analytic objective gradient:
/// 20 random instances per objective, β cycling {0.01, 0.1, 1, 100}.
fn check_gradient_fd(params: &SuiteParams) -> Result<CheckOutcome> {
    let eps = 1e-5;
    let atol = 1e-8;
    let v_cap = params.vocab_size.clamp(2, 5);
    let l_cap = params.max_len.clamp(2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed + 23);
    let betas = [0.01, 0.1, 1.0, 100.0];
    let mut max_rel = 0.0f64;

    for kind in [ObjectiveKind::Dpo, ObjectiveKind::PosteriorProb, ObjectiveKind::Likelihood] {
        for instance in 0..20usize {
            let beta = betas[instance % betas.len()];
            let v = rng.gen_range(2..=v_cap);
            let max_len = rng.gen_range(2..=l_cap);
            let vocab = Vocab::new(v, rng.gen_range(0..v)).map_err(from_core)?;
            let prompts = [PromptId(0), PromptId(1)];
            let policy_seed = params.seed * 7 + instance as u64;
            let policy = Policy::init(
                vocab,
                max_len - 1,
                PromptScope::Prompts(prompts.to_vec()),
                InitScheme::Gaussian { sigma: 1.0 },
                policy_seed,
            )
            .map_err(from_core)?;
            let reference = match kind {
                ObjectiveKind::PosteriorProb => None,
                ObjectiveKind::Dpo => Some(Arc::new(
                    Policy::init(
                        vocab,
                        max_len - 1,
                        PromptScope::Prompts(prompts.to_vec()),
                        InitScheme::Gaussian { sigma: 1.0 },
                        policy_seed + 1000,
                    )
                    .map_err(from_core)?
                    .freeze(),
                )),
                ObjectiveKind::Likelihood => Some(Arc::new(
                    Policy::init(
                        vocab,
                        max_len - 1,
                        PromptScope::Unconditional,
                        InitScheme::Gaussian { sigma: 1.0 },
                        policy_seed + 2000,
                    )
                    .map_err(from_core)?
                    .freeze(),
                )),
            };
            let config = ObjectiveConfig::build(kind, beta, reference).map_err(from_core)?;
            let space = EnumSpace::enumerate(vocab, max_len).map_err(from_core)?;

            let mut examples = Vec::new();
            while examples.len() < 4 {
                let prompt = prompts[rng.gen_range(0..prompts.len())];
                let a = rng.gen_range(0..space.len());
                let b = rng.gen_range(0..space.len());
                if a == b {
                    continue;
                }
                examples.push(
                    PreferenceExample::new(
                        prompt,
                        space.sequence(a).clone(),
                        space.sequence(b).clone(),
                    )
                    .map_err(from_core)?,
                );
            }
            let batch = LossBatch::new(examples).map_err(from_core)?;
            let (_, analytic) = loss_and_grad(&config, &policy, &batch).map_err(from_core)?;

            for (key, _) in policy.contexts() {
                for token in 0..vocab.size() {
                    let bump = |delta: f64| -> Result<f64> {
                        let mut copy = policy.clone();
                        let mut g = LogitGrad::new();
                        g.row_mut(ContextKey::new(key.prompt(), key.window().to_vec()), vocab.size())
                            [token] = 1.0;
                        copy.apply_update(&g, delta).map_err(from_core)?;
                        loss(&config, &copy, &batch).map_err(from_core)
                    };
                    let numeric = (bump(eps)? - bump(-eps)?) / (2.0 * eps);
                    let value = analytic.get(key).map(|row| row[token]).unwrap_or(0.0);
                    let diff = (value - numeric).abs();
                    if diff > atol {
                        max_rel = max_rel.max(diff / value.abs().max(numeric.abs()));
                    }
                }
            }
        }
    }
    Ok(CheckOutcome::bounded(
        "gradient-fd",
        max_rel,
        1e-4,
        format!("max relative error over 3x20 instances {max_rel:.2e}"),
    ))
}
