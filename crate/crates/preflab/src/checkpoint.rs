//! Policy checkpoint format: a self-describing line-oriented text file
//! with 17-significant-digit decimal floats, which round-trip `f64` values
//! bit-exactly.
//!
//! ```text
//! preflab-policy v1
//! vocab_size=4
//! eos_id=3
//! context_order=2
//! mode=trainable
//! conditioning=per-prompt
//! contexts=26
//! ctx 0 - 0.0000000000000000e0 ... (one logit per vocabulary entry)
//! ctx 0 1,2 ...
//! ```
//!
//! The scope column is a prompt id, or `*` for an unconditional policy;
//! the window column is `-` for the empty window, else comma-joined token
//! ids.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use preflab_core::{ContextKey, Mode, Policy, PromptId, Token, Vocab};

use crate::error::{from_core, CliError, Result};

const MAGIC: &str = "preflab-policy v1";

/// 17-significant-digit decimal float (bit-exact round-trip for f64).
fn fmt_logit(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a policy to the checkpoint text format.
pub fn to_string(policy: &Policy) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("vocab_size={}\n", policy.vocab().size()));
    out.push_str(&format!("eos_id={}\n", policy.vocab().eos_id()));
    out.push_str(&format!("context_order={}\n", policy.context_order()));
    let mode = match policy.mode() {
        Mode::Trainable => "trainable",
        Mode::Frozen => "frozen",
    };
    out.push_str(&format!("mode={mode}\n"));
    let conditioning = if policy.is_unconditional() { "unconditional" } else { "per-prompt" };
    out.push_str(&format!("conditioning={conditioning}\n"));
    out.push_str(&format!("contexts={}\n", policy.contexts().count()));
    for (key, logits) in policy.contexts() {
        let scope = match key.prompt() {
            Some(p) => p.0.to_string(),
            None => "*".to_string(),
        };
        let window = if key.window().is_empty() {
            "-".to_string()
        } else {
            key.window().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
        };
        let values: Vec<String> = logits.iter().map(|&l| fmt_logit(l)).collect();
        out.push_str(&format!("ctx {scope} {window} {}\n", values.join(" ")));
    }
    out
}

pub fn save(policy: &Policy, path: &Path) -> Result<()> {
    fs::write(path, to_string(policy))?;
    Ok(())
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Format { path: path.display().to_string(), line, message: message.into() }
}

pub fn load(path: &Path) -> Result<Policy> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    from_str(&text, path)
}

fn from_str(text: &str, path: &Path) -> Result<Policy> {
    let mut lines = text.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty checkpoint"))?;
    if magic != MAGIC {
        return Err(format_err(path, 1, format!("expected `{MAGIC}`, found `{magic}`")));
    }

    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut table: BTreeMap<ContextKey, Vec<f64>> = BTreeMap::new();
    let mut expected_width: Option<usize> = None;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("ctx ") {
            let mut fields = rest.split(' ');
            let scope = fields
                .next()
                .ok_or_else(|| format_err(path, line_no, "missing scope"))?;
            let window_field = fields
                .next()
                .ok_or_else(|| format_err(path, line_no, "missing window"))?;
            let prompt = if scope == "*" {
                None
            } else {
                let id: u32 = scope
                    .parse()
                    .map_err(|_| format_err(path, line_no, format!("bad prompt id `{scope}`")))?;
                Some(PromptId(id))
            };
            let window: Vec<Token> = if window_field == "-" {
                Vec::new()
            } else {
                window_field
                    .split(',')
                    .map(|t| {
                        t.parse().map_err(|_| {
                            format_err(path, line_no, format!("bad window token `{t}`"))
                        })
                    })
                    .collect::<Result<_>>()?
            };
            let logits: Vec<f64> = fields
                .map(|v| {
                    v.parse().map_err(|_| {
                        format_err(path, line_no, format!("bad logit value `{v}`"))
                    })
                })
                .collect::<Result<_>>()?;
            if let Some(width) = expected_width {
                if logits.len() != width {
                    return Err(format_err(
                        path,
                        line_no,
                        format!("expected {width} logits, found {}", logits.len()),
                    ));
                }
            } else {
                expected_width = Some(logits.len());
            }
            if table.insert(ContextKey::new(prompt, window), logits).is_some() {
                return Err(format_err(path, line_no, "duplicate context"));
            }
        } else if let Some((key, value)) = line.split_once('=') {
            header.insert(key.to_string(), value.to_string());
        } else {
            return Err(format_err(path, line_no, format!("unrecognized line `{line}`")));
        }
    }

    let get = |key: &str| -> Result<&String> {
        header
            .get(key)
            .ok_or_else(|| format_err(path, 1, format!("missing header field `{key}`")))
    };
    let vocab_size: u32 = get("vocab_size")?
        .parse()
        .map_err(|_| format_err(path, 1, "bad vocab_size"))?;
    let eos_id: u32 = get("eos_id")?.parse().map_err(|_| format_err(path, 1, "bad eos_id"))?;
    let context_order: usize = get("context_order")?
        .parse()
        .map_err(|_| format_err(path, 1, "bad context_order"))?;
    let mode = match get("mode")?.as_str() {
        "trainable" => Mode::Trainable,
        "frozen" => Mode::Frozen,
        other => return Err(format_err(path, 1, format!("bad mode `{other}`"))),
    };
    let unconditional = match get("conditioning")?.as_str() {
        "per-prompt" => false,
        "unconditional" => true,
        other => return Err(format_err(path, 1, format!("bad conditioning `{other}`"))),
    };
    let declared: usize = get("contexts")?
        .parse()
        .map_err(|_| format_err(path, 1, "bad contexts count"))?;
    if declared != table.len() {
        return Err(format_err(
            path,
            1,
            format!("declared {declared} contexts, found {}", table.len()),
        ));
    }

    let vocab = Vocab::new(vocab_size, eos_id).map_err(from_core)?;
    Policy::from_table(vocab, context_order, unconditional, mode, table).map_err(from_core)
}

#[cfg(test)]
mod tests {
    use super::*;
    use preflab_core::{InitScheme, PromptScope};

    fn sample_policy() -> Policy {
        Policy::init(
            Vocab::new(4, 3).unwrap(),
            2,
            PromptScope::Prompts(vec![PromptId(0), PromptId(5)]),
            InitScheme::Gaussian { sigma: 1.3 },
            99,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let policy = sample_policy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save(&policy, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(policy.contexts().count(), loaded.contexts().count());
        for ((ka, la), (kb, lb)) in policy.contexts().zip(loaded.contexts()) {
            assert_eq!(ka, kb);
            for (a, b) in la.iter().zip(lb) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(policy, loaded);
        // and the re-rendered text is byte-identical
        assert_eq!(to_string(&policy), to_string(&loaded));
    }

    #[test]
    fn unconditional_round_trip() {
        let policy = Policy::init(
            Vocab::new(3, 0).unwrap(),
            1,
            PromptScope::Unconditional,
            InitScheme::Gaussian { sigma: 0.5 },
            1,
        )
        .unwrap()
        .freeze();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.ckpt");
        save(&policy, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert!(loaded.is_unconditional());
        assert_eq!(loaded.mode(), Mode::Frozen);
        assert_eq!(policy, loaded);
    }

    #[test]
    fn malformed_checkpoints_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");

        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(load(&path), Err(CliError::Format { line: 1, .. })));

        let policy = sample_policy();
        let mut text = to_string(&policy);
        text.push_str("garbage line\n");
        std::fs::write(&path, &text).unwrap();
        assert!(matches!(load(&path), Err(CliError::Format { .. })));

        let truncated = to_string(&policy)
            .lines()
            .take(8)
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(&path, truncated).unwrap();
        assert!(load(&path).is_err());
    }
}
