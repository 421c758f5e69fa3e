//! Preference-dataset file format: line-delimited JSON records with a
//! manifest header line.
//!
//! ```text
//! {"vocab_size":4,"eos_id":3,"max_len":4,"example_count":2,...}
//! {"prompt_id":0,"chosen":[1,3],"rejected":[2,0,3]}
//! {"prompt_id":1,"chosen":[3],"rejected":[0,3]}
//! ```
//!
//! All integers are decimal, token arrays explicit, encoding 7-bit safe.
//! Loading validates every record against the manifest and rejects on the
//! first violation with its line number; save∘load is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use preflab_core::data::{Dataset, DatasetManifest, PreferenceExample, Provenance};
use preflab_core::{PromptId, Sequence, Vocab};

use crate::error::{from_core, CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct WireManifest {
    vocab_size: u32,
    eos_id: u32,
    max_len: usize,
    example_count: usize,
    split_sizes: Vec<usize>,
    split_unit: String,
    provenance: WireProvenance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WireProvenance {
    Synthetic { seed: u64, reward_hash: String },
    External,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    prompt_id: u32,
    chosen: Vec<u32>,
    rejected: Vec<u32>,
}

/// Renders a dataset to its line-delimited text form.
pub fn to_string(dataset: &Dataset) -> String {
    let manifest = WireManifest {
        vocab_size: dataset.manifest.vocab.size() as u32,
        eos_id: dataset.manifest.vocab.eos_id(),
        max_len: dataset.manifest.max_len,
        example_count: dataset.manifest.example_count,
        split_sizes: dataset.manifest.split_sizes.clone(),
        split_unit: dataset.manifest.split_unit.to_string(),
        provenance: match &dataset.manifest.provenance {
            Provenance::Synthetic { seed, reward_hash } => WireProvenance::Synthetic {
                seed: *seed,
                reward_hash: reward_hash.clone(),
            },
            Provenance::External => WireProvenance::External,
        },
    };
    let mut out = serde_json::to_string(&manifest).expect("manifest serializes");
    out.push('\n');
    for example in &dataset.examples {
        let record = WireRecord {
            prompt_id: example.prompt_id.0,
            chosen: example.chosen.tokens().to_vec(),
            rejected: example.rejected.tokens().to_vec(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_string(dataset))?;
    Ok(())
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Format { path: path.display().to_string(), line, message: message.into() }
}

pub fn load(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    from_str(&text, path)
}

fn from_str(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, manifest_line) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty dataset"))?;
    let wire: WireManifest = serde_json::from_str(manifest_line)
        .map_err(|e| format_err(path, 1, format!("bad manifest: {e}")))?;
    let vocab = Vocab::new(wire.vocab_size, wire.eos_id).map_err(from_core)?;
    let manifest = DatasetManifest {
        vocab,
        max_len: wire.max_len,
        example_count: wire.example_count,
        split_sizes: wire.split_sizes,
        split_unit: "example",
        provenance: match wire.provenance {
            WireProvenance::Synthetic { seed, reward_hash } => {
                Provenance::Synthetic { seed, reward_hash }
            }
            WireProvenance::External => Provenance::External,
        },
    };
    manifest.validate().map_err(from_core)?;

    let mut examples = Vec::with_capacity(manifest.example_count);
    for (i, line) in lines {
        let line_no = i + 1;
        let record: WireRecord = serde_json::from_str(line)
            .map_err(|e| format_err(path, line_no, format!("bad record: {e}")))?;
        let chosen = Sequence::new(record.chosen, &vocab, manifest.max_len)
            .map_err(|e| format_err(path, line_no, format!("chosen: {e}")))?;
        let rejected = Sequence::new(record.rejected, &vocab, manifest.max_len)
            .map_err(|e| format_err(path, line_no, format!("rejected: {e}")))?;
        let example = PreferenceExample::new(PromptId(record.prompt_id), chosen, rejected)
            .map_err(|e| format_err(path, line_no, e.to_string()))?;
        examples.push(example);
    }
    if examples.is_empty() {
        return Err(format_err(path, 1, "empty dataset"));
    }
    if examples.len() != manifest.example_count {
        return Err(format_err(
            path,
            1,
            format!(
                "manifest declares {} examples, file has {}",
                manifest.example_count,
                examples.len()
            ),
        ));
    }
    Ok(Dataset { manifest, examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use preflab_core::data::{synth_generate, LabelMode};
    use preflab_core::oracle::{EnumSpace, GroundTruthReward};

    fn sample_dataset() -> Dataset {
        let vocab = Vocab::new(4, 3).unwrap();
        let space = EnumSpace::enumerate(vocab, 4).unwrap();
        let prompts = [PromptId(0), PromptId(1)];
        let r = GroundTruthReward::random(&space, &prompts, 3, 1.0);
        synth_generate(&r, &space, 2, 10, LabelMode::Sampled, 4).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let ds = sample_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save(&ds, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(ds, loaded);
        let second = dir.path().join("d2.jsonl");
        save(&loaded, &second).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");
    }

    #[test]
    fn out_of_range_token_names_the_line() {
        let ds = sample_dataset();
        let mut text = to_string(&ds);
        text.push_str("{\"prompt_id\":0,\"chosen\":[4,3],\"rejected\":[0,3]}\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, text).unwrap();
        match load(&path).unwrap_err() {
            CliError::Format { line, message, .. } => {
                assert_eq!(line, ds.examples.len() + 2);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn misplaced_eos_and_identical_pairs_are_rejected() {
        let header = "{\"vocab_size\":4,\"eos_id\":3,\"max_len\":4,\"example_count\":1,\
                      \"split_sizes\":[1],\"split_unit\":\"example\",\
                      \"provenance\":{\"kind\":\"external\"}}";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");

        let no_eos = format!("{header}\n{{\"prompt_id\":0,\"chosen\":[0,1],\"rejected\":[0,3]}}\n");
        std::fs::write(&path, no_eos).unwrap();
        assert!(load(&path).is_err());

        let same = format!("{header}\n{{\"prompt_id\":0,\"chosen\":[0,3],\"rejected\":[0,3]}}\n");
        std::fs::write(&path, same).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("identical"), "{err}");
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let ds = sample_dataset();
        let mut text = to_string(&ds);
        let extra = "{\"prompt_id\":0,\"chosen\":[0,3],\"rejected\":[1,3]}\n";
        text.push_str(extra);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("count.jsonl");
        std::fs::write(&path, text).unwrap();
        assert!(load(&path).is_err());
    }
}
