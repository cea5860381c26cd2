//! Synthetic spurious-correlation benchmark.
//!
//! Each example carries signal words of its class among neutral filler. A
//! single decoy word is attached with a class-dependent probability: in a
//! split with correlation `ρ`, class-1 examples contain the decoy with
//! probability `ρ` and class-0 examples with probability `1 - ρ`, so that
//! `P(label = 1 | decoy present) = ρ` on balanced data. Train and ID
//! evaluation share `ρ_train`; the OOD split uses `ρ_ood`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Manifest, Record, RawDataset, Split};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub filler_words: usize,
    pub signal_words_per_class: usize,
    /// Signal tokens drawn per example (inclusive range).
    pub signal_tokens: (usize, usize),
    /// Filler tokens drawn per example (inclusive range).
    pub filler_tokens: (usize, usize),
    pub decoy_word: String,
    pub rho_train: f64,
    pub rho_ood: f64,
    pub train_size: usize,
    pub id_size: usize,
    pub ood_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            filler_words: 60,
            signal_words_per_class: 20,
            signal_tokens: (1, 1),
            filler_tokens: (3, 6),
            decoy_word: "decoy".into(),
            rho_train: 0.95,
            rho_ood: 0.05,
            train_size: 1000,
            id_size: 500,
            ood_size: 500,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn signal_word(class: usize, k: usize) -> String {
        match class {
            0 => format!("neg{k}"),
            _ => format!("pos{k}"),
        }
    }

    pub fn filler_word(k: usize) -> String {
        format!("w{k}")
    }

    pub fn signal_words(&self, class: usize) -> Vec<String> {
        (0..self.signal_words_per_class)
            .map(|k| Self::signal_word(class, k))
            .collect()
    }

    pub fn is_signal_word(&self, word: &str) -> bool {
        (0..2).any(|c| self.signal_words(c).iter().any(|w| w == word))
    }

    /// Number of distinct content words the generator can emit.
    pub fn vocab_size(&self) -> usize {
        self.filler_words + 2 * self.signal_words_per_class + 1
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rho) in [("rho_train", self.rho_train), ("rho_ood", self.rho_ood)] {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Argument(format!("{name} = {rho} outside [0, 1]")));
            }
        }
        if self.signal_words_per_class == 0 || self.filler_words == 0 {
            return Err(Error::Argument("need at least one signal and one filler word".into()));
        }
        if self.signal_tokens.0 > self.signal_tokens.1 || self.filler_tokens.0 > self.filler_tokens.1 {
            return Err(Error::Argument("token count ranges must be ordered".into()));
        }
        if self.signal_tokens.1 == 0 {
            return Err(Error::Argument("examples need at least one signal token".into()));
        }
        let decoy = self.decoy_word.to_lowercase();
        if decoy.trim().is_empty() || decoy.contains(char::is_whitespace) {
            return Err(Error::Argument("decoy word must be a single token".into()));
        }
        if self.is_signal_word(&decoy) || (0..self.filler_words).any(|k| Self::filler_word(k) == decoy) {
            return Err(Error::Argument(format!(
                "decoy word {decoy:?} collides with a signal or filler word"
            )));
        }
        Ok(())
    }
}

/// Binary rationale for one training example: 1 marks a token a human
/// would consider important.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleAnnotation {
    pub example_id: String,
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub spec: SyntheticSpec,
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub id_eval: Dataset,
    pub ood_eval: Dataset,
}

impl SyntheticBenchmark {
    /// Rationales for the training split: signal words are important,
    /// everything else is not.
    pub fn rationales(&self) -> Vec<RationaleAnnotation> {
        self.train
            .examples()
            .iter()
            .map(|ex| RationaleAnnotation {
                example_id: ex.id.clone(),
                mask: ex
                    .raw_tokens
                    .iter()
                    .map(|t| u8::from(self.spec.is_signal_word(t)))
                    .collect(),
            })
            .collect()
    }
}

fn generate_split(
    spec: &SyntheticSpec,
    prefix: &str,
    size: usize,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Record> {
    let decoy = spec.decoy_word.to_lowercase();
    let mut labels: Vec<usize> = (0..size).map(|i| i % 2).collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut tokens = Vec::new();
            let signals = rng.random_range(spec.signal_tokens.0..=spec.signal_tokens.1);
            for _ in 0..signals {
                let k = rng.random_range(0..spec.signal_words_per_class);
                tokens.push(SyntheticSpec::signal_word(label, k));
            }
            let fillers = rng.random_range(spec.filler_tokens.0..=spec.filler_tokens.1);
            for _ in 0..fillers {
                tokens.push(SyntheticSpec::filler_word(rng.random_range(0..spec.filler_words)));
            }
            let p_decoy = if label == 1 { rho } else { 1.0 - rho };
            if rng.random_bool(p_decoy) {
                tokens.push(decoy.clone());
            }
            tokens.shuffle(rng);
            Record {
                id: format!("{prefix}{i}"),
                text: None,
                tokens: Some(tokens),
                label,
            }
        })
        .collect()
}

/// Generates train, ID and OOD splits plus a vocabulary built from the
/// training split. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let manifest = Manifest::binary();
    let raw = |records| RawDataset {
        records,
        manifest: manifest.clone(),
    };
    let train = raw(generate_split(spec, "train-", spec.train_size, spec.rho_train, &mut rng));
    let id_eval = raw(generate_split(spec, "id-", spec.id_size, spec.rho_train, &mut rng));
    let ood_eval = raw(generate_split(spec, "ood-", spec.ood_size, spec.rho_ood, &mut rng));
    let vocab = Vocabulary::build(train.token_streams(), 1)?;
    Ok(SyntheticBenchmark {
        spec: spec.clone(),
        train: Dataset::encode(&train, &vocab, Split::Train)?,
        id_eval: Dataset::encode(&id_eval, &vocab, Split::IdEval)?,
        ood_eval: Dataset::encode(&ood_eval, &vocab, Split::OodEval)?,
        vocab,
    })
}

/// Fraction of decoy-bearing examples that are class 1.
pub fn decoy_correlation(data: &Dataset, decoy: &str) -> Option<f64> {
    let with: Vec<&Example> = data.examples().iter().filter(|e| e.contains_word(decoy)).collect();
    if with.is_empty() {
        return None;
    }
    Some(with.iter().filter(|e| e.label == 1).count() as f64 / with.len() as f64)
}

pub fn read_rationales(path: &Path) -> Result<Vec<RationaleAnnotation>> {
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RationaleAnnotation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if r.mask.iter().any(|&m| m > 1) {
            return Err(Error::Parse {
                line: i + 1,
                message: "mask values must be 0 or 1".into(),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_rationales(path: &Path, rationales: &[RationaleAnnotation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut out = BufWriter::new(file);
    for r in rationales {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
