//! Model archive format.
//!
//! ```text
//! magic     8 bytes   "EXDBGMDL"
//! section   repeated, in this order: MANIFEST, VOCAB, PARAMS
//!   tag     8 bytes   ASCII, NUL padded
//!   length  u64 LE    payload size in bytes
//!   payload
//! ```
//!
//! * `MANIFEST`: JSON object `{"format_version", "d", "h", "num_classes",
//!   "vocab_size", "nonlinearity", "normalization"}`.
//! * `VOCAB`: JSON array of tokens in id order.
//! * `PARAMS`: little-endian f64 values, row-major, in the order embeddings
//!   (|V|×d), hidden weights (d×h), hidden bias (h), output weights (h×C),
//!   output bias (C).
//!
//! Writing is deterministic: the same model and vocabulary always produce the
//! same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::Normalization;
use crate::error::{Error, Result};
use crate::model::{Nonlinearity, ParamGroup, Params, TextClassifier};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"EXDBGMDL";
pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [&str; 3] = ["MANIFEST", "VOCAB", "PARAMS"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub d: usize,
    pub h: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub nonlinearity: Nonlinearity,
    pub normalization: Normalization,
}

fn tag(name: &str) -> [u8; 8] {
    let mut out = [0u8; 8];
    out[..name.len()].copy_from_slice(name.as_bytes());
    out
}

fn push_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&tag(name));
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn model_to_bytes(model: &TextClassifier, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::Validation(format!(
            "vocabulary has {} tokens but the model has {} embedding rows",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let manifest = ArchiveManifest {
        format_version: FORMAT_VERSION,
        d: model.embedding_dim(),
        h: model.hidden_dim(),
        num_classes: model.num_classes(),
        vocab_size: model.vocab_size(),
        nonlinearity: model.nonlinearity(),
        normalization: Normalization::AbsMax,
    };
    let mut params = Vec::with_capacity(model.params().len() * 8);
    for value in model.params().iter() {
        params.extend_from_slice(&value.to_le_bytes());
    }
    let mut out = Vec::with_capacity(params.len() + 1024);
    out.extend_from_slice(MAGIC);
    push_section(&mut out, SECTIONS[0], &json(&manifest)?);
    push_section(&mut out, SECTIONS[1], &json(vocab.tokens())?);
    push_section(&mut out, SECTIONS[2], &params);
    Ok(out)
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(value).map_err(std::io::Error::from)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn section(&mut self, name: &str) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.is_empty() {
            return Err(Error::Format(format!("missing section {name}")));
        }
        if rest.len() < 16 {
            return Err(Error::Format(format!("truncated header of section {name}")));
        }
        if rest[..8] != tag(name) {
            return Err(Error::Format(format!(
                "expected section {name}, found tag {:?}",
                String::from_utf8_lossy(&rest[..8]).trim_end_matches('\0')
            )));
        }
        let len = u64::from_le_bytes(rest[8..16].try_into().expect("8 bytes")) as usize;
        let payload = &rest[16..];
        if payload.len() < len {
            return Err(Error::Format(format!(
                "truncated section {name}: expected {len} bytes, found {}",
                payload.len()
            )));
        }
        self.pos += 16 + len;
        Ok(&payload[..len])
    }
}

pub fn model_from_bytes(
    bytes: &[u8],
) -> Result<(TextClassifier, Vocabulary, ArchiveManifest)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a model archive (bad magic)".into()));
    }
    let mut reader = Reader {
        bytes,
        pos: MAGIC.len(),
    };

    let manifest: ArchiveManifest = serde_json::from_slice(reader.section("MANIFEST")?)
        .map_err(|e| Error::Format(format!("section MANIFEST: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }

    let tokens: Vec<String> = serde_json::from_slice(reader.section("VOCAB")?)
        .map_err(|e| Error::Format(format!("section VOCAB: {e}")))?;
    if tokens.len() != manifest.vocab_size {
        return Err(Error::Format(format!(
            "section VOCAB holds {} tokens, manifest declares {}",
            tokens.len(),
            manifest.vocab_size
        )));
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| Error::Format(e.to_string()))?;

    let raw = reader.section("PARAMS")?;
    let (v, d, h, c) = (manifest.vocab_size, manifest.d, manifest.h, manifest.num_classes);
    let sizes = [v * d, d * h, h, h * c, c];
    let expected: usize = sizes.iter().sum::<usize>() * 8;
    if raw.len() != expected {
        return Err(Error::Format(format!(
            "section PARAMS holds {} bytes, dimensions require {expected}",
            raw.len()
        )));
    }
    let mut values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let mut params = Params {
        embeddings: Vec::new(),
        hidden_weights: Vec::new(),
        hidden_bias: Vec::new(),
        output_weights: Vec::new(),
        output_bias: Vec::new(),
    };
    for (group, size) in ParamGroup::ALL.into_iter().zip(sizes) {
        *params.group_mut(group) = values.by_ref().take(size).collect();
    }
    if reader.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after section PARAMS",
            bytes.len() - reader.pos
        )));
    }
    let model = TextClassifier::from_params(v, d, h, c, manifest.nonlinearity, params)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((model, vocab, manifest))
}

pub fn export_model(model: &TextClassifier, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model, vocab)?;
    std::fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

pub fn load_model(path: &Path) -> Result<(TextClassifier, Vocabulary, ArchiveManifest)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::ModelConfig;
    use crate::vocab::tokenize;

    fn fixture() -> (TextClassifier, Vocabulary) {
        let vocab = Vocabulary::build([tokenize("a b c d e f g a b")], 1).unwrap();
        let model = TextClassifier::new(
            vocab.len(),
            3,
            &ModelConfig {
                embedding_dim: 4,
                hidden_dim: 3,
                seed: 5,
                ..ModelConfig::default()
            },
        )
        .unwrap();
        (model, vocab)
    }

    #[test]
    fn round_trip_reproduces_logits_exactly() {
        let (model, vocab) = fixture();
        let bytes = model_to_bytes(&model, &vocab).unwrap();
        let (loaded, loaded_vocab, manifest) = model_from_bytes(&bytes).unwrap();
        assert_eq!(loaded_vocab, vocab);
        assert_eq!(manifest.num_classes, 3);
        assert_eq!((manifest.d, manifest.h, manifest.vocab_size), (4, 3, vocab.len()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let ids: Vec<usize> = (0..rng.random_range(1..8))
                .map(|_| rng.random_range(0..vocab.len()))
                .collect();
            let a = model.logits(&ids).unwrap();
            let b = loaded.logits(&ids).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(model_to_bytes(&loaded, &loaded_vocab).unwrap(), bytes);
    }

    #[test]
    fn truncation_names_the_missing_section() {
        let (model, vocab) = fixture();
        let bytes = model_to_bytes(&model, &vocab).unwrap();
        let manifest_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let after_manifest = 8 + 16 + manifest_len;

        let err = model_from_bytes(&bytes[..after_manifest]).unwrap_err();
        assert!(err.to_string().contains("missing section VOCAB"), "{err}");

        let err = model_from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("section PARAMS"), "{err}");

        let err = model_from_bytes(&bytes[..8]).unwrap_err();
        assert!(err.to_string().contains("missing section MANIFEST"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(model_from_bytes(b"NOTMODEL...."), Err(Error::Format(_))));
    }

    #[test]
    fn parameter_layout_is_fixed() {
        let (model, vocab) = fixture();
        let bytes = model_to_bytes(&model, &vocab).unwrap();
        let first = f64::from_le_bytes(bytes[bytes.len() - model.params().len() * 8..][..8].try_into().unwrap());
        assert_eq!(first.to_bits(), model.params().embeddings[0].to_bits());
        let last = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(last.to_bits(), model.params().output_bias[2].to_bits());
    }
}
