//! Word vocabulary with dense ids.
//!
//! Ids `0` and `1` are always the padding and unknown tokens. The remaining
//! ids are assigned by descending corpus count, ties broken lexicographically,
//! so the same corpus always yields the same id assignment.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Canonical form used for vocabulary lookup and word matching.
pub fn normalize_token(token: &str) -> String {
    token.to_lowercase()
}

/// Whitespace tokenization with lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(normalize_token).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Counts every token of `corpus` and keeps those seen at least
    /// `min_count` times.
    pub fn build<I, S, T>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut sequences = 0usize;
        for sequence in corpus {
            sequences += 1;
            for token in sequence {
                let token = normalize_token(token.as_ref());
                if token == PAD_TOKEN || token == UNK_TOKEN {
                    continue;
                }
                *counts.entry(token).or_default() += 1;
            }
        }
        if sequences == 0 || counts.is_empty() {
            return Err(Error::Ingestion(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }

        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, count)| *count >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(token, _)| token))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its ordered token list (the exported form).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[Self::PAD_ID] != PAD_TOKEN || tokens[Self::UNK_ID] != UNK_TOKEN
        {
            return Err(Error::Validation(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {token:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of `token`, or `None` when it is out of vocabulary.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index
            .get(token)
            .or_else(|| self.index.get(&normalize_token(token)))
            .copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.get(token).is_some()
    }

    /// Id of `token`, mapping unseen tokens to the unknown id.
    pub fn encode(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}
