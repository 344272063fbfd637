use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Comment;
use crate::error::{Error, Result};

/// Tokens seen fewer times than this in training share the UNK row.
pub const MIN_TOKEN_FREQUENCY: usize = 2;
pub const DEFAULT_MAX_TOKENS: usize = 300;

/// Token to row mapping. Known tokens occupy rows `0..n` in order of first
/// appearance in the training text; the UNK row is `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I>(train_comments: I) -> Self
    where
        I: IntoIterator<Item = &'a Comment>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for c in train_comments {
            for t in &c.tokens {
                let n = counts.entry(t.as_str()).or_insert(0);
                if *n == 0 {
                    order.push(t.as_str());
                }
                *n += 1;
            }
        }
        let tokens: Vec<String> = order
            .into_iter()
            .filter(|t| counts[t] >= MIN_TOKEN_FREQUENCY)
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens).expect("counted tokens are distinct")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Domain(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn unk_index(&self) -> usize {
        self.tokens.len()
    }

    /// Rows in the embedding table, UNK included.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.tokens.len())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// `None` for the UNK row or out-of-range indices.
    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// One row index per token, keeping the first `max_tokens`; an empty
    /// token list encodes as `[UNK]`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_tokens: usize) -> Vec<usize> {
        if tokens.is_empty() {
            return vec![self.unk_index()];
        }
        tokens.iter().take(max_tokens.max(1)).map(|t| self.lookup(t.as_ref())).collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

/// `vocab.encode(&c.tokens, max_tokens)`
pub fn encode_comment(c: &Comment, vocab: &Vocabulary, max_tokens: usize) -> Vec<usize> {
    vocab.encode(&c.tokens, max_tokens)
}
