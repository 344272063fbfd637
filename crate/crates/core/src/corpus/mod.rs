//! Moderated comments: ingestion, user statistics, vocabulary and splits.

mod stats;
mod synthetic;
mod tokenize;
mod vocab;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use stats::{
    classify_user_type, compute_user_stats, UserStats, UserStatsTable, UserType, GREEN_MAX_RATE,
    MIN_KNOWN_COMMENTS, RED_MIN_RATE,
};
pub use synthetic::{generate_synthetic, planted_propensities, SyntheticSpec};
pub use tokenize::tokenize;
pub use vocab::{encode_comment, Vocabulary, DEFAULT_MAX_TOKENS, MIN_TOKEN_FREQUENCY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Accept,
    Reject,
}

impl Label {
    /// Reject is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Label::Accept => 0.0,
            Label::Reject => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Accept => "accept",
            Label::Reject => "reject",
        }
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "accept" => Ok(Label::Accept),
            "reject" => Ok(Label::Reject),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Domain(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comment {
    pub id: String,
    pub author: String,
    pub tokens: Vec<String>,
    pub label: Label,
    pub split: Split,
}

/// On-disk record, one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: Option<String>,
    author: Option<String>,
    text: Option<String>,
    label: Option<String>,
    split: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    comments: Vec<Comment>,
}

impl Corpus {
    pub fn new(comments: Vec<Comment>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(comments.len());
        for (i, c) in comments.iter().enumerate() {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateId { line: i + 1, id: c.id.clone() });
            }
        }
        Ok(Self { comments })
    }

    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Comment> {
        self.comments.iter().filter(move |c| c.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    /// Reads line-delimited JSON records (`id`, `author`, `text`, `label`,
    /// `split`). Blank lines are ignored; any malformed record fails the
    /// whole read with its 1-based line number.
    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        let mut comments = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Record { line: line_no, message: e.to_string() })?;
            let missing = |field: &str| Error::Record {
                line: line_no,
                message: format!("missing field `{field}`"),
            };
            let id = rec.id.ok_or_else(|| missing("id"))?;
            let author = rec.author.ok_or_else(|| missing("author"))?;
            let text = rec.text.ok_or_else(|| missing("text"))?;
            let label_str = rec.label.ok_or_else(|| missing("label"))?;
            let split_str = rec.split.ok_or_else(|| missing("split"))?;
            let label = label_str
                .parse::<Label>()
                .map_err(|_| Error::UnknownLabel { line: line_no, value: label_str.clone() })?;
            let split = split_str
                .parse::<Split>()
                .map_err(|_| Error::UnknownSplit { line: line_no, value: split_str.clone() })?;
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId { line: line_no, id });
            }
            comments.push(Comment { id, author, tokens: tokenize(&text), label, split });
        }
        Ok(Self { comments })
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for c in &self.comments {
            let rec = Record {
                id: Some(c.id.clone()),
                author: Some(c.author.clone()),
                text: Some(c.tokens.join(" ")),
                label: Some(c.label.as_str().into()),
                split: Some(c.split.as_str().into()),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(File::create(path)?)
    }
}

/// Loads a corpus file from disk.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::read_jsonl(File::open(path)?)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Partitions `0..n` into (fit, holdout) index lists, both ascending. The
/// holdout holds `floor(fraction * n)` indices picked by a seeded shuffle.
pub fn holdout_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    // The nudge keeps e.g. 0.29 * 100 from flooring to 28.
    let n_hold = (fraction * n as f64 + 1e-9).floor() as usize;
    if n_hold == 0 {
        return Err(Error::EmptyHoldout { fraction, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut holdout = order[..n_hold].to_vec();
    let mut fit = order[n_hold..].to_vec();
    holdout.sort_unstable();
    fit.sort_unstable();
    Ok((fit, holdout))
}

/// Splits training comments into (fit_set, holdout_set).
pub fn split_holdout<T: Clone>(train: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (fit, hold) = holdout_indices(train.len(), fraction, seed)?;
    Ok((
        fit.into_iter().map(|i| train[i].clone()).collect(),
        hold.into_iter().map(|i| train[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Corpus> {
        Corpus::read_jsonl(text.as_bytes())
    }

    #[test]
    fn ingest_valid_records() {
        let text = r#"{"id":"1","author":"a","text":"Hello there","label":"accept","split":"train"}
{"id":"2","author":"b","text":"","label":"reject","split":"dev"}

{"id":"3","author":"a","text":"!!","label":"reject","split":"test"}
"#;
        let corpus = parse(text).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.split_len(Split::Train), 1);
        assert_eq!(corpus.split_len(Split::Dev), 1);
        assert_eq!(corpus.split_len(Split::Test), 1);
        assert!(corpus.comments()[1].tokens.is_empty());

        let vocab = Vocabulary::from_tokens(vec![]).unwrap();
        assert_eq!(encode_comment(&corpus.comments()[1], &vocab, 300), vec![vocab.unk_index()]);
    }

    #[test]
    fn ingest_errors_carry_line_numbers() {
        let bad_label = r#"{"id":"1","author":"a","text":"x","label":"accept","split":"train"}
{"id":"2","author":"a","text":"x","label":"maybe","split":"train"}"#;
        match parse(bad_label) {
            Err(e @ Error::UnknownLabel { line: 2, .. }) => {
                assert!(e.to_string().contains("unknown label"))
            }
            other => panic!("{other:?}"),
        }

        let missing = r#"{"id":"1","text":"x","label":"accept","split":"train"}"#;
        match parse(missing) {
            Err(Error::Record { line: 1, message }) => assert!(message.contains("author")),
            other => panic!("{other:?}"),
        }

        let dup = r#"{"id":"1","author":"a","text":"x","label":"accept","split":"train"}
{"id":"1","author":"b","text":"y","label":"accept","split":"dev"}"#;
        assert!(matches!(parse(dup), Err(Error::DuplicateId { line: 2, .. })));

        let bad_split = r#"{"id":"1","author":"a","text":"x","label":"accept","split":"valid"}"#;
        assert!(matches!(parse(bad_split), Err(Error::UnknownSplit { line: 1, .. })));

        assert!(matches!(parse("{not json"), Err(Error::Record { line: 1, .. })));
    }

    #[test]
    fn write_then_read() {
        let text = r#"{"id":"1","author":"a","text":"Hello, World","label":"accept","split":"train"}"#;
        let corpus = parse(text).unwrap();
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), corpus);
    }

    #[test]
    fn holdout_examples() {
        let items: Vec<usize> = (0..100).collect();
        let (fit, hold) = split_holdout(&items, 0.02, 7).unwrap();
        assert_eq!(hold.len(), 2);
        assert_eq!(fit.len(), 98);
        assert_eq!(split_holdout(&items, 0.02, 7).unwrap(), (fit, hold));

        let small: Vec<usize> = (0..10).collect();
        assert!(matches!(split_holdout(&small, 0.02, 7), Err(Error::EmptyHoldout { .. })));
        assert!(split_holdout(&small, 1.0, 7).is_err());
        assert_eq!(holdout_indices(100, 0.29, 1).unwrap().1.len(), 29);
    }

    proptest! {
        #[test]
        fn holdout_partitions(n in 1usize..400, fraction in 0.01f64..0.99, seed: u64) {
            match holdout_indices(n, fraction, seed) {
                Ok((fit, hold)) => {
                    prop_assert_eq!(fit.len() + hold.len(), n);
                    let mut all: Vec<usize> = fit.iter().chain(&hold).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                }
                Err(Error::EmptyHoldout { .. }) => prop_assert!(fraction * (n as f64) < 1.0 + 1e-9),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
