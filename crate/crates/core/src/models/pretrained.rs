use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Overwrites rows of `embeddings` with vectors from a whitespace-delimited
/// text file (`token v1 ... vd` per line). Tokens missing from the file, and
/// the UNK row, keep their current values. A leading `count dim` header
/// line, as written by word2vec, is skipped. Returns the number of rows
/// replaced.
pub fn load_pretrained_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    embeddings: &mut Matrix,
) -> Result<usize> {
    read_pretrained(File::open(path)?, vocab, embeddings)
}

pub(crate) fn read_pretrained<R: Read>(reader: R, vocab: &Vocabulary, embeddings: &mut Matrix) -> Result<usize> {
    if embeddings.rows != vocab.size() {
        return Err(Error::Shape(format!(
            "embedding table has {} rows, vocabulary {}",
            embeddings.rows,
            vocab.size()
        )));
    }
    let d = embeddings.cols;
    let mut replaced = 0;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        if rest.len() != d {
            return Err(Error::Record {
                line: i + 1,
                message: format!("expected {d} components, found {}", rest.len()),
            });
        }
        if !vocab.contains(token) {
            continue;
        }
        let row = embeddings.row_mut(vocab.lookup(token));
        for (dst, src) in row.iter_mut().zip(&rest) {
            *dst = src.parse::<f64>().map_err(|e| Error::Record {
                line: i + 1,
                message: format!("bad component {src:?}: {e}"),
            })?;
        }
        replaced += 1;
    }
    Ok(replaced)
}
