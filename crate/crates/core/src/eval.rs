//! ROC-AUC, repetition aggregation and split evaluation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, Split};
use crate::error::{Error, Result};
use crate::models::{Scorer, Variant};

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties
/// counting one half. Computed from midranks in `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * pos_in_group as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Arithmetic mean and standard error (sample standard deviation with an
/// `n - 1` denominator, divided by `sqrt(n)`); identical values (and
/// `n = 1`) give exactly `(value, 0)`.
pub fn mean_and_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values"));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// `"80.71 (±0.13)"` for a fraction-valued mean and standard error.
pub fn format_percent(mean: f64, stderr: f64) -> String {
    format!("{:.2} (±{:.2})", 100.0 * mean, 100.0 * stderr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub split: Split,
    /// One AUC per repetition, as fractions in `[0, 1]`.
    pub values: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub n_examples: usize,
    pub n_reject: usize,
    pub n_accept: usize,
}

impl EvalReport {
    pub fn from_values(
        variant: Variant,
        split: Split,
        values: Vec<f64>,
        n_reject: usize,
        n_accept: usize,
    ) -> Result<Self> {
        let (mean, stderr) = mean_and_stderr(&values)?;
        Ok(Self { variant, split, values, mean, stderr, n_examples: n_reject + n_accept, n_reject, n_accept })
    }

    pub fn reject_fraction(&self) -> f64 {
        self.n_reject as f64 / self.n_examples.max(1) as f64
    }

    pub fn display(&self) -> String {
        format_percent(self.mean, self.stderr)
    }

    pub const CSV_HEADER: &'static str =
        "variant,split,runs,auc_values,mean_auc,stderr,n_examples,n_reject,n_accept,reject_fraction";

    /// One CSV row; AUC fields are in percentage points.
    pub fn csv_row(&self) -> String {
        let values: Vec<String> = self.values.iter().map(|v| format!("{:.4}", 100.0 * v)).collect();
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{:.4},{:.4},{},{},{},{:.4}",
            self.variant,
            self.split,
            self.values.len(),
            values.join(";"),
            100.0 * self.mean,
            100.0 * self.stderr,
            self.n_examples,
            self.n_reject,
            self.n_accept,
            self.reject_fraction()
        )
        .expect("writing to a String");
        row
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(EvalReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Scores every comment of `split` in corpus order.
pub fn score_split<S: Scorer + ?Sized>(scorer: &S, corpus: &Corpus, split: Split) -> Result<(Vec<f64>, Vec<bool>)> {
    let comments: Vec<_> = corpus.split(split).collect();
    let scores = comments.par_iter().map(|c| scorer.score(c)).collect::<Result<Vec<f64>>>()?;
    let labels = comments.iter().map(|c| c.label == Label::Reject).collect();
    Ok((scores, labels))
}

/// AUC of one scorer on one split.
pub fn evaluate_auc<S: Scorer + ?Sized>(scorer: &S, corpus: &Corpus, split: Split) -> Result<f64> {
    let (scores, labels) = score_split(scorer, corpus, split)?;
    roc_auc(&scores, &labels)
}

/// One report row from the repetitions of a variant (a single scorer for
/// the deterministic baselines).
pub fn evaluate_model<S: Scorer>(runs: &[S], corpus: &Corpus, split: Split) -> Result<EvalReport> {
    let first = runs.first().ok_or(Error::EmptyInput("runs"))?;
    let variant = first.variant();
    if runs.iter().any(|r| r.variant() != variant) {
        return Err(Error::Config("runs of different variants in one report".into()));
    }
    let values = runs.iter().map(|r| evaluate_auc(r, corpus, split)).collect::<Result<Vec<_>>>()?;
    let n_reject = corpus.split(split).filter(|c| c.label == Label::Reject).count();
    let n_accept = corpus.split_len(split) - n_reject;
    EvalReport::from_values(variant, split, values, n_reject, n_accept)
}
