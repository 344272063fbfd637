//! The five GRU scoring heads, their parameters and gradients, user-slot
//! resolution, and the two user-history baselines.
//!
//! | variant | logit                          |
//! |---------|--------------------------------|
//! | RNN     | `W_p . h_k + b`                |
//! | ueRNN   | `W_p . h_k + W_v . v_u + b`    |
//! | teRNN   | `W_p . h_k + W_v . v_t + b`    |
//! | ubRNN   | `W_p . h_k + b_u`              |
//! | tbRNN   | `W_p . h_k + b_t`              |
//!
//! `u` is the author's user slot and `t` the author's user type. ubRNN and
//! tbRNN carry no global bias.

mod artifact;
mod pretrained;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Comment, UserStatsTable, UserType, Vocabulary};
use crate::error::{Error, Result};
use crate::gru::{gru_backward_accumulate, gru_sequence_forward, GruWeights, SequenceCache, SparseRows};
use crate::nn::{axpy, bce_loss_and_grad, dot, glorot_init, sigmoid, Matrix, ParamGroups};
use crate::rng::Rng;

pub use artifact::{ModelArtifact, ARTIFACT_FORMAT};
pub use pretrained::load_pretrained_embeddings;

/// Uniform range for word, user and type tables at initialization.
pub const TABLE_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "ueRNN")]
    UeRnn,
    #[serde(rename = "teRNN")]
    TeRnn,
    #[serde(rename = "ubRNN")]
    UbRnn,
    #[serde(rename = "tbRNN")]
    TbRnn,
    #[serde(rename = "uBASE")]
    UBase,
    #[serde(rename = "tBASE")]
    TBase,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::UeRnn,
        Variant::UbRnn,
        Variant::TeRnn,
        Variant::TbRnn,
        Variant::Rnn,
        Variant::UBase,
        Variant::TBase,
    ];
    pub const NEURAL: [Variant; 5] =
        [Variant::Rnn, Variant::UeRnn, Variant::TeRnn, Variant::UbRnn, Variant::TbRnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rnn => "RNN",
            Variant::UeRnn => "ueRNN",
            Variant::TeRnn => "teRNN",
            Variant::UbRnn => "ubRNN",
            Variant::TbRnn => "tbRNN",
            Variant::UBase => "uBASE",
            Variant::TBase => "tBASE",
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, Variant::UBase | Variant::TBase)
    }

    /// Whether the head has the global bias `b`.
    pub fn has_global_bias(self) -> bool {
        matches!(self, Variant::Rnn | Variant::UeRnn | Variant::TeRnn)
    }

    fn uses_slots(self) -> bool {
        matches!(self, Variant::UeRnn | Variant::UbRnn)
    }

    fn uses_types(self) -> bool {
        matches!(self, Variant::TeRnn | Variant::TbRnn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// What the head knows about the author.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserContext {
    None,
    Slot(usize),
    Type(UserType),
}

impl fmt::Display for UserContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserContext::None => f.write_str("none"),
            UserContext::Slot(s) => write!(f, "slot {s}"),
            UserContext::Type(t) => write!(f, "type {t}"),
        }
    }
}

/// Slot 0 is the shared Unknown slot; training users with more than ten
/// training comments follow in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotMap {
    users: Vec<String>,
    index: HashMap<String, usize>,
}

impl SlotMap {
    pub const UNKNOWN: usize = 0;

    pub fn from_stats(stats: &UserStatsTable) -> Self {
        Self::from_users(stats.known_users().map(|u| u.user.clone()).collect())
            .expect("stats table users are distinct")
    }

    pub fn from_users(users: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if index.insert(u.clone(), i + 1).is_some() {
                return Err(Error::Domain(format!("user {u:?} has two slots")));
            }
        }
        Ok(Self { users, index })
    }

    /// Slots including the Unknown slot.
    pub fn len(&self) -> usize {
        self.users.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn resolve(&self, author: &str) -> usize {
        self.index.get(author).copied().unwrap_or(Self::UNKNOWN)
    }

    /// `None` for the Unknown slot.
    pub fn user(&self, slot: usize) -> Option<&str> {
        slot.checked_sub(1).and_then(|i| self.users.get(i)).map(String::as_str)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }
}

/// Slot for `author`: its own for users with `T > 10`, the shared Unknown
/// slot for everybody else, including users never seen in training.
pub fn resolve_user_slot(author: &str, slots: &SlotMap) -> usize {
    slots.resolve(author)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UserTable {
    None,
    /// One row per slot (ueRNN) or per user type (teRNN), plus the `W_v`
    /// projection.
    Embeddings { table: Matrix, w_v: Vec<f64> },
    /// One scalar per slot (ubRNN) or per user type (tbRNN).
    Biases(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub variant: Variant,
    /// `vocab_size x d`, last row is UNK.
    pub embeddings: Matrix,
    pub gru: GruWeights,
    pub w_p: Vec<f64>,
    pub bias: Option<f64>,
    pub user: UserTable,
}

impl ModelParameters {
    /// Random initialization: tables uniform on `±TABLE_INIT_RANGE`, GRU and
    /// head projections Glorot-uniform, biases zero.
    pub fn init(
        variant: Variant,
        vocab_size: usize,
        n_slots: usize,
        embedding_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !variant.is_neural() {
            return Err(Error::Config(format!("{variant} has no parameters")));
        }
        if vocab_size == 0 || embedding_dim == 0 || hidden_dim == 0 || n_slots == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut embed_rng = rng.fork(1);
        let mut gru_rng = rng.fork(2);
        let mut head_rng = rng.fork(3);
        let mut user_rng = rng.fork(4);

        let embeddings = Matrix::uniform(vocab_size, embedding_dim, TABLE_INIT_RANGE, &mut embed_rng);
        let gru = GruWeights::glorot(embedding_dim, hidden_dim, &mut gru_rng);
        let w_p = glorot_init(hidden_dim, 1, &mut head_rng).data;
        let rows = if variant.uses_slots() { n_slots } else { UserType::ALL.len() };
        let user = match variant {
            Variant::UeRnn | Variant::TeRnn => UserTable::Embeddings {
                table: Matrix::uniform(rows, embedding_dim, TABLE_INIT_RANGE, &mut user_rng),
                w_v: glorot_init(embedding_dim, 1, &mut head_rng).data,
            },
            Variant::UbRnn | Variant::TbRnn => UserTable::Biases(
                (0..rows).map(|_| user_rng.uniform(-TABLE_INIT_RANGE, TABLE_INIT_RANGE)).collect(),
            ),
            _ => UserTable::None,
        };
        let bias = variant.has_global_bias().then_some(0.0);
        Ok(Self { variant, embeddings, gru, w_p, bias, user })
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows
    }

    /// Rows in the user table (slots or types); 0 for RNN.
    pub fn user_rows(&self) -> usize {
        match &self.user {
            UserTable::None => 0,
            UserTable::Embeddings { table, .. } => table.rows,
            UserTable::Biases(b) => b.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gru.check_shapes()?;
        let (d, m) = (self.embedding_dim(), self.hidden_dim());
        if self.gru.input_dim() != d || self.w_p.len() != m {
            return Err(Error::Shape(format!("head or GRU inconsistent with d={d}, m={m}")));
        }
        if self.bias.is_some() != self.variant.has_global_bias() {
            return Err(Error::Shape(format!("{} global bias presence is wrong", self.variant)));
        }
        let table_ok = match (&self.user, self.variant) {
            (UserTable::None, Variant::Rnn) => true,
            (UserTable::Embeddings { table, w_v }, Variant::UeRnn | Variant::TeRnn) => {
                table.cols == d && w_v.len() == d
            }
            (UserTable::Biases(_), Variant::UbRnn | Variant::TbRnn) => true,
            _ => false,
        };
        let rows_ok = !self.variant.uses_types() || self.user_rows() == UserType::ALL.len();
        if !table_ok || !rows_ok {
            return Err(Error::Shape(format!("user table does not fit {}", self.variant)));
        }
        if !self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite())) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(())
    }

    /// A structurally identical copy with every value zeroed.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    pub fn fill_zero(&mut self) {
        for (_, g) in self.groups_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    /// Pre-sigmoid score of the head for a final GRU state.
    pub fn head_logit(&self, h_k: &[f64], ctx: UserContext) -> Result<f64> {
        if h_k.len() != self.w_p.len() {
            return Err(Error::Shape(format!("h_k has {} entries, W_p {}", h_k.len(), self.w_p.len())));
        }
        let row = self.user_row(ctx)?;
        let text = dot(&self.w_p, h_k);
        Ok(match (&self.user, row) {
            (UserTable::None, _) => text + self.bias.unwrap_or(0.0),
            (UserTable::Embeddings { table, w_v }, Some(r)) => {
                text + dot(w_v, table.row(r)) + self.bias.unwrap_or(0.0)
            }
            (UserTable::Biases(b), Some(r)) => text + b[r],
            _ => unreachable!("user_row checked the context"),
        })
    }

    /// Row of the user table addressed by `ctx`, validating that the
    /// context kind matches the variant.
    fn user_row(&self, ctx: UserContext) -> Result<Option<usize>> {
        let mismatch = || Error::VariantMismatch {
            variant: self.variant.to_string(),
            context: ctx.to_string(),
        };
        match (self.variant, ctx) {
            (Variant::Rnn, _) => Ok(None),
            (v, UserContext::Slot(s)) if v.uses_slots() => {
                if s < self.user_rows() {
                    Ok(Some(s))
                } else {
                    Err(Error::IndexOutOfRange { index: s, rows: self.user_rows() })
                }
            }
            (v, UserContext::Type(t)) if v.uses_types() => Ok(Some(t.index())),
            _ => Err(mismatch()),
        }
    }
}

impl ParamGroups for ModelParameters {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        let mut g = vec![("embeddings", self.embeddings.data.as_slice())];
        g.extend(self.gru.groups());
        g.push(("head.w_p", &self.w_p));
        if let Some(b) = &self.bias {
            g.push(("head.b", std::slice::from_ref(b)));
        }
        match &self.user {
            UserTable::None => {}
            UserTable::Embeddings { table, w_v } => {
                g.push(("user.embeddings", &table.data));
                g.push(("user.w_v", w_v));
            }
            UserTable::Biases(b) => g.push(("user.biases", b)),
        }
        g
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut g = vec![("embeddings", self.embeddings.data.as_mut_slice())];
        g.extend(self.gru.groups_mut());
        g.push(("head.w_p", &mut self.w_p));
        if let Some(b) = &mut self.bias {
            g.push(("head.b", std::slice::from_mut(b)));
        }
        match &mut self.user {
            UserTable::None => {}
            UserTable::Embeddings { table, w_v } => {
                g.push(("user.embeddings", &mut table.data));
                g.push(("user.w_v", w_v));
            }
            UserTable::Biases(b) => g.push(("user.biases", b)),
        }
        g
    }
}

/// `sigmoid(head_logit)`.
pub fn head_forward(h_k: &[f64], ctx: UserContext, params: &ModelParameters) -> Result<f64> {
    Ok(sigmoid(params.head_logit(h_k, ctx)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserGradients {
    None,
    Embeddings { rows: SparseRows, w_v: Vec<f64> },
    Biases(SparseRows),
}

/// Gradients of a (summed) loss. Lookup tables are row-sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: SparseRows,
    pub gru: GruWeights,
    pub w_p: Vec<f64>,
    pub bias: Option<f64>,
    pub user: UserGradients,
}

impl Gradients {
    pub fn zeros_for(p: &ModelParameters) -> Self {
        let d = p.embedding_dim();
        Self {
            embeddings: SparseRows::new(d),
            gru: GruWeights::zeros(d, p.hidden_dim()),
            w_p: vec![0.0; p.w_p.len()],
            bias: p.bias.map(|_| 0.0),
            user: match &p.user {
                UserTable::None => UserGradients::None,
                UserTable::Embeddings { w_v, .. } => UserGradients::Embeddings {
                    rows: SparseRows::new(d),
                    w_v: vec![0.0; w_v.len()],
                },
                UserTable::Biases(_) => UserGradients::Biases(SparseRows::new(1)),
            },
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        self.embeddings.merge(&other.embeddings);
        for ((_, a), (_, b)) in self.gru.groups_mut().into_iter().zip(other.gru.groups()) {
            axpy(1.0, b, a);
        }
        axpy(1.0, &other.w_p, &mut self.w_p);
        if let (Some(a), Some(b)) = (&mut self.bias, other.bias) {
            *a += b;
        }
        match (&mut self.user, &other.user) {
            (UserGradients::Embeddings { rows, w_v }, UserGradients::Embeddings { rows: r2, w_v: w2 }) => {
                rows.merge(r2);
                axpy(1.0, w2, w_v);
            }
            (UserGradients::Biases(a), UserGradients::Biases(b)) => a.merge(b),
            _ => {}
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let scale_rows = |s: &mut SparseRows| {
            s.rows.values_mut().flatten().for_each(|v| *v *= factor);
        };
        scale_rows(&mut self.embeddings);
        for (_, g) in self.gru.groups_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
        self.w_p.iter_mut().for_each(|v| *v *= factor);
        if let Some(b) = &mut self.bias {
            *b *= factor;
        }
        match &mut self.user {
            UserGradients::None => {}
            UserGradients::Embeddings { rows, w_v } => {
                scale_rows(rows);
                w_v.iter_mut().for_each(|v| *v *= factor);
            }
            UserGradients::Biases(rows) => scale_rows(rows),
        }
    }

    /// Writes these gradients into `out`, which must have the parameters'
    /// structure; every entry of `out` is overwritten.
    pub fn write_dense(&self, out: &mut ModelParameters) {
        out.fill_zero();
        self.embeddings.scatter_add(&mut out.embeddings);
        out.gru.clone_from(&self.gru);
        out.w_p.copy_from_slice(&self.w_p);
        if let (Some(o), Some(b)) = (&mut out.bias, self.bias) {
            *o = b;
        }
        match (&mut out.user, &self.user) {
            (UserTable::Embeddings { table, w_v }, UserGradients::Embeddings { rows, w_v: g }) => {
                rows.scatter_add(table);
                w_v.copy_from_slice(g);
            }
            (UserTable::Biases(b), UserGradients::Biases(rows)) => {
                for (&i, v) in &rows.rows {
                    b[i] += v[0];
                }
            }
            _ => {}
        }
    }

    pub fn to_dense(&self, like: &ModelParameters) -> ModelParameters {
        let mut out = like.zeros_like();
        self.write_dense(&mut out);
        out
    }
}

/// A trained (or freshly initialized) neural model together with
/// everything needed to score raw comments.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParameters,
    pub vocab: Vocabulary,
    pub stats: UserStatsTable,
    pub slots: SlotMap,
    pub max_tokens: usize,
}

/// Forward pass state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub sequence: SequenceCache,
    pub context: UserContext,
    pub probability: f64,
}

impl Model {
    pub fn new(
        params: ModelParameters,
        vocab: Vocabulary,
        stats: UserStatsTable,
        max_tokens: usize,
    ) -> Result<Self> {
        let slots = SlotMap::from_stats(&stats);
        params.validate()?;
        if params.vocab_size() != vocab.size() {
            return Err(Error::Shape(format!(
                "embedding table has {} rows, vocabulary {}",
                params.vocab_size(),
                vocab.size()
            )));
        }
        if params.variant.uses_slots() && params.user_rows() != slots.len() {
            return Err(Error::Shape(format!(
                "user table has {} rows, slot map {}",
                params.user_rows(),
                slots.len()
            )));
        }
        Ok(Self { params, vocab, stats, slots, max_tokens })
    }

    pub fn variant(&self) -> Variant {
        self.params.variant
    }

    pub fn user_context(&self, author: &str) -> UserContext {
        let v = self.params.variant;
        if v.uses_slots() {
            UserContext::Slot(self.slots.resolve(author))
        } else if v.uses_types() {
            UserContext::Type(self.stats.user_type(author))
        } else {
            UserContext::None
        }
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens, self.max_tokens)
    }

    pub fn forward_cached(&self, comment: &Comment) -> Result<ForwardCache> {
        let indices = self.encode(&comment.tokens);
        let (h_k, sequence) = gru_sequence_forward(&indices, &self.params.embeddings, &self.params.gru)?;
        let context = self.user_context(&comment.author);
        let probability = head_forward(&h_k, context, &self.params)?;
        Ok(ForwardCache { sequence, context, probability })
    }

    /// Reject probability for a comment.
    pub fn forward(&self, comment: &Comment) -> Result<f64> {
        Ok(self.forward_cached(comment)?.probability)
    }

    pub fn score_text(&self, author: &str, text: &str) -> Result<f64> {
        let comment = Comment {
            id: String::new(),
            author: author.to_string(),
            tokens: crate::corpus::tokenize(text),
            label: crate::corpus::Label::Accept,
            split: crate::corpus::Split::Test,
        };
        self.forward(&comment)
    }

    /// Cross-entropy against the comment's gold label; returns
    /// `(loss, probability)` and adds the gradients into `grads`.
    pub fn backward_accumulate(&self, comment: &Comment, grads: &mut Gradients) -> Result<(f64, f64)> {
        let cache = self.forward_cached(comment)?;
        let y = comment.label.target();
        let (loss, dz) = bce_loss_and_grad(cache.probability, y);
        let p = &self.params;
        let h_k = cache.sequence.final_state();

        axpy(dz, h_k, &mut grads.w_p);
        if let Some(b) = &mut grads.bias {
            *b += dz;
        }
        match (&p.user, &mut grads.user, p.user_row(cache.context)?) {
            (UserTable::Embeddings { table, w_v }, UserGradients::Embeddings { rows, w_v: g_w_v }, Some(r)) => {
                axpy(dz, table.row(r), g_w_v);
                axpy(dz, w_v, rows.row_mut(r));
            }
            (UserTable::Biases(_), UserGradients::Biases(rows), Some(r)) => {
                rows.row_mut(r)[0] += dz;
            }
            (UserTable::None, UserGradients::None, _) => {}
            _ => return Err(Error::Shape("gradient buffer does not match the model".into())),
        }

        let dh_k: Vec<f64> = p.w_p.iter().map(|w| dz * w).collect();
        gru_backward_accumulate(&cache.sequence, &dh_k, &p.gru, &mut grads.gru, &mut grads.embeddings)?;
        Ok((loss, cache.probability))
    }

    /// Gradients of the cross-entropy of one comment.
    pub fn backward(&self, comment: &Comment) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_for(&self.params);
        let (loss, _) = self.backward_accumulate(comment, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, comment: &Comment) -> Result<f64> {
        let p = self.forward(comment)?;
        Ok(bce_loss_and_grad(p, comment.label.target()).0)
    }
}

/// Author's training rejection rate if they have more than ten training
/// comments, 0.5 otherwise.
pub fn ubase_score(author: &str, stats: &UserStatsTable) -> f64 {
    match stats.get(author) {
        Some(u) if u.is_known() => u.rejection_rate().expect("known users have comments"),
        _ => 0.5,
    }
}

pub fn tbase_score(utype: UserType) -> f64 {
    match utype {
        UserType::Red => 1.0,
        UserType::Yellow | UserType::Unknown => 0.5,
        UserType::Green => 0.0,
    }
}

/// Anything that assigns a reject score to a comment.
pub trait Scorer: Sync {
    fn variant(&self) -> Variant;
    fn score(&self, comment: &Comment) -> Result<f64>;
}

impl<T: Scorer + ?Sized> Scorer for &T {
    fn variant(&self) -> Variant {
        (**self).variant()
    }

    fn score(&self, comment: &Comment) -> Result<f64> {
        (**self).score(comment)
    }
}

impl Scorer for Model {
    fn variant(&self) -> Variant {
        self.params.variant
    }

    fn score(&self, comment: &Comment) -> Result<f64> {
        self.forward(comment)
    }
}

/// uBASE or tBASE over a fixed stats table.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub variant: Variant,
    pub stats: UserStatsTable,
}

impl Baseline {
    pub fn new(variant: Variant, stats: UserStatsTable) -> Result<Self> {
        if variant.is_neural() {
            return Err(Error::Config(format!("{variant} is not a baseline")));
        }
        Ok(Self { variant, stats })
    }

    pub fn score_author(&self, author: &str) -> f64 {
        match self.variant {
            Variant::UBase => ubase_score(author, &self.stats),
            _ => tbase_score(self.stats.user_type(author)),
        }
    }
}

impl Scorer for Baseline {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn score(&self, comment: &Comment) -> Result<f64> {
        Ok(self.score_author(&comment.author))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{UserStats, Label, Split};

    fn stats() -> UserStatsTable {
        let mk = |user: &str, t: usize, rej: usize, utype| UserStats {
            user: user.into(),
            train_comments: t,
            train_rejected: rej,
            utype,
        };
        UserStatsTable::from_users(vec![
            mk("red", 20, 18, UserType::Red),
            mk("few", 10, 10, UserType::Unknown),
            mk("green", 11, 0, UserType::Green),
            mk("yellow", 20, 9, UserType::Yellow),
        ])
        .unwrap()
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("aRNN".parse::<Variant>().is_err());
    }

    #[test]
    fn slot_resolution() {
        let slots = SlotMap::from_stats(&stats());
        assert_eq!(slots.len(), 4);
        assert_eq!(resolve_user_slot("red", &slots), 1);
        assert_eq!(resolve_user_slot("green", &slots), 2);
        assert_eq!(resolve_user_slot("few", &slots), SlotMap::UNKNOWN);
        assert_eq!(resolve_user_slot("stranger", &slots), SlotMap::UNKNOWN);
        assert_eq!(slots.user(0), None);
        assert_eq!(slots.user(3), Some("yellow"));
    }

    #[test]
    fn baselines_closed_form() {
        let s = stats();
        assert_eq!(ubase_score("red", &s), 0.9);
        assert_eq!(ubase_score("few", &s), 0.5);
        assert_eq!(ubase_score("green", &s), 0.0);
        assert_eq!(ubase_score("stranger", &s), 0.5);
        assert_eq!(tbase_score(UserType::Red), 1.0);
        assert_eq!(tbase_score(UserType::Green), 0.0);
        assert_eq!(tbase_score(UserType::Yellow), 0.5);
        assert_eq!(tbase_score(UserType::Unknown), 0.5);
        assert!(Baseline::new(Variant::Rnn, s).is_err());
    }

    #[test]
    fn ubase_exact_values_at_t20() {
        let s = UserStatsTable::from_users(vec![UserStats {
            user: "a".into(),
            train_comments: 20,
            train_rejected: 9,
            utype: UserType::Yellow,
        }])
        .unwrap();
        assert_eq!(ubase_score("a", &s), 0.45);
    }

    fn params(variant: Variant, seed: u64) -> ModelParameters {
        ModelParameters::init(variant, 7, 4, 3, 2, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn shapes_per_variant() {
        for v in Variant::NEURAL {
            let p = params(v, 1);
            p.validate().unwrap();
            assert_eq!(p.bias.is_some(), v.has_global_bias());
            let rows = match v {
                Variant::Rnn => 0,
                Variant::UeRnn | Variant::UbRnn => 4,
                _ => 4,
            };
            assert_eq!(p.user_rows(), rows);
        }
        assert!(ModelParameters::init(Variant::UBase, 7, 4, 3, 2, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn head_examples() {
        let mut p = params(Variant::Rnn, 2);
        p.w_p = vec![0.0, 0.0];
        p.bias = Some(0.0);
        assert_eq!(head_forward(&[0.3, -0.2], UserContext::None, &p).unwrap(), 0.5);

        let mut p = params(Variant::TbRnn, 2);
        p.w_p = vec![0.0, 0.0];
        p.user = UserTable::Biases(vec![1.151, 0.198, -0.471, 0.256]);
        let red = head_forward(&[0.1, 0.1], UserContext::Type(UserType::Red), &p).unwrap();
        assert!((red - 0.759_693_5).abs() < 1e-6);
        let green = head_forward(&[0.1, 0.1], UserContext::Type(UserType::Green), &p).unwrap();
        assert!(red > green);
    }

    #[test]
    fn head_context_mismatch() {
        let p = params(Variant::UeRnn, 3);
        assert!(matches!(
            head_forward(&[0.0, 0.0], UserContext::Type(UserType::Red), &p),
            Err(Error::VariantMismatch { .. })
        ));
        assert!(matches!(
            head_forward(&[0.0, 0.0], UserContext::Slot(9), &p),
            Err(Error::IndexOutOfRange { .. })
        ));
        let p = params(Variant::TbRnn, 3);
        assert!(head_forward(&[0.0, 0.0], UserContext::Slot(0), &p).is_err());
        assert!(head_forward(&[0.0], UserContext::Type(UserType::Red), &p).is_err());
    }

    #[test]
    fn untouched_user_rows_get_no_gradient() {
        let s = stats();
        let vocab = Vocabulary::from_tokens(vec!["a".into(), "b".into()]).unwrap();
        let p = ModelParameters::init(Variant::UeRnn, vocab.size(), 4, 3, 2, &mut Rng::new(5)).unwrap();
        let model = Model::new(p, vocab, s, 300).unwrap();
        let c = Comment {
            id: "1".into(),
            author: "green".into(),
            tokens: vec!["a".into(), "zz".into()],
            label: Label::Reject,
            split: Split::Train,
        };
        let (_, g) = model.backward(&c).unwrap();
        let UserGradients::Embeddings { rows, .. } = &g.user else { panic!() };
        assert_eq!(rows.rows.keys().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(g.embeddings.rows.keys().copied().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn confident_correct_prediction_has_small_gradient() {
        let s = stats();
        let vocab = Vocabulary::from_tokens(vec!["a".into()]).unwrap();
        let mut p = ModelParameters::init(Variant::TbRnn, vocab.size(), 1, 3, 2, &mut Rng::new(5)).unwrap();
        p.user = UserTable::Biases(vec![40.0, 0.0, 0.0, 0.0]);
        let model = Model::new(p, vocab, s, 300).unwrap();
        let c = Comment {
            id: "1".into(),
            author: "red".into(),
            tokens: vec!["a".into()],
            label: Label::Reject,
            split: Split::Train,
        };
        let (loss, g) = model.backward(&c).unwrap();
        // Bounded by the 1e-12 probability clamp.
        assert!(loss < 1.1e-12);
        let dense = g.to_dense(&model.params);
        assert!(dense.groups().iter().all(|(_, v)| v.iter().all(|x| x.abs() < 1e-15)));
    }

    #[test]
    fn model_rejects_inconsistent_parts() {
        let vocab = Vocabulary::from_tokens(vec!["a".into()]).unwrap();
        let p = ModelParameters::init(Variant::Rnn, 5, 1, 3, 2, &mut Rng::new(5)).unwrap();
        assert!(Model::new(p, vocab.clone(), stats(), 300).is_err());
        let p = ModelParameters::init(Variant::UbRnn, 2, 9, 3, 2, &mut Rng::new(5)).unwrap();
        assert!(Model::new(p, vocab, stats(), 300).is_err());
    }
}
