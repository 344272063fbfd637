//! Finite-difference checks of every variant's full backward pass on small
//! random instances.

use serde::Serialize;

use crate::corpus::{Comment, Label, Split, UserStats, UserStatsTable, UserType, Vocabulary};
use crate::error::Result;
use crate::models::{Gradients, Model, ModelParameters, Variant};
use crate::nn::{finite_difference_check, GroupCheck, ParamGroups};
use crate::rng::Rng;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckSetup {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub max_tokens: usize,
    pub vocab_size: usize,
    pub n_comments: usize,
    /// Half-width of the uniform re-draw applied to every parameter, so that
    /// gradients are well away from zero.
    pub param_scale: f64,
    pub seed: u64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        Self {
            embedding_dim: 8,
            hidden_dim: 6,
            max_tokens: 6,
            vocab_size: 12,
            n_comments: 6,
            param_scale: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantCheck {
    pub variant: Variant,
    pub groups: Vec<GroupCheck>,
}

impl VariantCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < GRADCHECK_TOLERANCE
    }
}

fn stats() -> UserStatsTable {
    let mk = |user: &str, t: usize, rejected: usize, utype| UserStats {
        user: user.into(),
        train_comments: t,
        train_rejected: rejected,
        utype,
    };
    UserStatsTable::from_users(vec![
        mk("red", 20, 16, UserType::Red),
        mk("yellow", 20, 10, UserType::Yellow),
        mk("green", 20, 2, UserType::Green),
        mk("rare", 4, 1, UserType::Unknown),
    ])
    .expect("distinct users")
}

/// A model of `variant` with every parameter drawn uniformly from
/// `[-param_scale, param_scale]`, and a batch of comments over all user
/// types with lengths in `1..=max_tokens` (some tokens out of vocabulary).
pub fn random_instance(variant: Variant, setup: &GradcheckSetup) -> Result<(Model, Vec<Comment>)> {
    let mut rng = Rng::new(setup.seed);
    let vocab = Vocabulary::from_tokens((0..setup.vocab_size).map(|i| format!("t{i}")).collect())?;
    let stats = stats();
    let n_slots = stats.known_users().count() + 1;
    let mut params = ModelParameters::init(
        variant,
        vocab.size(),
        n_slots,
        setup.embedding_dim,
        setup.hidden_dim,
        &mut rng.fork(1),
    )?;
    let mut draw = rng.fork(2);
    for (_, group) in params.groups_mut() {
        group.iter_mut().for_each(|x| *x = draw.uniform(-setup.param_scale, setup.param_scale));
    }
    let model = Model::new(params, vocab, stats, setup.max_tokens)?;

    let authors = ["red", "yellow", "green", "rare", "stranger"];
    let comments = (0..setup.n_comments)
        .map(|i| {
            let len = 1 + rng.below(setup.max_tokens);
            let tokens = (0..len).map(|_| format!("t{}", rng.below(setup.vocab_size + 2))).collect();
            Comment {
                id: format!("g{i}"),
                author: authors[i % authors.len()].to_string(),
                tokens,
                label: if rng.bernoulli(0.5) { Label::Reject } else { Label::Accept },
                split: Split::Train,
            }
        })
        .collect();
    Ok((model, comments))
}

fn mean_loss(model: &Model, comments: &[Comment]) -> Result<f64> {
    let mut total = 0.0;
    for c in comments {
        total += model.loss(c)?;
    }
    Ok(total / comments.len() as f64)
}

/// Central-difference check of the mean batch loss for one variant.
pub fn check_variant(variant: Variant, setup: &GradcheckSetup) -> Result<VariantCheck> {
    let (mut model, comments) = random_instance(variant, setup)?;
    let mut grads = Gradients::zeros_for(&model.params);
    for c in &comments {
        model.backward_accumulate(c, &mut grads)?;
    }
    grads.scale(1.0 / comments.len() as f64);
    let analytic = grads.to_dense(&model.params);

    let mut params = model.params.clone();
    let groups = finite_difference_check(&mut params, &analytic, GRADCHECK_EPS, |p| {
        model.params.clone_from(p);
        mean_loss(&model, &comments).unwrap_or(f64::NAN)
    })?;
    Ok(VariantCheck { variant, groups })
}

pub fn check_all(setup: &GradcheckSetup) -> Result<Vec<VariantCheck>> {
    Variant::NEURAL.iter().map(|&v| check_variant(v, setup)).collect()
}
