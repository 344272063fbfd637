//! Synthetic moderated corpora with a planted text signal and a planted
//! per-user signal.
//!
//! Generation, with every draw taken from one `Rng::new(seed)` stream:
//!
//! 1. For each user: a propensity `p_u = sigmoid(logit(base) + spread * z)`
//!    with `z ~ N(0, 1)`, then an activity weight `rank^-activity_exponent`
//!    where ranks are a random permutation of `1..=n_users`.
//! 2. For each comment (train, then dev, then test): an author drawn by
//!    activity, a length uniform in `min_tokens..=max_tokens` of neutral
//!    words, and an abusive flag `a ~ Bernoulli(min(1, abusive_fraction *
//!    (0.5 + p_u)))`. Abusive comments get one or two lexicon words spliced
//!    in at random positions.
//! 3. The label is reject with probability `0.5 * a + 0.5 * p_u`.

use serde::{Deserialize, Serialize};

use super::{Comment, Corpus, Label, Split};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::rng::Rng;

/// Weight of the text signal in the reject probability.
pub const TEXT_SIGNAL_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Neutral word types.
    pub vocab_size: usize,
    pub abusive_fraction: f64,
    pub user_propensity_spread: f64,
    pub seed: u64,
    pub abusive_lexicon_size: usize,
    pub base_propensity: f64,
    pub activity_exponent: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_train: 5000,
            n_dev: 1000,
            n_test: 1000,
            vocab_size: 200,
            abusive_fraction: 0.3,
            user_propensity_spread: 2.0,
            seed: 20170907,
            abusive_lexicon_size: 12,
            base_propensity: 0.4,
            activity_exponent: 1.0,
            min_tokens: 4,
            max_tokens: 16,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_users", self.n_users),
            ("n_train", self.n_train),
            ("n_dev", self.n_dev),
            ("n_test", self.n_test),
            ("vocab_size", self.vocab_size),
            ("abusive_lexicon_size", self.abusive_lexicon_size),
            ("min_tokens", self.min_tokens),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.max_tokens < self.min_tokens {
            return Err(Error::Config("max_tokens < min_tokens".into()));
        }
        if !(self.abusive_fraction > 0.0 && self.abusive_fraction < 1.0) {
            return Err(Error::Config("abusive_fraction must lie in (0, 1)".into()));
        }
        if !(self.base_propensity > 0.0 && self.base_propensity < 1.0) {
            return Err(Error::Config("base_propensity must lie in (0, 1)".into()));
        }
        if !(self.user_propensity_spread >= 0.0 && self.user_propensity_spread.is_finite()) {
            return Err(Error::Config("user_propensity_spread must be finite and >= 0".into()));
        }
        if !(self.activity_exponent >= 0.0 && self.activity_exponent.is_finite()) {
            return Err(Error::Config("activity_exponent must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn user_id(u: usize) -> String {
        format!("u{u:04}")
    }

    pub fn neutral_word(i: usize) -> String {
        format!("w{i}")
    }

    pub fn abusive_word(i: usize) -> String {
        format!("x{i}")
    }
}

/// The latent per-user propensities the generator plants, in user order.
pub fn planted_propensities(spec: &SyntheticSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    Ok(draw_users(spec, &mut rng).0)
}

fn draw_users(spec: &SyntheticSpec, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let base_logit = (spec.base_propensity / (1.0 - spec.base_propensity)).ln();
    let propensities: Vec<f64> = (0..spec.n_users)
        .map(|_| sigmoid(base_logit + spec.user_propensity_spread * rng.normal()))
        .collect();
    let mut ranks: Vec<usize> = (1..=spec.n_users).collect();
    rng.shuffle(&mut ranks);
    let weights = ranks.iter().map(|&r| (r as f64).powf(-spec.activity_exponent)).collect();
    (propensities, weights)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let (propensities, weights) = draw_users(spec, &mut rng);

    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }

    let splits = [(Split::Train, spec.n_train), (Split::Dev, spec.n_dev), (Split::Test, spec.n_test)];
    let total: usize = splits.iter().map(|(_, n)| n).sum();
    let mut comments = Vec::with_capacity(total);
    for (split, n) in splits {
        for _ in 0..n {
            let target = rng.next_f64() * acc;
            let author = cumulative.partition_point(|&c| c <= target).min(spec.n_users - 1);
            let p_u = propensities[author];

            let len = spec.min_tokens + rng.below(spec.max_tokens - spec.min_tokens + 1);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| SyntheticSpec::neutral_word(rng.below(spec.vocab_size)))
                .collect();

            let p_abusive = (spec.abusive_fraction * (0.5 + p_u)).min(1.0);
            let abusive = rng.bernoulli(p_abusive);
            if abusive {
                let k = 1 + rng.below(2);
                for _ in 0..k {
                    let word = SyntheticSpec::abusive_word(rng.below(spec.abusive_lexicon_size));
                    let pos = rng.below(tokens.len() + 1);
                    tokens.insert(pos, word);
                }
            }

            let a = if abusive { 1.0 } else { 0.0 };
            let p_reject = TEXT_SIGNAL_WEIGHT * a + (1.0 - TEXT_SIGNAL_WEIGHT) * p_u;
            let label = if rng.bernoulli(p_reject) { Label::Reject } else { Label::Accept };

            comments.push(Comment {
                id: format!("c{:07}", comments.len()),
                author: SyntheticSpec::user_id(author),
                tokens,
                label,
                split,
            });
        }
    }
    Corpus::new(comments)
}
