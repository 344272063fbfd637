//! GRU comment-moderation classifiers conditioned on the comment author.
//!
//! Five neural variants share one GRU text encoder and differ only in how
//! the author enters the scoring head: not at all (`RNN`), as a learned
//! embedding per user (`ueRNN`) or per user type (`teRNN`), or as a learned
//! bias per user (`ubRNN`) or per user type (`tbRNN`). Two count-based
//! baselines (`uBASE`, `tBASE`) score from the author's training history
//! alone.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod gru;
pub mod models;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use corpus::{Comment, Corpus, Label, Split, UserStatsTable, UserType, Vocabulary};
pub use error::{Error, Result};
pub use eval::{evaluate_model, mean_and_stderr, roc_auc, EvalReport};
pub use models::{Baseline, Model, ModelParameters, Scorer, Variant};
pub use rng::Rng;
pub use trainer::{run_experiment, train_model, train_repetitions, TrainConfig, TrainHistory};
