use proptest::prelude::*;
use usermod::corpus::{generate_synthetic, Comment, SyntheticSpec};
use usermod::eval::{evaluate_auc, score_split};
use usermod::models::{ubase_score, Baseline};
use usermod::nn::sigmoid;
use usermod::{roc_auc, Result, Scorer, Split, UserStatsTable, Variant};

fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (s_pos, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (s_neg, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            credit += if s_pos > s_neg {
                1.0
            } else if s_pos == s_neg {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / pairs
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..300, 1u32..40).prop_flat_map(|(n, levels)| {
        (
            prop::collection::vec((0..levels).prop_map(move |k| k as f64 / levels as f64 - 0.5), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn rank_auc_equals_pairwise((scores, labels) in scored_labels()) {
        let fast = roc_auc(&scores, &labels).unwrap();
        prop_assert!((fast - pairwise(&scores, &labels)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn increasing_transforms_leave_auc_unchanged((scores, labels) in scored_labels()) {
        let base = roc_auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let scaled: Vec<f64> = scores.iter().map(|&s| 1000.0 * s).collect();
        prop_assert!((roc_auc(&squashed, &labels).unwrap() - base).abs() <= 1e-12);
        prop_assert!((roc_auc(&scaled, &labels).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn flipping_labels_complements_tie_free_auc(
        raw in prop::collection::hash_set(-10_000i32..10_000, 2..200),
        seed in any::<u64>(),
    ) {
        let scores: Vec<f64> = raw.into_iter().map(f64::from).collect();
        let mut rng = usermod::Rng::new(seed);
        let mut labels: Vec<bool> = (0..scores.len()).map(|_| rng.bernoulli(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }
}

struct Constant;

impl Scorer for Constant {
    fn variant(&self) -> Variant {
        Variant::Rnn
    }
    fn score(&self, _: &Comment) -> Result<f64> {
        Ok(0.42)
    }
}

struct UbaseClone(UserStatsTable);

impl Scorer for UbaseClone {
    fn variant(&self) -> Variant {
        Variant::Rnn
    }
    fn score(&self, c: &Comment) -> Result<f64> {
        Ok(ubase_score(&c.author, &self.0))
    }
}

#[test]
fn scorers_on_the_default_synthetic_test_split() {
    let corpus = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let stats = usermod::corpus::compute_user_stats(&corpus);
    assert_eq!(evaluate_auc(&Constant, &corpus, Split::Test).unwrap(), 0.5);

    let ubase = Baseline::new(Variant::UBase, stats.clone()).unwrap();
    let direct = evaluate_auc(&ubase, &corpus, Split::Test).unwrap();
    assert_eq!(evaluate_auc(&UbaseClone(stats), &corpus, Split::Test).unwrap(), direct);
    assert!(direct > 0.5, "uBASE test AUC {direct}");

    let (scores, labels) = score_split(&ubase, &corpus, Split::Test).unwrap();
    assert_eq!(scores.len(), corpus.split_len(Split::Test));
    assert_eq!(labels.len(), scores.len());
}
