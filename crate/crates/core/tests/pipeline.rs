use std::fs;

use usermod::corpus::{compute_user_stats, generate_synthetic, ingest_corpus, SyntheticSpec};
use usermod::models::{Model, ModelArtifact, UserTable};
use usermod::trainer::train_model;
use usermod::{Error, Label, Split, TrainConfig, UserType, Variant};

#[test]
fn ingest_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"id":"1","author":"ann","text":"Hello, World","label":"accept","split":"train"}"#, "\n",
            r#"{"id":"2","author":"bob","text":"","label":"reject","split":"dev"}"#, "\n",
            "\n",
            r#"{"id":"3","author":"ann","text":"again","label":"reject","split":"test"}"#, "\n",
        ),
    )
    .unwrap();
    let corpus = ingest_corpus(&path).unwrap();
    assert_eq!(corpus.len(), 3);
    for split in Split::ALL {
        assert_eq!(corpus.split_len(split), 1);
    }
    assert_eq!(corpus.comments()[0].tokens, vec!["hello", ",", "world"]);
    assert_eq!(corpus.comments()[1].label, Label::Reject);

    fs::write(&path, r#"{"id":"1","author":"a","text":"x","label":"maybe","split":"train"}"#).unwrap();
    let err = ingest_corpus(&path).unwrap_err();
    assert!(matches!(err, Error::UnknownLabel { line: 1, .. }));
    assert!(err.to_string().contains("unknown label"));
}

#[test]
fn synthetic_corpus_survives_a_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { n_users: 15, n_train: 400, n_dev: 50, n_test: 50, ..Default::default() };
    let corpus = generate_synthetic(&spec).unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    corpus.save(&a).unwrap();
    generate_synthetic(&spec).unwrap().save(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let back = ingest_corpus(&a).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(compute_user_stats(&back), compute_user_stats(&corpus));
}

#[test]
fn trained_model_roundtrips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic(&SyntheticSpec {
        n_users: 20,
        n_train: 500,
        n_dev: 60,
        n_test: 60,
        ..Default::default()
    })
    .unwrap();
    let config = TrainConfig { embedding_dim: 6, hidden_dim: 5, max_epochs: 2, holdout_fraction: 0.05, ..Default::default() };
    for variant in Variant::NEURAL {
        let (model, _) = train_model(&corpus, variant, &config, 11).unwrap();
        let path = dir.path().join(format!("{variant}.json"));
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded, model);
        for c in corpus.split(Split::Test) {
            assert_eq!(loaded.forward(c).unwrap().to_bits(), model.forward(c).unwrap().to_bits());
        }
        assert_eq!(ModelArtifact::load(&path).unwrap().to_bytes().unwrap(), fs::read(&path).unwrap());
    }
}

#[test]
fn red_author_outscores_green_author_under_ordered_type_biases() {
    let corpus = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let config = TrainConfig { embedding_dim: 4, hidden_dim: 4, max_epochs: 1, ..Default::default() };
    let (mut model, _) = train_model(&corpus, Variant::TbRnn, &config, 3).unwrap();
    let mut b = vec![0.0; 4];
    b[UserType::Red.index()] = 1.151;
    b[UserType::Yellow.index()] = 0.2;
    b[UserType::Green.index()] = -1.0;
    model.params.user = UserTable::Biases(b);
    let red = model.stats.known_users().find(|u| u.utype == UserType::Red).unwrap().user.clone();
    let green = model.stats.known_users().find(|u| u.utype == UserType::Green).unwrap().user.clone();
    for text in ["w1 w2 w3", "x0 w5", ""] {
        assert!(model.score_text(&red, text).unwrap() > model.score_text(&green, text).unwrap());
    }
}
