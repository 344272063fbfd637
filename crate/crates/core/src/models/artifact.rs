//! Self-describing model files.
//!
//! One JSON document holding the variant tag, dimensions, vocabulary, the
//! training user statistics, the user-slot order and every parameter group
//! as a named, shape-tagged array. Serialization is deterministic: the same
//! model always produces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelParameters, SlotMap, Variant};
use crate::corpus::{UserStatsTable, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::ParamGroups;
use crate::rng::Rng;

pub const ARTIFACT_FORMAT: &str = "usermod-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub variant: Variant,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub max_tokens: usize,
    pub vocabulary: Vocabulary,
    pub user_stats: UserStatsTable,
    pub user_slots: Vec<String>,
    pub arrays: Vec<NamedArray>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn group_shape(name: &str, p: &ModelParameters) -> Vec<usize> {
    let (d, m) = (p.embedding_dim(), p.hidden_dim());
    match name {
        "embeddings" => vec![p.vocab_size(), d],
        "gru.w_z" | "gru.w_r" | "gru.w_h" => vec![m, d],
        "gru.u_z" | "gru.u_r" | "gru.u_h" => vec![m, m],
        "gru.b_z" | "gru.b_r" | "gru.b_h" | "head.w_p" => vec![m],
        "head.b" => vec![],
        "user.embeddings" => vec![p.user_rows(), d],
        "user.w_v" => vec![d],
        "user.biases" => vec![p.user_rows()],
        other => unreachable!("unknown parameter group {other}"),
    }
}

impl ModelArtifact {
    pub fn from_model(model: &Model) -> Self {
        let p = &model.params;
        let arrays = p
            .groups()
            .into_iter()
            .map(|(name, data)| NamedArray {
                name: name.to_string(),
                shape: group_shape(name, p),
                data: data.to_vec(),
            })
            .collect();
        Self {
            format: ARTIFACT_FORMAT.to_string(),
            variant: p.variant,
            embedding_dim: p.embedding_dim(),
            hidden_dim: p.hidden_dim(),
            max_tokens: model.max_tokens,
            vocabulary: model.vocab.clone(),
            user_stats: model.stats.clone(),
            user_slots: model.slots.users().to_vec(),
            arrays,
            metadata: BTreeMap::new(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != ARTIFACT_FORMAT {
            return Err(Error::Artifact(format!("unsupported format {:?}", self.format)));
        }
        let slots = SlotMap::from_stats(&self.user_stats);
        if slots.users() != self.user_slots.as_slice() {
            return Err(Error::Artifact("user slot order disagrees with the stored user stats".into()));
        }
        // Any initialization gives the right structure; every value is
        // overwritten below.
        let mut params = ModelParameters::init(
            self.variant,
            self.vocabulary.size(),
            slots.len(),
            self.embedding_dim,
            self.hidden_dim,
            &mut Rng::new(0),
        )?;
        let mut by_name: BTreeMap<&str, &NamedArray> =
            self.arrays.iter().map(|a| (a.name.as_str(), a)).collect();
        if by_name.len() != self.arrays.len() {
            return Err(Error::Artifact("duplicate array names".into()));
        }
        let shapes: Vec<Vec<usize>> =
            params.groups().iter().map(|(name, _)| group_shape(name, &params)).collect();
        for ((name, dst), shape) in params.groups_mut().into_iter().zip(shapes) {
            let src = by_name
                .remove(name)
                .ok_or_else(|| Error::Artifact(format!("missing array {name}")))?;
            if src.shape != shape || src.data.len() != dst.len() {
                return Err(Error::Artifact(format!(
                    "array {name} has shape {:?}, expected {shape:?}",
                    src.shape
                )));
            }
            dst.copy_from_slice(&src.data);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Artifact(format!("unexpected array {extra}")));
        }
        Model::new(params, self.vocabulary, self.user_stats, self.max_tokens)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

impl Model {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        ModelArtifact::from_model(self).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        ModelArtifact::load(path)?.into_model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_user_stats, generate_synthetic, Split, SyntheticSpec};

    fn model(variant: Variant) -> Model {
        let corpus = generate_synthetic(&SyntheticSpec {
            n_users: 8,
            n_train: 200,
            n_dev: 10,
            n_test: 10,
            ..Default::default()
        })
        .unwrap();
        let stats = compute_user_stats(&corpus);
        let vocab = Vocabulary::build(corpus.split(Split::Train));
        let slots = SlotMap::from_stats(&stats);
        let p = ModelParameters::init(variant, vocab.size(), slots.len(), 4, 3, &mut Rng::new(3)).unwrap();
        Model::new(p, vocab, stats, 50).unwrap()
    }

    #[test]
    fn roundtrip_every_variant() {
        for v in Variant::NEURAL {
            let m = model(v);
            let bytes = ModelArtifact::from_model(&m).to_bytes().unwrap();
            let back: ModelArtifact = serde_json::from_slice(&bytes).unwrap();
            let restored = back.into_model().unwrap();
            assert_eq!(restored, m, "{v}");
            assert_eq!(ModelArtifact::from_model(&restored).to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_tampered_artifacts() {
        let m = model(Variant::UeRnn);
        let mut a = ModelArtifact::from_model(&m);
        a.arrays.pop();
        assert!(matches!(a.into_model(), Err(Error::Artifact(_))));

        let mut a = ModelArtifact::from_model(&m);
        a.arrays[0].shape = vec![1, 1];
        assert!(a.into_model().is_err());

        let mut a = ModelArtifact::from_model(&m);
        a.format = "other".into();
        assert!(a.into_model().is_err());

        let mut a = ModelArtifact::from_model(&m);
        a.user_slots.reverse();
        a.user_slots.push("ghost".into());
        assert!(a.into_model().is_err());
    }
}
