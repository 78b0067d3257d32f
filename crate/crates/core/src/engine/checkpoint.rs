use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{score_ids, AcquisitionScore};
use crate::datagen::Dataset;
use crate::engine::train::MalModels;
use crate::error::{Error, Result};

/// Trained MAL networks plus the labeled ids they were trained with. Ids
/// index the training rows of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub models: MalModels,
    pub labeled_ids: Vec<usize>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Scores every training row of `dataset` not in `labeled_ids`.
    pub fn score_unlabeled(&self, dataset: &Dataset) -> Result<Vec<AcquisitionScore>> {
        let train = dataset.train();
        let enc = &self.models.encoder;
        if train.input_dim() != enc.input_dim() {
            return Err(Error::Shape {
                op: "score_dump",
                left: train.features.dim(),
                right: (enc.input_dim(), enc.latent_dim()),
            });
        }
        if let Some(&bad) = self.labeled_ids.iter().find(|&&i| i >= train.len()) {
            return Err(Error::Contract(format!(
                "checkpoint labels id {bad} but the dataset has {} training rows",
                train.len()
            )));
        }
        let labeled: std::collections::BTreeSet<usize> = self.labeled_ids.iter().copied().collect();
        let ids: Vec<usize> = (0..train.len()).filter(|i| !labeled.contains(i)).collect();
        let m = &self.models;
        score_ids(
            &m.encoder,
            &m.classifier,
            &m.discriminator,
            &train.features,
            &ids,
        )
    }
}
