//! Frame-level pseudo-labeler.
//!
//! A small embedding network is trained on limited labeled crops plus
//! abundant unlabeled ones with a combined objective: a semantic-weighted
//! contrastive loss over augmented view pairs and a cross-entropy term on
//! the labeled subset, mixed by `lambda`. The trained model assigns each
//! crop a class-probability distribution (a pseudo label), of which the
//! top-k entries feed the captioner.

mod augment;
mod loss;
mod network;
mod train;

pub use augment::{augment, hflip, Augmentation};
pub use loss::{cross_entropy_logits, l2_normalize, ntxent_loss, softmax, NtXentGrads};
pub use network::{
    EmbeddingNetwork, ForwardTrace, Gradients, EMBED_DIM, HIDDEN_DIM, INPUT_DIM,
};
pub use train::{
    batch_loss_and_grads, prepare_batch, train, train_accuracy, train_epochs, PreparedSample,
    TrainOutcome,
};

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Seed;

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    /// Temperature of the contrastive softmax.
    pub tau: f64,
    /// Mix between the contrastive loss (`lambda`) and cross-entropy
    /// (`1 - lambda`).
    pub lambda: f64,
    /// Weight of denominator terms whose label equals the anchor's.
    /// 0 removes same-class negatives entirely; 1 recovers the unweighted
    /// formula.
    pub same_class_negative_weight: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub augmentation: Augmentation,
    /// Include the positive pair in the contrastive denominator
    /// (conventional NT-Xent) instead of negatives only.
    pub standard_denominator: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.5,
            lambda: 0.5,
            same_class_negative_weight: 0.0,
            batch_size: 32,
            learning_rate: 0.01,
            epochs: 100,
            augmentation: Augmentation::default(),
            standard_denominator: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in [0,1], got {}",
                self.lambda
            )));
        }
        if self.same_class_negative_weight < 0.0 {
            return Err(Error::InvalidConfig(
                "same_class_negative_weight must be >= 0".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        self.augmentation.validate()
    }
}

/// A pseudo label: the full class distribution plus its top-k truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    pub frame_index: usize,
    pub probs: Vec<f64>,
    pub top_k: Vec<(usize, f64)>,
}

/// Run the classifier head on one crop and keep the top-k classes.
pub fn predict(
    model: &EmbeddingNetwork,
    crop: &crate::frame::Frame,
    frame_index: usize,
    k: usize,
) -> Result<PseudoLabelRecord> {
    let probs = model.class_probabilities(crop)?;
    let k = k.min(probs.len());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Descending probability, ascending class index on ties.
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let top_k = order.into_iter().take(k).map(|c| (c, probs[c])).collect();
    Ok(PseudoLabelRecord {
        source_id: None,
        frame_index,
        probs,
        top_k,
    })
}

/// Append pseudo-label records as JSON Lines.
pub fn write_records_jsonl(path: impl AsRef<Path>, records: &[PseudoLabelRecord]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for record in records {
        writeln!(file, "{}", serde_json::to_string(record)?)?;
    }
    Ok(())
}

pub fn read_records_jsonl(path: impl AsRef<Path>) -> Result<Vec<PseudoLabelRecord>> {
    let file = fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsHeader {
    format: String,
    shapes: Vec<Vec<usize>>,
    num_classes: usize,
    seed: u64,
    config: ContrastiveConfig,
}

const WEIGHTS_FORMAT: &str = "graycap-weights-v1";

/// Save a model: one JSON header line, then the parameters as little-endian
/// f64 in layer-major order.
pub fn save_model(
    path: impl AsRef<Path>,
    model: &EmbeddingNetwork,
    seed: Seed,
    config: &ContrastiveConfig,
) -> Result<()> {
    let header = WeightsHeader {
        format: WEIGHTS_FORMAT.to_string(),
        shapes: model.layer_shapes(),
        num_classes: model.num_classes(),
        seed: seed.0,
        config: config.clone(),
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    let mut payload = Vec::new();
    for value in model.params_flat() {
        payload.extend_from_slice(&value.to_le_bytes());
    }
    file.write_all(&payload)?;
    Ok(())
}

/// Load a model saved by [`save_model`], returning the stored seed and config
/// alongside the network.
pub fn load_model(path: impl AsRef<Path>) -> Result<(EmbeddingNetwork, Seed, ContrastiveConfig)> {
    let mut file = fs::File::open(path.as_ref())?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidConfig("weights file has no header line".into()))?;
    let header: WeightsHeader = serde_json::from_slice(&bytes[..newline])?;
    if header.format != WEIGHTS_FORMAT {
        return Err(Error::InvalidConfig(format!(
            "unsupported weights format {:?}",
            header.format
        )));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() % 8 != 0 {
        return Err(Error::InvalidConfig("weights payload is not a whole number of f64".into()));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = EmbeddingNetwork::from_flat(header.num_classes, &params)?;
    if model.layer_shapes() != header.shapes {
        return Err(Error::ShapeMismatch("weights header shapes do not match payload".into()));
    }
    Ok((model, Seed(header.seed), header.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{Frame, Modality};
    use crate::rng::rng_for;

    #[test]
    fn predict_matches_hand_softmax() {
        // Force known logits by zeroing the trunk and setting head biases.
        let mut rng = rng_for(Seed(1), "predict-test");
        let mut model = EmbeddingNetwork::init(3, &mut rng);
        model.zero_trunk();
        model.set_head_bias(&[2.0, 1.0, 0.0]);
        let crop = Frame::constant(32, 32, 0.5, 0, Modality::Synthetic).unwrap();
        let record = predict(&model, &crop, 0, 2).unwrap();
        assert!((record.probs[0] - 0.6652).abs() < 5e-5);
        assert!((record.probs[1] - 0.2447).abs() < 5e-5);
        assert!((record.probs[2] - 0.0900).abs() < 5e-5);
        assert_eq!(record.top_k.len(), 2);
        assert_eq!(record.top_k[0].0, 0);
        assert_eq!(record.top_k[1].0, 1);
        let sum: f64 = record.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let mut rng = rng_for(Seed(2), "predict-uniform");
        let mut model = EmbeddingNetwork::init(4, &mut rng);
        model.zero_trunk();
        model.set_head_bias(&[0.7, 0.7, 0.7, 0.7]);
        let crop = Frame::constant(32, 32, 0.1, 0, Modality::Synthetic).unwrap();
        let record = predict(&model, &crop, 0, 4).unwrap();
        for &p in &record.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_of_probs_matches_argmax_of_logits() {
        use rand::Rng;
        let mut rng = rng_for(Seed(3), "predict-argmax");
        for _ in 0..50 {
            let logits: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let probs = softmax(&logits);
            let argmax_l = (0..5).max_by(|&a, &b| logits[a].partial_cmp(&logits[b]).unwrap());
            let argmax_p = (0..5).max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap());
            assert_eq!(argmax_l, argmax_p);
        }
    }

    #[test]
    fn model_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut rng = rng_for(Seed(9), "model-io");
        let model = EmbeddingNetwork::init(3, &mut rng);
        let config = ContrastiveConfig::default();
        save_model(&path, &model, Seed(9), &config).unwrap();
        let (loaded, seed, loaded_config) = load_model(&path).unwrap();
        assert_eq!(seed, Seed(9));
        assert_eq!(loaded.params_flat(), model.params_flat());
        assert_eq!(loaded_config.batch_size, config.batch_size);
    }

    #[test]
    fn records_jsonl_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let records = vec![
            PseudoLabelRecord {
                source_id: Some("clip0".into()),
                frame_index: 0,
                probs: vec![0.7, 0.2, 0.1],
                top_k: vec![(0, 0.7), (1, 0.2)],
            },
            PseudoLabelRecord {
                source_id: None,
                frame_index: 1,
                probs: vec![0.1, 0.8, 0.1],
                top_k: vec![(1, 0.8)],
            },
        ];
        write_records_jsonl(&path, &records).unwrap();
        let back = read_records_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].source_id.as_deref(), Some("clip0"));
        assert_eq!(back[1].top_k, vec![(1, 0.8)]);
    }
}
