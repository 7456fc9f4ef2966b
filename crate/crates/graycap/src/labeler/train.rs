//! Mini-batch SGD on the combined objective
//! `L = lambda * L_C + (1 - lambda) * L_CE`.
//!
//! The contrastive term runs over every sample in the batch (labeled and
//! unlabeled); cross-entropy only over the labeled ones. Each epoch draws
//! its shuffling and augmentation randomness from a generator derived from
//! `(seed, global epoch index)`, so a run split across federated rounds
//! consumes exactly the same random stream as an uninterrupted run.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::rng::{rng_for, Seed};

use super::network::EmbeddingNetwork;
use super::{augment, cross_entropy_logits, ntxent_loss, ContrastiveConfig, Gradients};

/// One sample prepared for a deterministic loss evaluation: two augmented
/// views, already flattened, plus the label when known.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub view_a: Vec<f64>,
    pub view_b: Vec<f64>,
    pub label: Option<usize>,
}

pub struct TrainOutcome {
    pub network: EmbeddingNetwork,
    pub epoch_losses: Vec<f64>,
}

/// Augment a batch of crops into deterministic view pairs.
pub fn prepare_batch(
    crops: &[(&Frame, Option<usize>)],
    config: &ContrastiveConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<PreparedSample>> {
    let mut batch = Vec::with_capacity(crops.len());
    for (crop, label) in crops {
        let view_a = augment(crop, &config.augmentation, rng);
        let view_b = augment(crop, &config.augmentation, rng);
        batch.push(PreparedSample {
            view_a: EmbeddingNetwork::input_from(&view_a)?,
            view_b: EmbeddingNetwork::input_from(&view_b)?,
            label: *label,
        });
    }
    Ok(batch)
}

/// Loss and parameter gradients of the combined objective on a prepared
/// batch. Pure in (network, batch, config): this is what both the SGD step
/// and the finite-difference checks evaluate.
pub fn batch_loss_and_grads(
    network: &EmbeddingNetwork,
    batch: &[PreparedSample],
    config: &ContrastiveConfig,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(network.num_classes());
    let mut loss = 0.0;

    let traces_a: Vec<_> = batch
        .iter()
        .map(|s| network.forward(s.view_a.clone()))
        .collect();
    let traces_b: Vec<_> = batch
        .iter()
        .map(|s| network.forward(s.view_b.clone()))
        .collect();

    // dL/dz per view, accumulated across both loss terms.
    let mut d_emb_a = vec![vec![0.0; traces_a[0].embedding.len()]; batch.len()];
    let mut d_emb_b = vec![vec![0.0; traces_a[0].embedding.len()]; batch.len()];

    let contrastive_active = config.lambda > 0.0 && batch.len() >= 2;
    if contrastive_active {
        let anchors: Vec<Vec<f64>> = traces_a.iter().map(|t| t.embedding.clone()).collect();
        let positives: Vec<Vec<f64>> = traces_b.iter().map(|t| t.embedding.clone()).collect();
        let labels: Vec<Option<usize>> = batch.iter().map(|s| s.label).collect();
        let (contrastive, contrastive_grads) =
            ntxent_loss(&anchors, &positives, &labels, config)?;
        loss += config.lambda * contrastive;
        for i in 0..batch.len() {
            for k in 0..d_emb_a[i].len() {
                d_emb_a[i][k] += config.lambda * contrastive_grads.d_anchors[i][k];
                d_emb_b[i][k] += config.lambda * contrastive_grads.d_positives[i][k];
            }
        }
    }

    let ce_weight = 1.0 - config.lambda;
    if ce_weight > 0.0 {
        let labeled: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].label.is_some()).collect();
        if !labeled.is_empty() {
            let scale = ce_weight / labeled.len() as f64;
            for &i in &labeled {
                let label = batch[i].label.unwrap();
                let logits = network.head_logits(&traces_a[i].embedding);
                let (ce, mut d_logits) = cross_entropy_logits(&logits, label);
                loss += scale * ce;
                for d in d_logits.iter_mut() {
                    *d *= scale;
                }
                let d_z = network.backward_head(&traces_a[i].embedding, &d_logits, &mut grads);
                for k in 0..d_emb_a[i].len() {
                    d_emb_a[i][k] += d_z[k];
                }
            }
        }
    }

    for i in 0..batch.len() {
        if d_emb_a[i].iter().any(|&g| g != 0.0) {
            network.backward_trunk(&traces_a[i], &d_emb_a[i], &mut grads);
        }
        if d_emb_b[i].iter().any(|&g| g != 0.0) {
            network.backward_trunk(&traces_b[i], &d_emb_b[i], &mut grads);
        }
    }

    Ok((loss, grads))
}

/// Run epochs `[epoch_offset, epoch_offset + epochs)` of SGD on an existing
/// network. `epoch_offset` indexes the global schedule, which is what makes
/// federated round-by-round training replay the centralized random stream.
pub fn train_epochs(
    network: &mut EmbeddingNetwork,
    labeled: &[(Frame, usize)],
    unlabeled: &[Frame],
    config: &ContrastiveConfig,
    epoch_offset: usize,
    epochs: usize,
    seed: Seed,
) -> Result<Vec<f64>> {
    config.validate()?;
    let total = labeled.len() + unlabeled.len();
    if total == 0 {
        return Err(Error::EmptyInput("no training samples".into()));
    }

    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in epoch_offset..epoch_offset + epochs {
        let mut rng = rng_for(seed, &format!("labeler-epoch-{epoch}"));
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let crops: Vec<(&Frame, Option<usize>)> = chunk
                .iter()
                .map(|&idx| {
                    if idx < labeled.len() {
                        (&labeled[idx].0, Some(labeled[idx].1))
                    } else {
                        (&unlabeled[idx - labeled.len()], None)
                    }
                })
                .collect();
            let batch = prepare_batch(&crops, config, &mut rng)?;
            let (loss, grads) = batch_loss_and_grads(network, &batch, config)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {loss} at epoch {epoch}"
                )));
            }
            network.apply_sgd(&grads, config.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        if !network.all_finite() {
            return Err(Error::Diverged(format!("non-finite weights after epoch {epoch}")));
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(epoch_losses)
}

/// Train a fresh labeler.
///
/// Requires at least one labeled sample per class unless `lambda == 1`
/// (pure contrastive training needs no labels at all).
pub fn train(
    labeled: &[(Frame, usize)],
    unlabeled: &[Frame],
    num_classes: usize,
    config: &ContrastiveConfig,
    seed: Seed,
) -> Result<TrainOutcome> {
    config.validate()?;
    if num_classes == 0 {
        return Err(Error::InvalidConfig("num_classes must be >= 1".into()));
    }
    if config.lambda < 1.0 {
        let mut seen = vec![false; num_classes];
        for (_, label) in labeled {
            if *label >= num_classes {
                return Err(Error::InvalidConfig(format!(
                    "label {label} out of range for {num_classes} classes"
                )));
            }
            seen[*label] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::EmptyInput(format!(
                "class {missing} has no labeled samples"
            )));
        }
    }

    let mut network = EmbeddingNetwork::init(num_classes, &mut rng_for(seed, "labeler-init"));
    let epoch_losses = train_epochs(
        &mut network,
        labeled,
        unlabeled,
        config,
        0,
        config.epochs,
        seed,
    )?;
    Ok(TrainOutcome {
        network,
        epoch_losses,
    })
}

/// Fraction of crops whose argmax prediction matches the label.
pub fn train_accuracy(network: &EmbeddingNetwork, samples: &[(Frame, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to score".into()));
    }
    let mut hits = 0usize;
    for (crop, label) in samples {
        let probs = network.class_probabilities(crop)?;
        let argmax = (0..probs.len())
            .max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap())
            .unwrap();
        if argmax == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}
