//! Contrastive and cross-entropy losses with analytic gradients.
//!
//! The contrastive term is a temperature-scaled cross-entropy over cosine
//! similarities: for each anchor i with positive i+,
//!
//! ```text
//! L_C = -(1/N) * sum_i log( exp(sim(z_i, z_i+)/tau)
//!                           / sum_{j != i} w_ij * exp(sim(z_i, z_j)/tau) )
//! ```
//!
//! where the denominator runs over the other anchors in the batch. By
//! default the positive is *not* part of the denominator; set
//! `standard_denominator` to include it (the conventional formulation, which
//! keeps the loss non-negative). `w_ij` down-weights negatives whose class
//! label matches the anchor's, so semantically equal samples are not pushed
//! apart.

use crate::error::{Error, Result};

use super::ContrastiveConfig;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one sample against its label. Returns the loss and
/// dL/dlogits (softmax minus one-hot).
pub fn cross_entropy_logits(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    debug_assert!(label < logits.len());
    let probs = softmax(logits);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut d = probs;
    d[label] -= 1.0;
    (loss, d)
}

/// Normalize to unit length; zero-norm vectors are an error.
pub fn l2_normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidConfig(format!("zero or non-finite embedding norm {norm}")));
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

/// Gradients of the contrastive loss with respect to the raw (unnormalized)
/// anchor and positive embeddings.
#[derive(Debug, Clone)]
pub struct NtXentGrads {
    pub d_anchors: Vec<Vec<f64>>,
    pub d_positives: Vec<Vec<f64>>,
}

/// Semantic-weighted NT-Xent loss over a batch of (anchor, positive) pairs.
///
/// `labels[i]` carries the anchor's class when known; `w_ij` is
/// `same_class_negative_weight` when both labels are known and equal, 1
/// otherwise.
pub fn ntxent_loss(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    labels: &[Option<usize>],
    config: &ContrastiveConfig,
) -> Result<(f64, NtXentGrads)> {
    let n = anchors.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!(
            "contrastive batch needs at least 2 pairs, got {n}"
        )));
    }
    if positives.len() != n || labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "anchors/positives/labels lengths differ: {n}/{}/{}",
            positives.len(),
            labels.len()
        )));
    }
    let tau = config.tau;

    let mut units_a = Vec::with_capacity(n);
    let mut norms_a = Vec::with_capacity(n);
    let mut units_p = Vec::with_capacity(n);
    let mut norms_p = Vec::with_capacity(n);
    for i in 0..n {
        let (u, nu) = l2_normalize(&anchors[i])?;
        units_a.push(u);
        norms_a.push(nu);
        let (v, nv) = l2_normalize(&positives[i])?;
        units_p.push(v);
        norms_p.push(nv);
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // Cosine similarities.
    let s_pos: Vec<f64> = (0..n).map(|i| dot(&units_a[i], &units_p[i])).collect();
    let mut s_neg = vec![0.0; n * n]; // anchor i vs anchor j
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s_neg[i * n + j] = dot(&units_a[i], &units_a[j]);
            }
        }
    }

    let weight = |i: usize, j: usize| -> f64 {
        match (labels[i], labels[j]) {
            (Some(a), Some(b)) if a == b => config.same_class_negative_weight,
            _ => 1.0,
        }
    };

    let mut loss = 0.0;
    let mut denominators = vec![0.0; n];
    for i in 0..n {
        let mut z = 0.0;
        for j in 0..n {
            if j != i {
                z += weight(i, j) * (s_neg[i * n + j] / tau).exp();
            }
        }
        if config.standard_denominator {
            z += (s_pos[i] / tau).exp();
        }
        if z <= 0.0 {
            return Err(Error::InvalidConfig(
                "contrastive denominator vanished; check negative weights".into(),
            ));
        }
        denominators[i] = z;
        loss += -(s_pos[i] / tau) + z.ln();
    }
    loss /= n as f64;

    // dL/ds terms.
    let inv_n = 1.0 / n as f64;
    let mut d_s_pos = vec![0.0; n];
    for i in 0..n {
        let mut d = -inv_n / tau;
        if config.standard_denominator {
            d += inv_n * (s_pos[i] / tau).exp() / (tau * denominators[i]);
        }
        d_s_pos[i] = d;
    }

    // Propagate into raw vectors. For unit vectors u = a/|a|, v = b/|b| and
    // s = u.v:  ds/da = (v - s u)/|a|,  ds/db = (u - s v)/|b|.
    let dim = anchors[0].len();
    let mut d_anchors = vec![vec![0.0; dim]; n];
    let mut d_positives = vec![vec![0.0; dim]; n];

    for i in 0..n {
        let g = d_s_pos[i];
        for k in 0..dim {
            d_anchors[i][k] += g * (units_p[i][k] - s_pos[i] * units_a[i][k]) / norms_a[i];
            d_positives[i][k] += g * (units_a[i][k] - s_pos[i] * units_p[i][k]) / norms_p[i];
        }
    }
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = s_neg[i * n + j];
            let g = inv_n * weight(i, j) * (s / tau).exp() / (tau * denominators[i]);
            for k in 0..dim {
                d_anchors[i][k] += g * (units_a[j][k] - s * units_a[i][k]) / norms_a[i];
                d_anchors[j][k] += g * (units_a[i][k] - s * units_a[j][k]) / norms_a[j];
            }
        }
    }

    Ok((
        loss,
        NtXentGrads {
            d_anchors,
            d_positives,
        },
    ))
}
