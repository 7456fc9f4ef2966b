//! The embedding network: flatten(32x32) -> affine(1024->128) -> ReLU ->
//! affine(128->64) = embedding, plus an affine classifier head (64->C).
//! All parameters are f64; everything is hand-rolled so gradients can be
//! checked against finite differences without a framework in the way.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const INPUT_DIM: usize = 32 * 32;
pub const HIDDEN_DIM: usize = 128;
pub const EMBED_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNetwork {
    // Row-major: row r holds the weights of output unit r.
    w1: Vec<f64>, // HIDDEN_DIM x INPUT_DIM
    b1: Vec<f64>, // HIDDEN_DIM
    w2: Vec<f64>, // EMBED_DIM x HIDDEN_DIM
    b2: Vec<f64>, // EMBED_DIM
    head_w: Vec<f64>, // C x EMBED_DIM
    head_b: Vec<f64>, // C
    num_classes: usize,
}

/// Cached activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros(num_classes: usize) -> Self {
        Gradients {
            w1: vec![0.0; HIDDEN_DIM * INPUT_DIM],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; EMBED_DIM * HIDDEN_DIM],
            b2: vec![0.0; EMBED_DIM],
            head_w: vec![0.0; num_classes * EMBED_DIM],
            head_b: vec![0.0; num_classes],
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out_dim: usize, in_dim: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), in_dim);
    let mut out = Vec::with_capacity(out_dim);
    for r in 0..out_dim {
        let row = &w[r * in_dim..(r + 1) * in_dim];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
    out
}

impl EmbeddingNetwork {
    /// Fresh network with scaled-normal weights, deterministic in the rng.
    pub fn init(num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        fn layer(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Vec<f64> {
            let dist = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).unwrap();
            (0..out_dim * in_dim).map(|_| dist.sample(rng)).collect()
        }
        EmbeddingNetwork {
            w1: layer(rng, HIDDEN_DIM, INPUT_DIM),
            b1: vec![0.0; HIDDEN_DIM],
            w2: layer(rng, EMBED_DIM, HIDDEN_DIM),
            b2: vec![0.0; EMBED_DIM],
            head_w: layer(rng, num_classes, EMBED_DIM),
            head_b: vec![0.0; num_classes],
            num_classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            vec![HIDDEN_DIM, INPUT_DIM],
            vec![HIDDEN_DIM],
            vec![EMBED_DIM, HIDDEN_DIM],
            vec![EMBED_DIM],
            vec![self.num_classes, EMBED_DIM],
            vec![self.num_classes],
        ]
    }

    /// Flatten a 32x32 crop into the network input.
    pub fn input_from(crop: &Frame) -> Result<Vec<f64>> {
        if crop.width() * crop.height() != INPUT_DIM {
            return Err(Error::DimensionMismatch(format!(
                "expected a 32x32 crop, got {}x{}",
                crop.width(),
                crop.height()
            )));
        }
        Ok(crop.pixels().to_vec())
    }

    /// Forward pass through the trunk, returning all activations.
    pub fn forward(&self, input: Vec<f64>) -> ForwardTrace {
        let hidden_pre = affine(&self.w1, &self.b1, &input, HIDDEN_DIM, INPUT_DIM);
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        let embedding = affine(&self.w2, &self.b2, &hidden, EMBED_DIM, HIDDEN_DIM);
        ForwardTrace {
            input,
            hidden_pre,
            hidden,
            embedding,
        }
    }

    pub fn embed(&self, crop: &Frame) -> Result<Vec<f64>> {
        Ok(self.forward(Self::input_from(crop)?).embedding)
    }

    pub fn head_logits(&self, embedding: &[f64]) -> Vec<f64> {
        affine(&self.head_w, &self.head_b, embedding, self.num_classes, EMBED_DIM)
    }

    pub fn class_probabilities(&self, crop: &Frame) -> Result<Vec<f64>> {
        Ok(super::softmax(&self.head_logits(&self.embed(crop)?)))
    }

    /// Backprop through the trunk for one trace. `d_embedding` is dL/dz.
    // Index loops keep the paired weight/gradient rows legible here.
    #[allow(clippy::needless_range_loop)]
    pub fn backward_trunk(&self, trace: &ForwardTrace, d_embedding: &[f64], grads: &mut Gradients) {
        // Layer 2: z = w2 h + b2.
        let mut d_hidden = vec![0.0; HIDDEN_DIM];
        for r in 0..EMBED_DIM {
            let g = d_embedding[r];
            let row = &self.w2[r * HIDDEN_DIM..(r + 1) * HIDDEN_DIM];
            let grow = &mut grads.w2[r * HIDDEN_DIM..(r + 1) * HIDDEN_DIM];
            for c in 0..HIDDEN_DIM {
                grow[c] += g * trace.hidden[c];
                d_hidden[c] += g * row[c];
            }
            grads.b2[r] += g;
        }
        // ReLU.
        for (d, &pre) in d_hidden.iter_mut().zip(&trace.hidden_pre) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        // Layer 1: h_pre = w1 x + b1.
        for r in 0..HIDDEN_DIM {
            let g = d_hidden[r];
            if g == 0.0 {
                continue;
            }
            let grow = &mut grads.w1[r * INPUT_DIM..(r + 1) * INPUT_DIM];
            for c in 0..INPUT_DIM {
                grow[c] += g * trace.input[c];
            }
            grads.b1[r] += g;
        }
    }

    /// Backprop through the head. Returns dL/dz for chaining into the trunk.
    #[allow(clippy::needless_range_loop)]
    pub fn backward_head(
        &self,
        embedding: &[f64],
        d_logits: &[f64],
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let mut d_embedding = vec![0.0; EMBED_DIM];
        for r in 0..self.num_classes {
            let g = d_logits[r];
            let row = &self.head_w[r * EMBED_DIM..(r + 1) * EMBED_DIM];
            let grow = &mut grads.head_w[r * EMBED_DIM..(r + 1) * EMBED_DIM];
            for c in 0..EMBED_DIM {
                grow[c] += g * embedding[c];
                d_embedding[c] += g * row[c];
            }
            grads.head_b[r] += g;
        }
        d_embedding
    }

    /// One SGD step: `p -= lr * g`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        fn step(params: &mut [f64], grads: &[f64], lr: f64) {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        step(&mut self.w1, &grads.w1, lr);
        step(&mut self.b1, &grads.b1, lr);
        step(&mut self.w2, &grads.w2, lr);
        step(&mut self.b2, &grads.b2, lr);
        step(&mut self.head_w, &grads.head_w, lr);
        step(&mut self.head_b, &grads.head_b, lr);
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
        out
    }

    pub fn from_flat(num_classes: usize, params: &[f64]) -> Result<Self> {
        let expected = HIDDEN_DIM * INPUT_DIM
            + HIDDEN_DIM
            + EMBED_DIM * HIDDEN_DIM
            + EMBED_DIM
            + num_classes * EMBED_DIM
            + num_classes;
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} parameters for {num_classes} classes, got {}",
                params.len()
            )));
        }
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let slice = params[cursor..cursor + n].to_vec();
            cursor += n;
            slice
        };
        Ok(EmbeddingNetwork {
            w1: take(HIDDEN_DIM * INPUT_DIM),
            b1: take(HIDDEN_DIM),
            w2: take(EMBED_DIM * HIDDEN_DIM),
            b2: take(EMBED_DIM),
            head_w: take(num_classes * EMBED_DIM),
            head_b: take(num_classes),
            num_classes,
        })
    }

    pub fn param_count(&self) -> usize {
        HIDDEN_DIM * INPUT_DIM
            + HIDDEN_DIM
            + EMBED_DIM * HIDDEN_DIM
            + EMBED_DIM
            + self.num_classes * EMBED_DIM
            + self.num_classes
    }

    pub fn all_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }

    /// Perturb one flat-index parameter in place (used by gradient checks).
    pub fn nudge_param(&mut self, index: usize, delta: f64) {
        let mut cursor = 0usize;
        for slice in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.head_w,
            &mut self.head_b,
        ] {
            if index < cursor + slice.len() {
                slice[index - cursor] += delta;
                return;
            }
            cursor += slice.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Gradient value at a flat index.
    pub fn grad_at(grads: &Gradients, index: usize) -> f64 {
        let mut cursor = 0usize;
        for slice in [
            &grads.w1, &grads.b1, &grads.w2, &grads.b2, &grads.head_w, &grads.head_b,
        ] {
            if index < cursor + slice.len() {
                return slice[index - cursor];
            }
            cursor += slice.len();
        }
        panic!("gradient index {index} out of range");
    }

    #[cfg(test)]
    pub(crate) fn zero_trunk(&mut self) {
        self.w1.iter_mut().for_each(|v| *v = 0.0);
        self.b1.iter_mut().for_each(|v| *v = 0.0);
        self.w2.iter_mut().for_each(|v| *v = 0.0);
        self.b2.iter_mut().for_each(|v| *v = 0.0);
        self.head_w.iter_mut().for_each(|v| *v = 0.0);
    }

    #[cfg(test)]
    pub(crate) fn set_head_bias(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.num_classes);
        self.head_b.copy_from_slice(bias);
    }
}
