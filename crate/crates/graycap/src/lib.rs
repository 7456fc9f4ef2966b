//! Behavior understanding for low-resolution video at desk scale.
//!
//! The pipeline turns raw grayscale sensor streams (depth, thermal,
//! infrared) into natural-language behavior captions in three stages:
//!
//! 1. **Select** — [`filter`] keeps only windows showing sustained motion,
//!    and [`capture`] localizes the person in the kept segments, rejects
//!    temporally incoherent detections, and emits fixed-size crops.
//! 2. **Label** — [`labeler`] trains a small embedding network on a handful
//!    of labeled crops plus many unlabeled ones (semantic-weighted
//!    contrastive loss mixed with cross-entropy) and pseudo-labels every
//!    frame; [`fed`] runs the same training across simulated clients with
//!    FedAvg aggregation when data cannot be pooled.
//! 3. **Caption** — [`captioner`] compresses consistency-checked label
//!    sequences into action segments and prompts an LLM through the
//!    pluggable [`llm`] client (HTTP, deterministic mock, or fixture
//!    replay).
//!
//! [`lora`] supplies the low-rank adapter arithmetic used when the captions
//! later fine-tune a larger vision-language model, and [`synth`] generates
//! the deterministic synthetic datasets the test-suite and examples run on.
//!
//! Everything is seeded: the same [`Seed`] yields bit-identical artifacts.
//! See the crate examples for one runnable program per stage, or the
//! `graycap` binary for the same operations as subcommands.

pub mod capture;
pub mod captioner;
pub mod container;
pub mod error;
pub mod eval;
pub mod fed;
pub mod filter;
pub mod frame;
pub mod labeler;
pub mod llm;
pub mod lora;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use frame::{Frame, FrameStream, LabeledClip, Modality};
pub use rng::Seed;
