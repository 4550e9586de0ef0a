//! Swin-Tempo: a desk-scale lung-nodule detector.
//!
//! Per CT slice, a windowed-attention encoder and a convolutional
//! encoder-decoder are fused at four scales; a convolutional GRU carries a
//! hidden state across consecutive slices of a volume; thresholding plus
//! density clustering turn the per-slice probability maps into spherical
//! nodule candidates; FROC/CPM scoring evaluates them against ground truth.
//!
//! Crate layout follows the pipeline: [`volume`] and [`phantom`] define data,
//! [`preprocess`] conditions it, [`model`] runs the network, [`training`]
//! fits it, [`candidates`] and [`froc`] post-process and score, and
//! [`checkpoint`] persists everything. All floating-point model math is f64
//! on a deterministic single-threaded tape, so fixed seeds give bit-identical
//! results everywhere.

pub mod candidates;
pub mod checkpoint;
pub mod error;
pub mod froc;
pub mod model;
pub mod phantom;
pub mod preprocess;
pub mod pretrained;
pub mod rng;
pub mod testkit;
pub mod training;
pub mod volume;

pub use error::{CoreError, Result};
