//! Incremental speech recognition by attention transfer.
//!
//! A full-utterance attention encoder-decoder is trained as a teacher,
//! its attention matrix is distilled into monotonic character-to-block
//! alignments, and an identically shaped student learns to transcribe
//! short input segments terminated by end-of-block tokens. Decoding then
//! proceeds block-by-block with configurable look-back/look-ahead
//! context.
//!
//! Module map:
//! - [`numerics`]: tensors, reverse-mode tape, Adam, seeded RNG
//! - [`network`]: layers, encoder stack, attention scoring, loss
//! - [`corpus`]: vocabulary, datasets, synthetic task, mel features
//! - [`seq2seq`]: the full-utterance teacher
//! - [`distill`]: monotonic alignment extraction and segmentation
//! - [`isr`]: the incremental student and the no-transfer baseline
//! - [`metrics`]: character error rate, delay accounting, evaluation
//! - [`checkpoint`]: on-disk model format

pub mod checkpoint;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod isr;
pub mod metrics;
pub mod network;
pub mod seq2seq;
pub mod verify;
pub mod numerics;

pub use error::{Error, Result};
