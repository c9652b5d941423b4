//! Neural building blocks: layers, the downsampling bidirectional
//! encoder, attention scoring, the decoder cell, and the training loss.

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod layers;

use serde::{Deserialize, Serialize};

pub use attention::{AttentionScorer, AttentionStep, BoundScorer, PreparedAttention, ScorerKind};
pub use decoder::{BoundDecoder, DecodeStep, DecoderCell};
pub use encoder::{
    pad_frames, BoundEncoder, EncoderCarry, EncoderCarryTensors, EncoderStack, ENCODER_LAYERS,
    FRAMES_PER_BLOCK,
};
pub use layers::{Affine, CellState, Embedding, LstmCell};

use crate::error::Result;
use crate::numerics::Var;

/// Probabilities are floored here before the log inside the loss, so a
/// saturated output cannot produce -inf.
pub const LOG_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of `targets` under rank-2 `pred` whose
/// rows are post-softmax distributions.
pub fn cross_entropy_loss(pred: &Var, targets: &[u32]) -> Result<Var> {
    let idx: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    pred.cross_entropy(&idx, LOG_FLOOR)
}

/// Model dimensions shared by the teacher and the student.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input feature dimension D.
    pub feature_dim: usize,
    /// Output size of the front feed-forward projection.
    pub enc_proj: usize,
    /// Recurrent units per encoder direction; attention sees 2x this.
    pub enc_hidden: usize,
    pub dec_embed: usize,
    pub dec_hidden: usize,
    /// Hidden size of the MLP scorer.
    pub attn_hidden: usize,
    pub scorer: ScorerKind,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            feature_dim: 80,
            enc_proj: 512,
            enc_hidden: 256,
            dec_embed: 256,
            dec_hidden: 256,
            attn_hidden: 128,
            scorer: ScorerKind::Mlp,
        }
    }
}

impl ArchConfig {
    /// Encoder output feature size (both directions concatenated).
    pub fn enc_output(&self) -> usize {
        2 * self.enc_hidden
    }
}
