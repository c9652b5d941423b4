//! Single-step decoder: token embedding, one gated recurrent cell, and
//! a softmax readout over (state ⊕ attention context).

use crate::error::Result;
use crate::numerics::{SeededRng, Tape, Tensor, Var};

use super::attention::PreparedAttention;
use super::layers::{Affine, BoundAffine, BoundEmbedding, BoundLstmCell, CellState, Embedding, LstmCell};

#[derive(Debug)]
pub struct DecoderCell {
    embed: Embedding,
    cell: LstmCell,
    out: Affine,
}

impl DecoderCell {
    pub fn new(
        prefix: &str,
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
        context_size: usize,
        rng: &mut SeededRng,
    ) -> DecoderCell {
        DecoderCell {
            embed: Embedding::new(&format!("{prefix}.embed"), vocab, embed_dim, rng),
            cell: LstmCell::new(&format!("{prefix}.cell"), embed_dim, hidden, rng),
            out: Affine::new(&format!("{prefix}.out"), hidden + context_size, vocab, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.vocab_size()
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.embed.params();
        out.extend(self.cell.params());
        out.extend(self.out.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.embed.params_mut();
        out.extend(self.cell.params_mut());
        out.extend(self.out.params_mut());
        out
    }

    pub fn bind(&self, tape: &Tape) -> BoundDecoder {
        BoundDecoder {
            embed: self.embed.bind(tape),
            cell: self.cell.bind(tape),
            out: self.out.bind(tape),
            hidden: self.cell.hidden_size(),
        }
    }
}

pub struct BoundDecoder {
    embed: BoundEmbedding,
    cell: BoundLstmCell,
    out: BoundAffine,
    hidden: usize,
}

/// Output of one decoder step.
pub struct DecodeStep {
    /// Softmax distribution over the vocabulary.
    pub dist: Var,
    pub state: CellState,
    /// Attention weights over the segment's encoder states.
    pub weights: Var,
}

impl BoundDecoder {
    pub fn zero_state(&self, tape: &Tape) -> CellState {
        CellState::zeros(tape, self.hidden)
    }

    /// Advance the recurrent state on `prev_token`, attend, and read out
    /// the next-token distribution.
    ///
    /// `dropout` is `(mask rng, rate)`, training only; it masks the
    /// recurrent state fed to the readout, never the carried state.
    pub fn step(
        &self,
        tape: &Tape,
        prev_token: u32,
        state: &CellState,
        attention: &PreparedAttention,
        dropout: Option<(&mut SeededRng, f64)>,
    ) -> Result<DecodeStep> {
        let emb = self.embed.lookup(prev_token)?;
        let next = self.cell.step(&emb, state)?;
        let att = attention.attend(&next.h)?;
        let mut readout_h = next.h.clone();
        if let Some((rng, rate)) = dropout {
            readout_h = super::encoder::apply_dropout(tape, &readout_h, rng, rate)?;
        }
        let logits = self.out.apply_vec(&Var::concat(&[&readout_h, &att.context])?)?;
        Ok(DecodeStep {
            dist: logits.softmax()?,
            state: next,
            weights: att.weights,
        })
    }
}
