//! Content-based attention over encoder states with three scoring
//! functions: dot product, bilinear, and a single-hidden-layer MLP.
//!
//! The encoder-side projection of the bilinear and MLP scorers depends
//! only on the encoder states, so it is computed once per utterance via
//! `prepare` and reused for every decoder step. `attend` and
//! `score_single` follow the same formulas; decode loops always go
//! through the prepared path so step-by-step and batched passes match
//! bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tape, Tensor, Var};

use super::layers::glorot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Dot,
    Bilinear,
    Mlp,
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScorerKind::Dot => "dot",
            ScorerKind::Bilinear => "bilinear",
            ScorerKind::Mlp => "mlp",
        };
        f.write_str(s)
    }
}

/// Scores pairs of encoder state (size M) and decoder state (size N).
#[derive(Debug)]
pub struct AttentionScorer {
    kind: ScorerKind,
    enc_size: usize,
    dec_size: usize,
    /// Bilinear `[M×N]` or MLP `[A×(M+N)]` weight.
    pub w: Option<Tensor>,
    /// MLP readout vector `[A]`.
    pub v: Option<Tensor>,
}

impl AttentionScorer {
    pub fn new(
        kind: ScorerKind,
        enc_size: usize,
        dec_size: usize,
        attn_hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<AttentionScorer> {
        let (w, v) = match kind {
            ScorerKind::Dot => {
                if enc_size != dec_size {
                    return Err(Error::Config(format!(
                        "dot scorer needs equal state sizes, got {enc_size} vs {dec_size}"
                    )));
                }
                (None, None)
            }
            ScorerKind::Bilinear => (Some(glorot(rng, enc_size, dec_size)), None),
            ScorerKind::Mlp => (
                Some(glorot(rng, attn_hidden, enc_size + dec_size)),
                Some(
                    Tensor::vector(
                        (0..attn_hidden)
                            .map(|_| rng.uniform(-0.5, 0.5) / (attn_hidden as f64).sqrt())
                            .collect(),
                    )
                    .with_grad(),
                ),
            ),
        };
        Ok(AttentionScorer {
            kind,
            enc_size,
            dec_size,
            w,
            v,
        })
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn enc_size(&self) -> usize {
        self.enc_size
    }

    pub fn dec_size(&self) -> usize {
        self.dec_size
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(w) = &self.w {
            out.push(("attn.w".to_string(), w));
        }
        if let Some(v) = &self.v {
            out.push(("attn.v".to_string(), v));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(w) = &mut self.w {
            out.push(("attn.w".to_string(), w));
        }
        if let Some(v) = &mut self.v {
            out.push(("attn.v".to_string(), v));
        }
        out
    }

    pub fn bind(&self, tape: &Tape) -> BoundScorer<'_> {
        BoundScorer {
            scorer: self,
            w: self.w.as_ref().map(|w| tape.param("attn.w", w)),
            v: self.v.as_ref().map(|v| tape.param("attn.v", v)),
        }
    }
}

pub struct BoundScorer<'a> {
    scorer: &'a AttentionScorer,
    w: Option<Var>,
    v: Option<Var>,
}

/// Encoder-side projections cached for one utterance/segment.
pub struct PreparedAttention<'a> {
    scorer: &'a AttentionScorer,
    /// The raw `[S'×M]` encoder states.
    enc: Var,
    /// Bilinear: `H·W [S'×N]`; MLP: `H·W_eᵀ [S'×A]`.
    projected: Option<Var>,
    /// MLP decoder-side weight `W_d [A×N]` and readout `V [A]`.
    mlp: Option<(Var, Var)>,
    pub n_states: usize,
}

impl BoundScorer<'_> {
    /// Validate the encoder states and cache their projection.
    pub fn prepare(&self, enc: &Var) -> Result<PreparedAttention<'_>> {
        let shape = enc.shape();
        if shape.len() != 2 || shape[1] != self.scorer.enc_size {
            return Err(Error::Dimension(format!(
                "attention expects [S' × {}], got {shape:?}",
                self.scorer.enc_size
            )));
        }
        if shape[0] == 0 {
            return Err(Error::Dimension(
                "empty segment reached attention: no encoder states".into(),
            ));
        }
        let m = self.scorer.enc_size;
        let (projected, mlp) = match self.scorer.kind {
            ScorerKind::Dot => (None, None),
            ScorerKind::Bilinear => {
                let w = self.w.as_ref().expect("bilinear has w");
                (Some(enc.matmul(w)?), None)
            }
            ScorerKind::Mlp => {
                let w = self.w.as_ref().expect("mlp has w");
                let v = self.v.as_ref().expect("mlp has v");
                let w_e = w.slice_cols(0, m)?;
                let w_d = w.slice_cols(m, self.scorer.dec_size)?;
                (Some(enc.matmul(&w_e.transpose()?)?), Some((w_d, v.clone())))
            }
        };
        Ok(PreparedAttention {
            scorer: self.scorer,
            enc: enc.clone(),
            projected,
            mlp,
            n_states: shape[0],
        })
    }

    /// One encoder state against one decoder state, straight from the
    /// scoring formula.
    pub fn score_single(&self, h_e: &Var, h_d: &Var) -> Result<Var> {
        if h_e.shape() != [self.scorer.enc_size] || h_d.shape() != [self.scorer.dec_size] {
            return Err(Error::Dimension(format!(
                "score expects [{}] and [{}], got {:?} and {:?}",
                self.scorer.enc_size,
                self.scorer.dec_size,
                h_e.shape(),
                h_d.shape()
            )));
        }
        match self.scorer.kind {
            ScorerKind::Dot => Ok(h_e.mul(h_d)?.sum()),
            ScorerKind::Bilinear => {
                let w = self.w.as_ref().expect("bilinear has w");
                Ok(h_e.mul(&w.matmul(h_d)?)?.sum())
            }
            ScorerKind::Mlp => {
                let w = self.w.as_ref().expect("mlp has w");
                let v = self.v.as_ref().expect("mlp has v");
                let hidden = w.matmul(&Var::concat(&[h_e, h_d])?)?.tanh();
                Ok(v.mul(&hidden)?.sum())
            }
        }
    }
}

impl PreparedAttention<'_> {
    /// Softmax-normalized weights over all encoder states and the
    /// weighted-sum context for one decoder state.
    pub fn attend(&self, h_d: &Var) -> Result<AttentionStep> {
        if h_d.shape() != [self.scorer.dec_size] {
            return Err(Error::Dimension(format!(
                "decoder state must be [{}], got {:?}",
                self.scorer.dec_size,
                h_d.shape()
            )));
        }
        let scores = match self.scorer.kind {
            ScorerKind::Dot => self.enc.matmul(h_d)?,
            ScorerKind::Bilinear => self
                .projected
                .as_ref()
                .expect("prepared bilinear")
                .matmul(h_d)?,
            ScorerKind::Mlp => {
                let (w_d, v) = self.mlp.as_ref().expect("prepared mlp");
                let shifted = self
                    .projected
                    .as_ref()
                    .expect("prepared mlp")
                    .add(&w_d.matmul(h_d)?)?;
                shifted.tanh().matmul(v)?
            }
        };
        let weights = scores.softmax()?;
        let context = weights.matmul(&self.enc)?;
        Ok(AttentionStep { context, weights })
    }
}

pub struct AttentionStep {
    pub context: Var,
    pub weights: Var,
}
