//! Input projection plus three bidirectional recurrent layers, each
//! followed by temporal downsampling ×2. Total downsampling is ×8, so
//! one encoder state covers one eight-frame block.
//!
//! The forward direction can be seeded from a carry (keep-state
//! incremental decoding); the backward direction always restarts inside
//! the given input since it may not see future segments.

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tape, Tensor, Var};

use super::layers::{Affine, BoundAffine, BoundLstmCell, CellState, LstmCell};

pub const FRAMES_PER_BLOCK: usize = 8;
pub const ENCODER_LAYERS: usize = 3;

/// Right-pad `[S×D]` features with zero frames to a multiple of `unit`.
pub fn pad_frames(x: &Tensor, unit: usize) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Dimension(format!(
            "features must be [frames × dim], got {:?}",
            x.shape()
        )));
    }
    let (s, d) = (x.shape()[0], x.shape()[1]);
    let padded = s.div_ceil(unit) * unit;
    if padded == s {
        return Ok(x.clone());
    }
    let mut data = x.data().to_vec();
    data.resize(padded * d, 0.0);
    Tensor::matrix(padded, d, data)
}

/// Per-layer forward-direction recurrent state, threaded across
/// incremental steps in keep-state mode.
#[derive(Clone)]
pub struct EncoderCarry {
    pub layers: Vec<CellState>,
}

#[derive(Debug)]
pub struct EncoderStack {
    input_proj: Affine,
    layers: Vec<BiLstmLayer>,
    feature_dim: usize,
    hidden: usize,
}

#[derive(Debug)]
struct BiLstmLayer {
    fwd: LstmCell,
    bwd: LstmCell,
}

impl EncoderStack {
    pub fn new(prefix: &str, feature_dim: usize, proj: usize, hidden: usize, rng: &mut SeededRng) -> EncoderStack {
        let input_proj = Affine::new(&format!("{prefix}.proj"), feature_dim, proj, rng);
        let mut layers = Vec::with_capacity(ENCODER_LAYERS);
        for l in 0..ENCODER_LAYERS {
            let input = if l == 0 { proj } else { 2 * hidden };
            layers.push(BiLstmLayer {
                fwd: LstmCell::new(&format!("{prefix}.l{l}.f"), input, hidden, rng),
                bwd: LstmCell::new(&format!("{prefix}.l{l}.b"), input, hidden, rng),
            });
        }
        EncoderStack {
            input_proj,
            layers,
            feature_dim,
            hidden,
        }
    }

    /// Output feature size: both directions concatenated.
    pub fn output_size(&self) -> usize {
        2 * self.hidden
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.input_proj.params();
        for layer in &self.layers {
            out.extend(layer.fwd.params());
            out.extend(layer.bwd.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.input_proj.params_mut();
        for layer in &mut self.layers {
            out.extend(layer.fwd.params_mut());
            out.extend(layer.bwd.params_mut());
        }
        out
    }

    pub fn bind(&self, tape: &Tape) -> BoundEncoder<'_> {
        BoundEncoder {
            proj: self.input_proj.bind(tape),
            layers: self
                .layers
                .iter()
                .map(|l| (l.fwd.bind(tape), l.bwd.bind(tape)))
                .collect(),
            stack: self,
            tape: tape.clone(),
        }
    }

    /// Tensor-level convenience around [`BoundEncoder::encode`].
    pub fn encode(
        &self,
        x: &Tensor,
        carry: Option<&EncoderCarryTensors>,
    ) -> Result<(Tensor, EncoderCarryTensors)> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let carry_vars = carry.map(|c| c.to_vars(&tape));
        let (states, carry_out) = bound.encode(x, carry_vars.as_ref(), None)?;
        Ok((states.tensor(), EncoderCarryTensors::from_vars(&carry_out)))
    }
}

/// Carry in plain-tensor form for use across tapes/processes.
#[derive(Clone, Debug)]
pub struct EncoderCarryTensors {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl EncoderCarryTensors {
    pub fn to_vars(&self, tape: &Tape) -> EncoderCarry {
        EncoderCarry {
            layers: self
                .layers
                .iter()
                .map(|(h, c)| CellState {
                    h: tape.leaf(h),
                    c: tape.leaf(c),
                })
                .collect(),
        }
    }

    pub fn from_vars(carry: &EncoderCarry) -> EncoderCarryTensors {
        EncoderCarryTensors {
            layers: carry
                .layers
                .iter()
                .map(|s| (s.h.tensor(), s.c.tensor()))
                .collect(),
        }
    }
}

pub struct BoundEncoder<'a> {
    proj: BoundAffine,
    layers: Vec<(BoundLstmCell, BoundLstmCell)>,
    stack: &'a EncoderStack,
    tape: Tape,
}

impl BoundEncoder<'_> {
    /// Encode `[S×D]` features into `[ceil(S/8) × 2H]` states. The input
    /// is right-padded with zero frames to a multiple of eight first.
    /// `carry` seeds the forward direction of every layer; `None` means
    /// zeros, which produces identical output by construction.
    ///
    /// `dropout` is `(mask rng, rate)`, active during training only.
    pub fn encode(
        &self,
        x: &Tensor,
        carry: Option<&EncoderCarry>,
        mut dropout: Option<(&mut SeededRng, f64)>,
    ) -> Result<(Var, EncoderCarry)> {
        if x.rank() != 2 || x.shape()[1] != self.stack.feature_dim {
            return Err(Error::Config(format!(
                "encoder expects [S × {}], got {:?}",
                self.stack.feature_dim,
                x.shape()
            )));
        }
        if x.shape()[0] == 0 {
            return Err(Error::Dimension("cannot encode zero frames".into()));
        }
        if let Some(c) = carry {
            if c.layers.len() != self.layers.len() {
                return Err(Error::Config(format!(
                    "carry has {} layers, encoder has {}",
                    c.layers.len(),
                    self.layers.len()
                )));
            }
        }
        let padded = pad_frames(x, FRAMES_PER_BLOCK)?;
        let frames = self.tape.leaf(&padded);
        let projected = self.proj.apply_rows(&frames)?;

        let s = padded.shape()[0];
        let mut inputs: Vec<Var> = (0..s).map(|t| projected.pick_row(t)).collect::<Result<_>>()?;
        let mut carry_out = Vec::with_capacity(self.layers.len());
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            let hidden = fwd.hidden_size();
            let init = match carry {
                Some(c) => c.layers[l].clone(),
                None => CellState::zeros(&self.tape, hidden),
            };
            // Forward direction, seeded from the carry.
            let mut state = init;
            let mut fwd_states = Vec::with_capacity(inputs.len());
            for x_t in &inputs {
                state = fwd.step(x_t, &state)?;
                fwd_states.push(state.h.clone());
            }
            carry_out.push(state);
            // Backward direction always restarts at zero within this input.
            let mut state = CellState::zeros(&self.tape, hidden);
            let mut bwd_states = vec![None; inputs.len()];
            for (t, x_t) in inputs.iter().enumerate().rev() {
                state = bwd.step(x_t, &state)?;
                bwd_states[t] = Some(state.h.clone());
            }
            // Concatenate directions, then keep every 2nd timestep.
            let mut next = Vec::with_capacity(inputs.len() / 2);
            for t in (0..inputs.len()).step_by(2) {
                let b = bwd_states[t].take().expect("filled above");
                next.push(Var::concat(&[&fwd_states[t], &b])?);
            }
            inputs = next;
        }
        let refs: Vec<&Var> = inputs.iter().collect();
        let mut states = Var::stack_rows(&refs)?;
        if let Some((rng, rate)) = dropout.as_mut() {
            states = apply_dropout(&self.tape, &states, rng, *rate)?;
        }
        Ok((
            states,
            EncoderCarry {
                layers: carry_out,
            },
        ))
    }
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate). A no-op at rate 0.
pub fn apply_dropout(tape: &Tape, x: &Var, rng: &mut SeededRng, rate: f64) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| {
            if rng.uniform(0.0, 1.0) < rate {
                0.0
            } else {
                1.0 / keep
            }
        })
        .collect();
    let shape = x.shape();
    let mask = tape.leaf(&Tensor::new(shape, mask)?);
    x.mul(&mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_stack() -> EncoderStack {
        let mut rng = SeededRng::new(9);
        EncoderStack::new("enc", 4, 6, 5, &mut rng)
    }

    fn frames(s: usize, d: usize) -> Tensor {
        let mut rng = SeededRng::new(100 + s as u64);
        Tensor::matrix(s, d, (0..s * d).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn eight_frames_give_one_state() {
        let stack = small_stack();
        let (states, _) = stack.encode(&frames(8, 4), None).unwrap();
        assert_eq!(states.shape(), &[1, 10]);
    }

    #[test]
    fn sixteen_frames_give_two_states() {
        let stack = small_stack();
        let (states, _) = stack.encode(&frames(16, 4), None).unwrap();
        assert_eq!(states.shape(), &[2, 10]);
    }

    #[test]
    fn output_length_is_ceil_s_over_8() {
        let stack = small_stack();
        for s in 1..=64 {
            let (states, _) = stack.encode(&frames(s, 4), None).unwrap();
            assert_eq!(states.shape()[0], s.div_ceil(8), "S = {s}");
        }
    }

    #[test]
    fn zero_carry_equals_no_carry() {
        let stack = small_stack();
        let x = frames(24, 4);
        let zeros = EncoderCarryTensors {
            layers: (0..ENCODER_LAYERS)
                .map(|_| (Tensor::zeros(vec![5]), Tensor::zeros(vec![5])))
                .collect(),
        };
        let (a, _) = stack.encode(&x, None).unwrap();
        let (b, _) = stack.encode(&x, Some(&zeros)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn carry_changes_the_output() {
        let stack = small_stack();
        let x = frames(16, 4);
        let (_, carry) = stack.encode(&x, None).unwrap();
        let (a, _) = stack.encode(&x, None).unwrap();
        let (b, _) = stack.encode(&x, Some(&carry)).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn feature_dim_mismatch_is_config_error() {
        let stack = small_stack();
        let err = stack.encode(&frames(8, 3), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dropout_zero_is_identity_and_masks_scale() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let mut rng = SeededRng::new(5);
        let same = apply_dropout(&tape, &x, &mut rng, 0.0).unwrap();
        same.with_data(|d| assert_eq!(d, &[1.0, 2.0, 3.0, 4.0]));
        let mut rng = SeededRng::new(5);
        let dropped = apply_dropout(&tape, &x, &mut rng, 0.5).unwrap();
        dropped.with_data(|d| {
            for (i, &v) in d.iter().enumerate() {
                assert!(v == 0.0 || (v - 2.0 * (i as f64 + 1.0)).abs() < 1e-12);
            }
        });
    }
}
