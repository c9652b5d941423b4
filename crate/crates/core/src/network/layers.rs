//! Trainable layers: affine maps, LSTM-style gated cells, embeddings.
//!
//! Layers own plain tensors; `bind` puts them on a tape for one forward
//! pass and returns a lightweight handle that computes with `Var`s.

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tape, Tensor, Var};

/// Uniform ±sqrt(6/(fan_in+fan_out)) initialization.
pub fn glorot(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::matrix(rows, cols, data)
        .expect("rows*cols data")
        .with_grad()
}

/// y = W·x + b with W stored `[out × in]`.
#[derive(Debug)]
pub struct Affine {
    prefix: String,
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    pub fn new(prefix: &str, input: usize, output: usize, rng: &mut SeededRng) -> Affine {
        Affine {
            prefix: prefix.to_string(),
            w: glorot(rng, output, input),
            b: Tensor::zeros(vec![output]).with_grad(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.w", self.prefix), &self.w),
            (format!("{}.b", self.prefix), &self.b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.w", self.prefix), &mut self.w),
            (format!("{}.b", self.prefix), &mut self.b),
        ]
    }

    pub fn bind(&self, tape: &Tape) -> BoundAffine {
        BoundAffine {
            w: tape.param(&format!("{}.w", self.prefix), &self.w),
            b: tape.param(&format!("{}.b", self.prefix), &self.b),
        }
    }
}

pub struct BoundAffine {
    pub w: Var,
    pub b: Var,
}

impl BoundAffine {
    /// Apply to a single `[in]` vector.
    pub fn apply_vec(&self, x: &Var) -> Result<Var> {
        self.w.matmul(x)?.add(&self.b)
    }

    /// Apply to every row of an `[S × in]` matrix.
    pub fn apply_rows(&self, x: &Var) -> Result<Var> {
        x.matmul(&self.w.transpose()?)?.add(&self.b)
    }
}

/// Gated recurrent cell with input, forget, cell and output gates packed
/// into one `[4H × (I+H)]` weight. Forget-gate bias starts at +1.
#[derive(Debug)]
pub struct LstmCell {
    prefix: String,
    pub w: Tensor,
    pub b: Tensor,
    input: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: &str, input: usize, hidden: usize, rng: &mut SeededRng) -> LstmCell {
        let w = glorot(rng, 4 * hidden, input + hidden);
        let mut b = Tensor::zeros(vec![4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmCell {
            prefix: prefix.to_string(),
            w,
            b: b.with_grad(),
            input,
            hidden,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.w", self.prefix), &self.w),
            (format!("{}.b", self.prefix), &self.b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.w", self.prefix), &mut self.w),
            (format!("{}.b", self.prefix), &mut self.b),
        ]
    }

    pub fn bind(&self, tape: &Tape) -> BoundLstmCell {
        BoundLstmCell {
            w: tape.param(&format!("{}.w", self.prefix), &self.w),
            b: tape.param(&format!("{}.b", self.prefix), &self.b),
            hidden: self.hidden,
        }
    }
}

pub struct BoundLstmCell {
    w: Var,
    b: Var,
    hidden: usize,
}

/// Recurrent state (h, c) carried between steps.
#[derive(Clone)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

impl CellState {
    pub fn zeros(tape: &Tape, hidden: usize) -> CellState {
        CellState {
            h: tape.zeros(vec![hidden]),
            c: tape.zeros(vec![hidden]),
        }
    }
}

impl BoundLstmCell {
    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, x: &Var, state: &CellState) -> Result<CellState> {
        let h = self.hidden;
        let xh = Var::concat(&[x, &state.h])?;
        let gates = self.w.matmul(&xh)?.add(&self.b)?;
        let i = gates.slice(0, h)?.sigmoid();
        let f = gates.slice(h, h)?.sigmoid();
        let g = gates.slice(2 * h, h)?.tanh();
        let o = gates.slice(3 * h, h)?.sigmoid();
        let c = f.mul(&state.c)?.add(&i.mul(&g)?)?;
        let h_out = o.mul(&c.tanh())?;
        Ok(CellState { h: h_out, c })
    }
}

/// Token id -> dense vector lookup table.
#[derive(Debug)]
pub struct Embedding {
    prefix: String,
    pub table: Tensor,
}

impl Embedding {
    pub fn new(prefix: &str, vocab: usize, dim: usize, rng: &mut SeededRng) -> Embedding {
        Embedding {
            prefix: prefix.to_string(),
            table: glorot(rng, vocab, dim),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        vec![(format!("{}.table", self.prefix), &self.table)]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![(format!("{}.table", self.prefix), &mut self.table)]
    }

    pub fn bind(&self, tape: &Tape) -> BoundEmbedding {
        BoundEmbedding {
            table: tape.param(&format!("{}.table", self.prefix), &self.table),
            vocab: self.vocab_size(),
        }
    }
}

pub struct BoundEmbedding {
    table: Var,
    vocab: usize,
}

impl BoundEmbedding {
    pub fn lookup(&self, token: u32) -> Result<Var> {
        if token as usize >= self.vocab {
            return Err(Error::Data(format!(
                "token id {token} outside vocabulary of {}",
                self.vocab
            )));
        }
        self.table.pick_row(token as usize)
    }
}
