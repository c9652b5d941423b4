//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Operations append nodes to a shared arena as they execute; node ids
//! only ever reference earlier nodes, so a single reverse sweep over the
//! arena is a topological traversal that finalizes every consumer's
//! adjoint before the producer's gradient is read. A tape and its `Var`
//! handles are confined to one thread; frozen parameter tensors are
//! plain data and can be shared across tapes freely.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    /// `[m×n] + [n]`, rhs added to every row.
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    Slice {
        src: usize,
        start: usize,
    },
    SliceCols {
        src: usize,
        start: usize,
    },
    StackRows(Vec<usize>),
    PickRow {
        src: usize,
        row: usize,
    },
    Sum(usize),
    /// Mean negative floored log-likelihood of `targets` under `pred` rows.
    CrossEntropy {
        pred: usize,
        targets: Vec<usize>,
        floor: f64,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    /// name -> node id for bound parameters (deduplicated by name).
    params: HashMap<String, usize>,
}

/// Shared handle to the recording arena.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one tensor-valued node on a tape.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            data,
            grad: None,
            op,
            needs_grad,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// Non-trainable input node (gradient tracking follows the tensor's flag).
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn leaf_vector(&self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(vec![n], data, Op::Leaf, false)
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Var {
        let numel = shape.iter().product();
        self.push(shape, vec![0.0; numel], Op::Leaf, false)
    }

    /// Trainable parameter bound under a unique name. Binding the same
    /// name again returns the original node so gradients accumulate in
    /// one place.
    pub fn param(&self, name: &str, t: &Tensor) -> Var {
        if let Some(&id) = self.inner.borrow().params.get(name) {
            return Var {
                tape: self.clone(),
                id,
            };
        }
        let var = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true);
        self.inner
            .borrow_mut()
            .params
            .insert(name.to_string(), var.id);
        var
    }

    /// Run the reverse sweep from a scalar loss. Existing gradients are
    /// cleared first, so repeating the sweep reproduces the same result.
    pub fn backward(&self, loss: &Var) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.nodes[loss.id].data.len() != 1 {
            return Err(Error::Usage(format!(
                "backward seed must be scalar, got shape {:?}",
                inner.nodes[loss.id].shape
            )));
        }
        for node in inner.nodes.iter_mut() {
            node.grad = None;
        }
        if !inner.nodes[loss.id].needs_grad {
            return Ok(()); // nothing upstream is trainable
        }
        inner.nodes[loss.id].grad = Some(vec![1.0]);

        for i in (0..=loss.id).rev() {
            let (before, rest) = inner.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let out_grad = match node.grad.take() {
                Some(g) => g,
                None => continue,
            };
            backprop_one(node, &out_grad, before);
            node.grad = Some(out_grad);
        }
        Ok(())
    }

    /// Gradients of every bound parameter, zeros where a bound parameter
    /// was never consumed. Sorted by name.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let inner = self.inner.borrow();
        let mut out = BTreeMap::new();
        for (name, &id) in inner.params.iter() {
            let node = &inner.nodes[id];
            let data = node
                .grad
                .clone()
                .unwrap_or_else(|| vec![0.0; node.data.len()]);
            out.insert(
                name.clone(),
                Tensor::new(node.shape.clone(), data).expect("grad shape matches node"),
            );
        }
        out
    }

    /// Gradient of an arbitrary node, if the last backward reached it.
    pub fn grad(&self, var: &Var) -> Option<Tensor> {
        let inner = self.inner.borrow();
        let node = &inner.nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.shape.clone(), g.clone()).expect("grad shape matches node"))
    }
}

/// Propagate `out_grad` of `node` into its parents (all at ids < node's).
fn backprop_one(node: &Node, out_grad: &[f64], parents: &mut [Node]) {
    // Two-parent ops may alias the same parent; accumulate sequentially.
    macro_rules! grad_buf {
        ($id:expr) => {{
            let p = &mut parents[$id];
            if !p.needs_grad {
                None
            } else {
                // Size from the shape: data may be temporarily moved out
                // while the sibling operand of an aliased op is processed.
                let numel = p.shape.iter().product();
                Some(p.grad.get_or_insert_with(|| vec![0.0; numel]).as_mut_slice())
            }
        }};
    }

    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k, n) = matmul_dims(&parents[*a].shape, &parents[*b].shape)
                .expect("validated at record time");
            // dA += dC · Bᵀ
            if parents[*a].needs_grad {
                let b_data = std::mem::take(&mut parents[*b].data);
                {
                    let ga = grad_buf!(*a).unwrap();
                    if n == 1 {
                        // Rank-1 outer product, one axpy per row.
                        for i in 0..m {
                            let g = out_grad[i];
                            if g != 0.0 {
                                axpy(&mut ga[i * k..(i + 1) * k], &b_data, g);
                            }
                        }
                    } else {
                        for i in 0..m {
                            let gc = &out_grad[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &b_data[p * n..(p + 1) * n];
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += gc[j] * brow[j];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                }
                parents[*b].data = b_data;
            }
            // dB += Aᵀ · dC
            if parents[*b].needs_grad {
                let a_data = std::mem::take(&mut parents[*a].data);
                {
                    let gb = grad_buf!(*b).unwrap();
                    if n == 1 {
                        for i in 0..m {
                            let g = out_grad[i];
                            if g != 0.0 {
                                axpy(gb, &a_data[i * k..(i + 1) * k], g);
                            }
                        }
                    } else {
                        for i in 0..m {
                            let gc = &out_grad[i * n..(i + 1) * n];
                            let arow = &a_data[i * k..(i + 1) * k];
                            for p in 0..k {
                                let aip = arow[p];
                                if aip != 0.0 {
                                    let gbrow = &mut gb[p * n..(p + 1) * n];
                                    for j in 0..n {
                                        gbrow[j] += aip * gc[j];
                                    }
                                }
                            }
                        }
                    }
                }
                parents[*a].data = a_data;
            }
        }
        Op::Transpose(a) => {
            let rows = parents[*a].shape[0];
            let cols = parents[*a].shape[1];
            if let Some(ga) = grad_buf!(*a) {
                for i in 0..rows {
                    for j in 0..cols {
                        ga[i * cols + j] += out_grad[j * rows + i];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = grad_buf!(*a) {
                axpy(ga, out_grad, 1.0);
            }
            if let Some(gb) = grad_buf!(*b) {
                axpy(gb, out_grad, 1.0);
            }
        }
        Op::AddRow(a, b) => {
            if let Some(ga) = grad_buf!(*a) {
                axpy(ga, out_grad, 1.0);
            }
            if let Some(gb) = grad_buf!(*b) {
                let n = gb.len();
                for chunk in out_grad.chunks_exact(n) {
                    axpy(gb, chunk, 1.0);
                }
            }
        }
        Op::Mul(a, b) => {
            if parents[*a].needs_grad {
                let b_data = std::mem::take(&mut parents[*b].data);
                {
                    let ga = grad_buf!(*a).unwrap();
                    for ((g, &og), &bv) in ga.iter_mut().zip(out_grad).zip(&b_data) {
                        *g += og * bv;
                    }
                }
                parents[*b].data = b_data;
            }
            if parents[*b].needs_grad {
                let a_data = std::mem::take(&mut parents[*a].data);
                {
                    let gb = grad_buf!(*b).unwrap();
                    for ((g, &og), &av) in gb.iter_mut().zip(out_grad).zip(&a_data) {
                        *g += og * av;
                    }
                }
                parents[*a].data = a_data;
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = grad_buf!(*a) {
                axpy(ga, out_grad, *c);
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = grad_buf!(*a) {
                for ((g, &og), &y) in ga.iter_mut().zip(out_grad).zip(&node.data) {
                    *g += og * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = grad_buf!(*a) {
                for ((g, &og), &y) in ga.iter_mut().zip(out_grad).zip(&node.data) {
                    *g += og * y * (1.0 - y);
                }
            }
        }
        Op::Softmax(a) => {
            if let Some(ga) = grad_buf!(*a) {
                let n = *node.shape.last().expect("softmax input is non-empty");
                for r in 0..node.data.len() / n {
                    let y = &node.data[r * n..(r + 1) * n];
                    let og = &out_grad[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(og).map(|(&yi, &gi)| yi * gi).sum();
                    let gr = &mut ga[r * n..(r + 1) * n];
                    for j in 0..n {
                        gr[j] += y[j] * (og[j] - dot);
                    }
                }
            }
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = parents[p].data.len();
                if let Some(gp) = grad_buf!(p) {
                    axpy(gp, &out_grad[offset..offset + len], 1.0);
                }
                offset += len;
            }
        }
        Op::Slice { src, start } => {
            if let Some(gs) = grad_buf!(*src) {
                axpy(&mut gs[*start..*start + out_grad.len()], out_grad, 1.0);
            }
        }
        Op::SliceCols { src, start } => {
            let src_cols = parents[*src].shape[1];
            if let Some(gs) = grad_buf!(*src) {
                let cols = node.shape[1];
                for (r, chunk) in out_grad.chunks_exact(cols).enumerate() {
                    let dst = &mut gs[r * src_cols + start..r * src_cols + start + cols];
                    axpy(dst, chunk, 1.0);
                }
            }
        }
        Op::StackRows(parts) => {
            let cols = node.shape[1];
            for (r, &p) in parts.iter().enumerate() {
                if let Some(gp) = grad_buf!(p) {
                    axpy(gp, &out_grad[r * cols..(r + 1) * cols], 1.0);
                }
            }
        }
        Op::PickRow { src, row } => {
            if let Some(gs) = grad_buf!(*src) {
                let cols = node.data.len();
                axpy(&mut gs[row * cols..(row + 1) * cols], out_grad, 1.0);
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = grad_buf!(*a) {
                let g = out_grad[0];
                for v in ga.iter_mut() {
                    *v += g;
                }
            }
        }
        Op::CrossEntropy {
            pred,
            targets,
            floor,
        } => {
            if parents[*pred].needs_grad {
                let cols = parents[*pred].shape[1];
                let inv_t = 1.0 / targets.len() as f64;
                let seed = out_grad[0];
                let pred_data = std::mem::take(&mut parents[*pred].data);
                {
                    let gp = grad_buf!(*pred).unwrap();
                    for (t, &y) in targets.iter().enumerate() {
                        let p = pred_data[t * cols + y];
                        if p > *floor {
                            gp[t * cols + y] -= seed * inv_t / p;
                        }
                    }
                }
                parents[*pred].data = pred_data;
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// (m, k, n) for the supported operand ranks; vectors act as a single
/// row (lhs) or column (rhs).
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    let (m, ka) = match a {
        [m, k] => (*m, *k),
        [k] => (1, *k),
        _ => {
            return Err(Error::Dimension(format!(
                "matmul lhs must be rank 1 or 2, got {a:?}"
            )))
        }
    };
    let (kb, n) = match b {
        [k, n] => (*k, *n),
        [k] => (*k, 1),
        _ => {
            return Err(Error::Dimension(format!(
                "matmul rhs must be rank 1 or 2, got {b:?}"
            )))
        }
    };
    if ka != kb {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {a:?} × {b:?}"
        )));
    }
    Ok((m, ka, n))
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].data.len()
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].data)
    }

    pub fn tensor(&self) -> Tensor {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        Tensor::new(node.shape.clone(), node.data.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self) -> f64 {
        self.with_data(|d| {
            debug_assert_eq!(d.len(), 1);
            d[0]
        })
    }

    /// Index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        self.with_data(|d| {
            let mut best = 0;
            for (i, &v) in d.iter().enumerate() {
                if v > d[best] {
                    best = i;
                }
            }
            best
        })
    }

    fn same_tape(&self, other: &Var) {
        debug_assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars belong to different tapes"
        );
    }

    fn binary(&self, other: &Var, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.same_tape(other);
        let needs = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].needs_grad || inner.nodes[other.id].needs_grad
        };
        self.tape.push(shape, data, op, needs)
    }

    fn unary(&self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Var {
        let needs = self.tape.inner.borrow().nodes[self.id].needs_grad;
        self.tape.push(shape, data, op, needs)
    }

    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        self.same_tape(rhs);
        let (shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[rhs.id];
            let (m, k, n) = matmul_dims(&a.shape, &b.shape)?;
            let mut out = vec![0.0; m * n];
            if n == 1 {
                // Matrix-vector: one dot product per output row.
                for (i, o) in out.iter_mut().enumerate() {
                    let arow = &a.data[i * k..(i + 1) * k];
                    *o = arow.iter().zip(&b.data).map(|(&x, &y)| x * y).sum();
                }
            } else {
                for i in 0..m {
                    let arow = &a.data[i * k..(i + 1) * k];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (p, &aip) in arow.iter().enumerate() {
                        let brow = &b.data[p * n..(p + 1) * n];
                        for j in 0..n {
                            orow[j] += aip * brow[j];
                        }
                    }
                }
            }
            let shape = match (a.shape.len(), b.shape.len()) {
                (2, 2) => vec![m, n],
                (2, 1) => vec![m],
                (1, 2) => vec![n],
                _ => vec![],
            };
            (shape, out)
        };
        Ok(self.binary(rhs, Op::MatMul(self.id, rhs.id), shape, data))
    }

    pub fn transpose(&self) -> Result<Var> {
        let (shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            if a.shape.len() != 2 {
                return Err(Error::Dimension(format!(
                    "transpose expects rank 2, got {:?}",
                    a.shape
                )));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = a.data[i * c + j];
                }
            }
            (vec![c, r], out)
        };
        Ok(self.unary(Op::Transpose(self.id), shape, data))
    }

    /// Elementwise addition; a rank-1 rhs of size `n` broadcasts over the
    /// rows of a rank-2 `[m×n]` lhs.
    pub fn add(&self, rhs: &Var) -> Result<Var> {
        self.same_tape(rhs);
        let (op, shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[rhs.id];
            if a.shape == b.shape {
                let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
                (Op::Add(self.id, rhs.id), a.shape.clone(), data)
            } else if a.shape.len() == 2 && b.shape.len() == 1 && a.shape[1] == b.shape[0] {
                let n = b.shape[0];
                let mut data = a.data.clone();
                for chunk in data.chunks_exact_mut(n) {
                    for (d, &bv) in chunk.iter_mut().zip(&b.data) {
                        *d += bv;
                    }
                }
                (Op::AddRow(self.id, rhs.id), a.shape.clone(), data)
            } else {
                return Err(Error::Dimension(format!(
                    "add shapes incompatible: {:?} vs {:?}",
                    a.shape, b.shape
                )));
            }
        };
        Ok(self.binary(rhs, op, shape, data))
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var> {
        self.same_tape(rhs);
        let (shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[rhs.id];
            if a.shape != b.shape {
                return Err(Error::Dimension(format!(
                    "mul shapes differ: {:?} vs {:?}",
                    a.shape, b.shape
                )));
            }
            let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect();
            (a.shape.clone(), data)
        };
        Ok(self.binary(rhs, Op::Mul(self.id, rhs.id), shape, data))
    }

    pub fn scale(&self, c: f64) -> Var {
        let (shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|&x| c * x).collect())
        };
        self.unary(Op::Scale(self.id, c), shape, data)
    }

    pub fn tanh(&self) -> Var {
        let (shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|x| x.tanh()).collect())
        };
        self.unary(Op::Tanh(self.id), shape, data)
    }

    pub fn sigmoid(&self) -> Var {
        let (shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            (
                a.shape.clone(),
                a.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
            )
        };
        self.unary(Op::Sigmoid(self.id), shape, data)
    }

    /// Max-subtracted softmax over the last axis (rows of a matrix, the
    /// whole of a vector).
    pub fn softmax(&self) -> Result<Var> {
        let (shape, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let n = match a.shape.last() {
                Some(&n) if n > 0 => n,
                _ => {
                    return Err(Error::Dimension(format!(
                        "softmax needs a non-empty axis, got {:?}",
                        a.shape
                    )))
                }
            };
            let mut data = vec![0.0; a.data.len()];
            for (row, out) in a.data.chunks_exact(n).zip(data.chunks_exact_mut(n)) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (o, &x) in out.iter_mut().zip(row) {
                    *o = (x - max).exp();
                    sum += *o;
                }
                for o in out.iter_mut() {
                    *o /= sum;
                }
            }
            (a.shape.clone(), data)
        };
        Ok(self.unary(Op::Softmax(self.id), shape, data))
    }

    pub fn concat(parts: &[&Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero vars".into()))?;
        let tape = first.tape.clone();
        let (data, ids, needs) = {
            let inner = tape.inner.borrow();
            let mut data = Vec::new();
            let mut ids = Vec::with_capacity(parts.len());
            let mut needs = false;
            for v in parts {
                first.same_tape(v);
                let node = &inner.nodes[v.id];
                if node.shape.len() != 1 {
                    return Err(Error::Dimension(format!(
                        "concat expects rank-1 parts, got {:?}",
                        node.shape
                    )));
                }
                data.extend_from_slice(&node.data);
                ids.push(v.id);
                needs |= node.needs_grad;
            }
            (data, ids, needs)
        };
        let n = data.len();
        Ok(tape.push(vec![n], data, Op::Concat(ids), needs))
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Var> {
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            if a.shape.len() != 1 || start + len > a.shape[0] {
                return Err(Error::Dimension(format!(
                    "slice [{start}, {}) out of rank-1 {:?}",
                    start + len,
                    a.shape
                )));
            }
            a.data[start..start + len].to_vec()
        };
        Ok(self.unary(Op::Slice { src: self.id, start }, vec![len], data))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let (rows, data) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            if a.shape.len() != 2 || start + len > a.shape[1] {
                return Err(Error::Dimension(format!(
                    "column slice [{start}, {}) out of {:?}",
                    start + len,
                    a.shape
                )));
            }
            let cols = a.shape[1];
            let mut data = Vec::with_capacity(a.shape[0] * len);
            for r in 0..a.shape[0] {
                data.extend_from_slice(&a.data[r * cols + start..r * cols + start + len]);
            }
            (a.shape[0], data)
        };
        Ok(self.unary(
            Op::SliceCols { src: self.id, start },
            vec![rows, len],
            data,
        ))
    }

    pub fn stack_rows(parts: &[&Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("stack of zero rows".into()))?;
        let tape = first.tape.clone();
        let (cols, data, ids, needs) = {
            let inner = tape.inner.borrow();
            let cols = inner.nodes[first.id].shape[0];
            let mut data = Vec::with_capacity(parts.len() * cols);
            let mut ids = Vec::with_capacity(parts.len());
            let mut needs = false;
            for v in parts {
                first.same_tape(v);
                let node = &inner.nodes[v.id];
                if node.shape != [cols] {
                    return Err(Error::Dimension(format!(
                        "stack rows expects uniform rank-1 [{cols}], got {:?}",
                        node.shape
                    )));
                }
                data.extend_from_slice(&node.data);
                ids.push(v.id);
                needs |= node.needs_grad;
            }
            (cols, data, ids, needs)
        };
        Ok(tape.push(vec![parts.len(), cols], data, Op::StackRows(ids), needs))
    }

    pub fn pick_row(&self, row: usize) -> Result<Var> {
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            if a.shape.len() != 2 || row >= a.shape[0] {
                return Err(Error::Dimension(format!(
                    "row {row} out of {:?}",
                    a.shape
                )));
            }
            let cols = a.shape[1];
            a.data[row * cols..(row + 1) * cols].to_vec()
        };
        let len = data.len();
        Ok(self.unary(Op::PickRow { src: self.id, row }, vec![len], data))
    }

    pub fn sum(&self) -> Var {
        let total: f64 = self.with_data(|d| d.iter().sum());
        self.unary(Op::Sum(self.id), vec![], vec![total])
    }

    /// `-(1/T) Σ_t log max(pred[t][targets[t]], floor)` for rank-2 `pred`
    /// whose rows are probability distributions.
    pub fn cross_entropy(&self, targets: &[usize], floor: f64) -> Result<Var> {
        let loss = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            if a.shape.len() != 2 || a.shape[0] != targets.len() {
                return Err(Error::Dimension(format!(
                    "cross entropy: pred {:?} vs {} targets",
                    a.shape,
                    targets.len()
                )));
            }
            let cols = a.shape[1];
            let mut total = 0.0;
            for (t, &y) in targets.iter().enumerate() {
                if y >= cols {
                    return Err(Error::Data(format!(
                        "target {y} at position {t} outside vocabulary of {cols}"
                    )));
                }
                total -= a.data[t * cols + y].max(floor).ln();
            }
            total / targets.len() as f64
        };
        Ok(self.unary(
            Op::CrossEntropy {
                pred: self.id,
                targets: targets.to_vec(),
                floor,
            },
            vec![],
            vec![loss],
        ))
    }
}
