//! Gradient verification fixtures: every layer type wired into a scalar
//! loss and compared against central finite differences. Used by the
//! test and acceptance suites.

use crate::error::Result;
use crate::network::{
    cross_entropy_loss, Affine, AttentionScorer, Embedding, EncoderStack, LstmCell, ScorerKind,
};
use crate::numerics::check::max_gradient_error;
use crate::numerics::{SeededRng, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layer: &'static str,
    pub coords_checked: usize,
    pub worst_rel_err: f64,
}

/// Flattened-parameter gradient check. `build` reconstructs the network
/// from a parameter vector and returns the loss node; analytic gradients
/// come from one taped backward pass, finite differences from
/// re-evaluating `build` with perturbed coordinates.
fn run_check(
    layer: &'static str,
    specs: &[(&str, Vec<usize>)],
    theta: &[f64],
    build: &dyn Fn(&Tape, &[f64]) -> Result<Var>,
    max_coords: usize,
    seed: u64,
) -> GradCheckReport {
    let total: usize = specs.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    assert_eq!(total, theta.len(), "{layer}: parameter vector size");

    let tape = Tape::new();
    let loss = build(&tape, theta).expect("forward pass builds");
    tape.backward(&loss).expect("backward runs");
    let grads = tape.param_grads();
    let mut analytic = Vec::with_capacity(theta.len());
    for (name, shape) in specs {
        let g = grads
            .get(*name)
            .unwrap_or_else(|| panic!("{layer}: no gradient recorded for {name}"));
        assert_eq!(g.shape(), &shape[..], "{layer}: {name} shape");
        analytic.extend_from_slice(g.data());
    }

    let mut coords: Vec<usize> = (0..theta.len()).collect();
    SeededRng::new(seed).shuffle(&mut coords);
    coords.truncate(max_coords.min(theta.len()));

    let mut eval = |t: &[f64]| -> f64 {
        let tape = Tape::new();
        build(&tape, t).expect("forward pass builds").scalar()
    };
    let worst = max_gradient_error(&mut eval, theta, &analytic, &coords, 1e-5);
    GradCheckReport {
        layer,
        coords_checked: coords.len(),
        worst_rel_err: worst,
    }
}

fn random_theta(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-scale, scale)).collect()
}

/// Scalar readout that couples every output coordinate: sum of
/// tanh(outputs) weighted by fixed pseudo-random coefficients.
fn readout(tape: &Tape, out: &Var, seed: u64) -> Result<Var> {
    let mut rng = SeededRng::new(seed);
    let n = out.numel();
    let weights: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let shape = out.shape();
    let w = tape.leaf(&Tensor::new(shape, weights)?);
    Ok(out.tanh().mul(&w)?.sum())
}

pub fn check_affine(seed: u64) -> GradCheckReport {
    let mut rng = SeededRng::new(seed);
    let (input, output) = (5, 4);
    let theta = random_theta(&mut rng, output * input + output, 0.8);
    let x: Vec<f64> = random_theta(&mut rng, input, 1.0);
    run_check(
        "affine",
        &[("aff.w", vec![output, input]), ("aff.b", vec![output])],
        &theta,
        &move |tape, t| {
            let mut layer = Affine::new("aff", input, output, &mut SeededRng::new(0));
            layer.w = Tensor::matrix(output, input, t[..output * input].to_vec())?.with_grad();
            layer.b = Tensor::vector(t[output * input..].to_vec()).with_grad();
            let bound = layer.bind(tape);
            let y = bound.apply_vec(&tape.leaf(&Tensor::vector(x.clone())))?;
            readout(tape, &y, 11)
        },
        60,
        seed,
    )
}

pub fn check_lstm_cell(seed: u64) -> GradCheckReport {
    let mut rng = SeededRng::new(seed);
    let (input, hidden, steps) = (4, 4, 3);
    let w_len = 4 * hidden * (input + hidden);
    let theta = random_theta(&mut rng, w_len + 4 * hidden, 0.5);
    let xs: Vec<Vec<f64>> = (0..steps).map(|_| random_theta(&mut rng, input, 1.0)).collect();
    run_check(
        "recurrent cell",
        &[
            ("cell.w", vec![4 * hidden, input + hidden]),
            ("cell.b", vec![4 * hidden]),
        ],
        &theta,
        &move |tape, t| {
            let mut cell = LstmCell::new("cell", input, hidden, &mut SeededRng::new(0));
            cell.w = Tensor::matrix(4 * hidden, input + hidden, t[..w_len].to_vec())?.with_grad();
            cell.b = Tensor::vector(t[w_len..].to_vec()).with_grad();
            let bound = cell.bind(tape);
            let mut state = crate::network::CellState::zeros(tape, hidden);
            let mut outs = Vec::new();
            for x in &xs {
                state = bound.step(&tape.leaf(&Tensor::vector(x.clone())), &state)?;
                outs.push(state.h.clone());
            }
            let refs: Vec<&Var> = outs.iter().collect();
            readout(tape, &Var::stack_rows(&refs)?, 13)
        },
        60,
        seed,
    )
}

pub fn check_encoder_stack(seed: u64) -> GradCheckReport {
    let mut rng = SeededRng::new(seed);
    let (dim, proj, hidden, frames) = (3, 4, 3, 16);
    // Collect the stack's own parameter layout, then overwrite values.
    let reference = EncoderStack::new("enc", dim, proj, hidden, &mut SeededRng::new(0));
    let specs: Vec<(String, Vec<usize>)> = reference
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    let total: usize = specs.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let theta = random_theta(&mut rng, total, 0.4);
    let x: Vec<f64> = random_theta(&mut rng, frames * dim, 1.0);
    let spec_refs: Vec<(&str, Vec<usize>)> =
        specs.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
    run_check(
        "bidirectional stack",
        &spec_refs,
        &theta,
        &move |tape, t| {
            let mut stack = EncoderStack::new("enc", dim, proj, hidden, &mut SeededRng::new(0));
            let mut offset = 0;
            for (_, param) in stack.params_mut() {
                let n = param.numel();
                *param = Tensor::new(param.shape().to_vec(), t[offset..offset + n].to_vec())?
                    .with_grad();
                offset += n;
            }
            let bound = stack.bind(tape);
            let (states, _) =
                bound.encode(&Tensor::matrix(frames, dim, x.clone())?, None, None)?;
            readout(tape, &states, 17)
        },
        60,
        seed,
    )
}

pub fn check_scorer(kind: ScorerKind, seed: u64) -> GradCheckReport {
    let mut rng = SeededRng::new(seed);
    let (m, n, a, s_states) = (4, 4, 3, 3);
    let enc: Vec<f64> = random_theta(&mut rng, s_states * m, 1.0);
    let hd: Vec<f64> = random_theta(&mut rng, n, 1.0);
    let (label, specs, len): (&'static str, Vec<(&str, Vec<usize>)>, usize) = match kind {
        // Dot has no parameters; differentiate through the states.
        ScorerKind::Dot => ("scorer (dot)", vec![("enc_in", vec![s_states, m])], s_states * m),
        ScorerKind::Bilinear => ("scorer (bilinear)", vec![("attn.w", vec![m, n])], m * n),
        ScorerKind::Mlp => (
            "scorer (mlp)",
            vec![("attn.w", vec![a, m + n]), ("attn.v", vec![a])],
            a * (m + n) + a,
        ),
    };
    let theta = random_theta(&mut rng, len, 0.6);
    run_check(
        label,
        &specs,
        &theta,
        &move |tape, t| {
            let mut scorer = AttentionScorer::new(kind, m, n, a, &mut SeededRng::new(0))?;
            let enc_var = match kind {
                ScorerKind::Dot => {
                    tape.param("enc_in", &Tensor::matrix(s_states, m, t.to_vec())?.with_grad())
                }
                ScorerKind::Bilinear => {
                    scorer.w = Some(Tensor::matrix(m, n, t.to_vec())?.with_grad());
                    tape.leaf(&Tensor::matrix(s_states, m, enc.clone())?)
                }
                ScorerKind::Mlp => {
                    scorer.w =
                        Some(Tensor::matrix(a, m + n, t[..a * (m + n)].to_vec())?.with_grad());
                    scorer.v = Some(Tensor::vector(t[a * (m + n)..].to_vec()).with_grad());
                    tape.leaf(&Tensor::matrix(s_states, m, enc.clone())?)
                }
            };
            let bound = scorer.bind(tape);
            let prepared = bound.prepare(&enc_var)?;
            let step = prepared.attend(&tape.leaf(&Tensor::vector(hd.clone())))?;
            // Couple both outputs into the loss.
            let c = readout(tape, &step.context, 19)?;
            let w = readout(tape, &step.weights, 23)?;
            Ok(c.add(&w)?.sum())
        },
        60,
        seed,
    )
}

pub fn check_embedding(seed: u64) -> GradCheckReport {
    let mut rng = SeededRng::new(seed);
    let (vocab, dim) = (6, 4);
    let theta = random_theta(&mut rng, vocab * dim, 0.8);
    let tokens = [0u32, 3, 5, 3];
    run_check(
        "embedding",
        &[("emb.table", vec![vocab, dim])],
        &theta,
        &move |tape, t| {
            let mut emb = Embedding::new("emb", vocab, dim, &mut SeededRng::new(0));
            emb.table = Tensor::matrix(vocab, dim, t.to_vec())?.with_grad();
            let bound = emb.bind(tape);
            let rows: Vec<Var> = tokens
                .iter()
                .map(|&tok| bound.lookup(tok))
                .collect::<Result<_>>()?;
            let refs: Vec<&Var> = rows.iter().collect();
            readout(tape, &Var::stack_rows(&refs)?, 29)
        },
        60,
        seed,
    )
}

pub fn check_loss(seed: u64) -> GradCheckReport {
    let mut rng = SeededRng::new(seed);
    let (t_len, classes) = (5, 6);
    let theta = random_theta(&mut rng, t_len * classes, 1.5);
    let targets: Vec<u32> = (0..t_len).map(|_| rng.below(classes) as u32).collect();
    run_check(
        "cross-entropy loss",
        &[("logits", vec![t_len, classes])],
        &theta,
        &move |tape, t| {
            let logits =
                tape.param("logits", &Tensor::matrix(t_len, classes, t.to_vec())?.with_grad());
            cross_entropy_loss(&logits.softmax()?, &targets)
        },
        60,
        seed,
    )
}

/// The full layer inventory at one seed.
pub fn check_all(seed: u64) -> Vec<GradCheckReport> {
    vec![
        check_affine(seed),
        check_lstm_cell(seed),
        check_encoder_stack(seed),
        check_scorer(ScorerKind::Dot, seed),
        check_scorer(ScorerKind::Bilinear, seed),
        check_scorer(ScorerKind::Mlp, seed),
        check_embedding(seed),
        check_loss(seed),
    ]
}
