//! Every layer type against central finite differences.

use atisr::network::ScorerKind;
use atisr::verify::{
    check_affine, check_embedding, check_encoder_stack, check_loss, check_lstm_cell, check_scorer,
};

const TOLERANCE: f64 = 1e-6;

#[test]
fn affine_gradients() {
    let r = check_affine(101);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}

#[test]
fn lstm_cell_gradients() {
    let r = check_lstm_cell(102);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}

#[test]
fn bidirectional_stack_gradients() {
    let r = check_encoder_stack(103);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}

#[test]
fn dot_scorer_gradients() {
    let r = check_scorer(ScorerKind::Dot, 104);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}

#[test]
fn bilinear_scorer_gradients() {
    let r = check_scorer(ScorerKind::Bilinear, 105);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}

#[test]
fn mlp_scorer_gradients() {
    let r = check_scorer(ScorerKind::Mlp, 106);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}

#[test]
fn embedding_gradients() {
    let r = check_embedding(107);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}

#[test]
fn cross_entropy_gradients() {
    let r = check_loss(108);
    assert!(r.worst_rel_err < TOLERANCE, "{r:?}");
}
