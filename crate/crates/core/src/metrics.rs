//! Character error rate, recognition-delay accounting, and evaluation
//! reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::isr::{baseline_isr_decode, isr_decode, IsrConfig};
use crate::network::FRAMES_PER_BLOCK;
use crate::seq2seq::{greedy_decode, ModelRole, Seq2SeqModel};

/// Frame shift and window of the feature recipe, in seconds. One
/// eight-frame block spans (8-1)*shift + window = 137.5 ms.
pub const FRAME_SHIFT_SECONDS: f64 = 0.0125;
pub const FRAME_WINDOW_SECONDS: f64 = 0.050;

/// Unit-cost Levenshtein distance over characters.
pub fn edit_distance(reference: &str, hypothesis: &str) -> usize {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let mut prev: Vec<usize> = (0..=h.len()).collect();
    let mut cur = vec![0usize; h.len() + 1];
    for i in 1..=r.len() {
        cur[0] = i;
        for j in 1..=h.len() {
            let sub = prev[j - 1] + usize::from(r[i - 1] != h[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[h.len()]
}

/// Edit distance over the reference length. An empty reference is only
/// defined against an empty hypothesis (rate 0).
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    let ref_len = reference.chars().count();
    if ref_len == 0 {
        return if hypothesis.is_empty() {
            Ok(0.0)
        } else {
            Err(Error::Usage(
                "character error rate undefined: empty reference, non-empty hypothesis".into(),
            ))
        };
    }
    Ok(edit_distance(reference, hypothesis) as f64 / ref_len as f64)
}

/// Audio span a step must wait for before decoding: window frames
/// through the 12.5 ms shift and 50 ms window.
pub fn delay_seconds(cfg: &IsrConfig) -> f64 {
    let frames = FRAMES_PER_BLOCK * (cfg.look_back + cfg.main_blocks + cfg.look_ahead);
    (frames as f64 - 1.0) * FRAME_SHIFT_SECONDS + FRAME_WINDOW_SECONDS
}

/// Audio seconds spanned by `frames` feature frames.
pub fn frames_to_seconds(frames: usize) -> f64 {
    if frames == 0 {
        0.0
    } else {
        (frames as f64 - 1.0) * FRAME_SHIFT_SECONDS + FRAME_WINDOW_SECONDS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Whole-utterance greedy decoding.
    Full,
    /// Incremental decoding with the step/window machinery.
    Isr,
    /// Non-overlapping zero-padded segments, no transfer.
    Baseline,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EvalMode::Full => "full",
            EvalMode::Isr => "isr",
            EvalMode::Baseline => "baseline",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub id: String,
    pub reference_chars: usize,
    pub edits: usize,
    pub cer: f64,
    pub hypothesis: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    /// Micro-averaged: total edits over total reference characters.
    pub corpus_cer: f64,
    pub total_edits: usize,
    pub total_reference_chars: usize,
    /// First-segment audio span for incremental modes; the dataset's
    /// average utterance span for full decoding.
    pub delay_seconds: f64,
    pub utterances: Vec<UtteranceEval>,
    pub config: IsrConfig,
    pub model_hash: String,
    pub warnings: Vec<String>,
}

/// Cap for full-utterance greedy decoding, generous relative to the
/// longest plausible transcript of `blocks` encoder blocks.
pub fn full_decode_cap(blocks: usize) -> usize {
    4 * blocks + 16
}

/// Decode every utterance in the given mode and aggregate micro-averaged
/// CER. Pure given (model, dataset, cfg): rerunning yields an identical
/// report.
pub fn evaluate(
    model: &Seq2SeqModel,
    dataset: &Dataset,
    mode: EvalMode,
    cfg: &IsrConfig,
    model_hash: &str,
) -> Result<EvalReport> {
    let mut warnings = Vec::new();
    match (mode, model.role) {
        (EvalMode::Isr, ModelRole::Teacher) => warnings.push(
            "incremental decoding with a teacher-trained model: it was never taught </m>".into(),
        ),
        (EvalMode::Baseline, ModelRole::Student) => warnings.push(
            "baseline decoding with a student model: baseline is defined for teacher models".into(),
        ),
        (EvalMode::Full, ModelRole::Student) => warnings.push(
            "full decoding with a student model: it was trained on segments".into(),
        ),
        _ => {}
    }
    let evals: Vec<Result<UtteranceEval>> = dataset
        .utterances
        .par_iter()
        .map(|utt| {
            let x = utt.features.to_tensor();
            let hypothesis = match mode {
                EvalMode::Full => {
                    let blocks = utt.features.frames.div_ceil(FRAMES_PER_BLOCK);
                    let (tokens, _) = greedy_decode(model, &x, full_decode_cap(blocks))?;
                    model.vocab.decode_chars(&tokens)
                }
                EvalMode::Isr => isr_decode(model, &x, cfg)?.transcript(&model.vocab),
                EvalMode::Baseline => baseline_isr_decode(model, &x, cfg)?.transcript(&model.vocab),
            };
            let edits = edit_distance(&utt.transcript, &hypothesis);
            let reference_chars = utt.transcript.chars().count();
            Ok(UtteranceEval {
                id: utt.id.clone(),
                reference_chars,
                edits,
                cer: if reference_chars > 0 {
                    edits as f64 / reference_chars as f64
                } else {
                    0.0
                },
                hypothesis,
            })
        })
        .collect();
    let mut utterances = Vec::with_capacity(evals.len());
    for e in evals {
        utterances.push(e?);
    }
    let total_edits: usize = utterances.iter().map(|u| u.edits).sum();
    let total_reference_chars: usize = utterances.iter().map(|u| u.reference_chars).sum();
    let delay = match mode {
        EvalMode::Full => {
            let spans: f64 = dataset
                .utterances
                .iter()
                .map(|u| frames_to_seconds(u.features.frames))
                .sum();
            spans / dataset.len().max(1) as f64
        }
        _ => delay_seconds(cfg),
    };
    Ok(EvalReport {
        mode,
        corpus_cer: if total_reference_chars > 0 {
            total_edits as f64 / total_reference_chars as f64
        } else {
            0.0
        },
        total_edits,
        total_reference_chars,
        delay_seconds: delay,
        utterances,
        config: cfg.clone(),
        model_hash: model_hash.to_string(),
        warnings,
    })
}
