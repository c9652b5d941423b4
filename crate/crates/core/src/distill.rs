//! Attention-transfer distillation: collapse a teacher attention matrix
//! into a hard monotonic character-to-block alignment, then split each
//! utterance into per-step training targets that end in `</m>` (or
//! `</s>` for the final step).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenId, Vocabulary, BLOCK_END_ID, EOS_ID};
use crate::error::{Error, Result};
use crate::isr::IsrConfig;
use crate::network::FRAMES_PER_BLOCK;
use crate::seq2seq::{capture_alignment, AttentionMatrix, Seq2SeqModel};

/// One block index per teacher-forced output token (terminal `</s>`
/// included), non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicAlignment {
    pub assignment: Vec<usize>,
    /// Sum of the selected attention weights.
    pub score: f64,
}

impl MonotonicAlignment {
    /// Recompute the score from the matrix, accumulating in ascending t
    /// like the extraction itself.
    pub fn recompute_score(&self, a: &AttentionMatrix) -> f64 {
        let mut acc = 0.0;
        for (t, &s) in self.assignment.iter().enumerate() {
            acc += a.at(t, s);
        }
        acc
    }
}

/// Highest-scoring non-decreasing assignment of tokens to blocks:
/// maximize sum of A[t][b_t] subject to b_t <= b_{t+1} via
/// M[t][s] = A[t][s] + max_{s' <= s} M[t-1][s'] with parent pointers,
/// ties broken toward the smallest block index.
pub fn extract_monotonic_alignment(a: &AttentionMatrix) -> Result<MonotonicAlignment> {
    let (t_len, s_len) = (a.rows(), a.cols());
    if t_len == 0 || s_len == 0 {
        return Err(Error::Data(format!(
            "cannot align an empty attention matrix ({t_len}x{s_len})"
        )));
    }
    let mut score_row: Vec<f64> = a.row(0).to_vec();
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 1..t_len {
        // Prefix max over the previous row; strict comparison keeps the
        // smallest index on ties.
        let mut best_val = f64::NEG_INFINITY;
        let mut best_idx = 0;
        let mut next = vec![0.0; s_len];
        let mut parent = vec![0; s_len];
        for s in 0..s_len {
            if score_row[s] > best_val {
                best_val = score_row[s];
                best_idx = s;
            }
            next[s] = a.at(t, s) + best_val;
            parent[s] = best_idx;
        }
        parents.push(parent);
        score_row = next;
    }
    let mut end = 0;
    for s in 1..s_len {
        if score_row[s] > score_row[end] {
            end = s;
        }
    }
    let mut assignment = vec![0; t_len];
    assignment[t_len - 1] = end;
    for t in (1..t_len).rev() {
        assignment[t - 1] = parents[t - 1][assignment[t]];
    }
    Ok(MonotonicAlignment {
        assignment,
        score: score_row[end],
    })
}

/// Target tokens and input frame range of one incremental step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedStep {
    /// Widened (look-back/look-ahead) input range, clipped to the padded
    /// utterance; edges are zero-filled back to full width at use time.
    pub frame_start: usize,
    pub frame_end: usize,
    pub targets: Vec<TokenId>,
}

/// Per-step training view of one utterance under a fixed step
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedExample {
    pub utterance_id: String,
    /// Reference to the source feature file; empty for in-memory use.
    pub feature_path: String,
    /// Blocks of the utterance after padding to a whole number of
    /// blocks.
    pub total_blocks: usize,
    pub steps: Vec<SegmentedStep>,
}

impl SegmentedExample {
    /// Character tokens in order with `</m>`/`</s>` stripped; must
    /// reproduce the transcript.
    pub fn concatenated_targets(&self) -> Vec<TokenId> {
        self.steps
            .iter()
            .flat_map(|s| s.targets.iter())
            .copied()
            .filter(|&t| t != BLOCK_END_ID && t != EOS_ID)
            .collect()
    }
}

/// Number of steps needed to cover `total_blocks` in strides of
/// `main_blocks`.
pub fn step_count(total_blocks: usize, main_blocks: usize) -> usize {
    total_blocks.div_ceil(main_blocks)
}

/// Nominal (unclipped) window of step `n` in block units.
pub fn step_window_blocks(n: usize, cfg: &IsrConfig) -> (isize, isize) {
    let b = cfg.main_blocks as isize;
    (
        n as isize * b - cfg.look_back as isize,
        (n as isize + 1) * b + cfg.look_ahead as isize,
    )
}

/// Split a transcript into per-step targets from its alignment. Step n
/// owns main blocks [nB, (n+1)B); characters aligned there become its
/// targets followed by `</m>`; the final step ends with `</s>` instead.
/// The `</s>` row of the alignment is forcibly reassigned to the last
/// block so the utterance terminates exactly once, at the last segment.
pub fn segment_targets(
    align: &MonotonicAlignment,
    transcript: &[TokenId],
    cfg: &IsrConfig,
    total_blocks: usize,
) -> Result<SegmentedExample> {
    if align.assignment.len() != transcript.len() + 1 {
        return Err(Error::Data(format!(
            "alignment of {} rows does not match transcript of {} characters (+ </s>)",
            align.assignment.len(),
            transcript.len()
        )));
    }
    if total_blocks == 0 {
        return Err(Error::Data("utterance spans zero blocks".into()));
    }
    if let Some(&max) = align.assignment.iter().max() {
        if max >= total_blocks {
            return Err(Error::Data(format!(
                "alignment references block {max} of {total_blocks}"
            )));
        }
    }
    let b = cfg.main_blocks;
    let padded_blocks = step_count(total_blocks, b) * b;
    let n_steps = padded_blocks / b;
    let mut assignment = align.assignment.clone();
    *assignment.last_mut().expect("non-empty") = total_blocks - 1;

    let mut steps = Vec::with_capacity(n_steps);
    let mut cursor = 0usize;
    for n in 0..n_steps {
        let main_end_block = (n + 1) * b;
        let mut targets = Vec::new();
        while cursor < transcript.len() && assignment[cursor] < main_end_block {
            targets.push(transcript[cursor]);
            cursor += 1;
        }
        let last = n == n_steps - 1;
        targets.push(if last { EOS_ID } else { BLOCK_END_ID });
        let (w_start, w_end) = step_window_blocks(n, cfg);
        let frame_start = w_start.max(0) as usize * FRAMES_PER_BLOCK;
        let frame_end = (w_end.min(padded_blocks as isize)) as usize * FRAMES_PER_BLOCK;
        steps.push(SegmentedStep {
            frame_start,
            frame_end,
            targets,
        });
    }
    debug_assert_eq!(cursor, transcript.len(), "all characters assigned");
    Ok(SegmentedExample {
        utterance_id: String::new(),
        feature_path: String::new(),
        total_blocks: padded_blocks,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedUtterance {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedHeader {
    pub cfg: IsrConfig,
    pub teacher_hash: String,
    pub skipped: Vec<SkippedUtterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedDataset {
    pub header: SegmentedHeader,
    pub examples: Vec<SegmentedExample>,
}

/// Distill every utterance: teacher-forced attention capture, monotonic
/// alignment, segmentation. Failing utterances are recorded and skipped;
/// more than 10% failures aborts.
pub fn build_student_dataset(
    teacher: &Seq2SeqModel,
    corpus: &Dataset,
    cfg: &IsrConfig,
    teacher_hash: &str,
) -> Result<SegmentedDataset> {
    let results: Vec<(String, Result<SegmentedExample>)> = corpus
        .utterances
        .par_iter()
        .map(|utt| {
            let built = (|| -> Result<SegmentedExample> {
                let transcript = teacher.vocab.encode_transcript_strict(&utt.transcript)?;
                let x = utt.features.to_tensor();
                let attn = capture_alignment(teacher, &x, &utt.transcript)?;
                let align = extract_monotonic_alignment(&attn)?;
                let total_blocks = utt.features.frames.div_ceil(FRAMES_PER_BLOCK);
                let mut ex = segment_targets(&align, &transcript, cfg, total_blocks)?;
                ex.utterance_id = utt.id.clone();
                ex.feature_path = format!("features/{}.atfx", utt.id);
                Ok(ex)
            })();
            (utt.id.clone(), built)
        })
        .collect();

    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(ex) => examples.push(ex),
            Err(e) => skipped.push(SkippedUtterance {
                id,
                reason: e.to_string(),
            }),
        }
    }
    if !corpus.is_empty() && skipped.len() * 10 > corpus.len() {
        return Err(Error::Data(format!(
            "distillation failed on {} of {} utterances (> 10%): first failure: {} ({})",
            skipped.len(),
            corpus.len(),
            skipped[0].id,
            skipped[0].reason
        )));
    }
    Ok(SegmentedDataset {
        header: SegmentedHeader {
            cfg: cfg.clone(),
            teacher_hash: teacher_hash.to_string(),
            skipped,
        },
        examples,
    })
}

/// Line-delimited on-disk form: a header record, then one record per
/// utterance.
pub fn save_segmented(dataset: &SegmentedDataset, path: &std::path::Path) -> Result<()> {
    let mut body = serde_json::to_string(&dataset.header)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    body.push('\n');
    for ex in &dataset.examples {
        body.push_str(
            &serde_json::to_string(ex)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?,
        );
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_segmented(path: &std::path::Path) -> Result<SegmentedDataset> {
    let name = path.display().to_string();
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
    let mut lines = body.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Integrity(format!("{name}: empty segmented dataset")))?;
    let header: SegmentedHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::parse(name.clone(), format!("header: {e}")))?;
    let mut examples = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        examples.push(
            serde_json::from_str(line)
                .map_err(|e| Error::parse(name.clone(), format!("record {}: {e}", i + 1)))?,
        );
    }
    Ok(SegmentedDataset { header, examples })
}

/// The step targets a student trains on, with the step-initial decoder
/// input resolved per policy. The initial input of step 0 is `<s>`.
pub fn step_init_token(
    step_index: usize,
    prev_targets: Option<&[TokenId]>,
    init_policy: crate::isr::InitPolicy,
    vocab: &Vocabulary,
) -> TokenId {
    use crate::corpus::{BLOCK_START_ID, BOS_ID};
    if step_index == 0 {
        return BOS_ID;
    }
    match init_policy {
        crate::isr::InitPolicy::BeginBlockToken => BLOCK_START_ID,
        crate::isr::InitPolicy::LastPrevChar => prev_targets
            .and_then(|ts| ts.iter().rev().find(|&&t| vocab.is_char(t)))
            .copied()
            .unwrap_or(BLOCK_START_ID),
    }
}
