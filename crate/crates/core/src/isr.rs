//! Incremental recognition: train a student on segmented targets and
//! decode block-by-block; also the no-transfer baseline that decodes a
//! full-utterance model on zero-padded segments.

use serde::{Deserialize, Serialize};

use crate::corpus::{
    FeatureSequence, TokenId, Vocabulary, BLANK_ID, BLOCK_END_ID, BOS_ID, EOS_ID,
};
use crate::distill::{step_init_token, step_window_blocks, SegmentedDataset, SegmentedExample};
use crate::error::{Error, Result};
use crate::network::{ArchConfig, EncoderCarry, FRAMES_PER_BLOCK};
use crate::numerics::{SeededRng, Tape, Tensor, Var};
use crate::seq2seq::{run_training, ModelRole, Seq2SeqModel, TrainConfig, TrainingLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatePolicy {
    /// Thread the encoder's forward-direction carries and the decoder
    /// state across steps.
    Keep,
    /// Reinitialize all recurrent state at every step.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Each step after the first starts from `<m>`.
    BeginBlockToken,
    /// Each step starts from the previous step's last emitted character,
    /// falling back to `<m>` when that step emitted none.
    LastPrevChar,
}

/// Step geometry and policies for incremental recognition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsrConfig {
    /// Blocks transcribed per step; one block is eight frames (137.5 ms).
    pub main_blocks: usize,
    pub look_back: usize,
    pub look_ahead: usize,
    pub state_policy: StatePolicy,
    pub init_policy: InitPolicy,
    /// Cap K on tokens emitted within one step.
    pub max_step_outputs: usize,
}

impl Default for IsrConfig {
    fn default() -> Self {
        IsrConfig {
            main_blocks: 1,
            look_back: 0,
            look_ahead: 0,
            state_policy: StatePolicy::Keep,
            init_policy: InitPolicy::LastPrevChar,
            max_step_outputs: 30,
        }
    }
}

impl IsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.main_blocks == 0 {
            return Err(Error::Config("main_blocks must be at least 1".into()));
        }
        if self.max_step_outputs == 0 {
            return Err(Error::Config("max_step_outputs must be at least 1".into()));
        }
        Ok(())
    }

    /// Window width in frames, equal for every step.
    pub fn window_frames(&self) -> usize {
        FRAMES_PER_BLOCK * (self.look_back + self.main_blocks + self.look_ahead)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutput {
    /// Everything the step emitted, stop marker included.
    pub tokens: Vec<TokenId>,
    /// Input frames that had to arrive before this step could decode.
    pub frames_consumed: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IncrementalHypothesis {
    pub steps: Vec<StepOutput>,
    /// Character tokens only, in emission order.
    pub flat: Vec<TokenId>,
}

impl IncrementalHypothesis {
    pub fn transcript(&self, vocab: &Vocabulary) -> String {
        vocab.decode_chars(&self.flat)
    }
}

/// Slice frames `[start_block*8, end_block*8)` out of `x`, zero-filling
/// rows outside the real frame range.
fn window_tensor(x: &Tensor, start_block: isize, end_block: isize) -> Tensor {
    let (s, d) = (x.shape()[0] as isize, x.shape()[1]);
    let width = ((end_block - start_block) as usize) * FRAMES_PER_BLOCK;
    let mut data = vec![0.0; width * d];
    let first = start_block * FRAMES_PER_BLOCK as isize;
    for row in 0..width as isize {
        let src = first + row;
        if src >= 0 && src < s {
            let src = src as usize;
            data[(row as usize) * d..(row as usize + 1) * d]
                .copy_from_slice(&x.data()[src * d..(src + 1) * d]);
        }
    }
    Tensor::matrix(width, d, data).expect("consistent by construction")
}

/// Greedy incremental decoding. The input is padded to a whole number of
/// steps; each step assembles its window, encodes with carried or reset
/// state, and emits tokens until `</m>`, `</s>`, or K. `</s>` ends the
/// utterance.
pub fn isr_decode(
    model: &Seq2SeqModel,
    x: &Tensor,
    cfg: &IsrConfig,
) -> Result<IncrementalHypothesis> {
    cfg.validate()?;
    let frames = x.shape()[0];
    let stride = cfg.main_blocks * FRAMES_PER_BLOCK;
    let padded_frames = frames.div_ceil(stride) * stride;
    let padded_blocks = padded_frames / FRAMES_PER_BLOCK;
    let n_steps = padded_blocks / cfg.main_blocks;

    let tape = Tape::new();
    let bound = model.bind(&tape);
    let mut carry: Option<EncoderCarry> = None;
    let mut dec_state = bound.decoder.zero_state(&tape);
    let mut hyp = IncrementalHypothesis::default();
    let mut prev_step_tokens: Option<Vec<TokenId>> = None;

    'steps: for n in 0..n_steps {
        let (w_start, w_end) = step_window_blocks(n, cfg);
        let window = window_tensor(x, w_start, w_end);
        assert_eq!(
            window.shape()[0],
            cfg.window_frames(),
            "window width must be identical for every step"
        );
        let (enc, new_carry) = bound.encoder.encode(&window, carry.as_ref(), None)?;
        if cfg.state_policy == StatePolicy::Keep {
            carry = Some(new_carry);
        }
        if cfg.state_policy == StatePolicy::Reset {
            dec_state = bound.decoder.zero_state(&tape);
        }
        let prepared = bound.scorer.prepare(&enc)?;
        let mut prev = step_init_token(
            n,
            prev_step_tokens.as_deref(),
            cfg.init_policy,
            &model.vocab,
        );
        let frames_consumed = ((w_end.max(0) as usize) * FRAMES_PER_BLOCK).min(padded_frames);
        let mut tokens = Vec::new();
        for _ in 0..cfg.max_step_outputs {
            let step = bound.decoder.step(&tape, prev, &dec_state, &prepared, None)?;
            let token = step.dist.argmax() as TokenId;
            dec_state = step.state;
            tokens.push(token);
            if model.vocab.is_char(token) {
                hyp.flat.push(token);
            }
            prev = token;
            if token == EOS_ID {
                hyp.steps.push(StepOutput {
                    tokens,
                    frames_consumed,
                });
                break 'steps;
            }
            if token == BLOCK_END_ID {
                break;
            }
        }
        prev_step_tokens = Some(tokens.clone());
        hyp.steps.push(StepOutput {
            tokens,
            frames_consumed,
        });
    }
    Ok(hyp)
}

/// The no-transfer control: decode a full-utterance model on
/// non-overlapping `main_blocks`-sized segments, each with one zero
/// vector appended. Every segment restarts from `<s>` with fresh state
/// and stops on `</s>`, `<blank>`, or K; `</s>` ends only the segment.
pub fn baseline_isr_decode(
    model: &Seq2SeqModel,
    x: &Tensor,
    cfg: &IsrConfig,
) -> Result<IncrementalHypothesis> {
    cfg.validate()?;
    let frames = x.shape()[0];
    let d = x.shape()[1];
    let stride = cfg.main_blocks * FRAMES_PER_BLOCK;
    let padded_frames = frames.div_ceil(stride) * stride;
    let n_steps = padded_frames / stride;

    let tape = Tape::new();
    let bound = model.bind(&tape);
    let mut hyp = IncrementalHypothesis::default();
    for n in 0..n_steps {
        // Segment plus one appended zero vector.
        let seg = window_tensor(x, (n * cfg.main_blocks) as isize, ((n + 1) * cfg.main_blocks) as isize);
        let mut data = seg.into_data();
        data.extend(std::iter::repeat_n(0.0, d));
        let window = Tensor::matrix(stride + 1, d, data).expect("consistent");
        let (enc, _) = bound.encoder.encode(&window, None, None)?;
        let prepared = bound.scorer.prepare(&enc)?;
        let mut dec_state = bound.decoder.zero_state(&tape);
        let mut prev = BOS_ID;
        let mut tokens = Vec::new();
        for _ in 0..cfg.max_step_outputs {
            let step = bound.decoder.step(&tape, prev, &dec_state, &prepared, None)?;
            let token = step.dist.argmax() as TokenId;
            dec_state = step.state;
            tokens.push(token);
            if model.vocab.is_char(token) {
                hyp.flat.push(token);
            }
            prev = token;
            if token == EOS_ID || token == BLANK_ID {
                break;
            }
        }
        hyp.steps.push(StepOutput {
            tokens,
            frames_consumed: ((n + 1) * stride).min(padded_frames),
        });
    }
    Ok(hyp)
}

/// Features resolved against a segmented example, ready to train on.
pub struct StudentItem {
    pub features: Tensor,
    pub example: SegmentedExample,
}

impl StudentItem {
    pub fn new(features: &FeatureSequence, example: SegmentedExample) -> StudentItem {
        StudentItem {
            features: features.to_tensor(),
            example,
        }
    }
}

/// Teacher-forced loss over all step targets of one utterance,
/// threading state across steps per the policies.
fn student_utterance_pass(
    model: &Seq2SeqModel,
    cfg: &IsrConfig,
    item: &StudentItem,
    mut dropout: Option<(&mut SeededRng, f64)>,
) -> Result<(Tape, Var, Vec<TokenId>)> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let mut carry: Option<EncoderCarry> = None;
    let mut dec_state = bound.decoder.zero_state(&tape);
    let mut dists = Vec::new();
    let mut all_targets = Vec::new();
    for (n, step) in item.example.steps.iter().enumerate() {
        let (w_start, w_end) = step_window_blocks(n, cfg);
        let window = window_tensor(&item.features, w_start, w_end);
        let (enc, new_carry) = bound.encoder.encode(
            &window,
            carry.as_ref(),
            dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate)),
        )?;
        if cfg.state_policy == StatePolicy::Keep {
            carry = Some(new_carry);
        }
        if cfg.state_policy == StatePolicy::Reset {
            dec_state = bound.decoder.zero_state(&tape);
        }
        let prepared = bound.scorer.prepare(&enc)?;
        let prev_targets = if n > 0 {
            Some(item.example.steps[n - 1].targets.as_slice())
        } else {
            None
        };
        let mut prev = step_init_token(n, prev_targets, cfg.init_policy, &model.vocab);
        for &target in &step.targets {
            let s = bound.decoder.step(
                &tape,
                prev,
                &dec_state,
                &prepared,
                dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate)),
            )?;
            dists.push(s.dist);
            dec_state = s.state;
            all_targets.push(target);
            prev = target;
        }
    }
    let refs: Vec<&Var> = dists.iter().collect();
    let pred = Var::stack_rows(&refs)?;
    Ok((tape, pred, all_targets))
}

/// Train a fresh student (same architecture as the teacher) on a
/// segmented dataset. `cfg` must match the dataset header's.
pub fn train_student(
    dataset: &SegmentedDataset,
    train_items: &[StudentItem],
    dev_items: &[StudentItem],
    arch: &ArchConfig,
    vocab: &Vocabulary,
    cfg: &IsrConfig,
    train_cfg: &TrainConfig,
) -> Result<(Seq2SeqModel, TrainingLog)> {
    cfg.validate()?;
    if dataset.header.cfg != *cfg {
        return Err(Error::Config(format!(
            "step configuration {:?} does not match the dataset header {:?}",
            cfg, dataset.header.cfg
        )));
    }
    if train_items.is_empty() {
        return Err(Error::Usage("cannot train a student on zero utterances".into()));
    }
    let mut model = Seq2SeqModel::new(arch.clone(), vocab.clone(), ModelRole::Student, train_cfg.seed)?;
    let by_cer = |m: &Seq2SeqModel| incremental_corpus_cer(m, dev_items, cfg);
    let select: Option<crate::seq2seq::Selector> =
        match (train_cfg.selection, dev_items.is_empty()) {
            (crate::seq2seq::SelectionMetric::DevCer, false) => Some(&by_cer),
            _ => None,
        };
    let log = run_training(
        &mut model,
        train_items,
        dev_items,
        train_cfg,
        |model, item, dropout| {
            let (tape, pred, targets) = student_utterance_pass(model, cfg, item, dropout)?;
            let loss = crate::network::cross_entropy_loss(&pred, &targets)?;
            tape.backward(&loss)?;
            Ok((loss.scalar(), tape.param_grads()))
        },
        |model, item| {
            let (_tape, pred, targets) = student_utterance_pass(model, cfg, item, None)?;
            Ok(crate::network::cross_entropy_loss(&pred, &targets)?.scalar())
        },
        select,
    )?;
    Ok((model, log))
}

/// Micro-averaged CER of incremental decoding over resolved items; the
/// reference is each item's own target concatenation.
pub fn incremental_corpus_cer(
    model: &Seq2SeqModel,
    items: &[StudentItem],
    cfg: &IsrConfig,
) -> Result<f64> {
    use rayon::prelude::*;
    let per_utt: Vec<Result<(usize, usize)>> = items
        .par_iter()
        .map(|item| {
            let reference = model.vocab.decode_chars(&item.example.concatenated_targets());
            let hyp = isr_decode(model, &item.features, cfg)?.transcript(&model.vocab);
            Ok((
                crate::metrics::edit_distance(&reference, &hyp),
                reference.chars().count(),
            ))
        })
        .collect();
    let mut edits = 0usize;
    let mut chars = 0usize;
    for r in per_utt {
        let (e, c) = r?;
        edits += e;
        chars += c;
    }
    Ok(if chars == 0 { 0.0 } else { edits as f64 / chars as f64 })
}
