//! The non-incremental model: full-utterance teacher-forced training,
//! greedy decoding, and attention-matrix capture for distillation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenId, Vocabulary, BOS_ID, EOS_ID};
use crate::error::{Error, Result};
use crate::network::{
    cross_entropy_loss, ArchConfig, AttentionScorer, BoundDecoder, BoundEncoder, BoundScorer,
    DecoderCell, EncoderStack,
};
use crate::numerics::{clip_global_norm, Adam, AdamConfig, SeededRng, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// Trained on whole utterances.
    Teacher,
    /// Trained on segments with end-of-block targets.
    Student,
}

/// Encoder, decoder and attention scorer over a fixed vocabulary; the
/// teacher and student share this exact structure.
#[derive(Debug)]
pub struct Seq2SeqModel {
    pub arch: ArchConfig,
    pub encoder: EncoderStack,
    pub decoder: DecoderCell,
    pub scorer: AttentionScorer,
    pub vocab: Vocabulary,
    pub role: ModelRole,
}

impl Seq2SeqModel {
    pub fn new(
        arch: ArchConfig,
        vocab: Vocabulary,
        role: ModelRole,
        seed: u64,
    ) -> Result<Seq2SeqModel> {
        let mut rng = SeededRng::new(seed).derive("init");
        let encoder = EncoderStack::new("enc", arch.feature_dim, arch.enc_proj, arch.enc_hidden, &mut rng);
        let decoder = DecoderCell::new(
            "dec",
            vocab.size(),
            arch.dec_embed,
            arch.dec_hidden,
            arch.enc_output(),
            &mut rng,
        );
        let scorer = AttentionScorer::new(
            arch.scorer,
            arch.enc_output(),
            arch.dec_hidden,
            arch.attn_hidden,
            &mut rng,
        )?;
        Ok(Seq2SeqModel {
            arch,
            encoder,
            decoder,
            scorer,
            vocab,
            role,
        })
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.params();
        out.extend(self.decoder.params());
        out.extend(self.scorer.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out.extend(self.scorer.params_mut());
        out
    }

    pub fn bind<'a>(&'a self, tape: &Tape) -> BoundModel<'a> {
        BoundModel {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
            scorer: self.scorer.bind(tape),
            tape: tape.clone(),
        }
    }

    /// Snapshot of all parameters, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) {
        let map: BTreeMap<&str, &Tensor> = snapshot.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, param) in self.params_mut() {
            if let Some(t) = map.get(name.as_str()) {
                *param = (*t).clone();
            }
        }
    }

    /// One decoder step outside any training loop: advance on
    /// `prev_token` over the given encoder states. State tensors are
    /// `(h, c)`; `None` starts from zeros.
    pub fn decode_step(
        &self,
        prev_token: TokenId,
        state: Option<&(Tensor, Tensor)>,
        enc_states: &Tensor,
    ) -> Result<(Tensor, (Tensor, Tensor), Tensor)> {
        if self.vocab.token(prev_token).is_none() {
            return Err(Error::Data(format!("unknown token id {prev_token}")));
        }
        let tape = Tape::new();
        let decoder = self.decoder.bind(&tape);
        let scorer = self.scorer.bind(&tape);
        let enc = tape.leaf(enc_states);
        let prepared = scorer.prepare(&enc)?;
        let cell_state = match state {
            Some((h, c)) => crate::network::CellState {
                h: tape.leaf(h),
                c: tape.leaf(c),
            },
            None => decoder.zero_state(&tape),
        };
        let step = decoder.step(&tape, prev_token, &cell_state, &prepared, None)?;
        Ok((
            step.dist.tensor(),
            (step.state.h.tensor(), step.state.c.tensor()),
            step.weights.tensor(),
        ))
    }
}

pub struct BoundModel<'a> {
    pub encoder: BoundEncoder<'a>,
    pub decoder: BoundDecoder,
    pub scorer: BoundScorer<'a>,
    pub tape: Tape,
}

/// Alignment scores of each emitted token (rows, `</s>` included) to
/// each encoder block (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<AttentionMatrix> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged attention rows".into()));
        }
        Ok(AttentionMatrix {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn at(&self, t: usize, s: usize) -> f64 {
        self.data[t * self.cols + s]
    }
}

/// Scores a model for best-checkpoint selection (lower is better).
pub type Selector<'a> = &'a (dyn Fn(&Seq2SeqModel) -> Result<f64> + Sync);

/// What the best-checkpoint tracker minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Teacher-forced dev loss.
    DevLoss,
    /// Free-running dev character error rate.
    DevCer,
}

/// Training hyperparameters shared by the teacher and student loops.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip applied before every optimizer step.
    pub clip_norm: f64,
    /// Multiplicative learning-rate decay per epoch (1.0 = constant).
    pub lr_decay: f64,
    pub seed: u64,
    pub dropout: f64,
    /// Stop once the epoch's training loss drops below this.
    pub early_stop_loss: Option<f64>,
    pub selection: SelectionMetric,
    /// Epochs before best-checkpoint tracking starts; early free-running
    /// decodes are long babble, so CER selection there is wasted work.
    pub selection_warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            lr_decay: 1.0,
            seed: 42,
            dropout: 0.0,
            early_stop_loss: None,
            selection: SelectionMetric::DevLoss,
            selection_warmup: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_dev_loss: Option<f64>,
    /// Value of the selection metric at the best epoch (dev loss unless
    /// CER selection is active).
    pub best_metric: Option<f64>,
}

/// Features paired with the teacher-forced target ids (`y_1..y_T </s>`).
struct Prepared {
    features: Tensor,
    targets: Vec<TokenId>,
}

fn prepare_utterances(dataset: &Dataset, vocab: &Vocabulary) -> Result<Vec<Prepared>> {
    dataset
        .utterances
        .iter()
        .map(|utt| {
            let mut targets = vocab.encode_transcript_strict(&utt.transcript).map_err(|e| {
                Error::Data(format!("utterance {}: {e}", utt.id))
            })?;
            if utt.features.frames == 0 {
                return Err(Error::Data(format!("utterance {} has no frames", utt.id)));
            }
            targets.push(EOS_ID);
            Ok(Prepared {
                features: utt.features.to_tensor(),
                targets,
            })
        })
        .collect()
}

/// Teacher-forced forward pass: decoder inputs `<s> y_1..y_T`, one
/// distribution row per target. Returns the stacked rows and the
/// attention weights per step.
fn forced_pass(
    model: &Seq2SeqModel,
    features: &Tensor,
    targets: &[TokenId],
    dropout: Option<(&mut SeededRng, f64)>,
) -> Result<(Tape, Var, Vec<Var>)> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let mut dropout = dropout;
    let (enc, _) = bound.encoder.encode(
        features,
        None,
        dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate)),
    )?;
    let prepared = bound.scorer.prepare(&enc)?;
    let mut state = bound.decoder.zero_state(&tape);
    let mut dists = Vec::with_capacity(targets.len());
    let mut weights = Vec::with_capacity(targets.len());
    let mut prev = BOS_ID;
    for &target in targets {
        let step = bound.decoder.step(
            &tape,
            prev,
            &state,
            &prepared,
            dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate)),
        )?;
        dists.push(step.dist);
        weights.push(step.weights);
        state = step.state;
        prev = target;
    }
    let refs: Vec<&Var> = dists.iter().collect();
    let pred = Var::stack_rows(&refs)?;
    Ok((tape, pred, weights))
}

/// Loss and parameter gradients for one utterance.
fn utterance_grads(
    model: &Seq2SeqModel,
    prepared: &Prepared,
    dropout: Option<(&mut SeededRng, f64)>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let (tape, pred, _) = forced_pass(model, &prepared.features, &prepared.targets, dropout)?;
    let loss = cross_entropy_loss(&pred, &prepared.targets)?;
    tape.backward(&loss)?;
    Ok((loss.scalar(), tape.param_grads()))
}

fn utterance_loss(model: &Seq2SeqModel, prepared: &Prepared) -> Result<f64> {
    let (_, pred, _) = forced_pass(model, &prepared.features, &prepared.targets, None)?;
    Ok(cross_entropy_loss(&pred, &prepared.targets)?.scalar())
}

/// Accumulate `grads / scale` into `acc` in key order.
fn accumulate_grads(
    acc: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    scale: f64,
) {
    for (name, g) in grads {
        match acc.get_mut(name) {
            Some(t) => {
                for (a, &b) in t.data_mut().iter_mut().zip(g.data()) {
                    *a += b * scale;
                }
            }
            None => {
                let mut t = g.clone();
                for v in t.data_mut() {
                    *v *= scale;
                }
                acc.insert(name.clone(), t);
            }
        }
    }
}

/// Run Adam over shuffled batches. Batches are processed one utterance
/// per tape (in parallel) and the per-utterance gradients are averaged
/// in utterance order, so results do not depend on thread count.
/// `forward` returns (loss, parameter gradients) for one item; `eval`
/// returns a dev loss.
pub(crate) fn run_training<T, F, E>(
    model: &mut Seq2SeqModel,
    train: &[T],
    dev: &[T],
    cfg: &TrainConfig,
    forward: F,
    eval: E,
    select: Option<Selector>,
) -> Result<TrainingLog>
where
    T: Sync,
    F: Fn(&Seq2SeqModel, &T, Option<(&mut SeededRng, f64)>) -> Result<(f64, BTreeMap<String, Tensor>)>
        + Sync,
    E: Fn(&Seq2SeqModel, &T) -> Result<f64> + Sync,
{
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if train.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    let mut adam = Adam::new(cfg.adam());
    let root = SeededRng::new(cfg.seed);
    let mut best: Option<(f64, Vec<(String, Tensor)>)> = None;

    for epoch in 0..cfg.epochs {
        if cfg.lr_decay != 1.0 {
            adam.set_lr(cfg.lr * cfg.lr_decay.powi(epoch as i32));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive(&format!("shuffle-{epoch}")).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let results: Vec<Result<(f64, BTreeMap<String, Tensor>)>> = batch
                .par_iter()
                .map(|&utt_idx| {
                    let mut dropout_rng =
                        root.derive(&format!("dropout-{epoch}-{utt_idx}"));
                    let dropout = if cfg.dropout > 0.0 {
                        Some((&mut dropout_rng, cfg.dropout))
                    } else {
                        None
                    };
                    forward(model, &train[utt_idx], dropout)
                })
                .collect();
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, g) = r.map_err(|e| {
                    Error::NonFinite(format!("epoch {epoch}, batch {batch_idx}: {e}"))
                })?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "epoch {epoch}, batch {batch_idx}: loss is {loss}"
                    )));
                }
                epoch_loss += loss;
                accumulate_grads(&mut grads, &g, scale);
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            for (name, param) in model.params() {
                grads
                    .entry(name)
                    .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
            }
            let mut params = model.params_mut();
            adam.step(params.iter_mut().map(|(name, param)| {
                let grad = &grads[name.as_str()];
                (name.as_str(), &mut **param, grad)
            }))?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let dev_loss = if dev.is_empty() {
            train_loss
        } else {
            let losses: Vec<Result<f64>> = dev.par_iter().map(|p| eval(model, p)).collect();
            let mut total = 0.0;
            for l in losses {
                total += l?;
            }
            total / dev.len() as f64
        };
        let warm = epoch >= cfg.selection_warmup;
        let metric = match select {
            Some(f) if warm => f(model)?,
            _ => dev_loss,
        };
        if std::env::var_os("ATISR_VERBOSE").is_some() {
            eprintln!(
                "epoch {epoch:3}  train loss {train_loss:.4}  dev loss {dev_loss:.4}  metric {metric:.4}"
            );
        }
        log.epochs.push(EpochStats {
            epoch,
            train_loss,
            dev_loss,
        });
        if (warm || select.is_none()) && best.as_ref().is_none_or(|(b, _)| metric < *b) {
            best = Some((metric, model.snapshot()));
            log.best_epoch = Some(epoch);
            log.best_dev_loss = Some(dev_loss);
            log.best_metric = Some(metric);
        }
        if cfg.early_stop_loss.is_some_and(|t| train_loss < t) {
            break;
        }
    }
    if let Some((_, snapshot)) = best {
        model.restore(&snapshot);
    }
    Ok(log)
}

/// Micro-averaged CER of free-running greedy decoding over a dataset.
pub fn greedy_corpus_cer(model: &Seq2SeqModel, dataset: &Dataset) -> Result<f64> {
    let per_utt: Vec<Result<(usize, usize)>> = dataset
        .utterances
        .par_iter()
        .map(|utt| {
            let blocks = utt.features.frames.div_ceil(crate::network::FRAMES_PER_BLOCK);
            let (tokens, _) = greedy_decode(
                model,
                &utt.features.to_tensor(),
                crate::metrics::full_decode_cap(blocks),
            )?;
            let hyp = model.vocab.decode_chars(&tokens);
            Ok((
                crate::metrics::edit_distance(&utt.transcript, &hyp),
                utt.transcript.chars().count(),
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

/// Train a fresh full-utterance model. The returned parameters are the
/// best-epoch snapshot under the configured selection metric.
pub fn train_teacher(
    train: &Dataset,
    dev: &Dataset,
    arch: &ArchConfig,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(Seq2SeqModel, TrainingLog)> {
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let train_prepared = prepare_utterances(train, vocab)?;
    let dev_prepared = prepare_utterances(dev, vocab)?;
    let mut model = Seq2SeqModel::new(arch.clone(), vocab.clone(), ModelRole::Teacher, cfg.seed)?;
    let by_cer = |m: &Seq2SeqModel| greedy_corpus_cer(m, dev);
    let select: Option<Selector> = match (cfg.selection, dev.is_empty()) {
        (SelectionMetric::DevCer, false) => Some(&by_cer),
        _ => None,
    };
    let log = run_training(
        &mut model,
        &train_prepared,
        &dev_prepared,
        cfg,
        utterance_grads,
        utterance_loss,
        select,
    )?;
    Ok((model, log))
}

/// Greedy decoding from `<s>`: argmax token per step (ties to the lowest
/// id) until `</s>` or `max_len` tokens. The attention matrix has one
/// row per emitted token, the terminal `</s>` included.
pub fn greedy_decode(
    model: &Seq2SeqModel,
    features: &Tensor,
    max_len: usize,
) -> Result<(Vec<TokenId>, AttentionMatrix)> {
    if max_len == 0 {
        return Err(Error::Usage("max_len must be at least 1".into()));
    }
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let (enc, _) = bound.encoder.encode(features, None, None)?;
    let prepared = bound.scorer.prepare(&enc)?;
    let mut state = bound.decoder.zero_state(&tape);
    let mut prev = BOS_ID;
    let mut hypothesis = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..max_len {
        let step = bound.decoder.step(&tape, prev, &state, &prepared, None)?;
        let token = step.dist.argmax() as TokenId;
        hypothesis.push(token);
        rows.push(step.weights.with_data(|d| d.to_vec()));
        state = step.state;
        prev = token;
        if token == EOS_ID {
            break;
        }
    }
    Ok((hypothesis, AttentionMatrix::from_rows(rows)?))
}

/// Teacher-forced attention capture over the ground-truth transcript;
/// this, not free-running decoding, feeds distillation. One row per
/// forced token including the terminal `</s>`.
pub fn capture_alignment(
    model: &Seq2SeqModel,
    features: &Tensor,
    transcript: &str,
) -> Result<AttentionMatrix> {
    if transcript.is_empty() {
        return Err(Error::Data("cannot align an empty transcript".into()));
    }
    let mut targets = model.vocab.encode_transcript_strict(transcript)?;
    targets.push(EOS_ID);
    let (_tape, _pred, weights) = forced_pass(model, features, &targets, None)?;
    let rows = weights
        .iter()
        .map(|w| w.with_data(|d| d.to_vec()))
        .collect();
    AttentionMatrix::from_rows(rows)
}
