//! Teacher training and decoding behavior on small fixtures.

use atisr::corpus::{generate_synthetic, Dataset, SyntheticSpec, Vocabulary, EOS_ID};
use atisr::network::{ArchConfig, ScorerKind};
use atisr::seq2seq::{
    capture_alignment, greedy_decode, train_teacher, ModelRole, Seq2SeqModel, TrainConfig,
};

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        feature_dim: 8,
        enc_proj: 16,
        enc_hidden: 12,
        dec_embed: 12,
        dec_hidden: 24,
        attn_hidden: 16,
        scorer: ScorerKind::Mlp,
    }
}

fn one_utterance() -> (Dataset, Vocabulary) {
    let spec = SyntheticSpec {
        alphabet_size: 5,
        min_chars: 5,
        max_chars: 7,
        min_frames_per_char: 4,
        max_frames_per_char: 9,
        feature_dim: 8,
        sigma: 0.05,
        seed: 11,
        n_train: 1,
        n_dev: 0,
        n_test: 0,
    };
    let (train, _, _) = generate_synthetic(&spec).unwrap();
    let vocab = Vocabulary::from_chars(spec.alphabet());
    (train, vocab)
}

fn memorize() -> (Seq2SeqModel, atisr::seq2seq::TrainingLog, Dataset, Vocabulary) {
    let (train, vocab) = one_utterance();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        lr: 3e-3,
        seed: 5,
        early_stop_loss: Some(0.005),
        ..TrainConfig::default()
    };
    let (model, log) = train_teacher(&train, &train, &tiny_arch(), &vocab, &cfg).unwrap();
    (model, log, train, vocab)
}

#[test]
fn memorizes_one_utterance_within_500_steps() {
    let (model, log, train, vocab) = memorize();
    let last = log.epochs.last().expect("trained at least one epoch");
    assert!(
        last.train_loss < 0.01,
        "loss {} after {} steps",
        last.train_loss,
        log.epochs.len()
    );

    // Overfit model must recover the exact transcript greedily.
    let utt = &train.utterances[0];
    let (hyp, attn) = greedy_decode(&model, &utt.features.to_tensor(), 50).unwrap();
    assert_eq!(vocab.decode_chars(&hyp), utt.transcript);
    assert_eq!(*hyp.last().unwrap(), EOS_ID);
    // One attention row per emitted token, each summing to one.
    assert_eq!(attn.rows(), hyp.len());
    for t in 0..attn.rows() {
        let sum: f64 = attn.row(t).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[test]
fn training_loss_is_non_increasing_on_the_memorization_fixture() {
    let (_, log, _, _) = memorize();
    for pair in log.epochs.windows(2) {
        assert!(
            pair[1].train_loss <= pair[0].train_loss + 1e-9,
            "epoch {} loss {} rose above epoch {} loss {}",
            pair[1].epoch,
            pair[1].train_loss,
            pair[0].epoch,
            pair[0].train_loss
        );
    }
}

#[test]
fn zero_epochs_returns_initialized_model_and_empty_log() {
    let (train, vocab) = one_utterance();
    let cfg = TrainConfig {
        epochs: 0,
        seed: 5,
        ..TrainConfig::default()
    };
    let (model, log) = train_teacher(&train, &train, &tiny_arch(), &vocab, &cfg).unwrap();
    assert!(log.epochs.is_empty());
    let fresh = Seq2SeqModel::new(tiny_arch(), vocab, ModelRole::Teacher, cfg.seed).unwrap();
    for ((n1, p1), (n2, p2)) in model.params().iter().zip(fresh.params().iter()) {
        assert_eq!(n1, n2);
        assert_eq!(p1.data(), p2.data());
    }
}

#[test]
fn fixed_seed_reproduces_the_training_log() {
    let (train, vocab) = one_utterance();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 1,
        lr: 3e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let (_, log1) = train_teacher(&train, &train, &tiny_arch(), &vocab, &cfg).unwrap();
    let (_, log2) = train_teacher(&train, &train, &tiny_arch(), &vocab, &cfg).unwrap();
    let bits = |log: &atisr::seq2seq::TrainingLog| -> Vec<(u64, u64)> {
        log.epochs
            .iter()
            .map(|e| (e.train_loss.to_bits(), e.dev_loss.to_bits()))
            .collect()
    };
    assert_eq!(bits(&log1), bits(&log2));
}

#[test]
fn empty_training_set_is_a_usage_error() {
    let (_, vocab) = one_utterance();
    let empty = Dataset::default();
    let err = train_teacher(&empty, &empty, &tiny_arch(), &vocab, &TrainConfig::default())
        .unwrap_err();
    assert!(matches!(err, atisr::Error::Usage(_)));
}

#[test]
fn out_of_vocabulary_transcript_is_a_data_error() {
    let (mut train, vocab) = one_utterance();
    train.utterances[0].transcript.push('z');
    let err =
        train_teacher(&train, &train, &tiny_arch(), &vocab, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, atisr::Error::Data(_)), "{err}");
}

#[test]
fn greedy_decode_caps_at_max_len() {
    let (train, vocab) = one_utterance();
    let model = Seq2SeqModel::new(tiny_arch(), vocab, ModelRole::Teacher, 3).unwrap();
    let (hyp, attn) =
        greedy_decode(&model, &train.utterances[0].features.to_tensor(), 1).unwrap();
    assert!(hyp.len() <= 1);
    assert_eq!(attn.rows(), hyp.len());
}

#[test]
fn greedy_decode_is_deterministic() {
    let (train, vocab) = one_utterance();
    let model = Seq2SeqModel::new(tiny_arch(), vocab, ModelRole::Teacher, 3).unwrap();
    let x = train.utterances[0].features.to_tensor();
    let (h1, _) = greedy_decode(&model, &x, 30).unwrap();
    let (h2, _) = greedy_decode(&model, &x, 30).unwrap();
    assert_eq!(h1, h2);
}

#[test]
fn capture_alignment_shape_and_row_sums() {
    let (train, vocab) = one_utterance();
    let model = Seq2SeqModel::new(tiny_arch(), vocab, ModelRole::Teacher, 3).unwrap();
    let utt = &train.utterances[0];
    let attn = capture_alignment(&model, &utt.features.to_tensor(), &utt.transcript).unwrap();
    assert_eq!(attn.rows(), utt.transcript.chars().count() + 1);
    assert_eq!(attn.cols(), utt.features.frames.div_ceil(8));
    for t in 0..attn.rows() {
        let sum: f64 = attn.row(t).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
    // Out-of-vocabulary transcript is rejected with a data error.
    assert!(capture_alignment(&model, &utt.features.to_tensor(), "xyz?").is_err());
}

/// A one-utterance fixture is memorizable by the decoder alone, so this
/// uses a small set that forces attention to discriminate inputs.
#[test]
fn overfit_alignment_is_mostly_monotonic() {
    let spec = SyntheticSpec {
        alphabet_size: 8,
        min_chars: 6,
        max_chars: 10,
        min_frames_per_char: 4,
        max_frames_per_char: 9,
        feature_dim: 8,
        sigma: 0.05,
        seed: 13,
        n_train: 60,
        n_dev: 0,
        n_test: 0,
    };
    let (train, _, _) = generate_synthetic(&spec).unwrap();
    let vocab = Vocabulary::from_chars(spec.alphabet());
    let cfg = TrainConfig {
        epochs: 250,
        batch_size: 8,
        lr: 3e-3,
        seed: 5,
        early_stop_loss: Some(0.02),
        ..TrainConfig::default()
    };
    let (model, log) = train_teacher(&train, &train, &tiny_arch(), &vocab, &cfg).unwrap();
    assert!(
        log.epochs.last().unwrap().train_loss < 0.05,
        "fixture failed to overfit: {:?}",
        log.epochs.last()
    );
    let mut pairs = 0usize;
    let mut non_decreasing = 0usize;
    for utt in &train.utterances {
        let attn = capture_alignment(&model, &utt.features.to_tensor(), &utt.transcript).unwrap();
        let peaks: Vec<usize> = (0..attn.rows())
            .map(|t| {
                attn.row(t)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            })
            .collect();
        pairs += peaks.len() - 1;
        non_decreasing += peaks.windows(2).filter(|w| w[1] >= w[0]).count();
    }
    assert!(
        non_decreasing as f64 >= 0.9 * pairs as f64,
        "{non_decreasing}/{pairs} non-decreasing"
    );
}

#[test]
fn capture_alignment_matches_stepwise_decode() {
    let (train, vocab) = one_utterance();
    let model = Seq2SeqModel::new(tiny_arch(), vocab.clone(), ModelRole::Teacher, 3).unwrap();
    let utt = &train.utterances[0];
    let x = utt.features.to_tensor();
    let attn = capture_alignment(&model, &x, &utt.transcript).unwrap();

    // Same rows computed step by step through the public decode_step.
    let (enc, _) = model.encoder.encode(&x, None).unwrap();
    let mut targets = vocab.encode_transcript_strict(&utt.transcript).unwrap();
    targets.push(EOS_ID);
    let mut state: Option<(atisr::numerics::Tensor, atisr::numerics::Tensor)> = None;
    let mut prev = atisr::corpus::BOS_ID;
    for (t, &target) in targets.iter().enumerate() {
        let (dist, next, weights) = model.decode_step(prev, state.as_ref(), &enc).unwrap();
        let sum: f64 = dist.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(weights.data(), attn.row(t), "row {t} differs");
        state = Some(next);
        prev = target;
    }
}

#[test]
fn decode_step_is_pure() {
    let (train, vocab) = one_utterance();
    let model = Seq2SeqModel::new(tiny_arch(), vocab, ModelRole::Teacher, 3).unwrap();
    let (enc, _) = model
        .encoder
        .encode(&train.utterances[0].features.to_tensor(), None)
        .unwrap();
    let (d1, s1, w1) = model.decode_step(atisr::corpus::BOS_ID, None, &enc).unwrap();
    let (d2, s2, w2) = model.decode_step(atisr::corpus::BOS_ID, None, &enc).unwrap();
    assert_eq!(d1.data(), d2.data());
    assert_eq!(s1.0.data(), s2.0.data());
    assert_eq!(s1.1.data(), s2.1.data());
    assert_eq!(w1.data(), w2.data());
    // Unknown token ids are data errors.
    assert!(model.decode_step(9999, None, &enc).is_err());
}
