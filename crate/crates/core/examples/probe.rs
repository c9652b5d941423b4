//! Scratch training probe (dev only).

use atisr::corpus::{generate_synthetic, SyntheticSpec, Vocabulary};
use atisr::metrics::{evaluate, EvalMode};
use atisr::isr::IsrConfig;
use atisr::network::{ArchConfig, ScorerKind};
use atisr::seq2seq::{train_teacher, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let n_train: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
    let sigma: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let seed: u64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(42);
    let dropout: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let decay: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let spec = SyntheticSpec {
        n_train,
        sigma,
        ..SyntheticSpec::default()
    };
    let (train, dev, test) = generate_synthetic(&spec).unwrap();
    let vocab = Vocabulary::from_chars(spec.alphabet());
    let arch = ArchConfig {
        feature_dim: spec.feature_dim,
        enc_proj: hidden,
        enc_hidden: hidden,
        dec_embed: hidden,
        dec_hidden: 2 * hidden,
        attn_hidden: hidden + hidden / 2,
        scorer: ScorerKind::Mlp,
    };
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        lr_decay: decay,
        dropout,
        seed,
        selection: atisr::seq2seq::SelectionMetric::DevCer,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (model, log) = train_teacher(&train, &dev, &arch, &vocab, &cfg).unwrap();
    for e in &log.epochs {
        eprintln!(
            "epoch {:3}  train {:.4}  dev {:.4}",
            e.epoch, e.train_loss, e.dev_loss
        );
    }
    eprintln!("trained in {:.1}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let report = evaluate(&model, &test, EvalMode::Full, &IsrConfig::default(), "probe").unwrap();
    eprintln!(
        "test CER {:.4} ({} edits / {} chars), evaluated in {:.1}s",
        report.corpus_cer,
        report.total_edits,
        report.total_reference_chars,
        t1.elapsed().as_secs_f64()
    );
    for u in report.utterances.iter().take(2) {
        eprintln!("  {}: cer {:.3} hyp {:?}", u.id, u.cer, &u.hypothesis);
    }
}
