//! Scratch student-training probe (dev only).
//! Usage: probe_student <teacher_ckpt> <lb> <la> <keep|reset> <epochs> [lr] [dropout] [sigma]

use std::time::Instant;

use atisr::checkpoint::{checkpoint_hash, load_checkpoint};
use atisr::corpus::{generate_synthetic, SyntheticSpec, Vocabulary};
use atisr::distill::build_student_dataset;
use atisr::isr::{train_student, InitPolicy, IsrConfig, StatePolicy, StudentItem};
use atisr::metrics::{evaluate, EvalMode};
use atisr::seq2seq::{SelectionMetric, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let teacher_dir = std::path::PathBuf::from(&args[1]);
    let lb: usize = args[2].parse().unwrap();
    let la: usize = args[3].parse().unwrap();
    let state = if args[4] == "keep" {
        StatePolicy::Keep
    } else {
        StatePolicy::Reset
    };
    let epochs: usize = args[5].parse().unwrap();
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let dropout: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let sigma: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.15);

    let spec = SyntheticSpec {
        sigma,
        ..SyntheticSpec::default()
    };
    let (train, dev, test) = generate_synthetic(&spec).unwrap();
    let vocab = Vocabulary::from_chars(spec.alphabet());
    let teacher = load_checkpoint(&teacher_dir).unwrap();
    let hash = checkpoint_hash(&teacher_dir).unwrap();
    let cfg = IsrConfig {
        main_blocks: 1,
        look_back: lb,
        look_ahead: la,
        state_policy: state,
        init_policy: InitPolicy::LastPrevChar,
        max_step_outputs: 30,
    };
    let t0 = Instant::now();
    let seg_train = build_student_dataset(&teacher, &train, &cfg, &hash).unwrap();
    let seg_dev = build_student_dataset(&teacher, &dev, &cfg, &hash).unwrap();
    eprintln!("distilled in {:.0}s", t0.elapsed().as_secs_f64());
    let items = |ds: &atisr::distill::SegmentedDataset, corpus: &atisr::corpus::Dataset| {
        ds.examples
            .iter()
            .map(|ex| {
                let utt = corpus.utterances.iter().find(|u| u.id == ex.utterance_id).unwrap();
                StudentItem::new(&utt.features, ex.clone())
            })
            .collect::<Vec<_>>()
    };
    let train_items = items(&seg_train, &train);
    let dev_items = items(&seg_dev, &dev);
    let train_cfg = TrainConfig {
        epochs,
        batch_size: 4,
        lr,
        lr_decay: 0.97,
        dropout,
        seed: 42,
        selection: SelectionMetric::DevCer,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (student, log) = train_student(
        &seg_train,
        &train_items,
        &dev_items,
        &teacher.arch.clone(),
        &vocab,
        &cfg,
        &train_cfg,
    )
    .unwrap();
    eprintln!(
        "student trained in {:.0}s, best metric {:?} at epoch {:?}",
        t0.elapsed().as_secs_f64(),
        log.best_metric,
        log.best_epoch
    );
    let report = evaluate(&student, &test, EvalMode::Isr, &cfg, "probe").unwrap();
    eprintln!(
        "student lb={lb} la={la} {state:?}: test CER {:.4}",
        report.corpus_cer
    );
}
