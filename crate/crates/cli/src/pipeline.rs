//! One function per pipeline stage. Every stage reads its inputs from
//! disk, so any stage can be re-run in isolation; every artifact embeds
//! the resolved config and the hashes of what produced it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use atisr::checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, sha256_file};
use atisr::corpus::{
    generate_synthetic, load_dataset, mel_features, read_features, save_dataset, Dataset,
    FeatureSequence, MelConfig, Vocabulary,
};
use atisr::distill::{build_student_dataset, load_segmented, save_segmented, SegmentedDataset};
use atisr::isr::{baseline_isr_decode, isr_decode, StudentItem};
use atisr::metrics::{evaluate, EvalMode, EvalReport};
use atisr::seq2seq::{greedy_decode, train_teacher, TrainingLog};

use crate::config::ExperimentConfig;

pub fn write_text(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_text(path, &body)
}

#[derive(Debug, Serialize, Deserialize)]
struct Provenance {
    stage: String,
    config: ExperimentConfig,
    config_hash: String,
    inputs: BTreeMap<String, String>,
}

fn write_provenance(
    out: &Path,
    stage: &str,
    cfg: &ExperimentConfig,
    inputs: BTreeMap<String, String>,
) -> anyhow::Result<()> {
    write_json(
        &out.join(format!("{stage}.provenance.json")),
        &Provenance {
            stage: stage.to_string(),
            config: cfg.clone(),
            config_hash: cfg.hash(),
            inputs,
        },
    )
}

/// `gen-data`: synthesize train/dev/test splits plus the vocabulary.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let data_dir = out.join("data");
    std::fs::create_dir_all(&data_dir)?;
    let (train, dev, test) = generate_synthetic(&cfg.synthetic)?;
    let vocab = Vocabulary::from_chars(cfg.synthetic.alphabet());
    vocab.save(&data_dir.join("vocab.txt"))?;
    let mut inputs = BTreeMap::new();
    for (split, ds) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let manifest = save_dataset(ds, &data_dir, split)?;
        inputs.insert(format!("{split}_manifest_hash"), sha256_file(&manifest)?);
        eprintln!(
            "{split}: {} utterances -> {}",
            ds.len(),
            manifest.display()
        );
    }
    write_provenance(out, "gen-data", cfg, inputs)
}

/// `featurize`: one WAV (16 kHz mono PCM) into an ATFX feature file,
/// optionally appending a manifest record.
pub fn featurize(
    wav: &Path,
    id: &str,
    out: &Path,
    transcript: Option<&str>,
    manifest: Option<&Path>,
) -> anyhow::Result<()> {
    let reader = hound::WavReader::open(wav)
        .with_context(|| format!("opening {}", wav.display()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != 16_000 {
        bail!(
            "{}: need 16 kHz mono, got {} Hz x{} channels",
            wav.display(),
            spec.sample_rate,
            spec.channels
        );
    }
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .collect::<std::result::Result<Vec<_>, _>>()?
                .into_iter()
                .map(|s| s as f32 / scale)
                .collect()
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<Vec<_>, _>>()?,
    };
    let features = mel_features(&samples, &MelConfig::default())?;
    let features_dir = out.join("features");
    std::fs::create_dir_all(&features_dir)?;
    let path = features_dir.join(format!("{id}.atfx"));
    atisr::corpus::write_features(&path, &features)?;
    eprintln!(
        "{} -> {} ({} frames x {} mels)",
        wav.display(),
        path.display(),
        features.frames,
        features.dim
    );
    if let Some(manifest) = manifest {
        let record = serde_json::json!({
            "id": id,
            "feature_path": format!("features/{id}.atfx"),
            "frames": features.frames,
            "dim": features.dim,
            "transcript": transcript.unwrap_or(""),
        });
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(manifest)
            .with_context(|| format!("opening {}", manifest.display()))?;
        writeln!(file, "{record}")?;
    }
    Ok(())
}

fn load_split(data: &Path, split: &str) -> anyhow::Result<Dataset> {
    let manifest = data.join(format!("{split}.jsonl"));
    Ok(load_dataset(&manifest)?)
}

fn load_vocab(data: &Path) -> anyhow::Result<Vocabulary> {
    Ok(Vocabulary::load(&data.join("vocab.txt"))?)
}

fn write_trainlog(out: &Path, name: &str, log: &TrainingLog) -> anyhow::Result<()> {
    write_json(&out.join(format!("{name}.trainlog.json")), log)
}

/// `train-teacher`: full-utterance training on the train/dev splits.
pub fn run_train_teacher(cfg: &ExperimentConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let train = load_split(data, "train")?;
    let dev = load_split(data, "dev")?;
    let vocab = load_vocab(data)?;
    let (model, log) = train_teacher(&train, &dev, &cfg.arch, &vocab, &cfg.teacher)?;
    let ckpt = out.join("teacher.ckpt");
    save_checkpoint(
        &model,
        &ckpt,
        cfg.provenance(&[(
            "train_manifest_hash",
            sha256_file(&data.join("train.jsonl"))?,
        )]),
    )?;
    write_trainlog(out, "teacher", &log)?;
    eprintln!(
        "teacher -> {} (best dev loss {:?})",
        ckpt.display(),
        log.best_dev_loss
    );
    Ok(())
}

/// `distill`: teacher attention -> segmented student targets for the
/// train and dev splits.
pub fn run_distill(
    cfg: &ExperimentConfig,
    data: &Path,
    teacher_dir: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let teacher = load_checkpoint(teacher_dir)?;
    let hash = checkpoint_hash(teacher_dir)?;
    std::fs::create_dir_all(out)?;
    for split in ["train", "dev"] {
        let corpus = load_split(data, split)?;
        let segmented = build_student_dataset(&teacher, &corpus, &cfg.isr, &hash)?;
        let path = out.join(format!("distilled-{split}.jsonl"));
        save_segmented(&segmented, &path)?;
        eprintln!(
            "{split}: {} utterances segmented ({} skipped) -> {}",
            segmented.examples.len(),
            segmented.header.skipped.len(),
            path.display()
        );
    }
    write_provenance(
        out,
        "distill",
        cfg,
        BTreeMap::from([("teacher_hash".to_string(), hash)]),
    )
}

fn resolve_items(data: &Path, segmented: &SegmentedDataset) -> anyhow::Result<Vec<StudentItem>> {
    segmented
        .examples
        .iter()
        .map(|ex| {
            let features: FeatureSequence = read_features(&data.join(&ex.feature_path))?;
            Ok(StudentItem::new(&features, ex.clone()))
        })
        .collect()
}

/// `train-student`: same architecture, fresh initialization, segmented
/// targets.
pub fn run_train_student(
    cfg: &ExperimentConfig,
    data: &Path,
    distilled: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let vocab = load_vocab(data)?;
    let train_set = load_segmented(&distilled.join("distilled-train.jsonl"))?;
    let dev_set = load_segmented(&distilled.join("distilled-dev.jsonl"))?;
    let train_items = resolve_items(data, &train_set)?;
    let dev_items = resolve_items(data, &dev_set)?;
    let (model, log) = atisr::isr::train_student(
        &train_set,
        &train_items,
        &dev_items,
        &cfg.arch,
        &vocab,
        &cfg.isr,
        &cfg.student,
    )?;
    let ckpt = out.join("student.ckpt");
    save_checkpoint(
        &model,
        &ckpt,
        cfg.provenance(&[
            ("teacher_hash", train_set.header.teacher_hash.clone()),
            (
                "distilled_train_hash",
                sha256_file(&distilled.join("distilled-train.jsonl"))?,
            ),
        ]),
    )?;
    write_trainlog(out, "student", &log)?;
    eprintln!(
        "student -> {} (best dev loss {:?})",
        ckpt.display(),
        log.best_dev_loss
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct HypRecord<'a> {
    id: &'a str,
    steps: &'a [atisr::isr::StepOutput],
    transcript: String,
}

/// `decode`: hypotheses for a whole split, one JSON line per utterance.
pub fn run_decode(
    cfg: &ExperimentConfig,
    model_dir: &Path,
    data: &Path,
    split: &str,
    mode: EvalMode,
    out: &Path,
) -> anyhow::Result<PathBuf> {
    let model = load_checkpoint(model_dir)?;
    let dataset = load_split(data, split)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("hyps-{mode}-{split}.jsonl"));
    let mut body = String::new();
    for utt in &dataset.utterances {
        let x = utt.features.to_tensor();
        let hyp = match mode {
            EvalMode::Full => {
                let blocks = utt.features.frames.div_ceil(8);
                let (tokens, _) =
                    greedy_decode(&model, &x, atisr::metrics::full_decode_cap(blocks))?;
                let flat: Vec<_> = tokens
                    .iter()
                    .copied()
                    .filter(|&t| model.vocab.is_char(t))
                    .collect();
                atisr::isr::IncrementalHypothesis {
                    steps: vec![atisr::isr::StepOutput {
                        tokens,
                        frames_consumed: utt.features.frames,
                    }],
                    flat,
                }
            }
            EvalMode::Isr => isr_decode(&model, &x, &cfg.isr)?,
            EvalMode::Baseline => baseline_isr_decode(&model, &x, &cfg.isr)?,
        };
        let record = HypRecord {
            id: &utt.id,
            steps: &hyp.steps,
            transcript: hyp.transcript(&model.vocab),
        };
        body.push_str(&serde_json::to_string(&record)?);
        body.push('\n');
    }
    write_text(&path, &body)?;
    eprintln!("{} utterances -> {}", dataset.len(), path.display());
    Ok(path)
}

/// `eval`: decode a split in the given mode and write the CER/delay
/// report.
pub fn run_eval(
    cfg: &ExperimentConfig,
    model_dir: &Path,
    data: &Path,
    split: &str,
    mode: EvalMode,
    tag: Option<&str>,
    out: &Path,
) -> anyhow::Result<PathBuf> {
    let model = load_checkpoint(model_dir)?;
    let hash = checkpoint_hash(model_dir)?;
    let dataset = load_split(data, split)?;
    let started = std::time::Instant::now();
    let report = evaluate(&model, &dataset, mode, &cfg.isr, &hash)?;
    let wall = started.elapsed().as_secs_f64();
    std::fs::create_dir_all(out)?;
    let name = match tag {
        Some(t) => format!("report-{mode}-{split}-{t}.json"),
        None => format!("report-{mode}-{split}.json"),
    };
    let path = out.join(name);
    write_json(&path, &report)?;
    // Wall clock goes to stderr only: reports must be byte-identical
    // across reruns.
    eprintln!(
        "{mode} {split}: corpus CER {:.4}, delay {:.2}s, wall {wall:.1}s -> {}",
        report.corpus_cer,
        report.delay_seconds,
        path.display()
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(path)
}

/// `report`: aligned plain-text table over saved eval reports.
pub fn run_report(inputs: &[PathBuf]) -> anyhow::Result<String> {
    let mut rows = vec![[
        "mode".to_string(),
        "look-back".to_string(),
        "look-ahead".to_string(),
        "state".to_string(),
        "init".to_string(),
        "delay(s)".to_string(),
        "CER".to_string(),
    ]];
    for path in inputs {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport = serde_json::from_str(&body)
            .with_context(|| format!("parsing {}", path.display()))?;
        let incremental = report.mode != EvalMode::Full;
        let dash = "-".to_string();
        rows.push([
            report.mode.to_string(),
            if incremental {
                report.config.look_back.to_string()
            } else {
                dash.clone()
            },
            if incremental {
                report.config.look_ahead.to_string()
            } else {
                dash.clone()
            },
            if report.mode == EvalMode::Isr {
                format!("{:?}", report.config.state_policy).to_lowercase()
            } else {
                dash.clone()
            },
            if report.mode == EvalMode::Isr {
                match report.config.init_policy {
                    atisr::isr::InitPolicy::BeginBlockToken => "<m>".to_string(),
                    atisr::isr::InitPolicy::LastPrevChar => "last-char".to_string(),
                }
            } else {
                dash
            },
            format!("{:.2}", report.delay_seconds),
            format!("{:.4}", report.corpus_cer),
        ]);
    }
    let mut widths = [0usize; 7];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut table = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        table.push_str(line.join("  ").trim_end());
        table.push('\n');
    }
    Ok(table)
}

