//! End-to-end pipeline smoke tests through the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_atisr")
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "atisr-cli-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// A config small enough to run the whole pipeline in seconds.
const SMOKE_CONFIG: &str = r#"
seed = 7

[synthetic]
alphabet_size = 4
min_chars = 4
max_chars = 7
min_frames_per_char = 4
max_frames_per_char = 9
feature_dim = 6
sigma = 0.1
seed = 7
n_train = 8
n_dev = 3
n_test = 3

[arch]
feature_dim = 6
enc_proj = 10
enc_hidden = 8
dec_embed = 8
dec_hidden = 16
attn_hidden = 10
scorer = "mlp"

[teacher]
epochs = 150
batch_size = 4
lr = 3e-3
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
clip_norm = 5.0
lr_decay = 1.0
seed = 7
dropout = 0.0
early_stop_loss = 0.05

[student]
epochs = 150
batch_size = 4
lr = 3e-3
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
clip_norm = 5.0
lr_decay = 1.0
seed = 7
dropout = 0.0
early_stop_loss = 0.05

[isr]
main_blocks = 1
look_back = 0
look_ahead = 1
state_policy = "keep"
init_policy = "last_prev_char"
max_step_outputs = 30
"#;

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(dir: &Path, config: &Path) {
    let out = dir.to_str().unwrap();
    let cfgp = config.to_str().unwrap();
    let data = format!("{out}/data");
    run_ok(&["gen-data", "--config", cfgp, "--out", out]);
    run_ok(&["train-teacher", "--config", cfgp, "--data", &data, "--out", out]);
    let teacher = format!("{out}/teacher.ckpt");
    run_ok(&[
        "distill", "--config", cfgp, "--data", &data, "--teacher", &teacher, "--out", out,
    ]);
    run_ok(&[
        "train-student", "--config", cfgp, "--data", &data, "--distilled", out, "--out", out,
    ]);
    let student = format!("{out}/student.ckpt");
    run_ok(&[
        "eval", "--config", cfgp, "--data", &data, "--model", &student, "--split", "test",
        "--mode", "isr", "--out", out,
    ]);
    run_ok(&[
        "eval", "--config", cfgp, "--data", &data, "--model", &teacher, "--split", "test",
        "--mode", "full", "--out", out,
    ]);
    run_ok(&[
        "eval", "--config", cfgp, "--data", &data, "--model", &teacher, "--split", "test",
        "--mode", "baseline", "--out", out,
    ]);
    run_ok(&[
        "decode", "--config", cfgp, "--data", &data, "--model", &student, "--split", "test",
        "--mode", "isr", "--out", out,
    ]);
}

#[test]
fn full_pipeline_smoke_and_determinism() {
    let root = tempdir("smoke");
    let config = root.join("config.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();

    let run1 = root.join("run1");
    let run2 = root.join("run2");
    pipeline(&run1, &config);
    pipeline(&run2, &config);

    // Reports and hypotheses are byte-identical across reruns.
    for name in [
        "report-isr-test.json",
        "report-full-test.json",
        "report-baseline-test.json",
        "hyps-isr-test.jsonl",
    ] {
        let a = std::fs::read(run1.join(name)).unwrap();
        let b = std::fs::read(run2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }

    // The report table renders every mode.
    let out = run(&[
        "report",
        run1.join("report-full-test.json").to_str().unwrap(),
        run1.join("report-baseline-test.json").to_str().unwrap(),
        run1.join("report-isr-test.json").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("full"), "{table}");
    assert!(table.contains("baseline"), "{table}");
    assert!(table.contains("isr"), "{table}");

    // Provenance artifacts embed the config hash.
    let prov: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(run1.join("gen-data.provenance.json")).unwrap(),
    )
    .unwrap();
    assert!(prov["config_hash"].as_str().unwrap().len() == 64);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(run1.join("teacher.ckpt/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["provenance"]["config_hash"], prov["config_hash"]);
}

#[test]
fn eval_with_missing_checkpoint_exits_one_and_names_the_path() {
    let root = tempdir("missing");
    let config = root.join("config.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let out = root.join("run");
    run_ok(&[
        "gen-data", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    let result = run(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--data",
        out.join("data").to_str().unwrap(),
        "--model",
        out.join("nonexistent.ckpt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("nonexistent.ckpt"), "{stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error_exit_two() {
    let out = run(&["gen-data", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_rerun_from_on_disk_artifacts_alone() {
    // Re-running eval against existing artifacts must not depend on any
    // in-process state from earlier stages.
    let root = tempdir("rerun");
    let config = root.join("config.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let run1 = root.join("run");
    pipeline(&run1, &config);
    let report = run1.join("report-isr-test.json");
    let before = std::fs::read(&report).unwrap();
    std::fs::remove_file(&report).unwrap();
    run_ok(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--data",
        run1.join("data").to_str().unwrap(),
        "--model",
        run1.join("student.ckpt").to_str().unwrap(),
        "--split",
        "test",
        "--mode",
        "isr",
        "--out",
        run1.to_str().unwrap(),
    ]);
    let after = std::fs::read(&report).unwrap();
    assert_eq!(before, after);
}

#[test]
fn featurize_converts_wav_to_features() {
    let root = tempdir("featurize");
    let wav_path = root.join("tone.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(&wav_path, spec).unwrap();
    for i in 0..16_000 {
        let v = (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin();
        writer.write_sample((v * 20_000.0) as i16).unwrap();
    }
    writer.finalize().unwrap();

    let manifest = root.join("extra.jsonl");
    run_ok(&[
        "featurize",
        "--wav",
        wav_path.to_str().unwrap(),
        "--id",
        "tone",
        "--transcript",
        "a",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
    ]);
    // One second of 16 kHz audio: (16000 - 800) / 200 + 1 = 77 frames.
    let record: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&manifest).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(record["frames"], 77);
    assert_eq!(record["dim"], 80);
    assert!(root.join("features/tone.atfx").exists());
    // The manifest record loads as a dataset.
    let ds = atisr::corpus::load_dataset(&manifest).unwrap();
    assert_eq!(ds.utterances[0].features.frames, 77);
}
