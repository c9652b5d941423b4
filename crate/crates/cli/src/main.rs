//! `atisr`: attention-transfer incremental speech recognition pipeline.
//!
//! Subcommands mirror the experimental stages: gen-data, featurize,
//! train-teacher, distill, train-student, decode, eval, report.

mod config;
mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use atisr::isr::{InitPolicy, StatePolicy};
use atisr::metrics::EvalMode;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "atisr", version, about = "incremental speech recognition by attention transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override (also reseeds data generation and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DecodeFlags {
    /// Decoding mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Isr)]
    mode: ModeArg,
    #[arg(long)]
    main_blocks: Option<usize>,
    #[arg(long)]
    look_back: Option<usize>,
    #[arg(long)]
    look_ahead: Option<usize>,
    /// Recurrent-state policy across steps.
    #[arg(long, value_enum)]
    state: Option<StateArg>,
    /// Step-initial decoder input.
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Per-step output cap K.
    #[arg(long)]
    max_step_outputs: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    Isr,
    Baseline,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> EvalMode {
        match m {
            ModeArg::Full => EvalMode::Full,
            ModeArg::Isr => EvalMode::Isr,
            ModeArg::Baseline => EvalMode::Baseline,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum StateArg {
    Keep,
    Reset,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum InitArg {
    /// Begin-of-block token <m>.
    M,
    /// Last character emitted by the previous step.
    LastChar,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/dev/test datasets.
    GenData {
        #[command(flatten)]
        shared: Shared,
    },
    /// Turn one 16 kHz mono WAV into an ATFX feature file.
    Featurize {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        wav: PathBuf,
        /// Utterance id (defaults to the file stem).
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        transcript: Option<String>,
        /// Manifest to append the record to.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the full-utterance teacher.
    TrainTeacher {
        #[command(flatten)]
        shared: Shared,
        /// Directory produced by gen-data (containing *.jsonl + vocab.txt).
        #[arg(long)]
        data: PathBuf,
    },
    /// Distill teacher attention into segmented student targets.
    Distill {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        /// Teacher checkpoint directory.
        #[arg(long)]
        teacher: PathBuf,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Train the incremental student on distilled targets.
    TrainStudent {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding distilled-train.jsonl / distilled-dev.jsonl.
        #[arg(long)]
        distilled: PathBuf,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Decode a split and write per-step hypotheses.
    Decode {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        /// Model checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Decode a split and write the CER/delay report.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Suffix for the report file name.
        #[arg(long)]
        tag: Option<String>,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Render saved reports as an aligned table.
    Report {
        /// Report JSON files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(shared: &Shared) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &shared.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = shared.seed {
        cfg.override_seed(seed);
    }
    if shared.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(shared.threads)
            .build_global()
            .ok();
    }
    Ok(cfg)
}

fn apply_decode_flags(cfg: &mut ExperimentConfig, flags: &DecodeFlags) {
    if let Some(v) = flags.main_blocks {
        cfg.isr.main_blocks = v;
    }
    if let Some(v) = flags.look_back {
        cfg.isr.look_back = v;
    }
    if let Some(v) = flags.look_ahead {
        cfg.isr.look_ahead = v;
    }
    if let Some(v) = flags.state {
        cfg.isr.state_policy = match v {
            StateArg::Keep => StatePolicy::Keep,
            StateArg::Reset => StatePolicy::Reset,
        };
    }
    if let Some(v) = flags.init {
        cfg.isr.init_policy = match v {
            InitArg::M => InitPolicy::BeginBlockToken,
            InitArg::LastChar => InitPolicy::LastPrevChar,
        };
    }
    if let Some(v) = flags.max_step_outputs {
        cfg.isr.max_step_outputs = v;
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { shared } => {
            let cfg = load_config(&shared)?;
            pipeline::gen_data(&cfg, &shared.out)
        }
        Command::Featurize {
            shared,
            wav,
            id,
            transcript,
            manifest,
        } => {
            let _ = load_config(&shared)?;
            let id = id.unwrap_or_else(|| {
                wav.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "utterance".into())
            });
            pipeline::featurize(
                &wav,
                &id,
                &shared.out,
                transcript.as_deref(),
                manifest.as_deref(),
            )
        }
        Command::TrainTeacher { shared, data } => {
            let cfg = load_config(&shared)?;
            pipeline::run_train_teacher(&cfg, &data, &shared.out)
        }
        Command::Distill {
            shared,
            data,
            teacher,
            decode,
        } => {
            let mut cfg = load_config(&shared)?;
            apply_decode_flags(&mut cfg, &decode);
            pipeline::run_distill(&cfg, &data, &teacher, &shared.out)
        }
        Command::TrainStudent {
            shared,
            data,
            distilled,
            decode,
        } => {
            let mut cfg = load_config(&shared)?;
            apply_decode_flags(&mut cfg, &decode);
            pipeline::run_train_student(&cfg, &data, &distilled, &shared.out)
        }
        Command::Decode {
            shared,
            data,
            model,
            split,
            decode,
        } => {
            let mut cfg = load_config(&shared)?;
            apply_decode_flags(&mut cfg, &decode);
            pipeline::run_decode(&cfg, &model, &data, &split, decode.mode.into(), &shared.out)
                .map(|_| ())
        }
        Command::Eval {
            shared,
            data,
            model,
            split,
            tag,
            decode,
        } => {
            let mut cfg = load_config(&shared)?;
            apply_decode_flags(&mut cfg, &decode);
            pipeline::run_eval(
                &cfg,
                &model,
                &data,
                &split,
                decode.mode.into(),
                tag.as_deref(),
                &shared.out,
            )
            .map(|_| ())
        }
        Command::Report { inputs } => {
            let table = pipeline::run_report(&inputs)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
