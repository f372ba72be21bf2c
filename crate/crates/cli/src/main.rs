use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use llada_core::data_model::Split;

mod commands;

#[derive(Parser)]
#[command(name = "llada", version, about = "Driver-attention curation, annotation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Select key frames from attention sequences.
    #[command(allow_negative_numbers = true)]
    Curate {
        /// sequences.jsonl; map and frame paths resolve against its directory.
        #[arg(long)]
        input: PathBuf,
        /// Precomputed embeddings (EMBD file). Without it, frames are embedded from
        /// downsampled thumbnails.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// JSON selection config with per-source thresholds.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tau_scene: Option<f64>,
        #[arg(long)]
        tau_kl: Option<f64>,
        #[arg(long)]
        tau_attn: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Request candidate what/why annotations from an OpenAI-compatible MLLM endpoint.
    Annotate {
        #[arg(long)]
        dataset: PathBuf,
        /// Full chat-completions URL.
        #[arg(long)]
        endpoint: String,
        #[arg(long, default_value = "qwen-vl-max")]
        model: String,
        #[arg(long, default_value = llada_core::annotation::DEFAULT_API_KEY_ENV)]
        api_key_env: String,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Cap on requests started per second.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        /// Existing candidates here are reused as a cache and kept.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the review HTTP API (and optionally the UI build).
    ReviewServe {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Verdict audit log; defaults to review-log.jsonl next to the dataset.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write the accepted/edited records of one split. Paths stay relative to the
    /// dataset directory, so write the export alongside it.
    Export {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-save a checkpoint as a compact f32 model file.
    ExportModel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split of a dataset.
    Train {
        /// JSON with optional `train` (trainer settings) and `model` (architecture
        /// overrides on top of the toy configuration) objects.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Predict maps (and text) for a split; writes preds.jsonl plus map PNGs.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        /// Skip text generation.
        #[arg(long)]
        no_text: bool,
        #[arg(long, default_value_t = 1)]
        beam_width: usize,
        #[arg(long, default_value_t = 48)]
        max_new_tokens: usize,
    },
    /// Score predictions against a dataset split.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 100)]
        auc_b_splits: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset with context-dependent maps and labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Curate {
            input,
            embeddings,
            config,
            tau_scene,
            tau_kl,
            tau_attn,
            out,
        } => commands::curate(&input, embeddings.as_deref(), config.as_deref(), [tau_scene, tau_kl, tau_attn], &out),
        Command::Annotate {
            dataset,
            endpoint,
            model,
            api_key_env,
            concurrency,
            rate,
            timeout_secs,
            out,
        } => commands::annotate(&commands::AnnotateArgs {
            dataset,
            endpoint,
            model,
            api_key_env,
            concurrency,
            rate,
            timeout_secs,
            out,
        }),
        Command::ReviewServe {
            dataset,
            candidates,
            host,
            port,
            static_dir,
            log,
        } => commands::review_serve(&dataset, candidates.as_deref(), &host, port, static_dir, log),
        Command::Export { dataset, split, out } => commands::export(&dataset, split.into(), &out),
        Command::ExportModel { checkpoint, out } => commands::export_model(&checkpoint, &out),
        Command::Train {
            config,
            dataset,
            out,
            resume,
            max_steps,
        } => commands::train(config.as_deref(), &dataset, &out, resume.as_deref(), max_steps),
        Command::Predict {
            checkpoint,
            dataset,
            split,
            out,
            no_text,
            beam_width,
            max_new_tokens,
        } => commands::predict(
            &checkpoint,
            &dataset,
            split.into(),
            &out,
            !no_text,
            llada_core::model::GenerateOptions {
                max_new_tokens,
                beam_width,
            },
        ),
        Command::Eval {
            predictions,
            dataset,
            split,
            auc_b_splits,
            seed,
            out,
        } => commands::eval(&predictions, &dataset, split.into(), auc_b_splits, seed, out.as_deref()),
        Command::Synth {
            out,
            samples,
            seed,
            val_fraction,
        } => commands::synth(&out, samples, seed, val_fraction),
    }
}
