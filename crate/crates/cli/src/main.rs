//! `vibra` — command-line front end for the fault-diagnosis toolkit.
//!
//! One subcommand per stage of the workflow: `synth` writes datasets,
//! `train` fits a model, `eval`/`reconstruct`/`attention` inspect one, and
//! `gradcheck` verifies the differentiation engine. Every run drops a
//! manifest JSON next to its artifacts so results stay reproducible.

mod attention;
mod eval;
mod gradcheck;
mod manifest;
mod reconstruct;
mod settings;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vibra_core::Error;

const SCHEMA_HELP: &str = "\
OUTPUT FILES
  train.csv / test.csv   one sample per row: L signal values then the integer
                         class label (synth always writes labels)
  impulses.csv           split,row,label,impulse_s — ground-truth impulse
                         onset seconds for every synthesized sample
  model.ckpt             binary checkpoint: text config header + parameter
                         records (always 64-bit floats)
  report.json            training report: config, per-epoch curves, final
                         accuracy, scatter metrics, confusion matrix
  curves.csv             epoch,loss,train_acc,test_acc
  eval.json              accuracy, J1/J2 scatter metrics, confusion matrix
  confusion.csv          class,<predicted counts per class> — row sums equal
                         per-class sample counts
  reconstruction_time.csv    channel,index,original,reconstructed (min-max
                             normalized per series; channel `mean` rows hold
                             the channel average)
  reconstruction_spectra.csv channel,bin,frequency_hz,original,reconstructed
                             (normalized spectral magnitudes)
  attention.csv          sample,position,weight — weights of one attention
                         layer; rows of one sample sum to 1
  <command>.manifest.json  command, argv, seed, resolved settings, artifact
                           paths, start/finish unix timestamps

CONFIG FILE
  Plain `key = value` lines, `#` comments. Model keys: input_length,
  embed_channels, embed_kernel, num_blocks, attention_per_block,
  feedforward_per_block, branch_kernels, feedforward_expansion, gamma,
  num_classes, classifier_hidden, ablation, attention_axis. Training keys:
  learning_rate, batch_size, epochs, beta1, beta2, epsilon, checkpoint_every,
  seed. Data keys: per_class, length, sample_rate_hz, snr_db (a number or
  `none`), split_ratio, preset. Flags override file entries.

ENVIRONMENT
  VIBRA_OUT_DIR          default output directory when --out-dir is omitted

EXIT CODES
  0 success   1 verification failure   2 configuration error   3 numerical failure";

#[derive(Parser)]
#[command(
    name = "vibra",
    version,
    about = "Vibration fault diagnosis: synthesize datasets, train and inspect spectral-attention classifiers",
    after_long_help = SCHEMA_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fault dataset (train/test CSVs plus ground truth)
    Synth(synth::SynthArgs),
    /// Train a classifier on CSV datasets and write checkpoint + report
    Train(train::TrainArgs),
    /// Evaluate a checkpoint: accuracy, J1/J2 scatter, confusion matrix
    Eval(eval::EvalArgs),
    /// Dump original vs spectrally reconstructed embeddings for one sample
    Reconstruct(reconstruct::ReconstructArgs),
    /// Dump the attention weights of one block/layer for chosen samples
    Attention(attention::AttentionArgs),
    /// Check every layer's gradients against finite differences
    Gradcheck(gradcheck::GradcheckArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Key-value configuration file; flags override its entries
    #[arg(long, global = false)]
    config: Option<PathBuf>,

    /// Directory for all written artifacts [env: VIBRA_OUT_DIR, else `.`]
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Extra `key=value` setting, may repeat; applied after --config
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os("VIBRA_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => synth::run(&args),
        Command::Train(args) => train::run(&args),
        Command::Eval(args) => eval::run(&args),
        Command::Reconstruct(args) => reconstruct::run(&args),
        Command::Attention(args) => attention::run(&args),
        Command::Gradcheck(args) => gradcheck::run(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
