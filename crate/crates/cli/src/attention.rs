//! `vibra attention` — dump one attention layer's position weights for
//! chosen samples as CSV, averaged over channels. Each sample's weights
//! form a probability distribution over positions.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use vibra_core::data::load_csv;
use vibra_core::nn::Mode;
use vibra_core::{checkpoint, Error, Result};

use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::CommonArgs;

#[derive(Args)]
pub struct AttentionArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Checkpoint to inspect (defaults to <out-dir>/model.ckpt)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,

    /// CSV dataset holding the samples
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Comma-separated row indices to dump
    #[arg(long, default_value = "0")]
    samples: String,

    /// Block index (defaults to the last block)
    #[arg(long)]
    block: Option<usize>,

    /// Attention layer index within the block (defaults to the first)
    #[arg(long)]
    layer: Option<usize>,

    /// Read the CSV as unlabeled rows
    #[arg(long)]
    no_labels: bool,
}

pub fn run(args: &AttentionArgs) -> Result<ExitCode> {
    let settings = Settings::load(args.common.config.as_deref(), &args.common.set)?;
    let out_dir = args.common.out_dir();
    let checkpoint_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| out_dir.join("model.ckpt"));
    let model = checkpoint::load(&checkpoint_path)?;

    let dataset = load_csv(
        &args.data,
        model.config().input_length,
        !args.no_labels,
        settings.data.sample_rate_hz,
    )?;
    let rows: Result<Vec<usize>> = args
        .samples
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad sample index `{s}`")))
        })
        .collect();
    let rows = rows?;
    if let Some(&bad) = rows.iter().find(|&&r| r >= dataset.len()) {
        return Err(Error::config(format!(
            "sample {bad} out of range: dataset has {} rows",
            dataset.len()
        )));
    }

    let (default_block, default_layer) = model.default_attention_site();
    let block = args.block.unwrap_or(default_block);
    let layer = args.layer.unwrap_or(default_layer);

    let (x, _) = dataset.batch(&rows)?;
    let (logits, attention) = model.forward_with_attention(&x, Mode::Eval, block, layer)?;
    let predictions = logits.argmax_rows()?;
    let positions = attention.shape()[1];
    let weights = attention.to_vec();

    std::fs::create_dir_all(&out_dir)?;
    let mut manifest = RunManifest::start(
        "attention",
        args.common.config.as_deref(),
        settings.train.seed,
        &out_dir,
        settings.resolved(),
    );

    let mut csv = String::from("sample,position,weight\n");
    for (i, &row) in rows.iter().enumerate() {
        for p in 0..positions {
            writeln!(csv, "{row},{p},{}", weights[i * positions + p])
                .expect("writing to a String cannot fail");
        }
    }
    let path = out_dir.join("attention.csv");
    std::fs::write(&path, csv)?;

    println!("attention site: block {block}, layer {layer} ({positions} positions)");
    for (&row, &pred) in rows.iter().zip(&predictions) {
        println!(
            "  sample {row}: predicted {}",
            dataset
                .class_names
                .get(pred)
                .cloned()
                .unwrap_or_else(|| format!("class_{pred}"))
        );
    }
    println!("wrote {}", path.display());
    manifest.record(&path);
    manifest.finish(&out_dir)?;
    Ok(ExitCode::SUCCESS)
}
