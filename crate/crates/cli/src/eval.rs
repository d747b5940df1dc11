//! `vibra eval` — score a checkpoint on a labeled CSV: accuracy, J1/J2
//! scatter metrics, and the confusion matrix, printed and written as
//! eval.json + confusion.csv.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use vibra_core::data::load_csv;
use vibra_core::train::evaluate;
use vibra_core::{checkpoint, Result};

use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::CommonArgs;

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Checkpoint to evaluate (defaults to <out-dir>/model.ckpt)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,

    /// Labeled CSV dataset to score
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Samples per forward pass
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

pub fn run(args: &EvalArgs) -> Result<ExitCode> {
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
        true,
        settings.data.sample_rate_hz,
    )?;

    std::fs::create_dir_all(&out_dir)?;
    let mut manifest = RunManifest::start(
        "eval",
        args.common.config.as_deref(),
        settings.train.seed,
        &out_dir,
        settings.resolved(),
    );

    let evaluation = evaluate(&model, &dataset, args.batch_size)?;

    println!("checkpoint: {}", checkpoint_path.display());
    println!("dataset: {} ({} samples)", args.data.display(), dataset.len());
    println!("accuracy: {:.2}%", evaluation.accuracy);
    println!(
        "J1 {:.6}  J2 {:.6}  (alternative J2 {:.6}{})",
        evaluation.scatter.j1,
        evaluation.scatter.j2,
        evaluation.scatter.j2_alternative,
        if evaluation.scatter.capped { ", capped" } else { "" }
    );
    println!("confusion (rows = true class):");
    let names = &dataset.class_names;
    for (class, row) in evaluation.confusion.iter().enumerate() {
        let counts: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        println!("  {:<12} {}", names[class], counts.join(" "));
    }

    let eval_path = out_dir.join("eval.json");
    std::fs::write(&eval_path, serde_json::to_string_pretty(&evaluation).expect("plain data"))?;
    let confusion_path = out_dir.join("confusion.csv");
    let mut csv = String::from("class");
    for name in names {
        write!(csv, ",{name}").expect("writing to a String cannot fail");
    }
    csv.push('\n');
    for (class, row) in evaluation.confusion.iter().enumerate() {
        write!(csv, "{}", names[class]).expect("writing to a String cannot fail");
        for count in row {
            write!(csv, ",{count}").expect("writing to a String cannot fail");
        }
        csv.push('\n');
    }
    std::fs::write(&confusion_path, csv)?;

    println!("wrote {} and {}", eval_path.display(), confusion_path.display());
    manifest.record(&eval_path);
    manifest.record(&confusion_path);
    manifest.finish(&out_dir)?;
    Ok(ExitCode::SUCCESS)
}
