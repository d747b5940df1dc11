//! `vibra train` — fit a classifier on CSV datasets. Writes the checkpoint,
//! the JSON training report, the loss/accuracy curves, and a manifest. On a
//! NaN loss the process exits with code 3 and the last periodic checkpoint
//! stays on disk.

use std::cell::Cell;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use vibra_core::data::load_csv;
use vibra_core::model::Model;
use vibra_core::train::train_with;
use vibra_core::{checkpoint, Error, Real, Result};

use crate::manifest::RunManifest;
use crate::settings::{normalize_ablation, Settings};
use crate::CommonArgs;

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Directory holding train.csv and test.csv (defaults to --out-dir)
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,

    /// Number of passes over the training split
    #[arg(long)]
    epochs: Option<usize>,

    /// Samples per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,

    /// Adam step size
    #[arg(long)]
    learning_rate: Option<Real>,

    /// Seed for parameter init and batch shuffling
    #[arg(long)]
    seed: Option<u64>,

    /// Spectral reconstruction scale (sweepable)
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<Real>,

    /// Structural variant: none, non-msa, non-fft, or non-farel
    #[arg(long)]
    ablation: Option<String>,

    /// Save the checkpoint every N epochs (also the NaN-recovery cadence)
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<usize>,
}

pub fn run(args: &TrainArgs) -> Result<ExitCode> {
    let mut settings = Settings::load(args.common.config.as_deref(), &args.common.set)?;
    if let Some(v) = args.epochs {
        settings.train.epochs = v;
        settings.mark("epochs");
    }
    if let Some(v) = args.batch_size {
        settings.train.batch_size = v;
        settings.mark("batch_size");
    }
    if let Some(v) = args.learning_rate {
        settings.train.learning_rate = v;
        settings.mark("learning_rate");
    }
    if let Some(v) = args.seed {
        settings.train.seed = v;
        settings.mark("seed");
    }
    if let Some(v) = args.gamma {
        settings.model.gamma = v;
        settings.mark("gamma");
    }
    if let Some(tag) = &args.ablation {
        settings.model.ablation = normalize_ablation(tag).parse()?;
        settings.mark("ablation");
    }
    if let Some(v) = args.checkpoint_every {
        settings.train.checkpoint_every = v;
        settings.mark("checkpoint_every");
    }

    let out_dir = args.common.out_dir();
    let data_dir = args.data_dir.clone().unwrap_or_else(|| out_dir.clone());
    let train_path = data_dir.join("train.csv");
    let test_path = data_dir.join("test.csv");

    // The architecture follows the data unless the config pinned it.
    let expected_len = if settings.was_assigned("input_length") {
        settings.model.input_length
    } else {
        let inferred = infer_sample_length(&train_path)?;
        settings.model.input_length = inferred;
        inferred
    };
    let train_set = load_csv(&train_path, expected_len, true, settings.data.sample_rate_hz)?;
    let test_set = load_csv(&test_path, expected_len, true, settings.data.sample_rate_hz)?;
    if !settings.was_assigned("num_classes") {
        settings.model.num_classes = train_set.num_classes().max(test_set.num_classes());
    }

    std::fs::create_dir_all(&out_dir)?;
    let mut manifest = RunManifest::start(
        "train",
        args.common.config.as_deref(),
        settings.train.seed,
        &out_dir,
        settings.resolved(),
    );

    let model = Model::new(&settings.model, settings.train.seed)?;
    println!(
        "training {} parameters on {} samples ({} classes, length {})",
        model.parameter_count(),
        train_set.len(),
        settings.model.num_classes,
        expected_len
    );

    let checkpoint_path = out_dir.join("model.ckpt");
    manifest.record(&checkpoint_path);
    let cadence = settings.train.checkpoint_every.max(1);
    let epochs = settings.train.epochs;
    let saved_any = Cell::new(false);
    let outcome = train_with(
        &model,
        &train_set,
        &test_set,
        &settings.train,
        |epoch, record| {
            println!(
                "epoch {epoch:>4}/{epochs}: loss {:.6}, train {:.2}%, test {:.2}%",
                record.loss, record.train_accuracy, record.test_accuracy
            );
            if epoch % cadence == 0 && epoch < epochs {
                checkpoint::save(&model, &checkpoint_path)?;
                saved_any.set(true);
            }
            Ok(())
        },
    );

    let report = match outcome {
        Ok(report) => report,
        Err(e @ Error::Numeric(_)) => {
            if saved_any.get() {
                eprintln!(
                    "keeping last periodic checkpoint at {}",
                    checkpoint_path.display()
                );
            }
            manifest.finish_failed(&out_dir, &e.to_string())?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };

    checkpoint::save(&model, &checkpoint_path)?;
    let report_path = out_dir.join("report.json");
    let curves_path = out_dir.join("curves.csv");
    std::fs::write(&report_path, report.to_json()?)?;
    std::fs::write(&curves_path, report.curves_csv())?;
    manifest.record(&report_path);
    manifest.record(&curves_path);

    println!(
        "final test accuracy {:.2}%  J1 {:.4}  J2 {:.4}  ({:.1} s)",
        report.final_test_accuracy, report.scatter.j1, report.scatter.j2, report.wall_clock_s
    );
    println!(
        "wrote {}, {}, {}",
        checkpoint_path.display(),
        report_path.display(),
        curves_path.display()
    );
    manifest.finish(&out_dir)?;
    Ok(ExitCode::SUCCESS)
}

/// Field count of the first data row, minus the label column.
pub(crate) fn infer_sample_length(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    for line in text.lines() {
        let first = line.split(',').next().unwrap_or("").trim();
        if first.is_empty() || first.parse::<Real>().is_err() {
            continue;
        }
        let fields = line.split(',').count();
        if fields < 2 {
            return Err(Error::config(format!(
                "{} rows need at least one value and a label",
                path.display()
            )));
        }
        return Ok(fields - 1);
    }
    Err(Error::config(format!(
        "{} holds no data rows",
        path.display()
    )))
}
