//! `vibra synth` — write a synthetic fault dataset: train/test CSVs, the
//! ground-truth impulse sidecar, and a manifest.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use vibra_core::data::{make_dataset_traced, FaultSpec, SignalDataset};
use vibra_core::{Error, Real, Result};

use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::CommonArgs;

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Built-in class set (`four-class`) or comma-separated fault kinds
    #[arg(long)]
    preset: Option<String>,

    /// JSON file holding a custom array of fault specs (overrides --preset)
    #[arg(long, value_name = "FILE")]
    spec_json: Option<PathBuf>,

    /// Samples generated per class
    #[arg(long)]
    per_class: Option<usize>,

    /// Window length in samples
    #[arg(long)]
    length: Option<usize>,

    /// Sample rate in Hz
    #[arg(long)]
    sample_rate: Option<Real>,

    /// Signal-to-noise ratio of injected noise in dB; omit for clean signals
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<Real>,

    /// Force clean signals even if the config file sets snr_db
    #[arg(long, conflicts_with = "snr")]
    no_noise: bool,

    /// Fraction of each class assigned to the training split
    #[arg(long)]
    split_ratio: Option<Real>,

    /// Seed for signal, noise, and split randomness
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(args: &SynthArgs) -> Result<ExitCode> {
    let mut settings = Settings::load(args.common.config.as_deref(), &args.common.set)?;
    if let Some(preset) = &args.preset {
        settings.data.preset = preset.clone();
        settings.mark("preset");
    }
    if let Some(v) = args.per_class {
        settings.data.per_class = v;
        settings.mark("per_class");
    }
    if let Some(v) = args.length {
        settings.data.length = v;
        settings.mark("length");
    }
    if let Some(v) = args.sample_rate {
        settings.data.sample_rate_hz = v;
        settings.mark("sample_rate_hz");
    }
    if let Some(v) = args.snr {
        settings.data.snr_db = Some(v);
        settings.mark("snr_db");
    }
    if args.no_noise {
        settings.data.snr_db = None;
        settings.mark("snr_db");
    }
    if let Some(v) = args.split_ratio {
        settings.data.split_ratio = v;
        settings.mark("split_ratio");
    }
    if let Some(v) = args.seed {
        settings.train.seed = v;
        settings.mark("seed");
    }

    let specs = match &args.spec_json {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::config(format!("cannot read spec file {}: {e}", path.display()))
            })?;
            let specs: Vec<FaultSpec> = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("bad spec file {}: {e}", path.display())))?;
            specs
        }
        None => settings.fault_specs()?,
    };
    for spec in &specs {
        spec.validate(settings.data.sample_rate_hz)?;
    }

    let out_dir = args.common.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let mut manifest = RunManifest::start(
        "synth",
        args.common.config.as_deref(),
        settings.train.seed,
        &out_dir,
        settings.resolved(),
    );

    let (train_set, test_set, truth) = make_dataset_traced(
        &specs,
        settings.data.per_class,
        settings.data.length,
        settings.data.sample_rate_hz,
        settings.data.snr_db,
        settings.data.split_ratio,
        settings.train.seed,
    )?;

    let train_path = out_dir.join("train.csv");
    let test_path = out_dir.join("test.csv");
    let impulse_path = out_dir.join("impulses.csv");
    train_set.save_csv(&train_path, true)?;
    test_set.save_csv(&test_path, true)?;

    let mut sidecar = String::from("split,row,label,impulse_s\n");
    for (split, set, impulses) in [
        ("train", &train_set, &truth.train_impulses),
        ("test", &test_set, &truth.test_impulses),
    ] {
        for (row, stamps) in impulses.iter().enumerate() {
            for t in stamps {
                writeln!(sidecar, "{split},{row},{},{t}", set.labels[row])
                    .expect("writing to a String cannot fail");
            }
        }
    }
    std::fs::write(&impulse_path, sidecar)?;

    println!(
        "wrote {} ({} samples) and {} ({} samples)",
        train_path.display(),
        train_set.len(),
        test_path.display(),
        test_set.len()
    );
    for (class, name) in train_set.class_names.iter().enumerate() {
        println!(
            "  class {name}: {} train / {} test",
            count_label(&train_set, class),
            count_label(&test_set, class)
        );
    }
    match (settings.data.snr_db, truth.measured_snr_db) {
        (Some(target), Some(measured)) => {
            println!("measured SNR: {measured:.2} dB (target {target} dB)");
        }
        _ => println!("no noise injected (clean signals)"),
    }
    println!("impulse ground truth: {}", impulse_path.display());

    manifest.record(&train_path);
    manifest.record(&test_path);
    manifest.record(&impulse_path);
    manifest.finish(&out_dir)?;
    Ok(ExitCode::SUCCESS)
}

fn count_label(set: &SignalDataset, class: usize) -> usize {
    set.labels.iter().filter(|&&l| l == class).count()
}
