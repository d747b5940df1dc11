//! `vibra reconstruct` — dump the embedding stage's view of one sample:
//! the plain convolution output next to its spectrally filtered
//! reconstruction, in time and frequency, per channel and channel-averaged.
//! Every emitted series is min-max normalized so the shapes are comparable.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use vibra_core::data::{load_csv, minmax_normalize};
use vibra_core::model::Model;
use vibra_core::spectral::rdft;
use vibra_core::{checkpoint, Error, Real, Result, Tensor};

use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::CommonArgs;

#[derive(Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Checkpoint to inspect (defaults to <out-dir>/model.ckpt)
    #[arg(long, value_name = "FILE", conflicts_with = "fresh")]
    checkpoint: Option<PathBuf>,

    /// Inspect a freshly initialized model instead of a checkpoint
    #[arg(long)]
    fresh: bool,

    /// Seed for --fresh initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// CSV dataset holding the sample
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Row index of the sample to reconstruct
    #[arg(long, default_value_t = 0)]
    sample: usize,

    /// Read the CSV as unlabeled rows
    #[arg(long)]
    no_labels: bool,
}

pub fn run(args: &ReconstructArgs) -> Result<ExitCode> {
    let mut settings = Settings::load(args.common.config.as_deref(), &args.common.set)?;
    let out_dir = args.common.out_dir();

    let model = if args.fresh {
        if !settings.was_assigned("input_length") {
            settings.model.input_length = crate::train::infer_sample_length(&args.data)?
                + usize::from(args.no_labels);
        }
        Model::new(&settings.model, args.seed)?
    } else {
        let path = args
            .checkpoint
            .clone()
            .unwrap_or_else(|| out_dir.join("model.ckpt"));
        checkpoint::load(&path)?
    };

    let dataset = load_csv(
        &args.data,
        model.config().input_length,
        !args.no_labels,
        settings.data.sample_rate_hz,
    )?;
    if args.sample >= dataset.len() {
        return Err(Error::config(format!(
            "sample {} out of range: dataset has {} rows",
            args.sample,
            dataset.len()
        )));
    }
    let (x, _) = dataset.batch(&[args.sample])?;

    let original = model.embedding.conv.forward(&x)?;
    let reconstructed = model.embedding.forward(&x)?;
    let channels = original.shape()[1];
    let len = original.shape()[2];

    std::fs::create_dir_all(&out_dir)?;
    let mut manifest = RunManifest::start(
        "reconstruct",
        args.common.config.as_deref(),
        args.seed,
        &out_dir,
        settings.resolved(),
    );

    let orig_series = per_channel(&original, channels, len);
    let recon_series = per_channel(&reconstructed, channels, len);

    let mut time_csv = String::from("channel,index,original,reconstructed\n");
    for c in 0..channels {
        append_series(
            &mut time_csv,
            &c.to_string(),
            &minmax_normalize(&orig_series[c]),
            &minmax_normalize(&recon_series[c]),
        );
    }
    append_series(
        &mut time_csv,
        "mean",
        &minmax_normalize(&mean_series(&orig_series)),
        &minmax_normalize(&mean_series(&recon_series)),
    );
    let time_path = out_dir.join("reconstruction_time.csv");
    std::fs::write(&time_path, time_csv)?;

    let fs = settings.data.sample_rate_hz;
    let orig_mags = magnitude_rows(&original, channels, len)?;
    let recon_mags = magnitude_rows(&reconstructed, channels, len)?;
    let bins = orig_mags[0].len();
    let mut spec_csv = String::from("channel,bin,frequency_hz,original,reconstructed\n");
    for c in 0..channels {
        append_spectrum(
            &mut spec_csv,
            &c.to_string(),
            fs,
            len,
            &minmax_normalize(&orig_mags[c]),
            &minmax_normalize(&recon_mags[c]),
        );
    }
    append_spectrum(
        &mut spec_csv,
        "mean",
        fs,
        len,
        &minmax_normalize(&mean_series(&orig_mags)),
        &minmax_normalize(&mean_series(&recon_mags)),
    );
    let spec_path = out_dir.join("reconstruction_spectra.csv");
    std::fs::write(&spec_path, spec_csv)?;

    println!(
        "sample {}: {} channels × {} points, {} spectral bins",
        args.sample, channels, len, bins
    );
    println!("wrote {} and {}", time_path.display(), spec_path.display());
    manifest.record(&time_path);
    manifest.record(&spec_path);
    manifest.finish(&out_dir)?;
    Ok(ExitCode::SUCCESS)
}

fn per_channel(t: &Tensor, channels: usize, len: usize) -> Vec<Vec<Real>> {
    let flat = t.to_vec();
    (0..channels)
        .map(|c| flat[c * len..(c + 1) * len].to_vec())
        .collect()
}

fn mean_series(series: &[Vec<Real>]) -> Vec<Real> {
    let len = series[0].len();
    let mut mean = vec![0.0; len];
    for row in series {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= series.len() as Real;
    }
    mean
}

fn magnitude_rows(t: &Tensor, channels: usize, len: usize) -> Result<Vec<Vec<Real>>> {
    let squeezed = t.reshape(&[channels, len])?;
    let spectrum = rdft(&squeezed)?;
    let mut rows = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut row = Vec::with_capacity(spectrum.bins());
        for b in 0..spectrum.bins() {
            row.push(spectrum.magnitude(c, b)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn append_series(csv: &mut String, channel: &str, original: &[Real], reconstructed: &[Real]) {
    for (i, (o, r)) in original.iter().zip(reconstructed).enumerate() {
        writeln!(csv, "{channel},{i},{o},{r}").expect("writing to a String cannot fail");
    }
}

fn append_spectrum(
    csv: &mut String,
    channel: &str,
    fs: Real,
    len: usize,
    original: &[Real],
    reconstructed: &[Real],
) {
    for (bin, (o, r)) in original.iter().zip(reconstructed).enumerate() {
        let freq = bin as Real * fs / len as Real;
        writeln!(csv, "{channel},{bin},{freq},{o},{r}").expect("writing to a String cannot fail");
    }
}
