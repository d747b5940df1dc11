//! Behavioral probes beyond the acceptance gate: does the learned spectral
//! filter actually act like a denoiser, does attention land on the fault
//! impulses, and does every structural variant train without blowing up?

use vibra_core::data::{add_noise_snr, gen_fault_signal, make_dataset_traced, FaultSpec};
use vibra_core::model::{Ablation, AttentionAxis, Model, ModelConfig};
use vibra_core::nn::Mode;
use vibra_core::spectral::{complex_hadamard, irdft, rdft, SpectralWeight};
use vibra_core::train::{train, Adam, TrainConfig};
use vibra_core::{Real, Result, Tensor};

/// Fits a standalone spectral filter as a denoiser: several noisy copies of
/// one fault signal, mean-squared error against the clean signal. The
/// optimum is Wiener-like, so the learned magnitudes should be large where
/// the signal has energy and small in noise-only bands.
#[test]
fn learned_filter_prefers_signal_bands() -> Result<()> {
    let length = 2048;
    let spec = FaultSpec {
        amplitude: 2.0,
        ..FaultSpec::outer_race()
    };
    let (clean, _) = gen_fault_signal(&spec, length, 12000.0, 11)?;

    let copies = 4;
    let mut noisy = Vec::with_capacity(copies * length);
    for seed in 0..copies as u64 {
        noisy.extend(add_noise_snr(&clean, -4.0, 40 + seed)?);
    }
    let x = Tensor::from_vec(noisy, &[copies, 1, length])?;
    let target = Tensor::from_vec(
        clean.iter().cloned().cycle().take(copies * length).collect(),
        &[copies, 1, length],
    )?;

    let filter = SpectralWeight::identity(1, length / 2 + 1)?;
    let params = vec![(String::from("filter"), filter.packed().clone())];
    let mut optimizer = Adam::new(0.02, 0.9, 0.999, 1e-8);
    let mse = |recon: &Tensor| -> Result<Real> {
        let diff = recon.sub(&target)?;
        diff.mul(&diff)?.mean().item()
    };

    let initial = mse(&irdft(&complex_hadamard(&rdft(&x)?, &filter)?)?)?;
    for _ in 0..300 {
        let recon = irdft(&complex_hadamard(&rdft(&x)?, &filter)?)?;
        let diff = recon.sub(&target)?;
        let loss = diff.mul(&diff)?.mean();
        params[0].1.zero_grad();
        loss.backward()?;
        optimizer.step(&params)?;
    }
    let fitted = mse(&irdft(&complex_hadamard(&rdft(&x)?, &filter)?)?)?;
    assert!(
        fitted < 0.5 * initial,
        "filtering should denoise: mse {initial:.5} -> {fitted:.5}"
    );

    // Rank bins by the clean signal's energy; compare learned |W| between
    // the strongest 5% and the weakest half.
    let spectrum = rdft(&Tensor::from_vec(clean.clone(), &[1, length])?)?;
    let bins = spectrum.bins();
    let mut order: Vec<usize> = (0..bins).collect();
    let energy: Vec<Real> = (0..bins)
        .map(|b| spectrum.magnitude(0, b))
        .collect::<Result<_>>()?;
    order.sort_by(|&a, &b| energy[b].partial_cmp(&energy[a]).unwrap());

    let mean_magnitude = |bins: &[usize]| -> Real {
        bins.iter().map(|&b| filter.magnitude(0, b)).sum::<Real>() / bins.len() as Real
    };
    let strong = mean_magnitude(&order[..bins / 20]);
    let weak = mean_magnitude(&order[bins / 2..]);
    assert!(
        strong > 2.0 * weak,
        "|W| should concentrate on signal bands: strong {strong:.4} vs weak {weak:.4}"
    );
    println!(
        "filter diagnostic: mse {initial:.5} -> {fitted:.5}, |W| strong {strong:.4} / weak {weak:.4}"
    );
    Ok(())
}

/// Trains a small model on sparse, well-separated fault bursts, then checks
/// that the attention map puts more mass on positions covering a burst than
/// elsewhere.
#[test]
fn attention_mass_concentrates_on_impulses() -> Result<()> {
    let (length, sample_rate) = (1024usize, 2048.0);
    let fault = FaultSpec {
        characteristic_hz: 8.0,
        resonance_hz: 650.0,
        ring_down_s: 0.012,
        amplitude: 3.0,
        ..FaultSpec::outer_race()
    };
    let specs = vec![FaultSpec::normal(), fault.clone()];
    let (train_set, test_set, truth) =
        make_dataset_traced(&specs, 40, length, sample_rate, Some(4.0), 0.8, 91)?;

    let config = ModelConfig {
        input_length: length,
        embed_channels: 8,
        num_blocks: 2,
        num_classes: 2,
        classifier_hidden: 32,
        ..ModelConfig::default()
    };
    let model = Model::new(&config, 91)?;
    let train_config = TrainConfig {
        epochs: 15,
        batch_size: 8,
        seed: 91,
        ..TrainConfig::default()
    };
    let report = train(&model, &train_set, &test_set, &train_config)?;
    assert!(
        report.final_test_accuracy >= 75.0,
        "probe task should be learnable, got {}%",
        report.final_test_accuracy
    );

    let fault_rows: Vec<usize> = (0..test_set.len())
        .filter(|&i| test_set.labels[i] == 1)
        .collect();
    let (x, _) = test_set.batch(&fault_rows)?;
    let (block, layer) = model.default_attention_site();
    let (_, attention) = model.forward_with_attention(&x, Mode::Eval, block, layer)?;
    let positions = attention.shape()[1];
    let weights = attention.to_vec();

    // Composing the two downsample stages (strided conv + pool, then
    // padded conv + pool) maps attention position p to the input sample
    // 8p + 37.5 at its receptive-field center.
    let center = |p: usize| 8.0 * p as Real + 37.5;
    let burst_span = 2.5 * fault.ring_down_s * sample_rate;
    let guard = 8.0;

    let (mut inside_sum, mut inside_n) = (0.0, 0usize);
    let (mut outside_sum, mut outside_n) = (0.0, 0usize);
    for (row, &dataset_row) in fault_rows.iter().enumerate() {
        let stamps = &truth.test_impulses[dataset_row];
        assert!(!stamps.is_empty(), "fault sample without impulse stamps");
        for p in 0..positions {
            let c = center(p);
            let covered = stamps.iter().any(|&t| {
                let onset = t * sample_rate;
                c >= onset - guard && c <= onset + burst_span + guard
            });
            let w = weights[row * positions + p];
            if covered {
                inside_sum += w;
                inside_n += 1;
            } else {
                outside_sum += w;
                outside_n += 1;
            }
        }
    }
    let inside_mean = inside_sum / inside_n as Real;
    let outside_mean = outside_sum / outside_n as Real;
    assert!(
        inside_mean > 1.05 * outside_mean,
        "attention should favor burst positions: inside {inside_mean:.5} vs outside {outside_mean:.5}"
    );
    println!(
        "attention diagnostic: {:.1}% accuracy, inside mean {inside_mean:.5} vs outside {outside_mean:.5} over {} fault samples ({} positions)",
        report.final_test_accuracy,
        fault_rows.len(),
        positions
    );
    Ok(())
}

/// Every structural variant, plus the channel-axis attention mode, must get
/// through a short training run with finite, decreasing loss.
#[test]
fn every_variant_trains_without_numeric_failure() -> Result<()> {
    let specs = vec![FaultSpec::normal(), FaultSpec::outer_race()];
    let variants = [
        (Ablation::None, AttentionAxis::Time),
        (Ablation::NonMsa, AttentionAxis::Time),
        (Ablation::NonFft, AttentionAxis::Time),
        (Ablation::NonFarel, AttentionAxis::Time),
        (Ablation::None, AttentionAxis::Channel),
    ];
    for (ablation, axis) in variants {
        let (train_set, test_set) =
            vibra_core::data::make_dataset(&specs, 20, 128, 12000.0, None, 0.8, 7)?;
        let config = ModelConfig {
            input_length: 128,
            embed_channels: 4,
            num_blocks: 1,
            num_classes: 2,
            classifier_hidden: 16,
            ablation,
            attention_axis: axis,
            ..ModelConfig::default()
        };
        let model = Model::new(&config, 7)?;
        let train_config = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 7,
            ..TrainConfig::default()
        };
        let report = train(&model, &train_set, &test_set, &train_config)?;
        assert!(
            report.epochs.iter().all(|r| r.loss.is_finite()),
            "{ablation:?}/{axis:?} produced a non-finite loss"
        );
        let (first, last) = (report.epochs[0].loss, report.epochs[4].loss);
        assert!(
            last < first,
            "{ablation:?}/{axis:?} did not learn: loss {first:.4} -> {last:.4}"
        );
        println!(
            "variant {ablation:?}/{axis:?}: loss {first:.4} -> {last:.4}, test {:.1}%",
            report.final_test_accuracy
        );
    }
    Ok(())
}
