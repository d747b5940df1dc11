//! Browser bindings for the vibra library: synthesize fault signals, fit the
//! spectral filter as a denoiser, and train a miniature model, all in-page.
//! Build with `wasm-pack build --target web` (see the repository README).
//!
//! The `*_impl` functions carry the logic and return library errors, so the
//! crate compiles and tests on host targets; the exported wrappers translate
//! to `JsError` at the boundary (a conversion that only works under wasm).

use std::str::FromStr;

use wasm_bindgen::prelude::*;

use vibra_core::data::{add_noise_snr, gen_fault_signal, make_dataset, FaultKind, FaultSpec};
use vibra_core::model::{Model, ModelConfig};
use vibra_core::spectral::{complex_hadamard, irdft, rdft, SpectralWeight};
use vibra_core::train::{train, Adam, TrainConfig};
use vibra_core::{Error, Real, Result, Tensor};

fn js_error(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn spec_for(kind: &str) -> Result<FaultSpec> {
    Ok(match FaultKind::from_str(kind)? {
        FaultKind::Normal => FaultSpec::normal(),
        FaultKind::OuterRace => FaultSpec::outer_race(),
        FaultKind::InnerRace => FaultSpec::inner_race(),
        FaultKind::GearChip => FaultSpec::gear_chip(),
    })
}

fn magnitudes(signal: &[Real], sample_rate: Real) -> Result<(Vec<Real>, Vec<Real>)> {
    let spectrum = rdft(&Tensor::from_vec(signal.to_vec(), &[1, signal.len()])?)?;
    let mut freq = Vec::with_capacity(spectrum.bins());
    let mut mag = Vec::with_capacity(spectrum.bins());
    for b in 0..spectrum.bins() {
        freq.push(b as Real * sample_rate / signal.len() as Real);
        mag.push(spectrum.magnitude(0, b)?);
    }
    Ok((freq, mag))
}

/// One synthesized vibration window with its frequency-domain view.
#[wasm_bindgen]
pub struct SynthResult {
    clean: Vec<Real>,
    noisy: Vec<Real>,
    impulses: Vec<Real>,
    frequencies: Vec<Real>,
    clean_magnitude: Vec<Real>,
    noisy_magnitude: Vec<Real>,
}

#[wasm_bindgen]
impl SynthResult {
    pub fn clean(&self) -> Vec<Real> {
        self.clean.clone()
    }
    pub fn noisy(&self) -> Vec<Real> {
        self.noisy.clone()
    }
    /// Impulse onset times in seconds; empty for the healthy class.
    pub fn impulses(&self) -> Vec<Real> {
        self.impulses.clone()
    }
    pub fn frequencies(&self) -> Vec<Real> {
        self.frequencies.clone()
    }
    pub fn clean_magnitude(&self) -> Vec<Real> {
        self.clean_magnitude.clone()
    }
    pub fn noisy_magnitude(&self) -> Vec<Real> {
        self.noisy_magnitude.clone()
    }
}

fn synthesize_impl(
    kind: &str,
    length: u32,
    sample_rate: f64,
    snr_db: Option<f64>,
    seed: u32,
) -> Result<SynthResult> {
    let spec = spec_for(kind)?;
    spec.validate(sample_rate)?;
    let (clean, impulses) = gen_fault_signal(&spec, length as usize, sample_rate, seed as u64)?;
    let noisy = match snr_db {
        Some(target) => add_noise_snr(&clean, target, seed as u64 + 1)?,
        None => clean.clone(),
    };
    let (frequencies, clean_magnitude) = magnitudes(&clean, sample_rate)?;
    let (_, noisy_magnitude) = magnitudes(&noisy, sample_rate)?;
    Ok(SynthResult {
        clean,
        noisy,
        impulses,
        frequencies,
        clean_magnitude,
        noisy_magnitude,
    })
}

/// Generates one window of the chosen fault class. `snr_db` of `null`
/// skips noise injection; `kind` is one of `normal`, `outer_race`,
/// `inner_race`, `gear_chip`.
#[wasm_bindgen]
pub fn synthesize(
    kind: &str,
    length: u32,
    sample_rate: f64,
    snr_db: Option<f64>,
    seed: u32,
) -> std::result::Result<SynthResult, JsError> {
    synthesize_impl(kind, length, sample_rate, snr_db, seed).map_err(js_error)
}

/// A fitted spectral filter and what it did to the noisy input.
#[wasm_bindgen]
pub struct FilterResult {
    denoised: Vec<Real>,
    filter_magnitude: Vec<Real>,
    frequencies: Vec<Real>,
    loss_curve: Vec<Real>,
}

#[wasm_bindgen]
impl FilterResult {
    pub fn denoised(&self) -> Vec<Real> {
        self.denoised.clone()
    }
    /// Learned |W| per frequency bin.
    pub fn filter_magnitude(&self) -> Vec<Real> {
        self.filter_magnitude.clone()
    }
    pub fn frequencies(&self) -> Vec<Real> {
        self.frequencies.clone()
    }
    /// Mean-squared error after each optimization step.
    pub fn loss_curve(&self) -> Vec<Real> {
        self.loss_curve.clone()
    }
}

fn fit_filter_impl(
    kind: &str,
    length: u32,
    sample_rate: f64,
    snr_db: f64,
    steps: u32,
    learning_rate: f64,
    seed: u32,
) -> Result<FilterResult> {
    if steps == 0 || steps > 2000 {
        return Err(Error::config("demo bounds: 1..=2000 optimization steps"));
    }
    let spec = spec_for(kind)?;
    spec.validate(sample_rate)?;
    let (clean, _) = gen_fault_signal(&spec, length as usize, sample_rate, seed as u64)?;
    let noisy = add_noise_snr(&clean, snr_db, seed as u64 + 1)?;

    let x = Tensor::from_vec(noisy, &[1, length as usize])?;
    let target = Tensor::from_vec(clean, &[1, length as usize])?;
    let filter = SpectralWeight::identity(1, length as usize / 2 + 1)?;
    let params = vec![(String::from("filter"), filter.packed().clone())];
    let mut optimizer = Adam::new(learning_rate, 0.9, 0.999, 1e-8);

    let mut loss_curve = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let recon = irdft(&complex_hadamard(&rdft(&x)?, &filter)?)?;
        let diff = recon.sub(&target)?;
        let loss = diff.mul(&diff)?.mean();
        loss_curve.push(loss.item()?);
        params[0].1.zero_grad();
        loss.backward()?;
        optimizer.step(&params)?;
    }

    let denoised = irdft(&complex_hadamard(&rdft(&x)?, &filter)?)?.to_vec();
    let bins = length as usize / 2 + 1;
    let filter_magnitude: Vec<Real> = (0..bins).map(|b| filter.magnitude(0, b)).collect();
    let frequencies: Vec<Real> = (0..bins)
        .map(|b| b as Real * sample_rate / length as Real)
        .collect();
    Ok(FilterResult {
        denoised,
        filter_magnitude,
        frequencies,
        loss_curve,
    })
}

/// Fits the learnable spectral filter as a denoiser: starting from the
/// identity, minimizes the mean-squared error between the filtered noisy
/// signal and the clean one. The same `kind`/`length`/`seed` as a previous
/// [`synthesize`] call reproduces that exact signal.
#[wasm_bindgen]
pub fn fit_filter(
    kind: &str,
    length: u32,
    sample_rate: f64,
    snr_db: f64,
    steps: u32,
    learning_rate: f64,
    seed: u32,
) -> std::result::Result<FilterResult, JsError> {
    fit_filter_impl(kind, length, sample_rate, snr_db, steps, learning_rate, seed)
        .map_err(js_error)
}

/// Curves from a miniature two-class training run.
#[wasm_bindgen]
pub struct TrainResult {
    loss: Vec<Real>,
    train_accuracy: Vec<Real>,
    test_accuracy: Vec<Real>,
    final_test_accuracy: Real,
    parameter_count: u32,
}

#[wasm_bindgen]
impl TrainResult {
    pub fn loss(&self) -> Vec<Real> {
        self.loss.clone()
    }
    pub fn train_accuracy(&self) -> Vec<Real> {
        self.train_accuracy.clone()
    }
    pub fn test_accuracy(&self) -> Vec<Real> {
        self.test_accuracy.clone()
    }
    pub fn final_test_accuracy(&self) -> Real {
        self.final_test_accuracy
    }
    pub fn parameter_count(&self) -> u32 {
        self.parameter_count
    }
}

fn train_micro_impl(
    per_class: u32,
    epochs: u32,
    snr_db: Option<f64>,
    seed: u32,
) -> Result<TrainResult> {
    if !(2..=50).contains(&per_class) || epochs == 0 || epochs > 40 {
        return Err(Error::config(
            "demo bounds: 2..=50 samples per class, 1..=40 epochs",
        ));
    }
    let specs = vec![FaultSpec::normal(), FaultSpec::outer_race()];
    let (train_set, test_set) = make_dataset(
        &specs,
        per_class as usize,
        256,
        12000.0,
        snr_db,
        0.8,
        seed as u64,
    )?;
    let config = ModelConfig {
        input_length: 256,
        embed_channels: 4,
        num_blocks: 1,
        num_classes: 2,
        classifier_hidden: 16,
        ..ModelConfig::default()
    };
    let model = Model::new(&config, seed as u64)?;
    let train_config = TrainConfig {
        epochs: epochs as usize,
        batch_size: 8,
        seed: seed as u64,
        ..TrainConfig::default()
    };
    let report = train(&model, &train_set, &test_set, &train_config)?;
    Ok(TrainResult {
        loss: report.epochs.iter().map(|r| r.loss).collect(),
        train_accuracy: report.epochs.iter().map(|r| r.train_accuracy).collect(),
        test_accuracy: report.epochs.iter().map(|r| r.test_accuracy).collect(),
        final_test_accuracy: report.final_test_accuracy,
        parameter_count: model.parameter_count() as u32,
    })
}

/// Trains a one-block model to tell healthy from outer-race windows at the
/// requested noise level, entirely in the page. Sizes are pinned small so a
/// run stays near a second of work.
#[wasm_bindgen]
pub fn train_micro(
    per_class: u32,
    epochs: u32,
    snr_db: Option<f64>,
    seed: u32,
) -> std::result::Result<TrainResult, JsError> {
    train_micro_impl(per_class, epochs, snr_db, seed).map_err(js_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthesize_matches_requested_shape() -> Result<()> {
        let r = synthesize_impl("outer_race", 512, 12000.0, Some(-4.0), 3)?;
        assert_eq!(r.clean().len(), 512);
        assert_eq!(r.noisy().len(), 512);
        assert_eq!(r.frequencies().len(), 257);
        assert!(!r.impulses().is_empty());
        assert_ne!(r.clean(), r.noisy());
        let quiet = synthesize_impl("normal", 512, 12000.0, None, 3)?;
        assert_eq!(quiet.clean(), quiet.noisy());
        assert!(quiet.impulses().is_empty());
        assert!(synthesize_impl("bent_shaft", 512, 12000.0, None, 3).is_err());
        Ok(())
    }

    #[test]
    fn fit_filter_reduces_loss() -> Result<()> {
        let r = fit_filter_impl("outer_race", 256, 12000.0, -4.0, 60, 0.02, 5)?;
        assert_eq!(r.denoised().len(), 256);
        assert_eq!(r.filter_magnitude().len(), 129);
        let curve = r.loss_curve();
        assert_eq!(curve.len(), 60);
        assert!(curve[59] < curve[0]);
        Ok(())
    }

    #[test]
    fn train_micro_learns_and_bounds_inputs() -> Result<()> {
        let r = train_micro_impl(10, 4, None, 9)?;
        assert_eq!(r.loss().len(), 4);
        assert!(r.loss()[3] < r.loss()[0]);
        assert!(r.parameter_count() > 0);
        assert!(train_micro_impl(1, 4, None, 9).is_err());
        assert!(train_micro_impl(10, 99, None, 9).is_err());
        Ok(())
    }
}
