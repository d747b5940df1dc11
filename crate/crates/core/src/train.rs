//! Cross-entropy training with Adam, plus evaluation that bundles accuracy,
//! the scatter criteria, and a confusion matrix.
//!
//! Training is deterministic for a fixed `(model seed, TrainConfig, data)`
//! triple: batch order comes from one seeded shuffle stream, and every
//! update runs single-threaded over the tape. Reports therefore differ
//! between identical runs only in their wall-clock field.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SignalDataset;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, confusion_matrix, scatter_metrics, ScatterMetrics};
use crate::model::Model;
use crate::nn::Mode;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    pub seed: u64,
    /// Epoch interval between checkpoint snapshots taken by callers that
    /// persist progress; the final state is always written regardless.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epoch count must be ≥ 1"));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of the labels under `softmax(logits)`,
/// computed in the log domain with row-max subtraction. The gradient with
/// respect to the logits is `(softmax(logits) − onehot(labels)) / B`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::contract(format!(
            "cross entropy needs [batch, classes] logits, got {:?}",
            logits.shape()
        )));
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::contract(format!(
            "{batch} logit rows but {} labels",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::contract("cross entropy of an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let row_max = logits.max_last_axis_detached().to_vec();
    let spread: Vec<Real> = row_max
        .iter()
        .flat_map(|&m| std::iter::repeat(m).take(classes))
        .collect();
    let shifted = logits.sub(&Tensor::from_vec(spread, &[batch, classes])?)?;
    let log_norm = shifted
        .exp()
        .sum_last_axis()
        .ln()?
        .add(&Tensor::from_vec(row_max, &[batch])?)?;
    Ok(log_norm.sub(&logits.gather_last(labels)?)?.mean())
}

/// Adam optimizer with bias-corrected first and second moments. Moment
/// buffers are allocated on the first [`Adam::step`] and stay aligned with
/// that parameter list from then on.
pub struct Adam {
    learning_rate: Real,
    beta1: Real,
    beta2: Real,
    epsilon: Real,
    steps: u64,
    first: Vec<Vec<Real>>,
    second: Vec<Vec<Real>>,
}

impl Adam {
    pub fn new(learning_rate: Real, beta1: Real, beta2: Real, epsilon: Real) -> Adam {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn from_config(config: &TrainConfig) -> Adam {
        Adam::new(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update using each parameter's currently assigned
    /// gradient. Parameters that did not participate in the last backward
    /// pass carry zero gradient and are left untouched by the math.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters but was stepped with {}",
                self.first.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let correction1 = 1.0 - self.beta1.powi(self.steps as i32);
        let correction2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, (name, param)) in params.iter().enumerate() {
            let grad = param.grad();
            if grad.len() != param.len() {
                return Err(Error::contract(format!(
                    "gradient length {} does not match `{name}` ({} values)",
                    grad.len(),
                    param.len()
                )));
            }
            if let Some(bad) = grad.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient {bad} in `{name}`"
                )));
            }
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let (beta1, beta2) = (self.beta1, self.beta2);
            let (lr, eps) = (self.learning_rate, self.epsilon);
            param.apply_update(|values| {
                for (j, g) in grad.iter().enumerate() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                    let m_hat = m[j] / correction1;
                    let v_hat = v[j] / correction2;
                    values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: Real,
    pub train_accuracy: Real,
    pub test_accuracy: Real,
}

/// Everything [`evaluate`] measures on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: Real,
    pub scatter: ScatterMetrics,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub model: crate::model::ModelConfig,
    pub epochs: Vec<EpochRecord>,
    pub final_test_accuracy: Real,
    pub scatter: ScatterMetrics,
    pub confusion: Vec<Vec<usize>>,
    /// Wall-clock seconds; the single field excluded from determinism
    /// comparisons.
    pub wall_clock_s: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::contract(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<TrainReport> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("report: {e}"),
        })
    }

    /// The report with timing zeroed, for byte-comparing two runs.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,test_acc\n");
        for record in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                record.epoch, record.loss, record.train_accuracy, record.test_accuracy
            ));
        }
        out
    }
}

/// Fits `model` on `train_set`, measuring test accuracy after every epoch.
pub fn train(
    model: &Model,
    train_set: &SignalDataset,
    test_set: &SignalDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, train_set, test_set, config, |_, _| Ok(()))
}

/// [`train`] with a per-epoch callback, called after the epoch's updates
/// with its finished record — the hook for checkpoint snapshots.
pub fn train_with(
    model: &Model,
    train_set: &SignalDataset,
    test_set: &SignalDataset,
    config: &TrainConfig,
    mut after_epoch: impl FnMut(usize, &EpochRecord) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    check_compatible(model, train_set)?;
    check_compatible(model, test_set)?;

    let started = Instant::now();
    let params = model.named_parameters();
    let mut optimizer = Adam::from_config(config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_index, chunk) in indices.chunks(config.batch_size).enumerate() {
            let (x, labels) = train_set.batch(chunk)?;
            let logits = model.forward(&x, Mode::Train)?;
            let loss = cross_entropy(&logits, &labels)?;
            let loss_value = loss.item()?;
            if !loss_value.is_finite() {
                return Err(Error::numeric(format!(
                    "loss became {loss_value} at epoch {epoch}, batch {}; \
                     aborting before the update so parameters stay at their last good state",
                    batch_index + 1
                )));
            }
            loss_sum += loss_value * chunk.len() as Real;
            correct += logits
                .argmax_rows()?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            for (_, param) in &params {
                param.zero_grad();
            }
            loss.backward()?;
            optimizer.step(&params)?;
        }

        let record = EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as Real,
            train_accuracy: 100.0 * correct as Real / train_set.len() as Real,
            test_accuracy: test_accuracy(model, test_set, config.batch_size)?,
        };
        after_epoch(epoch, &record)?;
        records.push(record);
    }

    let evaluation = evaluate(model, test_set, config.batch_size)?;
    Ok(TrainReport {
        seed: config.seed,
        config: config.clone(),
        model: model.config().clone(),
        epochs: records,
        final_test_accuracy: evaluation.accuracy,
        scatter: evaluation.scatter,
        confusion: evaluation.confusion,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs the model in eval mode over `dataset` and reports accuracy, the
/// scatter criteria of the penultimate-layer features, and the confusion
/// matrix.
pub fn evaluate(model: &Model, dataset: &SignalDataset, batch_size: usize) -> Result<Evaluation> {
    if batch_size == 0 {
        return Err(Error::contract("evaluation batch size must be ≥ 1"));
    }
    check_compatible(model, dataset)?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut features = Vec::new();
    let mut feature_width = 0;
    for chunk in indices.chunks(batch_size) {
        let (x, _) = dataset.batch(chunk)?;
        let (logits, batch_features) = model.forward_with_features(&x, Mode::Eval)?;
        predictions.extend(logits.argmax_rows()?);
        feature_width = batch_features.shape()[1];
        features.extend(batch_features.to_vec());
    }
    let feature_matrix = Tensor::from_vec(features, &[dataset.len(), feature_width])?;
    Ok(Evaluation {
        accuracy: accuracy(&predictions, &dataset.labels)?,
        scatter: scatter_metrics(&feature_matrix, &dataset.labels)?,
        confusion: confusion_matrix(&predictions, &dataset.labels, dataset.num_classes())?,
    })
}

fn test_accuracy(model: &Model, dataset: &SignalDataset, batch_size: usize) -> Result<Real> {
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut predictions = Vec::with_capacity(dataset.len());
    for chunk in indices.chunks(batch_size) {
        let (x, _) = dataset.batch(chunk)?;
        predictions.extend(model.predict(&x, Mode::Eval)?);
    }
    accuracy(&predictions, &dataset.labels)
}

fn check_compatible(model: &Model, dataset: &SignalDataset) -> Result<()> {
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("dataset holds no samples"));
    }
    let config = model.config();
    if dataset.sample_length() != config.input_length {
        return Err(Error::contract(format!(
            "dataset samples hold {} values but the model expects {}",
            dataset.sample_length(),
            config.input_length
        )));
    }
    if dataset.num_classes() > config.num_classes {
        return Err(Error::contract(format!(
            "dataset labels span {} classes but the model emits {}",
            dataset.num_classes(),
            config.num_classes
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, FaultSpec, Provenance};
    use crate::model::ModelConfig;

    fn softmax_rows(logits: &[Real], classes: usize) -> Vec<Real> {
        logits
            .chunks_exact(classes)
            .flat_map(|row| {
                let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
                let e: Vec<Real> = row.iter().map(|v| (v - m).exp()).collect();
                let s: Real = e.iter().sum();
                e.into_iter().map(move |v| v / s)
            })
            .collect()
    }

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            input_length: 128,
            embed_channels: 4,
            num_blocks: 1,
            num_classes: 2,
            classifier_hidden: 16,
            ..ModelConfig::default()
        }
    }

    fn tiny_dataset() -> (SignalDataset, SignalDataset) {
        let specs = vec![FaultSpec::normal(), FaultSpec::gear_chip()];
        make_dataset(&specs, 6, 128, 12000.0, None, 0.67, 11).unwrap()
    }

    #[test]
    fn uniform_logits_cost_the_log_of_the_class_count() -> Result<()> {
        let logits = Tensor::zeros(&[3, 4])?;
        let loss = cross_entropy(&logits, &[0, 2, 3])?.item()?;
        assert!((loss - (4.0 as Real).ln()).abs() < 1e-12);

        let mut confident = vec![0.0; 8];
        confident[1] = 50.0;
        confident[4 + 0] = 50.0;
        let sharp = Tensor::from_vec(confident, &[2, 4])?;
        assert!(cross_entropy(&sharp, &[1, 0])?.item()? < 1e-6);
        Ok(())
    }

    #[test]
    fn cross_entropy_rejects_bad_labels_and_shapes() -> Result<()> {
        let logits = Tensor::zeros(&[2, 3])?;
        assert!(cross_entropy(&logits, &[0, 3]).is_err());
        assert!(cross_entropy(&logits, &[0]).is_err());
        assert!(cross_entropy(&Tensor::zeros(&[6])?, &[0]).is_err());
        Ok(())
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() -> Result<()> {
        let values = vec![
            0.3, -1.2, 0.8, 2.1, -0.4, 1.7, 0.0, -2.2, 0.9, 0.1, -0.6, 0.4, 1.1, -1.9, 0.2,
            -0.8, 0.5, 2.4, -1.1, 0.6,
        ];
        let labels = [2, 0, 4, 1];
        let logits = Tensor::param(values.clone(), &[4, 5])?;
        cross_entropy(&logits, &labels)?.backward()?;
        let grad = logits.grad();
        let probabilities = softmax_rows(&values, 5);
        for row in 0..4 {
            for class in 0..5 {
                let onehot = if labels[row] == class { 1.0 } else { 0.0 };
                let expected = (probabilities[row * 5 + class] - onehot) / 4.0;
                let got = grad[row * 5 + class];
                assert!(
                    (got - expected).abs() < 1e-10,
                    "row {row} class {class}: {got} vs {expected}"
                );
            }
        }
        Ok(())
    }

    #[test]
    fn first_adam_step_moves_by_the_learning_rate_sign() -> Result<()> {
        let param = Tensor::param(vec![1.0, -2.0, 0.5], &[3])?;
        let direction = Tensor::from_vec(vec![2.0, -3.0, 0.0], &[3])?;
        let before = param.to_vec();
        param.mul(&direction)?.sum().backward()?;

        let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8);
        let params = vec![(String::from("p"), param.clone())];
        adam.step(&params)?;
        let after = param.to_vec();
        assert!((after[0] - (before[0] - 0.01)).abs() < 1e-6);
        assert!((after[1] - (before[1] + 0.01)).abs() < 1e-6);
        assert_eq!(after[2], before[2], "zero gradient leaves the value alone");
        Ok(())
    }

    #[test]
    fn adam_converges_on_a_quadratic_bowl() -> Result<()> {
        let w = Tensor::param(vec![0.0, 0.0], &[2])?;
        let target = Tensor::from_vec(vec![3.0, -2.0], &[2])?;
        let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8);
        let params = vec![(String::from("w"), w.clone())];
        for _ in 0..2000 {
            w.zero_grad();
            let diff = w.sub(&target)?;
            diff.mul(&diff)?.sum().backward()?;
            adam.step(&params)?;
        }
        let end = w.to_vec();
        let distance = ((end[0] - 3.0).powi(2) + (end[1] + 2.0).powi(2)).sqrt();
        assert!(distance < 1e-3, "‖w − w*‖ = {distance} after 2000 steps");
        Ok(())
    }

    #[test]
    fn non_finite_gradients_name_the_parameter() -> Result<()> {
        let param = Tensor::param(vec![1e200], &[1])?;
        param.mul(&param)?.mul(&param)?.sum().backward()?;
        let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8);
        let err = adam
            .step(&[(String::from("cube.weight"), param)])
            .unwrap_err();
        assert!(
            err.to_string().contains("cube.weight"),
            "error should name the parameter: {err}"
        );
        Ok(())
    }

    #[test]
    fn training_is_deterministic_and_starts_at_chance_loss() -> Result<()> {
        let (train_set, test_set) = tiny_dataset();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        };

        let model_a = Model::new(&tiny_model_config(), 21)?;
        let report_a = train(&model_a, &train_set, &test_set, &config)?;
        assert_eq!(report_a.epochs.len(), 3);
        for record in &report_a.epochs {
            assert!((0.0..=100.0).contains(&record.train_accuracy));
            assert!((0.0..=100.0).contains(&record.test_accuracy));
        }
        assert!(
            (report_a.epochs[0].loss - (2.0 as Real).ln()).abs() < 0.6,
            "untrained 2-class loss should sit near ln 2, got {}",
            report_a.epochs[0].loss
        );

        let model_b = Model::new(&tiny_model_config(), 21)?;
        let report_b = train(&model_b, &train_set, &test_set, &config)?;
        assert_eq!(
            report_a.without_timing(),
            report_b.without_timing(),
            "same seed must reproduce the report"
        );
        for ((_, a), (_, b)) in model_a
            .named_parameters()
            .iter()
            .zip(model_b.named_parameters().iter())
        {
            let bits = |t: &Tensor| t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "final parameters must match bitwise");
        }
        Ok(())
    }

    #[test]
    fn epoch_hook_fires_once_per_epoch() -> Result<()> {
        let (train_set, test_set) = tiny_dataset();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let model = Model::new(&tiny_model_config(), 3)?;
        let mut seen = Vec::new();
        train_with(&model, &train_set, &test_set, &config, |epoch, record| {
            seen.push((epoch, record.epoch));
            Ok(())
        })?;
        assert_eq!(seen, vec![(1, 1), (2, 2)]);
        Ok(())
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() -> Result<()> {
        let (train_set, test_set) = tiny_dataset();
        let mut poisoned = train_set.clone();
        poisoned.samples[0][7] = Real::NAN;
        let config = TrainConfig {
            epochs: 1,
            batch_size: 12,
            seed: 5,
            ..TrainConfig::default()
        };
        let model = Model::new(&tiny_model_config(), 3)?;
        let err = train(&model, &poisoned, &test_set, &config).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("epoch 1"), "diagnostics: {err}");
        Ok(())
    }

    #[test]
    fn evaluation_is_internally_consistent() -> Result<()> {
        let (train_set, _) = tiny_dataset();
        let model = Model::new(&tiny_model_config(), 9)?;
        let evaluation = evaluate(&model, &train_set, 4)?;
        let total: usize = evaluation.confusion.iter().flatten().sum();
        assert_eq!(total, train_set.len());
        for class in 0..train_set.num_classes() {
            let row_sum: usize = evaluation.confusion[class].iter().sum();
            assert_eq!(
                row_sum,
                train_set.labels.iter().filter(|&&l| l == class).count()
            );
        }
        let diagonal: usize = (0..train_set.num_classes())
            .map(|i| evaluation.confusion[i][i])
            .sum();
        assert_eq!(
            evaluation.accuracy,
            100.0 * diagonal as Real / train_set.len() as Real
        );
        assert_eq!(evaluation.scatter.j2, 1.0 + evaluation.scatter.j1);
        Ok(())
    }

    #[test]
    fn incompatible_datasets_are_rejected_up_front() -> Result<()> {
        let (train_set, test_set) = tiny_dataset();
        let model = Model::new(&tiny_model_config(), 9)?;
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            seed: 0,
            ..TrainConfig::default()
        };

        let mut wrong_length = train_set.clone();
        for sample in &mut wrong_length.samples {
            sample.truncate(64);
        }
        assert!(train(&model, &wrong_length, &test_set, &config).is_err());

        let mut too_many_classes = train_set.clone();
        too_many_classes.labels[0] = 2;
        too_many_classes.class_names.push(String::from("extra"));
        assert!(train(&model, &too_many_classes, &test_set, &config).is_err());

        let bad_config = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&model, &train_set, &test_set, &bad_config).is_err());
        Ok(())
    }

    #[test]
    fn reports_round_trip_through_json_and_csv() -> Result<()> {
        let (train_set, test_set) = tiny_dataset();
        assert_eq!(train_set.provenance, Provenance::Synthetic);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let model = Model::new(&tiny_model_config(), 1)?;
        let report = train(&model, &train_set, &test_set, &config)?;

        let reparsed = TrainReport::from_json(&report.to_json()?)?;
        assert_eq!(reparsed.without_timing(), report.without_timing());

        let csv = report.curves_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,loss,train_acc,test_acc"));
        assert_eq!(lines.count(), 2);
        Ok(())
    }
}
