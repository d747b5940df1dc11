//! Classification accuracy, confusion counts, and the scatter-based
//! feature-separability criteria J1/J2.
//!
//! The scatter criteria compare between-class spread to within-class spread
//! of a feature matrix. Only traces are needed for the scalar criteria, so
//! the full D×D scatter matrices are never materialized:
//! `tr(Sb) = Σₖ Nₖ‖v̄ₖ−v̄ₘ‖²` and `tr(Sw) = Σₖ Σ_{x∈Cₖ} ‖x−v̄ₖ‖²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Floor applied to `tr(Sw)` before dividing, so perfectly collapsed
/// clusters report a finite (capped) ratio instead of dividing by zero.
pub const WITHIN_TRACE_FLOOR: Real = 1e-12;

/// Fraction of correct predictions, in percent.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<Real> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("accuracy of an empty prediction set"));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(100.0 * correct as Real / predictions.len() as Real)
}

/// Per-class prediction counts: `confusion[true_class][predicted_class]`.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::contract(format!(
                "class index {} out of range for {num_classes} classes",
                p.max(l)
            )));
        }
        counts[l][p] += 1;
    }
    Ok(counts)
}

/// Scalar separability criteria of a labeled feature matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterMetrics {
    /// `tr(Sb) / tr(Sw)` — larger means better-separated classes.
    pub j1: Real,
    /// `tr(Sw+Sb) / tr(Sw)`, which reduces to `1 + j1`.
    pub j2: Real,
    /// The same numerator over `tr(Sb)` instead, emitted so either
    /// normalization convention can be read off one report.
    pub j2_alternative: Real,
    pub between_trace: Real,
    pub within_trace: Real,
    /// True when `tr(Sw)` hit [`WITHIN_TRACE_FLOOR`], i.e. the ratios are
    /// ceiling values, not measurements.
    pub capped: bool,
}

/// Computes [`ScatterMetrics`] from an `[N, D]` feature matrix and its
/// class labels. Needs at least two samples spanning at least two classes.
pub fn scatter_metrics(features: &Tensor, labels: &[usize]) -> Result<ScatterMetrics> {
    if features.rank() != 2 {
        return Err(Error::contract(format!(
            "scatter metrics need an [N, D] feature matrix, got {:?}",
            features.shape()
        )));
    }
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if labels.len() != n {
        return Err(Error::contract(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if n < 2 || d == 0 {
        return Err(Error::contract(format!(
            "scatter metrics need N ≥ 2 and D ≥ 1, got N = {n}, D = {d}"
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut class_counts = vec![0usize; num_classes];
    for &l in labels {
        class_counts[l] += 1;
    }
    if class_counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::contract(
            "scatter metrics need samples from at least two classes",
        ));
    }

    let data = features.to_vec();
    let mut class_means = vec![vec![0.0; d]; num_classes];
    let mut global_mean = vec![0.0; d];
    for (row, &l) in data.chunks_exact(d).zip(labels) {
        for (j, &v) in row.iter().enumerate() {
            class_means[l][j] += v;
            global_mean[j] += v;
        }
    }
    for (mean, &count) in class_means.iter_mut().zip(&class_counts) {
        if count > 0 {
            for v in mean.iter_mut() {
                *v /= count as Real;
            }
        }
    }
    for v in global_mean.iter_mut() {
        *v /= n as Real;
    }

    let mut within_trace = 0.0;
    for (row, &l) in data.chunks_exact(d).zip(labels) {
        for (j, &v) in row.iter().enumerate() {
            let diff = v - class_means[l][j];
            within_trace += diff * diff;
        }
    }
    let mut between_trace = 0.0;
    for (mean, &count) in class_means.iter().zip(&class_counts) {
        if count == 0 {
            continue;
        }
        let mut dist = 0.0;
        for (j, &v) in mean.iter().enumerate() {
            let diff = v - global_mean[j];
            dist += diff * diff;
        }
        between_trace += count as Real * dist;
    }

    let capped = within_trace < WITHIN_TRACE_FLOOR;
    let j1 = between_trace / within_trace.max(WITHIN_TRACE_FLOOR);
    Ok(ScatterMetrics {
        j1,
        j2: 1.0 + j1,
        j2_alternative: (within_trace + between_trace) / between_trace.max(WITHIN_TRACE_FLOOR),
        between_trace,
        within_trace,
        capped,
    })
}
