//! Extraction quality metrics and the temporal-redundancy countermeasure.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::fault::FaultSpec;
use crate::float::ProbabilityVector;
use crate::model::{PrecisionMode, RunInput, StudentLayer, StudentModel};
use crate::rng::{stream, SeededStream};
use crate::Result;

/// Componentwise |true - recovered| maxima plus a per-decade histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSummary {
    pub max_weight_abs_error: f64,
    pub max_bias_abs_error: f64,
    pub histogram: ErrorHistogram,
    pub precision_mode: PrecisionMode,
}

/// Histogram of per-parameter absolute errors bucketed by decade: bucket
/// `d` counts errors in `[10^d, 10^(d+1))`; exactly-zero errors are
/// counted separately.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorHistogram {
    pub exact: usize,
    pub decades: BTreeMap<i32, usize>,
}

impl ErrorHistogram {
    fn record(&mut self, error: f64) {
        if error == 0.0 {
            self.exact += 1;
        } else {
            let decade = error.log10().floor() as i32;
            *self.decades.entry(decade).or_insert(0) += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.exact + self.decades.values().sum::<usize>()
    }
}

/// Componentwise comparison of a recovered layer against the truth.
pub fn summarize_precision(
    truth: &StudentLayer,
    recovered: &StudentLayer,
    precision_mode: PrecisionMode,
) -> Result<PrecisionSummary> {
    if truth.n() != recovered.n() || truth.m() != recovered.m() {
        return Err(Error::Usage(format!(
            "dimension mismatch: truth {}x{}, recovered {}x{}",
            truth.n(),
            truth.m(),
            recovered.n(),
            recovered.m()
        )));
    }
    let mut histogram = ErrorHistogram::default();
    let mut max_weight = 0.0f64;
    for i in 0..truth.n() {
        for j in 0..truth.m() {
            let e = (truth.weight(i, j) - recovered.weight(i, j)).abs();
            histogram.record(e);
            max_weight = max_weight.max(e);
        }
    }
    let mut max_bias = 0.0f64;
    for j in 0..truth.m() {
        let e = (truth.bias(j) - recovered.bias(j)).abs();
        histogram.record(e);
        max_bias = max_bias.max(e);
    }
    Ok(PrecisionSummary {
        max_weight_abs_error: max_weight,
        max_bias_abs_error: max_bias,
        histogram,
        precision_mode,
    })
}

pub fn precision_summary_csv(summary: &PrecisionSummary) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("precision_mode,{}\n", summary.precision_mode.name()));
    out.push_str(&format!(
        "max_weight_abs_error,{}\n",
        summary.max_weight_abs_error
    ));
    out.push_str(&format!("max_bias_abs_error,{}\n", summary.max_bias_abs_error));
    out.push_str(&format!("errors_exactly_zero,{}\n", summary.histogram.exact));
    for (decade, count) in &summary.histogram.decades {
        out.push_str(&format!("errors_in_decade_1e{decade},{count}\n"));
    }
    out
}

/// Rounds every parameter to the nearest multiple of `10^-digits`,
/// ties to even. Values whose spacing already exceeds the grid are
/// returned unchanged.
pub fn round_parameters(layer: &StudentLayer, digits: u32) -> StudentLayer {
    let round = |v: f64| round_to_digits(v, digits);
    let weights = layer
        .weights()
        .iter()
        .map(|row| row.iter().map(|&v| round(v)).collect())
        .collect();
    let biases = layer.biases().iter().map(|&v| round(v)).collect();
    StudentLayer::new(weights, biases).expect("rounding preserves shape and finiteness")
}

fn round_to_digits(value: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let scaled = value * scale;
    // Once the scaled magnitude reaches 2^53 the float grid is coarser
    // than integers and rounding is the identity.
    if !scaled.is_finite() || scaled.abs() >= 2f64.powi(53) {
        return value;
    }
    scaled.round_ties_even() / scale
}

/// Labeled points in extractor-input space: `m` seeded Gaussian blobs,
/// labels assigned round-robin so every class is equally represented.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetConfig {
    pub seed: u64,
    pub input_dim: usize,
    pub classes: usize,
    /// Points generated in total; the trailing `test_size` form the test set.
    pub total: usize,
    pub test_size: usize,
    /// Scale of the blob centers.
    pub center_scale: f64,
    /// Spread of each blob around its center.
    pub point_sigma: f64,
}

impl DatasetConfig {
    /// Desk-scale defaults: 2000 reference points plus 500 test points.
    pub fn desk_scale(seed: u64, input_dim: usize, classes: usize) -> Self {
        DatasetConfig {
            seed,
            input_dim,
            classes,
            total: 2500,
            test_size: 500,
            center_scale: 2.0,
            point_sigma: 0.4,
        }
    }
}

/// Generates the (reference, test) split.
pub fn gaussian_blobs(config: &DatasetConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    if config.classes == 0 || config.input_dim == 0 {
        return Err(Error::Usage("dataset needs positive dimensions".into()));
    }
    if config.test_size >= config.total {
        return Err(Error::Usage(format!(
            "test size {} must be smaller than total {}",
            config.test_size, config.total
        )));
    }
    let mut rng = SeededStream::new(config.seed, stream::DATASET);
    let centers: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| {
            (0..config.input_dim)
                .map(|_| config.center_scale * rng.standard_normal())
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(config.total);
    let mut labels = Vec::with_capacity(config.total);
    for t in 0..config.total {
        let label = t % config.classes;
        let point = centers[label]
            .iter()
            .map(|&c| c + config.point_sigma * rng.standard_normal())
            .collect();
        points.push(point);
        labels.push(label);
    }
    let split = config.total - config.test_size;
    let test = LabeledDataset {
        points: points.split_off(split),
        labels: labels.split_off(split),
    };
    let reference = LabeledDataset { points, labels };
    Ok((reference, test))
}

/// Fraction of points whose argmax prediction matches the label, ties
/// broken by lowest index.
pub fn accuracy(model: &StudentModel, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    let mut correct = 0usize;
    for (point, &label) in dataset.points.iter().zip(&dataset.labels) {
        let z = model.forward_clean(point)?;
        if z.argmax() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// One point of the precision-versus-accuracy sweep. `digits: None` is the
/// no-rounding sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurvePoint {
    pub digits: Option<u32>,
    pub accuracy_original: f64,
    pub accuracy_rounded: f64,
    /// `accuracy_original - accuracy_rounded`.
    pub diff: f64,
    /// Whether the two models agreed on the argmax of every test point.
    pub predictions_identical: bool,
}

/// Accuracy difference between two models on the same dataset.
pub fn accuracy_diff(
    model_a: &StudentModel,
    model_b: &StudentModel,
    dataset: &LabeledDataset,
) -> Result<(f64, f64, f64)> {
    if model_a.input_dim() != model_b.input_dim() || model_a.m() != model_b.m() {
        return Err(Error::Usage("models do not share dimensions".into()));
    }
    let a = accuracy(model_a, dataset)?;
    let b = accuracy(model_b, dataset)?;
    Ok((a, b, a - b))
}

/// Sweeps rounding granularity over the recovered student layer and
/// reports accuracy against the original model at each step.
pub fn accuracy_curve(
    original: &StudentModel,
    recovered_student: &StudentLayer,
    dataset: &LabeledDataset,
    digits: &[Option<u32>],
) -> Result<Vec<AccuracyCurvePoint>> {
    if dataset.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    let acc_original = accuracy(original, dataset)?;
    let original_preds: Vec<usize> = dataset
        .points
        .iter()
        .map(|p| original.forward_clean(p).map(|z| z.argmax()))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(digits.len());
    for &d in digits {
        let mut layer = match d {
            Some(d) => round_parameters(recovered_student, d),
            None => recovered_student.clone(),
        };
        if original.precision_mode() == PrecisionMode::Binary32 {
            // A 32-bit deployment stores the rounded value at device width.
            layer = layer.quantized_to_binary32();
        }
        let candidate = StudentModel::new(
            original.extractor().clone(),
            layer,
            original.precision_mode(),
        )?;
        let mut correct = 0usize;
        let mut identical = true;
        for ((point, &label), &orig_pred) in dataset
            .points
            .iter()
            .zip(&dataset.labels)
            .zip(&original_preds)
        {
            let pred = candidate.forward_clean(point)?.argmax();
            if pred == label {
                correct += 1;
            }
            if pred != orig_pred {
                identical = false;
            }
        }
        let acc_rounded = correct as f64 / dataset.len() as f64;
        points.push(AccuracyCurvePoint {
            digits: d,
            accuracy_original: acc_original,
            accuracy_rounded: acc_rounded,
            diff: acc_original - acc_rounded,
            predictions_identical: identical,
        });
    }
    Ok(points)
}

pub fn accuracy_curve_csv(points: &[AccuracyCurvePoint]) -> String {
    let mut out =
        String::from("digits,accuracy_original,accuracy_rounded,diff,predictions_identical\n");
    for p in points {
        let digits = match p.digits {
            Some(d) => d.to_string(),
            None => "inf".to_string(),
        };
        out.push_str(&format!(
            "{digits},{},{},{},{}\n",
            p.accuracy_original, p.accuracy_rounded, p.diff, p.predictions_identical
        ));
    }
    out
}

/// Comparator used by the redundancy check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionRule {
    /// Componentwise numerical equality; +0.0 and -0.0 compare equal, so a
    /// sign flip of an exactly-zero value is invisible.
    ExactValue,
}

/// Outcome of running the computation `N` times with one faulted run.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyOutcome {
    pub runs: usize,
    pub detected: bool,
    pub outputs: Vec<ProbabilityVector>,
    pub rule: DetectionRule,
}

/// Temporal redundancy: execute `runs` forward passes, one of them
/// faulted, and flag the fault iff any output differs numerically from
/// the others. Covers every single-run fault that changes a nonzero
/// value; sign flips of exact zeros are a blind spot.
pub fn redundancy_detect(
    model: &StudentModel,
    input: &RunInput,
    fault: &FaultSpec,
    runs: usize,
    faulted_run_index: usize,
) -> Result<RedundancyOutcome> {
    if runs < 2 {
        return Err(Error::Usage("redundancy needs at least 2 runs".into()));
    }
    if faulted_run_index >= runs {
        return Err(Error::Usage(format!(
            "faulted run index {faulted_run_index} out of range for {runs} runs"
        )));
    }
    let mut outputs = Vec::with_capacity(runs);
    for k in 0..runs {
        let fault_here = if k == faulted_run_index { Some(fault) } else { None };
        outputs.push(model.forward(input, fault_here)?);
    }
    let first = &outputs[0];
    let detected = outputs.iter().any(|out| {
        out.as_slice()
            .iter()
            .zip(first.as_slice())
            .any(|(a, b)| !(a == b))
    });
    Ok(RedundancyOutcome {
        runs,
        detected,
        outputs,
        rule: DetectionRule::ExactValue,
    })
}
