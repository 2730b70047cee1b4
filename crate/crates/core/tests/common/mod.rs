//! Independent brute-force forward oracle and random-model generators for
//! integration tests. The oracle re-implements the whole pipeline with
//! plain loops and the textbook softmax (no max subtraction), so it shares
//! no numerical path with the library under test.

use sniff_core::model::{Activation, DenseLayer, FeatureExtractor, StudentLayer, StudentModel};
use sniff_core::rng::SeededStream;

/// Extractor output computed by straight-line loops.
pub fn oracle_features(model: &StudentModel, x: &[f64]) -> Vec<f64> {
    let mut current = x.to_vec();
    for layer in model.extractor().layers() {
        let mut next = vec![0.0f64; layer.output_dim()];
        for j in 0..layer.output_dim() {
            let mut acc = 0.0f64;
            for i in 0..layer.input_dim() {
                acc += current[i] * layer.weights()[i][j];
            }
            acc += layer.biases()[j];
            next[j] = match layer.activation() {
                Activation::Relu => {
                    if acc > 0.0 {
                        acc
                    } else {
                        0.0
                    }
                }
                Activation::Identity => acc,
                Activation::Tanh => acc.tanh(),
            };
        }
        current = next;
    }
    current
}

/// Logits computed by a naive triple loop.
pub fn oracle_logits(model: &StudentModel, x: &[f64]) -> Vec<f64> {
    let features = oracle_features(model, x);
    let student = model.student();
    let mut logits = vec![0.0f64; student.m()];
    for j in 0..student.m() {
        let mut acc = 0.0f64;
        for (i, &v) in features.iter().enumerate() {
            acc += v * student.weight(i, j);
        }
        logits[j] = acc + student.bias(j);
    }
    logits
}

/// Textbook softmax without stabilization; a numerically independent
/// route as long as the logits stay below the exp overflow threshold.
pub fn oracle_softmax(logits: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|&y| y.exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

pub fn oracle_forward(model: &StudentModel, x: &[f64]) -> Vec<f64> {
    oracle_softmax(&oracle_logits(model, x))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random model with bounded logit magnitude: weight ranges shrink with
/// the widest layer so the unstabilized oracle softmax cannot overflow.
pub fn random_small_model(rng: &mut SeededStream) -> StudentModel {
    let input_dim = 2 + (rng.next_u64() % 31) as usize;
    let hidden_layers = (rng.next_u64() % 3) as usize;
    let n = 1 + (rng.next_u64() % 64) as usize;
    let m = 2 + (rng.next_u64() % 15) as usize;

    let mut dims = vec![input_dim];
    for _ in 0..hidden_layers {
        dims.push(2 + (rng.next_u64() % 63) as usize);
    }
    dims.push(n);

    let widest = *dims.iter().max().unwrap() as f64;
    let amplitude = 1.2 / widest.sqrt();

    let mut layers = Vec::new();
    for l in 0..dims.len() - 1 {
        let (d_in, d_out) = (dims[l], dims[l + 1]);
        let weights = (0..d_in)
            .map(|_| (0..d_out).map(|_| rng.uniform(-amplitude, amplitude)).collect())
            .collect();
        let biases = (0..d_out).map(|_| rng.uniform(-amplitude, amplitude)).collect();
        let activation = if l + 1 == dims.len() - 1 {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(DenseLayer::new(weights, biases, activation).unwrap());
    }

    let weights = (0..n)
        .map(|_| (0..m).map(|_| rng.uniform(-amplitude, amplitude)).collect())
        .collect();
    let biases = (0..m).map(|_| rng.uniform(-amplitude, amplitude)).collect();

    StudentModel::new(
        FeatureExtractor::new(layers).unwrap(),
        StudentLayer::new(weights, biases).unwrap(),
        sniff_core::model::PrecisionMode::Binary64,
    )
    .unwrap()
}

pub fn random_input(rng: &mut SeededStream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.standard_normal()).collect()
}
