//! The victim model: a frozen, publicly known feature extractor followed
//! by a secret dense layer and softmax.
//!
//! Forward passes are instrumented so a fault can be spliced in at any of
//! the six injection points, and are fully deterministic: the summation
//! order for every logit is fixed (ascending feature index, bias added
//! last), so identical input bits always produce identical output bits.

use crate::error::Error;
use crate::fault::{apply_fault, apply_fault_f32, FaultSpec, FaultTarget};
use crate::float::{softmax, softmax_f32, FloatWord, LogitVector, ProbabilityVector};
use crate::rng::{stream, SeededStream};
use crate::Result;

/// Per-layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply_f64(self, y: f64) -> f64 {
        match self {
            // Explicit comparison instead of f64::max keeps relu(-0.0)
            // platform independent.
            Activation::Relu => {
                if y > 0.0 {
                    y
                } else {
                    0.0
                }
            }
            Activation::Identity => y,
            Activation::Tanh => y.tanh(),
        }
    }

    fn apply_f32(self, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    y
                } else {
                    0.0
                }
            }
            Activation::Identity => y,
            Activation::Tanh => y.tanh(),
        }
    }
}

/// One dense layer of the frozen extractor. `weights[i][j]` multiplies
/// input `i` into output `j`, matching `out = x^T W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        let out = biases.len();
        if weights.is_empty() || out == 0 {
            return Err(Error::Usage("dense layer dimensions must be positive".into()));
        }
        for (i, row) in weights.iter().enumerate() {
            if row.len() != out {
                return Err(Error::Usage(format!(
                    "weight row {i} has {} entries, expected {out}",
                    row.len()
                )));
            }
        }
        let finite = weights.iter().flatten().chain(biases.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Usage("dense layer parameters must be finite".into()));
        }
        Ok(DenseLayer {
            weights,
            biases,
            activation,
        })
    }

    /// Identity map of the given width: unit diagonal, zero bias.
    pub fn identity(dim: usize) -> Result<Self> {
        let weights = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        DenseLayer::new(weights, vec![0.0; dim], Activation::Identity)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn output_dim(&self) -> usize {
        self.biases.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
}

/// The frozen, publicly known part of the network: layers 1..k-1 of the
/// teacher. The attacker can evaluate this on any input herself.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<DenseLayer>,
}

impl FeatureExtractor {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Usage("extractor needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Usage(format!(
                    "extractor layer {k} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(FeatureExtractor { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Number of feature values produced, i.e. `n`.
    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Evaluates the extractor in binary64, layer by layer, ascending
    /// input index within each output neuron.
    pub fn features_f64(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.output_dim());
            for j in 0..layer.output_dim() {
                let mut acc = 0.0f64;
                for (i, &v) in current.iter().enumerate() {
                    acc += v * layer.weights[i][j];
                }
                let out = layer.activation.apply_f64(acc + layer.biases[j]);
                if !out.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("extractor layer {l} output [{j}]"),
                    });
                }
                next.push(out);
            }
            current = next;
        }
        Ok(current)
    }

    /// Binary32 variant: the input is rounded to binary32 on entry and
    /// every operation rounds to binary32, mirroring a 32-bit device.
    pub fn features_f32(&self, x: &[f64]) -> Result<Vec<f32>> {
        self.check_input(x)?;
        let mut current: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.output_dim());
            for j in 0..layer.output_dim() {
                let mut acc = 0.0f32;
                for (i, &v) in current.iter().enumerate() {
                    acc += v * layer.weights[i][j] as f32;
                }
                let out = layer.activation.apply_f32(acc + layer.biases[j] as f32);
                if !out.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("extractor layer {l} output [{j}]"),
                    });
                }
                next.push(out);
            }
            current = next;
        }
        Ok(current)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Usage(format!(
                "input has {} entries, extractor expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("input entry [{pos}] is not finite")));
        }
        Ok(())
    }
}

/// The secret parameters: weight matrix `W_S` (`n` rows, `m` columns) and
/// bias vector `b_S` (length `m`).
#[derive(Debug, Clone, PartialEq)]
pub struct StudentLayer {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl StudentLayer {
    pub fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        let m = biases.len();
        if weights.is_empty() || m == 0 {
            return Err(Error::Usage("student layer dimensions must be positive".into()));
        }
        for (i, row) in weights.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Usage(format!(
                    "student weight row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
        }
        let finite = weights.iter().flatten().chain(biases.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Usage("student parameters must be finite".into()));
        }
        Ok(StudentLayer { weights, biases })
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn m(&self) -> usize {
        self.biases.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    pub fn bias(&self, j: usize) -> f64 {
        self.biases[j]
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// Rounds every parameter to the nearest binary32 value, e.g. to
    /// deploy an attacker-precision estimate onto a 32-bit device.
    pub fn quantized_to_binary32(&self) -> StudentLayer {
        let quantize = |v: f64| (v as f32) as f64;
        StudentLayer {
            weights: self
                .weights
                .iter()
                .map(|row| row.iter().map(|&v| quantize(v)).collect())
                .collect(),
            biases: self.biases.iter().map(|&v| quantize(v)).collect(),
        }
    }
}

/// Victim arithmetic width. The attack math itself always runs in
/// binary64; this mode describes the device being attacked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionMode {
    Binary64,
    Binary32,
}

impl PrecisionMode {
    pub fn name(self) -> &'static str {
        match self {
            PrecisionMode::Binary64 => "binary64",
            PrecisionMode::Binary32 => "binary32",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "binary64" => Some(PrecisionMode::Binary64),
            "binary32" => Some(PrecisionMode::Binary32),
            _ => None,
        }
    }

    /// Unit roundoff of an observation stored at this width.
    pub fn unit_roundoff(self) -> f64 {
        match self {
            PrecisionMode::Binary64 => 2f64.powi(-53),
            PrecisionMode::Binary32 => 2f64.powi(-24),
        }
    }
}

/// Extractor output for one input, i.e. `I(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Input to a forward pass: either a raw extractor input or a precomputed
/// feature vector. Both entry points are legitimate because the extractor
/// is public.
#[derive(Debug, Clone, PartialEq)]
pub enum RunInput {
    Raw(Vec<f64>),
    Features(FeatureVector),
}

impl From<Vec<f64>> for RunInput {
    fn from(x: Vec<f64>) -> Self {
        RunInput::Raw(x)
    }
}

impl From<FeatureVector> for RunInput {
    fn from(features: FeatureVector) -> Self {
        RunInput::Features(features)
    }
}

/// The full victim: public extractor, secret student layer, arithmetic
/// width. Immutable after construction; forward passes on a shared model
/// may run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    extractor: FeatureExtractor,
    student: StudentLayer,
    precision_mode: PrecisionMode,
}

impl StudentModel {
    pub fn new(
        extractor: FeatureExtractor,
        student: StudentLayer,
        precision_mode: PrecisionMode,
    ) -> Result<Self> {
        if extractor.output_dim() != student.n() {
            return Err(Error::Usage(format!(
                "extractor outputs {} features but the student layer has {} rows",
                extractor.output_dim(),
                student.n()
            )));
        }
        if precision_mode == PrecisionMode::Binary32 {
            let representable = |v: f64| (v as f32) as f64 == v;
            let all_params = extractor
                .layers
                .iter()
                .flat_map(|l| l.weights.iter().flatten().chain(l.biases.iter()))
                .chain(student.weights.iter().flatten())
                .chain(student.biases.iter());
            for &v in all_params {
                if !representable(v) {
                    return Err(Error::Usage(format!(
                        "binary32 model holds parameter {v} that is not exactly representable in binary32"
                    )));
                }
            }
        }
        Ok(StudentModel {
            extractor,
            student,
            precision_mode,
        })
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn student(&self) -> &StudentLayer {
        &self.student
    }

    pub fn precision_mode(&self) -> PrecisionMode {
        self.precision_mode
    }

    pub fn n(&self) -> usize {
        self.student.n()
    }

    pub fn m(&self) -> usize {
        self.student.m()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    /// `I(x)`: the extractor output at the victim's arithmetic width,
    /// widened exactly to binary64.
    pub fn extract_features(&self, x: &[f64]) -> Result<FeatureVector> {
        let values = match self.precision_mode {
            PrecisionMode::Binary64 => self.extractor.features_f64(x)?,
            PrecisionMode::Binary32 => self
                .extractor
                .features_f32(x)?
                .into_iter()
                .map(|v| v as f64)
                .collect(),
        };
        Ok(FeatureVector(values))
    }

    /// One forward pass, optionally with a single fault spliced in at the
    /// specified point. With no fault this equals the clean pass
    /// bit-for-bit.
    pub fn forward(&self, input: &RunInput, fault: Option<&FaultSpec>) -> Result<ProbabilityVector> {
        if let Some(spec) = fault {
            spec.target.check_bounds(self.n(), self.m())?;
        }
        match self.precision_mode {
            PrecisionMode::Binary64 => {
                let logits = self.logits_f64(input, fault)?;
                let mut z = softmax(&LogitVector(logits))?;
                if let Some(FaultSpec { target: FaultTarget::Activation { j }, kind }) = fault {
                    // The faulted output is observed raw; no renormalization.
                    z.0[*j] = apply_fault(FloatWord::new(z.0[*j]), kind).value();
                    if !z.0[*j].is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("faulted output [{j}]"),
                        });
                    }
                }
                Ok(z)
            }
            PrecisionMode::Binary32 => {
                let logits = self.logits_f32(input, fault)?;
                let mut z = softmax_f32(&logits)?;
                if let Some(FaultSpec { target: FaultTarget::Activation { j }, kind }) = fault {
                    z[*j] = apply_fault_f32(z[*j], kind);
                    if !z[*j].is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("faulted output [{j}]"),
                        });
                    }
                }
                Ok(ProbabilityVector(z.into_iter().map(|v| v as f64).collect()))
            }
        }
    }

    /// Clean forward pass on a raw input.
    pub fn forward_clean(&self, x: &[f64]) -> Result<ProbabilityVector> {
        self.forward(&RunInput::Raw(x.to_vec()), None)
    }

    /// Pre-softmax activations, with the fault (if any) applied at its
    /// point in the dataflow. Faults at the activation point do not show
    /// up here; they act after softmax. In binary32 mode the logits are
    /// computed at device width and widened exactly.
    pub fn logits(&self, input: &RunInput, fault: Option<&FaultSpec>) -> Result<LogitVector> {
        if let Some(spec) = fault {
            spec.target.check_bounds(self.n(), self.m())?;
        }
        match self.precision_mode {
            PrecisionMode::Binary64 => Ok(LogitVector(self.logits_f64(input, fault)?)),
            PrecisionMode::Binary32 => Ok(LogitVector(
                self.logits_f32(input, fault)?
                    .into_iter()
                    .map(|v| v as f64)
                    .collect(),
            )),
        }
    }

    fn logits_f64(&self, input: &RunInput, fault: Option<&FaultSpec>) -> Result<Vec<f64>> {
        let mut features = match input {
            RunInput::Raw(x) => self.extractor.features_f64(x)?,
            RunInput::Features(fv) => {
                self.check_features(fv)?;
                fv.as_slice().to_vec()
            }
        };
        let n = self.n();
        let m = self.m();

        // Point 1: the shared feature value, before fan-out.
        if let Some(FaultSpec { target: FaultTarget::Input { i }, kind }) = fault {
            features[*i] = apply_fault(FloatWord::new(features[*i]), kind).value();
        }

        let mut logits = Vec::with_capacity(m);
        for j in 0..m {
            let mut acc = 0.0f64;
            for (i, &v) in features.iter().enumerate().take(n) {
                let mut w = self.student.weights[i][j];
                if let Some(k) = kind_at(fault, FaultTarget::Weight { i, j }) {
                    w = apply_fault(FloatWord::new(w), k).value();
                }
                let mut p = v * w;
                if let Some(k) = kind_at(fault, FaultTarget::Product { i, j }) {
                    p = apply_fault(FloatWord::new(p), k).value();
                }
                acc += p;
            }
            let mut b = self.student.biases[j];
            if let Some(k) = kind_at(fault, FaultTarget::Bias { j }) {
                b = apply_fault(FloatWord::new(b), k).value();
            }
            let mut y = acc + b;
            if let Some(k) = kind_at(fault, FaultTarget::Sum { j }) {
                y = apply_fault(FloatWord::new(y), k).value();
            }
            if !y.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("logit [{j}]"),
                });
            }
            logits.push(y);
        }
        Ok(logits)
    }

    fn logits_f32(&self, input: &RunInput, fault: Option<&FaultSpec>) -> Result<Vec<f32>> {
        let mut features: Vec<f32> = match input {
            RunInput::Raw(x) => self.extractor.features_f32(x)?,
            RunInput::Features(fv) => {
                self.check_features(fv)?;
                fv.as_slice().iter().map(|&v| v as f32).collect()
            }
        };
        let n = self.n();
        let m = self.m();

        if let Some(FaultSpec { target: FaultTarget::Input { i }, kind }) = fault {
            features[*i] = apply_fault_f32(features[*i], kind);
        }

        let mut logits = Vec::with_capacity(m);
        for j in 0..m {
            let mut acc = 0.0f32;
            for (i, &v) in features.iter().enumerate().take(n) {
                let mut w = self.student.weights[i][j] as f32;
                if let Some(k) = kind_at(fault, FaultTarget::Weight { i, j }) {
                    w = apply_fault_f32(w, k);
                }
                let mut p = v * w;
                if let Some(k) = kind_at(fault, FaultTarget::Product { i, j }) {
                    p = apply_fault_f32(p, k);
                }
                acc += p;
            }
            let mut b = self.student.biases[j] as f32;
            if let Some(k) = kind_at(fault, FaultTarget::Bias { j }) {
                b = apply_fault_f32(b, k);
            }
            let mut y = acc + b;
            if let Some(k) = kind_at(fault, FaultTarget::Sum { j }) {
                y = apply_fault_f32(y, k);
            }
            if !y.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("logit [{j}]"),
                });
            }
            logits.push(y);
        }
        Ok(logits)
    }

    fn check_features(&self, fv: &FeatureVector) -> Result<()> {
        if fv.len() != self.n() {
            return Err(Error::Usage(format!(
                "feature vector has {} entries, model expects {}",
                fv.len(),
                self.n()
            )));
        }
        if let Some(pos) = fv.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("feature entry [{pos}] is not finite")));
        }
        Ok(())
    }
}

fn kind_at<'a>(
    fault: Option<&'a FaultSpec>,
    target: FaultTarget,
) -> Option<&'a crate::fault::FaultKind> {
    match fault {
        Some(spec) if spec.target == target => Some(&spec.kind),
        _ => None,
    }
}

/// Builds a deterministic random model: extractor layers use relu except
/// the last, which is identity so every feature coordinate stays reachable;
/// all parameters are uniform in `weight_range`. Stands in for an actually
/// trained transfer-learned network at desk scale.
pub fn generate_synthetic(
    seed: u64,
    extractor_dims: &[usize],
    n: usize,
    m: usize,
    weight_range: (f64, f64),
    precision_mode: PrecisionMode,
) -> Result<StudentModel> {
    if extractor_dims.len() < 2 {
        return Err(Error::Usage(
            "extractor_dims must list the input width and at least one layer width".into(),
        ));
    }
    if extractor_dims.iter().any(|&d| d == 0) || n == 0 || m == 0 {
        return Err(Error::Usage("all dimensions must be positive".into()));
    }
    if *extractor_dims.last().unwrap() != n {
        return Err(Error::Usage(format!(
            "last extractor width {} must equal n = {n}",
            extractor_dims.last().unwrap()
        )));
    }
    let (low, high) = weight_range;
    if !low.is_finite() || !high.is_finite() || low >= high {
        return Err(Error::Usage(format!(
            "weight range [{low}, {high}) must be finite with low < high"
        )));
    }

    let quantize = |v: f64| match precision_mode {
        PrecisionMode::Binary64 => v,
        PrecisionMode::Binary32 => (v as f32) as f64,
    };

    let mut extractor_rng = SeededStream::new(seed, stream::EXTRACTOR_PARAMS);
    let layer_count = extractor_dims.len() - 1;
    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let d_in = extractor_dims[l];
        let d_out = extractor_dims[l + 1];
        let weights = (0..d_in)
            .map(|_| {
                (0..d_out)
                    .map(|_| quantize(extractor_rng.uniform(low, high)))
                    .collect()
            })
            .collect();
        let biases = (0..d_out)
            .map(|_| quantize(extractor_rng.uniform(low, high)))
            .collect();
        let activation = if l + 1 == layer_count {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(DenseLayer::new(weights, biases, activation)?);
    }

    let mut student_rng = SeededStream::new(seed, stream::STUDENT_PARAMS);
    let weights = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| quantize(student_rng.uniform(low, high)))
                .collect()
        })
        .collect();
    let biases = (0..m)
        .map(|_| quantize(student_rng.uniform(low, high)))
        .collect();

    StudentModel::new(
        FeatureExtractor::new(layers)?,
        StudentLayer::new(weights, biases)?,
        precision_mode,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::FaultKind;

    fn identity_model(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> StudentModel {
        let n = weights.len();
        let extractor = FeatureExtractor::new(vec![DenseLayer::identity(n).unwrap()]).unwrap();
        StudentModel::new(
            extractor,
            StudentLayer::new(weights, biases).unwrap(),
            PrecisionMode::Binary64,
        )
        .unwrap()
    }

    #[test]
    fn identity_extractor_passes_input_through() {
        let model = identity_model(vec![vec![1.0], vec![1.0], vec![1.0]], vec![0.0]);
        let features = model.extract_features(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(features.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn relu_layer_kills_negative_preactivations() {
        let layer = DenseLayer::new(
            vec![vec![-1.0, -2.0], vec![-0.5, -1.5]],
            vec![0.0, 0.0],
            Activation::Relu,
        )
        .unwrap();
        let extractor = FeatureExtractor::new(vec![layer]).unwrap();
        let features = extractor.features_f64(&[1.0, 2.0]).unwrap();
        assert_eq!(features, vec![0.0, 0.0]);
    }

    #[test]
    fn three_layer_extractor_matches_straight_line_oracle() {
        let model = generate_synthetic(
            9,
            &[5, 4, 4, 3],
            3,
            2,
            (-0.9, 0.9),
            PrecisionMode::Binary64,
        )
        .unwrap();
        let x = [0.3, -0.7, 1.1, 0.05, -0.4];

        // Independent straight-line re-implementation.
        let mut cur: Vec<f64> = x.to_vec();
        for layer in model.extractor().layers() {
            let mut next = vec![0.0f64; layer.output_dim()];
            for j in 0..layer.output_dim() {
                let mut s = 0.0;
                for i in 0..layer.input_dim() {
                    s += cur[i] * layer.weights()[i][j];
                }
                s += layer.biases()[j];
                next[j] = match layer.activation() {
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                    Activation::Identity => s,
                    Activation::Tanh => s.tanh(),
                };
            }
            cur = next;
        }

        let features = model.extract_features(&x).unwrap();
        assert_eq!(features.as_slice(), cur.as_slice());
    }

    #[test]
    fn extract_features_rejects_wrong_dimension() {
        let model = identity_model(vec![vec![1.0], vec![1.0]], vec![0.0]);
        assert!(matches!(
            model.extract_features(&[1.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn clean_forward_is_deterministic() {
        let model =
            generate_synthetic(3, &[6, 4], 4, 3, (-1.0, 1.0), PrecisionMode::Binary64).unwrap();
        let x = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let a = model.forward_clean(&x).unwrap();
        let b = model.forward_clean(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn product_sign_flip_on_zero_weight_changes_nothing() {
        let model = identity_model(vec![vec![0.0, 0.4], vec![0.7, -0.3]], vec![0.1, 0.2]);
        let x = vec![1.0, 2.0];
        let clean = model.forward_clean(&x).unwrap();
        let faulted = model
            .forward(&RunInput::Raw(x), Some(&FaultSpec::product_sign(0, 0)))
            .unwrap();
        assert_eq!(clean, faulted);
    }

    #[test]
    fn bias_sign_flip_matches_hand_negation() {
        // m=2, n=1, identity extractor, W=[[0.5, -0.25]], b=[0.1, -0.2], x=[1.0].
        let model = identity_model(vec![vec![0.5, -0.25]], vec![0.1, -0.2]);
        let faulted = model
            .forward(&RunInput::Raw(vec![1.0]), Some(&FaultSpec::bias_sign(0)))
            .unwrap();
        let expected = softmax(&LogitVector(vec![-0.1 + 0.5, -0.2 - 0.25])).unwrap();
        assert_eq!(faulted, expected);
    }

    #[test]
    fn fault_out_of_bounds_is_rejected() {
        let model = identity_model(vec![vec![0.5, -0.25]], vec![0.1, -0.2]);
        let err = model
            .forward(
                &RunInput::Raw(vec![1.0]),
                Some(&FaultSpec::product_sign(1, 0)),
            )
            .unwrap_err();
        assert!(matches!(err, Error::FaultOutOfBounds { .. }));
    }

    #[test]
    fn set_value_overflow_is_a_hard_error() {
        let model = identity_model(vec![vec![0.5, -0.25]], vec![0.1, -0.2]);
        let fault = FaultSpec::new(
            FaultTarget::Sum { j: 0 },
            FaultKind::SetValue(FloatWord::new(f64::INFINITY)),
        );
        let err = model
            .forward(&RunInput::Raw(vec![1.0]), Some(&fault))
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn generate_synthetic_is_seed_deterministic() {
        let a = generate_synthetic(42, &[8, 6], 6, 3, (-1.0, 1.0), PrecisionMode::Binary64)
            .unwrap();
        let b = generate_synthetic(42, &[8, 6], 6, 3, (-1.0, 1.0), PrecisionMode::Binary64)
            .unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(43, &[8, 6], 6, 3, (-1.0, 1.0), PrecisionMode::Binary64)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generate_synthetic_respects_weight_range() {
        let model =
            generate_synthetic(7, &[8, 6], 6, 3, (-1.0, 1.0), PrecisionMode::Binary64).unwrap();
        let in_range = |v: f64| (-1.0..1.0).contains(&v);
        for layer in model.extractor().layers() {
            assert!(layer.weights().iter().flatten().all(|&v| in_range(v)));
            assert!(layer.biases().iter().all(|&v| in_range(v)));
        }
        assert!(model.student().weights().iter().flatten().all(|&v| in_range(v)));
        assert!(model.student().biases().iter().all(|&v| in_range(v)));
    }

    #[test]
    fn generate_synthetic_validates_dimensions() {
        assert!(generate_synthetic(1, &[8], 8, 3, (-1.0, 1.0), PrecisionMode::Binary64).is_err());
        assert!(generate_synthetic(1, &[8, 6], 5, 3, (-1.0, 1.0), PrecisionMode::Binary64).is_err());
        assert!(generate_synthetic(1, &[8, 6], 6, 0, (-1.0, 1.0), PrecisionMode::Binary64).is_err());
        assert!(generate_synthetic(1, &[8, 6], 6, 3, (1.0, -1.0), PrecisionMode::Binary64).is_err());
    }

    #[test]
    fn binary32_parameters_are_exactly_representable() {
        let model =
            generate_synthetic(5, &[6, 4], 4, 2, (-1.0, 1.0), PrecisionMode::Binary32).unwrap();
        for row in model.student().weights() {
            for &v in row {
                assert_eq!((v as f32) as f64, v);
            }
        }
    }

    #[test]
    fn activation_fault_is_not_renormalized() {
        let model = identity_model(vec![vec![0.5, -0.25]], vec![0.1, -0.2]);
        let fault = FaultSpec::new(
            FaultTarget::Activation { j: 0 },
            FaultKind::SetValue(FloatWord::new(5.0)),
        );
        let z = model
            .forward(&RunInput::Raw(vec![1.0]), Some(&fault))
            .unwrap();
        assert_eq!(z.as_slice()[0], 5.0);
        let clean = model.forward_clean(&[1.0]).unwrap();
        assert_eq!(z.as_slice()[1], clean.as_slice()[1]);
    }
}
