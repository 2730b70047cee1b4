//! Closed-form recovery of the student layer from clean/faulty output
//! pairs.
//!
//! One sign flip on the bias `b_j0` shifts the logit `y_j0` to
//! `y_j0 - 2*b_j0` and leaves every other logit alone, so the softmax
//! outputs before and after the flip satisfy
//!
//! ```text
//! (1/z~ - 1) / (1/z - 1) = exp(2*b_j0)
//! ```
//!
//! which inverts to `b_j0 = ln((1/z~ - 1)/(1/z - 1)) / 2`. A sign flip on
//! the product `I_i0 * w_i0j0` gives the same ratio with `2*I_i0*w_i0j0`
//! in the exponent, so the weight follows by dividing by `2*I_i0` --
//! provided the chosen input does not vanish at coordinate `i0`. Each
//! parameter therefore costs one fault and one clean/faulty observation
//! pair, and the recovery is exact up to binary64 rounding of the
//! observed outputs.

use std::collections::HashMap;

use crate::error::Error;
use crate::fault::{FaultSession, FaultSpec};
use crate::float::ProbabilityVector;
use crate::model::{FeatureExtractor, FeatureVector, PrecisionMode, RunInput, StudentLayer};
use crate::rng::{stream, SeededStream};
use crate::Result;

/// The attacker-visible data for one recovered parameter: the clean and
/// faulted softmax values at one output index, plus (for weight faults)
/// the feature value the victim used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationPair {
    /// Clean output `z_j0`.
    pub z: f64,
    /// Faulted output `z~_j0`.
    pub z_tilde: f64,
    /// Output index `j0`.
    pub output_index: usize,
    /// Feature index `i0`, present for weight faults only.
    pub input_index: Option<usize>,
    /// Feature value `I_i0`, present for weight faults only; never zero.
    pub feature_value: Option<f64>,
}

impl ObservationPair {
    /// Observation pair for a bias fault at output `j0`.
    pub fn for_bias(z: f64, z_tilde: f64, output_index: usize) -> Result<Self> {
        check_open_unit(z, z_tilde)?;
        Ok(ObservationPair {
            z,
            z_tilde,
            output_index,
            input_index: None,
            feature_value: None,
        })
    }

    /// Observation pair for a weight fault at `(i0, j0)` with the feature
    /// value `I_i0` the victim computed.
    pub fn for_weight(
        z: f64,
        z_tilde: f64,
        output_index: usize,
        input_index: usize,
        feature_value: f64,
    ) -> Result<Self> {
        check_open_unit(z, z_tilde)?;
        if feature_value == 0.0 {
            return Err(Error::VanishingInput { index: input_index });
        }
        Ok(ObservationPair {
            z,
            z_tilde,
            output_index,
            input_index: Some(input_index),
            feature_value: Some(feature_value),
        })
    }
}

fn check_open_unit(z: f64, z_tilde: f64) -> Result<()> {
    let ok = |v: f64| v.is_finite() && v > 0.0 && v < 1.0;
    if ok(z) && ok(z_tilde) {
        Ok(())
    } else {
        Err(Error::DegenerateObservation { z, z_tilde })
    }
}

/// `ln((1 - z) / z)`, the reciprocal-minus-one in log form. Computing the
/// log-ratio as a difference of these terms makes swapping the pair an
/// exact negation.
fn log_odds_inverse(z: f64) -> f64 {
    ((1.0 - z) / z).ln()
}

/// Recovers a bias from a sign-flip observation pair:
/// `b = ln((1/z~ - 1)/(1/z - 1)) / 2`.
pub fn recover_bias(obs: &ObservationPair) -> Result<f64> {
    if obs.input_index.is_some() {
        return Err(Error::Usage(
            "observation pair carries a feature index; use recover_weight".into(),
        ));
    }
    check_open_unit(obs.z, obs.z_tilde)?;
    let value = 0.5 * (log_odds_inverse(obs.z_tilde) - log_odds_inverse(obs.z));
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("bias recovery from (z={}, z~={})", obs.z, obs.z_tilde),
        });
    }
    Ok(value)
}

/// Recovers a weight from a sign-flip observation pair:
/// `w = ln((1/z~ - 1)/(1/z - 1)) / (2 * I_i0)`.
pub fn recover_weight(obs: &ObservationPair) -> Result<f64> {
    let index = obs.input_index.ok_or_else(|| {
        Error::Usage("observation pair carries no feature index; use recover_bias".into())
    })?;
    let feature = obs
        .feature_value
        .ok_or_else(|| Error::Usage("observation pair carries no feature value".into()))?;
    if feature == 0.0 {
        return Err(Error::VanishingInput { index });
    }
    check_open_unit(obs.z, obs.z_tilde)?;
    let value = 0.5 * (log_odds_inverse(obs.z_tilde) - log_odds_inverse(obs.z)) / feature;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: format!(
                "weight recovery from (z={}, z~={}, I={feature})",
                obs.z, obs.z_tilde
            ),
        });
    }
    Ok(value)
}

/// Searches sampled inputs for one whose feature value at `index` has
/// magnitude at least `epsilon`. Runs offline: the extractor is public,
/// so no victim queries are spent.
pub fn find_nonvanishing_input<S: FnMut() -> Vec<f64>>(
    extractor: &FeatureExtractor,
    index: usize,
    sampler: &mut S,
    epsilon: f64,
    max_tries: usize,
) -> Result<(Vec<f64>, FeatureVector)> {
    if index >= extractor.output_dim() {
        return Err(Error::Usage(format!(
            "feature index {index} out of range for {} features",
            extractor.output_dim()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Usage("epsilon must be positive".into()));
    }
    if max_tries == 0 {
        return Err(Error::Usage("max_tries must be at least 1".into()));
    }
    search_nonvanishing(
        extractor,
        index,
        sampler,
        &NonVanishingRule::Absolute(epsilon),
        max_tries,
        PrecisionMode::Binary64,
    )
    .map(|(input, features)| (input, FeatureVector(features)))
}

/// Acceptance rule for the non-vanishing input search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonVanishingRule {
    /// Accept when `|I_index| >= epsilon`.
    Absolute(f64),
    /// Accept when `|I_index| >= max(floor, factor * max_i |I_i|)`. The
    /// recovery error scales with `1/|I_index|`, so preferring inputs whose
    /// targeted coordinate is comparable to the largest one keeps the
    /// formula well conditioned.
    RelativeToPeak { factor: f64, floor: f64 },
}

fn search_nonvanishing<S: FnMut() -> Vec<f64>>(
    extractor: &FeatureExtractor,
    index: usize,
    sampler: &mut S,
    rule: &NonVanishingRule,
    max_tries: usize,
    mode: PrecisionMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    for _ in 0..max_tries {
        let candidate = sampler();
        let features = match mode {
            PrecisionMode::Binary64 => extractor.features_f64(&candidate)?,
            PrecisionMode::Binary32 => extractor
                .features_f32(&candidate)?
                .into_iter()
                .map(|v| v as f64)
                .collect(),
        };
        let magnitude = features[index].abs();
        let threshold = match *rule {
            NonVanishingRule::Absolute(epsilon) => epsilon,
            NonVanishingRule::RelativeToPeak { factor, floor } => {
                let peak = features.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
                (factor * peak).max(floor)
            }
        };
        if magnitude >= threshold {
            return Ok((candidate, features));
        }
    }
    Err(Error::SearchFailure {
        index,
        tries: max_tries,
    })
}

/// Options for a full last-layer extraction.
#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    /// Seed for the attacker's input sampler (independent stream).
    pub input_seed: u64,
    /// Standard deviation of the Gaussian input sampler.
    pub input_sigma: f64,
    /// Acceptance rule for non-vanishing inputs.
    pub nonvanishing: NonVanishingRule,
    /// Try budget for each non-vanishing input search.
    pub max_tries: usize,
    /// Fresh-input retries allowed per parameter when an observation is
    /// degenerate or too poorly conditioned.
    pub retry_limit: usize,
    /// Arithmetic width of the victim device.
    pub victim_precision: PrecisionMode,
    /// Requested worst-case absolute error per recovered parameter; `None`
    /// picks 1e-12 for binary64 victims and 1e-4 for binary32 victims.
    pub precision_goal: Option<f64>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            input_seed: 0,
            // Modest probe inputs keep the observed softmax away from
            // saturation, where the log-ratio loses precision.
            input_sigma: 0.5,
            nonvanishing: NonVanishingRule::RelativeToPeak {
                factor: 1e-3,
                floor: 1e-9,
            },
            max_tries: 1000,
            retry_limit: 10,
            victim_precision: PrecisionMode::Binary64,
            precision_goal: None,
        }
    }
}

impl ExtractionConfig {
    pub fn goal(&self) -> f64 {
        self.precision_goal.unwrap_or(match self.victim_precision {
            PrecisionMode::Binary64 => 1e-12,
            PrecisionMode::Binary32 => 1e-4,
        })
    }
}

/// Margin between the per-observation error estimate and the requested
/// goal; observations estimated worse than `goal / CONDITIONING_MARGIN`
/// are retried with a fresh input.
const CONDITIONING_MARGIN: f64 = 10.0;

/// First-order bound on the recovery error caused by the observations
/// being stored floats. A stored `z` carries absolute error up to `u*z`,
/// and `d/dz ln((1-z)/z) = -1/(z(1-z))`, so each term contributes about
/// `u/(1-z)`; the formula halves the sum and divides by the scale
/// (`|I_i0|` for weights, 1 for biases).
fn observation_error_bound(z: f64, z_tilde: f64, scale: f64, unit_roundoff: f64) -> f64 {
    0.5 * unit_roundoff * (1.0 / (1.0 - z) + 1.0 / (1.0 - z_tilde)) / scale
}

/// Error bound for an observation pair, `inf` when either value left the
/// open unit interval.
fn observation_bound_checked(z: f64, z_tilde: f64, scale: f64, unit_roundoff: f64) -> f64 {
    if check_open_unit(z, z_tilde).is_err() {
        return f64::INFINITY;
    }
    observation_error_bound(z, z_tilde, scale, unit_roundoff)
}

/// Why a parameter could not be recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFailure {
    pub kind: ParamKind,
    pub i: Option<usize>,
    pub j: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
        }
    }
}

/// Per-parameter absolute errors against a supplied ground truth
/// (simulator mode only).
#[derive(Debug, Clone, PartialEq)]
pub struct TruthErrors {
    pub truth: StudentLayer,
    pub weight_abs: Vec<Vec<Option<f64>>>,
    pub bias_abs: Vec<Option<f64>>,
    pub max_weight_abs_error: f64,
    pub max_bias_abs_error: f64,
}

/// Result of a full extraction: recovered parameters plus fault and run
/// accounting. `None` entries mark parameters that failed after the retry
/// budget; these also appear in `failures` with a reason.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub n: usize,
    pub m: usize,
    pub weights: Vec<Vec<Option<f64>>>,
    pub biases: Vec<Option<f64>>,
    pub failures: Vec<ParamFailure>,
    /// Faults actually injected; `m + n*m` on a retry-free run.
    pub fault_count: usize,
    /// Victim executions actually performed (clean runs are cached per
    /// distinct input).
    pub actual_runs: usize,
    /// Run count the corollaries state without caching: `2m + 2nm`.
    pub theoretical_runs: usize,
    pub clean_runs: usize,
    /// Fresh-input re-attempts forced by degenerate or ill-conditioned
    /// observations, plus extra non-vanishing search rounds.
    pub retries: usize,
    pub victim_precision: PrecisionMode,
    pub truth_errors: Option<TruthErrors>,
}

impl RecoveryReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Converts to a student layer; fails if any parameter is missing.
    pub fn recovered_layer(&self) -> Result<StudentLayer> {
        let weights = self
            .weights
            .iter()
            .map(|row| row.iter().copied().collect::<Option<Vec<f64>>>())
            .collect::<Option<Vec<_>>>();
        let biases = self.biases.iter().copied().collect::<Option<Vec<f64>>>();
        match (weights, biases) {
            (Some(w), Some(b)) => StudentLayer::new(w, b),
            _ => Err(Error::Usage(format!(
                "{} parameters failed to recover; no complete layer available",
                self.failures.len()
            ))),
        }
    }

    /// Fills in per-parameter absolute errors against the true layer.
    /// Simulator mode only; attacker-mode reports never see the truth.
    pub fn with_ground_truth(mut self, truth: &StudentLayer) -> Result<Self> {
        if truth.n() != self.n || truth.m() != self.m {
            return Err(Error::Usage(format!(
                "ground truth is {}x{}, report is {}x{}",
                truth.n(),
                truth.m(),
                self.n,
                self.m
            )));
        }
        let weight_abs: Vec<Vec<Option<f64>>> = (0..self.n)
            .map(|i| {
                (0..self.m)
                    .map(|j| self.weights[i][j].map(|w| (w - truth.weight(i, j)).abs()))
                    .collect()
            })
            .collect();
        let bias_abs: Vec<Option<f64>> = (0..self.m)
            .map(|j| self.biases[j].map(|b| (b - truth.bias(j)).abs()))
            .collect();
        let max_weight_abs_error = weight_abs
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |acc, &e| acc.max(e));
        let max_bias_abs_error = bias_abs.iter().flatten().fold(0.0f64, |acc, &e| acc.max(e));
        self.truth_errors = Some(TruthErrors {
            truth: truth.clone(),
            weight_abs,
            bias_abs,
            max_weight_abs_error,
            max_bias_abs_error,
        });
        Ok(self)
    }

    /// One CSV row per parameter plus a trailing summary row. The truth
    /// columns stay empty in attacker mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,i,j,recovered_hex,true_hex,abs_error,status\n");
        let hex = |v: Option<f64>| match v {
            Some(v) => format!("{:016X}", v.to_bits()),
            None => String::new(),
        };
        let err_text = |e: Option<&Option<f64>>| match e.and_then(|o| o.as_ref()) {
            Some(e) => format!("{e:e}"),
            None => String::new(),
        };
        let status = |kind: ParamKind, i: Option<usize>, j: usize, present: bool| {
            if present {
                "ok".to_string()
            } else {
                let reason = self
                    .failures
                    .iter()
                    .find(|f| f.kind == kind && f.i == i && f.j == j)
                    .map(|f| f.reason.as_str())
                    .unwrap_or("unrecovered");
                format!("failed: {reason}")
            }
        };
        for j in 0..self.m {
            let truth = self.truth_errors.as_ref();
            out.push_str(&format!(
                "bias,,{j},{},{},{},{}\n",
                hex(self.biases[j]),
                truth.map(|t| format!("{:016X}", t.truth.bias(j).to_bits())).unwrap_or_default(),
                err_text(truth.map(|t| &t.bias_abs[j])),
                status(ParamKind::Bias, None, j, self.biases[j].is_some())
            ));
        }
        for i in 0..self.n {
            for j in 0..self.m {
                let truth = self.truth_errors.as_ref();
                out.push_str(&format!(
                    "weight,{i},{j},{},{},{},{}\n",
                    hex(self.weights[i][j]),
                    truth
                        .map(|t| format!("{:016X}", t.truth.weight(i, j).to_bits()))
                        .unwrap_or_default(),
                    err_text(truth.map(|t| &t.weight_abs[i][j])),
                    status(ParamKind::Weight, Some(i), j, self.weights[i][j].is_some())
                ));
            }
        }
        let max_err = self
            .truth_errors
            .as_ref()
            .map(|t| format!("{:e}", t.max_weight_abs_error.max(t.max_bias_abs_error)))
            .unwrap_or_default();
        out.push_str(&format!(
            "summary,,,,,{max_err},faults={};clean_runs={};actual_runs={};theoretical_runs={};retries={};failed={}\n",
            self.fault_count,
            self.clean_runs,
            self.actual_runs,
            self.theoretical_runs,
            self.retries,
            self.failures.len()
        ));
        out
    }
}

/// Gaussian input sampler over the extractor's input space, seeded on its
/// own stream so extraction inputs never perturb other consumers.
pub fn gaussian_input_sampler(
    seed: u64,
    input_dim: usize,
    sigma: f64,
) -> impl FnMut() -> Vec<f64> {
    let mut rng = SeededStream::new(seed, stream::ATTACK_INPUTS);
    move || (0..input_dim).map(|_| sigma * rng.standard_normal()).collect()
}

/// Gaussian sampler over the extractor's input space whose amplitude is
/// chosen per draw. Oversized probes saturate the softmax; undersized
/// ones leave the targeted feature too small for weight recovery, so the
/// extraction loop picks the amplitude candidate by candidate.
struct ProbeSampler {
    rng: SeededStream,
    input_dim: usize,
}

impl ProbeSampler {
    fn new(seed: u64, input_dim: usize) -> Self {
        ProbeSampler {
            rng: SeededStream::new(seed, stream::ATTACK_INPUTS),
            input_dim,
        }
    }

    fn sample(&mut self, sigma: f64) -> Vec<f64> {
        (0..self.input_dim)
            .map(|_| sigma * self.rng.standard_normal())
            .collect()
    }
}

/// Extra saturation headroom the bias-phase precheck reserves for the
/// faulted run: a sign flip on a bias of magnitude up to 1 shifts the
/// logit by at most 2, scaling the odds by at most e^2. Larger biases are
/// handled by the escalating odds cap on retries.
const BIAS_SHIFT_ALLOWANCE: f64 = 7.389056098930650;

/// A candidate observation that missed the crisp acceptance threshold is
/// still taken after the retry budget runs out if its estimated error
/// stays within this fraction of the goal.
const FALLBACK_FRACTION: f64 = 0.5;

/// Candidates per rung of the amplitude ladder.
const LADDER_RUNG_WIDTH: usize = 16;
const LADDER_STEP: f64 = 0.7;
const LADDER_MAX_RUNG: i32 = 8;

/// Smallest clean output the precheck accepts; below this the stored
/// value loses relative precision toward the subnormal range.
const MIN_Z: f64 = 1e-290;

/// Amplitude for the `t`-th candidate: rungs of `LADDER_RUNG_WIDTH` draws
/// walk outward from the start value, alternating shrink and grow, then
/// cycle.
fn ladder_sigma(start: f64, t: usize) -> f64 {
    let rung = (t / LADDER_RUNG_WIDTH) % (2 * LADDER_MAX_RUNG as usize + 1);
    let signed = if rung % 2 == 1 {
        ((rung + 1) / 2) as i32
    } else {
        -((rung / 2) as i32)
    };
    start * LADDER_STEP.powi(signed)
}

/// Constraints a probe candidate must satisfy before any fault is spent
/// on it. All of them are checkable from public knowledge plus one cached
/// clean run.
struct CandidateFilter {
    /// Feature row that must be non-vanishing (weight phase).
    row: Option<usize>,
    /// Required sign of the targeted feature. Set after a faulted run
    /// saturated high: flipping the feature sign makes the sign flip
    /// lower the logit instead of raising it.
    sign_pref: Option<f64>,
    /// Cap on the clean odds `z_j/(1-z_j)` at this output index, used when
    /// the (unknown) flipped parameter is large enough that the faulted
    /// odds overshoot; doubles in strength on each such retry.
    odds_cap: Option<(usize, f64)>,
    /// Saturation headroom factor for the clean-side precheck.
    allowance: f64,
}

impl CandidateFilter {
    fn bias_phase() -> Self {
        CandidateFilter {
            row: None,
            sign_pref: None,
            odds_cap: None,
            allowance: BIAS_SHIFT_ALLOWANCE,
        }
    }

    fn weight_phase(i: usize) -> Self {
        CandidateFilter {
            row: Some(i),
            sign_pref: None,
            odds_cap: None,
            allowance: 1.0,
        }
    }
}

/// A probe input that passed the clean-side precheck.
struct Candidate {
    input: Vec<f64>,
    features: Vec<f64>,
    clean: ProbabilityVector,
}

struct Attack<'a, 'm> {
    session: &'a mut FaultSession<'m>,
    extractor: &'a FeatureExtractor,
    config: &'a ExtractionConfig,
    sampler: ProbeSampler,
    cache: HashMap<Vec<u64>, ProbabilityVector>,
    clean_runs: usize,
    retries: usize,
    unit_roundoff: f64,
    goal: f64,
}

impl Attack<'_, '_> {
    /// Clean output for an input, cached per distinct bit pattern so each
    /// input costs at most one victim execution.
    fn run_clean(&mut self, x: &[f64]) -> Result<ProbabilityVector> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let out = self.session.run(&RunInput::Raw(x.to_vec()), &[])?;
        self.clean_runs += 1;
        self.cache.insert(key, out.clone());
        Ok(out)
    }

    fn run_faulted(&mut self, x: &[f64], fault: FaultSpec) -> Result<ProbabilityVector> {
        self.session.run(&RunInput::Raw(x.to_vec()), &[fault])
    }

    /// The attacker's own copy of the victim's feature computation; the
    /// extractor is public and the device's arithmetic width is known.
    fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.config.victim_precision {
            PrecisionMode::Binary64 => self.extractor.features_f64(x),
            PrecisionMode::Binary32 => Ok(self
                .extractor
                .features_f32(x)?
                .into_iter()
                .map(|v| v as f64)
                .collect()),
        }
    }

    /// Samples probe inputs until one satisfies the filter and leaves the
    /// clean observation enough precision headroom. For a weight row the
    /// input must be non-vanishing at that feature; the feature magnitude
    /// enters the headroom bound since the recovery divides by it.
    /// Rejected candidates cost at most one cached clean run each and no
    /// faults.
    fn find_candidate(
        &mut self,
        filter: &CandidateFilter,
        sigma_start: f64,
    ) -> Result<Option<Candidate>> {
        let mut met_feature_threshold = false;
        // The clean-side error term may use at most half the acceptance
        // threshold, leaving the other half for the faulted side.
        let budget = self.goal / (2.0 * CONDITIONING_MARGIN);
        for t in 0..self.config.max_tries {
            let sigma = ladder_sigma(sigma_start, t);
            let input = self.sampler.sample(sigma);
            let features = self.features(&input)?;
            let scale = match filter.row {
                Some(i) => {
                    let magnitude = features[i].abs();
                    let threshold = match self.config.nonvanishing {
                        NonVanishingRule::Absolute(epsilon) => epsilon,
                        NonVanishingRule::RelativeToPeak { factor, floor } => {
                            let peak = features.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
                            (factor * peak).max(floor)
                        }
                    };
                    if magnitude < threshold {
                        self.retries += 1;
                        continue;
                    }
                    met_feature_threshold = true;
                    if let Some(sign) = filter.sign_pref {
                        if features[i] * sign <= 0.0 {
                            self.retries += 1;
                            continue;
                        }
                    }
                    magnitude
                }
                None => 1.0,
            };
            let clean = self.run_clean(&input)?;
            let z_max = clean.as_slice().iter().cloned().fold(0.0f64, f64::max);
            let z_min = clean.as_slice().iter().cloned().fold(1.0f64, f64::min);
            if z_min < MIN_Z
                || 0.5 * self.unit_roundoff * filter.allowance / ((1.0 - z_max) * scale) > budget
            {
                self.retries += 1;
                continue;
            }
            if let Some((j, cap)) = filter.odds_cap {
                let z_j = clean.as_slice()[j];
                if z_j / (1.0 - z_j) > cap {
                    self.retries += 1;
                    continue;
                }
            }
            return Ok(Some(Candidate {
                input,
                features,
                clean,
            }));
        }
        if let Some(i) = filter.row {
            if !met_feature_threshold {
                // No sampled input ever reached the non-vanishing
                // threshold: the coordinate is structurally dead.
                return Err(Error::SearchFailure {
                    index: i,
                    tries: self.config.max_tries,
                });
            }
        }
        // Inputs exist but none satisfied the conditioning filter; the
        // caller records per-parameter failures instead of aborting.
        Ok(None)
    }

    /// Largest clean odds at output `j` such that the faulted odds stay
    /// conditioned even if the flip multiplies them by `exp(2*shift)`.
    fn odds_cap_for_shift(&self, shift: f64) -> f64 {
        let headroom = (10.0 * self.unit_roundoff / self.goal).min(0.5);
        let max_odds = (1.0 - headroom) / headroom;
        max_odds * (-2.0 * shift).exp()
    }
}

/// Runs the full attack: `m` bias faults plus `n*m` product faults, one
/// clean run per distinct input (cached), recovering every parameter of
/// the student layer from softmax observations alone.
///
/// The attacker's knowledge is limited to the public extractor, the inputs
/// she chooses, and the observed outputs; the session mediates every
/// victim execution.
pub fn extract_last_layer(
    session: &mut FaultSession<'_>,
    extractor: &FeatureExtractor,
    n: usize,
    m: usize,
    config: &ExtractionConfig,
) -> Result<RecoveryReport> {
    if n == 0 || m == 0 {
        return Err(Error::Usage("n and m must be positive".into()));
    }
    if extractor.output_dim() != n {
        return Err(Error::Usage(format!(
            "extractor outputs {} features, expected n = {n}",
            extractor.output_dim()
        )));
    }
    let start_runs = session.run_count();
    let start_faults = session.fault_count();
    let mut attack = Attack {
        sampler: ProbeSampler::new(config.input_seed, extractor.input_dim()),
        session,
        extractor,
        config,
        cache: HashMap::new(),
        clean_runs: 0,
        retries: 0,
        unit_roundoff: config.victim_precision.unit_roundoff(),
        goal: config.goal(),
    };
    let goal = attack.goal;
    let accept = goal / CONDITIONING_MARGIN;
    let fallback = goal * FALLBACK_FRACTION;

    let mut weights: Vec<Vec<Option<f64>>> = vec![vec![None; m]; n];
    let mut biases: Vec<Option<f64>> = vec![None; m];
    let mut failures: Vec<ParamFailure> = Vec::new();

    // Bias phase: any well-conditioned input works and one clean run
    // serves every output index.
    let mut candidate = attack.find_candidate(&CandidateFilter::bias_phase(), config.input_sigma)?;
    for j in 0..m {
        let mut attempts = 0usize;
        let mut best: Option<(f64, ObservationPair)> = None;
        let mut shift_guess = 1.0f64;
        let value = loop {
            let Some(cand) = candidate.as_ref() else {
                break None;
            };
            let z = cand.clean.as_slice()[j];
            let z_tilde =
                attack.run_faulted(&cand.input, FaultSpec::bias_sign(j))?.as_slice()[j];
            let bound = observation_bound_checked(z, z_tilde, 1.0, attack.unit_roundoff);
            if bound <= accept {
                break Some(recover_bias(&ObservationPair::for_bias(z, z_tilde, j)?)?);
            }
            if bound <= fallback && best.as_ref().map_or(true, |(b, _)| bound < *b) {
                best = Some((bound, ObservationPair::for_bias(z, z_tilde, j)?));
            }
            if attempts >= config.retry_limit {
                break match best.take() {
                    Some((_, obs)) => Some(recover_bias(&obs)?),
                    None => None,
                };
            }
            attempts += 1;
            attack.retries += 1;
            // The flip scales the odds at j by exp(-2*b_j); when the
            // faulted side overshot, demand a smaller clean z_j next time,
            // assuming a bias magnitude that doubles per retry.
            let mut filter = CandidateFilter::bias_phase();
            if z_tilde >= z {
                filter.odds_cap = Some((j, attack.odds_cap_for_shift(shift_guess)));
                shift_guess *= 2.0;
            }
            candidate = attack.find_candidate(&filter, config.input_sigma)?;
        };
        match value {
            Some(v) => biases[j] = Some(v),
            None => failures.push(ParamFailure {
                kind: ParamKind::Bias,
                i: None,
                j,
                reason: format!(
                    "no observation met the {goal:.0e} precision goal after {attempts} retries"
                ),
            }),
        }
        if candidate.is_none() {
            candidate =
                attack.find_candidate(&CandidateFilter::bias_phase(), config.input_sigma)?;
        }
    }

    // Weight phase: one non-vanishing, well-conditioned input per feature
    // row, found with clean runs only; every fault then lands on a
    // productive observation.
    for i in 0..n {
        let mut candidate =
            attack.find_candidate(&CandidateFilter::weight_phase(i), config.input_sigma)?;
        for j in 0..m {
            let mut attempts = 0usize;
            let mut best: Option<(f64, ObservationPair)> = None;
            let mut shift_guess = 1.0f64;
            let mut sign_available = true;
            let value = loop {
                let Some(cand) = candidate.as_ref() else {
                    break None;
                };
                let z = cand.clean.as_slice()[j];
                let feature = cand.features[i];
                let z_tilde = attack
                    .run_faulted(&cand.input, FaultSpec::product_sign(i, j))?
                    .as_slice()[j];
                let bound =
                    observation_bound_checked(z, z_tilde, feature.abs(), attack.unit_roundoff);
                if bound <= accept {
                    break Some(recover_weight(&ObservationPair::for_weight(
                        z, z_tilde, j, i, feature,
                    )?)?);
                }
                if bound <= fallback && best.as_ref().map_or(true, |(b, _)| bound < *b) {
                    best = Some((bound, ObservationPair::for_weight(z, z_tilde, j, i, feature)?));
                }
                if attempts >= config.retry_limit {
                    break match best.take() {
                        Some((_, obs)) => Some(recover_weight(&obs)?),
                        None => None,
                    };
                }
                attempts += 1;
                attack.retries += 1;
                let mut filter = CandidateFilter::weight_phase(i);
                if z_tilde >= z && sign_available {
                    // The flip raised the logit, so the product was
                    // negative: a candidate with the feature sign flipped
                    // makes the faulted logit drop instead.
                    filter.sign_pref = Some(-feature.signum());
                } else if z_tilde >= z {
                    filter.odds_cap = Some((j, attack.odds_cap_for_shift(shift_guess)));
                    shift_guess *= 2.0;
                }
                let mut next = attack.find_candidate(&filter, config.input_sigma)?;
                if next.is_none() && filter.sign_pref.is_some() {
                    // The feature cannot take that sign (e.g. a relu
                    // output); fall back to capping the clean odds.
                    sign_available = false;
                    filter.sign_pref = None;
                    filter.odds_cap = Some((j, attack.odds_cap_for_shift(shift_guess)));
                    shift_guess *= 2.0;
                    next = attack.find_candidate(&filter, config.input_sigma)?;
                }
                candidate = next;
            };
            match value {
                Some(v) => weights[i][j] = Some(v),
                None => failures.push(ParamFailure {
                    kind: ParamKind::Weight,
                    i: Some(i),
                    j,
                    reason: format!(
                        "no observation met the {goal:.0e} precision goal after {attempts} retries"
                    ),
                }),
            }
            if candidate.is_none() && j + 1 < m {
                candidate =
                    attack.find_candidate(&CandidateFilter::weight_phase(i), config.input_sigma)?;
            }
        }
    }

    Ok(RecoveryReport {
        n,
        m,
        weights,
        biases,
        failures,
        fault_count: attack.session.fault_count() - start_faults,
        actual_runs: attack.session.run_count() - start_runs,
        theoretical_runs: 2 * m + 2 * n * m,
        clean_runs: attack.clean_runs,
        retries: attack.retries,
        victim_precision: config.victim_precision,
        truth_errors: None,
    })
}
