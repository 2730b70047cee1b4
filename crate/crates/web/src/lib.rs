//! Browser demo: build a synthetic victim, poke single faults at it, run
//! the full last-layer extraction, and sweep rounding precision against
//! prediction agreement. Each call returns a JSON string for the page to
//! plot; all state lives in the `Demo` handle.

use wasm_bindgen::prelude::*;

use sniff_core::eval::{accuracy_curve, gaussian_blobs, DatasetConfig};
use sniff_core::extract::{extract_last_layer, ExtractionConfig};
use sniff_core::fault::{FaultSession, FaultSpec};
use sniff_core::model::{generate_synthetic, PrecisionMode, RunInput, StudentModel};
use sniff_core::rng::{stream, SeededStream};

#[wasm_bindgen]
pub struct Demo {
    model: StudentModel,
    seed: u32,
}

fn err_to_js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn sample_input(model: &StudentModel, seed: u32) -> Vec<f64> {
    let mut rng = SeededStream::new(seed as u64, stream::ATTACK_INPUTS);
    (0..model.input_dim())
        .map(|_| 0.5 * rng.standard_normal())
        .collect()
}

#[wasm_bindgen]
impl Demo {
    /// Builds the victim: extractor 32 -> n with identity output layer,
    /// student layer n x m, all parameters uniform in [-1, 1].
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n: usize, m: usize) -> Result<Demo, JsError> {
        let model = generate_synthetic(
            seed as u64,
            &[32, n],
            n,
            m,
            (-1.0, 1.0),
            PrecisionMode::Binary64,
        )
        .map_err(err_to_js)?;
        Ok(Demo { model, seed })
    }

    pub fn info(&self) -> String {
        serde_json::json!({
            "input_dim": self.model.input_dim(),
            "n": self.model.n(),
            "m": self.model.m(),
            "seed": self.seed,
        })
        .to_string()
    }

    /// One clean and one faulted forward pass on a seeded probe input.
    /// `fault_spec` uses the CLI grammar, e.g. "product:i=2,j=1:signflip".
    pub fn inject(&self, fault_spec: &str, input_seed: u32) -> Result<String, JsError> {
        let spec: FaultSpec = fault_spec.parse().map_err(err_to_js)?;
        let x = sample_input(&self.model, input_seed);
        let input = RunInput::Raw(x.clone());
        let clean = self.model.forward(&input, None).map_err(err_to_js)?;
        let faulted = self.model.forward(&input, Some(&spec)).map_err(err_to_js)?;
        let clean_logits = self.model.logits(&input, None).map_err(err_to_js)?;
        let faulted_logits = self.model.logits(&input, Some(&spec)).map_err(err_to_js)?;
        Ok(serde_json::json!({
            "fault": spec.to_string(),
            "clean": clean.as_slice(),
            "faulted": faulted.as_slice(),
            "clean_logits": clean_logits.as_slice(),
            "faulted_logits": faulted_logits.as_slice(),
            "clean_hex": clean.as_slice().iter().map(|v| format!("{:016X}", v.to_bits())).collect::<Vec<_>>(),
            "faulted_hex": faulted.as_slice().iter().map(|v| format!("{:016X}", v.to_bits())).collect::<Vec<_>>(),
        })
        .to_string())
    }

    /// Full last-layer extraction against the built victim; reports fault
    /// and run accounting plus per-parameter absolute error (log10).
    pub fn extract(&self, input_seed: u32) -> Result<String, JsError> {
        let mut session = FaultSession::new(&self.model);
        let config = ExtractionConfig {
            input_seed: input_seed as u64,
            ..ExtractionConfig::default()
        };
        let report = extract_last_layer(
            &mut session,
            self.model.extractor(),
            self.model.n(),
            self.model.m(),
            &config,
        )
        .map_err(err_to_js)?
        .with_ground_truth(self.model.student())
        .map_err(err_to_js)?;

        let errors = report.truth_errors.as_ref().expect("ground truth supplied");
        let log_floor = -17.0;
        let weight_log: Vec<Vec<f64>> = errors
            .weight_abs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| match e {
                        Some(e) if *e > 0.0 => e.log10(),
                        _ => log_floor,
                    })
                    .collect()
            })
            .collect();
        let bias_log: Vec<f64> = errors
            .bias_abs
            .iter()
            .map(|e| match e {
                Some(e) if *e > 0.0 => e.log10(),
                _ => log_floor,
            })
            .collect();
        Ok(serde_json::json!({
            "fault_count": report.fault_count,
            "expected_faults": self.model.m() + self.model.n() * self.model.m(),
            "actual_runs": report.actual_runs,
            "theoretical_runs": report.theoretical_runs,
            "clean_runs": report.clean_runs,
            "retries": report.retries,
            "failed": report.failures.len(),
            "max_weight_abs_error": errors.max_weight_abs_error,
            "max_bias_abs_error": errors.max_bias_abs_error,
            "weight_error_log10": weight_log,
            "bias_error_log10": bias_log,
            "log_floor": log_floor,
        })
        .to_string())
    }

    /// Rounds the recovered parameters to each digit count and measures
    /// prediction agreement with the original on a held-out blob dataset.
    pub fn accuracy_sweep(&self, digits_csv: &str, input_seed: u32) -> Result<String, JsError> {
        let digits: Vec<Option<u32>> = digits_csv
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                if tok == "inf" {
                    Ok(None)
                } else {
                    tok.parse::<u32>()
                        .map(Some)
                        .map_err(|_| JsError::new(&format!("invalid digits entry {tok:?}")))
                }
            })
            .collect::<Result<_, _>>()?;

        let mut session = FaultSession::new(&self.model);
        let config = ExtractionConfig {
            input_seed: input_seed as u64,
            ..ExtractionConfig::default()
        };
        let report = extract_last_layer(
            &mut session,
            self.model.extractor(),
            self.model.n(),
            self.model.m(),
            &config,
        )
        .map_err(err_to_js)?;
        let recovered = report.recovered_layer().map_err(err_to_js)?;

        let (_, test) = gaussian_blobs(&DatasetConfig::desk_scale(
            self.seed as u64,
            self.model.input_dim(),
            self.model.m(),
        ))
        .map_err(err_to_js)?;
        let curve = accuracy_curve(&self.model, &recovered, &test, &digits).map_err(err_to_js)?;
        let points: Vec<serde_json::Value> = curve
            .iter()
            .map(|p| {
                serde_json::json!({
                    "digits": p.digits,
                    "accuracy_original": p.accuracy_original,
                    "accuracy_rounded": p.accuracy_rounded,
                    "diff": p.diff,
                    "predictions_identical": p.predictions_identical,
                })
            })
            .collect();
        Ok(serde_json::json!({ "points": points, "test_points": test.len() }).to_string())
    }
}
