//! Bit-exact model file format.
//!
//! Models are stored as UTF-8 JSON in which every float is the big-endian
//! hex form of its bit pattern: 16 digits in binary64 mode, 8 digits in
//! binary32 mode. Decimal float literals are rejected so a file can never
//! silently lose bits. Errors name the offending field, e.g.
//! `student.weights[2][3]`.

use serde::Serialize;
use serde_json::Value;

use crate::error::Error;
use crate::model::{
    Activation, DenseLayer, FeatureExtractor, PrecisionMode, StudentLayer, StudentModel,
};
use crate::Result;

#[derive(Serialize)]
struct FileModel {
    precision: String,
    extractor: Vec<FileLayer>,
    student: FileStudent,
}

#[derive(Serialize)]
struct FileLayer {
    activation: String,
    weights: Vec<Vec<String>>,
    biases: Vec<String>,
}

#[derive(Serialize)]
struct FileStudent {
    weights: Vec<Vec<String>>,
    biases: Vec<String>,
}

fn to_hex(value: f64, mode: PrecisionMode) -> String {
    match mode {
        PrecisionMode::Binary64 => format!("{:016X}", value.to_bits()),
        PrecisionMode::Binary32 => format!("{:08X}", (value as f32).to_bits()),
    }
}

/// Serializes a model. The output is deterministic: same model, same bytes.
pub fn save_model(model: &StudentModel) -> String {
    let mode = model.precision_mode();
    let hex_rows = |rows: &[Vec<f64>]| -> Vec<Vec<String>> {
        rows.iter()
            .map(|row| row.iter().map(|&v| to_hex(v, mode)).collect())
            .collect()
    };
    let hex_vec = |vals: &[f64]| -> Vec<String> { vals.iter().map(|&v| to_hex(v, mode)).collect() };

    let file = FileModel {
        precision: mode.name().to_string(),
        extractor: model
            .extractor()
            .layers()
            .iter()
            .map(|layer| FileLayer {
                activation: layer.activation().name().to_string(),
                weights: hex_rows(layer.weights()),
                biases: hex_vec(layer.biases()),
            })
            .collect(),
        student: FileStudent {
            weights: hex_rows(model.student().weights()),
            biases: hex_vec(model.student().biases()),
        },
    };
    let mut text = serde_json::to_string_pretty(&file).expect("model serialization cannot fail");
    text.push('\n');
    text
}

fn format_err(path: &str, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        message: message.into(),
    }
}

fn as_object<'a>(value: &'a Value, path: &str) -> Result<&'a serde_json::Map<String, Value>> {
    value
        .as_object()
        .ok_or_else(|| format_err(path, "expected an object"))
}

fn as_array<'a>(value: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    value
        .as_array()
        .ok_or_else(|| format_err(path, "expected an array"))
}

fn as_str<'a>(value: &'a Value, path: &str) -> Result<&'a str> {
    match value {
        Value::String(s) => Ok(s),
        Value::Number(n) => Err(format_err(
            path,
            format!("expected a hex bit-pattern string, found the number {n}; decimal float literals are rejected"),
        )),
        _ => Err(format_err(path, "expected a string")),
    }
}

fn field<'a>(
    map: &'a serde_json::Map<String, Value>,
    key: &str,
    path: &str,
) -> Result<&'a Value> {
    map.get(key)
        .ok_or_else(|| format_err(path, format!("missing field {key:?}")))
}

fn parse_float(value: &Value, path: &str, mode: PrecisionMode) -> Result<f64> {
    let text = as_str(value, path)?;
    let want = match mode {
        PrecisionMode::Binary64 => 16,
        PrecisionMode::Binary32 => 8,
    };
    if text.len() != want || !text.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(format_err(
            path,
            format!("expected {want} hex digits, found {text:?}"),
        ));
    }
    let parsed = match mode {
        PrecisionMode::Binary64 => {
            f64::from_bits(u64::from_str_radix(text, 16).expect("validated hex"))
        }
        PrecisionMode::Binary32 => {
            f32::from_bits(u32::from_str_radix(text, 16).expect("validated hex")) as f64
        }
    };
    if !parsed.is_finite() {
        return Err(format_err(path, format!("non-finite parameter {text:?}")));
    }
    Ok(parsed)
}

fn parse_matrix(value: &Value, path: &str, mode: PrecisionMode) -> Result<Vec<Vec<f64>>> {
    let rows = as_array(value, path)?;
    if rows.is_empty() {
        return Err(format_err(path, "matrix has no rows"));
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut width = None;
    for (i, row) in rows.iter().enumerate() {
        let row_path = format!("{path}[{i}]");
        let cells = as_array(row, &row_path)?;
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(format_err(
                    &row_path,
                    format!("row has {} entries, expected {w}", cells.len()),
                ))
            }
            _ => {}
        }
        let mut parsed = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            parsed.push(parse_float(cell, &format!("{row_path}[{j}]"), mode)?);
        }
        out.push(parsed);
    }
    if width == Some(0) {
        return Err(format_err(path, "matrix rows are empty"));
    }
    Ok(out)
}

fn parse_vector(value: &Value, path: &str, mode: PrecisionMode) -> Result<Vec<f64>> {
    let cells = as_array(value, path)?;
    if cells.is_empty() {
        return Err(format_err(path, "vector is empty"));
    }
    cells
        .iter()
        .enumerate()
        .map(|(i, cell)| parse_float(cell, &format!("{path}[{i}]"), mode))
        .collect()
}

/// Parses and validates a model file. Every parameter is reproduced
/// bit-for-bit; any malformed field, dimension inconsistency, or decimal
/// float literal is a format error naming the offending path.
pub fn load_model(text: &str) -> Result<StudentModel> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| format_err("<document>", format!("invalid JSON: {e}")))?;
    let root = as_object(&root, "<document>")?;

    let precision_text = as_str(field(root, "precision", "<document>")?, "precision")?;
    let mode = PrecisionMode::from_name(precision_text).ok_or_else(|| {
        format_err(
            "precision",
            format!("unknown precision {precision_text:?}, expected \"binary64\" or \"binary32\""),
        )
    })?;

    let layers_value = as_array(field(root, "extractor", "<document>")?, "extractor")?;
    if layers_value.is_empty() {
        return Err(format_err("extractor", "extractor has no layers"));
    }
    let mut layers = Vec::with_capacity(layers_value.len());
    for (l, layer_value) in layers_value.iter().enumerate() {
        let path = format!("extractor[{l}]");
        let layer = as_object(layer_value, &path)?;
        let activation_text = as_str(
            field(layer, "activation", &path)?,
            &format!("{path}.activation"),
        )?;
        let activation = Activation::from_name(activation_text).ok_or_else(|| {
            format_err(
                &format!("{path}.activation"),
                format!("unknown activation {activation_text:?}"),
            )
        })?;
        let weights = parse_matrix(
            field(layer, "weights", &path)?,
            &format!("{path}.weights"),
            mode,
        )?;
        let biases = parse_vector(
            field(layer, "biases", &path)?,
            &format!("{path}.biases"),
            mode,
        )?;
        if weights[0].len() != biases.len() {
            return Err(format_err(
                &path,
                format!(
                    "weights have {} columns but biases have {} entries",
                    weights[0].len(),
                    biases.len()
                ),
            ));
        }
        layers.push(
            DenseLayer::new(weights, biases, activation)
                .map_err(|e| format_err(&path, e.to_string()))?,
        );
    }
    let extractor =
        FeatureExtractor::new(layers).map_err(|e| format_err("extractor", e.to_string()))?;

    let student_value = as_object(field(root, "student", "<document>")?, "student")?;
    let weights = parse_matrix(
        field(student_value, "weights", "student")?,
        "student.weights",
        mode,
    )?;
    let biases = parse_vector(
        field(student_value, "biases", "student")?,
        "student.biases",
        mode,
    )?;
    if weights[0].len() != biases.len() {
        return Err(format_err(
            "student",
            format!(
                "weights have {} columns but biases have {} entries",
                weights[0].len(),
                biases.len()
            ),
        ));
    }
    if weights.len() != extractor.output_dim() {
        return Err(format_err(
            "student.weights",
            format!(
                "weight count {}x{} does not match the extractor's {} features",
                weights.len(),
                weights[0].len(),
                extractor.output_dim()
            ),
        ));
    }
    let student =
        StudentLayer::new(weights, biases).map_err(|e| format_err("student", e.to_string()))?;

    StudentModel::new(extractor, student, mode).map_err(|e| format_err("<document>", e.to_string()))
}
