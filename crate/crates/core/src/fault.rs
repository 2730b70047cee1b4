//! Fault specifications and the single-fault session discipline.
//!
//! A fault names one value inside one forward pass by its logical
//! coordinate (the six injection points of a neuron computation) and says
//! how that value's 64-bit word is mutated. Sessions log every run and
//! enforce that no run carries more than one fault.

use std::collections::HashMap;
use std::fmt;

use crate::error::Error;
use crate::float::{FloatWord, ProbabilityVector, SIGN_BIT};
use crate::model::{RunInput, StudentModel};
use crate::Result;

/// Which value of the computation is mutated. `i` indexes the feature
/// (row of the weight matrix), `j` the output class (column).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTarget {
    /// Feature value `I_i`, mutated before fan-out: affects every output.
    Input { i: usize },
    /// Weight `w_ij` as used by one run: affects output `j` only.
    Weight { i: usize, j: usize },
    /// Product `I_i * w_ij` before accumulation: affects output `j` only.
    Product { i: usize, j: usize },
    /// Bias `b_j` before addition.
    Bias { j: usize },
    /// Logit `y_j` after the bias has been added.
    Sum { j: usize },
    /// Output `z_j` after softmax; the vector is not renormalized.
    Activation { j: usize },
}

impl FaultTarget {
    pub fn check_bounds(&self, n: usize, m: usize) -> Result<()> {
        let ok = match *self {
            FaultTarget::Input { i } => i < n,
            FaultTarget::Weight { i, j } | FaultTarget::Product { i, j } => i < n && j < m,
            FaultTarget::Bias { j } | FaultTarget::Sum { j } | FaultTarget::Activation { j } => {
                j < m
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::FaultOutOfBounds {
                target: self.to_string(),
                n,
                m,
            })
        }
    }
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FaultTarget::Input { i } => write!(f, "input:i={i}"),
            FaultTarget::Weight { i, j } => write!(f, "weight:i={i},j={j}"),
            FaultTarget::Product { i, j } => write!(f, "product:i={i},j={j}"),
            FaultTarget::Bias { j } => write!(f, "bias:j={j}"),
            FaultTarget::Sum { j } => write!(f, "sum:j={j}"),
            FaultTarget::Activation { j } => write!(f, "activation:j={j}"),
        }
    }
}

/// A validated bit position, 0..=63.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitIndex(u32);

impl BitIndex {
    pub fn new(index: u32) -> Result<Self> {
        if index > SIGN_BIT {
            return Err(Error::Usage(format!(
                "bit index {index} out of range 0..=63"
            )));
        }
        Ok(BitIndex(index))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// A validated byte position within a 64-bit word, 0..=7. Byte 7 is the
/// most significant byte and holds the sign bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteIndex(u32);

impl ByteIndex {
    pub fn new(index: u32) -> Result<Self> {
        if index > 7 {
            return Err(Error::Usage(format!(
                "byte index {index} out of range 0..=7"
            )));
        }
        Ok(ByteIndex(index))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// How the targeted word is mutated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultKind {
    /// Flip the sign bit; equivalent to `BitFlip(63)`.
    SignFlip,
    BitFlip(BitIndex),
    /// Replace the value outright, e.g. forcing an output to zero.
    SetValue(FloatWord),
    /// XOR one byte of the pattern with a mask.
    ByteXor(ByteIndex, u8),
}

/// One fault for exactly one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub target: FaultTarget,
    pub kind: FaultKind,
}

impl FaultSpec {
    pub fn new(target: FaultTarget, kind: FaultKind) -> Self {
        FaultSpec { target, kind }
    }

    /// Sign flip on the product `I_i * w_ij`.
    pub fn product_sign(i: usize, j: usize) -> Self {
        FaultSpec::new(FaultTarget::Product { i, j }, FaultKind::SignFlip)
    }

    /// Sign flip on the bias `b_j`.
    pub fn bias_sign(j: usize) -> Self {
        FaultSpec::new(FaultTarget::Bias { j }, FaultKind::SignFlip)
    }
}

/// Applies a fault kind to one 64-bit word. Kinds are validated at
/// construction, so this never fails.
pub fn apply_fault(word: FloatWord, kind: &FaultKind) -> FloatWord {
    match *kind {
        FaultKind::SignFlip => word.sign_flip(),
        FaultKind::BitFlip(index) => FloatWord::from_bits(word.bits() ^ (1u64 << index.get())),
        FaultKind::SetValue(v) => v,
        FaultKind::ByteXor(byte, mask) => {
            FloatWord::from_bits(word.bits() ^ ((mask as u64) << (8 * byte.get())))
        }
    }
}

/// Single-precision pipeline variant: the fault acts on the binary64 view
/// of the value and the result is rounded back to binary32, mirroring a
/// device whose registers are 32 bits wide.
pub(crate) fn apply_fault_f32(value: f32, kind: &FaultKind) -> f32 {
    apply_fault(FloatWord::new(value as f64), kind).value() as f32
}

// ---------------------------------------------------------------------------
// Fault spec grammar: "<target>:<coords>:<kind>[:<arg>...]"
//   product:i=2,j=1:signflip
//   bias:j=0:bitflip:63
//   sum:j=3:set:0x0000000000000000
//   weight:i=1,j=0:bytexor:7:0x80
// ---------------------------------------------------------------------------

struct Tokens<'a> {
    parts: Vec<(usize, &'a str)>,
    cursor: usize,
}

impl<'a> Tokens<'a> {
    fn split(text: &'a str) -> Self {
        let mut parts = Vec::new();
        let mut start = 0;
        for (idx, ch) in text.char_indices() {
            if ch == ':' {
                parts.push((start, &text[start..idx]));
                start = idx + 1;
            }
        }
        parts.push((start, &text[start..]));
        Tokens { parts, cursor: 0 }
    }

    fn next(&mut self, expected: &str) -> Result<(usize, &'a str)> {
        match self.parts.get(self.cursor) {
            Some(&(pos, tok)) if !tok.is_empty() => {
                self.cursor += 1;
                Ok((pos, tok))
            }
            Some(&(pos, _)) => Err(parse_err(pos, "", format!("expected {expected}"))),
            None => {
                let pos = self
                    .parts
                    .last()
                    .map(|&(p, t)| p + t.len())
                    .unwrap_or_default();
                Err(parse_err(pos, "", format!("expected {expected}")))
            }
        }
    }

    fn finish(&self) -> Result<()> {
        if let Some(&(pos, tok)) = self.parts.get(self.cursor) {
            return Err(parse_err(pos, tok, "unexpected trailing token".into()));
        }
        Ok(())
    }
}

fn parse_err(position: usize, token: &str, message: String) -> Error {
    Error::FaultParse {
        token: token.to_string(),
        position,
        message,
    }
}

fn parse_index(pos: usize, token: &str, key: &str) -> Result<usize> {
    let rest = token.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(|| {
        parse_err(pos, token, format!("expected {key}=<integer>"))
    })?;
    rest.parse::<usize>()
        .map_err(|_| parse_err(pos, token, format!("expected {key}=<integer>")))
}

fn parse_hex_u64(pos: usize, token: &str, digits: usize) -> Result<u64> {
    let rest = token
        .strip_prefix("0x")
        .or_else(|| token.strip_prefix("0X"))
        .ok_or_else(|| parse_err(pos, token, "expected 0x-prefixed hex value".into()))?;
    if rest.len() != digits {
        return Err(parse_err(
            pos,
            token,
            format!("expected {digits} hex digits after 0x, found {}", rest.len()),
        ));
    }
    u64::from_str_radix(rest, 16)
        .map_err(|_| parse_err(pos, token, "invalid hex digits".into()))
}

impl std::str::FromStr for FaultSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut tokens = Tokens::split(text);
        let (tpos, tname) = tokens.next("fault target (input|weight|product|bias|sum|activation)")?;

        let target = match tname {
            "input" => {
                let (p, t) = tokens.next("i=<integer>")?;
                FaultTarget::Input {
                    i: parse_index(p, t, "i")?,
                }
            }
            "weight" | "product" => {
                let (p, t) = tokens.next("i=<integer>,j=<integer>")?;
                let (left, right) = t
                    .split_once(',')
                    .ok_or_else(|| parse_err(p, t, "expected i=<integer>,j=<integer>".into()))?;
                let i = parse_index(p, left, "i")?;
                let j = parse_index(p + left.len() + 1, right, "j")?;
                if tname == "weight" {
                    FaultTarget::Weight { i, j }
                } else {
                    FaultTarget::Product { i, j }
                }
            }
            "bias" | "sum" | "activation" => {
                let (p, t) = tokens.next("j=<integer>")?;
                let j = parse_index(p, t, "j")?;
                match tname {
                    "bias" => FaultTarget::Bias { j },
                    "sum" => FaultTarget::Sum { j },
                    _ => FaultTarget::Activation { j },
                }
            }
            other => {
                return Err(parse_err(
                    tpos,
                    other,
                    "expected one of input, weight, product, bias, sum, activation".into(),
                ))
            }
        };

        let (kpos, kname) = tokens.next("fault kind (signflip|bitflip|set|bytexor)")?;
        let kind = match kname {
            "signflip" => FaultKind::SignFlip,
            "bitflip" => {
                let (p, t) = tokens.next("bit index 0..=63")?;
                let index: u32 = t
                    .parse()
                    .map_err(|_| parse_err(p, t, "expected bit index 0..=63".into()))?;
                FaultKind::BitFlip(BitIndex::new(index).map_err(|_| {
                    parse_err(p, t, "expected bit index 0..=63".into())
                })?)
            }
            "set" => {
                let (p, t) = tokens.next("0x-prefixed 16-digit bit pattern")?;
                FaultKind::SetValue(FloatWord::from_bits(parse_hex_u64(p, t, 16)?))
            }
            "bytexor" => {
                let (p, t) = tokens.next("byte index 0..=7")?;
                let index: u32 = t
                    .parse()
                    .map_err(|_| parse_err(p, t, "expected byte index 0..=7".into()))?;
                let byte = ByteIndex::new(index)
                    .map_err(|_| parse_err(p, t, "expected byte index 0..=7".into()))?;
                let (p, t) = tokens.next("0x-prefixed 2-digit mask")?;
                FaultKind::ByteXor(byte, parse_hex_u64(p, t, 2)? as u8)
            }
            other => {
                return Err(parse_err(
                    kpos,
                    other,
                    "expected one of signflip, bitflip, set, bytexor".into(),
                ))
            }
        };

        tokens.finish()?;
        Ok(FaultSpec { target, kind })
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.target)?;
        match self.kind {
            FaultKind::SignFlip => write!(f, ":signflip"),
            FaultKind::BitFlip(index) => write!(f, ":bitflip:{}", index.get()),
            FaultKind::SetValue(v) => write!(f, ":set:0x{:016X}", v.bits()),
            FaultKind::ByteXor(byte, mask) => write!(f, ":bytexor:{}:0x{mask:02X}", byte.get()),
        }
    }
}

/// One logged execution of the victim.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Identifies the input; identical input bits share an id.
    pub input_id: usize,
    pub fault: Option<FaultSpec>,
    pub output: ProbabilityVector,
}

/// A sequence of victim executions under the single-fault-per-run
/// discipline. Runs are sequential; the wrapped model is immutable.
pub struct FaultSession<'m> {
    model: &'m StudentModel,
    log: Vec<RunRecord>,
    fault_count: usize,
    input_ids: HashMap<(u8, Vec<u64>), usize>,
}

impl<'m> FaultSession<'m> {
    pub fn new(model: &'m StudentModel) -> Self {
        FaultSession {
            model,
            log: Vec::new(),
            fault_count: 0,
            input_ids: HashMap::new(),
        }
    }

    pub fn model(&self) -> &StudentModel {
        self.model
    }

    /// Executes one forward pass with at most one fault. Requesting more
    /// than one fault violates the session discipline and is rejected
    /// before anything runs.
    pub fn run(&mut self, input: &RunInput, faults: &[FaultSpec]) -> Result<ProbabilityVector> {
        if faults.len() > 1 {
            return Err(Error::SessionDiscipline(format!(
                "{} faults requested for a single run; the adversary injects exactly one",
                faults.len()
            )));
        }
        let fault = faults.first();
        let output = self.model.forward(input, fault)?;
        let input_id = self.intern(input);
        self.log.push(RunRecord {
            input_id,
            fault: fault.copied(),
            output: output.clone(),
        });
        if fault.is_some() {
            self.fault_count += 1;
        }
        Ok(output)
    }

    pub fn run_count(&self) -> usize {
        self.log.len()
    }

    pub fn fault_count(&self) -> usize {
        self.fault_count
    }

    pub fn log(&self) -> &[RunRecord] {
        &self.log
    }

    fn intern(&mut self, input: &RunInput) -> usize {
        let key = match input {
            RunInput::Raw(x) => (0u8, x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()),
            RunInput::Features(fv) => {
                (1u8, fv.as_slice().iter().map(|v| v.to_bits()).collect())
            }
        };
        let next = self.input_ids.len();
        *self.input_ids.entry(key).or_insert(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_kind_negates() {
        let out = apply_fault(FloatWord::new(1.0), &FaultKind::SignFlip);
        assert_eq!(out.value(), -1.0);
    }

    #[test]
    fn sign_flip_canonicalizes_to_bit_63() {
        let patterns = [0.0f64, -0.0, 1.0, -2.5, f64::INFINITY, f64::NAN, 1e-310];
        for v in patterns {
            let w = FloatWord::new(v);
            let a = apply_fault(w, &FaultKind::SignFlip);
            let b = apply_fault(w, &FaultKind::BitFlip(BitIndex::new(63).unwrap()));
            assert_eq!(a.bits(), b.bits());
        }
    }

    #[test]
    fn set_value_ignores_input() {
        let kind = FaultKind::SetValue(FloatWord::new(0.0));
        for v in [1.0, -3.5, f64::MAX, 1e-300] {
            assert_eq!(apply_fault(FloatWord::new(v), &kind).value(), 0.0);
        }
    }

    #[test]
    fn byte_xor_on_top_byte_flips_sign() {
        // Byte 7 holds the sign bit; oracle is plain integer XOR.
        let kind = FaultKind::ByteXor(ByteIndex::new(7).unwrap(), 0x80);
        let out = apply_fault(FloatWord::new(2.0), &kind);
        assert_eq!(out.value(), -2.0);
        assert_eq!(out.bits(), 2.0f64.to_bits() ^ (0x80u64 << 56));
    }

    #[test]
    fn spec_strings_roundtrip() {
        let cases = [
            "product:i=2,j=1:signflip",
            "bias:j=0:bitflip:63",
            "sum:j=3:set:0x0000000000000000",
            "input:i=5:signflip",
            "weight:i=1,j=0:bytexor:7:0x80",
            "activation:j=2:set:0x3FF0000000000000",
        ];
        for text in cases {
            let spec: FaultSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
    }

    #[test]
    fn truncated_spec_names_position() {
        let err = "bias:j=".parse::<FaultSpec>().unwrap_err();
        match err {
            Error::FaultParse { position, .. } => assert_eq!(position, 5),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_target_names_token() {
        let err = "gate:j=0:signflip".parse::<FaultSpec>().unwrap_err();
        match err {
            Error::FaultParse { token, position, .. } => {
                assert_eq!(token, "gate");
                assert_eq!(position, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bit_index_is_validated() {
        assert!(BitIndex::new(63).is_ok());
        assert!(BitIndex::new(64).is_err());
        assert!(ByteIndex::new(8).is_err());
    }
}
