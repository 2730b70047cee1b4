//! Command-line driver for seeded fault-injection extraction experiments.
//!
//! One seed drives model synthesis, attack inputs, and dataset generation
//! through independent derived streams, so a fixed configuration
//! reproduces its outputs byte for byte.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sniff_core::eval::{
    accuracy_curve, accuracy_curve_csv, gaussian_blobs, precision_summary_csv,
    summarize_precision, DatasetConfig,
};
use sniff_core::extract::{extract_last_layer, ExtractionConfig, NonVanishingRule};
use sniff_core::fault::{FaultSession, FaultSpec};
use sniff_core::format::{load_model, save_model};
use sniff_core::model::{generate_synthetic, PrecisionMode, RunInput, StudentModel};
use sniff_core::rng::{stream, SeededStream};

#[derive(Parser)]
#[command(name = "sniff")]
#[command(about = "Sign-bit-flip fault injection and exact last-layer recovery", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic victim model file
    Generate(Opts),
    /// Recover the student layer of a model via simulated sign-flip faults
    Attack(Opts),
    /// Run one forward pass clean and once with a fault, print both outputs
    Inject(Opts),
    /// Compare an original and a recovered model: precision + accuracy sweep
    Evaluate(Opts),
    /// Generate, attack, and evaluate in one go
    All(Opts),
}

/// Flags shared by all subcommands; every value can also come from a
/// `key=value` config file, with explicit flags taking precedence.
#[derive(Args, Clone, Default)]
struct Opts {
    /// Flat key=value config file mirroring these flags
    #[arg(long)]
    config: Option<PathBuf>,

    /// Experiment seed driving all derived random streams
    #[arg(long)]
    seed: Option<u64>,

    /// Model file to operate on
    #[arg(long)]
    model: Option<PathBuf>,

    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,

    /// Victim arithmetic width: 64 or 32
    #[arg(long)]
    precision: Option<u32>,

    /// Absolute non-vanishing threshold (default: relative to the peak feature)
    #[arg(long)]
    epsilon: Option<f64>,

    /// Try budget for input searches
    #[arg(long = "max-tries")]
    max_tries: Option<usize>,

    /// Fresh-input retries per parameter
    #[arg(long = "retry-limit")]
    retry_limit: Option<usize>,

    /// Fault spec, e.g. "product:i=2,j=1:signflip"
    #[arg(long)]
    fault: Option<String>,

    /// Comma list of rounding digits for the accuracy sweep ("inf" = none)
    #[arg(long)]
    digits: Option<String>,

    /// Extractor widths for generation, input first, e.g. "32,16"
    #[arg(long)]
    dims: Option<String>,

    /// Number of output classes for generation
    #[arg(long)]
    classes: Option<usize>,

    /// Uniform parameter range for generation, e.g. "-1,1"
    #[arg(long = "weight-range")]
    weight_range: Option<String>,

    /// Input vector for inject: comma list of decimals or 0x bit patterns
    #[arg(long)]
    input: Option<String>,

    /// Recovered model file for evaluate
    #[arg(long)]
    recovered: Option<PathBuf>,
}

/// Fully resolved settings: flag, else config file, else default.
struct Settings {
    seed: u64,
    model: Option<PathBuf>,
    out: PathBuf,
    precision: PrecisionMode,
    epsilon: Option<f64>,
    max_tries: usize,
    retry_limit: usize,
    fault: Option<String>,
    digits: Vec<Option<u32>>,
    dims: Vec<usize>,
    classes: usize,
    weight_range: (f64, f64),
    input: Option<Vec<f64>>,
    recovered: Option<PathBuf>,
}

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(
                "{}:{}: expected key=value, found {line:?}",
                path.display(),
                lineno + 1
            );
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_comma_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("invalid {what} entry {:?}", tok.trim()))
        })
        .collect()
}

fn parse_digits(text: &str) -> Result<Vec<Option<u32>>> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            if tok == "inf" || tok == "full" {
                Ok(None)
            } else {
                tok.parse::<u32>()
                    .map(Some)
                    .map_err(|_| anyhow::anyhow!("invalid digits entry {tok:?}"))
            }
        })
        .collect()
}

fn parse_input_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
                if hex.len() != 16 {
                    bail!("bit-pattern input entry {tok:?} must have 16 hex digits");
                }
                Ok(f64::from_bits(u64::from_str_radix(hex, 16)?))
            } else {
                tok.parse::<f64>()
                    .with_context(|| format!("invalid input entry {tok:?}"))
            }
        })
        .collect()
}

impl Settings {
    fn resolve(opts: &Opts) -> Result<Self> {
        let file = match &opts.config {
            Some(path) => parse_config_file(path)?,
            None => HashMap::new(),
        };
        let from_file = |key: &str| file.get(key).cloned();

        let seed = match opts.seed {
            Some(s) => s,
            None => match from_file("seed") {
                Some(v) => v.parse().context("config key seed")?,
                None => 42,
            },
        };
        let precision_raw = match opts.precision {
            Some(p) => p,
            None => match from_file("precision") {
                Some(v) => v.parse().context("config key precision")?,
                None => 64,
            },
        };
        let precision = match precision_raw {
            64 => PrecisionMode::Binary64,
            32 => PrecisionMode::Binary32,
            other => bail!("precision must be 64 or 32, got {other}"),
        };
        let model = opts
            .model
            .clone()
            .or_else(|| from_file("model").map(PathBuf::from));
        let out = opts
            .out
            .clone()
            .or_else(|| from_file("out").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        let epsilon = match opts.epsilon {
            Some(e) => Some(e),
            None => from_file("epsilon")
                .map(|v| v.parse().context("config key epsilon"))
                .transpose()?,
        };
        let max_tries = match opts.max_tries {
            Some(v) => v,
            None => match from_file("max-tries") {
                Some(v) => v.parse().context("config key max-tries")?,
                None => 1000,
            },
        };
        let retry_limit = match opts.retry_limit {
            Some(v) => v,
            None => match from_file("retry-limit") {
                Some(v) => v.parse().context("config key retry-limit")?,
                None => 10,
            },
        };
        let fault = opts.fault.clone().or_else(|| from_file("fault"));
        let digits = parse_digits(
            &opts
                .digits
                .clone()
                .or_else(|| from_file("digits"))
                .unwrap_or_else(|| "0,1,2,3,4,6,8,inf".to_string()),
        )?;
        let dims = parse_comma_list::<usize>(
            &opts
                .dims
                .clone()
                .or_else(|| from_file("dims"))
                .unwrap_or_else(|| "32,16".to_string()),
            "dims",
        )?;
        let classes = match opts.classes {
            Some(v) => v,
            None => match from_file("classes") {
                Some(v) => v.parse().context("config key classes")?,
                None => 10,
            },
        };
        let range_raw = opts
            .weight_range
            .clone()
            .or_else(|| from_file("weight-range"))
            .unwrap_or_else(|| "-1,1".to_string());
        let range_parts = parse_comma_list::<f64>(&range_raw, "weight-range")?;
        let weight_range = match range_parts.as_slice() {
            [low, high] => (*low, *high),
            _ => bail!("weight-range must be \"low,high\""),
        };
        let input = opts
            .input
            .clone()
            .or_else(|| from_file("input"))
            .map(|v| parse_input_vector(&v))
            .transpose()?;
        let recovered = opts
            .recovered
            .clone()
            .or_else(|| from_file("recovered").map(PathBuf::from));

        Ok(Settings {
            seed,
            model,
            out,
            precision,
            epsilon,
            max_tries,
            retry_limit,
            fault,
            digits,
            dims,
            classes,
            weight_range,
            input,
            recovered,
        })
    }

    fn extraction_config(&self, victim_precision: PrecisionMode) -> ExtractionConfig {
        let mut config = ExtractionConfig {
            input_seed: self.seed,
            max_tries: self.max_tries,
            retry_limit: self.retry_limit,
            victim_precision,
            ..ExtractionConfig::default()
        };
        if let Some(epsilon) = self.epsilon {
            config.nonvanishing = NonVanishingRule::Absolute(epsilon);
        }
        config
    }

    fn model_path(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.out.join("model.json"))
    }
}

fn hex64(v: f64) -> String {
    format!("{:016X}", v.to_bits())
}

fn load_model_file(path: &Path) -> Result<StudentModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    load_model(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn cmd_generate(settings: &Settings) -> Result<PathBuf> {
    let n = *settings
        .dims
        .last()
        .context("dims must list at least input and output widths")?;
    let model = generate_synthetic(
        settings.seed,
        &settings.dims,
        n,
        settings.classes,
        settings.weight_range,
        settings.precision,
    )?;
    fs::create_dir_all(&settings.out)?;
    let path = settings.model_path();
    fs::write(&path, save_model(&model))?;
    println!(
        "generated model: extractor {:?}, n={}, m={}, precision {}, seed {}",
        settings.dims,
        model.n(),
        model.m(),
        model.precision_mode().name(),
        settings.seed
    );
    println!("wrote {}", path.display());
    Ok(path)
}

fn cmd_attack(settings: &Settings, model_path: &Path) -> Result<(PathBuf, bool)> {
    let model = load_model_file(model_path)?;
    let mut session = FaultSession::new(&model);
    let config = settings.extraction_config(model.precision_mode());
    let report = extract_last_layer(
        &mut session,
        model.extractor(),
        model.n(),
        model.m(),
        &config,
    )?
    .with_ground_truth(model.student())?;

    fs::create_dir_all(&settings.out)?;
    let report_path = settings.out.join("report.csv");
    fs::write(&report_path, report.to_csv())?;

    let complete = report.is_complete();
    let recovered_path = settings.out.join("recovered.json");
    if complete {
        let layer = match model.precision_mode() {
            PrecisionMode::Binary64 => report.recovered_layer()?,
            // The estimate is attacker-precision binary64; deploying it at
            // device width rounds each parameter once.
            PrecisionMode::Binary32 => report.recovered_layer()?.quantized_to_binary32(),
        };
        let clone = StudentModel::new(model.extractor().clone(), layer, model.precision_mode())?;
        fs::write(&recovered_path, save_model(&clone))?;
    }

    let errors = report.truth_errors.as_ref().expect("simulator mode");
    println!(
        "faults injected: {} (m + n*m = {})",
        report.fault_count,
        model.m() + model.n() * model.m()
    );
    println!(
        "victim runs: {} actual ({} clean, cached) vs {} theoretical (2m + 2nm)",
        report.actual_runs, report.clean_runs, report.theoretical_runs
    );
    println!("retries: {}", report.retries);
    println!(
        "max weight abs error: {:e} (0x{})",
        errors.max_weight_abs_error,
        hex64(errors.max_weight_abs_error)
    );
    println!(
        "max bias abs error: {:e} (0x{})",
        errors.max_bias_abs_error,
        hex64(errors.max_bias_abs_error)
    );
    println!("wrote {}", report_path.display());
    if complete {
        println!("wrote {}", recovered_path.display());
    } else {
        for failure in &report.failures {
            eprintln!(
                "failed parameter {} i={:?} j={}: {}",
                failure.kind.name(),
                failure.i,
                failure.j,
                failure.reason
            );
        }
    }
    Ok((recovered_path, complete))
}

fn cmd_inject(settings: &Settings, model_path: &Path) -> Result<()> {
    let model = load_model_file(model_path)?;
    let spec: FaultSpec = settings
        .fault
        .as_deref()
        .context("inject needs --fault \"<spec>\"")?
        .parse()?;
    let x = match &settings.input {
        Some(x) => x.clone(),
        None => {
            let mut rng = SeededStream::new(settings.seed, stream::ATTACK_INPUTS);
            (0..model.input_dim())
                .map(|_| 0.5 * rng.standard_normal())
                .collect()
        }
    };
    let mut session = FaultSession::new(&model);
    let clean = session.run(&RunInput::Raw(x.clone()), &[])?;
    let faulted = session.run(&RunInput::Raw(x.clone()), &[spec])?;

    println!("fault: {spec}");
    println!("input: {}", x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    println!("index  clean                     faulted                   (hex clean / hex faulted)");
    for (j, (c, f)) in clean.as_slice().iter().zip(faulted.as_slice()).enumerate() {
        println!("{j:<6} {c:<25} {f:<25} 0x{} / 0x{}", hex64(*c), hex64(*f));
    }
    Ok(())
}

fn cmd_evaluate(
    settings: &Settings,
    original_path: &Path,
    recovered_path: &Path,
) -> Result<bool> {
    let original = load_model_file(original_path)?;
    let recovered = load_model_file(recovered_path)?;
    if original.n() != recovered.n() || original.m() != recovered.m() {
        bail!(
            "dimension mismatch: original {}x{}, recovered {}x{}",
            original.n(),
            original.m(),
            recovered.n(),
            recovered.m()
        );
    }

    let summary = summarize_precision(
        original.student(),
        recovered.student(),
        original.precision_mode(),
    )?;
    let dataset_config = DatasetConfig::desk_scale(settings.seed, original.input_dim(), original.m());
    let (_, test) = gaussian_blobs(&dataset_config)?;
    let curve = accuracy_curve(&original, recovered.student(), &test, &settings.digits)?;

    fs::create_dir_all(&settings.out)?;
    let precision_path = settings.out.join("precision.csv");
    fs::write(&precision_path, precision_summary_csv(&summary))?;
    let accuracy_path = settings.out.join("accuracy.csv");
    fs::write(&accuracy_path, accuracy_curve_csv(&curve))?;

    println!(
        "max weight abs error: {:e} (0x{})",
        summary.max_weight_abs_error,
        hex64(summary.max_weight_abs_error)
    );
    println!(
        "max bias abs error: {:e} (0x{})",
        summary.max_bias_abs_error,
        hex64(summary.max_bias_abs_error)
    );
    for point in &curve {
        let digits = point
            .digits
            .map(|d| d.to_string())
            .unwrap_or_else(|| "inf".into());
        println!(
            "digits {digits:>3}: accuracy {} vs {} (diff {}, identical predictions: {})",
            point.accuracy_original,
            point.accuracy_rounded,
            point.diff,
            point.predictions_identical
        );
    }
    println!("wrote {}", precision_path.display());
    println!("wrote {}", accuracy_path.display());

    // Threshold checks; any failure flips the exit status.
    let goal = match original.precision_mode() {
        PrecisionMode::Binary64 => 1e-12,
        PrecisionMode::Binary32 => 1e-4,
    };
    let mut ok = true;
    let worst = summary.max_weight_abs_error.max(summary.max_bias_abs_error);
    if worst > goal {
        eprintln!("check failed: max abs error {worst:e} exceeds {goal:e}");
        ok = false;
    }
    if let Some(full) = curve.iter().find(|p| p.digits.is_none()) {
        if !full.predictions_identical {
            eprintln!("check failed: full-precision predictions differ from the original");
            ok = false;
        }
    }
    if let Some(two) = curve.iter().find(|p| p.digits == Some(2)) {
        if two.diff.abs() > 0.01 {
            eprintln!(
                "check failed: accuracy diff {} at two decimals exceeds 0.01",
                two.diff
            );
            ok = false;
        }
    }
    Ok(ok)
}

fn main() {
    let cli = Cli::parse();
    let outcome = (|| -> Result<bool> {
        match &cli.command {
            Command::Generate(opts) => {
                let settings = Settings::resolve(opts)?;
                cmd_generate(&settings)?;
                Ok(true)
            }
            Command::Attack(opts) => {
                let settings = Settings::resolve(opts)?;
                let model_path = settings
                    .model
                    .clone()
                    .context("attack needs --model <file>")?;
                let (_, complete) = cmd_attack(&settings, &model_path)?;
                Ok(complete)
            }
            Command::Inject(opts) => {
                let settings = Settings::resolve(opts)?;
                let model_path = settings
                    .model
                    .clone()
                    .context("inject needs --model <file>")?;
                cmd_inject(&settings, &model_path)?;
                Ok(true)
            }
            Command::Evaluate(opts) => {
                let settings = Settings::resolve(opts)?;
                let original = settings
                    .model
                    .clone()
                    .context("evaluate needs --model <file>")?;
                let recovered = settings
                    .recovered
                    .clone()
                    .context("evaluate needs --recovered <file>")?;
                cmd_evaluate(&settings, &original, &recovered)
            }
            Command::All(opts) => {
                let settings = Settings::resolve(opts)?;
                let model_path = cmd_generate(&settings)?;
                let (recovered_path, complete) = cmd_attack(&settings, &model_path)?;
                if !complete {
                    bail!("attack left unrecovered parameters; skipping evaluation");
                }
                let ok = cmd_evaluate(&settings, &model_path, &recovered_path)?;
                Ok(ok)
            }
        }
    })();

    match outcome {
        Ok(true) => {}
        Ok(false) => std::process::exit(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
