//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O or data error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::dataset::{self, class_counts, label_all, LabeledExample, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model_io::{load_quantized, save_quantized, FloatModel};
use crate::quant::{
    evaluate_quantized, evaluate_quantized_only, frame_dump, q_forward, quantize_model, QFormat, StreamFrame,
};
use crate::sparsity::SparsityConfig;
use crate::trainer::{evaluate, train, Evaluation, TrainConfig, TrainReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fcdsae", version, about = "Fuel-cell HFR health classifier with a fixed-point golden model")]
pub struct Cli {
    /// Optional TOML file with the same keys as the flags; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic sensor log as CSV.
    GenData(GenDataArgs),
    /// Train on a sensor CSV and write the model and report.
    Train(TrainArgs),
    /// Convert a float model into a fixed-point model.
    Quantize(QuantizeArgs),
    /// Evaluate a float or fixed-point model on a sensor CSV.
    Eval(EvalArgs),
    /// Classify one row of ten raw sensor values with a fixed-point model.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Report JSON; `<path>.epochs.csv` and `<path>.confusion.csv` are
    /// written next to it.
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `Q<int>.<frac>`, e.g. `Q8.8`.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Report JSON to append a reproducibility line to.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    /// Test partition of the seeded 3:1 split.
    Test,
    /// Every row of the file.
    All,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("models").required(true).multiple(true).args(["model", "qmodel"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub qmodel: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Split seed; defaults to the one recorded in the model file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Partition::Test)]
    pub partition: Partition,
    #[arg(long)]
    pub confusion_out: Option<PathBuf>,
    /// Frame dump (input and output words per line); needs `--qmodel`.
    #[arg(long)]
    pub dump_frames: Option<PathBuf>,
    /// Print the evaluation as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub qmodel: PathBuf,
    /// Ten comma-separated raw sensor values in column order.
    #[arg(long, allow_hyphen_values = true)]
    pub row: String,
}

/// Keys accepted in `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub xi: Option<f64>,
    pub psi: Option<f64>,
    pub format: Option<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ROWS: usize = 36_363;

fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_with_io<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_io(args, &mut stdout.lock(), &mut stderr.lock())
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::GenData(a) => gen_data(a, &cfg, out),
        Command::Train(a) => train_cmd(a, &cfg, out),
        Command::Quantize(a) => quantize_cmd(a, &cfg, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Infer(a) => infer_cmd(a, out),
    }
}

fn gen_data(a: &GenDataArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let n = a.n.or(cfg.n).unwrap_or(DEFAULT_ROWS);
    let seed = a.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    if n == 0 {
        return Err(Error::Config("--n must be >= 1".into()));
    }
    let records = dataset::generate_synthetic(n, seed)?;
    dataset::write_csv(&a.out, &records)?;
    let counts = class_counts(&label_all(&records));
    writeln!(out, "wrote {n} rows to {}", a.out.display()).map_err(out_err)?;
    writeln!(out, "{}", distribution_line(&counts)).map_err(out_err)?;
    Ok(())
}

fn distribution_line(counts: &[usize; 3]) -> String {
    let total: usize = counts.iter().sum::<usize>().max(1);
    let parts: Vec<String> = counts
        .iter()
        .enumerate()
        .map(|(c, n)| format!("{c}={n} ({:.2}%)", 100.0 * *n as f64 / total as f64))
        .collect();
    format!("class distribution: {}", parts.join(" "))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn train_config(a: &TrainArgs, cfg: &ConfigFile) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let mut tc = TrainConfig {
        seed: a.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        max_epochs: a.epochs.or(cfg.epochs).unwrap_or(defaults.max_epochs),
        batch_size: a.batch.or(cfg.batch).unwrap_or(defaults.batch_size),
        sparsity: SparsityConfig {
            xi: a.xi.or(cfg.xi).unwrap_or(defaults.sparsity.xi),
            psi: a.psi.or(cfg.psi).unwrap_or(defaults.sparsity.psi),
            ..defaults.sparsity.clone()
        },
        ..defaults
    };
    tc.adam.lr = a.lr.or(cfg.lr).unwrap_or(tc.adam.lr);
    tc.validate()?;
    Ok(tc)
}

fn repro_line(command: &str, tc: &TrainConfig) -> String {
    let topo: Vec<String> = tc.topology.iter().map(usize::to_string).collect();
    format!(
        "{command}: seed={} epochs={} lr={} batch={} xi={} psi={} clamp_eps={} beta1={} beta2={} eps={} topology={} split=3:1",
        tc.seed,
        tc.max_epochs,
        tc.adam.lr,
        tc.batch_size,
        tc.sparsity.xi,
        tc.sparsity.psi,
        tc.sparsity.clamp_eps,
        tc.adam.beta1,
        tc.adam.beta2,
        tc.adam.eps,
        topo.join("-"),
    )
}

fn train_cmd(a: &TrainArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let tc = train_config(a, cfg)?;
    let records = dataset::parse_csv(&a.data)?;
    let data = dataset::split(label_all(&records), tc.seed).map_err(|e| match e {
        Error::Config(m) => Error::Data {
            row: records.len(),
            column: String::new(),
            message: m,
        },
        e => e,
    })?;
    let outcome = train(&tc, &data)?;
    let mut report = outcome.report;
    report.log.push(repro_line("train", &tc));

    let model = FloatModel {
        params: outcome.params,
        standardizer: outcome.standardizer,
        sparsity: tc.sparsity.clone(),
        seed: tc.seed,
    };
    model.save(&a.out_model)?;
    write_file(&a.out_report, &report.to_json())?;
    write_file(&with_suffix(&a.out_report, ".epochs.csv"), &report.epochs_csv())?;
    write_file(
        &with_suffix(&a.out_report, ".confusion.csv"),
        &report.test.confusion.to_csv_string(),
    )?;

    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(out_err);
    w(out, format!("train {} / test {} examples, {} epochs", data.train.len(), data.test.len(), report.epochs_run()))?;
    w(out, format!("best epoch {} (validation = test partition)", report.best_epoch))?;
    write!(out, "{}", report.test.metrics).map_err(out_err)?;
    w(out, format!("one-hot output MSE {:.6}", report.test.one_hot_mse))?;
    w(out, format!("wall time {:.2}s", report.wall_time_secs))?;
    Ok(())
}

fn append_log(report: &Path, line: String) -> Result<()> {
    let text = std::fs::read_to_string(report).map_err(|e| Error::io(report, e))?;
    let mut r = TrainReport::from_json(&text)?;
    r.log.push(line);
    write_file(report, &r.to_json())
}

fn quantize_cmd(a: &QuantizeArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let fmt: QFormat = match a.format.as_deref().or(cfg.format.as_deref()) {
        Some(s) => s.parse()?,
        None => QFormat::Q8_8,
    };
    let model = FloatModel::load(&a.model)?;
    let q = quantize_model(&model.params, &model.standardizer, fmt, model.seed)?;
    save_quantized(&q.model, &a.out)?;
    writeln!(
        out,
        "format {fmt} (inputs {}, scales {}); saturated constants: {}",
        q.model.input_fmt, q.model.scale_fmt, q.saturated
    )
    .map_err(out_err)?;
    if let Some(r) = &a.report {
        append_log(r, format!("quantize: format={fmt} saturated={}", q.saturated))?;
    }
    Ok(())
}

fn eval_examples(data: &Path, partition: Partition, seed: u64) -> Result<Vec<LabeledExample>> {
    let examples = label_all(&dataset::parse_csv(data)?);
    match partition {
        Partition::All => Ok(examples),
        Partition::Test => Ok(dataset::split(examples, seed)?.test),
    }
}

fn print_eval(out: &mut dyn Write, title: &str, ev: &Evaluation) -> Result<()> {
    writeln!(out, "{title}").map_err(out_err)?;
    write!(out, "{}", ev.metrics).map_err(out_err)?;
    writeln!(out, "one-hot output MSE {:.6}", ev.one_hot_mse).map_err(out_err)?;
    write!(out, "{}", ev.confusion.to_csv_string()).map_err(out_err)
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let exec = Execution::Parallel;
    let float = a.model.as_ref().map(FloatModel::load).transpose()?;
    let quant = a.qmodel.as_ref().map(load_quantized).transpose()?;
    if a.dump_frames.is_some() && quant.is_none() {
        return Err(Error::Config("--dump-frames needs --qmodel".into()));
    }
    let seed = a
        .seed
        .or(quant.as_ref().map(|q| q.seed))
        .or(float.as_ref().map(|m| m.seed))
        .unwrap_or(DEFAULT_SEED);
    let examples = eval_examples(&a.data, a.partition, seed)?;

    let mut log = format!("eval: partition={:?} seed={seed} rows={}", a.partition, examples.len());
    let confusion = match (&float, &quant) {
        (Some(m), Some(q)) => {
            let ev = evaluate_quantized(q, &m.params, &m.standardizer, &examples, exec)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string(&ev).expect("serializes")).map_err(out_err)?;
            } else {
                print_eval(out, "float model", &ev.float)?;
                print_eval(out, &format!("fixed-point model ({})", q.fmt), &ev.quantized)?;
                writeln!(out, "accuracy degradation {:.3} percentage points", ev.accuracy_drop_points)
                    .map_err(out_err)?;
            }
            log.push_str(&format!(" format={} drop_points={}", q.fmt, ev.accuracy_drop_points));
            ev.quantized.confusion
        }
        (None, Some(q)) => {
            let ev = evaluate_quantized_only(q, &examples, exec)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string(&ev).expect("serializes")).map_err(out_err)?;
            } else {
                print_eval(out, &format!("fixed-point model ({})", q.fmt), &ev)?;
            }
            log.push_str(&format!(" format={}", q.fmt));
            ev.confusion
        }
        (Some(m), None) => {
            let ev = evaluate(&m.params, &m.standardizer, &examples, exec)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string(&ev).expect("serializes")).map_err(out_err)?;
            } else {
                print_eval(out, "float model", &ev)?;
            }
            ev.confusion
        }
        (None, None) => unreachable!("clap requires --model or --qmodel"),
    };
    if let Some(p) = &a.confusion_out {
        write_file(p, &confusion.to_csv_string())?;
    }
    if let (Some(p), Some(q)) = (&a.dump_frames, &quant) {
        let frames: Vec<StreamFrame> = examples.iter().map(|e| q.frame(&e.features)).collect();
        write_file(p, &frame_dump(q, &frames, exec)?)?;
    }
    if let Some(r) = &a.report {
        append_log(r, log)?;
    }
    Ok(())
}

/// Parses `--row`; wrong arity or a non-number is a usage error.
pub fn parse_row(row: &str) -> Result<Vec<f64>> {
    let vals = row
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("--row value {t:?} is not a finite number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() != FEATURE_COUNT {
        return Err(Error::Config(format!(
            "--row needs {FEATURE_COUNT} values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn infer_cmd(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let features = parse_row(&a.row)?;
    let qm = load_quantized(&a.qmodel)?;
    let frame = qm.frame(&features);
    let res = q_forward(&qm, &frame)?;
    let words = |w: &[i64]| w.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
    writeln!(out, "class {}", res.class).map_err(out_err)?;
    writeln!(out, "input words {}", words(&frame.words)).map_err(out_err)?;
    writeln!(out, "output words {}", words(&res.words)).map_err(out_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with_io(std::iter::once("fcdsae").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&["gen-data", "--n", "0", "--out", "/tmp/never.csv"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["eval", "--data", "x.csv"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn row_parsing() {
        let row = "1,24.2,222.4,363.8,83,68.5,165.5,0.44,145.6,28.6";
        assert_eq!(parse_row(row).unwrap().len(), 10);
        assert!(parse_row("1,2,3").is_err());
        assert!(parse_row("1,2,3,4,5,6,7,8,9,x").is_err());
    }

    #[test]
    fn epochs_zero_rejected_before_reading_data() {
        let (code, _, err) = run_args(&[
            "train", "--data", "/nonexistent.csv", "--epochs", "0", "--out-model", "m", "--out-report", "r",
        ]);
        assert_eq!(code, EXIT_USAGE, "{err}");
    }

    #[test]
    fn bad_format_is_usage_error() {
        assert!(matches!("Q0.16".parse::<QFormat>(), Err(Error::Config(_))));
    }
}
