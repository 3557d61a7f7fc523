//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 training
//! divergence, 4 verification failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::OpKind;
use crate::config::{seed_override, ExperimentConfig};
use crate::error::{CoevoError, Result};
use crate::eval::{analyze, evaluate_holdout, EvalSettings, HoldoutReport};
use crate::graph::{
    generate_synthetic, load_attribute_triplets, load_edge_csv, read_sequence, write_sequence, Binning,
    DynamicGraphSequence,
};
use crate::model::{AttentionTrace, ModelParams};
use crate::training::{gradient_check, load_checkpoint, train, Checkpoint, GRADCHECK_TOLERANCE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "coevo", version, about = "Co-evolving attribute and structure embeddings for dynamic graphs")]
pub struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Bin a timestamped edge list into a sequence file.
    Ingest(IngestArgs),
    /// Write a synthetic sequence from the [data.synthetic] section of a config.
    Generate(GenerateArgs),
    /// Train a model and write checkpoint, loss log and attention summary.
    Train(TrainArgs),
    /// Forecast the final snapshot from the rest and score the forecast.
    Eval(EvalArgs),
    /// Link recurrence, triad closure and attribute/structure correlation.
    Analyze(AnalyzeArgs),
    /// Compare analytic and finite-difference gradients on a fixed fixture.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// CSV rows `source,target[,weight],timestamp`.
    #[arg(long)]
    pub edges: PathBuf,
    /// Seconds per snapshot; without it timestamps are step indices.
    #[arg(long)]
    pub window: Option<f64>,
    /// CSV rows `t,node,attr_index,value` replacing the degree features.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Experiment config; the [model] section is used. Defaults apply without it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; falls back to [output] directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Inclusive snapshot range `a..b` to train on.
    #[arg(long, value_parser = parse_range)]
    pub train_range: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Hold out the final snapshot (the only protocol; accepted for clarity).
    #[arg(long)]
    pub holdout_last: bool,
    /// Experiment config; the [eval] section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also score the untrained initial parameters.
    #[arg(long)]
    pub random_baseline: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Experiment config; aggregator, fusion, activations, depth, alpha and seed are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
    if a >= b {
        return Err(format!("range {a}..{b} needs at least two snapshots"));
    }
    Ok((a, b))
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<CoevoError> for Failure {
    fn from(e: CoevoError) -> Self {
        let code = match e {
            CoevoError::Divergence { .. } => EXIT_DIVERGED,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Serialize)]
struct Artifact {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: u64,
    git: String,
    started_unix: f64,
    finished_unix: f64,
    artifacts: Vec<Artifact>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Collects artifacts written into one output directory.
struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    started: f64,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CoevoError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            started: now(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CoevoError::io(&path, e))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    fn finish(self, command: &str, config: &impl Serialize, seed: u64) -> Result<()> {
        let manifest = RunManifest {
            command,
            config: serde_json::to_value(config).map_err(|e| CoevoError::Format(e.to_string()))?,
            seed,
            git: git_describe(),
            started_unix: self.started,
            finished_unix: now(),
            artifacts: self.artifacts,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CoevoError::Format(e.to_string()))?;
        let tmp = self.dir.join("manifest.json.tmp");
        let path = self.dir.join("manifest.json");
        std::fs::write(&tmp, text + "\n").map_err(|e| CoevoError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CoevoError::io(&path, e))
    }
}

fn to_json(value: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CoevoError::Format(e.to_string()))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

pub fn summarize(seq: &DynamicGraphSequence) -> String {
    let edges: Vec<usize> = seq.snapshots().iter().map(|s| s.graph.edge_count()).collect();
    let total: usize = edges.iter().sum();
    format!(
        "nodes {}, attributes {}, snapshots {} (T = {}), edges per snapshot min {} mean {:.2} max {}",
        seq.node_count(),
        seq.attribute_count(),
        seq.len(),
        seq.horizon(),
        edges.iter().min().unwrap_or(&0),
        total as f64 / edges.len().max(1) as f64,
        edges.iter().max().unwrap_or(&0),
    )
}

/// `t,stack,mean_weight` rows averaged over nodes.
pub fn attention_summary_csv(trace: &AttentionTrace) -> String {
    let mut sums: std::collections::BTreeMap<(usize, usize), (f64, usize)> = Default::default();
    for e in &trace.entries {
        for (s, w) in e.weights.iter().enumerate() {
            let slot = sums.entry((e.t, s + 1)).or_default();
            slot.0 += w;
            slot.1 += 1;
        }
    }
    let mut out = String::from("t,stack,mean_weight\n");
    for ((t, s), (sum, count)) in sums {
        let _ = writeln!(out, "{t},{s},{}", sum / count as f64);
    }
    out
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let binning = match args.window {
        Some(w) => Binning::Window(w),
        None => Binning::ExplicitSteps,
    };
    let mut seq = load_edge_csv(&args.edges, binning)?;
    if let Some(attrs) = &args.attributes {
        seq = load_attribute_triplets(attrs, seq)?;
    }
    write_sequence(&args.out, &seq)?;
    println!("{}", summarize(&seq));
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.spec)?;
    let mut spec = cfg
        .data
        .synthetic
        .ok_or_else(|| CoevoError::Config(format!("{}: no [data.synthetic] section", args.spec.display())))?;
    spec.seed = seed_override(spec.seed)?;
    let seq = generate_synthetic(&spec)?;
    write_sequence(&args.out, &seq)?;
    let sidecar = sidecar_path(&args.out);
    let text = toml::to_string(&spec).map_err(|e| CoevoError::Config(e.to_string()))?;
    std::fs::write(&sidecar, text).map_err(|e| CoevoError::io(&sidecar, e))?;
    println!("{}", summarize(&seq));
    Ok(())
}

/// `<out>.spec.toml` next to a generated sequence.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".spec.toml");
    out.with_file_name(name)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let mut model = cfg.model.clone();
    model.seed = seed_override(model.seed)?;
    model.validate()?;
    let dir = args
        .out
        .clone()
        .or(cfg.output.directory.clone())
        .ok_or_else(|| CoevoError::Config("no output directory: pass --out or set [output] directory".into()))?;
    let mut seq = read_sequence(&args.data)?;
    if let Some((a, b)) = args.train_range {
        seq = seq.range(a..=b)?;
        log::info!("training range {a}..{b}: {} transitions", b - a);
        println!("training range {a}..{b}: T' = {} transitions", b - a);
    }
    let mut out = Outputs::new(&dir)?;
    let outcome = train(&seq, &model)?;
    let checkpoint = Checkpoint {
        config: model.clone(),
        params: outcome.params,
        steps: outcome.steps,
    };
    let path = out.write("checkpoint.ckpt", &checkpoint.to_bytes()?)?;
    debug_assert_eq!(load_checkpoint(&path).map(|c| c.steps).ok(), Some(outcome.steps));
    out.write("loss.csv", outcome.report.to_csv().as_bytes())?;
    out.write("attention.csv", attention_summary_csv(&outcome.trace).as_bytes())?;
    if let Some(last) = outcome.report.epochs.last() {
        println!(
            "epoch {}: total {:.6} attr {:.6} struct {:.6}",
            last.epoch, last.total, last.attribute, last.structure
        );
    }
    #[derive(Serialize)]
    struct Echo<'a> {
        model: &'a crate::training::TrainConfig,
        train_range: Option<(usize, usize)>,
    }
    out.finish(
        "train",
        &Echo {
            model: &model,
            train_range: args.train_range,
        },
        model.seed,
    )?;
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    model: HoldoutReport,
    baseline: Option<HoldoutReport>,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let mut settings: EvalSettings = cfg.eval.clone();
    settings.random_baseline |= args.random_baseline;
    if !args.holdout_last {
        log::info!("holding out the final snapshot");
    }
    let dir = args
        .out
        .clone()
        .or(cfg.output.directory.clone())
        .ok_or_else(|| CoevoError::Config("no output directory: pass --out or set [output] directory".into()))?;
    let seq = read_sequence(&args.data)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let seed = seed_override(checkpoint.config.seed)?;
    let model = evaluate_holdout(&checkpoint.params, &seq, &settings, seed)?;
    let baseline = if settings.random_baseline {
        let random = ModelParams::init(checkpoint.params.spec.clone(), checkpoint.config.seed)?;
        Some(evaluate_holdout(&random, &seq, &settings, seed)?)
    } else {
        None
    };
    let mut text = model.to_text("model");
    if let Some(b) = &baseline {
        text.push_str(&b.to_text("random baseline"));
    }
    print!("{text}");
    let mut out = Outputs::new(&dir)?;
    out.write("eval.json", to_json(&EvalOutput { model, baseline })?.as_bytes())?;
    out.write("eval.txt", text.as_bytes())?;
    out.finish("eval", &settings, seed)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let seq = read_sequence(&args.data)?;
    let report = analyze(&seq)?;
    let mut out = Outputs::new(&args.out)?;
    out.write("recurrence.csv", report.recurrence.to_csv().as_bytes())?;
    out.write("triad_closure.csv", report.triad_closure.to_csv().as_bytes())?;
    let mut corr = String::from("node,pearson\n");
    for (v, c) in report.correlations.iter().enumerate() {
        let id = seq.ids().get(v).cloned().unwrap_or_else(|| v.to_string());
        let _ = writeln!(corr, "{id},{}", c.map_or(String::new(), |c| c.to_string()));
    }
    out.write("correlation.csv", corr.as_bytes())?;
    out.write("analysis.json", to_json(&report)?.as_bytes())?;
    let s = &report.correlation_summary;
    println!(
        "recurrence {:?}\ntriad closure {:?}\ncorrelation: {} of {} nodes defined, mean {:?}, share above 0.3 {:?}",
        report.recurrence.proportions(),
        report.triad_closure.proportions(),
        s.defined,
        s.nodes,
        s.mean,
        s.fraction_above_0_3
    );
    out.finish("analyze", &serde_json::json!({ "data": args.data }), 0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> std::result::Result<(), Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let mut model = cfg.model;
    model.seed = seed_override(model.seed)?;
    let fault = args.corrupt_backward.then_some(OpKind::MatMul);
    let report = gradient_check(&model, fault)?;
    println!("{:<24} {:>8} {:>14}", "tensor", "elements", "max_rel_err");
    for t in &report.tensors {
        println!("{:<24} {:>8} {:>14.3e}", t.name, t.elements, t.max_rel_err);
    }
    let max = report.max_rel_err();
    println!("max relative error {max:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})");
    if max <= GRADCHECK_TOLERANCE {
        return Ok(());
    }
    let w = report.worst().expect("a failing report has tensors");
    Err(Failure {
        code: EXIT_VERIFY,
        message: format!(
            "gradient check failed: {} index {} analytic {:.6e} numeric {:.6e} (relative error {:.3e})",
            w.name, w.worst_index, w.analytic, w.numeric, w.max_rel_err
        ),
    })
}

pub fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a).map_err(Failure::from),
        Command::Generate(a) => cmd_generate(a).map_err(Failure::from),
        Command::Train(a) => cmd_train(a).map_err(Failure::from),
        Command::Eval(a) => cmd_eval(a).map_err(Failure::from),
        Command::Analyze(a) => cmd_analyze(a).map_err(Failure::from),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("3..5"), Ok((3, 5)));
        assert!(parse_range("5..5").is_err());
        assert!(parse_range("x..5").is_err());
        assert!(parse_range("35").is_err());
    }

    #[test]
    fn hashes_and_sidecars() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sidecar_path(Path::new("/tmp/a.seq")), Path::new("/tmp/a.seq.spec.toml"));
    }

    #[test]
    fn error_exit_codes() {
        let diverged = CoevoError::Divergence {
            epoch: 3,
            detail: "total loss is NaN".into(),
        };
        let f = Failure::from(diverged);
        assert_eq!(f.code, EXIT_DIVERGED);
        assert!(f.message.contains('3'));
        assert_eq!(Failure::from(CoevoError::Config("x".into())).code, EXIT_INPUT);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["coevo", "train"]), EXIT_INPUT);
        assert_eq!(run(["coevo", "frobnicate"]), EXIT_INPUT);
        assert_eq!(run(["coevo", "--help"]), EXIT_OK);
    }
}
