//! Command-line front end and the on-disk formats: run configs, model
//! files, loss histories and report files.
//!
//! Exit codes: 0 success, 1 other failure (including a failed gradient
//! check), 2 configuration or input error, 3 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ber_16qam, ber_qpsk_noma_strong_sic, ber_qpsk_noma_weak, mc_qpsk_noma, QpskNomaConfig,
};
use crate::channel::{snr2_from, User};
use crate::eval::{
    ber_csv, compare_with_baselines, measure_ber_with, noisy_overlay, parse_snr_grid,
    render_constellation_svg, BerOptions, BerPoint, CompareConfig, ConstellationReport,
    EvalChannel, MlDetector, NeuralDetector,
};
use crate::model::AeNoma;
use crate::training::{gradient_check, HistoryRow, Preset, Trainer, TrainingConfig};
use crate::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "AE_NOMA_OUT";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Evaluation settings carried by a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub snr_grid: Vec<f64>,
    /// Test-time strong-user gain; the training distribution's centre when absent.
    #[serde(default)]
    pub h2_test: Option<f64>,
    #[serde(default)]
    pub ber: BerOptions,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            snr_grid: (0..=20).map(f64::from).collect(),
            h2_test: None,
            ber: BerOptions::default(),
            seed: 0,
        }
    }
}

/// A complete experiment. Either `preset` or `training` is given; after
/// [`RunConfig::expand`] only `training` is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            preset: Some(preset),
            training: None,
            eval: EvalSettings {
                h2_test: Some(preset.test_h2()),
                ..EvalSettings::default()
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Replaces a preset by its explicit training fields and fills the
    /// test-time gain.
    pub fn expand(&self) -> Result<Self> {
        let training = match (self.preset, &self.training) {
            (Some(p), None) => p.config(),
            (None, Some(t)) => t.clone(),
            (Some(_), Some(_)) => return Err(Error::config("give either preset or training, not both")),
            (None, None) => return Err(Error::config("config needs a preset or a training section")),
        };
        let mut eval = self.eval.clone();
        let h2 = eval.h2_test.unwrap_or_else(|| training.channel.nominal_h2());
        eval.h2_test = Some(h2);
        Ok(Self {
            preset: None,
            training: Some(training),
            eval,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.training()?;
        t.validate()?;
        if self.eval.snr_grid.is_empty() || self.eval.snr_grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("eval snr_grid must be non-empty and finite"));
        }
        self.eval.ber.validate()?;
        self.eval_channel().map(|_| ())
    }

    pub fn training(&self) -> Result<&TrainingConfig> {
        self.training
            .as_ref()
            .ok_or_else(|| Error::config("run config is not expanded"))
    }

    pub fn eval_channel(&self) -> Result<EvalChannel> {
        let t = self.training()?;
        let h2 = self.eval.h2_test.unwrap_or_else(|| t.channel.nominal_h2());
        EvalChannel::new(t.channel.h1(), h2)
    }

    /// One-line JSON for `#` headers.
    pub fn provenance(&self) -> String {
        format!("config: {}", serde_json::to_string(self).unwrap_or_default())
    }
}

/// A trained system with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub config: RunConfig,
    pub final_iteration: u64,
    pub seed: u64,
    pub system: AeNoma,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read model {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("model {} is not JSON: {e}", path.display())))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_SCHEMA_VERSION)) {
            return Err(Error::config(format!(
                "model {} has schema version {version:?}, expected {MODEL_SCHEMA_VERSION}",
                path.display()
            )));
        }
        let file: ModelFile = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("malformed model {}: {e}", path.display())))?;
        file.config.validate()?;
        Ok(file)
    }
}

/// `iteration,loss1,loss2,w1,w2,total`.
pub fn history_csv(history: &[HistoryRow], header: &[String]) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    out.push_str("iteration,loss1,loss2,w1,w2,total\n");
    for r in history {
        let l = &r.loss;
        let _ = writeln!(out, "{},{},{},{},{},{}", r.iteration, l.loss1, l.loss2, l.w1, l.w2, l.total);
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "ae-noma", version, about = "Autoencoder super-constellations for two-user downlink NOMA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a system and write model.json and history.csv.
    Train(TrainArgs),
    /// Measure a BER curve of a trained model.
    Eval(EvalArgs),
    /// Closed-form (and optional Monte-Carlo) reference BERs.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Export the learned codebook as CSV, JSON and SVG.
    Constellation(ConstellationArgs),
    /// Compare a trained model with the baselines and published values.
    Compare(CompareArgs),
    /// Finite-difference check of backpropagation on a fresh system.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "ae-noma-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// Run config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write checkpoint.json every n iterations.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct EvalOverrides {
    /// SNR1 grid in dB, `start:stop:step` or a comma list.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test-time strong-user gain.
    #[arg(long)]
    pub h2: Option<f64>,
    #[arg(long)]
    pub min_errors: Option<u64>,
    #[arg(long)]
    pub max_symbols: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DetectorKind {
    Neural,
    Ml,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub eval: EvalOverrides,
    #[arg(long, value_enum, default_value = "neural")]
    pub detector: DetectorKind,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCmd {
    /// QPSK superposition with hard SIC at the strong user.
    #[command(name = "qpsk-noma")]
    QpskNoma(QpskArgs),
    /// Gray 16-QAM at the strong user's SNR.
    #[command(name = "16qam")]
    Qam16(QamArgs),
}

#[derive(Debug, Args)]
pub struct QpskArgs {
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h1: f64,
    #[arg(long, default_value_t = 2.0)]
    pub h2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub power: f64,
    #[arg(long, default_value = "0:20:1")]
    pub grid: String,
    /// Evaluate alpha <= 0.5 despite overlapping constellations.
    #[arg(long)]
    pub allow_overlap: bool,
    /// Also run a Monte-Carlo check with this many symbols per point.
    #[arg(long, default_value_t = 0)]
    pub mc_symbols: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the CSV to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QamArgs {
    /// Weak-user SNR grid in dB.
    #[arg(long, default_value = "0:20:1")]
    pub snr1: String,
    /// `|h2| / |h1|`.
    #[arg(long, default_value_t = 2.0)]
    pub h_ratio: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConstellationArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Overlay this many noisy received samples.
    #[arg(long, default_value_t = 0)]
    pub noisy: usize,
    #[arg(long, default_value_t = 10.0)]
    pub snr: f64,
    /// User whose received samples and bits are shown (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub user: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub h2: Option<f64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "7.5,10,14,16,18")]
    pub grid: String,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub h2: Option<f64>,
    #[arg(long)]
    pub min_errors: Option<u64>,
    #[arg(long)]
    pub max_symbols: Option<u64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "case1")]
    pub preset: String,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
        Error::Numeric { .. } | Error::DegenerateInput(_) => 3,
        Error::NoData(_) | Error::Internal(_) => 1,
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Numeric {
                last_checkpoint: Some(p),
                ..
            } = &e
            {
                eprintln!("last checkpoint: {}", p.display());
            }
            exit_code(&e)
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(&a).map(|_| 0),
        Command::Eval(a) => cmd_eval(&a).map(|_| 0),
        Command::Baseline(BaselineCmd::QpskNoma(a)) => cmd_baseline_qpsk(&a).map(|_| 0),
        Command::Baseline(BaselineCmd::Qam16(a)) => cmd_baseline_16qam(&a).map(|_| 0),
        Command::Constellation(a) => cmd_constellation(&a).map(|_| 0),
        Command::Compare(a) => cmd_compare(&a).map(|_| 0),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

/// Paths written by `train`.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub model: PathBuf,
    pub history: PathBuf,
    pub config: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutputs> {
    let base = match (&args.preset, &args.config) {
        (Some(p), _) => RunConfig::from_preset(Preset::parse(p)?),
        (None, Some(path)) => RunConfig::load(path)?,
        (None, None) => return Err(Error::config("train needs --preset or --config")),
    };
    let mut run = base.expand()?;
    if let Some(t) = run.training.as_mut() {
        if let Some(n) = args.iterations {
            t.iterations = n;
        }
        if let Some(s) = args.seed {
            t.seed = s;
        }
    }
    run.validate()?;
    let dir = &args.out.out;
    let outputs = TrainOutputs {
        model: dir.join("model.json"),
        history: dir.join("history.csv"),
        config: dir.join("config.json"),
    };
    write_file(&outputs.config, &(serde_json::to_string_pretty(&run)? + "\n"))?;

    let training = run.training()?.clone();
    let checkpoint_path = dir.join("checkpoint.json");
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut trainer = Trainer::new(training.clone())?;
    let result = trainer.run(args.checkpoint_every, |ck| {
        write_file(&checkpoint_path, &serde_json::to_string(ck)?)?;
        last_checkpoint = Some(checkpoint_path.clone());
        Ok(())
    });
    let ck = match result {
        Ok(ck) => ck,
        Err(Error::Numeric {
            iteration, message, ..
        }) => {
            return Err(Error::Numeric {
                iteration,
                message,
                last_checkpoint,
            })
        }
        Err(e) => return Err(e),
    };
    let model = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        config: run.clone(),
        final_iteration: ck.iteration,
        seed: training.seed,
        system: ck.system,
    };
    model.save(&outputs.model)?;
    write_file(&outputs.history, &history_csv(&ck.history, &[run.provenance()]))?;
    println!("model: {}", outputs.model.display());
    println!("history: {}", outputs.history.display());
    Ok(outputs)
}

/// Applies command-line overrides to a model's stored evaluation settings.
fn eval_settings(file: &ModelFile, o: &EvalOverrides) -> Result<RunConfig> {
    let mut run = file.config.clone();
    if let Some(g) = &o.grid {
        run.eval.snr_grid = parse_snr_grid(g)?;
    }
    if let Some(s) = o.seed {
        run.eval.seed = s;
    }
    if let Some(h) = o.h2 {
        run.eval.h2_test = Some(h);
    }
    if let Some(n) = o.min_errors {
        run.eval.ber.min_error_events = n;
    }
    if let Some(n) = o.max_symbols {
        run.eval.ber.max_symbols = n;
    }
    run.validate()?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub config: RunConfig,
    pub detector: String,
    pub model_seed: u64,
    pub eval_seed: u64,
    pub points: Vec<BerPoint>,
}

pub fn evaluate_model(file: &ModelFile, run: &RunConfig, detector: DetectorKind) -> Result<Vec<BerPoint>> {
    let codebook = file.system.tx.build_codebook()?;
    let channel = run.eval_channel()?;
    let e = &run.eval;
    match detector {
        DetectorKind::Neural => measure_ber_with(
            &NeuralDetector(&file.system),
            &codebook,
            &channel,
            &e.snr_grid,
            &e.ber,
            e.seed,
        ),
        DetectorKind::Ml => measure_ber_with(&MlDetector(&codebook), &codebook, &channel, &e.snr_grid, &e.ber, e.seed),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<BerReport> {
    let file = ModelFile::load(&args.model)?;
    let run = eval_settings(&file, &args.eval)?;
    let points = evaluate_model(&file, &run, args.detector)?;
    let detector = match args.detector {
        DetectorKind::Neural => "neural",
        DetectorKind::Ml => "ml",
    };
    let report = BerReport {
        config: run.clone(),
        detector: detector.into(),
        model_seed: file.seed,
        eval_seed: run.eval.seed,
        points,
    };
    let header = [
        run.provenance(),
        format!("model_seed: {} eval_seed: {} detector: {detector}", file.seed, run.eval.seed),
    ];
    let csv = ber_csv(&report.points, &header);
    let dir = &args.out.out;
    write_file(&dir.join("ber.csv"), &csv)?;
    write_file(&dir.join("ber.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    print!("{}", ber_csv(&report.points, &[]));
    Ok(report)
}

pub fn cmd_baseline_qpsk(args: &QpskArgs) -> Result<String> {
    let grid = parse_snr_grid(&args.grid)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# qpsk-noma alpha={} h1={} h2={} power={} mc_symbols={} seed={}",
        args.alpha, args.h1, args.h2, args.power, args.mc_symbols, args.seed
    );
    out.push_str("snr1_db,ber1,ber2");
    if args.mc_symbols > 0 {
        out.push_str(",mc_ber1,mc_stderr1,mc_ber2,mc_stderr2");
    }
    out.push('\n');
    for (i, &snr) in grid.iter().enumerate() {
        let cfg = QpskNomaConfig::at_snr1(args.alpha, args.power, args.h1, args.h2, snr, args.allow_overlap)?;
        let _ = write!(out, "{},{},{}", snr, ber_qpsk_noma_weak(&cfg), ber_qpsk_noma_strong_sic(&cfg));
        if args.mc_symbols > 0 {
            let mc = mc_qpsk_noma(&cfg, args.mc_symbols, args.seed.wrapping_add(i as u64))?;
            let _ = write!(out, ",{},{},{},{}", mc.ber1, mc.stderr1, mc.ber2, mc.stderr2);
        }
        out.push('\n');
    }
    if let Some(p) = &args.out {
        write_file(p, &out)?;
    }
    print!("{out}");
    Ok(out)
}

pub fn cmd_baseline_16qam(args: &QamArgs) -> Result<String> {
    if !(args.h_ratio >= 1.0) || !args.h_ratio.is_finite() {
        return Err(Error::config(format!("--h-ratio must be >= 1, got {}", args.h_ratio)));
    }
    let grid = parse_snr_grid(&args.snr1)?;
    let mut out = format!("# 16qam h_ratio={}\nsnr1_db,snr_symbol_db,ber\n", args.h_ratio);
    let one = Complex64::new(1.0, 0.0);
    for &snr in &grid {
        let s = snr2_from(snr, one, Complex64::new(args.h_ratio, 0.0));
        let _ = writeln!(out, "{},{},{}", snr, s, ber_16qam(s));
    }
    if let Some(p) = &args.out {
        write_file(p, &out)?;
    }
    print!("{out}");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationFile {
    pub config: RunConfig,
    pub model_seed: u64,
    pub report: ConstellationReport,
}

pub fn cmd_constellation(args: &ConstellationArgs) -> Result<ConstellationReport> {
    let file = ModelFile::load(&args.model)?;
    let user = User::from_index(args.user)?;
    let mut run = file.config.clone();
    if let Some(h) = args.h2 {
        run.eval.h2_test = Some(h);
    }
    run.validate()?;
    let codebook = file.system.tx.build_codebook()?;
    let report = ConstellationReport::from_codebook(&codebook);
    let overlay = if args.noisy > 0 {
        Some(noisy_overlay(&codebook, &run.eval_channel()?, user, args.snr, args.noisy, args.seed)?)
    } else {
        None
    };
    let dir = &args.out.out;
    let header = [run.provenance(), format!("model_seed: {}", file.seed)];
    write_file(&dir.join("constellation.csv"), &report.to_csv(&header))?;
    let json = ConstellationFile {
        config: run,
        model_seed: file.seed,
        report: report.clone(),
    };
    write_file(&dir.join("constellation.json"), &(serde_json::to_string_pretty(&json)? + "\n"))?;
    write_file(&dir.join("constellation.svg"), &render_constellation_svg(&report, overlay.as_ref()))?;
    print!("{}", report.to_csv(&[]));
    println!("min_pairwise_distance,{}", report.min_pairwise_distance);
    Ok(report)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<crate::eval::ComparisonTable> {
    let file = ModelFile::load(&args.model)?;
    let run = eval_settings(
        &file,
        &EvalOverrides {
            grid: Some(args.grid.clone()),
            seed: args.seed,
            h2: args.h2,
            min_errors: args.min_errors,
            max_symbols: args.max_symbols,
        },
    )?;
    let cfg = CompareConfig {
        snr_grid: run.eval.snr_grid.clone(),
        alpha: args.alpha,
        ber: run.eval.ber,
        seed: run.eval.seed,
    };
    let table = compare_with_baselines(&file.system, &run.eval_channel()?, &cfg)?;
    let header = [run.provenance(), format!("model_seed: {}", file.seed)];
    let dir = &args.out.out;
    write_file(&dir.join("comparison.csv"), &table.to_csv(&header))?;
    write_file(&dir.join("comparison.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
    print!("{}", table.to_csv(&[]));
    Ok(table)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let config = TrainingConfig {
        seed: args.seed,
        ..Preset::parse(&args.preset)?.config()
    };
    let r = gradient_check(&config)?;
    let pass = r.max_relative_error < GRADCHECK_TOLERANCE;
    println!(
        "params {} max_relative_error {:e} max_absolute_error {:e} worst_index {} {}",
        r.num_params,
        r.max_relative_error,
        r.max_absolute_error,
        r.worst_index,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}
