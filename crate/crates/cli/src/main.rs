use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sleepstack::budget::{budget_report, TARGET_RAM_BYTES};
use sleepstack::bundle::{load_bundle, save_bundle, ModelBundle};
use sleepstack::dataset::{load_nights_dir, read_csv, write_csv, Dataset};
use sleepstack::eval::{cross_validate, render_hypnogram, score, CvConfig, CvReport, Scheme};
use sleepstack::features::{Decimation, Scaler, ScalingMode};
use sleepstack::model::{fit_model, ModelKind, TrainedModel};
use sleepstack::nn::TrainConfig;
use sleepstack::signals::{load_night, ClassMode};
use sleepstack::stacking::{StackConfig, StackModel};
use sleepstack::synth::{gen_corpus, CorpusSpec, PhaseModel};
use sleepstack::{baselines, Error};

const JSON_FORMAT_VERSION: u32 = 1;

#[derive(Parser, Serialize)]
#[command(name = "sleepstack", version, about = "Sleep-phase classification from wrist heart rate")]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for fold and night parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log filter, overridden by RUST_LOG.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic corpus of labelled nights.
    Synth(SynthArgs),
    /// Extract per-epoch features from a directory of nights.
    Features(FeaturesArgs),
    /// Train a model on a feature CSV and write a bundle.
    Train(TrainArgs),
    /// Cross-validate a model kind on a feature CSV.
    Eval(EvalArgs),
    /// Classify the epochs of one night with a trained bundle.
    Infer(InferArgs),
    /// Report the static RAM a model needs on the target device.
    ReportMemory(MemoryArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Phase3,
    Wrn3,
}

impl From<ModeArg> for ClassMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Phase3 => ClassMode::Phase3,
            ModeArg::Wrn3 => ClassMode::Wrn3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScalingArg {
    Global,
    PerSubject,
}

impl From<ScalingArg> for ScalingMode {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Global => ScalingMode::Global,
            ScalingArg::PerSubject => ScalingMode::PerSubject,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DecimationArg {
    Native,
    PerSecond,
}

impl From<DecimationArg> for Decimation {
    fn from(d: DecimationArg) -> Self {
        match d {
            DecimationArg::Native => Decimation::Native,
            DecimationArg::PerSecond => Decimation::PerSecondMean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModelArg {
    Stacking,
    AnnBig,
    BaseAnn,
    Lstm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Stacking => ModelKind::Stacking,
            ModelArg::AnnBig => ModelKind::AnnBig,
            ModelArg::BaseAnn => ModelKind::BaseAnn,
            ModelArg::Lstm => ModelKind::Lstm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SchemeArg {
    Lono,
    Ksubject,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 24)]
    subjects: usize,
    #[arg(long, default_value_t = 31)]
    nights: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FeaturesArgs {
    /// Directory of `.night.csv` files, with or without a manifest.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "phase3")]
    class_mode: ModeArg,
    #[arg(long, value_enum, default_value = "per-second")]
    decimation: DecimationArg,
    /// Also write `<stem>.scaled.csv`, scaled with statistics of all rows.
    #[arg(long, value_enum)]
    scaling: Option<ScalingArg>,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch,
            max_epochs: self.epochs,
            patience: self.patience,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "stacking")]
    model: ModelArg,
    /// Raw feature CSV written by `features`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "phase3")]
    class_mode: ModeArg,
    #[arg(long, value_enum, default_value = "per-subject")]
    scaling: ScalingArg,
    /// Decimation the features were extracted with; stored in the bundle.
    #[arg(long, value_enum, default_value = "per-second")]
    decimation: DecimationArg,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "stacking")]
    model: ModelArg,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "lono")]
    scheme: SchemeArg,
    /// Folds for `--scheme ksubject`.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value = "phase3")]
    class_mode: ModeArg,
    #[arg(long, value_enum, default_value = "per-subject")]
    scaling: ScalingArg,
    /// Do not fit statistics for unseen test subjects from their own features.
    #[arg(long)]
    no_calibration: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Serialize)]
struct InferArgs {
    /// Bundle written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    night: PathBuf,
    /// SVG path; a text strip is written next to it.
    #[arg(long)]
    hypnogram: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct MemoryArgs {
    /// `reference-stack`, a model kind (untrained reference topology) or a bundle path.
    #[arg(long, default_value = "reference-stack")]
    model: String,
    /// Fail with exit code 1 when utilization exceeds this percentage.
    #[arg(long)]
    max_percent: Option<f64>,
    #[arg(long, default_value_t = TARGET_RAM_BYTES)]
    target_bytes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Gate(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = Result<(), Failure>;

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth(a: &SynthArgs, seed: u64) -> CmdResult {
    let spec = CorpusSpec {
        subjects: a.subjects,
        nights: a.nights,
        seed,
        ..CorpusSpec::default()
    };
    let m = gen_corpus(&PhaseModel::default(), &spec, &a.out)?;
    log::info!("wrote {} nights to {}", m.entries.len(), a.out.display());
    Ok(())
}

fn features(a: &FeaturesArgs) -> CmdResult {
    let nights = load_nights_dir(&a.input)?;
    let ds = Dataset::from_nights(&nights, a.class_mode.into(), a.decimation.into())?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    write_csv(&ds, None, &a.out)?;
    log::info!("{} epochs from {} nights -> {}", ds.len(), nights.len(), a.out.display());
    if let Some(s) = a.scaling {
        let scaler = Scaler::fit(&ds.features, &ds.subjects, s.into())?;
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
        let path = a.out.with_file_name(format!("{stem}.scaled.csv"));
        write_csv(&ds, Some(&ds.scaled(&scaler)), &path)?;
        log::info!("scaled features -> {}", path.display());
    }
    Ok(())
}

fn train(a: &TrainArgs, seed: u64) -> CmdResult {
    let mode: ClassMode = a.class_mode.into();
    let ds = read_csv(&a.features, mode)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let cfg = a.train.config(seed);
    log::info!(
        "lr={} batch={} epochs={} patience={}",
        cfg.lr,
        cfg.batch_size,
        cfg.max_epochs,
        cfg.patience
    );
    let scaler = Scaler::fit(&ds.features, &ds.subjects, a.scaling.into())?;
    let model = fit_model(
        a.model.into(),
        &ds.scaled(&scaler),
        &ds.labels,
        &ds.night_ranges(),
        mode,
        &cfg,
        &StackConfig::default(),
    )?;
    log::info!("trained {} with {} parameters", model.kind(), model.param_count());
    save_bundle(&ModelBundle::new(model, scaler, a.decimation.into())?, &a.out)?;
    log::info!("bundle -> {}", a.out.display());
    Ok(())
}

fn print_table(r: &CvReport) {
    println!("{:<8} {:>8} {:>9} {:>8} {:>8}", "class", "support", "accuracy", "prec", "f1");
    for c in &r.per_class {
        println!(
            "{:<8} {:>8} {:>9.4} {:>8.4} {:>8.4}",
            c.phase.name(),
            c.support,
            c.accuracy,
            c.precision,
            c.f1
        );
    }
    println!("UD  {:.4} ± {:.4}", r.ud, r.ud_std);
    println!("UF1 {:.4} ± {:.4}", r.uf1, r.uf1_std);
    println!("confusion (rows = reference, cols = predicted):");
    for row in &r.pooled.confusion.counts {
        println!("  {}", row.iter().map(|v| format!("{v:>7}")).collect::<String>());
    }
}

fn eval(a: &EvalArgs, seed: u64) -> CmdResult {
    let mode: ClassMode = a.class_mode.into();
    let ds = read_csv(&a.features, mode)?;
    let cfg = CvConfig {
        scheme: match a.scheme {
            SchemeArg::Lono => Scheme::Lono,
            SchemeArg::Ksubject => Scheme::KSubject { k: a.k },
        },
        kind: a.model.into(),
        scaling: a.scaling.into(),
        calibrate_unseen: !a.no_calibration,
        leaky_scaler: false,
        train: a.train.config(seed),
        stack: StackConfig::default(),
    };
    let t = &cfg.train;
    log::info!("lr={} batch={} epochs={} patience={}", t.lr, t.batch_size, t.max_epochs, t.patience);
    let report = cross_validate(&ds, &cfg)?;
    write_json(&report, a.out.as_deref())?;
    if a.out.is_some() {
        print_table(&report);
    }
    Ok(())
}

#[derive(Serialize)]
struct EpochPrediction {
    epoch: usize,
    reference: String,
    predicted: String,
    probs: [f32; 3],
}

#[derive(Serialize)]
struct InferOutput {
    format_version: u32,
    model: ModelKind,
    class_mode: ClassMode,
    subject: String,
    night: String,
    ud: f64,
    uf1: f64,
    predictions: Vec<EpochPrediction>,
}

fn infer(a: &InferArgs) -> CmdResult {
    let bundle = load_bundle(&a.model)?;
    let night = load_night(&a.night)?;
    let mode = bundle.manifest.class_mode;
    let ds = Dataset::from_nights(std::slice::from_ref(&night), mode, bundle.manifest.decimation)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let mut scaler = bundle.manifest.scaler.clone();
    if !scaler.knows(&night.subject_id) {
        log::info!("subject {} unseen in training; calibrating from this night", night.subject_id);
        scaler.calibrate(&night.subject_id, &ds.features)?;
    }
    let x = ds.scaled(&scaler);
    let probs = bundle.model.predict_probs(&x, &ds.night_ranges())?;
    let pred: Vec<usize> = probs.iter().map(|p| sleepstack::argmax(p)).collect();
    let report = score(&ds.labels, &pred, mode)?;
    if let Some(path) = &a.hypnogram {
        render_hypnogram(&ds.labels, &pred, mode, path)?;
        log::info!("hypnogram -> {}", path.display());
    }
    let out = InferOutput {
        format_version: JSON_FORMAT_VERSION,
        model: bundle.model.kind(),
        class_mode: mode,
        subject: night.subject_id.clone(),
        night: night.night_id.clone(),
        ud: report.ud,
        uf1: report.uf1,
        predictions: (0..ds.len())
            .map(|i| EpochPrediction {
                epoch: ds.epochs[i],
                reference: mode.phase(ds.labels[i]).name().to_string(),
                predicted: mode.phase(pred[i]).name().to_string(),
                probs: probs[i],
            })
            .collect(),
    };
    write_json(&out, a.out.as_deref())?;
    Ok(())
}

fn reference_model(name: &str, seed: u64) -> Result<Option<TrainedModel>, Error> {
    let mode = ClassMode::Phase3;
    if name == "reference-stack" {
        let s = StackModel::untrained(&StackConfig::default(), mode, seed)?;
        return Ok(Some(TrainedModel::Stack(s)));
    }
    let Ok(kind) = name.parse::<ModelKind>() else {
        return Ok(None);
    };
    Ok(Some(match kind {
        ModelKind::Stacking => TrainedModel::Stack(StackModel::untrained(&StackConfig::default(), mode, seed)?),
        ModelKind::AnnBig => TrainedModel::Dense {
            kind,
            net: baselines::build_ann_big(seed)?,
            class_mode: mode,
        },
        ModelKind::BaseAnn => {
            let s = StackModel::untrained(&StackConfig::default(), mode, seed)?;
            TrainedModel::Dense {
                kind,
                net: s.bases[0].clone(),
                class_mode: mode,
            }
        }
        ModelKind::Lstm => TrainedModel::Lstm {
            net: baselines::LstmNet::reference(seed)?,
            class_mode: mode,
        },
    }))
}

fn report_memory(a: &MemoryArgs, seed: u64) -> CmdResult {
    let model = match reference_model(&a.model, seed)? {
        Some(m) => m,
        None => load_bundle(&a.model)?.model,
    };
    let report = budget_report(&model, a.target_bytes);
    write_json(&report, a.out.as_deref())?;
    if let Some(max) = a.max_percent {
        if report.utilization_percent > max {
            return Err(Failure::Gate(format!(
                "utilization {:.2}% exceeds --max-percent {max}",
                report.utilization_percent
            )));
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Infer(a) => infer(a),
        Command::ReportMemory(a) => report_memory(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[InvalidConfig]: {e}");
            return ExitCode::from(2);
        }
    }
    log::info!(
        "config {}",
        serde_json::to_string(&cli).unwrap_or_else(|_| "<unserializable>".into())
    );
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gate(msg)) => {
            eprintln!("error[GateFailure]: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(if matches!(e, Error::InvalidConfig(_)) { 2 } else { 3 })
        }
    }
}
