//! Batch command-line front end.
//!
//! Settings come from an optional TOML file (`--config`) whose keys mirror
//! [`RunConfig`]; command-line flags override file values. Exit codes: 0 on
//! success, 2 for an invalid configuration, 3 for I/O failures and 4 when
//! training hits a non-finite loss or gradient.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentError, AugmentationPolicy};
use crate::eval::{kfold_run, EvalError};
use crate::image::{GrayImage, ImageError};
use crate::label::GridLabel;
use crate::nn::{io as model_io, ChannelConfig, Model, ModelError};
use crate::rng::{self, tag};
use crate::synth::{generate_dataset, read_manifest, Composition, RenderSpec, SynthError, MANIFEST_FILE};
use crate::train::{self, predict_labels, train_with_progress, TrainConfig, TrainError, TrainSample};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const PREDICTION_HEADER: [&str; 5] = ["path", "record", "cfmt", "student_id", "needs_review"];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn context(self, prefix: impl fmt::Display) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{prefix}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{prefix}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{prefix}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Geometry(_) | SynthError::Parameter(_) | SynthError::UnknownKind(_) | SynthError::Composition { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::InputShape { .. } => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(e) => e.into(),
            TrainError::Synth(e) => e.into(),
            TrainError::Augment(e) => e.into(),
            TrainError::Degenerate { .. } => CliError::Io(e.to_string()),
            _ if e.is_numeric() => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Every setting of a run. Keys of the configuration file mirror these fields;
/// `render`, `network` and `train` are TOML tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threshold: f64,
    /// Dataset size for `gen`.
    pub n: usize,
    /// Correct templates for `gen`; the reference share of `n` when absent.
    pub cfmt: Option<usize>,
    /// Fold count for `kfold`.
    pub k: usize,
    /// Turns augmentation off entirely.
    pub no_augment: bool,
    /// Output directory of `gen`.
    pub dataset: PathBuf,
    /// Training manifest; `<dataset>/manifest.tsv` when absent.
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub model: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
    /// Directory of scans for `predict`.
    pub input: PathBuf,
    pub render: RenderSpec,
    pub network: ChannelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threshold: crate::nn::DEFAULT_THRESHOLD,
            n: 1703,
            cfmt: None,
            k: 5,
            no_augment: false,
            dataset: PathBuf::from("data"),
            manifest: None,
            val_manifest: None,
            model: PathBuf::from("model.mgrd"),
            history: PathBuf::from("history.tsv"),
            report: PathBuf::from("report.csv"),
            input: PathBuf::from("scans"),
            render: RenderSpec::default(),
            network: ChannelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.dataset.join(MANIFEST_FILE))
    }

    /// Training settings with the run-level seed and threshold applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, threshold: self.threshold, ..self.train.clone() }
    }

    pub fn policy(&self) -> Result<AugmentationPolicy, CliError> {
        if self.no_augment {
            Ok(AugmentationPolicy::disabled())
        } else {
            Ok(self.train_config().policy()?)
        }
    }

    pub fn composition(&self) -> Result<Composition, CliError> {
        match self.cfmt {
            None => Ok(Composition::reference(self.n)),
            Some(c) => Ok(Composition::with_cfmt(self.n, c)?),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CliError::Config(format!("threshold {} is outside (0, 1)", self.threshold)));
        }
        self.render.validate()?;
        self.network.validate()?;
        self.train_config().validate()?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "idgrid", version, about = "Student-ID matrix template recognition")]
pub struct Cli {
    /// TOML configuration file; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Reproducible single-context execution (always the case in this build)
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Probability above which a cell counts as marked
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with a manifest
    Gen(GenArgs),
    /// Solve for the augmentation probabilities
    Calibrate(CalibrateArgs),
    /// Train a model on a manifest
    Train(TrainArgs),
    /// K-fold cross-validation on a manifest
    Kfold(KfoldArgs),
    /// Predict every PNG in a directory
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of correctly filled templates
    #[arg(long)]
    pub cfmt: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Target fraction of untouched samples
    #[arg(long = "p-org")]
    pub p_org: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "no-augment")]
    pub no_augment: bool,
    /// Channel counts, e.g. 16,16,32,64
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub channels: Option<Vec<usize>>,
    #[arg(long = "last-channel")]
    pub last_channel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    /// Validation manifest scored after every epoch
    #[arg(long = "val-manifest", value_name = "PATH")]
    pub val_manifest: Option<PathBuf>,
    /// Output model file
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Output history log
    #[arg(long, value_name = "PATH")]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KfoldArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    #[arg(long)]
    pub k: Option<usize>,
    /// Output CSV report
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Directory of PNG scans
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// Output CSV report
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

impl TrainingArgs {
    fn apply(&self, c: &mut RunConfig) -> Result<(), CliError> {
        set(&mut c.manifest, self.manifest.clone().map(Some));
        set(&mut c.train.epochs, self.epochs);
        set(&mut c.train.batch_size, self.batch_size);
        c.no_augment |= self.no_augment;
        if let Some(ch) = &self.channels {
            c.network.channels = ch.as_slice().try_into().map_err(|_| CliError::Config("--channels takes 4 values".into()))?;
        }
        set(&mut c.network.last_channel, self.last_channel);
        Ok(())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// The configuration file (or defaults) with every flag applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        set(&mut c.threshold, self.threshold);
        match &self.command {
            Command::Gen(a) => {
                set(&mut c.n, a.n);
                set(&mut c.cfmt, a.cfmt.map(Some));
                set(&mut c.dataset, a.out.clone());
            }
            Command::Calibrate(a) => set(&mut c.train.p_org, a.p_org),
            Command::Train(a) => {
                a.common.apply(&mut c)?;
                set(&mut c.val_manifest, a.val_manifest.clone().map(Some));
                set(&mut c.model, a.model.clone());
                set(&mut c.history, a.history.clone());
            }
            Command::Kfold(a) => {
                a.common.apply(&mut c)?;
                set(&mut c.k, a.k);
                set(&mut c.report, a.report.clone());
            }
            Command::Predict(a) => {
                set(&mut c.model, a.model.clone());
                set(&mut c.input, a.input.clone());
                set(&mut c.report, a.report.clone());
            }
        }
        Ok(c)
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("idgrid: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = cli.resolve()?;
    config.validate()?;
    match cli.command {
        Command::Gen(_) => cmd_gen(&config),
        Command::Calibrate(_) => cmd_calibrate(&config),
        Command::Train(_) => cmd_train(&config),
        Command::Kfold(_) => cmd_kfold(&config),
        Command::Predict(_) => cmd_predict(&config),
    }
}

/// Renders `n` templates into `dataset` and writes the manifest.
pub fn cmd_gen(config: &RunConfig) -> Result<(), CliError> {
    let composition = config.composition()?;
    let entries = generate_dataset(&config.dataset, config.n, &composition, &config.render, config.seed)?;
    println!(
        "wrote {} samples to {}: {} cfmt, {} multi-mark, {} missing-column, {} crossed-out",
        entries.len(),
        config.dataset.display(),
        composition.cfmt,
        composition.multi_mark,
        composition.missing_column,
        composition.crossed_out
    );
    Ok(())
}

/// Prints the calibrated augmentation policy.
pub fn cmd_calibrate(config: &RunConfig) -> Result<(), CliError> {
    let p = config.train_config().policy()?;
    println!("p_org\t{}", p.p_org);
    println!("mu\t{:.6}", p.mu);
    println!("p_rt\t{:.6}", p.p_rt);
    println!("p_sh\t{:.6}", p.p_sh);
    println!("p_sc\t{:.6}", p.p_sc);
    println!("residual\t{:.3e}", p.residual());
    Ok(())
}

/// Reads a manifest and preprocesses every image it lists.
pub fn load_samples(manifest: &Path) -> Result<Vec<TrainSample>, CliError> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|entry| {
            let path = base.join(&entry.path);
            let image = GrayImage::load_png(&path)?;
            TrainSample::new(&image, entry.label).map_err(|e| CliError::from(e).context(path.display()))
        })
        .collect()
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{}: no such file", path.display())))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Trains on the manifest, then writes the model file and the history log.
pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let manifest = config.manifest_path();
    require_file(&manifest)?;
    if let Some(v) = &config.val_manifest {
        require_file(v)?;
    }
    let policy = config.policy()?;
    let train_set = load_samples(&manifest)?;
    let val_set = config.val_manifest.as_deref().map(load_samples).transpose()?;
    let model = Model::build(config.network, config.seed)?;
    println!("{} samples, {} parameters", train_set.len(), model.param_count());
    println!("{}", train::HISTORY_HEADER);
    let (model, history) =
        train_with_progress(model, &train_set, val_set.as_deref(), &config.train_config(), &policy, |e| println!("{e}"))?;
    write_file(&config.history, &history.to_log())?;
    if let Some(dir) = config.model.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    model_io::save(&model, &config.model)?;
    println!("model written to {}", config.model.display());
    Ok(())
}

/// K-fold cross-validation; writes the per-fold and mean CSV report.
pub fn cmd_kfold(config: &RunConfig) -> Result<(), CliError> {
    if config.k < 2 {
        return Err(CliError::Config(format!("k must be at least 2, got {}", config.k)));
    }
    let manifest = config.manifest_path();
    require_file(&manifest)?;
    let policy = config.policy()?;
    let samples = load_samples(&manifest)?;
    let truth: Vec<GridLabel> = samples.iter().map(|s| s.label).collect();
    let base = config.train_config();

    let mut failure: Option<CliError> = None;
    let result = kfold_run(&truth, config.k, config.seed, |fold, train_idx, val_idx| {
        let fold_seed = rng::derive_seed(config.seed, tag::FOLDS, &[fold as u64]);
        let outcome = (|| -> Result<Vec<GridLabel>, CliError> {
            let train_set: Vec<TrainSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
            let val_set: Vec<TrainSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
            let fold_config = TrainConfig { seed: fold_seed, ..base.clone() };
            let model = Model::build(config.network, fold_seed)?;
            let (model, _) = train_with_progress(model, &train_set, None, &fold_config, &policy, |e| {
                println!("fold {fold}\t{e}");
            })?;
            Ok(predict_labels(&model, &val_set, config.threshold)?)
        })();
        outcome.map_err(|e| {
            let msg = e.to_string();
            failure = Some(e.context(format!("fold {fold}")));
            msg
        })
    });
    let report = match result {
        Ok(r) => r,
        Err(e) => return Err(failure.take().unwrap_or_else(|| e.into())),
    };
    let csv = report.to_csv();
    write_file(&config.report, &csv)?;
    print!("{csv}");
    Ok(())
}

/// One row of the prediction report.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub path: PathBuf,
    pub label: GridLabel,
}

impl PredictionRow {
    pub fn record(&self) -> String {
        self.label.to_text().to_string()
    }

    pub fn cfmt(&self) -> bool {
        self.label.is_cfmt()
    }

    pub fn student_id(&self) -> String {
        self.label.to_student_id().map(|id| id.to_string()).unwrap_or_default()
    }

    pub fn needs_review(&self) -> bool {
        !self.cfmt()
    }
}

/// PNG files directly inside `dir`, in lexicographic path order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| io_error(dir, e)))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")));
    paths.sort();
    Ok(paths)
}

pub fn predict_directory(model: &Model<f32>, dir: &Path, threshold: f64) -> Result<Vec<PredictionRow>, CliError> {
    let paths = list_images(dir)?;
    let inputs = paths
        .iter()
        .map(|p| {
            let image = GrayImage::load_png(p)?;
            train::preprocess(&image).map_err(|e| CliError::from(e).context(p.display()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let labels = train::predict_inputs(model, inputs.iter(), threshold)?;
    Ok(paths.into_iter().zip(labels).map(|(path, label)| PredictionRow { path, label }).collect())
}

pub fn prediction_csv(rows: &[PredictionRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PREDICTION_HEADER).expect("in-memory write");
    for r in rows {
        let path = r.path.display().to_string();
        w.write_record([path, r.record(), r.cfmt().to_string(), r.student_id(), r.needs_review().to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Predicts every scan in `input` and writes the CSV report.
pub fn cmd_predict(config: &RunConfig) -> Result<(), CliError> {
    require_file(&config.model)?;
    if !config.input.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", config.input.display())));
    }
    let model = model_io::load(&config.model)?;
    let rows = predict_directory(&model, &config.input, config.threshold)?;
    write_file(&config.report, &prediction_csv(&rows))?;
    let review = rows.iter().filter(|r| r.needs_review()).count();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{} scans, {review} flagged for review, report at {}", rows.len(), config.report.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("idgrid").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\nn = 50\nthreshold = 0.4\n[train]\nepochs = 7\nbatch_size = 4\n[network]\nchannels = [2, 2, 4, 8]\nlast_channel = 2\n").unwrap();
        let p = path.to_str().unwrap();
        let c = parse(&["--config", p, "gen", "--n", "20"]).resolve().unwrap();
        assert_eq!((c.seed, c.n, c.threshold), (3, 20, 0.4));
        assert_eq!(c.network, ChannelConfig::TINY);
        let c = parse(&["train", "--config", p, "--epochs", "2", "--seed", "9", "--no-augment"]).resolve().unwrap();
        assert_eq!((c.train.epochs, c.train.batch_size, c.seed), (2, 4, 9));
        assert_eq!(c.train_config().seed, 9);
        assert!(c.policy().unwrap().is_identity());
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let c = RunConfig { seed: 11, cfmt: Some(4), ..Default::default() };
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(matches!(RunConfig::from_toml("sede = 1"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nseed = 1"), Err(CliError::Config(_))));
    }

    #[test]
    fn error_classes() {
        assert_eq!(CliError::from(SynthError::Composition { n: 1, sum: 2 }).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::from(ModelError::BadMagic).exit_code(), EXIT_IO);
        assert_eq!(CliError::from(TrainError::NonFiniteLoss { epoch: 0, batch: 0 }).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::from(TrainError::Config("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::from(TrainError::Degenerate { width: 1, height: 1 }).exit_code(), EXIT_IO);
    }

    #[test]
    fn prediction_rows() {
        let id: crate::label::StudentId = "0123456789".parse().unwrap();
        let good = PredictionRow { path: "a.png".into(), label: GridLabel::from_student_id(&id) };
        let mut bad_label = good.label;
        bad_label.clear_column(3);
        let bad = PredictionRow { path: "b.png".into(), label: bad_label };
        assert_eq!(
            prediction_csv(&[good, bad]),
            "path,record,cfmt,student_id,needs_review\na.png,0123456789,true,0123456789,false\nb.png,012X456789,false,,true\n"
        );
        assert_eq!(prediction_csv(&[]), "path,record,cfmt,student_id,needs_review\n");
    }
}
