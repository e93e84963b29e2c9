//! The `xmodal` command line.
//!
//! Every flag may also be given in a TOML file passed with `--config`, using
//! the flag name with underscores (`embed_dim = 32`). Flags win over the file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use xmodal_core::metrics::MacroAveraging;
use xmodal_core::model::Method;
use xmodal_core::synth::{generate, Nonlinearity, SynthConfig};
use xmodal_core::{AblationFlags, Dataset, DistanceMetric, TrainMode};

use crate::checkpoint::{Checkpoint, RunSettings};
use crate::error::{Error, Result};
use crate::io::{load_dataset, save_dataset, save_history, write_file};
use crate::pipeline::{self, EvalSettings, SplitChoice};
use crate::report::{ablation_csv, auc_csv, dc_csv, format_report, ReportContext};

#[derive(Debug, Parser)]
#[command(
    name = "xmodal",
    version,
    about = "Align paired vision and language embeddings into one metric space"
)]
pub struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    Synth(SynthArgs),
    /// Train an alignment method and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Re-score with each refinement component disabled in turn.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Triplet,
    TripletEuclidean,
    TripletUnsupervised,
    CosineBaseline,
    Cca,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Triplet => Method::Triplet,
            MethodArg::TripletEuclidean => Method::TripletEuclidean,
            MethodArg::TripletUnsupervised => Method::TripletUnsupervised,
            MethodArg::CosineBaseline => Method::CosineBaseline,
            MethodArg::Cca => Method::Cca,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => DistanceMetric::Cosine,
            MetricArg::Euclidean => DistanceMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    All,
    Train,
    Test,
}

impl From<SplitArg> for SplitChoice {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::All => SplitChoice::All,
            SplitArg::Train => SplitChoice::Train,
            SplitArg::Test => SplitChoice::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingArg {
    PerTask,
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityArg {
    Linear,
    Tanh,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub dim_vision: Option<usize>,
    #[arg(long)]
    pub dim_language: Option<usize>,
    /// Radius of the sphere holding the class centres.
    #[arg(long)]
    pub separation: Option<f64>,
    /// Standard deviation of the latent noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub nonlinearity: Option<NonlinearityArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop class labels from the written records.
    #[arg(long)]
    pub unlabeled: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch losses; defaults to the checkpoint path with a `.history.jsonl` extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Triplet distance (the Euclidean method always uses euclidean).
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Share of the training part held out for early stopping (0 disables it).
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub triplets_per_epoch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of farthest descriptions used as unsupervised negatives.
    #[arg(long)]
    pub negative_quantile: Option<f64>,
    #[arg(long)]
    pub cca_dim: Option<usize>,
    #[arg(long)]
    pub cca_ridge: Option<f64>,
    #[command(flatten)]
    pub refinement: RefinementArgs,
}

#[derive(Debug, Args)]
pub struct RefinementArgs {
    /// Skip the refinement entirely.
    #[arg(long)]
    pub no_procrustes: bool,
    #[arg(long)]
    pub no_translation: bool,
    #[arg(long)]
    pub no_scaling: bool,
    #[arg(long)]
    pub no_rotation: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Records to score: all of them, or one part of the checkpoint's own split.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Overrides the metric stored in the checkpoint.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dc_samples: Option<usize>,
    /// Seed for distance-correlation sampling.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Directory for report.txt, auc.csv and dc.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub averaging: Option<AveragingArg>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// CSV file for the ablation table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Values read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub method: Option<MethodArg>,
    pub metric: Option<MetricArg>,
    pub mode: Option<ModeArg>,
    pub embed_dim: Option<usize>,
    pub margin: Option<f64>,
    pub seed: Option<u64>,
    pub test_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub triplets_per_epoch: Option<usize>,
    pub patience: Option<usize>,
    pub lr: Option<f64>,
    pub negative_quantile: Option<f64>,
    pub cca_dim: Option<usize>,
    pub cca_ridge: Option<f64>,
    pub no_procrustes: Option<bool>,
    pub no_translation: Option<bool>,
    pub no_scaling: Option<bool>,
    pub no_rotation: Option<bool>,
    pub split: Option<SplitArg>,
    pub k: Option<usize>,
    pub dc_samples: Option<usize>,
    pub averaging: Option<AveragingArg>,
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub latent_dim: Option<usize>,
    pub dim_vision: Option<usize>,
    pub dim_language: Option<usize>,
    pub separation: Option<f64>,
    pub noise: Option<f64>,
    pub nonlinearity: Option<NonlinearityArg>,
    pub unlabeled: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_file(path)?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn required(flag: Option<PathBuf>, file: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(file)
        .ok_or_else(|| Error::Usage(format!("missing required --{name}")))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; returns what it prints on success.
pub fn execute(cli: Cli) -> Result<String> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a, file),
        Command::Train(a) => train(a, file),
        Command::Eval(a) => eval(a, file),
        Command::Ablate(a) => ablate(a, file),
    }
}

pub fn synth_config(a: &SynthArgs, f: &FileConfig) -> SynthConfig {
    let d = SynthConfig::default();
    let nonlinearity = match pick(a.nonlinearity, f.nonlinearity, NonlinearityArg::Tanh) {
        NonlinearityArg::Linear => Nonlinearity::Linear,
        NonlinearityArg::Tanh => Nonlinearity::Tanh,
    };
    SynthConfig {
        n_classes: pick(a.classes, f.classes, d.n_classes),
        per_class: pick(a.per_class, f.per_class, d.per_class),
        latent_dim: pick(a.latent_dim, f.latent_dim, d.latent_dim),
        dim_vision: pick(a.dim_vision, f.dim_vision, d.dim_vision),
        dim_language: pick(a.dim_language, f.dim_language, d.dim_language),
        class_separation: pick(a.separation, f.separation, d.class_separation),
        noise_sigma: pick(a.noise, f.noise, d.noise_sigma),
        nonlinearity,
        seed: pick(a.seed, f.seed, d.seed),
    }
}

fn synth(a: SynthArgs, f: FileConfig) -> Result<String> {
    let out = required(a.out.clone(), f.out.clone(), "out")?;
    let cfg = synth_config(&a, &f);
    cfg.validate()?;
    let mut ds = generate(&cfg)?;
    if a.unlabeled || f.unlabeled.unwrap_or(false) {
        let records = ds
            .into_records()
            .into_iter()
            .map(|mut r| {
                r.class_label = None;
                r
            })
            .collect();
        ds = Dataset::new(records)?;
    }
    save_dataset(&out, &ds)?;
    Ok(format!("records = {}\nout = {}\n", ds.len(), out.display()))
}

pub fn run_settings(a: &TrainArgs, f: &FileConfig) -> RunSettings {
    let d = RunSettings::default();
    let mut s = d.clone();
    s.method = pick(a.method, f.method, MethodArg::Triplet).into();
    let t = &mut s.train;
    t.metric = pick(a.metric, f.metric, MetricArg::Cosine).into();
    t.mode = match pick(a.mode, f.mode, ModeArg::Supervised) {
        ModeArg::Supervised => TrainMode::Supervised,
        ModeArg::Unsupervised => TrainMode::Unsupervised,
    };
    t.embed_dim = pick(a.embed_dim, f.embed_dim, d.train.embed_dim);
    t.margin = pick(a.margin, f.margin, d.train.margin);
    t.seed = pick(a.seed, f.seed, d.train.seed);
    t.max_epochs = pick(a.epochs, f.epochs, d.train.max_epochs);
    t.batch_size = pick(a.batch_size, f.batch_size, d.train.batch_size);
    t.triplets_per_epoch = a
        .triplets_per_epoch
        .or(f.triplets_per_epoch)
        .or(d.train.triplets_per_epoch);
    t.patience = pick(a.patience, f.patience, d.train.patience);
    t.adam.learning_rate = pick(a.lr, f.lr, d.train.adam.learning_rate);
    t.negative_quantile = pick(
        a.negative_quantile,
        f.negative_quantile,
        d.train.negative_quantile,
    );
    s.cca.dim = a.cca_dim.or(f.cca_dim).or(d.cca.dim);
    s.cca.ridge = pick(a.cca_ridge, f.cca_ridge, d.cca.ridge);
    s.split.test_fraction = pick(a.test_fraction, f.test_fraction, d.split.test_fraction);
    s.split.validation_fraction = pick(a.val_fraction, f.val_fraction, d.split.validation_fraction);
    s.split.seed = s.train.seed;
    let r = &a.refinement;
    let on = |flag: bool, file: Option<bool>| !(flag || file.unwrap_or(false));
    s.refinement = if !on(r.no_procrustes, f.no_procrustes) {
        AblationFlags::NONE
    } else {
        AblationFlags {
            translation: on(r.no_translation, f.no_translation),
            scaling: on(r.no_scaling, f.no_scaling),
            rotation: on(r.no_rotation, f.no_rotation),
        }
    };
    s
}

fn train(a: TrainArgs, f: FileConfig) -> Result<String> {
    let dataset = required(a.dataset.clone(), f.dataset.clone(), "dataset")?;
    let out = required(a.out.clone(), f.out.clone(), "out")?;
    let history_path = a
        .history
        .clone()
        .or(f.history.clone())
        .unwrap_or_else(|| out.with_extension("history.jsonl"));
    let settings = run_settings(&a, &f);
    let ds = load_dataset(&dataset)?;
    let (ckpt, history) = pipeline::train(&ds, &settings)?;
    ckpt.save(&out)?;
    save_history(&history_path, &history)?;
    Ok(format!(
        "method = {}\nepochs = {}\nbest_epoch = {}\nthreshold = {}\nfingerprint = {}\ncheckpoint = {}\nhistory = {}\n",
        ckpt.settings.method,
        history.len(),
        ckpt.best_epoch,
        ckpt.threshold,
        ckpt.fingerprint,
        out.display(),
        history_path.display()
    ))
}

fn eval_settings(s: &ScoreArgs, f: &FileConfig, averaging: Option<AveragingArg>) -> EvalSettings {
    let d = EvalSettings::default();
    EvalSettings {
        split: pick(s.split, f.split, SplitArg::All).into(),
        metric: s.metric.or(f.metric).map(Into::into),
        k: pick(s.k, f.k, d.k),
        dc_samples: pick(s.dc_samples, f.dc_samples, d.dc_samples),
        dc_seed: pick(s.seed, f.seed, d.dc_seed),
        averaging: match averaging.or(f.averaging) {
            Some(AveragingArg::PerClass) => MacroAveraging::PerClass,
            Some(AveragingArg::PerTask) => MacroAveraging::PerTask,
            None => d.averaging,
        },
    }
}

fn load_inputs(s: &ScoreArgs, f: &FileConfig) -> Result<(Checkpoint, Dataset)> {
    let ckpt_path = required(s.checkpoint.clone(), f.checkpoint.clone(), "checkpoint")?;
    let data_path = required(s.dataset.clone(), f.dataset.clone(), "dataset")?;
    Ok((Checkpoint::load(ckpt_path)?, load_dataset(data_path)?))
}

fn eval(a: EvalArgs, f: FileConfig) -> Result<String> {
    let (ckpt, ds) = load_inputs(&a.score, &f)?;
    let settings = eval_settings(&a.score, &f, a.averaging);
    let report = pipeline::eval(&ckpt, &ds, &settings)?;
    let options = settings.options(&ckpt);
    let pairs = pipeline::select(&ckpt, &ds, settings.split)?.len();
    let text = format_report(
        &report,
        &ReportContext {
            method: ckpt.settings.method.name(),
            split: settings.split,
            pairs,
            options: &options,
        },
    );
    if let Some(dir) = a.out.clone().or(f.out.clone()) {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join("report.txt"), text.as_bytes())?;
        write_file(&dir.join("auc.csv"), auc_csv(&report).as_bytes())?;
        write_file(&dir.join("dc.csv"), dc_csv(&report).as_bytes())?;
    }
    Ok(text)
}

fn ablate(a: AblateArgs, f: FileConfig) -> Result<String> {
    let (ckpt, ds) = load_inputs(&a.score, &f)?;
    let settings = eval_settings(&a.score, &f, None);
    let rows = pipeline::ablate(&ckpt, &ds, &settings)?;
    let csv = ablation_csv(&rows);
    if let Some(path) = a.out.clone().or(f.out.clone()) {
        write_file(&path, csv.as_bytes())?;
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("xmodal").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file() {
        let Command::Train(a) = parse(&["train", "--embed-dim", "16", "--no-scaling"]).command
        else {
            panic!()
        };
        let file: FileConfig =
            toml::from_str("embed_dim = 8\nmargin = 0.2\nmethod = \"cca\"").unwrap();
        let s = run_settings(&a, &file);
        assert_eq!(s.train.embed_dim, 16);
        assert_eq!(s.train.margin, 0.2);
        assert_eq!(s.method, Method::Cca);
        assert_eq!(
            s.refinement,
            AblationFlags {
                translation: true,
                scaling: false,
                rotation: true
            }
        );
    }

    #[test]
    fn no_procrustes_disables_everything() {
        let Command::Train(a) = parse(&["train", "--no-procrustes"]).command else {
            panic!()
        };
        assert_eq!(
            run_settings(&a, &FileConfig::default()).refinement,
            AblationFlags::NONE
        );
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        assert!(toml::from_str::<FileConfig>("embed_dimension = 3").is_err());
    }

    #[test]
    fn bad_values_fail_to_parse() {
        let bad = [
            vec!["train", "--metric", "manhattan"],
            vec!["train", "--embed-dim", "-3"],
            vec!["synth", "--classes", "five"],
            vec!["frobnicate"],
        ];
        for args in bad {
            let r = Cli::try_parse_from(std::iter::once("xmodal").chain(args.iter().copied()));
            assert_eq!(r.unwrap_err().exit_code(), 2, "{args:?}");
        }
    }
}
