//! Train, evaluate and ablate on whole datasets, the way the CLI does.

use xmodal_core::metrics::MacroAveraging;
use xmodal_core::model::{
    aligned_set, evaluate, fit_method, fit_refinement, manifold_metrics, pair_threshold,
    AlignmentModel, EvalOptions, EvalReport, ManifoldMetrics,
};
use xmodal_core::{split_dataset, AblationFlags, Dataset, DistanceMetric, Domain, EpochRecord};

use crate::checkpoint::{
    dataset_fingerprint, run_fingerprint, Checkpoint, RunSettings, SplitSettings, FORMAT_VERSION,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Splits off the test part, then the validation part from what remains.
pub fn split_three(ds: &Dataset, s: &SplitSettings) -> Result<Splits> {
    if !(s.validation_fraction >= 0.0 && s.validation_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "validation fraction must be in [0, 1), got {}",
            s.validation_fraction
        )));
    }
    let (rest, test) = split_dataset(ds, s.test_fraction, s.seed)?;
    let (train, validation) = if s.validation_fraction > 0.0 {
        split_dataset(&rest, s.validation_fraction, s.seed)?
    } else {
        let empty = rest.subset(&[]);
        (rest, empty)
    };
    Ok(Splits {
        train,
        validation,
        test,
    })
}

/// Trains the configured method and fits its refinement and relevance threshold.
pub fn train(ds: &Dataset, settings: &RunSettings) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let method = settings.method;
    let train_cfg = method.configure(&settings.train);
    train_cfg.validate()?;
    if method.needs_labels(&train_cfg) && !ds.is_labeled() {
        return Err(Error::Core(xmodal_core::Error::MissingLabels));
    }
    let splits = split_three(ds, &settings.split)?;
    let fitted = fit_method(
        method,
        &splits.train,
        &splits.validation,
        &train_cfg,
        settings.cca.into(),
    )?;
    let transform = fit_refinement(&fitted.model, &splits.train, settings.refinement)?;
    let metric = train_cfg.metric;
    let threshold = pair_threshold(
        &aligned_set(&fitted.model, &transform, &splits.train)?,
        metric,
    )?;

    let mut stored = settings.clone();
    stored.train = train_cfg;
    let data_fp = dataset_fingerprint(ds);
    let best_epoch = best_epoch(&fitted.history);
    let ckpt = Checkpoint {
        format: FORMAT_VERSION,
        fingerprint: run_fingerprint(&stored, &data_fp),
        settings: stored,
        metric,
        dataset_fingerprint: data_fp,
        threshold,
        best_epoch,
        correlations: fitted.correlations,
        transform,
        model: fitted.model,
    };
    Ok((ckpt, fitted.history))
}

fn best_epoch(history: &[EpochRecord]) -> usize {
    let mut best = (0, f64::INFINITY);
    for r in history {
        if let Some(v) = r.val_loss {
            if v < best.1 {
                best = (r.epoch, v);
            }
        }
    }
    if best.1.is_finite() {
        best.0
    } else {
        history.last().map_or(0, |r| r.epoch)
    }
}

/// Which records of the given dataset to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitChoice {
    /// Every record.
    #[default]
    All,
    /// The training part (validation excluded) of the checkpoint's own split.
    Train,
    /// The held-out part of the checkpoint's own split.
    Test,
}

impl SplitChoice {
    pub fn name(self) -> &'static str {
        match self {
            SplitChoice::All => "all",
            SplitChoice::Train => "train",
            SplitChoice::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub split: SplitChoice,
    /// Overrides the checkpoint's metric.
    pub metric: Option<DistanceMetric>,
    pub k: usize,
    pub dc_samples: usize,
    pub dc_seed: u64,
    pub averaging: MacroAveraging,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            split: SplitChoice::All,
            metric: None,
            k: o.k,
            dc_samples: o.dc_samples,
            dc_seed: o.dc_seed,
            averaging: o.averaging,
        }
    }
}

impl EvalSettings {
    pub fn options(&self, ckpt: &Checkpoint) -> EvalOptions {
        EvalOptions {
            metric: self.metric.unwrap_or(ckpt.metric),
            k: self.k,
            dc_samples: self.dc_samples,
            dc_seed: self.dc_seed,
            averaging: self.averaging,
        }
    }
}

/// Fails unless the dataset's dimensions match the checkpoint's model.
pub fn check_dims(model: &AlignmentModel, ds: &Dataset) -> Result<()> {
    for (domain, name) in [(Domain::Vision, "vision"), (Domain::Language, "language")] {
        let (want, got) = (model.input_dim(domain), ds.dim(domain));
        if want != got {
            return Err(Error::Data(format!(
                "{name} dimension mismatch: checkpoint expects {want}, dataset has {got}"
            )));
        }
    }
    Ok(())
}

fn require_training_data(ckpt: &Checkpoint, ds: &Dataset, why: &str) -> Result<()> {
    if dataset_fingerprint(ds) != ckpt.dataset_fingerprint {
        return Err(Error::Data(format!(
            "{why} needs the dataset the checkpoint was trained on (fingerprint {})",
            ckpt.dataset_fingerprint
        )));
    }
    Ok(())
}

/// The records selected by `choice`.
pub fn select(ckpt: &Checkpoint, ds: &Dataset, choice: SplitChoice) -> Result<Dataset> {
    check_dims(&ckpt.model, ds)?;
    match choice {
        SplitChoice::All => Ok(ds.clone()),
        SplitChoice::Train | SplitChoice::Test => {
            require_training_data(ckpt, ds, "selecting a split")?;
            let s = split_three(ds, &ckpt.settings.split)?;
            Ok(if choice == SplitChoice::Train {
                s.train
            } else {
                s.test
            })
        }
    }
}

pub fn eval(ckpt: &Checkpoint, ds: &Dataset, settings: &EvalSettings) -> Result<EvalReport> {
    let data = select(ckpt, ds, settings.split)?;
    let ts = aligned_set(&ckpt.model, &ckpt.transform, &data)?;
    Ok(evaluate(
        &ts,
        ckpt.threshold,
        &settings.options(ckpt),
        &ckpt.fingerprint,
    )?)
}

pub const ABLATIONS: [(&str, AblationFlags); 4] = [
    ("full", AblationFlags::ALL),
    (
        "no-translation",
        AblationFlags {
            translation: false,
            scaling: true,
            rotation: true,
        },
    ),
    (
        "no-scaling",
        AblationFlags {
            translation: true,
            scaling: false,
            rotation: true,
        },
    ),
    (
        "no-rotation",
        AblationFlags {
            translation: true,
            scaling: true,
            rotation: false,
        },
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
    pub metrics: ManifoldMetrics,
}

/// Manifold metrics with the refinement refit under `flags`; the heads are untouched.
pub fn ablation_variant(
    ckpt: &Checkpoint,
    ds: &Dataset,
    flags: AblationFlags,
    settings: &EvalSettings,
) -> Result<ManifoldMetrics> {
    check_dims(&ckpt.model, ds)?;
    require_training_data(ckpt, ds, "refitting the refinement")?;
    let splits = split_three(ds, &ckpt.settings.split)?;
    let transform = fit_refinement(&ckpt.model, &splits.train, flags)?;
    let data = select(ckpt, ds, settings.split)?;
    let ts = aligned_set(&ckpt.model, &transform, &data)?;
    Ok(manifold_metrics(&ts, &settings.options(ckpt))?)
}

/// The four single-component ablation rows.
pub fn ablate(
    ckpt: &Checkpoint,
    ds: &Dataset,
    settings: &EvalSettings,
) -> Result<Vec<AblationRow>> {
    ABLATIONS
        .iter()
        .map(|&(name, flags)| {
            Ok(AblationRow {
                name: name.into(),
                flags,
                metrics: ablation_variant(ckpt, ds, flags, settings)?,
            })
        })
        .collect()
}
