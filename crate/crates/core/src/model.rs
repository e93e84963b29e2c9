//! Method-agnostic alignment models and the evaluation pipeline.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::baselines::{
    default_cca_dim, domain_matrix, fit_cca, train_cosine_baseline, LinearMap, DEFAULT_CCA_RIDGE,
};
use crate::dataset::{Dataset, Domain};
use crate::distance::{distance, DistanceMetric};
use crate::error::{Error, Result};
use crate::metrics::{
    compute_threshold, distance_correlation, grounded_language_eval, knn_accuracy,
    mean_reciprocal_rank, AlignedItem, AlignedTestSet, Directional, DistanceSample, MacroAveraging,
    DEFAULT_DC_SAMPLES, DEFAULT_KNN_K,
};
use crate::procrustes::{fit_procrustes, AblationFlags, ProcrustesTransform};
use crate::training::{EpochRecord, HeadPair, TrainConfig, TrainMode};

/// The alignment methods this crate can fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    Triplet,
    TripletEuclidean,
    TripletUnsupervised,
    CosineBaseline,
    Cca,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Triplet,
        Method::TripletEuclidean,
        Method::TripletUnsupervised,
        Method::CosineBaseline,
        Method::Cca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Triplet => "triplet",
            Method::TripletEuclidean => "triplet-euclidean",
            Method::TripletUnsupervised => "triplet-unsupervised",
            Method::CosineBaseline => "cosine-baseline",
            Method::Cca => "cca",
        }
    }

    /// Applies the method's fixed choices (metric, triplet mode) to a training config.
    pub fn configure(self, cfg: &TrainConfig) -> TrainConfig {
        let mut cfg = cfg.clone();
        match self {
            Method::TripletEuclidean => cfg.metric = DistanceMetric::Euclidean,
            Method::TripletUnsupervised => cfg.mode = TrainMode::Unsupervised,
            Method::CosineBaseline => cfg.metric = DistanceMetric::Cosine,
            Method::Triplet | Method::Cca => {}
        }
        cfg
    }

    /// True when the method needs class labels to train.
    pub fn needs_labels(self, cfg: &TrainConfig) -> bool {
        matches!(self, Method::Triplet | Method::TripletEuclidean)
            && cfg.mode == TrainMode::Supervised
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown method `{s}`")))
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Learned alignment functions for both domains.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum AlignmentModel {
    Heads(HeadPair),
    Linear {
        vision: LinearMap,
        language: LinearMap,
    },
}

impl AlignmentModel {
    pub fn input_dim(&self, domain: Domain) -> usize {
        match (self, domain) {
            (AlignmentModel::Heads(h), d) => h.head(d).in_dim,
            (AlignmentModel::Linear { vision, .. }, Domain::Vision) => vision.input_dim(),
            (AlignmentModel::Linear { language, .. }, Domain::Language) => language.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            AlignmentModel::Heads(h) => h.vision.out_dim,
            AlignmentModel::Linear { vision, .. } => vision.output_dim(),
        }
    }

    pub fn embed(&self, x: &[f64], domain: Domain) -> Result<Vec<f64>> {
        match (self, domain) {
            (AlignmentModel::Heads(h), d) => h.embed(x, d),
            (AlignmentModel::Linear { vision, .. }, Domain::Vision) => vision.apply(x),
            (AlignmentModel::Linear { language, .. }, Domain::Language) => language.apply(x),
        }
    }

    /// Checks that a dataset's dimensions match the model inputs.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        for domain in [Domain::Vision, Domain::Language] {
            if ds.dim(domain) != self.input_dim(domain) {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim(domain),
                    actual: ds.dim(domain),
                });
            }
        }
        Ok(())
    }

    /// Embeds every record; rows are paired across the two matrices.
    pub fn embed_dataset(&self, ds: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_dataset(ds)?;
        let m = self.output_dim();
        let mut ev = DMatrix::zeros(ds.len(), m);
        let mut el = DMatrix::zeros(ds.len(), m);
        for i in 0..ds.len() {
            let v = self.embed(ds.vector(i, Domain::Vision), Domain::Vision)?;
            let l = self.embed(ds.vector(i, Domain::Language), Domain::Language)?;
            ev.row_mut(i).copy_from_slice(&v);
            el.row_mut(i).copy_from_slice(&l);
        }
        Ok((ev, el))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: AlignmentModel,
    pub history: Vec<EpochRecord>,
    /// Canonical correlations, for CCA.
    pub correlations: Vec<f64>,
}

/// CCA options; `dim = None` picks [`default_cca_dim`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaOptions {
    pub dim: Option<usize>,
    pub ridge: f64,
}

impl Default for CcaOptions {
    fn default() -> Self {
        Self {
            dim: None,
            ridge: DEFAULT_CCA_RIDGE,
        }
    }
}

/// Fits `method` on the training split.
pub fn fit_method(
    method: Method,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    cca: CcaOptions,
) -> Result<FittedModel> {
    let cfg = method.configure(cfg);
    match method {
        Method::Triplet | Method::TripletEuclidean | Method::TripletUnsupervised => {
            let out = crate::triplet::train(train, val, &cfg)?;
            Ok(FittedModel {
                model: AlignmentModel::Heads(out.heads),
                history: out.history,
                correlations: Vec::new(),
            })
        }
        Method::CosineBaseline => {
            let out = train_cosine_baseline(train, val, &cfg)?;
            Ok(FittedModel {
                model: AlignmentModel::Heads(out.heads),
                history: out.history,
                correlations: Vec::new(),
            })
        }
        Method::Cca => {
            let k = cca.dim.unwrap_or_else(|| {
                default_cca_dim(train.len(), train.dim_vision(), train.dim_language())
            });
            let fit = fit_cca(
                &domain_matrix(train, Domain::Vision),
                &domain_matrix(train, Domain::Language),
                k,
                cca.ridge,
            )?;
            Ok(FittedModel {
                model: AlignmentModel::Linear {
                    vision: fit.vision,
                    language: fit.language,
                },
                history: Vec::new(),
                correlations: fit.correlations,
            })
        }
    }
}

/// Fits the refinement on training embeddings; all flags off yields the identity.
pub fn fit_refinement(
    model: &AlignmentModel,
    train: &Dataset,
    flags: AblationFlags,
) -> Result<ProcrustesTransform> {
    if flags == AblationFlags::NONE {
        return Ok(ProcrustesTransform::identity(model.output_dim()));
    }
    let (ev, el) = model.embed_dataset(train)?;
    fit_procrustes(&ev, &el, flags)
}

/// Embeds and aligns a dataset. Unlabeled records use their pair_id as class.
pub fn aligned_set(
    model: &AlignmentModel,
    transform: &ProcrustesTransform,
    ds: &Dataset,
) -> Result<AlignedTestSet> {
    model.check_dataset(ds)?;
    let items = ds
        .records()
        .iter()
        .map(|r| {
            Ok(AlignedItem {
                pair_id: r.pair_id.clone(),
                class_label: r.class_label.clone().unwrap_or_else(|| r.pair_id.clone()),
                vision: transform.align_vision(&model.embed(&r.vision, Domain::Vision)?)?,
                language: transform.align_language(&model.embed(&r.language, Domain::Language)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AlignedTestSet::new(items)
}

/// Relevance threshold from the aligned training pairs.
pub fn pair_threshold(aligned_train: &AlignedTestSet, metric: DistanceMetric) -> Result<f64> {
    let d = aligned_train
        .items()
        .iter()
        .map(|it| distance(&it.language, &it.vision, metric))
        .collect::<Result<Vec<_>>>()?;
    compute_threshold(&d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub metric: DistanceMetric,
    pub k: usize,
    pub dc_samples: usize,
    pub dc_seed: u64,
    pub averaging: MacroAveraging,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metric: DistanceMetric::Cosine,
            k: DEFAULT_KNN_K,
            dc_samples: DEFAULT_DC_SAMPLES,
            dc_seed: 0,
            averaging: MacroAveraging::PerTask,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mrr: Directional,
    pub knn: Directional,
    pub distance_correlation: f64,
    pub dc_degenerate: bool,
    pub dc_samples: Vec<DistanceSample>,
    pub per_task_auc: Vec<(String, f64)>,
    pub skipped_tasks: Vec<String>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub threshold: f64,
    pub fingerprint: String,
}

/// Manifold metrics only (MRR, KNN, DC).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldMetrics {
    pub mrr: f64,
    pub knn: f64,
    pub dc: f64,
}

pub fn manifold_metrics(ts: &AlignedTestSet, opts: &EvalOptions) -> Result<ManifoldMetrics> {
    Ok(ManifoldMetrics {
        mrr: mean_reciprocal_rank(ts, opts.metric)?.both,
        knn: knn_accuracy(ts, opts.k, opts.metric)?.both,
        dc: distance_correlation(ts, opts.dc_samples, opts.dc_seed, opts.metric)?.value,
    })
}

/// Every metric on an aligned test set.
pub fn evaluate(
    ts: &AlignedTestSet,
    threshold: f64,
    opts: &EvalOptions,
    fingerprint: &str,
) -> Result<EvalReport> {
    let mrr = mean_reciprocal_rank(ts, opts.metric)?;
    let knn = knn_accuracy(ts, opts.k, opts.metric)?;
    let dc = distance_correlation(ts, opts.dc_samples, opts.dc_seed, opts.metric)?;
    let grounding = grounded_language_eval(ts, threshold, opts.metric, opts.averaging)?;
    Ok(EvalReport {
        mrr,
        knn,
        distance_correlation: dc.value,
        dc_degenerate: dc.degenerate,
        dc_samples: dc.samples,
        per_task_auc: grounding.per_task_auc,
        skipped_tasks: grounding.skipped_tasks,
        micro_f1: grounding.micro_f1,
        macro_f1: grounding.macro_f1,
        threshold,
        fingerprint: fingerprint.into(),
    })
}

/// Fit on `train`, refine, and report manifold metrics on `test`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub fitted: FittedModel,
    pub transform: ProcrustesTransform,
    pub threshold: f64,
    pub test: AlignedTestSet,
}

pub fn run_pipeline(
    method: Method,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    flags: AblationFlags,
) -> Result<PipelineResult> {
    let fitted = fit_method(method, train, val, cfg, CcaOptions::default())?;
    let transform = fit_refinement(&fitted.model, train, flags)?;
    let metric = method.configure(cfg).metric;
    let threshold = pair_threshold(&aligned_set(&fitted.model, &transform, train)?, metric)?;
    let test = aligned_set(&fitted.model, &transform, test)?;
    Ok(PipelineResult {
        fitted,
        transform,
        threshold,
        test,
    })
}
