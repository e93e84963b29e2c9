//! Shared mini-batch loop for the two trainable methods (triplet and paired-cosine).

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Domain};
use crate::distance::DistanceMetric;
use crate::error::{Error, Result};
use crate::net::{AdamConfig, AdamState, AlignmentHead, ForwardTrace, HeadGradients};

/// Triplet selection regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TrainMode {
    #[default]
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub margin: f64,
    pub metric: DistanceMetric,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Samples per epoch; `None` means four times the training set size.
    pub triplets_per_epoch: Option<usize>,
    pub patience: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Fraction of farthest descriptions eligible as unsupervised negatives.
    pub negative_quantile: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            metric: DistanceMetric::Cosine,
            embed_dim: 1024,
            batch_size: 64,
            max_epochs: 300,
            triplets_per_epoch: None,
            patience: 10,
            seed: 0,
            mode: TrainMode::Supervised,
            negative_quantile: 0.25,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be a finite non-negative number");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.triplets_per_epoch == Some(0) {
            return bad("triplets_per_epoch must be at least 1");
        }
        if !(self.negative_quantile > 0.0 && self.negative_quantile < 1.0) {
            return bad("negative_quantile must lie in (0, 1)");
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    pub fn samples_per_epoch(&self, train_len: usize) -> usize {
        self.triplets_per_epoch.unwrap_or(4 * train_len)
    }
}

/// The two alignment functions, one per domain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadPair {
    pub vision: AlignmentHead,
    pub language: AlignmentHead,
}

impl HeadPair {
    pub fn init(
        dim_vision: usize,
        dim_language: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vision = AlignmentHead::init(dim_vision, embed_dim, rng.random())?;
        let language = AlignmentHead::init(dim_language, embed_dim, rng.random())?;
        Ok(Self { vision, language })
    }

    pub fn head(&self, domain: Domain) -> &AlignmentHead {
        match domain {
            Domain::Vision => &self.vision,
            Domain::Language => &self.language,
        }
    }

    pub fn embed(&self, x: &[f64], domain: Domain) -> Result<Vec<f64>> {
        self.head(domain).forward(x)
    }

    pub(crate) fn trace(&self, ds: &Dataset, index: usize, domain: Domain) -> Result<ForwardTrace> {
        self.head(domain).forward_trace(ds.vector(index, domain))
    }
}

/// Gradient buffers for both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub vision: HeadGradients,
    pub language: HeadGradients,
}

impl PairGradients {
    pub fn zeros_for(heads: &HeadPair) -> Self {
        Self {
            vision: HeadGradients::zeros_for(&heads.vision),
            language: HeadGradients::zeros_for(&heads.language),
        }
    }

    pub(crate) fn backprop(
        &mut self,
        heads: &HeadPair,
        domain: Domain,
        trace: &ForwardTrace,
        grad_output: &[f64],
    ) -> Result<()> {
        match domain {
            Domain::Vision => heads
                .vision
                .backward_trace(trace, grad_output, &mut self.vision)?,
            Domain::Language => {
                heads
                    .language
                    .backward_trace(trace, grad_output, &mut self.language)?
            }
        };
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        self.vision.scale(factor);
        self.language.scale(factor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub heads: HeadPair,
    pub history: Vec<EpochRecord>,
    /// Epoch whose heads were returned (0 means the initialization).
    pub best_epoch: usize,
}

/// A training objective over sampled items (triplets or pairs).
pub(crate) trait Objective {
    type Item;

    fn sample_train(&self, rng: &mut ChaCha8Rng) -> Result<Self::Item>;

    /// Fixed validation items, or `None` when there is no validation data.
    fn validation_items(&self, rng: &mut ChaCha8Rng) -> Result<Option<Vec<Self::Item>>>;

    /// Loss on one item from the train (`val == false`) or validation set,
    /// accumulating parameter gradients when `grads` is given.
    fn loss(
        &self,
        heads: &HeadPair,
        item: &Self::Item,
        val: bool,
        grads: Option<&mut PairGradients>,
    ) -> Result<f64>;
}

pub(crate) fn run<O: Objective>(
    objective: &O,
    dims: (usize, usize),
    train_len: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut heads = HeadPair::init(dims.0, dims.1, cfg.embed_dim, master.random())?;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut val_rng = ChaCha8Rng::seed_from_u64(master.random());
    let val_items = if cfg.max_epochs > 0 {
        objective.validation_items(&mut val_rng)?
    } else {
        None
    };

    let mut adam_v = AdamState::new(&heads.vision, cfg.adam);
    let mut adam_l = AdamState::new(&heads.language, cfg.adam);
    let per_epoch = cfg.samples_per_epoch(train_len);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, heads.clone());
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        let mut remaining = per_epoch;
        while remaining > 0 {
            let batch = remaining.min(cfg.batch_size);
            remaining -= batch;
            let mut grads = PairGradients::zeros_for(&heads);
            for _ in 0..batch {
                let item = objective.sample_train(&mut sample_rng)?;
                total += objective.loss(&heads, &item, false, Some(&mut grads))?;
            }
            if !total.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            grads.scale(1.0 / batch as f64);
            adam_v.step(&mut heads.vision, &grads.vision)?;
            adam_l.step(&mut heads.language, &grads.language)?;
        }
        let train_loss = total / per_epoch as f64;

        let val_loss = match &val_items {
            Some(items) => {
                let mut sum = 0.0;
                for item in items {
                    sum += objective.loss(&heads, item, true, None)?;
                }
                let v = sum / items.len() as f64;
                if !v.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                Some(v)
            }
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        if let Some(v) = val_loss {
            if v < best.0 {
                best = (v, epoch, heads.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }

    if val_items.is_some() && !history.is_empty() {
        let (_, best_epoch, best_heads) = best;
        Ok(TrainOutcome {
            heads: best_heads,
            history,
            best_epoch,
        })
    } else {
        let best_epoch = history.len();
        Ok(TrainOutcome {
            heads,
            history,
            best_epoch,
        })
    }
}
