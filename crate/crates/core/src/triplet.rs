//! Cross-domain triplets: sampling, loss and the joint training procedure.
//!
//! In supervised mode each of anchor, positive and negative independently
//! picks its domain, so a triplet can mix vision and language members in any
//! of the eight combinations. Members embed through the head of their own
//! domain and gradients flow back into whichever heads were used.
//!
//! Unsupervised mode fixes the anchor to a vision vector, the positive to its
//! paired description and draws the negative from the descriptions that lie
//! farthest from the positive in the raw language feature space.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Domain};
use crate::distance::{distance, distance_with_grad, DistanceMetric};
use crate::error::{Error, Result};
use crate::training::{self, HeadPair, Objective, PairGradients, TrainOutcome};

pub use crate::training::{EpochRecord, TrainConfig, TrainMode};

/// A reference to one vector of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Member {
    pub index: usize,
    pub domain: Domain,
}

impl Member {
    pub fn new(index: usize, domain: Domain) -> Self {
        Self { index, domain }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: Member,
    pub positive: Member,
    pub negative: Member,
}

fn random_domain(rng: &mut ChaCha8Rng) -> Domain {
    if rng.random::<bool>() {
        Domain::Vision
    } else {
        Domain::Language
    }
}

/// Precomputed class membership for supervised sampling.
#[derive(Debug, Clone)]
pub struct SupervisedSampler {
    /// Class id of each record.
    class_of: Vec<usize>,
    /// Record indices of each class.
    members: Vec<Vec<usize>>,
    /// Record indices not in each class.
    others: Vec<Vec<usize>>,
}

impl SupervisedSampler {
    pub fn new(ds: &Dataset) -> Result<Self> {
        if !ds.is_labeled() {
            return Err(Error::MissingLabels);
        }
        let mut ids = BTreeMap::new();
        let mut class_of = Vec::with_capacity(ds.len());
        for rec in ds.records() {
            let next = ids.len();
            class_of.push(*ids.entry(rec.class_label.as_deref()).or_insert(next));
        }
        let n_classes = ids.len();
        if n_classes < 2 {
            return Err(Error::TooFewClasses(n_classes));
        }
        let mut members = vec![Vec::new(); n_classes];
        for (i, &c) in class_of.iter().enumerate() {
            members[c].push(i);
        }
        let others = (0..n_classes)
            .map(|c| (0..ds.len()).filter(|&i| class_of[i] != c).collect())
            .collect();
        Ok(Self {
            class_of,
            members,
            others,
        })
    }

    pub fn class_of(&self, index: usize) -> usize {
        self.class_of[index]
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Triplet {
        let n = self.class_of.len();
        let anchor = Member::new(rng.random_range(0..n), random_domain(rng));
        let class = self.class_of[anchor.index];
        let same = &self.members[class];

        // The anchor cannot be its own positive; a single-record class in the
        // anchor's domain falls back to the paired vector in the other domain.
        let mut pos_domain = random_domain(rng);
        if pos_domain == anchor.domain && same.len() == 1 {
            pos_domain = pos_domain.other();
        }
        let positive = if pos_domain == anchor.domain {
            let k = rng.random_range(0..same.len() - 1);
            let pos = same
                .iter()
                .copied()
                .filter(|&i| i != anchor.index)
                .nth(k)
                .unwrap();
            Member::new(pos, pos_domain)
        } else {
            Member::new(same[rng.random_range(0..same.len())], pos_domain)
        };

        let diff = &self.others[class];
        let negative = Member::new(diff[rng.random_range(0..diff.len())], random_domain(rng));
        Triplet {
            anchor,
            positive,
            negative,
        }
    }
}

/// Draws one supervised cross-domain triplet from `ds`.
pub fn sample_triplet_supervised(ds: &Dataset, rng: &mut ChaCha8Rng) -> Result<Triplet> {
    Ok(SupervisedSampler::new(ds)?.sample(rng))
}

/// For every pair, the pairs whose descriptions are farthest from its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FarNegativeTable {
    rows: Vec<Vec<usize>>,
}

impl FarNegativeTable {
    pub fn row(&self, index: usize) -> &[usize] {
        &self.rows[index]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Number of far negatives kept per row: `floor(quantile * (n - 1))`, at least one.
pub fn negative_row_len(n: usize, quantile: f64) -> usize {
    if n < 2 {
        return 0;
    }
    let k = libm::floor(quantile * (n - 1) as f64 + 1e-9) as usize;
    k.clamp(1, n - 1)
}

/// Ranks every other description by distance from each one and keeps the farthest
/// `negative_row_len(n, quantile)`, breaking ties by smaller index.
pub fn build_negative_table(
    ds: &Dataset,
    quantile: f64,
    metric: DistanceMetric,
) -> Result<FarNegativeTable> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "quantile must lie in (0, 1), got {quantile}"
        )));
    }
    let n = ds.len();
    let keep = negative_row_len(n, quantile);
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(
                ds.vector(i, Domain::Language),
                ds.vector(j, Domain::Language),
                metric,
            )?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let rows = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist[i * n + b].total_cmp(&dist[i * n + a]).then(a.cmp(&b)));
            others.truncate(keep);
            others
        })
        .collect();
    Ok(FarNegativeTable { rows })
}

/// Vision anchor, its paired description as positive, and a far description as negative.
pub fn sample_triplet_unsupervised(
    table: &FarNegativeTable,
    rng: &mut ChaCha8Rng,
) -> Result<Triplet> {
    if table.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let i = rng.random_range(0..table.len());
    let row = table.row(i);
    if row.is_empty() {
        return Err(Error::EmptyNegativeRow(i));
    }
    let j = row[rng.random_range(0..row.len())];
    Ok(Triplet {
        anchor: Member::new(i, Domain::Vision),
        positive: Member::new(i, Domain::Language),
        negative: Member::new(j, Domain::Language),
    })
}

/// `max(d(ea, ep) - d(ea, en) + margin, 0)`.
pub fn triplet_loss(
    ea: &[f64],
    ep: &[f64],
    en: &[f64],
    margin: f64,
    metric: DistanceMetric,
) -> Result<f64> {
    let d_pos = distance(ea, ep, metric)?;
    let d_neg = distance(ea, en, metric)?;
    Ok((d_pos - d_neg + margin).max(0.0))
}

/// Gradients of the triplet loss with respect to the three embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Triplet loss and its gradients; clamped triplets return all-zero gradients.
pub fn triplet_loss_with_grad(
    ea: &[f64],
    ep: &[f64],
    en: &[f64],
    margin: f64,
    metric: DistanceMetric,
) -> Result<TripletGrad> {
    let n = ea.len();
    let mut ga_p = vec![0.0; n];
    let mut gp = vec![0.0; n];
    let mut ga_n = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let d_pos = distance_with_grad(ea, ep, metric, &mut ga_p, &mut gp)?;
    let d_neg = distance_with_grad(ea, en, metric, &mut ga_n, &mut gn)?;
    let raw = d_pos - d_neg + margin;
    if raw <= 0.0 {
        return Ok(TripletGrad {
            loss: 0.0,
            anchor: vec![0.0; n],
            positive: vec![0.0; n],
            negative: vec![0.0; n],
        });
    }
    let anchor = ga_p.iter().zip(&ga_n).map(|(p, q)| p - q).collect();
    gn.iter_mut().for_each(|g| *g = -*g);
    Ok(TripletGrad {
        loss: raw,
        anchor,
        positive: gp,
        negative: gn,
    })
}

/// Loss of one triplet through the heads, accumulating parameter gradients.
pub fn triplet_step(
    heads: &HeadPair,
    ds: &Dataset,
    triplet: &Triplet,
    margin: f64,
    metric: DistanceMetric,
    grads: Option<&mut PairGradients>,
) -> Result<f64> {
    let members = [triplet.anchor, triplet.positive, triplet.negative];
    let traces = [
        heads.trace(ds, members[0].index, members[0].domain)?,
        heads.trace(ds, members[1].index, members[1].domain)?,
        heads.trace(ds, members[2].index, members[2].domain)?,
    ];
    let g = triplet_loss_with_grad(
        traces[0].output.as_slice(),
        traces[1].output.as_slice(),
        traces[2].output.as_slice(),
        margin,
        metric,
    )?;
    if let Some(grads) = grads {
        if g.loss > 0.0 {
            for ((m, t), go) in
                members
                    .iter()
                    .zip(&traces)
                    .zip([&g.anchor, &g.positive, &g.negative])
            {
                grads.backprop(heads, m.domain, t, go)?;
            }
        }
    }
    Ok(g.loss)
}

enum TripletSource {
    Supervised(SupervisedSampler),
    Unsupervised(FarNegativeTable),
}

impl TripletSource {
    fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        match cfg.mode {
            TrainMode::Supervised => Ok(Self::Supervised(SupervisedSampler::new(ds)?)),
            TrainMode::Unsupervised => Ok(Self::Unsupervised(build_negative_table(
                ds,
                cfg.negative_quantile,
                DistanceMetric::Cosine,
            )?)),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Triplet> {
        match self {
            Self::Supervised(s) => Ok(s.sample(rng)),
            Self::Unsupervised(t) => sample_triplet_unsupervised(t, rng),
        }
    }
}

struct TripletObjective<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    train_source: TripletSource,
    cfg: &'a TrainConfig,
}

impl Objective for TripletObjective<'_> {
    type Item = Triplet;

    fn sample_train(&self, rng: &mut ChaCha8Rng) -> Result<Triplet> {
        self.train_source.sample(rng)
    }

    fn validation_items(&self, rng: &mut ChaCha8Rng) -> Result<Option<Vec<Triplet>>> {
        if self.val.len() < 2 {
            return Ok(None);
        }
        let source = TripletSource::new(self.val, self.cfg)?;
        (0..4 * self.val.len())
            .map(|_| source.sample(rng))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn loss(
        &self,
        heads: &HeadPair,
        item: &Triplet,
        val: bool,
        grads: Option<&mut PairGradients>,
    ) -> Result<f64> {
        let ds = if val { self.val } else { self.train };
        triplet_step(heads, ds, item, self.cfg.margin, self.cfg.metric, grads)
    }
}

/// Jointly trains the vision and language heads on cross-domain triplets.
///
/// Stops after `max_epochs` or once the validation loss has not improved for
/// `patience` epochs, returning the heads from the best validation epoch.
/// An empty `ds_val` disables early stopping.
pub fn train(ds_train: &Dataset, ds_val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_val_dims(ds_train, ds_val)?;
    let objective = TripletObjective {
        train: ds_train,
        val: ds_val,
        train_source: TripletSource::new(ds_train, cfg)?,
        cfg,
    };
    training::run(
        &objective,
        (ds_train.dim_vision(), ds_train.dim_language()),
        ds_train.len(),
        cfg,
    )
}

pub(crate) fn check_val_dims(train: &Dataset, val: &Dataset) -> Result<()> {
    if val.is_empty() {
        return Ok(());
    }
    for domain in [Domain::Vision, Domain::Language] {
        if val.dim(domain) != train.dim(domain) {
            return Err(Error::DimensionMismatch {
                expected: train.dim(domain),
                actual: val.dim(domain),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PairRecord;
    use alloc::format;
    use alloc::string::String;
    use rand::SeedableRng;

    fn two_class(per_class: usize) -> Dataset {
        let mut recs = Vec::new();
        for c in 0..2 {
            for i in 0..per_class {
                recs.push(PairRecord {
                    pair_id: format!("{c}-{i}"),
                    class_label: Some(format!("c{c}")),
                    vision: vec![c as f64 + 1.0, i as f64 + 0.5],
                    language: vec![i as f64 + 1.0, c as f64 - 0.5, 1.0],
                });
            }
        }
        Dataset::new(recs).unwrap()
    }

    fn line(points: &[f64]) -> Dataset {
        let recs = points
            .iter()
            .enumerate()
            .map(|(i, &p)| PairRecord {
                pair_id: format!("p{i}"),
                class_label: None,
                vision: vec![1.0, p, 0.5 - p],
                language: vec![p, 0.0],
            })
            .collect();
        Dataset::new(recs).unwrap()
    }

    fn label(ds: &Dataset, m: Member) -> &Option<String> {
        &ds.records()[m.index].class_label
    }

    #[test]
    fn supervised_triplets_respect_classes() {
        let ds = two_class(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let t = sample_triplet_supervised(&ds, &mut rng).unwrap();
            assert_eq!(label(&ds, t.anchor), label(&ds, t.positive));
            assert_ne!(label(&ds, t.anchor), label(&ds, t.negative));
            assert_ne!(t.anchor, t.positive);
        }
    }

    #[test]
    fn supervised_needs_two_labeled_classes() {
        let one = Dataset::new(
            (0..3)
                .map(|i| PairRecord {
                    pair_id: format!("{i}"),
                    class_label: Some("a".into()),
                    vision: vec![1.0],
                    language: vec![1.0],
                })
                .collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_triplet_supervised(&one, &mut rng),
            Err(Error::TooFewClasses(1))
        );
        assert_eq!(
            sample_triplet_supervised(&line(&[0.0, 1.0]), &mut rng),
            Err(Error::MissingLabels)
        );
    }

    #[test]
    fn anchor_domain_is_balanced() {
        let ds = two_class(10);
        let sampler = SupervisedSampler::new(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let vision = (0..n)
            .filter(|_| sampler.sample(&mut rng).anchor.domain == Domain::Vision)
            .count();
        let frac = vision as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.03, "vision anchors {frac}");
    }

    #[test]
    fn singleton_class_positive_uses_paired_vector() {
        let mut recs: Vec<PairRecord> = two_class(3).into_records();
        recs.truncate(4); // class c1 keeps a single record
        let ds = Dataset::new(recs).unwrap();
        let sampler = SupervisedSampler::new(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let t = sampler.sample(&mut rng);
            if t.anchor.index == 3 {
                assert_eq!(t.positive.index, 3);
                assert_ne!(t.positive.domain, t.anchor.domain);
            }
        }
    }

    #[test]
    fn collinear_table_picks_farthest() {
        let ds = line(&[0.0, 1.0, 2.0, 3.0]);
        let table = build_negative_table(&ds, 0.34, DistanceMetric::Euclidean).unwrap();
        assert_eq!(table.row(0), &[3]);
        assert_eq!(table.row(3), &[0]);
        assert_eq!(table.row(1), &[3]);
        let tied =
            build_negative_table(&line(&[0.0, 1.0, 2.0]), 0.5, DistanceMetric::Euclidean).unwrap();
        assert_eq!(tied.row(1), &[0]);
        for i in 0..4 {
            assert!(!table.row(i).contains(&i));
        }
    }

    #[test]
    fn table_rejects_zero_description_under_cosine() {
        let ds = line(&[0.0, 1.0, 2.0]);
        assert_eq!(
            build_negative_table(&ds, 0.25, DistanceMetric::Cosine),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn row_length_rule() {
        assert_eq!(negative_row_len(5, 0.25), 1);
        assert_eq!(negative_row_len(4, 0.25), 1);
        assert_eq!(negative_row_len(21, 0.25), 5);
        assert_eq!(negative_row_len(4, 0.34), 1);
        assert_eq!(negative_row_len(1, 0.25), 0);
    }

    #[test]
    fn unsupervised_pairs_anchor_with_own_description() {
        let ds = line(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let table = build_negative_table(&ds, 0.25, DistanceMetric::Euclidean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = sample_triplet_unsupervised(&table, &mut rng).unwrap();
            assert_eq!(t.anchor.domain, Domain::Vision);
            assert_eq!(t.positive, Member::new(t.anchor.index, Domain::Language));
            assert_eq!(t.negative.domain, Domain::Language);
            assert!(table.row(t.anchor.index).contains(&t.negative.index));
        }
    }

    #[test]
    fn loss_worked_values() {
        // d(a,p) = 0.1, d(a,n) = 0.9 on a line
        let l = triplet_loss(&[0.0], &[0.1], &[0.9], 0.4, DistanceMetric::Euclidean).unwrap();
        assert_eq!(l, 0.0);
        let l = triplet_loss(&[0.0], &[0.5], &[0.2], 0.4, DistanceMetric::Euclidean).unwrap();
        assert!((l - 0.7).abs() < 1e-15);
        let l = triplet_loss(
            &[1.0, 0.0],
            &[1.0, 0.0],
            &[0.0, 1.0],
            0.4,
            DistanceMetric::Cosine,
        )
        .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn clamped_triplet_has_zero_gradient() {
        let g = triplet_loss_with_grad(
            &[0.0, 1.0],
            &[0.0, 1.1],
            &[5.0, 1.0],
            0.4,
            DistanceMetric::Euclidean,
        )
        .unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g
            .anchor
            .iter()
            .chain(&g.positive)
            .chain(&g.negative)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = two_class(3);
        let cfg = TrainConfig {
            margin: 0.0,
            embed_dim: 4,
            max_epochs: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train(&ds, &ds, &cfg).unwrap();
        assert_eq!(
            out.heads,
            HeadPair::init(2, 3, 4, {
                let mut r = ChaCha8Rng::seed_from_u64(9);
                r.random()
            })
            .unwrap()
        );
        assert!(out.history.is_empty());
    }

    #[test]
    fn supervised_training_requires_labels() {
        let ds = line(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let cfg = TrainConfig {
            embed_dim: 2,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        assert_eq!(train(&ds, &ds, &cfg), Err(Error::MissingLabels));
        let cfg = TrainConfig {
            mode: TrainMode::Unsupervised,
            ..cfg
        };
        let r = train(&ds, &ds, &cfg);
        assert!(r.is_ok(), "{r:?}");
    }

    proptest::proptest! {
        #[test]
        fn loss_is_nonnegative_and_zero_past_margin(
            a in proptest::collection::vec(-3.0f64..3.0, 4),
            p in proptest::collection::vec(-3.0f64..3.0, 4),
            n in proptest::collection::vec(-3.0f64..3.0, 4),
            margin in 0.0f64..1.0,
        ) {
            let l = triplet_loss(&a, &p, &n, margin, DistanceMetric::Euclidean).unwrap();
            proptest::prop_assert!(l >= 0.0);
            let dp = distance(&a, &p, DistanceMetric::Euclidean).unwrap();
            let dn = distance(&a, &n, DistanceMetric::Euclidean).unwrap();
            if dn >= dp + margin {
                proptest::prop_assert_eq!(l, 0.0);
            }
        }
    }
}
