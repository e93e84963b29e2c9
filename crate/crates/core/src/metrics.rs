//! Retrieval and grounding metrics over aligned test embeddings.
//!
//! Cross-domain rankings order gallery items by distance and break distance
//! ties by `pair_id` ascending, so every metric here is deterministic.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Domain;
use crate::distance::{distance, DistanceMetric};
use crate::error::{Error, Result};

/// Number of pairs sampled for distance correlation by default.
pub const DEFAULT_DC_SAMPLES: usize = 10_000;
/// Neighbourhood size for KNN accuracy by default.
pub const DEFAULT_KNN_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedItem {
    pub pair_id: String,
    pub class_label: String,
    pub vision: Vec<f64>,
    pub language: Vec<f64>,
}

impl AlignedItem {
    pub fn vector(&self, domain: Domain) -> &[f64] {
        match domain {
            Domain::Vision => &self.vision,
            Domain::Language => &self.language,
        }
    }
}

/// Aligned embeddings of held-out pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTestSet {
    items: Vec<AlignedItem>,
    dim: usize,
}

impl AlignedTestSet {
    pub fn new(items: Vec<AlignedItem>) -> Result<Self> {
        let dim = items.first().ok_or(Error::EmptyDataset)?.vision.len();
        for it in &items {
            for v in [&it.vision, &it.language] {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("aligned embedding"));
                }
            }
        }
        Ok(Self { items, dim })
    }

    pub fn items(&self) -> &[AlignedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Gallery indices in the other domain sorted by (distance, pair_id).
    fn ranked_gallery(
        &self,
        query: usize,
        query_domain: Domain,
        metric: DistanceMetric,
    ) -> Result<Vec<usize>> {
        let q = self.items[query].vector(query_domain);
        let gallery = query_domain.other();
        let mut scored = self
            .items
            .iter()
            .enumerate()
            .map(|(j, it)| Ok((distance(q, it.vector(gallery), metric)?, j)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.items[a.1].pair_id.cmp(&self.items[b.1].pair_id))
        });
        Ok(scored.into_iter().map(|(_, j)| j).collect())
    }
}

/// A headline value with its per-direction components.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Directional {
    /// Mean over queries from both domains.
    pub both: f64,
    /// Language queries against the vision gallery.
    pub language_to_vision: f64,
    /// Vision queries against the language gallery.
    pub vision_to_language: f64,
}

impl Directional {
    fn from_sums(l2v: f64, v2l: f64, n: usize) -> Self {
        Self {
            both: (l2v + v2l) / (2 * n) as f64,
            language_to_vision: l2v / n as f64,
            vision_to_language: v2l / n as f64,
        }
    }
}

/// Mean over queries of the reciprocal rank of the first same-class item in the other domain.
pub fn mean_reciprocal_rank(ts: &AlignedTestSet, metric: DistanceMetric) -> Result<Directional> {
    if ts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sums = [0.0; 2];
    for (slot, domain) in [Domain::Language, Domain::Vision].into_iter().enumerate() {
        for q in 0..ts.len() {
            let ranked = ts.ranked_gallery(q, domain, metric)?;
            let class = &ts.items[q].class_label;
            let rank = ranked
                .iter()
                .position(|&j| &ts.items[j].class_label == class)
                .ok_or(Error::Degenerate("class absent from the other domain"))?;
            sums[slot] += 1.0 / (rank + 1) as f64;
        }
    }
    Ok(Directional::from_sums(sums[0], sums[1], ts.len()))
}

/// Majority class among the first `k` ranked neighbours; ties go to the class
/// of the nearest neighbour among the tied classes.
fn majority<'a>(neighbours: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let ordered: Vec<&str> = neighbours.collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &ordered {
        *counts.entry(c).or_default() += 1;
    }
    let top = counts.values().copied().max()?;
    ordered.into_iter().find(|c| counts[c] == top)
}

/// Cross-domain KNN classification accuracy, both directions.
pub fn knn_accuracy(ts: &AlignedTestSet, k: usize, metric: DistanceMetric) -> Result<Directional> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if ts.len() < k {
        return Err(Error::InvalidArgument(alloc::format!(
            "gallery of {} items is smaller than k = {k}",
            ts.len()
        )));
    }
    let mut sums = [0.0; 2];
    for (slot, domain) in [Domain::Language, Domain::Vision].into_iter().enumerate() {
        for q in 0..ts.len() {
            let ranked = ts.ranked_gallery(q, domain, metric)?;
            let predicted = majority(
                ranked[..k]
                    .iter()
                    .map(|&j| ts.items[j].class_label.as_str()),
            );
            if predicted == Some(ts.items[q].class_label.as_str()) {
                sums[slot] += 1.0;
            }
        }
    }
    Ok(Directional::from_sums(sums[0], sums[1], ts.len()))
}

/// Distances of one sampled pair of pairs, in each domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceSample {
    pub i: usize,
    pub j: usize,
    pub language: f64,
    pub vision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCorrelation {
    pub value: f64,
    /// Set when either distance list had zero variance; `value` is then 0.
    pub degenerate: bool,
    pub samples: Vec<DistanceSample>,
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some((cov / libm::sqrt(va * vb)).clamp(-1.0, 1.0))
}

fn correlate(
    ts: &AlignedTestSet,
    pairs: impl Iterator<Item = (usize, usize)>,
    metric: DistanceMetric,
) -> Result<DistanceCorrelation> {
    let samples = pairs
        .map(|(i, j)| {
            let a = &ts.items[i];
            let b = &ts.items[j];
            Ok(DistanceSample {
                i,
                j,
                language: distance(&a.language, &b.language, metric)?,
                vision: distance(&a.vision, &b.vision, metric)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let vis: Vec<f64> = samples.iter().map(|s| s.vision).collect();
    let lang: Vec<f64> = samples.iter().map(|s| s.language).collect();
    let (value, degenerate) = match pearson(&vis, &lang) {
        Some(r) => (r, false),
        None => (0.0, true),
    };
    Ok(DistanceCorrelation {
        value,
        degenerate,
        samples,
    })
}

/// Pearson correlation between vision-space and language-space distances over
/// `n_samples` unordered pairs drawn uniformly with replacement.
pub fn distance_correlation(
    ts: &AlignedTestSet,
    n_samples: usize,
    seed: u64,
    metric: DistanceMetric,
) -> Result<DistanceCorrelation> {
    let n = ts.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "distance correlation needs at least 2 pairs".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n_samples)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j))
        })
        .collect::<Vec<_>>();
    correlate(ts, pairs.into_iter(), metric)
}

/// Distance correlation over every unordered pair.
pub fn distance_correlation_exhaustive(
    ts: &AlignedTestSet,
    metric: DistanceMetric,
) -> Result<DistanceCorrelation> {
    let n = ts.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "distance correlation needs at least 2 pairs".into(),
        ));
    }
    correlate(
        ts,
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))),
        metric,
    )
}

/// Rank-based (Mann-Whitney) ROC AUC; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based average ranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        rank_sum += avg_rank * order[start..end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Number of tasks whose AUC is strictly below each grid value.
pub fn auc_cumulative_counts(aucs: &[f64], grid: &[f64]) -> Vec<(f64, usize)> {
    grid.iter()
        .map(|&x| (x, aucs.iter().filter(|&&a| a < x).count()))
        .collect()
}

/// Mean plus sample standard deviation of training pair distances.
pub fn compute_threshold(train_pair_distances: &[f64]) -> Result<f64> {
    let n = train_pair_distances.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "threshold needs at least 2 distances".into(),
        ));
    }
    let mean = train_pair_distances.iter().sum::<f64>() / n as f64;
    let var = train_pair_distances
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    Ok(mean + libm::sqrt(var))
}

/// How per-task F1 scores are averaged into the macro figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MacroAveraging {
    /// Every description task weighs the same.
    #[default]
    PerTask,
    /// Tasks are averaged within their class first.
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// F1, with the convention that a task with nothing predicted and nothing relevant scores 1.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingReport {
    /// `(pair_id, auc)` for every task that has both relevant and irrelevant images.
    pub per_task_auc: Vec<(String, f64)>,
    /// Tasks left out of the AUC list because every image was relevant.
    pub skipped_tasks: Vec<String>,
    pub per_task_confusion: Vec<(String, Confusion)>,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Each description classifies every image as relevant (same class) or not.
///
/// AUC scores images by negative distance; F1 predicts relevance when the
/// distance is below `threshold`.
pub fn grounded_language_eval(
    ts: &AlignedTestSet,
    threshold: f64,
    metric: DistanceMetric,
    averaging: MacroAveraging,
) -> Result<GroundingReport> {
    if ts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if threshold.is_nan() {
        return Err(Error::NonFinite("threshold"));
    }
    let mut per_task_auc = Vec::new();
    let mut skipped_tasks = Vec::new();
    let mut per_task_confusion = Vec::with_capacity(ts.len());
    let mut total = Confusion::default();
    let mut scores = vec![0.0; ts.len()];
    let mut labels = vec![false; ts.len()];
    for task in ts.items() {
        let mut c = Confusion::default();
        for (j, image) in ts.items().iter().enumerate() {
            let d = distance(&task.language, &image.vision, metric)?;
            let relevant = image.class_label == task.class_label;
            let predicted = d < threshold;
            scores[j] = -d;
            labels[j] = relevant;
            match (predicted, relevant) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        if labels.iter().all(|&l| l) {
            skipped_tasks.push(task.pair_id.clone());
        } else {
            per_task_auc.push((task.pair_id.clone(), auc(&scores, &labels)?));
        }
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
        total.tn += c.tn;
        per_task_confusion.push((task.pair_id.clone(), c));
    }
    let macro_f1 = match averaging {
        MacroAveraging::PerTask => {
            per_task_confusion.iter().map(|(_, c)| c.f1()).sum::<f64>()
                / per_task_confusion.len() as f64
        }
        MacroAveraging::PerClass => {
            let mut by_class: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for (item, (_, c)) in ts.items().iter().zip(&per_task_confusion) {
                let e = by_class.entry(item.class_label.as_str()).or_default();
                e.0 += c.f1();
                e.1 += 1;
            }
            by_class.values().map(|(s, n)| s / *n as f64).sum::<f64>() / by_class.len() as f64
        }
    };
    Ok(GroundingReport {
        per_task_auc,
        skipped_tasks,
        per_task_confusion,
        micro_f1: total.f1(),
        macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;

    fn item(id: &str, class: &str, v: Vec<f64>, l: Vec<f64>) -> AlignedItem {
        AlignedItem {
            pair_id: id.into(),
            class_label: class.into(),
            vision: v,
            language: l,
        }
    }

    fn perfect(classes: usize, per_class: usize) -> AlignedTestSet {
        let mut items = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                let mut v = vec![0.0; classes];
                v[c] = 10.0;
                v[(c + 1) % classes] += 0.01 * i as f64;
                items.push(item(&format!("c{c}-{i}"), &format!("c{c}"), v.clone(), v));
            }
        }
        AlignedTestSet::new(items).unwrap()
    }

    #[test]
    fn perfect_alignment_scores_one() {
        let ts = perfect(3, 6);
        for m in [DistanceMetric::Cosine, DistanceMetric::Euclidean] {
            assert_eq!(mean_reciprocal_rank(&ts, m).unwrap().both, 1.0);
            assert_eq!(knn_accuracy(&ts, 5, m).unwrap().both, 1.0);
            let dc = distance_correlation(&ts, 500, 1, m).unwrap();
            assert!((dc.value - 1.0).abs() < 1e-12);
        }
        let r =
            grounded_language_eval(&ts, 1.0, DistanceMetric::Euclidean, MacroAveraging::PerTask)
                .unwrap();
        assert_eq!((r.micro_f1, r.macro_f1), (1.0, 1.0));
        assert!(r.per_task_auc.iter().all(|(_, a)| *a == 1.0));
        assert_eq!(r.per_task_auc.len(), 18);
    }

    #[test]
    fn rank_two_gives_half() {
        // each language vector sits on the other pair's vision vector
        let ts = AlignedTestSet::new(vec![
            item("a", "x", vec![0.0, 0.0], vec![5.0, 0.0]),
            item("b", "y", vec![5.0, 0.0], vec![0.0, 0.0]),
        ])
        .unwrap();
        let mrr = mean_reciprocal_rank(&ts, DistanceMetric::Euclidean).unwrap();
        assert_eq!(mrr.both, 0.5);
    }

    #[test]
    fn distance_ties_break_by_pair_id() {
        // both vision vectors equidistant from every language query
        let ts = AlignedTestSet::new(vec![
            item("b", "y", vec![1.0, 0.0], vec![0.0, 1.0]),
            item("a", "x", vec![-1.0, 0.0], vec![0.0, -1.0]),
        ])
        .unwrap();
        let mrr = mean_reciprocal_rank(&ts, DistanceMetric::Euclidean).unwrap();
        // "a" ranks first for every query
        assert_eq!(mrr.language_to_vision, (1.0 + 0.5) / 2.0);
    }

    #[test]
    fn knn_gallery_too_small() {
        let ts = perfect(3, 1);
        assert!(knn_accuracy(&ts, 5, DistanceMetric::Cosine).is_err());
    }

    #[test]
    fn knn_majority_tie_uses_nearest() {
        assert_eq!(majority(["b", "a", "a", "b"].into_iter()), Some("b"));
        assert_eq!(majority(["b", "a", "a"].into_iter()), Some("a"));
    }

    #[test]
    fn degenerate_dc_is_zero() {
        let ts = AlignedTestSet::new(
            (0..5)
                .map(|i| item(&i.to_string(), "c", vec![i as f64, 1.0], vec![1.0, 1.0]))
                .collect(),
        )
        .unwrap();
        let dc = distance_correlation(&ts, 100, 0, DistanceMetric::Euclidean).unwrap();
        assert!(dc.degenerate);
        assert_eq!(dc.value, 0.0);
        assert_eq!(dc.samples.len(), 100);
        assert!(dc.samples.iter().all(|s| s.i < s.j));
    }

    #[test]
    fn auc_worked_values() {
        assert_eq!(
            auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.4, 0.6], &[true, false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.4, 0.6], &[true, false, true]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn threshold_worked_values() {
        assert_eq!(compute_threshold(&[1.0, 2.0, 3.0]).unwrap(), 3.0);
        assert_eq!(compute_threshold(&[0.7, 0.7, 0.7]).unwrap(), 0.7);
        assert!(compute_threshold(&[1.0]).is_err());
    }

    #[test]
    fn nothing_predicted_gives_zero_micro_f1() {
        let ts = perfect(2, 3);
        let r = grounded_language_eval(
            &ts,
            f64::NEG_INFINITY,
            DistanceMetric::Cosine,
            MacroAveraging::PerTask,
        )
        .unwrap();
        assert_eq!(r.micro_f1, 0.0);
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn single_class_tasks_are_skipped_for_auc() {
        let ts = perfect(1, 3);
        let r = grounded_language_eval(
            &ts,
            1.0,
            DistanceMetric::Euclidean,
            MacroAveraging::PerClass,
        )
        .unwrap();
        assert!(r.per_task_auc.is_empty());
        assert_eq!(r.skipped_tasks.len(), 3);
    }

    #[test]
    fn cumulative_counts_are_monotone() {
        let aucs = [0.2, 0.9, 0.5, 0.5, 1.0];
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let counts = auc_cumulative_counts(&aucs, &grid);
        assert!(counts.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(counts.last().unwrap().1, 4);
    }
}
