//! Linear CCA and the paired-cosine baseline.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Domain};
use crate::distance::{distance_with_grad, DistanceMetric};
use crate::error::{Error, Result};
use crate::training::{self, HeadPair, Objective, PairGradients, TrainConfig, TrainOutcome};

/// Largest CCA output dimension used by default.
pub const DEFAULT_CCA_DIM: usize = 64;

/// Default relative ridge added to each covariance (scaled by its mean eigenvalue).
pub const DEFAULT_CCA_RIDGE: f64 = 1e-6;

/// A centred linear projection `(x - mean) W`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearMap {
    /// Shape `(input_dim, k)`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_nalgebra::matrix"))]
    pub projection: DMatrix<f64>,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_nalgebra::vector"))]
    pub mean: DVector<f64>,
    pub domain: Domain,
}

impl LinearMap {
    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let centred =
            DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(self.projection.tr_mul(&centred).as_slice().to_vec())
    }
}

pub fn apply_linear(map: &LinearMap, x: &[f64]) -> Result<Vec<f64>> {
    map.apply(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaFit {
    pub vision: LinearMap,
    pub language: LinearMap,
    /// Canonical correlations, descending.
    pub correlations: Vec<f64>,
}

/// `min(64, m_v, m_l, n - 1)`.
pub fn default_cca_dim(n: usize, dim_vision: usize, dim_language: usize) -> usize {
    DEFAULT_CCA_DIM
        .min(dim_vision)
        .min(dim_language)
        .min(n.saturating_sub(1))
}

/// Builds an `(n x m)` matrix from one domain of a dataset.
pub fn domain_matrix(ds: &Dataset, domain: Domain) -> DMatrix<f64> {
    let m = ds.dim(domain);
    DMatrix::from_fn(ds.len(), m, |i, j| ds.vector(i, domain)[j])
}

fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.tr_mul(b) / (a.nrows() as f64 - 1.0)
}

/// `C^{-1/2}` for a symmetric positive definite `C`.
fn inverse_sqrt(c: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = c.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let floor = max * 1e-12;
    if max <= 0.0 || eig.eigenvalues.iter().any(|&v| v <= floor) {
        return Err(Error::SingularCovariance);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / libm::sqrt(v)));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn centred(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    (out, mean)
}

fn add_ridge(c: &mut DMatrix<f64>, ridge: f64) {
    let m = c.nrows();
    let shift = ridge * c.trace() / m as f64;
    for i in 0..m {
        c[(i, i)] += shift;
    }
}

/// Linear CCA via whitening and an SVD of the whitened cross-covariance.
///
/// `ridge` is relative: each covariance gets `ridge * trace(C) / m` added to its diagonal.
pub fn fit_cca(
    vision: &DMatrix<f64>,
    language: &DMatrix<f64>,
    k: usize,
    ridge: f64,
) -> Result<CcaFit> {
    let n = vision.nrows();
    if language.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: language.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("CCA needs at least 2 rows".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(
            "ridge must be finite and non-negative".into(),
        ));
    }
    let limit = vision.ncols().min(language.ncols()).min(n - 1);
    if k == 0 || k > limit {
        return Err(Error::InvalidArgument(alloc::format!(
            "CCA dimension {k} must lie in 1..={limit}"
        )));
    }
    let (xv, mean_v) = centred(vision);
    let (xl, mean_l) = centred(language);
    let mut cvv = covariance(&xv, &xv);
    let mut cll = covariance(&xl, &xl);
    let cvl = covariance(&xv, &xl);
    add_ridge(&mut cvv, ridge);
    add_ridge(&mut cll, ridge);
    let wv = inverse_sqrt(cvv)?;
    let wl = inverse_sqrt(cll)?;
    let t = &wv * cvl * &wl;
    let svd = t.svd(true, true);
    let u = svd.u.ok_or(Error::Degenerate("SVD did not converge"))?;
    let v_t = svd.v_t.ok_or(Error::Degenerate("SVD did not converge"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    order.truncate(k);

    let mut proj_v = DMatrix::zeros(vision.ncols(), k);
    let mut proj_l = DMatrix::zeros(language.ncols(), k);
    for (col, &idx) in order.iter().enumerate() {
        proj_v.set_column(col, &(&wv * u.column(idx)));
        proj_l.set_column(col, &(&wl * v_t.row(idx).transpose()));
    }
    Ok(CcaFit {
        vision: LinearMap {
            projection: proj_v,
            mean: mean_v,
            domain: Domain::Vision,
        },
        language: LinearMap {
            projection: proj_l,
            mean: mean_l,
            domain: Domain::Language,
        },
        correlations: order.iter().map(|&i| svd.singular_values[i]).collect(),
    })
}

struct CosinePairObjective<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
}

impl CosinePairObjective<'_> {
    fn pair_loss(
        heads: &HeadPair,
        ds: &Dataset,
        index: usize,
        grads: Option<&mut PairGradients>,
    ) -> Result<f64> {
        let tv = heads.trace(ds, index, Domain::Vision)?;
        let tl = heads.trace(ds, index, Domain::Language)?;
        let n = tv.output.len();
        let mut gv = vec![0.0; n];
        let mut gl = vec![0.0; n];
        let d = distance_with_grad(
            tv.output.as_slice(),
            tl.output.as_slice(),
            DistanceMetric::Cosine,
            &mut gv,
            &mut gl,
        )?;
        if let Some(grads) = grads {
            grads.backprop(heads, Domain::Vision, &tv, &gv)?;
            grads.backprop(heads, Domain::Language, &tl, &gl)?;
        }
        Ok(d)
    }
}

impl Objective for CosinePairObjective<'_> {
    type Item = usize;

    fn sample_train(&self, rng: &mut ChaCha8Rng) -> Result<usize> {
        Ok(rng.random_range(0..self.train.len()))
    }

    fn validation_items(&self, _rng: &mut ChaCha8Rng) -> Result<Option<Vec<usize>>> {
        Ok((!self.val.is_empty()).then(|| (0..self.val.len()).collect()))
    }

    fn loss(
        &self,
        heads: &HeadPair,
        item: &usize,
        val: bool,
        grads: Option<&mut PairGradients>,
    ) -> Result<f64> {
        let ds = if val { self.val } else { self.train };
        Self::pair_loss(heads, ds, *item, grads)
    }
}

/// Loss of the paired-cosine baseline for one pair, accumulating gradients.
pub fn cosine_pair_step(
    heads: &HeadPair,
    ds: &Dataset,
    index: usize,
    grads: Option<&mut PairGradients>,
) -> Result<f64> {
    CosinePairObjective::pair_loss(heads, ds, index, grads)
}

/// Trains the two heads to minimise the cosine distance between paired embeddings.
///
/// Same architecture, optimiser and stopping rule as the triplet method; the
/// margin, metric and mode fields of `cfg` are ignored. Nothing stops the two
/// heads from collapsing onto a single direction.
pub fn train_cosine_baseline(
    ds_train: &Dataset,
    ds_val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    crate::triplet::check_val_dims(ds_train, ds_val)?;
    if ds_train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let objective = CosinePairObjective {
        train: ds_train,
        val: ds_val,
    };
    training::run(
        &objective,
        (ds_train.dim_vision(), ds_train.dim_language()),
        ds_train.len(),
        cfg,
    )
}
