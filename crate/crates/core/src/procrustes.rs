//! Translation, scaling and rotation refinement fit on paired embeddings.
//!
//! Given row-paired embeddings `Ev` (vision) and `El` (language), the fit
//! centres each cloud on its column mean, divides it by its Frobenius norm and
//! finds the orthogonal `R` minimising `|| A - B R^T ||_F` where `A`, `B` are the
//! normalised vision and language clouds. With `B^T A = U S V^T` the minimiser
//! is `R^T = U V^T`. Reflections are allowed.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Which refinement components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationFlags {
    pub translation: bool,
    pub scaling: bool,
    pub rotation: bool,
}

impl AblationFlags {
    pub const ALL: Self = Self {
        translation: true,
        scaling: true,
        rotation: true,
    };
    pub const NONE: Self = Self {
        translation: false,
        scaling: false,
        rotation: false,
    };
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProcrustesTransform {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_nalgebra::vector"))]
    pub mean_vision: DVector<f64>,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_nalgebra::vector"))]
    pub mean_language: DVector<f64>,
    pub scale_vision: f64,
    pub scale_language: f64,
    /// Applied to language rows as `x R^T`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_nalgebra::matrix"))]
    pub rotation: DMatrix<f64>,
    pub enabled: AblationFlags,
}

impl ProcrustesTransform {
    /// The transform that leaves both domains unchanged.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean_vision: DVector::zeros(dim),
            mean_language: DVector::zeros(dim),
            scale_vision: 1.0,
            scale_language: 1.0,
            rotation: DMatrix::identity(dim, dim),
            enabled: AblationFlags::NONE,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_vision.len()
    }

    fn check(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: e.len(),
            });
        }
        Ok(())
    }

    /// `(e - m_v) / s_v`.
    pub fn align_vision(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check(e)?;
        Ok(e.iter()
            .zip(self.mean_vision.iter())
            .map(|(x, m)| (x - m) / self.scale_vision)
            .collect())
    }

    /// `((e - m_l) / s_l) R^T`.
    pub fn align_language(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check(e)?;
        let centred = DVector::from_iterator(
            e.len(),
            e.iter()
                .zip(self.mean_language.iter())
                .map(|(x, m)| (x - m) / self.scale_language),
        );
        // row vector times R^T == R times column vector
        Ok((&self.rotation * centred).as_slice().to_vec())
    }

    /// Residual Frobenius norm between the aligned clouds.
    pub fn residual(&self, vision: &DMatrix<f64>, language: &DMatrix<f64>) -> Result<f64> {
        let mut sq = 0.0;
        for (v, l) in vision.row_iter().zip(language.row_iter()) {
            let v: Vec<f64> = v.iter().copied().collect();
            let l: Vec<f64> = l.iter().copied().collect();
            let a = self.align_vision(&v)?;
            let b = self.align_language(&l)?;
            sq += a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        Ok(libm::sqrt(sq))
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn centre(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        for (x, mu) in row.iter_mut().zip(mean.iter()) {
            *x -= mu;
        }
    }
    out
}

/// Orthogonal `R` minimising `|| a - b R^T ||_F`.
pub fn optimal_rotation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    let cross = b.tr_mul(a);
    let svd = cross.svd(true, true);
    let u = svd.u.ok_or(Error::Degenerate("SVD did not converge"))?;
    let v_t = svd.v_t.ok_or(Error::Degenerate("SVD did not converge"))?;
    // R^T = U V^T
    Ok((u * v_t).transpose())
}

/// Fits the refinement on row-paired embeddings; disabled components become identities.
pub fn fit_procrustes(
    vision: &DMatrix<f64>,
    language: &DMatrix<f64>,
    flags: AblationFlags,
) -> Result<ProcrustesTransform> {
    if vision.shape() != language.shape() {
        return Err(Error::DimensionMismatch {
            expected: vision.ncols(),
            actual: language.ncols(),
        });
    }
    if vision.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "Procrustes fit needs at least 2 rows".into(),
        ));
    }
    if !vision.iter().chain(language.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("embeddings"));
    }
    let dim = vision.ncols();
    let (mean_vision, mean_language) = if flags.translation {
        (column_means(vision), column_means(language))
    } else {
        (DVector::zeros(dim), DVector::zeros(dim))
    };
    let mut a = centre(vision, &mean_vision);
    let mut b = centre(language, &mean_language);
    let (scale_vision, scale_language) = if flags.scaling {
        let sv = a.norm();
        let sl = b.norm();
        if sv == 0.0 || sl == 0.0 {
            return Err(Error::Degenerate("zero Frobenius norm after centring"));
        }
        a /= sv;
        b /= sl;
        (sv, sl)
    } else {
        (1.0, 1.0)
    };
    let rotation = if flags.rotation {
        optimal_rotation(&a, &b)?
    } else {
        DMatrix::identity(dim, dim)
    };
    Ok(ProcrustesTransform {
        mean_vision,
        mean_language,
        scale_vision,
        scale_language,
        rotation,
        enabled: flags,
    })
}
