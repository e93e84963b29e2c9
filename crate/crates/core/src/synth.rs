//! Deterministic paired datasets with a known latent class structure.
//!
//! Every pair shares one latent point (its class centre plus isotropic
//! Gaussian noise). The vision and language vectors are two independent fixed
//! random maps of that point, optionally passed through `tanh`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, PairRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Nonlinearity {
    Linear,
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub latent_dim: usize,
    pub dim_vision: usize,
    pub dim_language: usize,
    /// Radius of the sphere class centres are drawn on.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 5,
            per_class: 40,
            latent_dim: 8,
            dim_vision: 64,
            dim_language: 48,
            class_separation: 2.0,
            noise_sigma: 0.3,
            nonlinearity: Nonlinearity::Tanh,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_classes,
            self.per_class,
            self.latent_dim,
            self.dim_vision,
            self.dim_language,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument(
                "synthetic counts and dimensions must be at least 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise_sigma must be finite and non-negative".into(),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::InvalidArgument(
                "class_separation must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A generated dataset together with the latent points behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// One row per record.
    pub latents: DMatrix<f64>,
    /// Class index of each record.
    pub classes: Vec<usize>,
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(generate_with_latents(cfg)?.dataset)
}

pub fn generate_with_latents(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.latent_dim;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let centres: Vec<DVector<f64>> = (0..cfg.n_classes)
        .map(|_| loop {
            let v = DVector::from_fn(d, |_, _| normal(&mut rng));
            let n = v.norm();
            if n > 0.0 {
                break v * (cfg.class_separation / n);
            }
        })
        .collect();
    let map_scale = 1.0 / libm::sqrt(d as f64);
    let map_v = DMatrix::from_fn(cfg.dim_vision, d, |_, _| normal(&mut rng) * map_scale);
    let map_l = DMatrix::from_fn(cfg.dim_language, d, |_, _| normal(&mut rng) * map_scale);

    let squash = |v: DVector<f64>| -> Vec<f64> {
        match cfg.nonlinearity {
            Nonlinearity::Linear => v.as_slice().to_vec(),
            Nonlinearity::Tanh => v.iter().map(|&x| libm::tanh(x)).collect(),
        }
    };

    let n = cfg.n_classes * cfg.per_class;
    let mut latents = DMatrix::zeros(n, d);
    let mut classes = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let width = format!("{}", n.saturating_sub(1)).len();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let z = DVector::from_fn(d, |i, _| centre[i] + cfg.noise_sigma * normal(&mut rng));
            let idx = records.len();
            latents.set_row(idx, &z.transpose());
            classes.push(c);
            records.push(PairRecord {
                pair_id: format!("p{idx:0width$}"),
                class_label: Some(format!("class{c}")),
                vision: squash(&map_v * &z),
                language: squash(&map_l * &z),
            });
        }
    }
    Ok(SynthOutput {
        dataset: Dataset::new(records)?,
        latents,
        classes,
    })
}
