//! Cosine and Euclidean distances, with gradients for training.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DistanceMetric {
    #[default]
    Cosine,
    Euclidean,
}

impl core::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown metric `{other}`"
            ))),
        }
    }
}

impl core::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclidean",
        })
    }
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    libm::sqrt(dot(u, u))
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(())
}

/// Distance between `u` and `v`.
///
/// Cosine distance is `1 - cos(u, v)`, clamped to `[0, 2]`; it is an error for
/// either argument to be the zero vector.
pub fn distance(u: &[f64], v: &[f64], metric: DistanceMetric) -> Result<f64> {
    check_dims(u, v)?;
    match metric {
        DistanceMetric::Cosine => {
            let nu = norm(u);
            let nv = norm(v);
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok((1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0))
        }
        DistanceMetric::Euclidean => Ok(libm::sqrt(
            u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum(),
        )),
    }
}

/// Distance plus its gradients with respect to `u` and `v`, written into `gu`/`gv`.
///
/// The Euclidean gradient at `u == v` is taken to be zero.
pub fn distance_with_grad(
    u: &[f64],
    v: &[f64],
    metric: DistanceMetric,
    gu: &mut [f64],
    gv: &mut [f64],
) -> Result<f64> {
    check_dims(u, v)?;
    check_dims(u, gu)?;
    check_dims(u, gv)?;
    match metric {
        DistanceMetric::Cosine => {
            let nu = norm(u);
            let nv = norm(v);
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::ZeroVector);
            }
            let uv = dot(u, v);
            let inv = 1.0 / (nu * nv);
            let cos = uv * inv;
            // d = 1 - cos; dcos/du = v/(|u||v|) - cos * u/|u|^2
            for i in 0..u.len() {
                gu[i] = -(v[i] * inv - cos * u[i] / (nu * nu));
                gv[i] = -(u[i] * inv - cos * v[i] / (nv * nv));
            }
            Ok(1.0 - cos)
        }
        DistanceMetric::Euclidean => {
            let d = libm::sqrt(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum());
            for i in 0..u.len() {
                let g = if d > 0.0 { (u[i] - v[i]) / d } else { 0.0 };
                gu[i] = g;
                gv[i] = -g;
            }
            Ok(d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        assert_eq!(
            distance(&[1.0, 0.0], &[1.0, 0.0], DistanceMetric::Cosine),
            Ok(0.0)
        );
        assert_eq!(
            distance(&[1.0, 0.0], &[0.0, 1.0], DistanceMetric::Cosine),
            Ok(1.0)
        );
        assert_eq!(
            distance(&[3.0, 0.0], &[0.0, 4.0], DistanceMetric::Euclidean),
            Ok(5.0)
        );
    }

    #[test]
    fn errors() {
        assert_eq!(
            distance(&[0.0, 0.0], &[1.0, 0.0], DistanceMetric::Cosine),
            Err(Error::ZeroVector)
        );
        assert_eq!(
            distance(&[1.0], &[1.0, 0.0], DistanceMetric::Euclidean),
            Err(Error::DimensionMismatch {
                expected: 1,
                actual: 2
            })
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let u = vec![0.3, -1.2, 0.7];
        let v = vec![-0.5, 0.4, 1.1];
        for metric in [DistanceMetric::Cosine, DistanceMetric::Euclidean] {
            let mut gu = vec![0.0; 3];
            let mut gv = vec![0.0; 3];
            distance_with_grad(&u, &v, metric, &mut gu, &mut gv).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += h;
                um[i] -= h;
                let fd = (distance(&up, &v, metric).unwrap() - distance(&um, &v, metric).unwrap())
                    / (2.0 * h);
                assert!((fd - gu[i]).abs() < 1e-7, "{metric} du[{i}]");
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[i] += h;
                vm[i] -= h;
                let fd = (distance(&u, &vp, metric).unwrap() - distance(&u, &vm, metric).unwrap())
                    / (2.0 * h);
                assert!((fd - gv[i]).abs() < 1e-7, "{metric} dv[{i}]");
            }
        }
    }

    fn nonzero_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn symmetric_and_self_zero(u in nonzero_vec(5), v in nonzero_vec(5)) {
            for metric in [DistanceMetric::Cosine, DistanceMetric::Euclidean] {
                let a = distance(&u, &v, metric).unwrap();
                let b = distance(&v, &u, metric).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(a >= 0.0);
            }
            prop_assert!(distance(&u, &u, DistanceMetric::Cosine).unwrap() < 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(u in nonzero_vec(6), v in nonzero_vec(6), s in 1e-3f64..1e3) {
            let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
            let a = distance(&u, &v, DistanceMetric::Cosine).unwrap();
            let b = distance(&scaled, &v, DistanceMetric::Cosine).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
