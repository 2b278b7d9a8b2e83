//! von Mises-Fisher sampling on the unit hypersphere.
//!
//! Wood's rejection sampler draws the component along the mean direction;
//! the tangent component is uniform on the orthogonal sphere. Samples are
//! built around the north pole `e1` and reflected onto `mu` with a
//! Householder map. The normalizer is never evaluated.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::stream;

const UNIT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub kappa: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl VmfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.sample_count == 0 {
            return Err(Error::invalid("sample_count must be positive"));
        }
        Ok(())
    }
}

/// Returns `1 - w`, where `w = mu . x` for a vMF draw in `dim` dimensions.
///
/// Working with `1 - w` keeps precision when kappa is large and `w` sits
/// within ~1e-7 of 1.
fn sample_one_minus_w<R: Rng + ?Sized>(rng: &mut R, dim: usize, kappa: f64) -> f64 {
    let m = (dim - 1) as f64;
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    // 1 - x0^2 == 4b / (1 + b)^2
    let c = kappa * x0 + m * (4.0 * b / ((1.0 + b) * (1.0 + b))).ln();
    let beta = Beta::new(m / 2.0, m / 2.0).expect("shape parameters are positive");
    loop {
        let z: f64 = beta.sample(rng);
        let denom = 1.0 - (1.0 - b) * z;
        let one_minus_w = 2.0 * b * z / denom;
        let w = 1.0 - one_minus_w;
        let u: f64 = rng.random();
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            return one_minus_w;
        }
    }
}

/// One vMF draw with mean direction `mu` and concentration `kappa`.
pub fn vmf_sample<R: Rng + ?Sized>(mu: &[f32], kappa: f64, rng: &mut R) -> Result<Vec<f32>> {
    let dim = mu.len();
    if dim < 2 {
        return Err(Error::invalid(format!("vMF needs dim >= 2, got {dim}")));
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
    }
    let mu: Vec<f64> = mu.iter().map(|&v| f64::from(v)).collect();
    let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit(norm));
    }
    let mu: Vec<f64> = mu.iter().map(|v| v / norm).collect();

    let one_minus_w = sample_one_minus_w(rng, dim, kappa);
    let w = 1.0 - one_minus_w;
    let radial = (one_minus_w * (2.0 - one_minus_w)).max(0.0).sqrt();

    let tangent = loop {
        let v: Vec<f64> = (1..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    let mut x = Vec::with_capacity(dim);
    x.push(w);
    x.extend(tangent.iter().map(|t| radial * t));

    // Householder reflection sending e1 to mu.
    let mut u = mu.iter().map(|v| -v).collect::<Vec<_>>();
    u[0] += 1.0;
    let uu: f64 = u.iter().map(|v| v * v).sum();
    if uu > 1e-24 {
        let ux: f64 = u.iter().zip(&x).map(|(a, b)| a * b).sum();
        let scale = 2.0 * ux / uu;
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi -= scale * ui;
        }
    }

    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(x.into_iter().map(|v| (v / n) as f32).collect())
}

/// `sample_count` vMF draws around each class embedding, one matrix per
/// class. Each class draws from its own stream.
pub fn vmf_noise_ensemble(class_embeddings: &EmbeddingMatrix, params: &VmfParams) -> Result<Vec<EmbeddingMatrix>> {
    params.validate()?;
    (0..class_embeddings.rows())
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(params.seed, &format!("vmf/{c}"));
            let mu = class_embeddings.row(c);
            let mut data = Vec::with_capacity(params.sample_count * mu.len());
            for _ in 0..params.sample_count {
                data.extend(vmf_sample(mu, params.kappa, &mut rng)?);
            }
            let base = &class_embeddings.keys()[c];
            let keys = (0..params.sample_count).map(|k| format!("{base}#vmf{k}")).collect();
            EmbeddingMatrix::new(mu.len(), data, keys)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::normalize;

    fn unit(v: &[f32]) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn mean_cos(mu: &[f32], kappa: f64, draws: usize, seed: u64) -> f64 {
        let mut rng = stream(seed, "test");
        (0..draws)
            .map(|_| {
                let x = vmf_sample(mu, kappa, &mut rng).unwrap();
                mu.iter().zip(&x).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>()
            })
            .sum::<f64>()
            / draws as f64
    }

    #[test]
    fn outputs_are_unit_vectors() {
        let mu = unit(&[0.3, -1.0, 2.0, 0.5]);
        let mut rng = stream(1, "t");
        for kappa in [0.0, 1.0, 50.0, 1e6] {
            for _ in 0..200 {
                let x = vmf_sample(&mu, kappa, &mut rng).unwrap();
                let n = x.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() <= 1e-5, "{n}");
            }
        }
    }

    #[test]
    fn very_high_concentration_hugs_the_mean() {
        let mu = unit(&[1.0, 2.0, 3.0, 4.0]);
        let mut rng = stream(2, "t");
        for _ in 0..1000 {
            let x = vmf_sample(&mu, 1e6, &mut rng).unwrap();
            let cos: f32 = mu.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!(cos >= 0.999);
        }
    }

    #[test]
    fn zero_concentration_is_uniform_on_average() {
        let mu = unit(&[0.0, 0.0, 1.0]);
        assert!(mean_cos(&mu, 0.0, 10_000, 3).abs() <= 0.05);
    }

    #[test]
    fn mean_cosine_matches_bessel_ratio_in_three_dims() {
        // In d = 3 the expected cosine is coth(k) - 1/k.
        let mu = unit(&[1.0, 1.0, 0.0]);
        for kappa in [1.0_f64, 5.0, 20.0] {
            let expected = 1.0 / kappa.tanh() - 1.0 / kappa;
            let got = mean_cos(&mu, kappa, 20_000, 4);
            assert!((got - expected).abs() < 0.01, "kappa {kappa}: {got} vs {expected}");
        }
    }

    #[test]
    fn north_pole_mean_skips_reflection() {
        let mu = [1.0_f32, 0.0, 0.0];
        let mut rng = stream(5, "t");
        let x = vmf_sample(&mu, 1e6, &mut rng).unwrap();
        assert!(x[0] > 0.999);
    }

    #[test]
    fn bad_inputs() {
        let mut rng = stream(0, "t");
        assert!(vmf_sample(&[1.0], 1.0, &mut rng).is_err());
        assert!(matches!(vmf_sample(&[1.0, 1.0], 1.0, &mut rng), Err(Error::NotUnit(_))));
        assert!(vmf_sample(&[1.0, 0.0], -1.0, &mut rng).is_err());
    }

    #[test]
    fn ensemble_shape_and_determinism() {
        let classes = normalize(
            &EmbeddingMatrix::from_rows(4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let params = VmfParams {
            kappa: 100.0,
            sample_count: 30,
            seed: 7,
        };
        let a = vmf_noise_ensemble(&classes, &params).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|m| m.rows() == 30 && m.dim() == 4));
        let b = vmf_noise_ensemble(&classes, &params).unwrap();
        assert_eq!(a, b);
        assert!(vmf_noise_ensemble(
            &classes,
            &VmfParams {
                sample_count: 0,
                ..params
            }
        )
        .is_err());
    }
}
