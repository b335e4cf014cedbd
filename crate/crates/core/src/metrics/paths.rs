//! Perceptual path length, sample diversity and latent-space divergence.

use crate::error::{Error, Result};
use crate::latent::{lerp, slerp, Space};
use crate::model::{LatentModel, ModelBundle};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{fit_gaussian, frechet_between, frechet_distance, FeatureMap, GaussianStats};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean of `‖φ(G(z(t))) − φ(G(z(t + ε)))‖² / ε²` over `n_pairs` random
/// endpoint pairs, with `t ∼ U[0, 1 − ε)`.
///
/// In `Z_0` endpoints are standard normal and the path is a slerp mapped
/// back through the flow. In `Z_T` the path is a lerp between prior
/// samples; with a flow prior these are the same base draws pushed through
/// `f⁻¹`, so both spaces see paired endpoints for a given seed.
pub fn perceptual_path_length(
    model: &dyn LatentModel,
    features: &dyn FeatureMap,
    space: Space,
    n_pairs: usize,
    eps: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!(
            "path length epsilon must be in (0, 1), got {eps}"
        )));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("path length needs at least 1 pair"));
    }
    if space == Space::Z0 && !model.has_flow() {
        return Err(Error::Unsupported(
            "Z0 path length requires a flow prior".into(),
        ));
    }
    let d = model.latent_dim();
    let (a, b) = if model.has_flow() {
        let a0 = rng.normal_tensor(vec![n_pairs, d]);
        let b0 = rng.normal_tensor(vec![n_pairs, d]);
        match space {
            Space::Z0 => (a0, b0),
            Space::ZT => (model.from_base(&a0)?, model.from_base(&b0)?),
        }
    } else {
        (
            model.sample_latent(rng, n_pairs)?,
            model.sample_latent(rng, n_pairs)?,
        )
    };
    let mut pts = Vec::with_capacity(2 * n_pairs * d);
    for i in 0..n_pairs {
        let t = rng.uniform() * (1.0 - eps);
        for s in [t, t + eps] {
            let p = match space {
                Space::Z0 => slerp(a.row(i), b.row(i), s)?,
                Space::ZT => lerp(a.row(i), b.row(i), s)?,
            };
            pts.extend(p);
        }
    }
    let pts = Tensor::matrix(2 * n_pairs, d, pts)?;
    let z = match space {
        Space::Z0 => model.from_base(&pts)?,
        Space::ZT => pts,
    };
    let f = features.features(&model.decode(&z)?)?;
    let total: f64 = (0..n_pairs)
        .map(|i| sq_dist(f.row(2 * i), f.row(2 * i + 1)))
        .sum();
    let ppl = total / (n_pairs as f64 * eps * eps);
    if !ppl.is_finite() {
        return Err(Error::NonFinite("perceptual_path_length".into()));
    }
    Ok(ppl)
}

/// Mean feature distance over `⌊n/2⌋` disjoint random pairs of samples.
pub fn diversity(
    model: &dyn LatentModel,
    features: &dyn FeatureMap,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("diversity needs at least 2 samples"));
    }
    let f = features.features(&model.decode(&model.sample_latent(rng, n)?)?)?;
    let perm = rng.permutation(n);
    let pairs = n / 2;
    let total: f64 = (0..pairs)
        .map(|i| sq_dist(f.row(perm[2 * i]), f.row(perm[2 * i + 1])).sqrt())
        .sum();
    Ok(total / pairs as f64)
}

/// Fréchet distance between Gaussian fits of aggregate-posterior samples
/// (one draw of `q(z|x)` for each of up to `n` random rows of `data`) and
/// `n` prior samples.
pub fn latent_divergence_diagnostic(
    bundle: &ModelBundle,
    data: &Tensor,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let q = posterior_samples(bundle, data, n, rng)?;
    let p = bundle.sample_latent(rng, n)?;
    frechet_between(&q, &p)
}

/// Accuracy of the model's discriminator at telling `n` prior samples
/// (labelled real, logit > 0) from `n` aggregate-posterior draws on `data`.
pub fn discriminator_accuracy(
    bundle: &ModelBundle,
    data: &Tensor,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let disc = bundle
        .disc
        .as_ref()
        .ok_or_else(|| Error::Unsupported("model has no discriminator".into()))?;
    let q = posterior_samples(bundle, data, n, rng)?;
    let p = bundle.sample_latent(rng, q.rows())?;
    let lq = disc.logit_values(&bundle.store, &q)?;
    let lp = disc.logit_values(&bundle.store, &p)?;
    let correct =
        lp.iter().filter(|&&l| l > 0.0).count() + lq.iter().filter(|&&l| l <= 0.0).count();
    Ok(correct as f64 / (lq.len() + lp.len()) as f64)
}

/// Up to `n` aggregate-posterior draws from random rows of `data`.
pub fn posterior_samples(
    bundle: &ModelBundle,
    data: &Tensor,
    n: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    if n < 2 || data.rows() < 2 {
        return Err(Error::invalid("latent divergence needs at least 2 samples"));
    }
    let mut idx = rng.permutation(data.rows());
    idx.truncate(n);
    bundle.encode_sample(&data.select_rows(&idx), rng)
}

/// Fréchet distance from the Gaussian fit of `z` to `N(0, I)`.
pub fn latent_frechet_to_normal(z: &Tensor) -> Result<f64> {
    let q = fit_gaussian(z)?;
    frechet_distance(&q, &GaussianStats::standard_normal(q.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::IdentityFeatures;

    /// `G(z) = A·z` with a standard normal prior.
    struct Linear {
        a: Tensor,
    }

    impl LatentModel for Linear {
        fn latent_dim(&self) -> usize {
            self.a.cols()
        }
        fn encode_mean(&self, _x: &Tensor) -> Result<Tensor> {
            unimplemented!()
        }
        fn decode(&self, z: &Tensor) -> Result<Tensor> {
            z.matmul(&self.a.transpose()?)
        }
        fn sample_latent(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
            Ok(rng.normal_tensor(vec![n, self.latent_dim()]))
        }
    }

    struct Constant;

    impl LatentModel for Constant {
        fn latent_dim(&self) -> usize {
            3
        }
        fn encode_mean(&self, _x: &Tensor) -> Result<Tensor> {
            unimplemented!()
        }
        fn decode(&self, z: &Tensor) -> Result<Tensor> {
            Ok(Tensor::full(vec![z.rows(), 5], 0.5))
        }
        fn sample_latent(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
            Ok(rng.normal_tensor(vec![n, 3]))
        }
    }

    #[test]
    fn constant_decoder_zero() {
        let mut rng = Rng::seed_from_u64(0);
        let p = perceptual_path_length(&Constant, &IdentityFeatures, Space::ZT, 50, 1e-4, &mut rng)
            .unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(
            diversity(&Constant, &IdentityFeatures, 10, &mut rng).unwrap(),
            0.0
        );
        assert!(
            perceptual_path_length(&Constant, &IdentityFeatures, Space::Z0, 5, 1e-4, &mut rng)
                .is_err()
        );
        assert!(
            perceptual_path_length(&Constant, &IdentityFeatures, Space::ZT, 5, 0.0, &mut rng)
                .is_err()
        );
    }

    #[test]
    fn linear_decoder_closed_form() {
        let a = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        let m = Linear { a: a.clone() };
        let n = 40;
        let mut rng = Rng::seed_from_u64(9);
        let ppl =
            perceptual_path_length(&m, &IdentityFeatures, Space::ZT, n, 1e-4, &mut rng).unwrap();
        // replay the same endpoint draws
        let mut rng = Rng::seed_from_u64(9);
        let za = rng.normal_tensor(vec![n, 2]);
        let zb = rng.normal_tensor(vec![n, 2]);
        let diff = Tensor::new(
            vec![n, 2],
            zb.data()
                .iter()
                .zip(za.data())
                .map(|(b, a)| b - a)
                .collect(),
        )
        .unwrap();
        let ad = diff.matmul(&a.transpose().unwrap()).unwrap();
        let expect = ad.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((ppl - expect).abs() / expect < 1e-6, "{ppl} vs {expect}");
    }

    #[test]
    fn diversity_chi_square() {
        let m = Linear { a: Tensor::eye(64) };
        let mut rng = Rng::seed_from_u64(1);
        let d = diversity(&m, &IdentityFeatures, 4000, &mut rng).unwrap();
        let target = 128f64.sqrt();
        assert!((d - target).abs() / target < 0.05, "{d}");
    }

    #[test]
    fn frechet_to_normal_of_normal_draws() {
        let mut rng = Rng::seed_from_u64(2);
        let z = rng.normal_tensor(vec![10_000, 2]);
        assert!(latent_frechet_to_normal(&z).unwrap() < 0.01);
    }
}
