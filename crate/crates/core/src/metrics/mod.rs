//! Evaluation: Gaussian feature statistics and Fréchet distance, the probe
//! feature network, linear separability, path length and diversity.

mod paths;
mod probe;
mod report;
mod separability;

use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, symmetric_eigen, trace};
use crate::tensor::{gemm, Tensor};

pub use paths::{
    discriminator_accuracy, diversity, latent_divergence_diagnostic, latent_frechet_to_normal,
    perceptual_path_length, posterior_samples,
};
pub use probe::{desk_frechet, ProbeConfig, ProbeNet};
pub use report::{
    aggregate, evaluate, read_metric_csv, write_aggregate_csv, write_metric_csv, AggregateRow,
    MetricReport, MetricValue, RunInfo, Summary, METRIC_HEADER, METRIC_NAMES,
};
pub use separability::{linear_separability, SEPARABILITY_ITERS, SEPARABILITY_LR};

/// Negative Fréchet values down to this are treated as roundoff.
pub const FRECHET_CLAMP: f64 = -1e-6;

/// Anything that maps data rows to feature rows.
pub trait FeatureMap {
    fn features(&self, x: &Tensor) -> Result<Tensor>;
}

/// Uses the input itself as features.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl FeatureMap for IdentityFeatures {
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Tensor,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `N(0, I)` in `k` dimensions.
    pub fn standard_normal(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            cov: Tensor::eye(k),
            n: usize::MAX,
        }
    }
}

/// Sample mean and unbiased covariance of the rows of `features`.
pub fn fit_gaussian(features: &Tensor) -> Result<GaussianStats> {
    if features.rank() != 2 {
        return Err(Error::invalid("fit_gaussian expects an n×k matrix"));
    }
    let (n, k) = (features.rows(), features.cols());
    if n < 2 {
        return Err(Error::invalid(format!(
            "fit_gaussian needs n ≥ 2 samples, got {n}"
        )));
    }
    let mut mean = vec![0.0; k];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = features.data().to_vec();
    for row in centered.chunks_mut(k) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = vec![0.0; k * k];
    gemm(k, n, k, &centered, true, &centered, false, &mut cov, 0.0);
    let denom = (n - 1) as f64;
    for i in 0..k {
        for j in i..k {
            let s = 0.5 * (cov[i * k + j] + cov[j * k + i]) / denom;
            cov[i * k + j] = s;
            cov[j * k + i] = s;
        }
    }
    Ok(GaussianStats {
        mean,
        cov: Tensor::matrix(k, k, cov)?,
        n,
    })
}

fn check_psd(cov: &Tensor, which: &str) -> Result<()> {
    let (vals, _) = symmetric_eigen(cov)?;
    let scale = vals.first().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&low) = vals.last() {
        if low < -1e-8 * scale {
            return Err(Error::Domain {
                op: "frechet_distance",
                detail: format!("{which} covariance is not PSD (eigenvalue {low:.3e})"),
            });
        }
    }
    Ok(())
}

/// `‖μₐ − μᵦ‖² + Tr(Σₐ + Σᵦ − 2(√Σₐ Σᵦ √Σₐ)^½)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            op: "frechet_distance",
            lhs: vec![a.dim()],
            rhs: vec![b.dim()],
        });
    }
    check_psd(&a.cov, "first")?;
    check_psd(&b.cov, "second")?;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sa = sym_sqrt(&a.cov)?;
    let mut inner = sa.matmul(&b.cov)?.matmul(&sa)?;
    let k = a.dim();
    for i in 0..k {
        for j in i + 1..k {
            let s = 0.5 * (inner.get(i, j) + inner.get(j, i));
            inner.data_mut()[i * k + j] = s;
            inner.data_mut()[j * k + i] = s;
        }
    }
    let cross = trace(&sym_sqrt(&inner)?);
    let d = mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::NonFinite("frechet_distance".into()));
    }
    if d < 0.0 {
        if d > FRECHET_CLAMP {
            return Ok(0.0);
        }
        return Err(Error::Domain {
            op: "frechet_distance",
            detail: format!("negative distance {d:.3e} beyond roundoff"),
        });
    }
    Ok(d)
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_between(a: &Tensor, b: &Tensor) -> Result<f64> {
    frechet_distance(&fit_gaussian(a)?, &fit_gaussian(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn stats(mean: Vec<f64>, cov: Tensor) -> GaussianStats {
        GaussianStats { mean, cov, n: 100 }
    }

    #[test]
    fn two_point_fit() {
        let x = Tensor::matrix(2, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let s = fit_gaussian(&x).unwrap();
        assert_eq!(s.mean, vec![1.0, 0.0]);
        assert_eq!(s.cov.data(), &[2.0, 0.0, 0.0, 0.0]);
        assert!(fit_gaussian(&Tensor::zeros(vec![1, 2])).is_err());
    }

    #[test]
    fn identical_points_zero_cov() {
        let s = fit_gaussian(&Tensor::full(vec![5, 3], 0.7)).unwrap();
        assert!(s.cov.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn analytic_distances() {
        let a = stats(vec![0.0, 0.0], Tensor::eye(2));
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
        let b = stats(vec![3.0, 4.0], Tensor::eye(2));
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-9);
        let c = stats(
            vec![0.0, 0.0],
            Tensor::matrix(2, 2, vec![4.0, 0.0, 0.0, 4.0]).unwrap(),
        );
        assert!((frechet_distance(&a, &c).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = Rng::seed_from_u64(5);
        let x = rng.normal_tensor(vec![200, 4]);
        let y = rng.normal_tensor(vec![200, 4]).map(|v| 2.0 * v + 0.3);
        let (a, b) = (fit_gaussian(&x).unwrap(), fit_gaussian(&y).unwrap());
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
    }

    #[test]
    fn dimension_mismatch() {
        let a = GaussianStats::standard_normal(2);
        let b = GaussianStats::standard_normal(3);
        assert!(frechet_distance(&a, &b).is_err());
    }

    #[test]
    fn rejects_indefinite() {
        let a = GaussianStats::standard_normal(2);
        let bad = stats(
            vec![0.0, 0.0],
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap(),
        );
        assert!(frechet_distance(&a, &bad).is_err());
    }
}
