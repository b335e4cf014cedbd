//! Seeded synthetic datasets: 2-D mixtures embedded in a higher-dimensional
//! space by a random orthonormal map, then affinely scaled into `[0, 1]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Dataset, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    GaussianMixture,
    TwoMoons,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::GaussianMixture => "gaussian_mixture",
            SynthKind::TwoMoons => "two_moons",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SynthKind,
    /// Mixture components (two moons always has 2).
    pub modes: usize,
    pub data_dim: usize,
    /// Isotropic noise standard deviation in the 2-D plane.
    pub noise: f64,
    /// Distance between neighbouring mixture centers in units of `noise`.
    /// Scales the moons for `TwoMoons`.
    pub separation: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::GaussianMixture,
            modes: 2,
            data_dim: 16,
            noise: 1.0,
            separation: 10.0,
            n: 2000,
            seed: 0,
        }
    }
}

/// Generated data plus the per-mode centers in the same output space.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub centers: Tensor,
}

/// `data_dim × 2` matrix with orthonormal columns (Gram–Schmidt on normals).
fn orthonormal_map(rng: &mut Rng, dim: usize) -> Vec<[f64; 2]> {
    let mut a: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let mut b: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    a.iter_mut().for_each(|v| *v /= na);
    let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    b.iter_mut().zip(&a).for_each(|(y, x)| *y -= proj * x);
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    b.iter_mut().for_each(|v| *v /= nb);
    a.into_iter().zip(b).map(|(x, y)| [x, y]).collect()
}

pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.data_dim < 2 {
        return Err(Error::invalid("synthetic data_dim must be ≥ 2"));
    }
    if spec.n == 0 || !(spec.noise > 0.0) {
        return Err(Error::invalid("synthetic n must be ≥ 1 and noise > 0"));
    }
    let modes = match spec.kind {
        SynthKind::GaussianMixture => spec.modes,
        SynthKind::TwoMoons => 2,
    };
    if modes < 1 {
        return Err(Error::invalid("synthetic modes must be ≥ 1"));
    }
    let mut rng = Rng::seed_from_u64(spec.seed);
    let map = orthonormal_map(&mut rng, spec.data_dim);

    let mut plane = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut centers2 = Vec::with_capacity(modes);
    match spec.kind {
        SynthKind::GaussianMixture => {
            let step = spec.separation * spec.noise;
            let radius = if modes == 1 {
                0.0
            } else {
                step / (2.0 * (PI / modes as f64).sin())
            };
            for k in 0..modes {
                let a = 2.0 * PI * k as f64 / modes as f64;
                centers2.push([radius * a.cos(), radius * a.sin()]);
            }
            for i in 0..spec.n {
                let k = i % modes;
                let c = centers2[k];
                plane.push([
                    c[0] + spec.noise * rng.normal(),
                    c[1] + spec.noise * rng.normal(),
                ]);
                labels.push(k);
            }
        }
        SynthKind::TwoMoons => {
            let s = spec.separation * spec.noise / 2.0;
            centers2.push([0.0, s * 2.0 / PI]);
            centers2.push([s, s * (0.5 - 2.0 / PI)]);
            for i in 0..spec.n {
                let k = i % 2;
                let t = PI * rng.uniform();
                let p = if k == 0 {
                    [t.cos(), t.sin()]
                } else {
                    [1.0 - t.cos(), 0.5 - t.sin()]
                };
                plane.push([
                    s * p[0] + spec.noise * rng.normal(),
                    s * p[1] + spec.noise * rng.normal(),
                ]);
                labels.push(k);
            }
        }
    }

    let embed =
        |p: [f64; 2]| -> Vec<f64> { map.iter().map(|m| m[0] * p[0] + m[1] * p[1]).collect() };
    let raw: Vec<Vec<f64>> = plane.into_iter().map(embed).collect();
    let (lo, hi) = raw
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let squash = |v: f64| (v - lo) / span;

    let images = Tensor::new(
        vec![spec.n, spec.data_dim],
        raw.iter().flatten().map(|&v| squash(v)).collect(),
    )?;
    let centers = Tensor::new(
        vec![modes, spec.data_dim],
        centers2.into_iter().flat_map(embed).map(squash).collect(),
    )?;
    Ok(SyntheticData {
        dataset: Dataset {
            images,
            labels: Some(labels),
            split: Split::Train,
            source: format!("synthetic:{}", spec.kind.name()),
            image_shape: None,
        },
        centers,
    })
}
