//! Latent-space manipulation: interpolation in `Z_T` or the flow base `Z_0`,
//! mean-difference directions, rate-of-change profiles along them, and PCA
//! traversal of the aggregate posterior.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::metrics::{fit_gaussian, FeatureMap};
use crate::model::LatentModel;
use crate::tensor::Tensor;

/// Below this `sin Ω`, slerp falls back to lerp.
pub const SLERP_FALLBACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// Flow base space (standard normal).
    Z0,
    /// Decoder input space.
    ZT,
}

impl Space {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "z0" => Some(Space::Z0),
            "zt" => Some(Space::ZT),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Space::Z0 => "z0",
            Space::ZT => "zT",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Lerp,
    Slerp,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lerp" => Some(Scheme::Lerp),
            "slerp" => Some(Scheme::Slerp),
            _ => None,
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "interpolation parameter t = {t} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_len(a: &[f64], b: &[f64], op: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

/// `(1 − t)·a + t·b`.
pub fn lerp(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    check_len(a, b, "lerp")?;
    check_t(t)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spherical interpolation; exact at both endpoints.
pub fn slerp(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    check_len(a, b, "slerp")?;
    check_t(t)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("slerp of a zero vector"));
    }
    if t == 0.0 {
        return Ok(a.to_vec());
    }
    if t == 1.0 {
        return Ok(b.to_vec());
    }
    let cos = (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let s = omega.sin();
    if s < SLERP_FALLBACK {
        return lerp(a, b, t);
    }
    let (wa, wb) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterpolationSpec {
    pub space: Space,
    pub scheme: Scheme,
    pub steps: usize,
}

impl InterpolationSpec {
    /// Lerp in `Z_T`, slerp in `Z_0`.
    pub fn standard(space: Space, steps: usize) -> Self {
        let scheme = match space {
            Space::Z0 => Scheme::Slerp,
            Space::ZT => Scheme::Lerp,
        };
        Self {
            space,
            scheme,
            steps,
        }
    }
}

fn interp(scheme: Scheme, a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    match scheme {
        Scheme::Lerp => lerp(a, b, t),
        Scheme::Slerp => slerp(a, b, t),
    }
}

/// Evenly spaced `t` in `[0, 1]`, hitting both ends exactly.
pub fn grid(steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect()
}

/// `Z_T` latents along the path from `za` to `zb` (both in `Z_T`).
pub fn interpolate_latents(
    model: &dyn LatentModel,
    za: &[f64],
    zb: &[f64],
    spec: &InterpolationSpec,
) -> Result<Tensor> {
    if spec.steps < 2 {
        return Err(Error::invalid("interpolation needs at least 2 steps"));
    }
    check_len(za, zb, "interpolate")?;
    let d = za.len();
    let (a, b) = match spec.space {
        Space::ZT => (za.to_vec(), zb.to_vec()),
        Space::Z0 => {
            let ends = model.to_base(&Tensor::matrix(2, d, [za, zb].concat())?)?;
            (ends.row(0).to_vec(), ends.row(1).to_vec())
        }
    };
    let mut path = Vec::with_capacity(spec.steps * d);
    for t in grid(spec.steps) {
        path.extend(interp(spec.scheme, &a, &b, t)?);
    }
    let path = Tensor::matrix(spec.steps, d, path)?;
    match spec.space {
        Space::ZT => Ok(path),
        Space::Z0 => model.from_base(&path),
    }
}

/// Decoded images interpolating between posterior means of `x_a` and `x_b`.
pub fn interpolate_sequence(
    model: &dyn LatentModel,
    x_a: &[f64],
    x_b: &[f64],
    spec: &InterpolationSpec,
) -> Result<Tensor> {
    if spec.space == Space::Z0 && !model.has_flow() {
        return Err(Error::Unsupported(
            "Z0 interpolation requires a flow prior".into(),
        ));
    }
    check_len(x_a, x_b, "interpolate_sequence")?;
    let z = model.encode_mean(&Tensor::matrix(2, x_a.len(), [x_a, x_b].concat())?)?;
    let path = interpolate_latents(model, z.row(0), z.row(1), spec)?;
    model.decode(&path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticDirection {
    pub vector: Vec<f64>,
    pub name: String,
    pub positives: usize,
    pub negatives: usize,
}

/// Mean of flagged rows minus mean of the others.
pub fn semantic_direction(
    latents: &Tensor,
    flags: &[bool],
    name: &str,
) -> Result<SemanticDirection> {
    if latents.rank() != 2 || latents.rows() != flags.len() {
        return Err(Error::Shape {
            op: "semantic_direction",
            lhs: latents.shape().to_vec(),
            rhs: vec![flags.len()],
        });
    }
    let d = latents.cols();
    let (mut pos, mut neg) = (vec![0.0; d], vec![0.0; d]);
    let (mut np, mut nn) = (0usize, 0usize);
    for (r, &f) in flags.iter().enumerate() {
        let (acc, count) = if f {
            (&mut pos, &mut np)
        } else {
            (&mut neg, &mut nn)
        };
        for (a, v) in acc.iter_mut().zip(latents.row(r)) {
            *a += v;
        }
        *count += 1;
    }
    if np == 0 || nn == 0 {
        return Err(Error::invalid(format!(
            "direction '{name}' needs both classes nonempty ({np} positive, {nn} negative)"
        )));
    }
    let vector = pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| p / np as f64 - n / nn as f64)
        .collect();
    Ok(SemanticDirection {
        vector,
        name: name.to_string(),
        positives: np,
        negatives: nn,
    })
}

/// Per-index percentiles of the feature distance between adjacent images.
#[derive(Clone, Debug, PartialEq)]
pub struct RateProfile {
    pub p5: Vec<f64>,
    pub median: Vec<f64>,
    pub p95: Vec<f64>,
}

impl RateProfile {
    pub fn len(&self) -> usize {
        self.median.len()
    }

    pub fn is_empty(&self) -> bool {
        self.median.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "p5", "median", "p95"])?;
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                self.p5[i].to_string(),
                self.median[i].to_string(),
                self.p95[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// For each base latent `z`, decodes `steps` points from `z` to
/// `z + direction` (lerp in `Z_T`, or slerp between the mapped endpoints in
/// `Z_0`) and aggregates adjacent feature distances per index.
pub fn rate_of_change_profile(
    model: &dyn LatentModel,
    features: &dyn FeatureMap,
    direction: &[f64],
    base: &Tensor,
    steps: usize,
    space: Space,
) -> Result<RateProfile> {
    if base.rank() != 2 || base.rows() == 0 || base.cols() != direction.len() {
        return Err(Error::Shape {
            op: "rate_of_change_profile",
            lhs: base.shape().to_vec(),
            rhs: vec![direction.len()],
        });
    }
    if steps < 2 {
        return Err(Error::invalid(
            "rate_of_change_profile needs at least 2 steps",
        ));
    }
    let spec = InterpolationSpec::standard(space, steps);
    let mut per_index: Vec<Vec<f64>> = vec![Vec::with_capacity(base.rows()); steps - 1];
    for r in 0..base.rows() {
        let z = base.row(r);
        let end: Vec<f64> = z.iter().zip(direction).map(|(a, b)| a + b).collect();
        let path = interpolate_latents(model, z, &end, &spec)?;
        let f = features.features(&model.decode(&path)?)?;
        for (k, slot) in per_index.iter_mut().enumerate() {
            let dist = f
                .row(k)
                .iter()
                .zip(f.row(k + 1))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            slot.push(dist);
        }
    }
    let mut profile = RateProfile {
        p5: Vec::with_capacity(steps - 1),
        median: Vec::with_capacity(steps - 1),
        p95: Vec::with_capacity(steps - 1),
    };
    for mut v in per_index {
        v.sort_by(f64::total_cmp);
        profile.p5.push(percentile(&v, 0.05));
        profile.median.push(percentile(&v, 0.5));
        profile.p95.push(percentile(&v, 0.95));
    }
    Ok(profile)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × d`, orthonormal rows.
    pub components: Tensor,
    pub variances: Vec<f64>,
}

/// Top-`k` principal components of the rows of `latents`. Each component's
/// largest-magnitude coordinate is made positive.
pub fn pca_fit(latents: &Tensor, k: usize) -> Result<Pca> {
    let stats = fit_gaussian(latents)?;
    let d = stats.dim();
    if k == 0 || k > d {
        return Err(Error::invalid(format!(
            "pca needs 1 ≤ k ≤ d = {d}, got k = {k}"
        )));
    }
    let (values, vecs) = symmetric_eigen(&stats.cov)?;
    let mut comps = Vec::with_capacity(k * d);
    for c in 0..k {
        let mut col: Vec<f64> = (0..d).map(|r| vecs.get(r, c)).collect();
        let lead = col.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if lead < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        comps.extend(col);
    }
    Ok(Pca {
        mean: stats.mean,
        components: Tensor::matrix(k, d, comps)?,
        variances: values[..k].iter().map(|v| v.max(0.0)).collect(),
    })
}

impl Pca {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    /// Component coordinates of each row.
    pub fn project(&self, z: &Tensor) -> Result<Tensor> {
        let mut c = z.clone();
        for r in 0..c.rows() {
            for (v, m) in c.row_mut(r).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        c.matmul(&self.components.transpose()?)
    }

    /// `mean + coordsᵀ·components`.
    pub fn unproject(&self, coords: &Tensor) -> Result<Tensor> {
        let mut z = coords.matmul(&self.components)?;
        for r in 0..z.rows() {
            for (v, m) in z.row_mut(r).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(z)
    }

    /// Latents moving `z` along component `index` by `s·σ` for `s` evenly
    /// spaced over `range`; every other coordinate (and the residual outside
    /// the fitted subspace) is untouched.
    pub fn traverse_latents(
        &self,
        z: &[f64],
        index: usize,
        range: (f64, f64),
        steps: usize,
    ) -> Result<Tensor> {
        if index >= self.k() {
            return Err(Error::invalid(format!(
                "component index {index} out of range (k = {})",
                self.k()
            )));
        }
        if z.len() != self.mean.len() {
            return Err(Error::Shape {
                op: "pca_traverse",
                lhs: vec![z.len()],
                rhs: vec![self.mean.len()],
            });
        }
        if steps == 0 {
            return Err(Error::invalid("pca_traverse needs at least 1 step"));
        }
        let sd = self.variances[index].sqrt();
        let dir = self.components.row(index);
        let mut out = Vec::with_capacity(steps * z.len());
        for t in grid(steps) {
            let s = range.0 + t * (range.1 - range.0);
            out.extend(z.iter().zip(dir).map(|(v, u)| v + s * sd * u));
        }
        Tensor::matrix(steps, z.len(), out)
    }
}

/// Decoded traversal of one principal component starting at the posterior
/// mean of `x`.
pub fn pca_traverse(
    model: &dyn LatentModel,
    x: &[f64],
    pca: &Pca,
    index: usize,
    range: (f64, f64),
    steps: usize,
) -> Result<Tensor> {
    let z = model.encode_mean(&Tensor::matrix(1, x.len(), x.to_vec())?)?;
    model.decode(&pca.traverse_latents(z.row(0), index, range, steps)?)
}
