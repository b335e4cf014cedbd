//! Normalizing-flow prior built from actnorm and affine coupling layers.
//!
//! Direction convention: `forward` maps the encoder space `Z_T` to the base
//! space `Z_0`, where codes should look standard normal. Sampling runs the
//! inverse.

use std::f64::consts::PI;

use crate::autodiff::{sigmoid, Graph, Var};
use crate::error::{Error, Result};
use crate::nets::{build_mlp, mlp_forward, Activation, DenseLayer, Init};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Constant added to the raw scale output before the sigmoid.
pub const SCALE_OFFSET: f64 = 2.0;
/// Smallest coupling scale used when inverting.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Smallest actnorm `|γ|` used when inverting.
pub const GAMMA_FLOOR: f64 = 1e-8;

/// Per-dimension `z ← γ ⊙ z + β`, initialized to the identity.
#[derive(Clone, Debug)]
pub struct Actnorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl Actnorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
            dim,
        }
    }

    /// Output and per-example log-determinant `Σ log|γᵢ|`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<(Var, Var)> {
        let batch = g.shape(z)[0];
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let scaled = g.mul(z, gamma)?;
        let out = g.add(scaled, beta)?;
        let abs = g.abs(gamma)?;
        let logs = g.log(abs)?;
        let total = g.sum(logs);
        let logdet = g.broadcast(total, &[batch])?;
        Ok((out, logdet))
    }

    fn inverse(&self, store: &ParamStore, z: &mut Tensor, logdet: &mut [f64], clamps: &mut usize) {
        let gamma = store.get(self.gamma).data();
        let beta = store.get(self.beta).data();
        let safe: Vec<f64> = gamma
            .iter()
            .map(|&gm| {
                if gm.abs() < GAMMA_FLOOR {
                    *clamps += 1;
                    GAMMA_FLOOR.copysign(gm)
                } else {
                    gm
                }
            })
            .collect();
        let ld: f64 = safe.iter().map(|v| v.abs().ln()).sum();
        for r in 0..z.rows() {
            for (j, v) in z.row_mut(r).iter_mut().enumerate() {
                *v = (*v - beta[j]) / safe[j];
            }
            logdet[r] -= ld;
        }
    }
}

/// Which block of coordinates conditions the transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    /// Coordinates `[0, c)` condition, `[c, d)` are transformed.
    FirstConditions,
    /// Coordinates `[c, d)` condition, `[0, c)` are transformed.
    SecondConditions,
}

/// Affine coupling: `(μ, s) = NN(z_a)`, `σ = sigmoid(s + 2)`,
/// `z_b ← σ ⊙ (z_b + μ)`.
///
/// `c = ⌈d/2⌉`. With `SecondConditions` the roles of the two blocks swap,
/// so a consecutive pair of couplings touches every coordinate even for odd
/// `d`.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub nn: Vec<DenseLayer>,
    pub parity: Parity,
    pub dim: usize,
    split: usize,
}

impl Coupling {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        width: usize,
        parity: Parity,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!(
                "coupling layers need dimension ≥ 2, got {dim}"
            )));
        }
        let split = dim.div_ceil(2);
        let (cond, trans) = match parity {
            Parity::FirstConditions => (split, dim - split),
            Parity::SecondConditions => (dim - split, split),
        };
        let nn = build_mlp(
            store,
            &format!("{name}.nn"),
            &[cond, width, width, 2 * trans],
            Activation::Relu,
            Activation::Identity,
            Init::Zero,
            rng,
        );
        Ok(Self {
            nn,
            parity,
            dim,
            split,
        })
    }

    /// `(conditioning range, transformed range)`.
    pub fn blocks(&self) -> ((usize, usize), (usize, usize)) {
        match self.parity {
            Parity::FirstConditions => ((0, self.split), (self.split, self.dim)),
            Parity::SecondConditions => ((self.split, self.dim), (0, self.split)),
        }
    }

    fn transformed_len(&self) -> usize {
        let (_, (s, e)) = self.blocks();
        e - s
    }

    /// Shift `μ` and raw scale from the conditioning block.
    fn shift_and_raw_scale(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        za: Var,
    ) -> Result<(Var, Var)> {
        let t = self.transformed_len();
        let h = mlp_forward(&self.nn, g, store, za)?;
        let mu = g.slice(h, 1, 0, t)?;
        let raw = g.slice(h, 1, t, 2 * t)?;
        Ok((mu, raw))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<(Var, Var)> {
        let ((ca, cb), (ta, tb)) = self.blocks();
        let za = g.slice(z, 1, ca, cb)?;
        let zb = g.slice(z, 1, ta, tb)?;
        let (mu, raw) = self.shift_and_raw_scale(g, store, za)?;
        let pre = g.add_scalar(raw, SCALE_OFFSET)?;
        let sigma = g.sigmoid(pre)?;
        let shifted = g.add(zb, mu)?;
        let out_b = g.mul(sigma, shifted)?;
        let log_sigma = g.log_sigmoid(pre)?;
        let logdet = g.sum_axis(log_sigma, 1)?;
        let out = match self.parity {
            Parity::FirstConditions => g.concat(&[za, out_b], 1)?,
            Parity::SecondConditions => g.concat(&[out_b, za], 1)?,
        };
        Ok((out, logdet))
    }

    fn inverse(
        &self,
        store: &ParamStore,
        z: &mut Tensor,
        logdet: &mut [f64],
        clamps: &mut usize,
    ) -> Result<()> {
        let ((ca, cb), (ta, tb)) = self.blocks();
        let t = tb - ta;
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let za = g.slice(zv, 1, ca, cb)?;
        let (mu, raw) = self.shift_and_raw_scale(&mut g, store, za)?;
        let (mu, raw) = (g.value(mu), g.value(raw));
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for j in 0..t {
                let mut sigma = sigmoid(raw.get(r, j) + SCALE_OFFSET);
                if sigma < SIGMA_FLOOR {
                    *clamps += 1;
                    sigma = SIGMA_FLOOR;
                }
                row[ta + j] = row[ta + j] / sigma - mu.get(r, j);
                logdet[r] -= sigma.ln();
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum FlowLayer {
    Actnorm(Actnorm),
    Coupling(Coupling),
}

/// Result of running a flow backwards.
#[derive(Clone, Debug)]
pub struct FlowInverse {
    pub z: Tensor,
    /// Per-example log-determinant of the inverse map.
    pub logdet: Vec<f64>,
    /// Number of scales that hit the inversion floor.
    pub clamped: usize,
}

/// `f = f_T ∘ … ∘ f_1` with alternating coupling parity and an actnorm in
/// front of couplings 1, 3, 5, …
#[derive(Clone, Debug)]
pub struct FlowStack {
    pub layers: Vec<FlowLayer>,
    pub dim: usize,
    pub depth: usize,
}

impl FlowStack {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        depth: usize,
        width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if depth > 0 && dim < 2 {
            return Err(Error::invalid(format!(
                "flow prior needs latent dimension ≥ 2, got {dim}"
            )));
        }
        let mut layers = Vec::new();
        for t in 0..depth {
            if t % 2 == 0 {
                layers.push(FlowLayer::Actnorm(Actnorm::new(
                    store,
                    &format!("prior.flow.{t}.actnorm"),
                    dim,
                )));
            }
            let parity = if t % 2 == 0 {
                Parity::FirstConditions
            } else {
                Parity::SecondConditions
            };
            layers.push(FlowLayer::Coupling(Coupling::new(
                store,
                &format!("prior.flow.{t}.coupling"),
                dim,
                width,
                parity,
                rng,
            )?));
        }
        Ok(Self { layers, dim, depth })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for layer in &self.layers {
            match layer {
                FlowLayer::Actnorm(a) => ids.extend([a.gamma, a.beta]),
                FlowLayer::Coupling(c) => ids.extend(c.nn.iter().flat_map(DenseLayer::params)),
            }
        }
        ids
    }

    fn check_width(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::Shape {
                op: "flow",
                lhs: shape.to_vec(),
                rhs: vec![self.dim],
            });
        }
        Ok(())
    }

    /// `Z_T → Z_0` with accumulated per-example log-determinant.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<(Var, Var)> {
        self.check_width(g.shape(z))?;
        let batch = g.shape(z)[0];
        let mut logdet = g.constant(Tensor::zeros(vec![batch]));
        let mut h = z;
        for layer in &self.layers {
            let (out, ld) = match layer {
                FlowLayer::Actnorm(a) => a.forward(g, store, h)?,
                FlowLayer::Coupling(c) => c.forward(g, store, h)?,
            };
            h = out;
            logdet = g.add(logdet, ld)?;
        }
        Ok((h, logdet))
    }

    /// Tensor-level forward without gradient tracking.
    pub fn forward_values(&self, store: &ParamStore, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let (out, ld) = self.forward(&mut g, store, zv)?;
        Ok((g.value(out).clone(), g.value(ld).data().to_vec()))
    }

    /// `Z_0 → Z_T`, applying analytic layer inverses in reverse order.
    pub fn inverse(&self, store: &ParamStore, z0: &Tensor) -> Result<FlowInverse> {
        self.check_width(z0.shape())?;
        let mut z = z0.clone();
        let mut logdet = vec![0.0; z.rows()];
        let mut clamped = 0;
        for layer in self.layers.iter().rev() {
            match layer {
                FlowLayer::Actnorm(a) => a.inverse(store, &mut z, &mut logdet, &mut clamped),
                FlowLayer::Coupling(c) => c.inverse(store, &mut z, &mut logdet, &mut clamped)?,
            }
        }
        Ok(FlowInverse { z, logdet, clamped })
    }

    /// Exact `log p(z) = log N(f(z); 0, I) + log|det ∂f/∂z|` per example.
    pub fn log_prob(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let (z0, logdet) = self.forward(g, store, z)?;
        let base = std_normal_logpdf(g, z0)?;
        g.add(base, logdet)
    }

    pub fn log_prob_values(&self, store: &ParamStore, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let lp = self.log_prob(&mut g, store, zv)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// `n` draws: base normal samples pushed through the inverse.
    pub fn sample(&self, store: &ParamStore, rng: &mut Rng, n: usize) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let z0 = rng.normal_tensor(vec![n, self.dim]);
        Ok(self.inverse(store, &z0)?.z)
    }
}

/// `Σᵢ log N(zᵢ; 0, 1)` per row.
pub fn std_normal_logpdf(g: &mut Graph, z: Var) -> Result<Var> {
    let d = g.shape(z)[1] as f64;
    let sq = g.square(z)?;
    let ss = g.sum_axis(sq, 1)?;
    let half = g.scale(ss, -0.5)?;
    g.add_scalar(half, -0.5 * d * (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomize(store: &mut ParamStore, ids: &[ParamId], rng: &mut Rng, scale: f64) {
        for &id in ids {
            let shape = store.get(id).shape().to_vec();
            let noise = rng.normal_tensor(shape).map(|v| v * scale);
            let cur = store.get(id).clone();
            let data = cur
                .data()
                .iter()
                .zip(noise.data())
                .map(|(a, b)| a + b)
                .collect();
            store.set(id, Tensor::new(cur.shape().to_vec(), data).unwrap());
        }
    }

    #[test]
    fn actnorm_identity_and_logdet() {
        let mut store = ParamStore::new();
        let a = Actnorm::new(&mut store, "a", 2);
        let mut g = Graph::new();
        let z = g.constant(Tensor::matrix(1, 2, vec![0.3, -1.0]).unwrap());
        let (out, ld) = a.forward(&mut g, &store, z).unwrap();
        assert_eq!(g.value(out), g.value(z));
        assert_eq!(g.value(ld).data(), &[0.0]);

        store.set(a.gamma, Tensor::vector(vec![2.0, 2.0]));
        let mut g = Graph::new();
        let z = g.constant(Tensor::matrix(1, 2, vec![0.3, -1.0]).unwrap());
        let (out, ld) = a.forward(&mut g, &store, z).unwrap();
        assert!((g.value(ld).data()[0] - 1.38629).abs() < 1e-5);
        let mut back = g.value(out).clone();
        let mut logdet = vec![0.0];
        let mut clamps = 0;
        a.inverse(&store, &mut back, &mut logdet, &mut clamps);
        assert!(back.max_abs_diff(g.value(z)) < 1e-10);
    }

    #[test]
    fn zero_init_coupling_scales_by_sigmoid_two() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let c = Coupling::new(&mut store, "c", 4, 8, Parity::FirstConditions, &mut rng).unwrap();
        let mut g = Graph::new();
        let z = g.constant(Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let (out, ld) = c.forward(&mut g, &store, z).unwrap();
        let s = sigmoid(2.0);
        assert!((s - 0.880797).abs() < 1e-6);
        let out = g.value(out).data();
        assert_eq!(&out[..2], &[1.0, 2.0]);
        assert!((out[2] - 3.0 * s).abs() < 1e-12 && (out[3] - 4.0 * s).abs() < 1e-12);
        assert!((g.value(ld).data()[0] - 2.0 * s.ln()).abs() < 1e-12);
    }

    #[test]
    fn coupling_rejects_dim_one() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        assert!(Coupling::new(&mut store, "c", 1, 8, Parity::FirstConditions, &mut rng).is_err());
    }

    #[test]
    fn conditioning_block_passes_through() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(4);
        for parity in [Parity::FirstConditions, Parity::SecondConditions] {
            let c =
                Coupling::new(&mut store, &format!("c{parity:?}"), 5, 6, parity, &mut rng).unwrap();
            let ids: Vec<_> = c.nn.iter().flat_map(DenseLayer::params).collect();
            randomize(&mut store, &ids, &mut rng, 0.5);
            let mut g = Graph::new();
            let x = rng.normal_tensor(vec![3, 5]);
            let z = g.constant(x.clone());
            let (out, _) = c.forward(&mut g, &store, z).unwrap();
            let ((ca, cb), _) = c.blocks();
            for r in 0..3 {
                assert_eq!(&g.value(out).row(r)[ca..cb], &x.row(r)[ca..cb]);
            }
        }
    }

    #[test]
    fn opposite_parities_touch_every_coordinate() {
        for dim in [2, 3, 5, 8] {
            let mut store = ParamStore::new();
            let mut rng = Rng::seed_from_u64(dim as u64);
            let flow = FlowStack::new(&mut store, dim, 2, 6, &mut rng).unwrap();
            let ids = flow.params();
            randomize(&mut store, &ids, &mut rng, 0.5);
            let x = rng.normal_tensor(vec![4, dim]);
            let (y, _) = flow.forward_values(&store, &x).unwrap();
            for (a, b) in x.data().iter().zip(y.data()) {
                assert!((a - b).abs() > 1e-9, "dim {dim}: coordinate unchanged");
            }
        }
    }

    #[test]
    fn empty_stack_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let flow = FlowStack::new(&mut store, 2, 0, 4, &mut rng).unwrap();
        let x = rng.normal_tensor(vec![3, 2]);
        let (y, ld) = flow.forward_values(&store, &x).unwrap();
        assert_eq!(y, x);
        assert!(ld.iter().all(|&v| v == 0.0));
        assert_eq!(flow.inverse(&store, &x).unwrap().z, x);
    }

    #[test]
    fn identity_init_depth_24_logdet() {
        let d = 4;
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let flow = FlowStack::new(&mut store, d, 24, 16, &mut rng).unwrap();
        let x = rng.normal_tensor(vec![2, d]);
        let (y, ld) = flow.forward_values(&store, &x).unwrap();
        let s = sigmoid(2.0);
        for v in &ld {
            assert!((v - 24.0 * (d as f64 / 2.0) * s.ln()).abs() < 1e-10);
        }
        // each half is scaled by σ on every other layer: 12 times
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((b - a * s.powi(12)).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_normal_log_density_values() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let flow = FlowStack::new(&mut store, 2, 0, 4, &mut rng).unwrap();
        let z = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let lp = flow.log_prob_values(&store, &z).unwrap();
        let c = -(2.0 * PI).ln();
        assert!((lp[0] - c).abs() < 1e-12);
        assert!((lp[0] + 1.83788).abs() < 1e-5);
        assert!((lp[1] - (c - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn inverse_logdet_is_negated_forward() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(8);
        let flow = FlowStack::new(&mut store, 3, 6, 8, &mut rng).unwrap();
        let ids = flow.params();
        randomize(&mut store, &ids, &mut rng, 0.3);
        let x = rng.normal_tensor(vec![5, 3]);
        let (y, ld) = flow.forward_values(&store, &x).unwrap();
        let inv = flow.inverse(&store, &y).unwrap();
        assert!(inv.z.max_abs_diff(&x) < 1e-10);
        for (a, b) in ld.iter().zip(&inv.logdet) {
            assert!((a + b).abs() < 1e-10);
        }
        assert_eq!(inv.clamped, 0);
    }

    #[test]
    fn samples_of_identity_stack_are_standard_normal() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let flow = FlowStack::new(&mut store, 2, 0, 4, &mut rng).unwrap();
        let n = 100_000;
        let s = flow.sample(&store, &mut rng, n).unwrap();
        for c in 0..2 {
            let m = (0..n).map(|r| s.get(r, c)).sum::<f64>() / n as f64;
            assert!(m.abs() < 3.0 / (n as f64).sqrt());
        }
        let lp = flow.log_prob_values(&store, &s).unwrap();
        assert!(lp.iter().all(|v| v.is_finite()));
        let again = flow.sample(&store, &mut Rng::seed_from_u64(0), n).unwrap();
        let first = flow.sample(&store, &mut Rng::seed_from_u64(0), n).unwrap();
        assert_eq!(again, first);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let flow = FlowStack::new(&mut store, 4, 2, 4, &mut rng).unwrap();
        assert!(flow
            .forward_values(&store, &Tensor::zeros(vec![2, 3]))
            .is_err());
        assert!(flow.inverse(&store, &Tensor::zeros(vec![2, 3])).is_err());
    }
}
