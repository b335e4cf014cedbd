//! Latent priors `p_θ(z)`: fixed standard normal, normalizing flow, and an
//! adversarial MLP generator, plus the latent discriminator `D_ω`.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::flow::{std_normal_logpdf, FlowStack};
use crate::nets::{build_mlp, mlp_forward, Activation, BatchNorm, BnMode, DenseLayer, Init};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    StandardNormal,
    Flow,
    Adversarial,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::StandardNormal => "standard_normal",
            PriorKind::Flow => "flow",
            PriorKind::Adversarial => "adversarial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard_normal" | "normal" => Some(PriorKind::StandardNormal),
            "flow" => Some(PriorKind::Flow),
            "adversarial" | "aae" => Some(PriorKind::Adversarial),
            _ => None,
        }
    }
}

/// MLP generator: `(FC → BN → ReLU) × layers`, then a linear map to `Z`.
/// The noise dimension equals the latent dimension.
#[derive(Clone, Debug)]
pub struct Generator {
    pub hidden: Vec<(DenseLayer, BatchNorm)>,
    pub output: DenseLayer,
    pub noise_dim: usize,
}

impl Generator {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        width: usize,
        layers: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut hidden = Vec::with_capacity(layers);
        let mut fan_in = dim;
        for i in 0..layers {
            let name = format!("prior.gen.{i}");
            let dense = DenseLayer::new(
                store,
                &format!("{name}.fc"),
                fan_in,
                width,
                Activation::Identity,
                Init::Glorot,
                rng,
            );
            let bn = BatchNorm::new(store, &format!("{name}.bn"), width);
            hidden.push((dense, bn));
            fan_in = width;
        }
        let output = DenseLayer::new(
            store,
            "prior.gen.out",
            fan_in,
            dim,
            Activation::Identity,
            Init::Glorot,
            rng,
        );
        Self {
            hidden,
            output,
            noise_dim: dim,
        }
    }

    /// Trainable parameters (batchnorm running statistics excluded).
    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (dense, bn) in &self.hidden {
            ids.extend(dense.params());
            ids.extend(bn.params());
        }
        ids.extend(self.output.params());
        ids
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, u: Var, mode: BnMode) -> Result<Var> {
        let mut h = u;
        for (dense, bn) in &self.hidden {
            let a = dense.forward(g, store, h)?;
            let n = bn.forward(g, store, a, mode)?;
            h = g.relu(n)?;
        }
        self.output.forward(g, store, h)
    }
}

#[derive(Clone, Debug)]
pub enum Prior {
    StandardNormal { dim: usize },
    Flow(FlowStack),
    Adversarial(Generator),
}

impl Prior {
    pub fn kind(&self) -> PriorKind {
        match self {
            Prior::StandardNormal { .. } => PriorKind::StandardNormal,
            Prior::Flow(_) => PriorKind::Flow,
            Prior::Adversarial(_) => PriorKind::Adversarial,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::StandardNormal { dim } => *dim,
            Prior::Flow(f) => f.dim,
            Prior::Adversarial(gen) => gen.noise_dim,
        }
    }

    /// Trainable prior parameters `θ`.
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Prior::StandardNormal { .. } => Vec::new(),
            Prior::Flow(f) => f.params(),
            Prior::Adversarial(gen) => gen.params(),
        }
    }

    pub fn flow(&self) -> Option<&FlowStack> {
        match self {
            Prior::Flow(f) => Some(f),
            _ => None,
        }
    }

    /// Exact per-example log-density. Not available for the adversarial prior.
    pub fn log_prob(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let shape = g.shape(z);
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::Shape {
                op: "prior_log_prob",
                lhs: shape.to_vec(),
                rhs: vec![self.dim()],
            });
        }
        match self {
            Prior::StandardNormal { .. } => std_normal_logpdf(g, z),
            Prior::Flow(f) => f.log_prob(g, store, z),
            Prior::Adversarial(_) => Err(Error::Unsupported(
                "the adversarial prior has no tractable density".into(),
            )),
        }
    }

    pub fn log_prob_values(&self, store: &ParamStore, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let lp = self.log_prob(&mut g, store, zv)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// Draws on the graph so gradients can reach `θ`. Batchnorm in the
    /// generator follows `mode`.
    pub fn sample_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        rng: &mut Rng,
        n: usize,
        mode: BnMode,
    ) -> Result<Var> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        match self {
            Prior::StandardNormal { dim } => Ok(g.constant(rng.normal_tensor(vec![n, *dim]))),
            Prior::Flow(f) => Ok(g.constant(f.sample(store, rng, n)?)),
            Prior::Adversarial(gen) => {
                let u = g.constant(rng.normal_tensor(vec![n, gen.noise_dim]));
                gen.forward(g, store, u, mode)
            }
        }
    }

    /// `n` draws with batchnorm in eval mode.
    pub fn sample(&self, store: &ParamStore, rng: &mut Rng, n: usize) -> Result<Tensor> {
        match self {
            Prior::Flow(f) => f.sample(store, rng, n),
            _ => {
                let mut g = Graph::new();
                let z = self.sample_graph(&mut g, store, rng, n, BnMode::Eval)?;
                Ok(g.value(z).clone())
            }
        }
    }
}

/// Latent discriminator: `(FC → ReLU) × layers`, then one logit.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub layers: Vec<DenseLayer>,
    pub dim: usize,
}

impl Discriminator {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        width: usize,
        layers: usize,
        last_init: Init,
        rng: &mut Rng,
    ) -> Self {
        let mut widths = vec![dim];
        widths.extend(std::iter::repeat(width).take(layers));
        widths.push(1);
        let layers = build_mlp(
            store,
            "disc",
            &widths,
            Activation::Relu,
            Activation::Identity,
            last_init,
            rng,
        );
        Self { layers, dim }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(DenseLayer::params).collect()
    }

    /// Raw logit per example; `D(z) = sigmoid(logit)`.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let shape = g.shape(z);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::Shape {
                op: "discriminate",
                lhs: shape.to_vec(),
                rhs: vec![self.dim],
            });
        }
        let batch = shape[0];
        let out = mlp_forward(&self.layers, g, store, z)?;
        g.reshape(out, &[batch])
    }

    pub fn logit_values(&self, store: &ParamStore, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let l = self.logits(&mut g, store, zv)?;
        Ok(g.value(l).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;

    #[test]
    fn standard_normal_density_and_covariance() {
        let store = ParamStore::new();
        let prior = Prior::StandardNormal { dim: 2 };
        let lp = prior
            .log_prob_values(&store, &Tensor::zeros(vec![1, 2]))
            .unwrap();
        assert!((lp[0] + 1.83788).abs() < 1e-5);
        assert!(prior.params().is_empty());

        let n = 100_000;
        let s = prior.sample(&store, &mut Rng::seed_from_u64(1), n).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let c = (0..n).map(|r| s.get(r, a) * s.get(r, b)).sum::<f64>() / n as f64;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 0.02);
            }
        }
    }

    #[test]
    fn adversarial_prior_has_no_density() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let prior = Prior::Adversarial(Generator::new(&mut store, 2, 8, 2, &mut rng));
        let err = prior
            .log_prob_values(&store, &Tensor::zeros(vec![1, 2]))
            .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn zero_generator_output_gives_constant_samples() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let gen = Generator::new(&mut store, 3, 8, 2, &mut rng);
        store.set(gen.output.weight, Tensor::zeros(vec![8, 3]));
        let prior = Prior::Adversarial(gen);
        let s = prior.sample(&store, &mut rng, 5).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_generator_is_repeatable() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let prior = Prior::Adversarial(Generator::new(&mut store, 2, 8, 3, &mut rng));
        let a = prior.sample(&store, &mut Rng::seed_from_u64(5), 4).unwrap();
        let b = prior.sample(&store, &mut Rng::seed_from_u64(5), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_flow_prior_matches_standard_normal() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let flow = Prior::Flow(FlowStack::new(&mut store, 3, 4, 8, &mut rng).unwrap());
        // zero-init couplings still scale, so compare the empty stack
        let empty = Prior::Flow(FlowStack::new(&mut store, 3, 0, 8, &mut rng).unwrap());
        let normal = Prior::StandardNormal { dim: 3 };
        let z = rng.normal_tensor(vec![4, 3]);
        assert_eq!(
            empty.log_prob_values(&store, &z).unwrap(),
            normal.log_prob_values(&store, &z).unwrap()
        );
        assert!(flow
            .log_prob_values(&store, &z)
            .unwrap()
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn zero_discriminator_is_half() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let d = Discriminator::new(&mut store, 2, 8, 2, Init::Zero, &mut rng);
        let logits = d
            .logit_values(&store, &rng.normal_tensor(vec![6, 2]))
            .unwrap();
        assert!(logits.iter().all(|&l| l == 0.0 && sigmoid(l) == 0.5));
        assert!(d.logit_values(&store, &Tensor::zeros(vec![1, 3])).is_err());
    }
}
