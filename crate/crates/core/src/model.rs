//! The full generative autoencoder: encoder `φ`, decoder `ψ`, prior `θ` and
//! an optional latent discriminator `ω`, sharing one parameter store.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::flow::FlowStack;
use crate::nets::{map_rows_chunked, DecoderNet, EncoderNet, Init};
use crate::params::{ParamId, ParamStore};
use crate::prior::{Discriminator, Generator, Prior, PriorKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 500;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    /// Encoder trunk widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub prior: PriorKind,
    pub flow_depth: usize,
    pub flow_width: usize,
    pub gen_width: usize,
    pub gen_layers: usize,
    pub disc_width: usize,
    pub disc_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            data_dim: 784,
            latent_dim: 16,
            hidden: vec![512, 512],
            prior: PriorKind::Flow,
            flow_depth: 8,
            flow_width: 256,
            gen_width: 256,
            gen_layers: 3,
            disc_width: 256,
            disc_layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("data_dim and latent_dim must be positive"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.prior == PriorKind::Flow && self.latent_dim < 2 && self.flow_depth > 0 {
            return Err(Error::invalid("the flow prior needs latent_dim ≥ 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub prior: Prior,
    pub disc: Option<Discriminator>,
}

impl ModelBundle {
    /// Builds and initializes every network from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let encoder = EncoderNet::new(&mut store, c.data_dim, &c.hidden, c.latent_dim, &mut rng);
        let decoder = DecoderNet::new(&mut store, c.latent_dim, &c.hidden, c.data_dim, &mut rng);
        let prior = match c.prior {
            PriorKind::StandardNormal => Prior::StandardNormal { dim: c.latent_dim },
            PriorKind::Flow => Prior::Flow(FlowStack::new(
                &mut store,
                c.latent_dim,
                c.flow_depth,
                c.flow_width,
                &mut rng,
            )?),
            PriorKind::Adversarial => Prior::Adversarial(Generator::new(
                &mut store,
                c.latent_dim,
                c.gen_width,
                c.gen_layers,
                &mut rng,
            )),
        };
        let disc = (c.prior == PriorKind::Adversarial).then(|| {
            Discriminator::new(
                &mut store,
                c.latent_dim,
                c.disc_width,
                c.disc_layers,
                Init::Glorot,
                &mut rng,
            )
        });
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            prior,
            disc,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder.params()
    }

    pub fn decoder_params(&self) -> Vec<ParamId> {
        self.decoder.params()
    }

    pub fn prior_params(&self) -> Vec<ParamId> {
        self.prior.params()
    }

    pub fn disc_params(&self) -> Vec<ParamId> {
        self.disc
            .as_ref()
            .map(Discriminator::params)
            .unwrap_or_default()
    }

    pub fn log_gamma(&self) -> f64 {
        self.store.get(self.decoder.log_gamma).data()[0]
    }

    fn check_width(&self, x: &Tensor, width: usize, op: &'static str) -> Result<()> {
        if x.rank() != 2 || x.cols() != width {
            return Err(Error::Shape {
                op,
                lhs: x.shape().to_vec(),
                rhs: vec![width],
            });
        }
        Ok(())
    }

    /// Posterior means and log-variances for every row of `x`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_width(x, self.data_dim(), "encode")?;
        let d = self.latent_dim();
        let both = map_rows_chunked(x, EVAL_CHUNK, |chunk| {
            let mut g = Graph::new();
            let xv = g.constant(chunk.clone());
            let (m, lv) = self.encoder.encode(&mut g, &self.store, xv)?;
            let joined = g.concat(&[m, lv], 1)?;
            Ok(g.value(joined).clone())
        })?;
        let n = both.rows();
        let mut mean = Vec::with_capacity(n * d);
        let mut logvar = Vec::with_capacity(n * d);
        for r in 0..n {
            mean.extend_from_slice(&both.row(r)[..d]);
            logvar.extend_from_slice(&both.row(r)[d..]);
        }
        Ok((Tensor::matrix(n, d, mean)?, Tensor::matrix(n, d, logvar)?))
    }

    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode(x)?.0)
    }

    /// One reparameterized draw from `q(z|x)` per row.
    pub fn encode_sample(&self, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let (mean, logvar) = self.encode(x)?;
        let noise = rng.normal_tensor(mean.shape().to_vec());
        let data = mean
            .data()
            .iter()
            .zip(logvar.data())
            .zip(noise.data())
            .map(|((m, lv), u)| m + (0.5 * lv).exp() * u)
            .collect();
        Tensor::new(mean.shape().to_vec(), data)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_width(z, self.latent_dim(), "decode")?;
        map_rows_chunked(z, EVAL_CHUNK, |chunk| {
            let mut g = Graph::new();
            let zv = g.constant(chunk.clone());
            let out = self.decoder.decode(&mut g, &self.store, zv)?;
            Ok(g.value(out).clone())
        })
    }

    /// Posterior-mean reconstructions.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode_mean(x)?)
    }

    pub fn sample_latent(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        self.prior.sample(&self.store, rng, n)
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        self.decode(&self.sample_latent(rng, n)?)
    }

    /// Mean squared reconstruction error per pixel.
    pub fn recon_mse(&self, x: &Tensor) -> Result<f64> {
        let r = self.reconstruct(x)?;
        let sse: f64 = r
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sse / x.numel() as f64)
    }
}

/// What evaluation and latent-space tools need from a trained model.
pub trait LatentModel {
    fn latent_dim(&self) -> usize;
    fn encode_mean(&self, x: &Tensor) -> Result<Tensor>;
    fn decode(&self, z: &Tensor) -> Result<Tensor>;
    fn sample_latent(&self, rng: &mut Rng, n: usize) -> Result<Tensor>;

    fn has_flow(&self) -> bool {
        false
    }

    /// `Z_T → Z_0`.
    fn to_base(&self, _z: &Tensor) -> Result<Tensor> {
        Err(Error::Unsupported("Z0 space requires a flow prior".into()))
    }

    /// `Z_0 → Z_T`.
    fn from_base(&self, _z0: &Tensor) -> Result<Tensor> {
        Err(Error::Unsupported("Z0 space requires a flow prior".into()))
    }
}

impl LatentModel for ModelBundle {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        ModelBundle::encode_mean(self, x)
    }

    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        ModelBundle::decode(self, z)
    }

    fn sample_latent(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        ModelBundle::sample_latent(self, rng, n)
    }

    fn has_flow(&self) -> bool {
        self.prior.flow().is_some()
    }

    fn to_base(&self, z: &Tensor) -> Result<Tensor> {
        match self.prior.flow() {
            Some(f) => Ok(f.forward_values(&self.store, z)?.0),
            None => Err(Error::Unsupported("Z0 space requires a flow prior".into())),
        }
    }

    fn from_base(&self, z0: &Tensor) -> Result<Tensor> {
        match self.prior.flow() {
            Some(f) => Ok(f.inverse(&self.store, z0)?.z),
            None => Err(Error::Unsupported("Z0 space requires a flow prior".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(prior: PriorKind) -> ModelConfig {
        ModelConfig {
            data_dim: 6,
            latent_dim: 2,
            hidden: vec![8],
            prior,
            flow_depth: 2,
            flow_width: 8,
            gen_width: 8,
            gen_layers: 1,
            disc_width: 8,
            disc_layers: 1,
        }
    }

    #[test]
    fn param_groups_are_disjoint_and_complete() {
        let b = ModelBundle::new(tiny(PriorKind::Adversarial), 0).unwrap();
        let mut all = b.encoder_params();
        all.extend(b.decoder_params());
        all.push(b.decoder.log_gamma);
        all.extend(b.prior_params());
        all.extend(b.disc_params());
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), all.len());
        let trainable: Vec<_> = b
            .store
            .ids()
            .filter(|&id| b.store.is_trainable(id))
            .collect();
        assert_eq!(trainable.len(), all.len());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = ModelBundle::new(tiny(PriorKind::Flow), 7).unwrap();
        let b = ModelBundle::new(tiny(PriorKind::Flow), 7).unwrap();
        for id in a.store.ids() {
            assert_eq!(a.store.get(id), b.store.get(id));
        }
    }

    #[test]
    fn shapes_round_trip() {
        let b = ModelBundle::new(tiny(PriorKind::StandardNormal), 0).unwrap();
        let x = Tensor::full(vec![3, 6], 0.4);
        let (m, lv) = b.encode(&x).unwrap();
        assert_eq!((m.shape(), lv.shape()), (&[3, 2][..], &[3, 2][..]));
        let r = b.reconstruct(&x).unwrap();
        assert_eq!(r.shape(), &[3, 6]);
        assert!(r.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(b.decode(&Tensor::zeros(vec![1, 3])).is_err());
        assert!(b.encode(&Tensor::zeros(vec![1, 5])).is_err());
    }

    #[test]
    fn flow_needs_two_dims() {
        let mut cfg = tiny(PriorKind::Flow);
        cfg.latent_dim = 1;
        assert!(ModelBundle::new(cfg, 0).is_err());
    }
}
