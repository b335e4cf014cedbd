//! Fully connected layers, batch normalization, and the encoder/decoder
//! networks of the autoencoder.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Posterior log-variances are clamped to this range before use.
pub const LOGVAR_CLAMP: (f64, f64) = (-20.0, 20.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Glorot,
    Zero,
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `fan_in × fan_out` matrix of i.i.d. draws from `U[−L, L]`,
/// `L = √(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}

/// `activation(x·W + b)`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let w = match init {
            Init::Glorot => glorot_uniform(fan_in, fan_out, rng),
            Init::Zero => Tensor::zeros(vec![fan_in, fan_out]),
        };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])),
            fan_in,
            fan_out,
            activation,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// Affine part only.
    pub fn linear(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.linear(g, store, x)?;
        self.activation.apply(g, h)
    }
}

/// Sequential application of `layers`.
pub fn mlp_forward(
    layers: &[DenseLayer],
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
) -> Result<Var> {
    layers
        .iter()
        .try_fold(x, |h, layer| layer.forward(g, store, h))
}

/// Builds `widths[0] → … → widths[n]` with `hidden` activations between
/// layers and `last` on the output.
#[allow(clippy::too_many_arguments)]
pub fn build_mlp(
    store: &mut ParamStore,
    name: &str,
    widths: &[usize],
    hidden: Activation,
    last: Activation,
    last_init: Init,
    rng: &mut Rng,
) -> Vec<DenseLayer> {
    let n = widths.len() - 1;
    (0..n)
        .map(|i| {
            let (act, init) = if i + 1 == n {
                (last, last_init)
            } else {
                (hidden, Init::Glorot)
            };
            DenseLayer::new(
                store,
                &format!("{name}.{i}"),
                widths[i],
                widths[i + 1],
                act,
                init,
                rng,
            )
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-feature batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub features: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            scale: store.add(format!("{name}.scale"), Tensor::ones(vec![features])),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(vec![features])),
            running_mean: store.add_buffer(
                format!("{name}.running_mean"),
                Tensor::zeros(vec![features]),
            ),
            running_var: store
                .add_buffer(format!("{name}.running_var"), Tensor::ones(vec![features])),
            features,
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.scale, self.shift]
    }

    /// In train mode, normalizes by batch statistics and queues the running
    /// average update on the graph (see [`Graph::take_buffer_updates`]).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: BnMode) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.features {
            return Err(Error::Shape {
                op: "batchnorm",
                lhs: shape,
                rhs: vec![self.features],
            });
        }
        let batch = shape[0];
        let normalized = match mode {
            BnMode::Train => {
                if batch < 2 {
                    return Err(Error::invalid(
                        "batch normalization in train mode needs a batch of at least 2",
                    ));
                }
                let mean = g.mean_axis(x, 0)?;
                let centered = g.sub(x, mean)?;
                let sq = g.square(centered)?;
                let var = g.mean_axis(sq, 0)?;
                let var_eps = g.add_scalar(var, self.eps)?;
                let std = g.sqrt(var_eps)?;

                let m = self.momentum;
                let unbias = batch as f64 / (batch as f64 - 1.0);
                let rm = blend(store.get(self.running_mean), g.value(mean), m, 1.0);
                let rv = blend(store.get(self.running_var), g.value(var), m, unbias);
                g.push_buffer_update(self.running_mean, rm);
                g.push_buffer_update(self.running_var, rv);
                g.div(centered, std)?
            }
            BnMode::Eval => {
                let rm = g.constant(store.get(self.running_mean).clone());
                let rv = store.get(self.running_var).map(|v| (v + self.eps).sqrt());
                let rstd = g.constant(rv);
                let centered = g.sub(x, rm)?;
                g.div(centered, rstd)?
            }
        };
        let scale = g.param(store, self.scale);
        let shift = g.param(store, self.shift);
        let scaled = g.mul(normalized, scale)?;
        g.add(scaled, shift)
    }
}

fn blend(running: &Tensor, batch: &Tensor, momentum: f64, factor: f64) -> Tensor {
    let data = running
        .data()
        .iter()
        .zip(batch.data())
        .map(|(r, b)| momentum * r + (1.0 - momentum) * b * factor)
        .collect();
    Tensor::new(running.shape().to_vec(), data).expect("same shape")
}

/// Diagonal-Gaussian posterior `q(z|x)`.
#[derive(Clone, Debug)]
pub struct EncoderNet {
    pub trunk: Vec<DenseLayer>,
    pub mean_head: DenseLayer,
    pub logvar_head: DenseLayer,
}

impl EncoderNet {
    pub fn new(
        store: &mut ParamStore,
        data_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut widths = vec![data_dim];
        widths.extend_from_slice(hidden);
        let trunk = build_mlp(
            store,
            "encoder.trunk",
            &widths,
            Activation::Relu,
            Activation::Relu,
            Init::Glorot,
            rng,
        );
        let feat = *widths.last().expect("non-empty");
        let mean_head = DenseLayer::new(
            store,
            "encoder.mean",
            feat,
            latent_dim,
            Activation::Identity,
            Init::Glorot,
            rng,
        );
        let logvar_head = DenseLayer::new(
            store,
            "encoder.logvar",
            feat,
            latent_dim,
            Activation::Identity,
            Init::Glorot,
            rng,
        );
        Self {
            trunk,
            mean_head,
            logvar_head,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.trunk
            .iter()
            .chain([&self.mean_head, &self.logvar_head])
            .flat_map(DenseLayer::params)
            .collect()
    }

    /// Posterior mean and clamped log-variance, each `[batch × d]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let h = mlp_forward(&self.trunk, g, store, x)?;
        let mean = self.mean_head.forward(g, store, h)?;
        let raw = self.logvar_head.forward(g, store, h)?;
        let logvar = g.clamp(raw, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1)?;
        Ok((mean, logvar))
    }
}

/// `z = mean + exp(logvar / 2) ⊙ u`, `u ~ N(0, I)` drawn from `rng`.
pub fn reparameterize(g: &mut Graph, mean: Var, logvar: Var, rng: &mut Rng) -> Result<Var> {
    let shape = g.shape(mean).to_vec();
    if g.shape(logvar) != shape.as_slice() {
        return Err(Error::Shape {
            op: "reparameterize",
            lhs: shape,
            rhs: g.shape(logvar).to_vec(),
        });
    }
    let noise = g.constant(rng.normal_tensor(shape));
    let half = g.scale(logvar, 0.5)?;
    let std = g.exp(half)?;
    let scaled = g.mul(std, noise)?;
    g.add(mean, scaled)
}

/// Deterministic generator `G(z)` with a sigmoid output in `[0, 1]`, plus the
/// scalar `log γ` used when the decoder variance is learned.
#[derive(Clone, Debug)]
pub struct DecoderNet {
    pub trunk: Vec<DenseLayer>,
    pub output: DenseLayer,
    pub log_gamma: ParamId,
}

impl DecoderNet {
    pub fn new(
        store: &mut ParamStore,
        latent_dim: usize,
        hidden: &[usize],
        data_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut widths = vec![latent_dim];
        widths.extend(hidden.iter().rev());
        let trunk = build_mlp(
            store,
            "decoder.trunk",
            &widths,
            Activation::Relu,
            Activation::Relu,
            Init::Glorot,
            rng,
        );
        let output = DenseLayer::new(
            store,
            "decoder.output",
            *widths.last().expect("non-empty"),
            data_dim,
            Activation::Sigmoid,
            Init::Glorot,
            rng,
        );
        let log_gamma = store.add("decoder.log_gamma", Tensor::vector(vec![0.0]));
        Self {
            trunk,
            output,
            log_gamma,
        }
    }

    /// Network weights, excluding `log_gamma`.
    pub fn params(&self) -> Vec<ParamId> {
        self.trunk
            .iter()
            .chain([&self.output])
            .flat_map(DenseLayer::params)
            .collect()
    }

    pub fn decode(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let h = mlp_forward(&self.trunk, g, store, z)?;
        self.output.forward(g, store, h)
    }
}

/// Applies `f` to consecutive row blocks of `x` and stacks the results.
pub fn map_rows_chunked<F>(x: &Tensor, chunk: usize, mut f: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let n = x.rows();
    let mut outs = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        outs.push(f(&x.select_rows(&idx))?);
        start = end;
    }
    if outs.is_empty() {
        return f(x);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    Tensor::stack_rows(&refs)
}
