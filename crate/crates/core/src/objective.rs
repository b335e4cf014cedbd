//! Training objectives. Every function builds onto a caller-owned graph and
//! returns quantities to be maximized.
//!
//! Upper level `F(φ, ψ)`: reconstruction log-likelihood minus `β` times the
//! latent regularizer. Lower level `f(θ)`: prior fit to the encoder's codes.
//! For the adversarial prior, `g(ω)` trains the discriminator.

use std::f64::consts::PI;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::nets::{reparameterize, BnMode};
use crate::params::ParamStore;
use crate::prior::{Discriminator, PriorKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    /// Decoder variance fixed at the given `γ > 0`.
    Fixed(f64),
    /// Single shared `log γ`, initialized to 0 and trained by `F`.
    Learned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub beta: f64,
    pub gamma_mode: GammaMode,
    pub mc_samples: usize,
    /// Encoder maximizes `β·log D(z)` instead of `−β·log(1 − D(z))`.
    pub nonsaturating: bool,
    /// Lower objectives draw new samples instead of reusing the upper pass's.
    pub fresh_lower_samples: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma_mode: GammaMode::Learned,
            mc_samples: 1,
            nonsaturating: false,
            fresh_lower_samples: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be ≥ 0"));
        }
        if let GammaMode::Fixed(g) = self.gamma_mode {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::invalid("gamma must be > 0"));
            }
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be ≥ 1"));
        }
        Ok(())
    }
}

/// Graph handles of an upper-level objective. Scalars are batch means.
#[derive(Clone, Debug)]
pub struct UpperVars {
    pub total: Var,
    pub recon: Var,
    pub reg: Var,
    pub recon_per_example: Var,
    pub reg_per_example: Var,
    /// The reparameterized codes, one block of rows per Monte Carlo sample.
    pub z: Var,
}

/// Plain values read back from [`UpperVars`].
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub recon: f64,
    pub reg: f64,
    pub recon_per_example: Vec<f64>,
    pub reg_per_example: Vec<f64>,
}

impl UpperVars {
    pub fn value(&self, g: &Graph) -> ObjectiveValue {
        ObjectiveValue {
            total: g.scalar(self.total),
            recon: g.scalar(self.recon),
            reg: g.scalar(self.reg),
            recon_per_example: g.value(self.recon_per_example).data().to_vec(),
            reg_per_example: g.value(self.reg_per_example).data().to_vec(),
        }
    }
}

/// `−(D/2)·log(2πγ) − ‖x − x̂‖² / (2γ)` per row, with `log_gamma` a
/// one-element node.
pub fn gaussian_recon_loglik(g: &mut Graph, x: Var, x_hat: Var, log_gamma: Var) -> Result<Var> {
    let d = g.shape(x).get(1).copied().unwrap_or(0) as f64;
    let batch = g.shape(x)[0];
    let diff = g.sub(x, x_hat)?;
    let sq = g.square(diff)?;
    let sse = g.sum_axis(sq, 1)?;
    let lg = g.reshape(log_gamma, &[1])?;
    let lg = g.broadcast(lg, &[batch])?;
    let neg_lg = g.neg(lg)?;
    let inv_gamma = g.exp(neg_lg)?;
    let weighted = g.mul(sse, inv_gamma)?;
    let quad = g.scale(weighted, -0.5)?;
    let norm = g.scale(lg, -0.5 * d)?;
    let norm = g.add_scalar(norm, -0.5 * d * (2.0 * PI).ln())?;
    g.add(norm, quad)
}

/// `Σᵢ [−½ log 2π − ½ logvarᵢ − (zᵢ − meanᵢ)² / (2 exp(logvarᵢ))]` per row.
pub fn diag_gaussian_logpdf(g: &mut Graph, z: Var, mean: Var, logvar: Var) -> Result<Var> {
    let diff = g.sub(z, mean)?;
    let sq = g.square(diff)?;
    let neg = g.neg(logvar)?;
    let inv_var = g.exp(neg)?;
    let quad = g.mul(sq, inv_var)?;
    let inner = g.add(quad, logvar)?;
    let half = g.scale(inner, -0.5)?;
    let per = g.add_scalar(half, -0.5 * (2.0 * PI).ln())?;
    g.sum_axis(per, 1)
}

/// `½ Σᵢ (exp(logvarᵢ) + meanᵢ² − 1 − logvarᵢ)` per row.
pub fn kl_std_normal(g: &mut Graph, mean: Var, logvar: Var) -> Result<Var> {
    let var = g.exp(logvar)?;
    let m2 = g.square(mean)?;
    let a = g.add(var, m2)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0)?;
    let s = g.sum_axis(c, 1)?;
    g.scale(s, 0.5)
}

fn log_gamma_node(g: &mut Graph, bundle: &ModelBundle, mode: GammaMode) -> Var {
    match mode {
        GammaMode::Fixed(gamma) => g.constant(Tensor::vector(vec![gamma.ln()])),
        GammaMode::Learned => g.param(&bundle.store, bundle.decoder.log_gamma),
    }
}

/// Shared body of the upper objectives: encode, reparameterize `mc_samples`
/// times, decode, and hand each code block to `reg_fn` for the per-example
/// penalty. Sample blocks are averaged per example.
fn upper<R>(
    g: &mut Graph,
    bundle: &ModelBundle,
    x: Var,
    cfg: &ObjectiveConfig,
    rng: &mut Rng,
    mut reg_fn: R,
) -> Result<UpperVars>
where
    R: FnMut(&mut Graph, Var, Var, Var) -> Result<Var>,
{
    cfg.validate()?;
    let store = &bundle.store;
    let (mean, logvar) = bundle.encoder.encode(g, store, x)?;
    let log_gamma = log_gamma_node(g, bundle, cfg.gamma_mode);
    let k = cfg.mc_samples;
    let mut recon_sum: Option<Var> = None;
    let mut reg_sum: Option<Var> = None;
    let mut zs = Vec::with_capacity(k);
    for _ in 0..k {
        let z = reparameterize(g, mean, logvar, rng)?;
        let x_hat = bundle.decoder.decode(g, store, z)?;
        let r = gaussian_recon_loglik(g, x, x_hat, log_gamma)?;
        let p = reg_fn(g, z, mean, logvar)?;
        recon_sum = Some(match recon_sum {
            Some(acc) => g.add(acc, r)?,
            None => r,
        });
        reg_sum = Some(match reg_sum {
            Some(acc) => g.add(acc, p)?,
            None => p,
        });
        zs.push(z);
    }
    let inv_k = 1.0 / k as f64;
    let recon_per_example = g.scale(recon_sum.expect("k ≥ 1"), inv_k)?;
    let reg_per_example = g.scale(reg_sum.expect("k ≥ 1"), inv_k)?;
    let recon = g.mean(recon_per_example);
    let reg = g.mean(reg_per_example);
    // At β = 0 the regularizer is reported but kept out of the objective, so
    // it contributes no gradient anywhere.
    let total = if cfg.beta > 0.0 {
        let weighted = g.scale(reg, cfg.beta)?;
        g.sub(recon, weighted)?
    } else {
        recon
    };
    let z = if k == 1 { zs[0] } else { g.concat(&zs, 0)? };
    Ok(UpperVars {
        total,
        recon,
        reg,
        recon_per_example,
        reg_per_example,
        z,
    })
}

/// `F = E_q[log p(x|z)] − β·E_q[log q(z|x) − log p_θ(z)]` for the standard
/// normal or flow prior, using the single-sample density difference per
/// Monte Carlo draw.
pub fn vae_upper(
    g: &mut Graph,
    bundle: &ModelBundle,
    x: Var,
    cfg: &ObjectiveConfig,
    rng: &mut Rng,
) -> Result<UpperVars> {
    if bundle.prior.kind() == PriorKind::Adversarial {
        return Err(Error::Unsupported(
            "vae_upper needs a prior with a density; use aae_upper".into(),
        ));
    }
    let store = &bundle.store;
    upper(g, bundle, x, cfg, rng, |g, z, mean, logvar| {
        let log_q = diag_gaussian_logpdf(g, z, mean, logvar)?;
        let log_p = bundle.prior.log_prob(g, store, z)?;
        g.sub(log_q, log_p)
    })
}

/// Closed-form ELBO with the KL term, for the standard normal prior.
pub fn vae_elbo_closed_form(
    g: &mut Graph,
    bundle: &ModelBundle,
    x: Var,
    cfg: &ObjectiveConfig,
    rng: &mut Rng,
) -> Result<UpperVars> {
    if bundle.prior.kind() != PriorKind::StandardNormal {
        return Err(Error::Unsupported(
            "the closed-form KL needs the standard normal prior".into(),
        ));
    }
    upper(g, bundle, x, cfg, rng, |g, _z, mean, logvar| {
        kl_std_normal(g, mean, logvar)
    })
}

/// `f = mean log p_θ(z)` over detached codes `z`; gradients reach `θ` only.
pub fn vae_lower(g: &mut Graph, bundle: &ModelBundle, z: &Tensor) -> Result<Var> {
    let flow = bundle
        .prior
        .flow()
        .ok_or_else(|| Error::Unsupported("vae_lower needs the flow prior".into()))?;
    let zv = g.constant(z.clone());
    let lp = flow.log_prob(g, &bundle.store, zv)?;
    Ok(g.mean(lp))
}

fn disc_of(bundle: &ModelBundle) -> Result<&Discriminator> {
    bundle
        .disc
        .as_ref()
        .ok_or_else(|| Error::Unsupported("the adversarial objectives need a discriminator".into()))
}

/// `F = E_q[log p(x|z)] − β·E_q[log(1 − D(z))]` with `ω` frozen. In
/// non-saturating mode the penalty is `−log D(z)` instead.
pub fn aae_upper(
    g: &mut Graph,
    bundle: &ModelBundle,
    x: Var,
    cfg: &ObjectiveConfig,
    rng: &mut Rng,
) -> Result<UpperVars> {
    let disc = disc_of(bundle)?;
    g.freeze(bundle.disc_params());
    g.freeze(bundle.prior_params());
    let store = &bundle.store;
    let nonsaturating = cfg.nonsaturating;
    upper(g, bundle, x, cfg, rng, |g, z, _, _| {
        let logit = disc.logits(g, store, z)?;
        if nonsaturating {
            let ld = g.log_sigmoid(logit)?;
            g.neg(ld)
        } else {
            let neg = g.neg(logit)?;
            g.log_sigmoid(neg)
        }
    })
}

/// Prior samples drawn on the graph for the adversarial lower objective.
pub fn adversarial_prior_samples(
    g: &mut Graph,
    bundle: &ModelBundle,
    rng: &mut Rng,
    n: usize,
) -> Result<Var> {
    if bundle.prior.kind() != PriorKind::Adversarial {
        return Err(Error::Unsupported("expected the adversarial prior".into()));
    }
    bundle
        .prior
        .sample_graph(g, &bundle.store, rng, n, BnMode::Train)
}

/// `f = mean −log D(z)` over prior samples `z = G_θ(u)` already on the
/// graph, with `ω` frozen. Raising `f` makes prior draws look less like
/// the discriminator's "prior" class, pulling them toward `q(z)`.
pub fn aae_lower(g: &mut Graph, bundle: &ModelBundle, z_prior: Var) -> Result<Var> {
    let disc = disc_of(bundle)?;
    g.freeze(bundle.disc_params());
    let logit = disc.logits(g, &bundle.store, z_prior)?;
    let ld = g.log_sigmoid(logit)?;
    let m = g.mean(ld);
    g.neg(m)
}

/// `g = mean log D(z_p) + mean log(1 − D(z_q))` with both code sets detached;
/// prior draws are the "real" class. Gradients reach `ω` only.
pub fn aae_disc(
    g: &mut Graph,
    bundle: &ModelBundle,
    z_posterior: &Tensor,
    z_prior: &Tensor,
) -> Result<Var> {
    let disc = disc_of(bundle)?;
    disc_objective(g, disc, &bundle.store, z_posterior, z_prior)
}

pub fn disc_objective(
    g: &mut Graph,
    disc: &Discriminator,
    store: &ParamStore,
    z_posterior: &Tensor,
    z_prior: &Tensor,
) -> Result<Var> {
    let zp = g.constant(z_prior.clone());
    let zq = g.constant(z_posterior.clone());
    let lp = disc.logits(g, store, zp)?;
    let lq = disc.logits(g, store, zq)?;
    let log_d = g.log_sigmoid(lp)?;
    let neg_lq = g.neg(lq)?;
    let log_1m = g.log_sigmoid(neg_lq)?;
    let a = g.mean(log_d);
    let b = g.mean(log_1m);
    g.add(a, b)
}
