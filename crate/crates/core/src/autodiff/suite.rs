//! Finite-difference checks of every primitive and every training objective
//! on tiny networks.

use crate::error::Result;
use crate::model::{ModelBundle, ModelConfig};
use crate::objective::{
    aae_disc, aae_lower, aae_upper, adversarial_prior_samples, vae_lower, vae_upper, GammaMode,
    ObjectiveConfig,
};
use crate::params::ParamId;
use crate::prior::PriorKind;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{finite_difference_gradient, max_relative_error, Graph, Var};

pub const SUITE_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Largest coordinate error over `max(|analytic|, |numeric|, 1)`.
    pub max_rel_err: f64,
    /// Largest `‖analytic − numeric‖∞ / ‖numeric‖∞` over checked tensors;
    /// unlike `max_rel_err` this does not loosen for small gradients.
    pub max_norm_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol && self.max_norm_rel_err < tol
    }
}

#[derive(Default)]
struct Worst {
    rel: f64,
    norm_rel: f64,
}

impl Worst {
    fn update(&mut self, analytic: &Tensor, numeric: &Tensor) {
        self.rel = self.rel.max(max_relative_error(analytic, numeric));
        let diff = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = numeric.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        let r = if scale > 0.0 { diff / scale } else { diff };
        self.norm_rel = self
            .norm_rel
            .max(if r.is_nan() { f64::INFINITY } else { r });
    }

    fn result(self, name: &str) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            max_rel_err: self.rel,
            max_norm_rel_err: self.norm_rel,
        }
    }
}

type Unary = fn(&mut Graph, Var) -> Result<Var>;

/// `Σ w ⊙ op(x)` against FD for a leaf `x`, with fixed random weights so
/// that every output coordinate matters.
fn check_leaves(
    name: &str,
    inputs: &[Tensor],
    op: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<CheckResult> {
    let out_shape = {
        let mut g = Graph::new();
        let vs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = op(&mut g, &vs)?;
        g.shape(y).to_vec()
    };
    let weights = Rng::seed_from_u64(99).normal_tensor(out_shape);
    let eval = |ins: &[Tensor], g: &mut Graph| -> Result<(Var, Vec<Var>)> {
        let vs: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let y = op(g, &vs)?;
        let w = g.constant(weights.clone());
        let yw = g.mul(y, w)?;
        Ok((g.sum(yw), vs))
    };
    let mut g = Graph::new();
    let (loss, vs) = eval(inputs, &mut g)?;
    let grads = g.backward(loss)?;
    let mut worst = Worst::default();
    for (k, v) in vs.iter().enumerate() {
        let analytic = grads
            .var(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        let numeric = finite_difference_gradient(
            |x| {
                let mut ins = inputs.to_vec();
                ins[k] = x.clone();
                let mut g = Graph::new();
                let (l, _) = eval(&ins, &mut g)?;
                Ok(g.scalar(l))
            },
            &inputs[k],
            FD_STEP,
        )?;
        worst.update(&analytic, &numeric);
    }
    Ok(worst.result(name))
}

/// Gradient of a scalar objective with respect to bundle parameters.
fn check_params(
    name: &str,
    bundle: &ModelBundle,
    ids: &[ParamId],
    build: &dyn Fn(&mut Graph, &ModelBundle) -> Result<Var>,
) -> Result<CheckResult> {
    let mut g = Graph::new();
    let loss = build(&mut g, bundle)?;
    let grads = g.backward(loss)?;
    let mut worst = Worst::default();
    for &id in ids {
        let analytic = grads.param(id, &bundle.store);
        let numeric = finite_difference_gradient(
            |p| {
                let mut b = bundle.clone();
                b.store.set(id, p.clone());
                let mut g = Graph::new();
                let l = build(&mut g, &b)?;
                Ok(g.scalar(l))
            },
            bundle.store.get(id),
            FD_STEP,
        )?;
        worst.update(&analytic, &numeric);
    }
    Ok(worst.result(name))
}

pub fn tiny_config(prior: PriorKind) -> ModelConfig {
    ModelConfig {
        data_dim: 4,
        latent_dim: 2,
        hidden: vec![8],
        prior,
        flow_depth: 2,
        flow_width: 8,
        gen_width: 8,
        gen_layers: 2,
        disc_width: 8,
        disc_layers: 2,
    }
}

/// A tiny bundle whose parameters are all perturbed away from their
/// initial values (zero-initialized layers would hide gradient paths).
pub fn tiny_bundle(prior: PriorKind, seed: u64) -> Result<ModelBundle> {
    let mut b = ModelBundle::new(tiny_config(prior), seed)?;
    let mut rng = Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<ParamId> = b
        .store
        .ids()
        .filter(|&id| b.store.is_trainable(id))
        .collect();
    for id in ids {
        let t = b.store.get(id);
        let noise = rng.normal_tensor(t.shape().to_vec());
        let data = t
            .data()
            .iter()
            .zip(noise.data())
            .map(|(v, n)| v + 0.3 * n)
            .collect();
        b.store.set(id, Tensor::new(t.shape().to_vec(), data)?);
    }
    Ok(b)
}

fn primitive_checks() -> Result<Vec<CheckResult>> {
    let mut rng = Rng::seed_from_u64(11);
    let a = rng.normal_tensor(vec![3, 4]);
    let b = rng.normal_tensor(vec![3, 4]);
    let pos = a.map(|v| v.abs() + 0.5);
    let row = rng.normal_tensor(vec![4]);
    let m = rng.normal_tensor(vec![4, 2]);
    // keep ReLU/abs inputs away from the kink at 0
    let off_kink = a.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });

    let unary: [(&str, Unary, &Tensor); 11] = [
        ("relu", Graph::relu, &off_kink),
        ("sigmoid", Graph::sigmoid, &a),
        ("tanh", Graph::tanh, &a),
        ("exp", Graph::exp, &a),
        ("log", Graph::log, &pos),
        ("square", Graph::square, &a),
        ("sqrt", Graph::sqrt, &pos),
        ("softplus", Graph::softplus, &a),
        ("abs", Graph::abs, &off_kink),
        ("log_sigmoid", Graph::log_sigmoid, &a),
        ("neg", Graph::neg, &a),
    ];
    let mut out = Vec::new();
    for (name, f, x) in unary {
        out.push(check_leaves(name, &[x.clone()], &|g, v| f(g, v[0]))?);
    }
    let two = [a.clone(), b.clone()];
    out.push(check_leaves("add", &two, &|g, v| g.add(v[0], v[1]))?);
    out.push(check_leaves("sub", &two, &|g, v| g.sub(v[0], v[1]))?);
    out.push(check_leaves("mul", &two, &|g, v| g.mul(v[0], v[1]))?);
    out.push(check_leaves("div", &[a.clone(), pos.clone()], &|g, v| {
        g.div(v[0], v[1])
    })?);
    out.push(check_leaves(
        "add_broadcast",
        &[a.clone(), row.clone()],
        &|g, v| g.add(v[0], v[1]),
    )?);
    out.push(check_leaves(
        "mul_broadcast",
        &[a.clone(), row],
        &|g, v| g.mul(v[0], v[1]),
    )?);
    out.push(check_leaves("matmul", &[a.clone(), m], &|g, v| {
        g.matmul(v[0], v[1])
    })?);
    out.push(check_leaves("scale", &[a.clone()], &|g, v| {
        g.scale(v[0], -1.7)
    })?);
    out.push(check_leaves("add_scalar", &[a.clone()], &|g, v| {
        g.add_scalar(v[0], 0.4)
    })?);
    out.push(check_leaves(
        "clamp",
        &[a.map(|v| v.clamp(-0.9, 0.9))],
        &|g, v| g.clamp(v[0], -1.0, 1.0),
    )?);
    out.push(check_leaves("sum", &[a.clone()], &|g, v| Ok(g.sum(v[0])))?);
    out.push(check_leaves(
        "mean",
        &[a.clone()],
        &|g, v| Ok(g.mean(v[0])),
    )?);
    out.push(check_leaves("sum_axis", &[a.clone()], &|g, v| {
        g.sum_axis(v[0], 1)
    })?);
    out.push(check_leaves("mean_axis", &[a.clone()], &|g, v| {
        g.mean_axis(v[0], 0)
    })?);
    out.push(check_leaves(
        "broadcast",
        &[Tensor::vector(vec![0.3, -1.0, 2.0, 0.5])],
        &|g, v| g.broadcast(v[0], &[3, 4]),
    )?);
    out.push(check_leaves("reshape", &[a.clone()], &|g, v| {
        g.reshape(v[0], &[2, 6])
    })?);
    out.push(check_leaves("concat", &two, &|g, v| {
        g.concat(&[v[0], v[1]], 1)
    })?);
    out.push(check_leaves("slice", &[a], &|g, v| g.slice(v[0], 1, 1, 3))?);
    Ok(out)
}

fn objective_checks() -> Result<Vec<CheckResult>> {
    let x = Rng::seed_from_u64(21)
        .normal_tensor(vec![5, 4])
        .map(|v| 1.0 / (1.0 + (-v).exp()));
    let mut out = Vec::new();
    for (prior, label) in [
        (PriorKind::StandardNormal, "normal"),
        (PriorKind::Flow, "flow"),
    ] {
        let bundle = tiny_bundle(prior, 3)?;
        let mut ids = bundle.encoder_params();
        ids.extend(bundle.decoder_params());
        ids.push(bundle.decoder.log_gamma);
        ids.extend(bundle.prior_params());
        let xc = x.clone();
        let build = move |g: &mut Graph, b: &ModelBundle| -> Result<Var> {
            let cfg = ObjectiveConfig {
                beta: 0.7,
                gamma_mode: GammaMode::Learned,
                ..Default::default()
            };
            let xv = g.constant(xc.clone());
            let mut rng = Rng::seed_from_u64(5);
            Ok(vae_upper(g, b, xv, &cfg, &mut rng)?.total)
        };
        out.push(check_params(
            &format!("vae_upper/{label}"),
            &bundle,
            &ids,
            &build,
        )?);
    }

    let flow = tiny_bundle(PriorKind::Flow, 4)?;
    let z = Rng::seed_from_u64(8).normal_tensor(vec![6, 2]);
    out.push(check_params(
        "vae_lower/flow",
        &flow,
        &flow.prior_params(),
        &|g, b| vae_lower(g, b, &z),
    )?);

    let adv = tiny_bundle(PriorKind::Adversarial, 6)?;
    let mut ids = adv.encoder_params();
    ids.extend(adv.decoder_params());
    for nonsat in [false, true] {
        let xc = x.clone();
        let build = move |g: &mut Graph, b: &ModelBundle| -> Result<Var> {
            let cfg = ObjectiveConfig {
                beta: 0.5,
                gamma_mode: GammaMode::Fixed(0.5),
                nonsaturating: nonsat,
                ..Default::default()
            };
            let xv = g.constant(xc.clone());
            let mut rng = Rng::seed_from_u64(5);
            Ok(aae_upper(g, b, xv, &cfg, &mut rng)?.total)
        };
        let name = if nonsat {
            "aae_upper/nonsaturating"
        } else {
            "aae_upper"
        };
        out.push(check_params(name, &adv, &ids, &build)?);
    }
    out.push(check_params(
        "aae_lower",
        &adv,
        &adv.prior_params(),
        &|g, b| {
            let mut rng = Rng::seed_from_u64(9);
            let zp = adversarial_prior_samples(g, b, &mut rng, 6)?;
            aae_lower(g, b, zp)
        },
    )?);
    let zq = Rng::seed_from_u64(12).normal_tensor(vec![6, 2]);
    let zp = Rng::seed_from_u64(13).normal_tensor(vec![6, 2]);
    out.push(check_params(
        "aae_disc",
        &adv,
        &adv.disc_params(),
        &|g, b| aae_disc(g, b, &zq, &zp),
    )?);
    Ok(out)
}

/// Every primitive and composed-objective check.
pub fn gradient_suite() -> Result<Vec<CheckResult>> {
    let mut out = primitive_checks()?;
    out.extend(objective_checks()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in gradient_suite().unwrap() {
            assert!(r.passed(SUITE_TOLERANCE), "{}: {}", r.name, r.max_rel_err);
        }
    }
}
