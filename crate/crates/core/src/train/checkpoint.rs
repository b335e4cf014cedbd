//! Binary checkpoint format.
//!
//! Layout: magic `LFCK`, little-endian `u32` version, then blocks of
//! (`u32` name length, UTF-8 name, `u32` rank, `u64` dims, little-endian
//! `f64` values), and a trailing `u32` CRC32 of every preceding byte.
//! Integers and hyperparameters are stored as blocks too; 64-bit integers
//! keep their exact bit pattern inside an `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelConfig};
use crate::objective::{GammaMode, ObjectiveConfig};
use crate::optim::Adam;
use crate::prior::PriorKind;
use crate::rng::{Rng, RngState};
use crate::tensor::Tensor;

use super::{TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub tensor: Tensor,
}

pub fn encode_blocks(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.tensor.rank() as u32).to_le_bytes());
        for &d in b.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in b.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_blocks(bytes: &[u8]) -> Result<Vec<Block>> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint(format!(
            "truncated: {} bytes is shorter than the fixed header and checksum",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body_len]) != stored {
        return Err(Error::Checkpoint(
            "checksum mismatch (file truncated or corrupted)".into(),
        ));
    }
    let mut cur = Cursor {
        bytes: &bytes[..body_len],
        pos: 8,
    };
    let mut blocks = Vec::new();
    while cur.pos < body_len {
        let name_len = cur.u32("block name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "block name")?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("block {name}: shape overflows")))?;
        let raw = cur.take(n.saturating_mul(8), "block values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push(Block {
            tensor: Tensor::new(shape, data)?,
            name,
        });
    }
    Ok(blocks)
}

pub fn write_blocks(path: &Path, blocks: &[Block]) -> Result<()> {
    std::fs::write(path, encode_blocks(blocks)).map_err(|e| Error::io(path, e))
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_blocks(&bytes)
}

fn scalar(name: &str, v: f64) -> Block {
    Block {
        name: name.into(),
        tensor: Tensor::scalar(v),
    }
}

fn bits(name: &str, v: u64) -> Block {
    scalar(name, f64::from_bits(v))
}

fn prior_code(kind: PriorKind) -> f64 {
    match kind {
        PriorKind::StandardNormal => 0.0,
        PriorKind::Flow => 1.0,
        PriorKind::Adversarial => 2.0,
    }
}

fn model_blocks(cfg: &ModelConfig, out: &mut Vec<Block>) {
    let m = |n: &str, v: usize| scalar(&format!("hparam/model/{n}"), v as f64);
    out.push(m("data_dim", cfg.data_dim));
    out.push(m("latent_dim", cfg.latent_dim));
    out.push(Block {
        name: "hparam/model/hidden".into(),
        tensor: Tensor::vector(cfg.hidden.iter().map(|&w| w as f64).collect()),
    });
    out.push(scalar("hparam/model/prior", prior_code(cfg.prior)));
    out.push(m("flow_depth", cfg.flow_depth));
    out.push(m("flow_width", cfg.flow_width));
    out.push(m("gen_width", cfg.gen_width));
    out.push(m("gen_layers", cfg.gen_layers));
    out.push(m("disc_width", cfg.disc_width));
    out.push(m("disc_layers", cfg.disc_layers));
}

fn train_blocks(cfg: &TrainConfig, out: &mut Vec<Block>) {
    let t = |n: &str, v: usize| scalar(&format!("hparam/train/{n}"), v as f64);
    out.push(t("epochs", cfg.epochs));
    out.push(t("batch_size", cfg.batch_size));
    out.push(scalar("hparam/train/lr", cfg.learning_rate));
    out.push(bits("hparam/train/seed", cfg.seed));
    out.push(t("prior_post_epochs", cfg.prior_post_epochs));
    out.push(t("lr_halve_every", cfg.lr_halve_every));
    out.push(t("prior_steps", cfg.prior_steps));
    out.push(t("disc_steps", cfg.disc_steps));
    out.push(t("beta_warmup_epochs", cfg.beta_warmup_epochs));
    out.push(t("checkpoint_every", cfg.checkpoint_every));
    let o = &cfg.objective;
    out.push(scalar("hparam/objective/beta", o.beta));
    let gamma = match o.gamma_mode {
        GammaMode::Learned => 0.0,
        GammaMode::Fixed(g) => g,
    };
    out.push(scalar("hparam/objective/gamma", gamma));
    out.push(scalar("hparam/objective/mc_samples", o.mc_samples as f64));
    out.push(scalar(
        "hparam/objective/nonsaturating",
        o.nonsaturating as u8 as f64,
    ));
    out.push(scalar(
        "hparam/objective/fresh_lower_samples",
        o.fresh_lower_samples as u8 as f64,
    ));
}

fn adam_blocks(group: &str, opt: &Adam, bundle: &ModelBundle, out: &mut Vec<Block>) {
    out.push(bits(&format!("adam/{group}/step"), opt.step));
    out.push(scalar(&format!("adam/{group}/lr"), opt.learning_rate()));
    for (i, &id) in opt.params().iter().enumerate() {
        let name = bundle.store.name(id);
        let (m, v) = opt.moments(i);
        out.push(Block {
            name: format!("adam/{group}/m/{name}"),
            tensor: m.clone(),
        });
        out.push(Block {
            name: format!("adam/{group}/v/{name}"),
            tensor: v.clone(),
        });
    }
}

fn param_blocks(bundle: &ModelBundle, out: &mut Vec<Block>) {
    for id in bundle.store.ids() {
        out.push(Block {
            name: format!("param/{}", bundle.store.name(id)),
            tensor: bundle.store.get(id).clone(),
        });
    }
}

pub(super) fn trainer_blocks(t: &Trainer) -> Vec<Block> {
    let mut out = Vec::new();
    model_blocks(&t.bundle.config, &mut out);
    train_blocks(&t.config, &mut out);
    param_blocks(&t.bundle, &mut out);
    adam_blocks("upper", &t.upper_opt, &t.bundle, &mut out);
    adam_blocks("prior", &t.prior_opt, &t.bundle, &mut out);
    adam_blocks("disc", &t.disc_opt, &t.bundle, &mut out);
    let st = t.rng.state();
    out.push(Block {
        name: "rng/seed".into(),
        tensor: Tensor::vector(
            st.seed
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        ),
    });
    out.push(bits("rng/stream", st.stream));
    out.push(Block {
        name: "rng/word_pos".into(),
        tensor: Tensor::vector(vec![
            f64::from_bits(st.word_pos as u64),
            f64::from_bits((st.word_pos >> 64) as u64),
        ]),
    });
    out.push(scalar("train/epoch", t.epoch as f64));
    out.push(scalar("train/post_epoch", t.post_epoch as f64));
    out.push(bits("train/step", t.step));
    out
}

struct Blocks<'a>(BTreeMap<&'a str, &'a Tensor>);

impl<'a> Blocks<'a> {
    fn new(blocks: &'a [Block]) -> Self {
        Self(
            blocks
                .iter()
                .map(|b| (b.name.as_str(), &b.tensor))
                .collect(),
        )
    }

    fn get(&self, name: &str) -> Result<&'a Tensor> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
    }

    fn f64(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        if t.numel() != 1 {
            return Err(Error::Checkpoint(format!(
                "block {name} should hold one value"
            )));
        }
        Ok(t.data()[0])
    }

    fn usize(&self, name: &str) -> Result<usize> {
        let v = self.f64(name)?;
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
            return Err(Error::Checkpoint(format!(
                "block {name} is not a count: {v}"
            )));
        }
        Ok(v as usize)
    }

    fn u64_bits(&self, name: &str) -> Result<u64> {
        Ok(self.f64(name)?.to_bits())
    }
}

fn model_config(b: &Blocks) -> Result<ModelConfig> {
    let m = |n: &str| b.usize(&format!("hparam/model/{n}"));
    let prior = match b.f64("hparam/model/prior")? as i64 {
        0 => PriorKind::StandardNormal,
        1 => PriorKind::Flow,
        2 => PriorKind::Adversarial,
        other => return Err(Error::Checkpoint(format!("unknown prior code {other}"))),
    };
    Ok(ModelConfig {
        data_dim: m("data_dim")?,
        latent_dim: m("latent_dim")?,
        hidden: b
            .get("hparam/model/hidden")?
            .data()
            .iter()
            .map(|&w| w as usize)
            .collect(),
        prior,
        flow_depth: m("flow_depth")?,
        flow_width: m("flow_width")?,
        gen_width: m("gen_width")?,
        gen_layers: m("gen_layers")?,
        disc_width: m("disc_width")?,
        disc_layers: m("disc_layers")?,
    })
}

fn train_config(b: &Blocks) -> Result<TrainConfig> {
    let t = |n: &str| b.usize(&format!("hparam/train/{n}"));
    let gamma = b.f64("hparam/objective/gamma")?;
    Ok(TrainConfig {
        epochs: t("epochs")?,
        batch_size: t("batch_size")?,
        learning_rate: b.f64("hparam/train/lr")?,
        seed: b.u64_bits("hparam/train/seed")?,
        objective: ObjectiveConfig {
            beta: b.f64("hparam/objective/beta")?,
            gamma_mode: if gamma == 0.0 {
                GammaMode::Learned
            } else {
                GammaMode::Fixed(gamma)
            },
            mc_samples: b.usize("hparam/objective/mc_samples")?,
            nonsaturating: b.f64("hparam/objective/nonsaturating")? != 0.0,
            fresh_lower_samples: b.f64("hparam/objective/fresh_lower_samples")? != 0.0,
        },
        prior_post_epochs: t("prior_post_epochs")?,
        lr_halve_every: t("lr_halve_every")?,
        prior_steps: t("prior_steps")?,
        disc_steps: t("disc_steps")?,
        beta_warmup_epochs: t("beta_warmup_epochs")?,
        checkpoint_every: t("checkpoint_every")?,
    })
}

fn shape_check(name: &str, expected: &Tensor, got: &Tensor) -> Result<()> {
    if expected.shape() != got.shape() {
        return Err(Error::Checkpoint(format!(
            "shape mismatch for {name}: expected {:?}, found {:?}",
            expected.shape(),
            got.shape()
        )));
    }
    Ok(())
}

fn fill_params(bundle: &mut ModelBundle, b: &Blocks) -> Result<()> {
    let ids: Vec<_> = bundle.store.ids().collect();
    for id in ids {
        let name = format!("param/{}", bundle.store.name(id));
        let t = b.get(&name)?;
        shape_check(&name, bundle.store.get(id), t)?;
        bundle.store.set(id, t.clone());
    }
    Ok(())
}

pub(super) fn bundle_from_blocks(blocks: &[Block]) -> Result<ModelBundle> {
    let b = Blocks::new(blocks);
    let cfg = model_config(&b)?;
    let mut bundle = ModelBundle::new(cfg, 0)?;
    fill_params(&mut bundle, &b)?;
    Ok(bundle)
}

fn fill_adam(group: &str, opt: &mut Adam, bundle: &ModelBundle, b: &Blocks) -> Result<()> {
    opt.step = b.u64_bits(&format!("adam/{group}/step"))?;
    opt.set_learning_rate(b.f64(&format!("adam/{group}/lr"))?);
    let ids = opt.params().to_vec();
    for (i, id) in ids.into_iter().enumerate() {
        let name = bundle.store.name(id);
        let m_name = format!("adam/{group}/m/{name}");
        let v_name = format!("adam/{group}/v/{name}");
        let m = b.get(&m_name)?;
        let v = b.get(&v_name)?;
        shape_check(&m_name, bundle.store.get(id), m)?;
        shape_check(&v_name, bundle.store.get(id), v)?;
        opt.set_moments(i, m.clone(), v.clone())?;
    }
    Ok(())
}

pub(super) fn trainer_from_blocks(blocks: Vec<Block>) -> Result<Trainer> {
    let b = Blocks::new(&blocks);
    let model = model_config(&b)?;
    let train = train_config(&b)?;
    let mut bundle = ModelBundle::new(model, 0)?;
    fill_params(&mut bundle, &b)?;
    let mut t = Trainer::from_bundle(bundle, train)?;
    let Trainer {
        bundle,
        upper_opt,
        prior_opt,
        disc_opt,
        ..
    } = &mut t;
    fill_adam("upper", upper_opt, bundle, &b)?;
    fill_adam("prior", prior_opt, bundle, &b)?;
    fill_adam("disc", disc_opt, bundle, &b)?;

    let seed_t = b.get("rng/seed")?;
    let word_t = b.get("rng/word_pos")?;
    if seed_t.numel() != 4 || word_t.numel() != 2 {
        return Err(Error::Checkpoint("malformed random state".into()));
    }
    let mut seed = [0u8; 32];
    for (chunk, v) in seed.chunks_exact_mut(8).zip(seed_t.data()) {
        chunk.copy_from_slice(&v.to_bits().to_le_bytes());
    }
    let lo = word_t.data()[0].to_bits() as u128;
    let hi = word_t.data()[1].to_bits() as u128;
    t.rng = Rng::from_state(&RngState {
        seed,
        stream: b.u64_bits("rng/stream")?,
        word_pos: lo | (hi << 64),
    });
    t.epoch = b.usize("train/epoch")?;
    t.post_epoch = b.usize("train/post_epoch")?;
    t.step = b.u64_bits("train/step")?;
    Ok(t)
}
