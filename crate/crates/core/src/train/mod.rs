//! Bilevel training by simultaneous gradient ascent, prior post-training,
//! sweeps and checkpoints.

mod checkpoint;
mod sweep;

use std::path::Path;
use std::time::Instant;

pub use checkpoint::{read_blocks, write_blocks, Block, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use sweep::run_parallel;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelConfig};
use crate::objective::{
    aae_disc, aae_lower, aae_upper, adversarial_prior_samples, vae_lower, vae_upper,
    ObjectiveConfig,
};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Gradients, ParamId};
use crate::prior::PriorKind;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Steps that may fail in a row before the run is abandoned.
pub const MAX_CONSECUTIVE_ABORTS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub prior_post_epochs: usize,
    /// Halve the learning rate every this many epochs; 0 disables.
    pub lr_halve_every: usize,
    /// Prior (`θ`) updates per batch.
    pub prior_steps: usize,
    /// Discriminator (`ω`) updates per batch.
    pub disc_steps: usize,
    /// Linear ramp of `β` from 0 over this many epochs; 0 disables.
    pub beta_warmup_epochs: usize,
    /// Write a checkpoint every this many epochs when a directory is given;
    /// 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 100,
            learning_rate: 1e-4,
            seed: 1,
            objective: ObjectiveConfig::default(),
            prior_post_epochs: 0,
            lr_halve_every: 0,
            prior_steps: 1,
            disc_steps: 1,
            beta_warmup_epochs: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        self.objective.validate()?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("lr must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be ≥ 1"));
        }
        if model.prior == PriorKind::Adversarial && model.gen_layers > 0 && self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size must be ≥ 2 when the prior uses batch normalization",
            ));
        }
        if self.prior_steps == 0 || self.disc_steps == 0 {
            return Err(Error::invalid("prior_steps and disc_steps must be ≥ 1"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_halve_every == 0 {
            return self.learning_rate;
        }
        self.learning_rate / 2f64.powi((epoch / self.lr_halve_every) as i32)
    }

    /// `β` in effect during `epoch` (0-based).
    pub fn beta_at(&self, epoch: usize) -> f64 {
        let beta = self.objective.beta;
        if self.beta_warmup_epochs == 0 {
            return beta;
        }
        beta * (epoch as f64 / self.beta_warmup_epochs as f64).min(1.0)
    }
}

/// Objective values from one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub upper: f64,
    pub recon: f64,
    pub reg: f64,
    pub lower: Option<f64>,
    pub disc: Option<f64>,
}

/// One row of the epoch log. Objective columns are batch averages;
/// absent terms are written as empty cells.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub upper: Option<f64>,
    pub recon: Option<f64>,
    pub reg: Option<f64>,
    pub lower: Option<f64>,
    pub disc: Option<f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

pub const EPOCH_LOG_HEADER: [&str; 9] = [
    "epoch", "step", "F", "recon", "reg", "f_lower", "g_disc", "lr", "wall_ms",
];

pub fn write_epoch_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EPOCH_LOG_HEADER)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            cell(r.upper),
            cell(r.recon),
            cell(r.reg),
            cell(r.lower),
            cell(r.disc),
            r.lr.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct Accum {
    n: usize,
    sums: [f64; 5],
    seen: [bool; 5],
}

impl Accum {
    fn add(&mut self, vals: [Option<f64>; 5]) {
        self.n += 1;
        for (i, v) in vals.iter().enumerate() {
            if let Some(v) = v {
                self.sums[i] += v;
                self.seen[i] = true;
            }
        }
    }

    fn mean(&self, i: usize) -> Option<f64> {
        (self.seen[i] && self.n > 0).then(|| self.sums[i] / self.n as f64)
    }
}

fn check_finite(name: &str, value: f64, grads: &Gradients) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{name} objective value {value}")));
    }
    if grads.params.values().any(|t| !t.all_finite()) {
        return Err(Error::NonFinite(format!("{name} objective gradient")));
    }
    Ok(())
}

/// A model together with its optimizers, random stream and progress.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub config: TrainConfig,
    pub upper_opt: Adam,
    pub prior_opt: Adam,
    pub disc_opt: Adam,
    pub rng: Rng,
    pub epoch: usize,
    pub post_epoch: usize,
    pub step: u64,
    pub aborted_steps: usize,
    consecutive_aborts: usize,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate(&model)?;
        let bundle = ModelBundle::new(model, config.seed)?;
        let rng = Rng::seed_from_u64(config.seed).fork(1);
        Ok(Self::assemble(bundle, config, rng))
    }

    /// Wraps an existing bundle with fresh optimizers.
    pub fn from_bundle(bundle: ModelBundle, config: TrainConfig) -> Result<Self> {
        config.validate(&bundle.config)?;
        let rng = Rng::seed_from_u64(config.seed).fork(1);
        Ok(Self::assemble(bundle, config, rng))
    }

    fn assemble(bundle: ModelBundle, config: TrainConfig, rng: Rng) -> Self {
        let adam = AdamConfig {
            learning_rate: config.learning_rate,
            ..Default::default()
        };
        let upper_opt = Adam::new(Self::upper_params(&bundle, &config), &bundle.store, adam);
        let prior_opt = Adam::new(bundle.prior_params(), &bundle.store, adam);
        let disc_opt = Adam::new(bundle.disc_params(), &bundle.store, adam);
        Self {
            bundle,
            config,
            upper_opt,
            prior_opt,
            disc_opt,
            rng,
            epoch: 0,
            post_epoch: 0,
            step: 0,
            aborted_steps: 0,
            consecutive_aborts: 0,
        }
    }

    fn upper_params(bundle: &ModelBundle, config: &TrainConfig) -> Vec<ParamId> {
        let mut ids = bundle.encoder_params();
        ids.extend(bundle.decoder_params());
        if config.objective.gamma_mode == crate::objective::GammaMode::Learned {
            ids.push(bundle.decoder.log_gamma);
        }
        ids
    }

    fn set_lr(&mut self, lr: f64) {
        self.upper_opt.set_learning_rate(lr);
        self.prior_opt.set_learning_rate(lr);
        self.disc_opt.set_learning_rate(lr);
    }

    pub fn learning_rate(&self) -> f64 {
        self.upper_opt.learning_rate()
    }

    /// One simultaneous ascent step on `F` (encoder, decoder), `f` (prior)
    /// and, for the adversarial prior, `g` (discriminator). Every gradient
    /// is taken at the pre-step parameters. Nothing is mutated when any
    /// term is non-finite.
    pub fn train_step(&mut self, batch: &Tensor) -> Result<StepReport> {
        let beta = self.config.beta_at(self.epoch);
        self.step_with_beta(batch, beta, true)
    }

    fn step_with_beta(
        &mut self,
        batch: &Tensor,
        beta: f64,
        update_upper: bool,
    ) -> Result<StepReport> {
        if batch.rank() != 2 || batch.rows() == 0 {
            return Err(Error::invalid("training batch must be a non-empty matrix"));
        }
        let mut cfg = self.config.objective.clone();
        cfg.beta = beta;
        let kind = self.bundle.prior.kind();
        let n = batch.rows();
        let mut rng = self.rng.clone();

        let (upper_val, upper_grads, z_q) = if update_upper {
            let mut g = Graph::new();
            let x = g.constant(batch.clone());
            let up = match kind {
                PriorKind::Adversarial => aae_upper(&mut g, &self.bundle, x, &cfg, &mut rng)?,
                _ => vae_upper(&mut g, &self.bundle, x, &cfg, &mut rng)?,
            };
            let value = up.value(&g);
            let z = g.value(up.z).clone();
            let grads = g.backward(up.total)?;
            check_finite("upper", value.total, &grads)?;
            (Some(value), Some(grads), z)
        } else {
            (None, None, self.bundle.encode_sample(batch, &mut rng)?)
        };

        let lower_codes = |rng: &mut Rng, this: &Self| -> Result<Tensor> {
            if cfg.fresh_lower_samples && update_upper {
                this.bundle.encode_sample(batch, rng)
            } else {
                Ok(z_q.clone())
            }
        };

        let mut lower = None;
        let mut lower_grads = None;
        let mut disc = None;
        let mut disc_grads = None;
        let mut buffers = Vec::new();
        match kind {
            PriorKind::StandardNormal => {}
            PriorKind::Flow => {
                let z = lower_codes(&mut rng, self)?;
                let mut g = Graph::new();
                let f = vae_lower(&mut g, &self.bundle, &z)?;
                let value = g.scalar(f);
                let grads = g.backward(f)?;
                check_finite("lower", value, &grads)?;
                lower = Some(value);
                lower_grads = Some(grads);
            }
            PriorKind::Adversarial => {
                let mut g = Graph::new();
                let zp = adversarial_prior_samples(&mut g, &self.bundle, &mut rng, n)?;
                let f = aae_lower(&mut g, &self.bundle, zp)?;
                let value = g.scalar(f);
                let z_p = g.value(zp).clone();
                buffers = g.take_buffer_updates();
                let grads = g.backward(f)?;
                check_finite("lower", value, &grads)?;
                lower = Some(value);
                lower_grads = Some(grads);

                let (z_post, z_prior) = if cfg.fresh_lower_samples {
                    let z_post = lower_codes(&mut rng, self)?;
                    let mut gp = Graph::new();
                    let zp = adversarial_prior_samples(&mut gp, &self.bundle, &mut rng, n)?;
                    (z_post, gp.value(zp).clone())
                } else {
                    (z_q.clone(), z_p)
                };
                let mut g = Graph::new();
                let d = aae_disc(&mut g, &self.bundle, &z_post, &z_prior)?;
                let value = g.scalar(d);
                let grads = g.backward(d)?;
                check_finite("discriminator", value, &grads)?;
                disc = Some(value);
                disc_grads = Some(grads);
            }
        }

        // All gradients are in hand; now mutate.
        self.rng = rng;
        let store = &mut self.bundle.store;
        if let Some(grads) = &upper_grads {
            self.upper_opt.ascend(store, grads)?;
        }
        if let Some(grads) = &lower_grads {
            self.prior_opt.ascend(store, grads)?;
        }
        if let Some(grads) = &disc_grads {
            self.disc_opt.ascend(store, grads)?;
        }
        for (id, value) in buffers {
            store.set(id, value);
        }
        for _ in 1..self.config.prior_steps {
            self.extra_prior_step(&z_q)?;
        }
        for _ in 1..self.config.disc_steps {
            self.extra_disc_step(&z_q)?;
        }
        self.step += 1;
        let (upper, recon, reg) = upper_val.map_or((f64::NAN, f64::NAN, f64::NAN), |v| {
            (v.total, v.recon, v.reg)
        });
        Ok(StepReport {
            upper,
            recon,
            reg,
            lower,
            disc,
        })
    }

    fn extra_prior_step(&mut self, z_q: &Tensor) -> Result<()> {
        let mut g = Graph::new();
        let (value, grads, buffers) = match self.bundle.prior.kind() {
            PriorKind::StandardNormal => return Ok(()),
            PriorKind::Flow => {
                let f = vae_lower(&mut g, &self.bundle, z_q)?;
                (g.scalar(f), g.backward(f)?, Vec::new())
            }
            PriorKind::Adversarial => {
                let zp =
                    adversarial_prior_samples(&mut g, &self.bundle, &mut self.rng, z_q.rows())?;
                let f = aae_lower(&mut g, &self.bundle, zp)?;
                let buffers = g.take_buffer_updates();
                (g.scalar(f), g.backward(f)?, buffers)
            }
        };
        check_finite("lower", value, &grads)?;
        self.prior_opt.ascend(&mut self.bundle.store, &grads)?;
        for (id, v) in buffers {
            self.bundle.store.set(id, v);
        }
        Ok(())
    }

    fn extra_disc_step(&mut self, z_q: &Tensor) -> Result<()> {
        if self.bundle.prior.kind() != PriorKind::Adversarial {
            return Ok(());
        }
        let mut gp = Graph::new();
        let zp = adversarial_prior_samples(&mut gp, &self.bundle, &mut self.rng, z_q.rows())?;
        let z_prior = gp.value(zp).clone();
        let mut g = Graph::new();
        let d = aae_disc(&mut g, &self.bundle, z_q, &z_prior)?;
        let value = g.scalar(d);
        let grads = g.backward(d)?;
        check_finite("discriminator", value, &grads)?;
        self.disc_opt.ascend(&mut self.bundle.store, &grads)
    }

    fn batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let perm = self.rng.permutation(n);
        let bs = self.config.batch_size;
        perm.chunks(bs)
            .filter(|c| c.len() >= 2 || (c.len() == n && n == 1))
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn record_step(
        &mut self,
        result: Result<StepReport>,
        acc: &mut Accum,
        where_: &str,
    ) -> Result<()> {
        match result {
            Ok(r) => {
                self.consecutive_aborts = 0;
                let up = r.upper.is_finite().then_some(r.upper);
                let rc = r.recon.is_finite().then_some(r.recon);
                let rg = r.reg.is_finite().then_some(r.reg);
                acc.add([up, rc, rg, r.lower, r.disc]);
                Ok(())
            }
            Err(Error::NonFinite(msg)) => {
                self.aborted_steps += 1;
                self.consecutive_aborts += 1;
                if self.consecutive_aborts >= MAX_CONSECUTIVE_ABORTS {
                    Err(Error::NonFinite(format!(
                        "{msg} at {where_}; {MAX_CONSECUTIVE_ABORTS} consecutive steps aborted"
                    )))
                } else {
                    Ok(())
                }
            }
            Err(e) => Err(e),
        }
    }

    /// Runs the remaining epochs of the main phase. `on_epoch` sees every
    /// record as it is produced; checkpoints go to `checkpoint_dir` when set.
    pub fn fit(
        &mut self,
        data: &Tensor,
        checkpoint_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        if data.rank() != 2 || data.cols() != self.bundle.data_dim() {
            return Err(Error::Shape {
                op: "train",
                lhs: data.shape().to_vec(),
                rhs: vec![self.bundle.data_dim()],
            });
        }
        let mut records = Vec::new();
        while self.epoch < self.config.epochs {
            let start = Instant::now();
            let lr = self.config.lr_at(self.epoch);
            self.set_lr(lr);
            let mut acc = Accum::default();
            for (b, idx) in self.batches(data.rows()).into_iter().enumerate() {
                let batch = data.select_rows(&idx);
                let result = self.train_step(&batch);
                let at = format!("epoch {} batch {b}", self.epoch);
                self.record_step(result, &mut acc, &at)?;
            }
            self.epoch += 1;
            let rec = EpochRecord {
                epoch: self.epoch,
                step: self.step,
                upper: acc.mean(0),
                recon: acc.mean(1),
                reg: acc.mean(2),
                lower: acc.mean(3),
                disc: acc.mean(4),
                lr,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            self.set_lr(self.config.lr_at(self.epoch));
            on_epoch(&rec);
            records.push(rec);
            self.maybe_checkpoint(checkpoint_dir, self.epoch)?;
        }
        Ok(records)
    }

    /// Trains only the prior (and discriminator) for `epochs` more epochs
    /// with the encoder and decoder frozen.
    pub fn post_train_prior(
        &mut self,
        data: &Tensor,
        epochs: usize,
        checkpoint_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        if self.bundle.prior.kind() == PriorKind::StandardNormal {
            return Err(Error::Unsupported(
                "the standard normal prior has nothing to train".into(),
            ));
        }
        let mut records = Vec::new();
        let target = self.post_epoch + epochs;
        while self.post_epoch < target {
            let start = Instant::now();
            let lr = self.config.lr_at(self.epoch + self.post_epoch);
            self.set_lr(lr);
            let mut acc = Accum::default();
            for (b, idx) in self.batches(data.rows()).into_iter().enumerate() {
                let batch = data.select_rows(&idx);
                let result = self.step_with_beta(&batch, 0.0, false);
                let at = format!("post epoch {} batch {b}", self.post_epoch);
                self.record_step(result, &mut acc, &at)?;
            }
            self.post_epoch += 1;
            let rec = EpochRecord {
                epoch: self.epoch + self.post_epoch,
                step: self.step,
                upper: None,
                recon: None,
                reg: None,
                lower: acc.mean(3),
                disc: acc.mean(4),
                lr,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_epoch(&rec);
            records.push(rec);
            self.maybe_checkpoint(checkpoint_dir, self.epoch + self.post_epoch)?;
        }
        Ok(records)
    }

    fn maybe_checkpoint(&self, dir: Option<&Path>, epoch: usize) -> Result<()> {
        let every = self.config.checkpoint_every;
        if let Some(dir) = dir {
            if every > 0 && epoch % every == 0 {
                self.save(&dir.join(format!("epoch-{epoch:04}.lfck")))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_blocks(path, &checkpoint::trainer_blocks(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::trainer_from_blocks(read_blocks(path)?)
    }
}

/// Loads only the model from a checkpoint written by [`Trainer::save`].
pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    checkpoint::bundle_from_blocks(&read_blocks(path)?)
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

    fn data(n: usize) -> Tensor {
        let mut rng = Rng::seed_from_u64(99);
        Tensor::new(vec![n, 6], (0..n * 6).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn lr_schedule_halves() {
        let cfg = TrainConfig {
            learning_rate: 0.8,
            lr_halve_every: 2,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 0.8);
        assert_eq!(cfg.lr_at(5), 0.2);
        let mut t = Trainer::new(
            tiny(PriorKind::Flow),
            TrainConfig {
                epochs: 6,
                batch_size: 6,
                learning_rate: 0.8,
                lr_halve_every: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let recs = t.fit(&data(12), None, |_| {}).unwrap();
        let used: Vec<f64> = recs.iter().map(|r| r.lr).collect();
        assert_eq!(used, vec![0.8, 0.8, 0.4, 0.4, 0.2, 0.2]);
        assert_eq!(t.learning_rate(), 0.1);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut t = Trainer::new(
            tiny(PriorKind::Flow),
            TrainConfig {
                epochs: 0,
                batch_size: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let before = t.bundle.store.clone();
        let recs = t.fit(&data(12), None, |_| {}).unwrap();
        assert!(recs.is_empty());
        for id in before.ids() {
            assert_eq!(before.get(id), t.bundle.store.get(id));
        }
    }

    #[test]
    fn standard_normal_beta_zero_leaves_prior_alone() {
        let mut t = Trainer::new(
            tiny(PriorKind::StandardNormal),
            TrainConfig {
                batch_size: 4,
                objective: ObjectiveConfig {
                    beta: 0.0,
                    ..Default::default()
                },
                ..Default::default()
            },
        )
        .unwrap();
        let r = t.train_step(&data(4)).unwrap();
        assert_eq!(r.upper, r.recon);
        assert!(r.lower.is_none() && r.disc.is_none());
    }

    #[test]
    fn adversarial_step_reports_all_terms() {
        let mut t = Trainer::new(
            tiny(PriorKind::Adversarial),
            TrainConfig {
                batch_size: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let r = t.train_step(&data(4)).unwrap();
        assert!(r.lower.is_some() && r.disc.is_some());
    }

    #[test]
    fn post_training_freezes_autoencoder() {
        let mut t = Trainer::new(
            tiny(PriorKind::Flow),
            TrainConfig {
                batch_size: 4,
                learning_rate: 1e-2,
                ..Default::default()
            },
        )
        .unwrap();
        let frozen: Vec<_> = t
            .bundle
            .encoder_params()
            .into_iter()
            .chain(t.bundle.decoder_params())
            .chain([t.bundle.decoder.log_gamma])
            .collect();
        let before: Vec<_> = frozen
            .iter()
            .map(|&id| t.bundle.store.get(id).clone())
            .collect();
        let prior_before = t.bundle.store.get(t.bundle.prior_params()[0]).clone();
        t.post_train_prior(&data(12), 2, None, |_| {}).unwrap();
        for (id, b) in frozen.iter().zip(before) {
            assert_eq!(t.bundle.store.get(*id), &b);
        }
        assert_ne!(
            t.bundle.store.get(t.bundle.prior_params()[0]),
            &prior_before
        );
        let mut sn = Trainer::new(tiny(PriorKind::StandardNormal), TrainConfig::default()).unwrap();
        assert!(sn.post_train_prior(&data(12), 1, None, |_| {}).is_err());
    }

    #[test]
    fn non_finite_batch_aborts_without_mutation() {
        let mut t = Trainer::new(
            tiny(PriorKind::Flow),
            TrainConfig {
                batch_size: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let before = t.bundle.store.clone();
        let mut bad = data(4);
        bad.data_mut()[0] = f64::NAN;
        let err = t.train_step(&bad).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        for id in before.ids() {
            assert_eq!(before.get(id), t.bundle.store.get(id));
        }
        assert_eq!(t.step, 0);
    }

    #[test]
    fn three_consecutive_aborts_end_the_run() {
        let mut t = Trainer::new(
            tiny(PriorKind::Flow),
            TrainConfig {
                epochs: 1,
                batch_size: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let mut bad = data(8);
        bad.data_mut().iter_mut().for_each(|v| *v = f64::NAN);
        let err = t.fit(&bad, None, |_| {}).unwrap_err();
        assert!(err.to_string().contains("consecutive"));
    }
}
