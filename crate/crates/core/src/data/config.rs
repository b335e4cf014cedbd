//! Flat `key = value` run configuration with `#` comments and named presets.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::GammaMode;
use crate::prior::PriorKind;
use crate::train::TrainConfig;

use super::synth::{SynthKind, SyntheticSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Mnist,
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub data_dir: PathBuf,
    /// Rows used for training; 0 means all.
    pub train_size: usize,
    /// Held-out rows used for evaluation; 0 means all.
    pub test_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Mnist,
            data_dir: PathBuf::from("data/mnist10k"),
            train_size: 0,
            test_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Generated and real samples per Fréchet estimate.
    pub eval_samples: usize,
    pub ppl_pairs: usize,
    pub ppl_epsilon: f64,
    pub diversity_samples: usize,
    pub probe_epochs: usize,
    pub probe_seed: u64,
    pub eval_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eval_samples: 10_000,
            ppl_pairs: 2000,
            ppl_epsilon: 1e-4,
            diversity_samples: 1000,
            probe_epochs: 5,
            probe_seed: 0,
            eval_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

pub const VALID_KEYS: &[&str] = &[
    "preset",
    "dataset",
    "data_dir",
    "train_size",
    "test_size",
    "synth_modes",
    "synth_dim",
    "synth_noise",
    "synth_separation",
    "synth_seed",
    "latent_dim",
    "hidden",
    "prior",
    "flow_depth",
    "flow_width",
    "gen_width",
    "gen_layers",
    "disc_width",
    "disc_layers",
    "beta",
    "gamma_mode",
    "gamma",
    "mc_samples",
    "nonsaturating",
    "fresh_lower_samples",
    "epochs",
    "prior_post_epochs",
    "lr",
    "lr_halve_every",
    "batch_size",
    "seed",
    "prior_steps",
    "disc_steps",
    "beta_warmup_epochs",
    "checkpoint_every",
    "eval_samples",
    "ppl_pairs",
    "ppl_epsilon",
    "diversity_samples",
    "probe_epochs",
    "probe_seed",
    "eval_seed",
];

const DESK_EPOCHS: usize = 20;
const DESK_LR: f64 = 1e-3;
const DESK_POST_EPOCHS: usize = 30;

pub const PRESETS: &[&str] = &[
    "mnist_flow_desk",
    "mnist_fit2d_desk",
    "mnist_flow_paper",
    "mnist_vae_desk",
    "mnist_aae_desk",
    "mnist_aae_paper",
    "synthetic_aae_desk",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: Option<usize>) -> Result<T> {
    value.parse().map_err(|_| {
        Error::config(
            line,
            format!(
                "{key}: cannot parse {value:?} as {}",
                std::any::type_name::<T>()
            ),
        )
    })
}

fn parse_bool(key: &str, value: &str, line: Option<usize>) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(
            line,
            format!("{key}: expected true or false, got {value:?}"),
        )),
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_preset(name, None)?;
        Ok(c)
    }

    fn apply_preset(&mut self, name: &str, line: Option<usize>) -> Result<()> {
        let mut c = RunConfig::default();
        if name.starts_with("mnist_") && name.ends_with("_desk") {
            c.train.epochs = DESK_EPOCHS;
            c.train.learning_rate = DESK_LR;
            c.train.prior_post_epochs = DESK_POST_EPOCHS;
        }
        match name {
            "mnist_flow_desk" => {}
            "mnist_fit2d_desk" => {
                c.model.latent_dim = 2;
                c.train.objective.beta = 0.0;
                c.train.prior_steps = 3;
                c.train.prior_post_epochs = 10;
                c.data.train_size = 5000;
            }
            "mnist_flow_paper" => {
                c.model.latent_dim = 64;
                c.model.flow_depth = 24;
                c.model.flow_width = 1024;
                c.train.epochs = 200;
                c.train.prior_post_epochs = 100;
                c.train.learning_rate = 1e-4;
                c.data.train_size = 0;
            }
            "mnist_vae_desk" => {
                c.model.prior = PriorKind::StandardNormal;
            }
            "mnist_aae_desk" => {
                c.model.prior = PriorKind::Adversarial;
            }
            "mnist_aae_paper" => {
                c.model.prior = PriorKind::Adversarial;
                c.model.latent_dim = 64;
                c.model.gen_width = 1024;
                c.model.gen_layers = 3;
                c.model.disc_width = 1024;
                c.model.disc_layers = 2;
                c.train.epochs = 200;
                c.train.prior_post_epochs = 100;
                c.train.learning_rate = 1e-4;
            }
            "synthetic_aae_desk" => {
                c.data.source = DataSource::Synthetic(SyntheticSpec::default());
                c.data.train_size = 4000;
                c.data.test_size = 1000;
                c.model.data_dim = SyntheticSpec::default().data_dim;
                c.model.latent_dim = 2;
                c.model.hidden = vec![64, 64];
                c.model.prior = PriorKind::Adversarial;
                c.model.gen_width = 64;
                c.model.gen_layers = 2;
                c.model.disc_width = 64;
                c.model.disc_layers = 2;
                c.train.objective.beta = 0.0;
                c.train.epochs = 30;
            }
            other => {
                return Err(Error::config(
                    line,
                    format!(
                        "unknown preset {other:?}; valid presets: {}",
                        PRESETS.join(", ")
                    ),
                ))
            }
        }
        *self = c;
        Ok(())
    }

    fn synth_mut(&mut self, key: &str, line: Option<usize>) -> Result<&mut SyntheticSpec> {
        match &mut self.data.source {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::Mnist => Err(Error::config(
                line,
                format!("{key} requires a synthetic dataset (set dataset first)"),
            )),
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        macro_rules! num {
            () => {
                parse_num(key, value, line)?
            };
        }
        match key {
            "preset" => self.apply_preset(value, line)?,
            "dataset" => {
                match value {
                    "mnist" => self.data.source = DataSource::Mnist,
                    "gaussian_mixture" | "two_moons" => {
                        let kind = if value == "two_moons" {
                            SynthKind::TwoMoons
                        } else {
                            SynthKind::GaussianMixture
                        };
                        let mut spec = match &self.data.source {
                            DataSource::Synthetic(s) => s.clone(),
                            DataSource::Mnist => SyntheticSpec::default(),
                        };
                        spec.kind = kind;
                        self.model.data_dim = spec.data_dim;
                        self.data.source = DataSource::Synthetic(spec);
                    }
                    _ => return Err(Error::config(
                        line,
                        format!(
                            "dataset: expected mnist, gaussian_mixture or two_moons, got {value:?}"
                        ),
                    )),
                }
            }
            "data_dir" => self.data.data_dir = PathBuf::from(value),
            "train_size" => self.data.train_size = num!(),
            "test_size" => self.data.test_size = num!(),
            "synth_modes" => self.synth_mut(key, line)?.modes = num!(),
            "synth_dim" => {
                let d: usize = num!();
                self.synth_mut(key, line)?.data_dim = d;
                self.model.data_dim = d;
            }
            "synth_noise" => self.synth_mut(key, line)?.noise = num!(),
            "synth_separation" => self.synth_mut(key, line)?.separation = num!(),
            "synth_seed" => self.synth_mut(key, line)?.seed = num!(),
            "latent_dim" => self.model.latent_dim = num!(),
            "hidden" => {
                self.model.hidden = value
                    .split(',')
                    .map(|w| parse_num("hidden", w.trim(), line))
                    .collect::<Result<_>>()?
            }
            "prior" => {
                self.model.prior = PriorKind::parse(value).ok_or_else(|| {
                    Error::config(
                        line,
                        format!(
                            "prior: expected standard_normal, flow or adversarial, got {value:?}"
                        ),
                    )
                })?
            }
            "flow_depth" => self.model.flow_depth = num!(),
            "flow_width" => self.model.flow_width = num!(),
            "gen_width" => self.model.gen_width = num!(),
            "gen_layers" => self.model.gen_layers = num!(),
            "disc_width" => self.model.disc_width = num!(),
            "disc_layers" => self.model.disc_layers = num!(),
            "beta" => {
                let beta: f64 = num!();
                if !(beta >= 0.0) || !beta.is_finite() {
                    return Err(Error::config(line, "beta must be ≥ 0"));
                }
                self.train.objective.beta = beta;
            }
            "gamma_mode" => {
                self.train.objective.gamma_mode = match value {
                    "learned" => GammaMode::Learned,
                    "fixed" => match self.train.objective.gamma_mode {
                        GammaMode::Fixed(g) => GammaMode::Fixed(g),
                        GammaMode::Learned => GammaMode::Fixed(1.0),
                    },
                    _ => {
                        return Err(Error::config(
                            line,
                            format!("gamma_mode: expected learned or fixed, got {value:?}"),
                        ))
                    }
                }
            }
            "gamma" => {
                let g: f64 = num!();
                if !(g > 0.0) || !g.is_finite() {
                    return Err(Error::config(line, "gamma must be > 0"));
                }
                self.train.objective.gamma_mode = GammaMode::Fixed(g);
            }
            "mc_samples" => self.train.objective.mc_samples = num!(),
            "nonsaturating" => self.train.objective.nonsaturating = parse_bool(key, value, line)?,
            "fresh_lower_samples" => {
                self.train.objective.fresh_lower_samples = parse_bool(key, value, line)?
            }
            "epochs" => self.train.epochs = num!(),
            "prior_post_epochs" => self.train.prior_post_epochs = num!(),
            "lr" => self.train.learning_rate = num!(),
            "lr_halve_every" => self.train.lr_halve_every = num!(),
            "batch_size" => self.train.batch_size = num!(),
            "seed" => self.train.seed = num!(),
            "prior_steps" => self.train.prior_steps = num!(),
            "disc_steps" => self.train.disc_steps = num!(),
            "beta_warmup_epochs" => self.train.beta_warmup_epochs = num!(),
            "checkpoint_every" => self.train.checkpoint_every = num!(),
            "eval_samples" => self.eval.eval_samples = num!(),
            "ppl_pairs" => self.eval.ppl_pairs = num!(),
            "ppl_epsilon" => self.eval.ppl_epsilon = num!(),
            "diversity_samples" => self.eval.diversity_samples = num!(),
            "probe_epochs" => self.eval.probe_epochs = num!(),
            "probe_seed" => self.eval.probe_seed = num!(),
            "eval_seed" => self.eval.eval_seed = num!(),
            _ => {
                return Err(Error::config(
                    line,
                    format!("unknown key {key:?}; valid keys: {}", VALID_KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override as if it were a config line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(None, format!("override {spec:?} is not key=value")))?;
        self.set(k, v, None)?;
        self.validate()
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(Some(i + 1), format!("expected `key = value`, got {line:?}"))
            })?;
            cfg.set(k, v, Some(i + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .and_then(|_| self.train.validate(&self.model))
            .map_err(|e| match e {
                Error::InvalidArgument(m) => Error::config(None, m),
                other => other,
            })?;
        if !(self.eval.ppl_epsilon > 0.0) {
            return Err(Error::config(None, "ppl_epsilon must be > 0"));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form [`RunConfig::parse_str`]
    /// reads back to an equal config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let o = &t.objective;
        let e = &self.eval;
        let mut out: Vec<(&'static str, String)> = Vec::new();
        match &self.data.source {
            DataSource::Mnist => out.push(("dataset", "mnist".into())),
            DataSource::Synthetic(s) => {
                out.push(("dataset", s.kind.name().into()));
                out.push(("synth_modes", s.modes.to_string()));
                out.push(("synth_dim", s.data_dim.to_string()));
                out.push(("synth_noise", s.noise.to_string()));
                out.push(("synth_separation", s.separation.to_string()));
                out.push(("synth_seed", s.seed.to_string()));
            }
        }
        out.push(("data_dir", self.data.data_dir.display().to_string()));
        out.push(("train_size", self.data.train_size.to_string()));
        out.push(("test_size", self.data.test_size.to_string()));
        out.push(("latent_dim", m.latent_dim.to_string()));
        out.push((
            "hidden",
            m.hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ));
        out.push(("prior", m.prior.name().into()));
        out.push(("flow_depth", m.flow_depth.to_string()));
        out.push(("flow_width", m.flow_width.to_string()));
        out.push(("gen_width", m.gen_width.to_string()));
        out.push(("gen_layers", m.gen_layers.to_string()));
        out.push(("disc_width", m.disc_width.to_string()));
        out.push(("disc_layers", m.disc_layers.to_string()));
        out.push(("beta", o.beta.to_string()));
        match o.gamma_mode {
            GammaMode::Learned => out.push(("gamma_mode", "learned".into())),
            GammaMode::Fixed(g) => {
                out.push(("gamma_mode", "fixed".into()));
                out.push(("gamma", g.to_string()));
            }
        }
        out.push(("mc_samples", o.mc_samples.to_string()));
        out.push(("nonsaturating", o.nonsaturating.to_string()));
        out.push(("fresh_lower_samples", o.fresh_lower_samples.to_string()));
        out.push(("epochs", t.epochs.to_string()));
        out.push(("prior_post_epochs", t.prior_post_epochs.to_string()));
        out.push(("lr", t.learning_rate.to_string()));
        out.push(("lr_halve_every", t.lr_halve_every.to_string()));
        out.push(("batch_size", t.batch_size.to_string()));
        out.push(("seed", t.seed.to_string()));
        out.push(("prior_steps", t.prior_steps.to_string()));
        out.push(("disc_steps", t.disc_steps.to_string()));
        out.push(("beta_warmup_epochs", t.beta_warmup_epochs.to_string()));
        out.push(("checkpoint_every", t.checkpoint_every.to_string()));
        out.push(("eval_samples", e.eval_samples.to_string()));
        out.push(("ppl_pairs", e.ppl_pairs.to_string()));
        out.push(("ppl_epsilon", e.ppl_epsilon.to_string()));
        out.push(("diversity_samples", e.diversity_samples.to_string()));
        out.push(("probe_epochs", e.probe_epochs.to_string()));
        out.push(("probe_seed", e.probe_seed.to_string()));
        out.push(("eval_seed", e.eval_seed.to_string()));
        out
    }

    pub fn manifest(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_zero() {
        let c = RunConfig::parse_str("beta = 0\n").unwrap();
        assert_eq!(c.train.objective.beta, 0.0);
    }

    #[test]
    fn negative_beta_message() {
        let err = RunConfig::parse_str("# comment\nbeta = -1\n").unwrap_err();
        assert_eq!(err.to_string(), "config line 2: beta must be ≥ 0");
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::parse_str("epochs = 3\nbogus = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("config line 2: unknown key \"bogus\""));
        assert!(err.contains("flow_depth") && err.contains("batch_size"));
    }

    #[test]
    fn type_error_names_key() {
        let err = RunConfig::parse_str("epochs = many")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1") && err.contains("epochs"));
        let err = RunConfig::parse_str("epochs").unwrap_err().to_string();
        assert!(err.contains("line 1"));
    }

    #[test]
    fn full_scale_preset() {
        let c = RunConfig::parse_str("preset = mnist_flow_paper\n").unwrap();
        assert_eq!((c.model.flow_depth, c.model.flow_width), (24, 1024));
        assert_eq!((c.train.epochs, c.train.prior_post_epochs), (200, 100));
        assert_eq!((c.train.learning_rate, c.train.batch_size), (1e-4, 100));
    }

    #[test]
    fn manifest_round_trips() {
        for preset in PRESETS {
            let mut c = RunConfig::preset(preset).unwrap();
            c.apply_override("beta=0.25").unwrap();
            c.apply_override("gamma=0.5").unwrap();
            let back = RunConfig::parse_str(&c.manifest()).unwrap();
            assert_eq!(back, c, "{preset}");
        }
    }

    #[test]
    fn comments_and_lists() {
        let c =
            RunConfig::parse_str("hidden = 32, 16  # two layers\nprior = adversarial\n").unwrap();
        assert_eq!(c.model.hidden, vec![32, 16]);
        assert_eq!(c.model.prior, PriorKind::Adversarial);
    }
}
