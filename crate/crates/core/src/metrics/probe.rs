//! A small classifier trained on the data whose penultimate activations
//! serve as the feature space for every perceptual metric.

use std::path::Path;

use crate::autodiff::{Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::LatentModel;
use crate::nets::{map_rows_chunked, Activation, DenseLayer, Init};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{read_blocks, write_blocks, Block};

use super::{frechet_between, FeatureMap};

pub const PROBE_WIDTHS: [usize; 2] = [128, 64];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 100,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProbeNet {
    pub store: ParamStore,
    layers: Vec<DenseLayer>,
    pub data_dim: usize,
    pub classes: usize,
    /// Held-out accuracy measured right after training, if any.
    pub accuracy: Option<f64>,
}

impl ProbeNet {
    pub fn new(data_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "probe needs at least 2 classes, got {classes}"
            )));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = [data_dim, PROBE_WIDTHS[0], PROBE_WIDTHS[1], classes];
        let layers = (0..3)
            .map(|i| {
                let act = if i < 2 {
                    Activation::Relu
                } else {
                    Activation::Identity
                };
                DenseLayer::new(
                    &mut store,
                    &format!("probe.{i}"),
                    widths[i],
                    widths[i + 1],
                    act,
                    Init::Glorot,
                    &mut rng,
                )
            })
            .collect();
        Ok(Self {
            store,
            layers,
            data_dim,
            classes,
            accuracy: None,
        })
    }

    /// Trains on `train` and, if given, records accuracy on `held_out`.
    pub fn train(train: &Dataset, held_out: Option<&Dataset>, cfg: &ProbeConfig) -> Result<Self> {
        let labels = train.labels()?;
        let classes = train.classes();
        let mut distinct = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::invalid(
                "probe training data has fewer than 2 classes",
            ));
        }
        if cfg.batch_size == 0 {
            return Err(Error::invalid("probe batch_size must be ≥ 1"));
        }
        let mut net = Self::new(train.dim(), classes, cfg.seed)?;
        let params = net.layers.iter().flat_map(|l| l.params()).collect();
        let mut opt = Adam::new(
            params,
            &net.store,
            AdamConfig {
                learning_rate: cfg.learning_rate,
                ..Default::default()
            },
        );
        let mut rng = Rng::seed_from_u64(cfg.seed).fork(2);
        for _ in 0..cfg.epochs {
            let perm = rng.permutation(train.len());
            for idx in perm.chunks(cfg.batch_size) {
                let x = train.images.select_rows(idx);
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let mut g = Graph::new();
                let xv = g.constant(x);
                let logits = mlp(&net.layers, &mut g, &net.store, xv)?.1;
                let loss = cross_entropy(&mut g, logits, &y, classes)?;
                if !g.scalar(loss).is_finite() {
                    return Err(Error::NonFinite("probe training loss".into()));
                }
                let grads = g.backward(loss)?;
                opt.descend(&mut net.store, &grads)?;
            }
        }
        if let Some(test) = held_out {
            net.accuracy = Some(net.accuracy_on(test)?);
        }
        Ok(net)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.data_dim {
            return Err(Error::Shape {
                op: "probe",
                lhs: x.shape().to_vec(),
                rhs: vec![self.data_dim],
            });
        }
        Ok(())
    }

    /// Class logits per row.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        map_rows_chunked(x, 1000, |chunk| {
            let mut g = Graph::new();
            let xv = g.constant(chunk.clone());
            let out = mlp(&self.layers, &mut g, &self.store, xv)?.1;
            Ok(g.value(out).clone())
        })
    }

    /// Argmax class per row, ties toward the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let l = self.logits(x)?;
        Ok((0..l.rows()).map(|r| argmax(l.row(r))).collect())
    }

    pub fn accuracy_on(&self, ds: &Dataset) -> Result<f64> {
        let labels = ds.labels()?;
        if labels.is_empty() {
            return Err(Error::invalid("accuracy on an empty dataset"));
        }
        let pred = self.predict(&ds.images)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blocks = vec![Block {
            name: "probe/dims".into(),
            tensor: Tensor::vector(vec![self.data_dim as f64, self.classes as f64]),
        }];
        if let Some(a) = self.accuracy {
            blocks.push(Block {
                name: "probe/accuracy".into(),
                tensor: Tensor::scalar(a),
            });
        }
        for id in self.store.ids() {
            blocks.push(Block {
                name: format!("param/{}", self.store.name(id)),
                tensor: self.store.get(id).clone(),
            });
        }
        write_blocks(path, &blocks)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let blocks = read_blocks(path)?;
        let find = |name: &str| {
            blocks
                .iter()
                .find(|b| b.name == name)
                .map(|b| &b.tensor)
                .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
        };
        let dims = find("probe/dims")?;
        if dims.numel() != 2 {
            return Err(Error::Checkpoint("probe/dims must hold 2 values".into()));
        }
        let mut net = Self::new(dims.data()[0] as usize, dims.data()[1] as usize, 0)?;
        net.accuracy = find("probe/accuracy").ok().map(Tensor::item);
        let ids: Vec<_> = net.store.ids().collect();
        for id in ids {
            let t = find(&format!("param/{}", net.store.name(id)))?;
            if t.shape() != net.store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    net.store.name(id),
                    t.shape(),
                    net.store.get(id).shape()
                )));
            }
            net.store.set(id, t.clone());
        }
        Ok(net)
    }
}

impl FeatureMap for ProbeNet {
    /// The 64-wide penultimate activations.
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        map_rows_chunked(x, 1000, |chunk| {
            let mut g = Graph::new();
            let xv = g.constant(chunk.clone());
            let feat = mlp(&self.layers, &mut g, &self.store, xv)?.0;
            Ok(g.value(feat).clone())
        })
    }
}

/// Returns `(penultimate features, logits)`.
fn mlp(layers: &[DenseLayer], g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
    let h1 = layers[0].forward(g, store, x)?;
    let h2 = layers[1].forward(g, store, h1)?;
    let out = layers[2].forward(g, store, h2)?;
    Ok((h2, out))
}

/// Mean of `logsumexp(logits) − logits[y]` over rows.
fn cross_entropy(g: &mut Graph, logits: Var, y: &[usize], classes: usize) -> Result<Var> {
    let lv = g.value(logits).clone();
    let b = lv.rows();
    let mut max = Vec::with_capacity(b);
    let mut onehot = vec![0.0; b * classes];
    for r in 0..b {
        max.push(lv.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max));
        onehot[r * classes + y[r]] = 1.0;
    }
    let m = g.constant(Tensor::matrix(b, 1, max.clone())?);
    let shifted = g.sub(logits, m)?;
    let e = g.exp(shifted)?;
    let s = g.sum_axis(e, 1)?;
    let ls = g.log(s)?;
    let mv = g.constant(Tensor::vector(max));
    let lse = g.add(ls, mv)?;
    let oh = g.constant(Tensor::matrix(b, classes, onehot)?);
    let picked = g.mul(logits, oh)?;
    let target = g.sum_axis(picked, 1)?;
    let nll = g.sub(lse, target)?;
    Ok(g.mean(nll))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fréchet distance between probe features of `real` rows and of `n`
/// decoded prior samples.
pub fn desk_frechet(
    model: &dyn LatentModel,
    real: &Tensor,
    probe: &dyn FeatureMap,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let n = n.min(real.rows());
    if n < 2 {
        return Err(Error::invalid("desk_frechet needs at least 2 samples"));
    }
    let real = real.select_rows(&(0..n).collect::<Vec<_>>());
    let generated = model.decode(&model.sample_latent(rng, n)?)?;
    frechet_between(&probe.features(&real)?, &probe.features(&generated)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticSpec};

    fn blobs() -> Dataset {
        synth_generate(&SyntheticSpec {
            modes: 3,
            data_dim: 8,
            n: 600,
            ..Default::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn learns_separable_blobs() {
        let ds = blobs();
        let cfg = ProbeConfig {
            epochs: 20,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let net = ProbeNet::train(&ds, Some(&ds), &cfg).unwrap();
        assert!(net.accuracy.unwrap() > 0.95, "{:?}", net.accuracy);
        let f = net.features(&ds.images).unwrap();
        assert_eq!(f.shape(), &[600, 64]);
        assert!(f.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn seeded_and_deterministic() {
        let ds = blobs();
        let cfg = ProbeConfig {
            epochs: 1,
            ..Default::default()
        };
        let a = ProbeNet::train(&ds, None, &cfg).unwrap();
        let b = ProbeNet::train(&ds, None, &cfg).unwrap();
        assert_eq!(a.store, b.store);
        let x = ds.images.select_rows(&[0, 0]);
        let f = a.features(&x).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn rejects_single_class() {
        let mut ds = blobs();
        ds.labels = Some(vec![0; ds.len()]);
        assert!(ProbeNet::train(&ds, None, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = blobs();
        let cfg = ProbeConfig {
            epochs: 1,
            ..Default::default()
        };
        let net = ProbeNet::train(&ds, Some(&ds), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("probe.lfck");
        net.save(&p).unwrap();
        let back = ProbeNet::load(&p).unwrap();
        assert_eq!(back.store, net.store);
        assert_eq!(back.accuracy, net.accuracy);
    }

    #[test]
    fn cross_entropy_matches_hand_value() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let ce = cross_entropy(&mut g, l, &[1], 2).unwrap();
        assert!((g.scalar(ce) - 2f64.ln()).abs() < 1e-15);
    }
}
