//! Datasets, file formats and run configuration.

pub mod config;
pub mod idx;
pub mod pgm;
pub mod synth;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use config::{DataConfig, DataSource, EvalConfig, RunConfig};
pub use idx::load_idx;
pub use pgm::write_image_grid;
pub use synth::{synth_generate, SynthKind, SyntheticData, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images flattened to rows with values in `[0, 1]`, and optional labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
    pub split: Split,
    pub source: String,
    /// `(height, width)` when rows are images.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Number of distinct classes implied by the largest label.
    pub fn classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("dataset {} has no labels", self.source)))
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            split: self.split,
            source: self.source.clone(),
            image_shape: self.image_shape,
        }
    }

    /// The first `n` rows (all rows when `n` is 0 or too large).
    pub fn head(&self, n: usize) -> Dataset {
        let n = if n == 0 {
            self.len()
        } else {
            n.min(self.len())
        };
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// `(height, width)` for grid output; non-image rows become one line.
    pub fn grid_shape(&self) -> (usize, usize) {
        self.image_shape.unwrap_or((1, self.dim()))
    }
}

/// Picks `name` or `name.gz` inside `dir`.
fn find_file(dir: &Path, name: &str) -> Result<PathBuf> {
    for candidate in [dir.join(name), dir.join(format!("{name}.gz"))] {
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::io(
        dir.join(name),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "IDX file not found (also tried .gz)",
        ),
    ))
}

/// Loads MNIST-layout IDX files from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &find_file(dir, "train-images-idx3-ubyte")?,
        &find_file(dir, "train-labels-idx1-ubyte")?,
        Split::Train,
    )?;
    let test = load_idx(
        &find_file(dir, "t10k-images-idx3-ubyte")
            .or_else(|_| find_file(dir, "test-images-idx3-ubyte"))?,
        &find_file(dir, "t10k-labels-idx1-ubyte")
            .or_else(|_| find_file(dir, "test-labels-idx1-ubyte"))?,
        Split::Test,
    )?;
    Ok((train, test))
}

/// Train and held-out splits for a run.
pub fn load_dataset(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &cfg.source {
        DataSource::Mnist => load_mnist_dir(&cfg.data_dir)?,
        DataSource::Synthetic(spec) => {
            let mut full = synth_generate(&SyntheticSpec {
                n: cfg.train_size + cfg.test_size,
                ..spec.clone()
            })?
            .dataset;
            full.split = Split::Train;
            let n_train = cfg.train_size;
            let train = full.select(&(0..n_train).collect::<Vec<_>>());
            let mut test = full.select(&(n_train..full.len()).collect::<Vec<_>>());
            test.split = Split::Test;
            (train, test)
        }
    };
    Ok((train.head(cfg.train_size), test.head(cfg.test_size)))
}
