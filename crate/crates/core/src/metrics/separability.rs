//! Linear separability of latent codes, measured as the conditional entropy
//! of true labels given a linear classifier's predictions.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::probe::argmax;

pub const SEPARABILITY_ITERS: usize = 500;
pub const SEPARABILITY_LR: f64 = 0.1;

/// `H(Y|X)` in bits, where `Y` are `labels` and `X` the predictions of a
/// multinomial logistic regression fit on a seeded half of the rows and
/// evaluated on the other half. Features are standardized with statistics
/// of the training half.
pub fn linear_separability(latents: &Tensor, labels: &[usize], seed: u64) -> Result<f64> {
    if latents.rank() != 2 || latents.rows() != labels.len() {
        return Err(Error::Shape {
            op: "linear_separability",
            lhs: latents.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let n = labels.len();
    if n < 20 {
        return Err(Error::invalid(format!(
            "linear_separability needs n ≥ 20, got {n}"
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid(
            "linear_separability needs at least 2 classes",
        ));
    }
    let d = latents.cols();
    let perm = Rng::seed_from_u64(seed).permutation(n);
    let (train_idx, eval_idx) = perm.split_at(n / 2);

    let mut mean = vec![0.0; d];
    for &i in train_idx {
        for (m, v) in mean.iter_mut().zip(latents.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train_idx.len() as f64);
    let mut sd = vec![0.0; d];
    for &i in train_idx {
        for ((s, v), m) in sd.iter_mut().zip(latents.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in sd.iter_mut() {
        *s = (*s / train_idx.len() as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let standardize = |idx: &[usize]| -> Result<Tensor> {
        let mut out = latents.select_rows(idx);
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&mean).zip(&sd) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    };
    let xtr = standardize(train_idx)?;
    let xev = standardize(eval_idx)?;
    let ytr: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let yev: Vec<usize> = eval_idx.iter().map(|&i| labels[i]).collect();

    let (w, b) = fit_softmax(&xtr, &ytr, classes)?;
    let mut logits = xev.matmul(&w)?;
    for r in 0..logits.rows() {
        for (v, bb) in logits.row_mut(r).iter_mut().zip(&b) {
            *v += bb;
        }
    }
    let mut joint = vec![1.0; classes * classes];
    for (r, &y) in yev.iter().enumerate() {
        let x = argmax(logits.row(r));
        joint[x * classes + y] += 1.0;
    }
    Ok(conditional_entropy_bits(&joint, classes))
}

/// Full-batch gradient descent on mean cross-entropy from zero weights.
fn fit_softmax(x: &Tensor, y: &[usize], classes: usize) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = (x.rows(), x.cols());
    let mut w = Tensor::zeros(vec![d, classes]);
    let mut b = vec![0.0; classes];
    let xt = x.transpose()?;
    for _ in 0..SEPARABILITY_ITERS {
        let mut p = x.matmul(&w)?;
        for (r, &label) in y.iter().enumerate() {
            let row = p.row_mut(r);
            for (v, bb) in row.iter_mut().zip(&b) {
                *v += bb;
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z * n as f64;
            }
            row[label] -= 1.0 / n as f64;
        }
        let gw = xt.matmul(&p)?;
        for (wv, gv) in w.data_mut().iter_mut().zip(gw.data()) {
            *wv -= SEPARABILITY_LR * gv;
        }
        for c in 0..classes {
            let gb: f64 = (0..n).map(|r| p.get(r, c)).sum();
            b[c] -= SEPARABILITY_LR * gb;
        }
    }
    Ok((w, b))
}

/// `Σₓ p(x)·H(Y | X = x)` in bits from a `classes × classes` table of
/// counts indexed `[x][y]`.
pub(crate) fn conditional_entropy_bits(joint: &[f64], classes: usize) -> f64 {
    let total: f64 = joint.iter().sum();
    let mut h = 0.0;
    for x in 0..classes {
        let row = &joint[x * classes..(x + 1) * classes];
        let rs: f64 = row.iter().sum();
        if rs == 0.0 {
            continue;
        }
        let hx: f64 = row
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / rs;
                -p * p.log2()
            })
            .sum();
        h += rs / total * hx;
    }
    h
}
