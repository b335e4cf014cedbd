//! Symmetric eigendecomposition by cyclic Jacobi rotations, and the
//! matrix square root built on it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

fn check_square(m: &Tensor, op: &'static str) -> Result<usize> {
    if m.rank() != 2 || m.rows() != m.cols() {
        return Err(Error::Shape {
            op,
            lhs: m.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok(m.rows())
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest `|aᵢⱼ − aⱼᵢ|` relative to `max(1, max |aᵢⱼ|)`.
pub fn asymmetry(m: &Tensor) -> f64 {
    let n = m.rows();
    let scale = m.data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    worst / scale
}

/// Eigenvalues and eigenvectors (as columns of the returned matrix) of a
/// symmetric matrix, sorted by descending eigenvalue.
pub fn symmetric_eigen(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = check_square(m, "symmetric_eigen")?;
    let mut a = m.data().to_vec();
    // symmetrize so rotations see one consistent matrix
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
    let mut v = Tensor::eye(n).into_data();
    let norm = frobenius(&a);
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut converged = norm == 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged || off(&a) < JACOBI_TOL * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&a) >= JACOBI_TOL * norm {
        return Err(Error::Domain {
            op: "symmetric_eigen",
            detail: format!("no convergence after {JACOBI_MAX_SWEEPS} sweeps"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vecs[r * n + col] = v[r * n + src];
        }
    }
    Ok((values, Tensor::matrix(n, n, vecs)?))
}

/// `V·diag(f(λ))·Vᵀ`.
fn reassemble(values: &[f64], vecs: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let n = values.len();
    let mut scaled = vecs.clone();
    for r in 0..n {
        for (c, v) in scaled.row_mut(r).iter_mut().enumerate() {
            *v *= f(values[c]);
        }
    }
    scaled.matmul(&vecs.transpose()?)
}

/// Principal square root of a symmetric positive semi-definite matrix.
/// Negative eigenvalues from roundoff are clamped to zero.
pub fn sym_sqrt(m: &Tensor) -> Result<Tensor> {
    check_square(m, "sym_sqrt")?;
    let asym = asymmetry(m);
    if asym > 1e-8 {
        return Err(Error::Domain {
            op: "sym_sqrt",
            detail: format!("matrix is not symmetric (relative asymmetry {asym:.3e})"),
        });
    }
    let (values, vecs) = symmetric_eigen(m)?;
    reassemble(&values, &vecs, |l| l.max(0.0).sqrt())
}

pub fn trace(m: &Tensor) -> f64 {
    (0..m.rows().min(m.cols())).map(|i| m.get(i, i)).sum()
}
