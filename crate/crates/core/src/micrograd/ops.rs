//! Forward and backward rules for the dense ops used by the networks.
//!
//! Every `*_backward` takes the upstream gradient with the output's shape
//! and returns gradients for the inputs. Outputs are checked for
//! non-finite values.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `a (m x k) · b (k x n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.shape();
    let [k2, n] = b.shape();
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(m, n);
    let bd = b.data();
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &x) in arow.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &w) in orow.iter_mut().zip(brow) {
                *o += x * w;
            }
        }
    }
    out.check_finite("matmul")?;
    Ok(out)
}

/// Returns `(dA, dB)` for `C = A·B`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let [m, k] = a.shape();
    let [_, n] = b.shape();
    if grad.shape() != [m, n] {
        return Err(Error::Shape {
            op: "matmul_backward",
            left: vec![m, n],
            right: grad.shape().to_vec(),
        });
    }
    let mut ga = Tensor::zeros(m, k);
    let mut gb = Tensor::zeros(k, n);
    let bd = b.data();
    for i in 0..m {
        let grow = grad.row(i);
        let arow = a.row(i);
        let garow = ga.row_mut(i);
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            garow[p] = grow.iter().zip(brow).map(|(g, w)| g * w).sum();
        }
        for (p, &x) in arow.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let gbrow = gb.row_mut(p);
            for (o, &g) in gbrow.iter_mut().zip(grow) {
                *o += x * g;
            }
        }
    }
    Ok((ga, gb))
}

/// Elementwise sum; `b` may also be a single row broadcast over `a`'s rows.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let broadcast = b.rows() == 1 && b.cols() == a.cols();
    if a.shape() != b.shape() && !broadcast {
        return Err(Error::Shape {
            op: "add",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = a.clone();
    let cols = a.cols();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        *o += if broadcast {
            b.data()[i % cols]
        } else {
            b.data()[i]
        };
    }
    out.check_finite("add")?;
    Ok(out)
}

/// Returns `(dA, dB)`; a broadcast `b` receives the column sums.
pub fn add_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let ga = grad.clone();
    if a.shape() == b.shape() {
        return (ga, grad.clone());
    }
    let mut gb = Tensor::zeros(1, b.cols());
    for i in 0..grad.rows() {
        for (o, g) in gb.data_mut().iter_mut().zip(grad.row(i)) {
            *o += g;
        }
    }
    (ga, gb)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.with_data(x.data().iter().map(|&v| v.max(0.0)).collect())
}

pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    x.with_data(
        x.data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without forming `σ(x)`.
pub fn log_sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.with_data(x.data().iter().map(|&v| sigmoid_scalar(v)).collect())
}

/// Backward through `y = σ(x)` given the forward output `y`.
pub fn sigmoid_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    y.with_data(
        y.data()
            .iter()
            .zip(grad.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
    )
}

pub fn log_sigmoid(x: &Tensor) -> Tensor {
    x.with_data(x.data().iter().map(|&v| log_sigmoid_scalar(v)).collect())
}

pub fn log_sigmoid_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    x.with_data(
        x.data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &g)| g * sigmoid_scalar(-v))
            .collect(),
    )
}

/// Row-wise softmax.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Backward through row-wise softmax given the forward output `y`.
pub fn softmax_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = y.clone();
    for i in 0..y.rows() {
        let yr = y.row(i);
        let gr = grad.row(i);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &s), &g) in out.row_mut(i).iter_mut().zip(yr).zip(gr) {
            *o = s * (g - dot);
        }
    }
    out
}

/// Saved statistics from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalizes each row to zero mean and unit variance, then applies
/// `scale` and `shift` (both `1 x cols`).
pub fn layer_norm(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let n = x.cols();
    if scale.shape() != [1, n] || shift.shape() != [1, n] {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: scale.shape().to_vec(),
        });
    }
    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(i);
        for (o, v) in nrow.iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        let orow = out.row_mut(i);
        for j in 0..n {
            orow[j] = normalized.get(i, j) * scale.data()[j] + shift.data()[j];
        }
    }
    out.check_finite("layer_norm")?;
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Returns `(dX, dScale, dShift)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    scale: &Tensor,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [rows, n] = grad.shape();
    let nf = n as f64;
    let mut gx = Tensor::zeros(rows, n);
    let mut gscale = Tensor::zeros(1, n);
    let mut gshift = Tensor::zeros(1, n);
    for i in 0..rows {
        let xhat = cache.normalized.row(i);
        let g = grad.row(i);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..n {
            gscale.data_mut()[j] += g[j] * xhat[j];
            gshift.data_mut()[j] += g[j];
            let d = g[j] * scale.data()[j];
            sum_d += d;
            sum_dx += d * xhat[j];
        }
        let inv = cache.inv_std[i];
        let gxr = gx.row_mut(i);
        for j in 0..n {
            let d = g[j] * scale.data()[j];
            gxr[j] = inv * (d - sum_d / nf - xhat[j] * sum_dx / nf);
        }
    }
    (gx, gscale, gshift)
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.same_shape(target, "mse")?;
    let n = pred.len().max(1) as f64;
    let loss = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("mse"));
    }
    Ok(loss)
}

/// Gradient of [`mse`] with respect to `pred`.
pub fn mse_backward(pred: &Tensor, target: &Tensor) -> Tensor {
    let n = pred.len().max(1) as f64;
    pred.with_data(
        pred.data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| 2.0 * (p - t) / n)
            .collect(),
    )
}

/// Gathers rows of `table`.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let mut out = Tensor::zeros(ids.len(), table.cols());
    for (i, &id) in ids.iter().enumerate() {
        if id >= table.rows() {
            return Err(Error::Shape {
                op: "embedding_lookup",
                left: table.shape().to_vec(),
                right: vec![id],
            });
        }
        out.row_mut(i).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Scatter-adds row gradients back into `table`'s gradient buffer.
pub fn embedding_backward(table: &mut Tensor, ids: &[usize], grad: &Tensor) {
    let cols = table.cols();
    let g = table.grad_mut();
    for (i, &id) in ids.iter().enumerate() {
        for (o, v) in g[id * cols..(id + 1) * cols].iter_mut().zip(grad.row(i)) {
            *o += v;
        }
    }
}
