use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Splits a shape around `axis` into (outer, axis extent, inner) products.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Reciprocal standard deviation per normalized vector, kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormStats<T> {
    pub rstd: Vec<T>,
}

pub(crate) fn check_layer_norm(x: &[usize], gamma: &[usize], beta: &[usize], eps: f64) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::dim(format!("layer_norm needs a channel axis, got {x:?}")));
    }
    let c = x[1];
    if gamma != [c] || beta != [c] {
        return Err(Error::dim(format!(
            "layer_norm affine parameters must be [{c}], got {gamma:?} / {beta:?}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::contract("layer_norm epsilon must be positive"));
    }
    Ok(())
}

/// Normalizes across axis 1 at every (sample, spatial position), before the
/// affine transform. Returns `x̂` and its statistics.
pub(crate) fn normalize_channels<T: Element>(
    shape: &[usize],
    x: &[T],
    eps: T,
) -> (Vec<T>, NormStats<T>) {
    let (n, c, inner) = split_axis(shape, 1);
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(n * inner);
    let inv_c = T::one() / T::lit(c as f64);
    for s in 0..n {
        let base = s * c * inner;
        let mut mu = vec![T::zero(); inner];
        for ch in 0..c {
            let row = &x[base + ch * inner..base + (ch + 1) * inner];
            for (m, &v) in mu.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        mu.iter_mut().for_each(|m| *m = *m * inv_c);
        let mut var = vec![T::zero(); inner];
        for ch in 0..c {
            let row = &x[base + ch * inner..base + (ch + 1) * inner];
            for ((acc, &v), &m) in var.iter_mut().zip(row).zip(&mu) {
                let d = v - m;
                *acc = *acc + d * d;
            }
        }
        let rs: Vec<T> = var.iter().map(|&v| T::one() / (v * inv_c + eps).sqrt()).collect();
        for ch in 0..c {
            let off = base + ch * inner;
            for p in 0..inner {
                xhat[off + p] = (x[off + p] - mu[p]) * rs[p];
            }
        }
        rstd.extend(rs);
    }
    (xhat, NormStats { rstd })
}

/// Layer normalization over the channel axis (axis 1) followed by a
/// per-channel affine map.
pub fn layer_norm<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    check_layer_norm(input.shape(), gamma.shape(), beta.shape(), epsilon)?;
    let (xhat, _) = normalize_channels(input.shape(), input.data(), T::lit(epsilon));
    Tensor::new(
        input.shape().to_vec(),
        apply_affine(input.shape(), &xhat, gamma.data(), beta.data()),
    )
}

pub(crate) fn apply_affine<T: Element>(shape: &[usize], xhat: &[T], gamma: &[T], beta: &[T]) -> Vec<T> {
    let (n, c, inner) = split_axis(shape, 1);
    let mut y = vec![T::zero(); xhat.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * inner;
            for p in 0..inner {
                y[off + p] = xhat[off + p] * gamma[ch] + beta[ch];
            }
        }
    }
    y
}

/// Returns (d input, d gamma, d beta).
pub(crate) fn layer_norm_backward<T: Element>(
    shape: &[usize],
    xhat: &[T],
    stats: &NormStats<T>,
    gamma: &[T],
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, inner) = split_axis(shape, 1);
    let mut gx = vec![T::zero(); xhat.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let inv_c = T::one() / T::lit(c as f64);
    for s in 0..n {
        let base = s * c * inner;
        let mut sum_g = vec![T::zero(); inner];
        let mut sum_gx = vec![T::zero(); inner];
        for ch in 0..c {
            let off = base + ch * inner;
            for p in 0..inner {
                let g = gy[off + p];
                ggamma[ch] = ggamma[ch] + g * xhat[off + p];
                gbeta[ch] = gbeta[ch] + g;
                let gh = g * gamma[ch];
                sum_g[p] = sum_g[p] + gh;
                sum_gx[p] = sum_gx[p] + gh * xhat[off + p];
            }
        }
        for ch in 0..c {
            let off = base + ch * inner;
            for p in 0..inner {
                let gh = gy[off + p] * gamma[ch];
                let rs = stats.rstd[s * inner + p];
                gx[off + p] = rs * (gh - inv_c * sum_g[p] - xhat[off + p] * inv_c * sum_gx[p]);
            }
        }
    }
    (gx, ggamma, gbeta)
}

/// Softmax along `axis`, computed with max subtraction.
pub fn softmax<T: Element>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= input.rank() {
        return Err(Error::dim(format!(
            "softmax axis {axis} out of range for {:?}",
            input.shape()
        )));
    }
    Tensor::new(input.shape().to_vec(), softmax_forward(input.shape(), input.data(), axis))
}

pub(crate) fn softmax_forward<T: Element>(shape: &[usize], x: &[T], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(x[at(k)]);
            }
            let mut total = T::zero();
            for k in 0..len {
                let e = (x[at(k)] - m).exp();
                y[at(k)] = e;
                total = total + e;
            }
            for k in 0..len {
                y[at(k)] = y[at(k)] / total;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Element>(shape: &[usize], y: &[T], gy: &[T], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| gy[at(k)] * y[at(k)]).sum();
            for k in 0..len {
                gx[at(k)] = y[at(k)] * (gy[at(k)] - dot);
            }
        }
    }
    gx
}
