use serde::{Deserialize, Serialize};

use super::norm::split_axis;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Reductions along a single axis (the axis is kept with extent 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Returns the reduced values and, for `Max`, the selected offset along the axis.
pub(crate) fn reduce_forward<T: Element>(
    shape: &[usize],
    x: &[T],
    axis: usize,
    kind: Reduce,
) -> (Vec<T>, Vec<usize>) {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![T::zero(); outer * inner];
    let mut arg = Vec::new();
    if kind == Reduce::Max {
        arg = vec![0; outer * inner];
    }
    let scale = T::one() / T::lit(len as f64);
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let r = o * inner + i;
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    let mut acc = T::zero();
                    for k in 0..len {
                        acc = acc + x[at(k)];
                    }
                    out[r] = if kind == Reduce::Mean { acc * scale } else { acc };
                }
                Reduce::Max => {
                    let mut best = 0;
                    for k in 1..len {
                        if x[at(k)] > x[at(best)] {
                            best = k;
                        }
                    }
                    out[r] = x[at(best)];
                    arg[r] = best;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn reduce_backward<T: Element>(
    shape: &[usize],
    axis: usize,
    kind: Reduce,
    arg: &[usize],
    gy: &[T],
) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut gx = vec![T::zero(); outer * len * inner];
    let scale = match kind {
        Reduce::Mean => T::one() / T::lit(len as f64),
        _ => T::one(),
    };
    for o in 0..outer {
        for i in 0..inner {
            let r = o * inner + i;
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    for k in 0..len {
                        gx[(o * len + k) * inner + i] = gy[r] * scale;
                    }
                }
                Reduce::Max => gx[(o * len + arg[r]) * inner + i] = gy[r],
            }
        }
    }
    gx
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize) -> Result<Vec<usize>> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
    }
    let mut out = shape.to_vec();
    out[axis] = 1;
    Ok(out)
}

/// Sum, mean or max along `axis`, keeping it with extent 1.
pub fn reduce<T: Element>(input: &Tensor<T>, axis: usize, kind: Reduce) -> Result<Tensor<T>> {
    let shape = reduced_shape(input.shape(), axis)?;
    let (out, _) = reduce_forward(input.shape(), input.data(), axis, kind);
    Tensor::new(shape, out)
}

pub(crate) fn concat_shape(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::contract("concat of zero tensors"))?;
    if axis >= first.len() {
        return Err(Error::dim(format!("concat axis {axis} out of range for {first:?}")));
    }
    let mut out = first.to_vec();
    out[axis] = 0;
    for s in shapes {
        let compatible = s.len() == first.len()
            && s.iter().zip(first.iter()).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::dim(format!("cannot concat {s:?} with {first:?} on axis {axis}")));
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

pub(crate) fn concat_forward<T: Element>(parts: &[(&[usize], &[T])], axis: usize) -> Vec<T> {
    let outer: usize = parts[0].0[..axis].iter().product();
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.1.len()).sum());
    for o in 0..outer {
        for (shape, data) in parts {
            let chunk: usize = shape[axis..].iter().product();
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

/// Splits the output gradient back into per-part gradients.
pub(crate) fn concat_backward<T: Element>(shapes: &[Vec<usize>], axis: usize, gy: &[T]) -> Vec<Vec<T>> {
    let outer: usize = shapes[0][..axis].iter().product();
    let mut grads: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (shape, g) in shapes.iter().zip(grads.iter_mut()) {
            let chunk: usize = shape[axis..].iter().product();
            g.extend_from_slice(&gy[pos..pos + chunk]);
            pos += chunk;
        }
    }
    grads
}

/// Concatenates tensors along `axis`.
pub fn concat<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = parts.iter().map(|t| t.shape()).collect();
    let shape = concat_shape(&shapes, axis)?;
    let pairs: Vec<(&[usize], &[T])> = parts.iter().map(|t| (t.shape(), t.data())).collect();
    Tensor::new(shape, concat_forward(&pairs, axis))
}
