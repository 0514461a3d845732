use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolWindow {
    /// Square window of the given side.
    Size(usize),
    /// Whole H×W map per channel.
    Global,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub nc: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl PoolGeom {
    pub(crate) fn new(shape: &[usize], window: PoolWindow, stride: usize) -> Result<Self> {
        let [n, c, h, w] = match *shape {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::dim(format!("pool2d input must be N,C,H,W, got {shape:?}"))),
        };
        let (kh, kw, stride) = match window {
            PoolWindow::Global => (h, w, 1),
            PoolWindow::Size(k) => {
                if k == 0 || stride == 0 {
                    return Err(Error::dim("pool2d window and stride must be positive"));
                }
                if k > h || k > w {
                    return Err(Error::dim(format!(
                        "pool2d window {k} exceeds input {h}x{w}"
                    )));
                }
                (k, k, stride)
            }
        };
        Ok(PoolGeom {
            nc: n * c,
            h,
            w,
            kh,
            kw,
            stride,
            ho: (h - kh) / stride + 1,
            wo: (w - kw) / stride + 1,
        })
    }
}

/// Average or max pooling without padding. Returns the output and, for max
/// pooling, the flat input index selected for each output element (first
/// maximum in scan order).
pub(crate) fn pool2d_forward<T: Element>(
    g: &PoolGeom,
    x: &[T],
    kind: PoolKind,
) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.nc * g.ho * g.wo);
    let mut argmax = Vec::new();
    let inv = T::one() / T::lit((g.kh * g.kw) as f64);
    for p in 0..g.nc {
        let base = p * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let (y0, x0) = (oy * g.stride, ox * g.stride);
                match kind {
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for i in y0..y0 + g.kh {
                            for j in x0..x0 + g.kw {
                                acc = acc + x[base + i * g.w + j];
                            }
                        }
                        out.push(acc * inv);
                    }
                    PoolKind::Max => {
                        let mut best = base + y0 * g.w + x0;
                        for i in y0..y0 + g.kh {
                            for j in x0..x0 + g.kw {
                                let idx = base + i * g.w + j;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn pool2d_backward<T: Element>(
    g: &PoolGeom,
    kind: PoolKind,
    argmax: &[usize],
    gy: &[T],
) -> Vec<T> {
    let mut gx = vec![T::zero(); g.nc * g.h * g.w];
    match kind {
        PoolKind::Max => {
            for (&idx, &gv) in argmax.iter().zip(gy) {
                gx[idx] = gx[idx] + gv;
            }
        }
        PoolKind::Avg => {
            let inv = T::one() / T::lit((g.kh * g.kw) as f64);
            let mut o = 0;
            for p in 0..g.nc {
                let base = p * g.h * g.w;
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let share = gy[o] * inv;
                        o += 1;
                        for i in oy * g.stride..oy * g.stride + g.kh {
                            for j in ox * g.stride..ox * g.stride + g.kw {
                                gx[base + i * g.w + j] = gx[base + i * g.w + j] + share;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Spatial pooling of an N,C,H,W tensor. A global window reduces each
/// channel map to a single value.
pub fn pool2d<T: Element>(
    input: &Tensor<T>,
    kind: PoolKind,
    window: PoolWindow,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = PoolGeom::new(input.shape(), window, stride)?;
    let (out, _) = pool2d_forward(&g, input.data(), kind);
    Tensor::new([input.shape()[0], input.shape()[1], g.ho, g.wo], out)
}
