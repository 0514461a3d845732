use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Binary elementwise operations with broadcasting over unit extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

/// Same-rank broadcasting: every extent pair is equal or one side is 1.
#[derive(Debug, Clone)]
pub(crate) struct Broadcast {
    pub out: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    /// Fast path: both operands already have the output shape.
    same: bool,
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

impl Broadcast {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::dim(format!(
                "broadcast needs equal ranks, got {a:?} and {b:?}"
            )));
        }
        let mut out = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            out.push(match (x, y) {
                _ if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(Error::dim(format!(
                        "shapes {a:?} and {b:?} do not broadcast"
                    )))
                }
            });
        }
        Ok(Broadcast {
            a_strides: strides_for(a, &out),
            b_strides: strides_for(b, &out),
            same: a == b,
            out,
        })
    }

    /// Visits every output position with the matching operand offsets.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let numel: usize = self.out.iter().product();
        if self.same {
            for i in 0..numel {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out.len();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..numel {
            f(o, ia, ib);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if idx[d] < self.out[d] {
                    break;
                }
                ia -= self.a_strides[d] * self.out[d];
                ib -= self.b_strides[d] * self.out[d];
                idx[d] = 0;
            }
        }
    }

    pub(crate) fn forward<T: Element>(&self, op: Binary, a: &[T], b: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.out.iter().product()];
        self.for_each(|o, ia, ib| out[o] = op.apply(a[ia], b[ib]));
        out
    }

    /// Gradients for both operands, summed over broadcast extents.
    pub(crate) fn backward<T: Element>(
        &self,
        op: Binary,
        a: &[T],
        b: &[T],
        gy: &[T],
        need: [bool; 2],
    ) -> [Option<Vec<T>>; 2] {
        let mut ga = need[0].then(|| vec![T::zero(); a.len()]);
        let mut gb = need[1].then(|| vec![T::zero(); b.len()]);
        self.for_each(|o, ia, ib| {
            let g = gy[o];
            let (da, db) = match op {
                Binary::Add => (g, g),
                Binary::Sub => (g, -g),
                Binary::Mul => (g * b[ib], g * a[ia]),
                Binary::Div => (g / b[ib], -g * a[ia] / (b[ib] * b[ib])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[ia] = ga[ia] + da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] = gb[ib] + db;
            }
        });
        [ga, gb]
    }
}

/// Elementwise `a op b` with broadcasting over unit extents.
pub fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: Binary) -> Result<Tensor<T>> {
    let bc = Broadcast::new(a.shape(), b.shape())?;
    Tensor::new(bc.out.clone(), bc.forward(op, a.data(), b.data()))
}
