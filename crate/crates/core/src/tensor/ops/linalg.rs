use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) fn check_linear(x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<(usize, usize, usize)> {
    let (dout, din) = match *w {
        [o, i] => (o, i),
        _ => return Err(Error::dim(format!("linear weight must be Dout,Din, got {w:?}"))),
    };
    if x.last() != Some(&din) {
        return Err(Error::dim(format!(
            "linear expects trailing extent {din}, input is {x:?}"
        )));
    }
    if let Some(b) = b {
        if b != [dout] {
            return Err(Error::dim(format!("linear bias must be [{dout}], got {b:?}")));
        }
    }
    let rows = x.iter().product::<usize>() / din;
    Ok((rows, din, dout))
}

/// Affine map over the trailing axis: `y = x·Wᵀ + b`.
pub fn linear<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, din, dout) = check_linear(input.shape(), weight.shape(), bias.map(|b| b.shape()))?;
    let y = linear_forward(rows, din, dout, input.data(), weight.data(), bias.map(|b| b.data()));
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(shape, y)
}

pub(crate) fn linear_forward<T: Element>(
    rows: usize,
    din: usize,
    dout: usize,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
) -> Vec<T> {
    let mut y = vec![T::zero(); rows * dout];
    if let Some(b) = b {
        for row in y.chunks_mut(dout) {
            row.copy_from_slice(b);
        }
    }
    T::gemm(rows, din, dout, x, din as isize, 1, w, 1, din as isize, T::one(), &mut y, dout as isize, 1);
    y
}

/// Returns (d input, d weight, d bias).
pub(crate) fn linear_backward<T: Element>(
    rows: usize,
    din: usize,
    dout: usize,
    x: &[T],
    w: &[T],
    gy: &[T],
    need: [bool; 3],
) -> [Option<Vec<T>>; 3] {
    let gx = need[0].then(|| {
        let mut gx = vec![T::zero(); rows * din];
        T::gemm(rows, dout, din, gy, dout as isize, 1, w, din as isize, 1, T::zero(), &mut gx, din as isize, 1);
        gx
    });
    let gw = need[1].then(|| {
        let mut gw = vec![T::zero(); dout * din];
        T::gemm(dout, rows, din, gy, 1, dout as isize, x, din as isize, 1, T::zero(), &mut gw, din as isize, 1);
        gw
    });
    let gb = need[2].then(|| {
        let mut gb = vec![T::zero(); dout];
        for row in gy.chunks(dout) {
            for (acc, &g) in gb.iter_mut().zip(row) {
                *acc = *acc + g;
            }
        }
        gb
    });
    [gx, gw, gb]
}

/// Geometry of a batched product `op(A)·op(B)` where `op` optionally
/// transposes the two trailing axes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatMulGeom {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub trans_a: bool,
    pub trans_b: bool,
}

impl MatMulGeom {
    pub(crate) fn new(a: &[usize], b: &[usize], trans_a: bool, trans_b: bool) -> Result<Self> {
        let (ba, a0, a1) = match *a {
            [b, r, c] => (b, r, c),
            _ => return Err(Error::dim(format!("matmul lhs must be rank 3, got {a:?}"))),
        };
        let (bb, b0, b1) = match *b {
            [b, r, c] => (b, r, c),
            _ => return Err(Error::dim(format!("matmul rhs must be rank 3, got {b:?}"))),
        };
        let (m, ka) = if trans_a { (a1, a0) } else { (a0, a1) };
        let (kb, n) = if trans_b { (b1, b0) } else { (b0, b1) };
        if ba != bb || ka != kb {
            return Err(Error::dim(format!(
                "matmul mismatch: {a:?}{} x {b:?}{}",
                if trans_a { "ᵀ" } else { "" },
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        Ok(MatMulGeom {
            batch: ba,
            m,
            k: ka,
            n,
            trans_a,
            trans_b,
        })
    }

    /// (row stride, col stride) of op(A) viewed as m×k.
    fn a_strides(&self) -> (isize, isize) {
        if self.trans_a {
            (1, self.m as isize)
        } else {
            (self.k as isize, 1)
        }
    }

    fn b_strides(&self) -> (isize, isize) {
        if self.trans_b {
            (1, self.k as isize)
        } else {
            (self.n as isize, 1)
        }
    }
}

pub(crate) fn matmul_forward<T: Element>(g: &MatMulGeom, a: &[T], b: &[T]) -> Vec<T> {
    let (mk, kn, mn) = (g.m * g.k, g.k * g.n, g.m * g.n);
    let mut c = vec![T::zero(); g.batch * mn];
    let (rsa, csa) = g.a_strides();
    let (rsb, csb) = g.b_strides();
    for i in 0..g.batch {
        T::gemm(
            g.m,
            g.k,
            g.n,
            &a[i * mk..(i + 1) * mk],
            rsa,
            csa,
            &b[i * kn..(i + 1) * kn],
            rsb,
            csb,
            T::zero(),
            &mut c[i * mn..(i + 1) * mn],
            g.n as isize,
            1,
        );
    }
    c
}

/// Returns (d A, d B) in the stored (untransposed) layouts of A and B.
pub(crate) fn matmul_backward<T: Element>(
    g: &MatMulGeom,
    a: &[T],
    b: &[T],
    gc: &[T],
    need: [bool; 2],
) -> [Option<Vec<T>>; 2] {
    let (mk, kn, mn) = (g.m * g.k, g.k * g.n, g.m * g.n);
    let (rsa, csa) = g.a_strides();
    let (rsb, csb) = g.b_strides();
    // d op(A) = dC · op(B)ᵀ  (m×k), written through op(A)'s strides.
    let ga = need[0].then(|| {
        let mut ga = vec![T::zero(); a.len()];
        for i in 0..g.batch {
            T::gemm(
                g.m,
                g.n,
                g.k,
                &gc[i * mn..(i + 1) * mn],
                g.n as isize,
                1,
                &b[i * kn..(i + 1) * kn],
                csb,
                rsb,
                T::zero(),
                &mut ga[i * mk..(i + 1) * mk],
                rsa,
                csa,
            );
        }
        ga
    });
    // d op(B) = op(A)ᵀ · dC  (k×n)
    let gb = need[1].then(|| {
        let mut gb = vec![T::zero(); b.len()];
        for i in 0..g.batch {
            T::gemm(
                g.k,
                g.m,
                g.n,
                &a[i * mk..(i + 1) * mk],
                csa,
                rsa,
                &gc[i * mn..(i + 1) * mn],
                g.n as isize,
                1,
                T::zero(),
                &mut gb[i * kn..(i + 1) * kn],
                rsb,
                csb,
            );
        }
        gb
    });
    [ga, gb]
}

/// Batched matrix product of rank-3 tensors with optional transposition of
/// either operand's trailing two axes.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
    let g = MatMulGeom::new(a.shape(), b.shape(), trans_a, trans_b)?;
    Tensor::new([g.batch, g.m, g.n], matmul_forward(&g, a.data(), b.data()))
}
