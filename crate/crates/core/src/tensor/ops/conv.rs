use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Stride, zero padding (rows, columns) and group count of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: [usize; 2],
    pub groups: usize,
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dOptions {
            stride,
            padding: [padding, padding],
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, rows: usize, cols: usize) -> Self {
        self.padding = [rows, cols];
        self
    }
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions::new(1, 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cout_g: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    groups: usize,
}

impl ConvGeom {
    pub(crate) fn new(
        x: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        opts: Conv2dOptions,
    ) -> Result<Self> {
        let [n, cin, h, w] = match *x {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::dim(format!("conv2d input must be N,C,H,W, got {x:?}"))),
        };
        let [cout, cin_g, kh, kw] = match *weight {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(Error::dim(format!(
                    "conv2d weight must be Cout,Cin/groups,kH,kW, got {weight:?}"
                )))
            }
        };
        let groups = opts.groups;
        if groups == 0 || opts.stride == 0 {
            return Err(Error::dim("conv2d stride and groups must be positive"));
        }
        if cin % groups != 0 || cout % groups != 0 {
            return Err(Error::dim(format!(
                "conv2d channels {cin}->{cout} not divisible by {groups} groups"
            )));
        }
        if cin / groups != cin_g {
            return Err(Error::dim(format!(
                "conv2d weight expects {cin_g} input channels per group, input has {}",
                cin / groups
            )));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return Err(Error::dim(format!("conv2d bias must be [{cout}], got {b:?}")));
            }
        }
        let [ph, pw] = opts.padding;
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        let ho = (h + 2 * ph - kh) / opts.stride + 1;
        let wo = (w + 2 * pw - kw) / opts.stride + 1;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho,
            wo,
            cin_g,
            cout_g: cout / groups,
            stride: opts.stride,
            ph,
            pw,
            groups,
        })
    }

    pub(crate) fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }

    /// Rows of the unrolled patch matrix for one group.
    fn patch_len(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    /// Output column range `ox` whose input column `ox*stride + k - pad` lies in `[0, len)`.
    fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
        // ox*stride + k >= pad
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        // ox*stride + k - pad <= len - 1
        let hi = if len + pad > k {
            ((len + pad - k - 1) / stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Unrolls group `g` of one sample into `cols` (`patch_len × ho·wo`).
    fn im2col<T: Element>(&self, x: &[T], g: usize, cols: &mut [T]) {
        let hw_out = self.ho * self.wo;
        let mut row = 0;
        for ci in 0..self.cin_g {
            let plane = &x[(g * self.cin_g + ci) * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                    dst.fill(T::zero());
                    let (x0, x1) = Self::valid_range(kj, self.pw, self.stride, self.w, self.wo);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.ph as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..];
                        for ox in x0..x1 {
                            dst[oy * self.wo + ox] = src[ox * self.stride + kj - self.pw];
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: scatter-adds `cols` back into the sample gradient.
    fn col2im<T: Element>(&self, cols: &[T], g: usize, gx: &mut [T]) {
        let hw_out = self.ho * self.wo;
        let mut row = 0;
        for ci in 0..self.cin_g {
            let plane = &mut gx[(g * self.cin_g + ci) * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[row * hw_out..(row + 1) * hw_out];
                    let (x0, x1) = Self::valid_range(kj, self.pw, self.stride, self.w, self.wo);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.ph as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..];
                        for ox in x0..x1 {
                            dst[ox * self.stride + kj - self.pw] =
                                dst[ox * self.stride + kj - self.pw] + src[oy * self.wo + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// 2-D cross-correlation of an N,C,H,W input with a Cout,Cin/groups,kH,kW kernel.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Result<Tensor<T>> {
    let geom = ConvGeom::new(input.shape(), weight.shape(), bias.map(|b| b.shape()), opts)?;
    let out = conv2d_forward(&geom, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(geom.out_shape(), out)
}

pub(crate) fn conv2d_forward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let hw_out = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.cout * hw_out];
    let x_len = g.cin * g.h * g.w;
    let k = g.patch_len();
    let mut cols = if g.is_depthwise() || g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * hw_out]
    };
    for s in 0..g.n {
        let xs = &x[s * x_len..(s + 1) * x_len];
        let ys = &mut out[s * g.cout * hw_out..(s + 1) * g.cout * hw_out];
        if g.is_depthwise() {
            depthwise_forward(g, xs, w, ys);
        } else {
            for grp in 0..g.groups {
                let wg = &w[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
                let yg = &mut ys[grp * g.cout_g * hw_out..(grp + 1) * g.cout_g * hw_out];
                let rhs: &[T] = if g.is_pointwise() {
                    &xs[grp * g.cin_g * hw_out..(grp + 1) * g.cin_g * hw_out]
                } else {
                    g.im2col(xs, grp, &mut cols);
                    &cols
                };
                T::gemm(
                    g.cout_g,
                    k,
                    hw_out,
                    wg,
                    k as isize,
                    1,
                    rhs,
                    hw_out as isize,
                    1,
                    T::zero(),
                    yg,
                    hw_out as isize,
                    1,
                );
            }
        }
        if let Some(b) = bias {
            for (c, &bc) in b.iter().enumerate() {
                for v in &mut ys[c * hw_out..(c + 1) * hw_out] {
                    *v = *v + bc;
                }
            }
        }
    }
    out
}

fn depthwise_forward<T: Element>(g: &ConvGeom, xs: &[T], w: &[T], ys: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cout {
        let plane = &xs[c * g.h * g.w..(c + 1) * g.h * g.w];
        let yc = &mut ys[c * hw_out..(c + 1) * hw_out];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let wv = w[(c * g.kh + ki) * g.kw + kj];
                let (x0, x1) = ConvGeom::valid_range(kj, g.pw, g.stride, g.w, g.wo);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.ph as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let row = &plane[iy as usize * g.w..];
                    let out_row = &mut yc[oy * g.wo..(oy + 1) * g.wo];
                    for ox in x0..x1 {
                        out_row[ox] = out_row[ox] + wv * row[ox * g.stride + kj - g.pw];
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to (input, weight, bias); each
/// entry is computed only when requested.
pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
    need: [bool; 3],
) -> [Option<Vec<T>>; 3] {
    let hw_out = g.ho * g.wo;
    let x_len = g.cin * g.h * g.w;
    let k = g.patch_len();
    let mut gx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut gw = need[1].then(|| vec![T::zero(); w.len()]);
    let gb = need[2].then(|| {
        let mut gb = vec![T::zero(); g.cout];
        for s in 0..g.n {
            for (c, acc) in gb.iter_mut().enumerate() {
                let start = (s * g.cout + c) * hw_out;
                *acc = *acc + gy[start..start + hw_out].iter().copied().sum::<T>();
            }
        }
        gb
    });
    if gx.is_none() && gw.is_none() {
        return [gx, gw, gb];
    }

    let general = !g.is_depthwise() && !g.is_pointwise();
    let mut cols = if general { vec![T::zero(); k * hw_out] } else { Vec::new() };
    let mut gcols = if general && gx.is_some() {
        vec![T::zero(); k * hw_out]
    } else {
        Vec::new()
    };
    for s in 0..g.n {
        let xs = &x[s * x_len..(s + 1) * x_len];
        let gys = &gy[s * g.cout * hw_out..(s + 1) * g.cout * hw_out];
        if g.is_depthwise() {
            depthwise_backward(
                g,
                xs,
                w,
                gys,
                gx.as_mut().map(|v| &mut v[s * x_len..(s + 1) * x_len]),
                gw.as_deref_mut(),
            );
            continue;
        }
        for grp in 0..g.groups {
            let wg = &w[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
            let gyg = &gys[grp * g.cout_g * hw_out..(grp + 1) * g.cout_g * hw_out];
            let xg_range = grp * g.cin_g * hw_out..(grp + 1) * g.cin_g * hw_out;
            if general {
                g.im2col(xs, grp, &mut cols);
            }
            if let Some(gw) = gw.as_mut() {
                let patches: &[T] = if general { &cols } else { &xs[xg_range.clone()] };
                // dW_g += dY_g · colsᵀ
                T::gemm(
                    g.cout_g,
                    hw_out,
                    k,
                    gyg,
                    hw_out as isize,
                    1,
                    patches,
                    1,
                    hw_out as isize,
                    T::one(),
                    &mut gw[grp * g.cout_g * k..(grp + 1) * g.cout_g * k],
                    k as isize,
                    1,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let gxs = &mut gx[s * x_len..(s + 1) * x_len];
                // dcols = W_gᵀ · dY_g
                if general {
                    T::gemm(
                        k,
                        g.cout_g,
                        hw_out,
                        wg,
                        1,
                        k as isize,
                        gyg,
                        hw_out as isize,
                        1,
                        T::zero(),
                        &mut gcols,
                        hw_out as isize,
                        1,
                    );
                    g.col2im(&gcols, grp, gxs);
                } else {
                    T::gemm(
                        k,
                        g.cout_g,
                        hw_out,
                        wg,
                        1,
                        k as isize,
                        gyg,
                        hw_out as isize,
                        1,
                        T::one(),
                        &mut gxs[xg_range],
                        hw_out as isize,
                        1,
                    );
                }
            }
        }
    }
    [gx, gw, gb]
}

fn depthwise_backward<T: Element>(
    g: &ConvGeom,
    xs: &[T],
    w: &[T],
    gys: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cout {
        let plane = &xs[c * g.h * g.w..(c + 1) * g.h * g.w];
        let gyc = &gys[c * hw_out..(c + 1) * hw_out];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let widx = (c * g.kh + ki) * g.kw + kj;
                let wv = w[widx];
                let (x0, x1) = ConvGeom::valid_range(kj, g.pw, g.stride, g.w, g.wo);
                let mut acc = T::zero();
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.ph as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let base = c * g.h * g.w + iy as usize * g.w;
                    let gy_row = &gyc[oy * g.wo..(oy + 1) * g.wo];
                    if let Some(gx) = gx.as_deref_mut() {
                        for ox in x0..x1 {
                            let i = base + ox * g.stride + kj - g.pw;
                            gx[i] = gx[i] + wv * gy_row[ox];
                        }
                    }
                    if gw.is_some() {
                        let row = &plane[iy as usize * g.w..];
                        for ox in x0..x1 {
                            acc = acc + row[ox * g.stride + kj - g.pw] * gy_row[ox];
                        }
                    }
                }
                if let Some(gw) = gw.as_deref_mut() {
                    gw[widx] = gw[widx] + acc;
                }
            }
        }
    }
}
