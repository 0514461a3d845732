//! Brute-force loop implementations used as test oracles. Deliberately
//! naive: no shared code with the kernels under test.

use crate::tensor::Tensor;

pub fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Deterministic pseudo-random tensor with entries in `±scale`.
pub fn noise(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| {
        let z = ((i as f64 + 1.0) * 12.9898 + seed as f64 * 78.233).sin() * 43758.5453;
        (z - z.floor() - 0.5) * 2.0 * scale
    })
    .unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn map(x: &Tensor<f64>, f: impl Fn(f64) -> f64) -> Tensor<f64> {
    x.map(f)
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    assert_eq!(a.shape(), b.shape());
    t(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
}

pub fn conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: [usize; 2],
    groups: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, cpg, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    assert_eq!(cpg * groups, cin);
    let ho = (h + 2 * pad[0] - kh) / stride + 1;
    let wo = (wd + 2 * pad[1] - kw) / stride + 1;
    let opg = cout / groups;
    let mut out = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for o in 0..cout {
            let g = o / opg;
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for ci in 0..cpg {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad[0] as isize;
                                let c = (j * stride + v) as isize - pad[1] as isize;
                                if r < 0 || c < 0 || r >= h as isize || c >= wd as isize {
                                    continue;
                                }
                                acc += x.at(&[s, g * cpg + ci, r as usize, c as usize]) * w.at(&[o, ci, u, v]);
                            }
                        }
                    }
                    out[((s * cout + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    t(&[n, cout, ho, wo], out)
}

/// Channel projection with an `out × in` matrix at every location.
pub fn pointwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    conv2d(x, &w.reshape([o, i, 1, 1]).unwrap(), Some(b), 1, [0, 0], 1)
}

pub fn depthwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let k = w.shape()[2];
    conv2d(x, w, Some(b), 1, [k / 2, k / 2], x.shape()[1])
}

pub fn layer_norm(x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = x.clone();
    for a in 0..n {
        for i in 0..h {
            for j in 0..w {
                let vals: Vec<f64> = (0..c).map(|k| x.at(&[a, k, i, j])).collect();
                let mean = vals.iter().sum::<f64>() / c as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                for k in 0..c {
                    out.data_mut()[((a * c + k) * h + i) * w + j] =
                        (vals[k] - mean) / (var + eps).sqrt() * g.data()[k] + b.data()[k];
                }
            }
        }
    }
    out
}

/// Per-(sample, channel) mean and max over the spatial map.
pub fn global_pools(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let hw = s[2] * s[3];
    let (mut avg, mut max) = (vec![], vec![]);
    for plane in x.data().chunks(hw) {
        avg.push(plane.iter().sum::<f64>() / hw as f64);
        max.push(plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    (avg, max)
}

fn matvec(w: &Tensor<f64>, v: &[f64]) -> Vec<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    (0..o).map(|r| (0..i).map(|c| w.at(&[r, c]) * v[c]).sum()).collect()
}

/// `w2 · ReLU(w1 · v)`.
pub fn mlp(w1: &Tensor<f64>, w2: &Tensor<f64>, v: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = matvec(w1, v).into_iter().map(|z| z.max(0.0)).collect();
    matvec(w2, &h)
}

/// Multiplies channel `(n, c)` by `s[n·C + c]`.
pub fn scale_channels(x: &Tensor<f64>, s: &[f64]) -> Tensor<f64> {
    let hw = x.shape()[2] * x.shape()[3];
    let data = x.data().iter().enumerate().map(|(i, v)| v * s[i / hw]).collect();
    t(x.shape(), data)
}

pub fn channel_attention(f: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> Vec<f64> {
    let c = f.shape()[1];
    let (avg, max) = global_pools(f);
    let mut out = vec![];
    for n in 0..f.shape()[0] {
        let a = mlp(w1, w2, &avg[n * c..(n + 1) * c]);
        let m = mlp(w1, w2, &max[n * c..(n + 1) * c]);
        out.extend(a.iter().zip(&m).map(|(x, y)| sigmoid(x + y)));
    }
    out
}

pub fn spatial_attention(fp: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let s = fp.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut pooled = vec![0.0; n * 2 * h * w];
    for a in 0..n {
        for i in 0..h {
            for j in 0..w {
                let vals: Vec<f64> = (0..c).map(|k| fp.at(&[a, k, i, j])).collect();
                pooled[((a * 2) * h + i) * w + j] = vals.iter().sum::<f64>() / c as f64;
                pooled[((a * 2 + 1) * h + i) * w + j] = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    let k = kernel.shape()[2];
    let logits = conv2d(&t(&[n, 2, h, w], pooled), kernel, Some(bias), 1, [k / 2, k / 2], 1);
    map(&logits, sigmoid)
}

pub fn cbam(f: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let refined = scale_channels(f, &channel_attention(f, w1, w2));
    let ms = spatial_attention(&refined, kernel, bias);
    let hw = f.shape()[2] * f.shape()[3];
    let c = f.shape()[1];
    let data = refined
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * ms.data()[(i / (c * hw)) * hw + i % hw])
        .collect();
    t(f.shape(), data)
}

pub fn se(f: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> Tensor<f64> {
    let c = f.shape()[1];
    let (avg, _) = global_pools(f);
    let mut s = vec![];
    for n in 0..f.shape()[0] {
        s.extend(mlp(w1, w2, &avg[n * c..(n + 1) * c]).into_iter().map(sigmoid));
    }
    scale_channels(f, &s)
}

pub fn eca(f: &Tensor<f64>, kernel: &[f64]) -> Tensor<f64> {
    let c = f.shape()[1];
    let k = kernel.len();
    let (avg, _) = global_pools(f);
    let mut s = vec![];
    for n in 0..f.shape()[0] {
        for i in 0..c {
            let mut acc = 0.0;
            for (u, kv) in kernel.iter().enumerate() {
                let j = i as isize + u as isize - (k / 2) as isize;
                if j >= 0 && (j as usize) < c {
                    acc += kv * avg[n * c + j as usize];
                }
            }
            s.push(sigmoid(acc));
        }
    }
    scale_channels(f, &s)
}

/// Relative importances `N[n·C + c]`.
pub fn grn_response(x: &Tensor<f64>, eps: f64, mean: bool) -> Vec<f64> {
    let s = x.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let norms: Vec<f64> = x.data().chunks(hw).map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut out = vec![];
    for sample in norms.chunks(c) {
        let mut denom: f64 = sample.iter().sum();
        if mean {
            denom /= c as f64;
        }
        out.extend(sample.iter().map(|g| g / (denom + eps)));
    }
    out
}

pub fn grn(x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>, eps: f64, mean: bool) -> Tensor<f64> {
    let s = x.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let resp = grn_response(x, eps, mean);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = (i / hw) % c;
            gamma.data()[ch] * v * resp[i / hw] + beta.data()[ch] + v
        })
        .collect();
    t(s, data)
}

pub struct DenseAttention<'a> {
    pub q: (&'a Tensor<f64>, &'a Tensor<f64>),
    pub k: (&'a Tensor<f64>, &'a Tensor<f64>),
    pub v: (&'a Tensor<f64>, &'a Tensor<f64>),
    pub o: (&'a Tensor<f64>, &'a Tensor<f64>),
    pub table: &'a Tensor<f64>,
    pub heads: usize,
    pub scale: bool,
}

impl DenseAttention<'_> {
    /// Full score matrices `[n][head][i][j]` after softmax, built by explicit
    /// bias lookup and normalization.
    pub fn weights(&self, x: &Tensor<f64>) -> Vec<Vec<Vec<Vec<f64>>>> {
        let s = x.shape();
        let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
        let l = h * w;
        let dh = d / self.heads;
        let q = pointwise(x, self.q.0, self.q.1);
        let k = pointwise(x, self.k.0, self.k.1);
        let (th, tw) = (self.table.shape()[1], self.table.shape()[2]);
        let mut all = vec![];
        for a in 0..n {
            let mut per_head = vec![];
            for hd in 0..self.heads {
                let mut rows = vec![];
                for i in 0..l {
                    let mut scores = vec![];
                    for j in 0..l {
                        let mut dot = 0.0;
                        for e in 0..dh {
                            let ch = hd * dh + e;
                            dot += q.at(&[a, ch, i / w, i % w]) * k.at(&[a, ch, j / w, j % w]);
                        }
                        if self.scale {
                            dot /= (dh as f64).sqrt();
                        }
                        let dr = (i / w) as isize - (j / w) as isize + (th / 2) as isize;
                        let dc = (i % w) as isize - (j % w) as isize + (tw / 2) as isize;
                        scores.push(dot + self.table.at(&[hd, dr as usize, dc as usize]));
                    }
                    let denom: f64 = scores.iter().map(|z| z.exp()).sum();
                    rows.push(scores.iter().map(|z| z.exp() / denom).collect());
                }
                per_head.push(rows);
            }
            all.push(per_head);
        }
        all
    }

    pub fn forward(&self, x: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
        let l = h * w;
        let dh = d / self.heads;
        let v = pointwise(x, self.v.0, self.v.1);
        let a = self.weights(x);
        let mut y = vec![0.0; n * d * l];
        for b in 0..n {
            for hd in 0..self.heads {
                for i in 0..l {
                    for e in 0..dh {
                        let ch = hd * dh + e;
                        y[(b * d + ch) * l + i] = (0..l).map(|j| a[b][hd][i][j] * v.at(&[b, ch, j / w, j % w])).sum();
                    }
                }
            }
        }
        pointwise(&t(s, y), self.o.0, self.o.1)
    }
}
