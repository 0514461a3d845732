use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) fn check_logits(shape: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    let (n, k) = match *shape {
        [n, k] => (n, k),
        _ => return Err(Error::dim(format!("logits must be N,K, got {shape:?}"))),
    };
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} outside [0, {k})")));
    }
    Ok((n, k))
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`, in
/// log-sum-exp form. Also returns the row-wise softmax for the backward pass.
pub(crate) fn cross_entropy_forward<T: Element>(n: usize, k: usize, logits: &[T], labels: &[usize]) -> (T, Vec<T>) {
    let mut probs = vec![T::zero(); n * k];
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total = total + (lse - row[label]);
        for (p, &v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
            *p = (v - lse).exp();
        }
    }
    (total / T::lit(n as f64), probs)
}

pub(crate) fn cross_entropy_backward<T: Element>(n: usize, k: usize, probs: &[T], labels: &[usize], g: T) -> Vec<T> {
    let scale = g / T::lit(n as f64);
    let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (r, &label) in labels.iter().enumerate() {
        gx[r * k + label] = gx[r * k + label] - scale;
    }
    gx
}

/// Categorical cross-entropy averaged over the batch.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (n, k) = check_logits(logits.shape(), labels)?;
    Ok(cross_entropy_forward(n, k, logits.data(), labels).0)
}

/// Checks a bias table against a query grid and returns its centre offsets.
pub(crate) fn check_rel_bias(table: &[usize], h: usize, w: usize) -> Result<(usize, usize, usize)> {
    let (heads, th, tw) = match *table {
        [a, b, c] => (a, b, c),
        _ => return Err(Error::dim(format!("relative bias table must be heads,2H-1,2W-1, got {table:?}"))),
    };
    if th < 2 * h - 1 || tw < 2 * w - 1 || th % 2 == 0 || tw % 2 == 0 {
        return Err(Error::config(format!(
            "relative bias table {th}x{tw} cannot cover offsets of a {h}x{w} grid"
        )));
    }
    Ok((heads, th, tw))
}

/// Flat table index used for the (query, key) token pair: depends only on
/// the 2-D offset between the two positions.
pub(crate) fn rel_bias_indices(h: usize, w: usize, th: usize, tw: usize) -> Vec<usize> {
    let (ch, cw) = ((th - 1) / 2, (tw - 1) / 2);
    let l = h * w;
    let mut idx = Vec::with_capacity(l * l);
    for i in 0..l {
        let (ri, ci) = (i / w, i % w);
        for j in 0..l {
            let (rj, cj) = (j / w, j % w);
            let dr = (ch + ri) - rj;
            let dc = (cw + ci) - cj;
            idx.push(dr * tw + dc);
        }
    }
    idx
}

/// Expands a per-head relative-position table into a `heads × L × L` bias
/// for an `h × w` token grid.
pub fn relative_bias<T: Element>(table: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (heads, th, tw) = check_rel_bias(table.shape(), h, w)?;
    let idx = rel_bias_indices(h, w, th, tw);
    let per_head = th * tw;
    let mut out = Vec::with_capacity(heads * idx.len());
    for hd in 0..heads {
        let t = &table.data()[hd * per_head..(hd + 1) * per_head];
        out.extend(idx.iter().map(|&i| t[i]));
    }
    Tensor::new([heads, h * w, h * w], out)
}
