//! Pre-norm decoder blocks: full-sequence forward/backward and a cached
//! single-position step for sampling.

use super::ops::{
    attention, attention_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, LnCache,
};
use super::params::{BlockP, LinearP, NormP};

pub struct BlockCache {
    ln1: LnCache,
    a: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    att: Vec<f64>,
    ln2: LnCache,
    m: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

pub(crate) fn lin(p: &[f64], l: &LinearP, x: &[f64], rows: usize) -> Vec<f64> {
    linear(
        x,
        rows,
        l.n_in,
        &p[l.w..l.w + l.n_in * l.n_out],
        &p[l.b..l.b + l.n_out],
        l.n_out,
    )
}

pub(crate) fn lin_back(p: &[f64], l: &LinearP, x: &[f64], dy: &[f64], rows: usize, grad: &mut [f64]) -> Vec<f64> {
    let (dw, db) = grad[l.w..l.b + l.n_out].split_at_mut(l.n_in * l.n_out);
    linear_backward(x, dy, rows, l.n_in, l.n_out, &p[l.w..l.w + l.n_in * l.n_out], dw, db)
}

pub(crate) fn norm(p: &[f64], n: &NormP, x: &[f64], dim: usize) -> (Vec<f64>, LnCache) {
    layer_norm(x, dim, &p[n.g..n.g + dim], &p[n.b..n.b + dim])
}

pub(crate) fn norm_back(p: &[f64], n: &NormP, cache: &LnCache, dy: &[f64], dim: usize, grad: &mut [f64]) -> Vec<f64> {
    let (dg, db) = grad[n.g..n.b + dim].split_at_mut(dim);
    layer_norm_backward(dy, cache, dim, &p[n.g..n.g + dim], dg, db)
}

/// x: `[batch*t, h]`.
pub fn block_forward(
    p: &[f64],
    bp: &BlockP,
    x: &[f64],
    batch: usize,
    t: usize,
    h: usize,
    heads: usize,
) -> (Vec<f64>, BlockCache) {
    let rows = batch * t;
    let (a, ln1) = norm(p, &bp.ln1, x, h);
    let qkv = lin(p, &bp.qkv, &a, rows);
    let (att, probs) = attention(&qkv, batch, t, h, heads);
    let o = lin(p, &bp.proj, &att, rows);
    let x1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
    let (m, ln2) = norm(p, &bp.ln2, &x1, h);
    let pre = lin(p, &bp.fc, &m, rows);
    let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
    let f = lin(p, &bp.out, &act, rows);
    let y = x1.iter().zip(&f).map(|(a, b)| a + b).collect();
    (
        y,
        BlockCache {
            ln1,
            a,
            qkv,
            probs,
            att,
            ln2,
            m,
            pre,
            act,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub fn block_backward(
    p: &[f64],
    bp: &BlockP,
    c: &BlockCache,
    dy: &[f64],
    batch: usize,
    t: usize,
    h: usize,
    heads: usize,
    grad: &mut [f64],
) -> Vec<f64> {
    let rows = batch * t;
    let dact = lin_back(p, &bp.out, &c.act, dy, rows, grad);
    let dpre: Vec<f64> = dact.iter().zip(&c.pre).map(|(d, &x)| d * gelu_grad(x)).collect();
    let dm = lin_back(p, &bp.fc, &c.m, &dpre, rows, grad);
    let mut dx1 = norm_back(p, &bp.ln2, &c.ln2, &dm, h, grad);
    dx1.iter_mut().zip(dy).for_each(|(a, b)| *a += b);
    let datt = lin_back(p, &bp.proj, &c.att, &dx1, rows, grad);
    let dqkv = attention_backward(&c.qkv, &c.probs, &datt, batch, t, h, heads);
    let da = lin_back(p, &bp.qkv, &c.a, &dqkv, rows, grad);
    let mut dx = norm_back(p, &bp.ln1, &c.ln1, &da, h, grad);
    dx.iter_mut().zip(&dx1).for_each(|(a, b)| *a += b);
    dx
}

pub fn stack_forward(
    p: &[f64],
    blocks: &[BlockP],
    mut x: Vec<f64>,
    batch: usize,
    t: usize,
    h: usize,
    heads: usize,
) -> (Vec<f64>, Vec<BlockCache>) {
    let mut caches = Vec::with_capacity(blocks.len());
    for bp in blocks {
        let (y, c) = block_forward(p, bp, &x, batch, t, h, heads);
        caches.push(c);
        x = y;
    }
    (x, caches)
}

#[allow(clippy::too_many_arguments)]
pub fn stack_backward(
    p: &[f64],
    blocks: &[BlockP],
    caches: &[BlockCache],
    mut dy: Vec<f64>,
    batch: usize,
    t: usize,
    h: usize,
    heads: usize,
    grad: &mut [f64],
) -> Vec<f64> {
    for (bp, c) in blocks.iter().zip(caches).rev() {
        dy = block_backward(p, bp, c, &dy, batch, t, h, heads, grad);
    }
    dy
}

/// Keys and values of every position seen so far, per layer.
#[derive(Clone, Debug, Default)]
pub struct KvCache {
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl KvCache {
    pub fn new(layers: usize) -> Self {
        KvCache {
            k: vec![Vec::new(); layers],
            v: vec![Vec::new(); layers],
        }
    }

    pub fn len(&self, h: usize) -> usize {
        self.k.first().map_or(0, |k| k.len() / h)
    }

    pub fn clear(&mut self) {
        self.k.iter_mut().for_each(Vec::clear);
        self.v.iter_mut().for_each(Vec::clear);
    }
}

/// Runs one new position through the stack, appending to the cache.
pub fn stack_step(p: &[f64], blocks: &[BlockP], x: &[f64], h: usize, heads: usize, kv: &mut KvCache) -> Vec<f64> {
    let d = h / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut x = x.to_vec();
    for (l, bp) in blocks.iter().enumerate() {
        let (a, _) = norm(p, &bp.ln1, &x, h);
        let qkv = lin(p, &bp.qkv, &a, 1);
        kv.k[l].extend_from_slice(&qkv[h..2 * h]);
        kv.v[l].extend_from_slice(&qkv[2 * h..]);
        let n = kv.k[l].len() / h;
        let mut att = vec![0.0; h];
        let mut scores = vec![0.0; n];
        for hd in 0..heads {
            let q = &qkv[hd * d..(hd + 1) * d];
            for (j, s) in scores.iter_mut().enumerate() {
                let k = &kv.k[l][j * h + hd * d..j * h + (hd + 1) * d];
                *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            super::ops::softmax_in_place(&mut scores);
            for (j, &pr) in scores.iter().enumerate() {
                let v = &kv.v[l][j * h + hd * d..j * h + (hd + 1) * d];
                for (o, vv) in att[hd * d..(hd + 1) * d].iter_mut().zip(v) {
                    *o += pr * vv;
                }
            }
        }
        let o = lin(p, &bp.proj, &att, 1);
        let x1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
        let (m, _) = norm(p, &bp.ln2, &x1, h);
        let act: Vec<f64> = lin(p, &bp.fc, &m, 1).into_iter().map(gelu).collect();
        let f = lin(p, &bp.out, &act, 1);
        x = x1.iter().zip(&f).map(|(a, b)| a + b).collect();
    }
    x
}
