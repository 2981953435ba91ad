//! Dense kernels with hand-written backward passes. All buffers are row-major.

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// c = a·b + beta·c with a logically [m,k] and b logically [k,n]; `ta`/`tb`
/// read the stored operand transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked above and strides stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// y[rows, out] = x[rows, in]·w[in, out] + bias
pub fn linear(x: &[f64], rows: usize, n_in: usize, w: &[f64], bias: &[f64], n_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    gemm(rows, n_in, n_out, x, false, w, false, &mut y, 1.0);
    y
}

/// Accumulates dw, db and returns dx.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    gemm(n_in, rows, n_out, x, true, dy, false, dw, 1.0);
    for r in 0..rows {
        for (d, g) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
            *d += g;
        }
    }
    let mut dx = vec![0.0; rows * n_in];
    gemm(rows, n_out, n_in, dy, false, w, true, &mut dx, 0.0);
    dx
}

pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], dim: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let rows = x.len() / dim;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..dim {
            let xh = (row[i] - mean) * rs;
            xhat[r * dim + i] = xh;
            y[r * dim + i] = xh * g[i] + b[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward(dy: &[f64], cache: &LnCache, dim: usize, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let rows = dy.len() / dim;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; dim];
    for r in 0..rows {
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let d = &dy[r * dim..(r + 1) * dim];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for i in 0..dim {
            dg[i] += d[i] * xh[i];
            db[i] += d[i];
            dxhat[i] = d[i] * g[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
        }
        mean_d /= dim as f64;
        mean_dx /= dim as f64;
        let rs = cache.rstd[r];
        for i in 0..dim {
            dx[r * dim + i] = rs * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
    dx
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place softmax of a row; returns log-sum-exp.
pub fn softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Causal multi-head attention over `batch` independent sequences of length
/// `t`. `qkv` rows are `[q | k | v]`, each `h` wide. Returns the head outputs
/// `[batch*t, h]` and the attention probabilities `[batch, heads, t, t]`.
pub fn attention(qkv: &[f64], batch: usize, t: usize, h: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let d = h / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; batch * t * h];
    let mut probs = vec![0.0; batch * heads * t * t];
    for b in 0..batch {
        for hd in 0..heads {
            let pbase = (b * heads + hd) * t * t;
            for i in 0..t {
                let qi = &qkv[(b * t + i) * 3 * h + hd * d..][..d];
                let row = &mut probs[pbase + i * t..pbase + i * t + i + 1];
                for (j, p) in row.iter_mut().enumerate() {
                    let kj = &qkv[(b * t + j) * 3 * h + h + hd * d..][..d];
                    *p = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                }
                softmax_in_place(row);
                let o = &mut out[(b * t + i) * h + hd * d..][..d];
                for j in 0..=i {
                    let p = probs[pbase + i * t + j];
                    let vj = &qkv[(b * t + j) * 3 * h + 2 * h + hd * d..][..d];
                    for (x, v) in o.iter_mut().zip(vj) {
                        *x += p * v;
                    }
                }
            }
        }
    }
    (out, probs)
}

pub fn attention_backward(
    qkv: &[f64],
    probs: &[f64],
    dout: &[f64],
    batch: usize,
    t: usize,
    h: usize,
    heads: usize,
) -> Vec<f64> {
    let d = h / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut dqkv = vec![0.0; qkv.len()];
    let mut dp = vec![0.0; t];
    for b in 0..batch {
        for hd in 0..heads {
            let pbase = (b * heads + hd) * t * t;
            for i in 0..t {
                let doi = &dout[(b * t + i) * h + hd * d..][..d];
                let p = &probs[pbase + i * t..pbase + i * t + i + 1];
                let mut dot = 0.0;
                for j in 0..=i {
                    let voff = (b * t + j) * 3 * h + 2 * h + hd * d;
                    let vj = &qkv[voff..voff + d];
                    dp[j] = doi.iter().zip(vj).map(|(a, c)| a * c).sum();
                    dot += p[j] * dp[j];
                    for (k, g) in doi.iter().enumerate() {
                        dqkv[voff + k] += p[j] * g;
                    }
                }
                let qoff = (b * t + i) * 3 * h + hd * d;
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let koff = (b * t + j) * 3 * h + h + hd * d;
                    for k in 0..d {
                        dqkv[qoff + k] += ds * qkv[koff + k];
                        dqkv[koff + k] += ds * qkv[qoff + k];
                    }
                }
            }
        }
    }
    dqkv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn first_query_attends_only_to_itself() {
        let qkv: Vec<f64> = (0..2 * 6).map(|i| i as f64 * 0.1).collect();
        let (out, probs) = attention(&qkv, 1, 2, 2, 1);
        assert_eq!(probs[0], 1.0);
        assert_eq!(probs[1], 0.0);
        assert_eq!(&out[..2], &qkv[4..6]);
    }
}
