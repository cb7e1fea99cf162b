//! Forward and backward kernels. Per-sample work runs on the rayon pool;
//! reductions over the batch run in sample order so results do not
//! depend on the number of workers.

use rayon::prelude::*;

use super::{Matrix, Real, Tensor3};
use crate::error::{shape, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin_g() * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn check(&self, x: &Tensor3<impl Real>, w_len: usize) -> Result<()> {
        if self.groups == 0 || self.cin % self.groups != 0 || self.cout % self.groups != 0 {
            return Err(shape(format!("channels {}->{} not divisible by {} groups", self.cin, self.cout, self.groups)));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(shape("kernel and stride must be >= 1"));
        }
        if x.channels() != self.cin {
            return Err(shape(format!("input has {} channels, conv expects {}", x.channels(), self.cin)));
        }
        if w_len != self.weight_len() {
            return Err(shape(format!("kernel has {w_len} values, expected {}", self.weight_len())));
        }
        Ok(())
    }
}

/// cols[(ci * k + j) * lout + t] = x[ci, t * stride + j - pad] (zero outside).
fn im2col<T: Real>(x: &[T], len: usize, cin_g: usize, g: &ConvGeom, lout: usize, cols: &mut [T]) {
    let (k, s, pad) = (g.kernel, g.stride as isize, g.pad() as isize);
    for ci in 0..cin_g {
        let xc = &x[ci * len..(ci + 1) * len];
        for j in 0..k {
            let row = &mut cols[(ci * k + j) * lout..(ci * k + j + 1) * lout];
            let off = j as isize - pad;
            for (t, r) in row.iter_mut().enumerate() {
                let idx = t as isize * s + off;
                *r = if idx >= 0 && (idx as usize) < len { xc[idx as usize] } else { T::zero() };
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], len: usize, cin_g: usize, g: &ConvGeom, lout: usize, dx: &mut [T]) {
    let (k, s, pad) = (g.kernel, g.stride as isize, g.pad() as isize);
    for ci in 0..cin_g {
        let dxc = &mut dx[ci * len..(ci + 1) * len];
        for j in 0..k {
            let row = &cols[(ci * k + j) * lout..(ci * k + j + 1) * lout];
            let off = j as isize - pad;
            for (t, &r) in row.iter().enumerate() {
                let idx = t as isize * s + off;
                if idx >= 0 && (idx as usize) < len {
                    dxc[idx as usize] += r;
                }
            }
        }
    }
}

/// Grouped 1D cross-correlation with symmetric zero padding; output
/// length is ceil(len / stride). Weights are laid out (cout, cin/groups, k).
pub fn conv_forward<T: Real>(x: &Tensor3<T>, w: &[T], bias: Option<&[T]>, g: ConvGeom) -> Result<Tensor3<T>> {
    g.check(x, w.len())?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(shape(format!("bias has {} values, expected {}", b.len(), g.cout)));
        }
    }
    let (len, lout) = (x.length(), g.out_len(x.length()));
    let mut out = Tensor3::zeros(x.batch(), g.cout, lout);
    let (cin_g, cout_g, kk) = (g.cin_g(), g.cout_g(), g.cin_g() * g.kernel);
    let per_sample = g.cout * lout;
    if per_sample == 0 {
        return Ok(out);
    }
    out.data_mut().par_chunks_mut(per_sample).enumerate().for_each(|(b, ob)| {
        let xb = x.sample(b);
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * lout] };
        for grp in 0..g.groups {
            let wg = &w[grp * cout_g * kk..(grp + 1) * cout_g * kk];
            let xg = &xb[grp * cin_g * len..(grp + 1) * cin_g * len];
            let og = &mut ob[grp * cout_g * lout..(grp + 1) * cout_g * lout];
            if g.is_pointwise() {
                T::gemm(cout_g, cin_g, lout, T::one(), wg, kk as isize, 1, xg, len as isize, 1, T::zero(), og, lout as isize, 1);
            } else {
                im2col(xg, len, cin_g, &g, lout, &mut cols);
                T::gemm(cout_g, kk, lout, T::one(), wg, kk as isize, 1, &cols, lout as isize, 1, T::zero(), og, lout as isize, 1);
            }
        }
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                ob[o * lout..(o + 1) * lout].iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dx: Tensor3<T>,
    pub dw: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv_backward<T: Real>(x: &Tensor3<T>, w: &[T], dy: &Tensor3<T>, g: ConvGeom, need_dx: bool) -> Result<ConvGrads<T>> {
    g.check(x, w.len())?;
    let (len, lout) = (x.length(), g.out_len(x.length()));
    if dy.shape() != [x.batch(), g.cout, lout] {
        return Err(shape(format!("upstream gradient {:?} vs expected {:?}", dy.shape(), [x.batch(), g.cout, lout])));
    }
    let (cin_g, cout_g, kk) = (g.cin_g(), g.cout_g(), g.cin_g() * g.kernel);

    let mut dw = vec![T::zero(); w.len()];
    let mut dbias = vec![T::zero(); g.cout];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * lout] };
    for b in 0..x.batch() {
        let xb = x.sample(b);
        let dyb = dy.sample(b);
        for grp in 0..g.groups {
            let xg = &xb[grp * cin_g * len..(grp + 1) * cin_g * len];
            let dyg = &dyb[grp * cout_g * lout..(grp + 1) * cout_g * lout];
            let dwg = &mut dw[grp * cout_g * kk..(grp + 1) * cout_g * kk];
            if g.is_pointwise() {
                T::gemm(cout_g, lout, kk, T::one(), dyg, lout as isize, 1, xg, 1, len as isize, T::one(), dwg, kk as isize, 1);
            } else {
                im2col(xg, len, cin_g, &g, lout, &mut cols);
                T::gemm(cout_g, lout, kk, T::one(), dyg, lout as isize, 1, &cols, 1, lout as isize, T::one(), dwg, kk as isize, 1);
            }
        }
        for o in 0..g.cout {
            let mut acc = T::zero();
            for &v in &dyb[o * lout..(o + 1) * lout] {
                acc += v;
            }
            dbias[o] += acc;
        }
    }

    let mut dx = Tensor3::zeros(x.batch(), g.cin, if need_dx { len } else { 0 });
    if need_dx && g.cin * len > 0 {
        dx.data_mut().par_chunks_mut(g.cin * len).enumerate().for_each(|(b, dxb)| {
            let dyb = dy.sample(b);
            let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * lout] };
            for grp in 0..g.groups {
                let wg = &w[grp * cout_g * kk..(grp + 1) * cout_g * kk];
                let dyg = &dyb[grp * cout_g * lout..(grp + 1) * cout_g * lout];
                let dxg = &mut dxb[grp * cin_g * len..(grp + 1) * cin_g * len];
                if g.is_pointwise() {
                    T::gemm(kk, cout_g, lout, T::one(), wg, 1, kk as isize, dyg, lout as isize, 1, T::zero(), dxg, len as isize, 1);
                } else {
                    T::gemm(kk, cout_g, lout, T::one(), wg, 1, kk as isize, dyg, lout as isize, 1, T::zero(), &mut dcols, lout as isize, 1);
                    col2im_add(&dcols, len, cin_g, &g, lout, dxg);
                }
            }
        });
    }
    Ok(ConvGrads { dx, dw, dbias })
}

/// Convolution with a kernel given as a (cout, cin/groups, k) tensor.
pub fn conv1d<T: Real>(input: &Tensor3<T>, kernel: &Tensor3<T>, bias: Option<&[T]>, stride: usize, groups: usize) -> Result<Tensor3<T>> {
    let [cout, cin_g, k] = kernel.shape();
    let g = ConvGeom { cin: input.channels(), cout, kernel: k, stride, groups };
    if groups == 0 || cin_g * groups != input.channels() {
        return Err(shape(format!("kernel expects {} input channels per group, input has {} over {groups} groups", cin_g, input.channels())));
    }
    if k % 2 == 0 {
        return Err(shape("same padding needs an odd kernel"));
    }
    conv_forward(input, kernel.data(), bias, g)
}

pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

/// Per-channel standardization with affine parameters. Train mode uses
/// batch statistics and folds them into the running estimates (unbiased
/// variance); eval mode uses the running estimates.
#[allow(clippy::too_many_arguments)]
pub fn bn_forward<T: Real>(
    x: &Tensor3<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    train: bool,
) -> Result<(Tensor3<T>, BnCache<T>)> {
    let [nb, c, l] = x.shape();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(shape(format!("normalization over {c} channels with {} scales", gamma.len())));
    }
    let n = (nb * l) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    if train {
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..nb {
                let base = (b * c + ch) * l;
                s += x.data()[base..base + l].iter().map(|v| v.f64()).sum::<f64>();
            }
            let m = s / n;
            let mut ss = 0.0;
            for b in 0..nb {
                let base = (b * c + ch) * l;
                ss += x.data()[base..base + l].iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = ss / n;
            let unbiased = if n > 1.0 { ss / (n - 1.0) } else { var[ch] };
            running_mean[ch] = T::of((1.0 - BN_MOMENTUM) * running_mean[ch].f64() + BN_MOMENTUM * m);
            running_var[ch] = T::of((1.0 - BN_MOMENTUM) * running_var[ch].f64() + BN_MOMENTUM * unbiased);
        }
    } else {
        for ch in 0..c {
            mean[ch] = running_mean[ch].f64();
            var[ch] = running_var[ch].f64();
        }
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let mut xhat = vec![T::zero(); x.data().len()];
    let mut y = Tensor3::zeros(nb, c, l);
    for b in 0..nb {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            let (m, is, ga, be) = (mean_t[ch], inv_std[ch], gamma[ch], beta[ch]);
            let xs = &x.data()[base..base + l];
            let xh = &mut xhat[base..base + l];
            let ys = &mut y.data_mut()[base..base + l];
            for i in 0..l {
                let h = (xs[i] - m) * is;
                xh[i] = h;
                ys[i] = ga * h + be;
            }
        }
    }
    Ok((y, BnCache { xhat, inv_std, train }))
}

pub fn bn_backward<T: Real>(dy: &Tensor3<T>, cache: &BnCache<T>, gamma: &[T]) -> (Tensor3<T>, Vec<T>, Vec<T>) {
    let [nb, c, l] = dy.shape();
    let n = T::of((nb * l) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..nb {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            let d = &dy.data()[base..base + l];
            let h = &cache.xhat[base..base + l];
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for i in 0..l {
                sg += d[i] * h[i];
                sb += d[i];
            }
            dgamma[ch] += sg;
            dbeta[ch] += sb;
        }
    }
    let mut dx = Tensor3::zeros(nb, c, l);
    for b in 0..nb {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            let d = &dy.data()[base..base + l];
            let h = &cache.xhat[base..base + l];
            let out = &mut dx.data_mut()[base..base + l];
            if cache.train {
                let k = gamma[ch] * cache.inv_std[ch] / n;
                for i in 0..l {
                    out[i] = k * (n * d[i] - dbeta[ch] - h[i] * dgamma[ch]);
                }
            } else {
                let k = gamma[ch] * cache.inv_std[ch];
                for i in 0..l {
                    out[i] = k * d[i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_in_place<T: Real>(x: &mut Tensor3<T>) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
}

/// Zero the gradient where the forward output was clamped.
pub fn relu_backward_in_place<T: Real>(dy: &mut Tensor3<T>, out: &Tensor3<T>) {
    dy.data_mut().iter_mut().zip(out.data()).for_each(|(d, &o)| {
        if o <= T::zero() {
            *d = T::zero();
        }
    });
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean over the length axis: (batch, channels).
pub fn global_avg_pool<T: Real>(x: &Tensor3<T>) -> Matrix<T> {
    let [nb, c, l] = x.shape();
    let inv = T::of(1.0 / l as f64);
    let mut out = Matrix::zeros(nb, c);
    for b in 0..nb {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            let mut s = T::zero();
            for &v in &x.data()[base..base + l] {
                s += v;
            }
            out.data[b * c + ch] = s * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Real>(dpool: &Matrix<T>, len: usize) -> Tensor3<T> {
    let inv = T::of(1.0 / len as f64);
    let mut dx = Tensor3::zeros(dpool.rows, dpool.cols, len);
    for (i, chunk) in dx.data_mut().chunks_mut(len.max(1)).enumerate().take(dpool.rows * dpool.cols) {
        let v = dpool.data[i] * inv;
        chunk.iter_mut().for_each(|d| *d = v);
    }
    dx
}

/// y = x W^T + b with W laid out (out, in).
pub fn dense_forward<T: Real>(x: &Matrix<T>, w: &[T], b: &[T], out_dim: usize) -> Result<Matrix<T>> {
    if w.len() != out_dim * x.cols || b.len() != out_dim {
        return Err(shape(format!("dense {}->{out_dim} with {} weights", x.cols, w.len())));
    }
    let mut y = Matrix::zeros(x.rows, out_dim);
    for r in 0..x.rows {
        y.data[r * out_dim..(r + 1) * out_dim].copy_from_slice(b);
    }
    T::gemm(x.rows, x.cols, out_dim, T::one(), &x.data, x.cols as isize, 1, w, 1, x.cols as isize, T::one(), &mut y.data, out_dim as isize, 1);
    Ok(y)
}

/// Returns (dx, dw, db).
pub fn dense_backward<T: Real>(x: &Matrix<T>, w: &[T], dy: &Matrix<T>) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let (n, din, dout) = (x.rows, x.cols, dy.cols);
    let mut dw = vec![T::zero(); dout * din];
    T::gemm(dout, n, din, T::one(), &dy.data, 1, dout as isize, &x.data, din as isize, 1, T::zero(), &mut dw, din as isize, 1);
    let mut db = vec![T::zero(); dout];
    for r in 0..n {
        for (o, d) in db.iter_mut().enumerate() {
            *d += dy.data[r * dout + o];
        }
    }
    let mut dx = Matrix::zeros(n, din);
    T::gemm(n, dout, din, T::one(), &dy.data, dout as isize, 1, w, din as isize, 1, T::zero(), &mut dx.data, din as isize, 1);
    (dx, dw, db)
}

pub struct SeCache<T> {
    pub squeezed: Matrix<T>,
    pub hidden: Matrix<T>,
    pub gates: Matrix<T>,
}

pub struct SeWeights<'a, T> {
    pub reduce_w: &'a [T],
    pub reduce_b: &'a [T],
    pub expand_w: &'a [T],
    pub expand_b: &'a [T],
}

/// Channel attention: average over length, dense reduce + ReLU, dense
/// expand + logistic gate, then scale each channel by its gate.
pub fn se_forward<T: Real>(x: &Tensor3<T>, w: &SeWeights<'_, T>) -> Result<(Tensor3<T>, SeCache<T>)> {
    let [nb, c, l] = x.shape();
    let r = w.reduce_b.len();
    if w.reduce_w.len() != r * c || w.expand_w.len() != c * r || w.expand_b.len() != c || r == 0 {
        return Err(shape(format!("squeeze-excite weights do not match {c} channels / {r} units")));
    }
    let squeezed = global_avg_pool(x);
    let mut hidden = dense_forward(&squeezed, w.reduce_w, w.reduce_b, r)?;
    hidden.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    let mut gates = dense_forward(&hidden, w.expand_w, w.expand_b, c)?;
    gates.data.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut y = x.clone();
    for b in 0..nb {
        for ch in 0..c {
            let gv = gates.data[b * c + ch];
            let base = (b * c + ch) * l;
            y.data_mut()[base..base + l].iter_mut().for_each(|v| *v *= gv);
        }
    }
    Ok((y, SeCache { squeezed, hidden, gates }))
}

pub struct SeGrads<T> {
    pub dx: Tensor3<T>,
    pub reduce_w: Vec<T>,
    pub reduce_b: Vec<T>,
    pub expand_w: Vec<T>,
    pub expand_b: Vec<T>,
}

pub fn se_backward<T: Real>(x: &Tensor3<T>, w: &SeWeights<'_, T>, cache: &SeCache<T>, dy: &Tensor3<T>) -> SeGrads<T> {
    let [nb, c, l] = x.shape();
    let mut dx = Tensor3::zeros(nb, c, l);
    let mut dgate_logit = Matrix::zeros(nb, c);
    for b in 0..nb {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            let gv = cache.gates.data[b * c + ch];
            let d = &dy.data()[base..base + l];
            let xs = &x.data()[base..base + l];
            let mut dg = T::zero();
            let out = &mut dx.data_mut()[base..base + l];
            for i in 0..l {
                out[i] = d[i] * gv;
                dg += d[i] * xs[i];
            }
            dgate_logit.data[b * c + ch] = dg * gv * (T::one() - gv);
        }
    }
    let (mut dhidden, expand_w, expand_b) = dense_backward(&cache.hidden, w.expand_w, &dgate_logit);
    dhidden.data.iter_mut().zip(&cache.hidden.data).for_each(|(d, &h)| {
        if h <= T::zero() {
            *d = T::zero();
        }
    });
    let (dsq, reduce_w, reduce_b) = dense_backward(&cache.squeezed, w.reduce_w, &dhidden);
    let inv = T::of(1.0 / l as f64);
    for b in 0..nb {
        for ch in 0..c {
            let add = dsq.data[b * c + ch] * inv;
            let base = (b * c + ch) * l;
            dx.data_mut()[base..base + l].iter_mut().for_each(|v| *v += add);
        }
    }
    SeGrads { dx, reduce_w, reduce_b, expand_w, expand_b }
}

/// Standalone channel attention (no cache).
pub fn squeeze_excite<T: Real>(input: &Tensor3<T>, reduce_w: &[T], reduce_b: &[T], expand_w: &[T], expand_b: &[T]) -> Result<Tensor3<T>> {
    se_forward(input, &SeWeights { reduce_w, reduce_b, expand_w, expand_b }).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(b: usize, c: usize, l: usize, v: &[f64]) -> Tensor3<f64> {
        Tensor3::from_vec(b, c, l, v.to_vec()).unwrap()
    }

    /// Direct definition: out[b,o,t] = sum_{ci in group, j} w[o,ci,j] x[b, g*cin_g+ci, t*s+j-pad].
    fn naive_conv(x: &Tensor3<f64>, w: &[f64], g: ConvGeom) -> Tensor3<f64> {
        let (len, lout) = (x.length(), g.out_len(x.length()));
        let mut out = Tensor3::zeros(x.batch(), g.cout, lout);
        for b in 0..x.batch() {
            for o in 0..g.cout {
                let grp = o / g.cout_g();
                for t_ in 0..lout {
                    let mut s = 0.0;
                    for ci in 0..g.cin_g() {
                        for j in 0..g.kernel {
                            let idx = (t_ * g.stride + j) as isize - g.pad() as isize;
                            if idx >= 0 && (idx as usize) < len {
                                s += w[(o * g.cin_g() + ci) * g.kernel + j] * x.at(b, grp * g.cin_g() + ci, idx as usize);
                            }
                        }
                    }
                    out.data_mut()[(b * g.cout + o) * lout + t_] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = t(1, 1, 5, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let k = t(1, 1, 3, &[0.0, 1.0, 0.0]);
        let y = conv1d(&x, &k, Some(&[0.0]), 1, 1).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn strided_box_kernel() {
        let x = t(1, 1, 4, &[1.0; 4]);
        let k = t(1, 1, 3, &[1.0; 3]);
        let y = conv1d(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn grouped_equals_block_diagonal_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor3::from_vec(2, 4, 9, (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let wg: Vec<f64> = (0..4 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grouped = conv1d(&x, &Tensor3::from_vec(4, 2, 3, wg.clone()).unwrap(), None, 1, 2).unwrap();
        // dense kernel with zeroed cross-group weights
        let mut dense = vec![0.0; 4 * 4 * 3];
        for o in 0..4 {
            let grp = o / 2;
            for ci in 0..2 {
                for j in 0..3 {
                    dense[(o * 4 + grp * 2 + ci) * 3 + j] = wg[(o * 2 + ci) * 3 + j];
                }
            }
        }
        let full = conv1d(&x, &Tensor3::from_vec(4, 4, 3, dense).unwrap(), None, 1, 1).unwrap();
        for (a, b) in grouped.data().iter().zip(full.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // and two independent convolutions concatenated
        for grp in 0..2 {
            let xs: Vec<f64> = (0..2)
                .flat_map(|b| x.sample(b)[grp * 18..(grp + 1) * 18].to_vec())
                .collect();
            let xg = Tensor3::from_vec(2, 2, 9, xs).unwrap();
            let kg = Tensor3::from_vec(2, 2, 3, wg[grp * 12..(grp + 1) * 12].to_vec()).unwrap();
            let yg = conv1d(&xg, &kg, None, 1, 1).unwrap();
            for b in 0..2 {
                assert_eq!(&grouped.sample(b)[grp * 18..(grp + 1) * 18], yg.sample(b));
            }
        }
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(cin, cout, k, s, groups, len) in &[(3, 6, 5, 2, 1, 17), (8, 8, 3, 1, 4, 10), (4, 8, 1, 2, 1, 7), (6, 6, 1, 1, 1, 5), (2, 2, 7, 1, 2, 3)] {
            let g = ConvGeom { cin, cout, kernel: k, stride: s, groups };
            let x = Tensor3::from_vec(2, cin, len, (0..2 * cin * len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let w: Vec<f64> = (0..g.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv_forward(&x, &w, None, g).unwrap();
            let slow = naive_conv(&x, &w, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = t(1, 3, 4, &[0.0; 12]);
        assert!(conv1d(&x, &t(2, 2, 3, &[0.0; 12]), None, 1, 1).is_err());
        assert!(conv1d(&x, &t(2, 1, 3, &[0.0; 6]), None, 1, 2).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ConvGeom { cin: 4, cout: 6, kernel: 3, stride: 2, groups: 2 };
        let x = Tensor3::from_vec(2, 4, 9, (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w: Vec<f64> = (0..g.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lout = g.out_len(9);
        let r: Vec<f64> = (0..2 * 6 * lout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &Tensor3<f64>, w: &[f64]| -> f64 {
            conv_forward(x, w, None, g).unwrap().data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let dy = Tensor3::from_vec(2, 6, lout, r.clone()).unwrap();
        let grads = conv_backward(&x, &w, &dy, g, true).unwrap();
        let h = 1e-6;
        for i in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - grads.dw[i]).abs() < 1e-7);
        }
        for i in 0..x.data().len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - grads.dx.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn se_zero_expand_halves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor3::from_vec(2, 4, 6, (0..48).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let rw: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = squeeze_excite(&x, &rw, &[0.3], &[0.0; 4], &[0.0; 4]).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b / 2.0);
        }
    }

    #[test]
    fn se_gates_depend_only_on_biases_when_reduce_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor3::from_vec(1, 3, 5, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let x2 = Tensor3::from_vec(1, 3, 5, x.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let ew: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = SeWeights { reduce_w: &[0.0; 3], reduce_b: &[0.7], expand_w: &ew, expand_b: &[0.1, -0.2, 0.3] };
        let (y1, c1) = se_forward(&x, &w).unwrap();
        let (y2, c2) = se_forward(&x2, &w).unwrap();
        assert_eq!(c1.gates, c2.gates);
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn se_gate_three_quarters() {
        let x = t(1, 1, 4, &[1.0; 4]);
        // hidden = relu(1*1 + 0) = 1; logit = ln 3 * 1 + 0
        let y = squeeze_excite(&x, &[1.0], &[0.0], &[3f64.ln()], &[0.0]).unwrap();
        for v in y.data() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn se_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor3::from_vec(2, 4, 5, (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut p: Vec<Vec<f64>> = vec![
            (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            vec![0.2, 0.3],
            (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        ];
        let r: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &Tensor3<f64>, p: &[Vec<f64>]| -> f64 {
            let w = SeWeights { reduce_w: &p[0], reduce_b: &p[1], expand_w: &p[2], expand_b: &p[3] };
            se_forward(x, &w).unwrap().0.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let w = SeWeights { reduce_w: &p[0], reduce_b: &p[1], expand_w: &p[2], expand_b: &p[3] };
        let (_, cache) = se_forward(&x, &w).unwrap();
        let dy = Tensor3::from_vec(2, 4, 5, r.clone()).unwrap();
        let g = se_backward(&x, &w, &cache, &dy);
        let analytic = [g.reduce_w.clone(), g.reduce_b.clone(), g.expand_w.clone(), g.expand_b.clone()];
        let h = 1e-6;
        for k in 0..4 {
            for i in 0..p[k].len() {
                p[k][i] += h;
                let up = loss(&x, &p);
                p[k][i] -= 2.0 * h;
                let dn = loss(&x, &p);
                p[k][i] += h;
                assert!(((up - dn) / (2.0 * h) - analytic[k][i]).abs() < 1e-7, "param {k}[{i}]");
            }
        }
        for i in 0..40 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            assert!(((loss(&xp, &p) - loss(&xm, &p)) / (2.0 * h) - g.dx.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn bn_train_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor3::from_vec(3, 2, 4, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let gamma = vec![1.3, 0.7];
        let beta = vec![0.1, -0.2];
        let r: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &Tensor3<f64>| -> f64 {
            let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
            bn_forward(x, &gamma, &beta, &mut m, &mut v, true).unwrap().0.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
        let (_, cache) = bn_forward(&x, &gamma, &beta, &mut m, &mut v, true).unwrap();
        let (dx, _, _) = bn_backward(&Tensor3::from_vec(3, 2, 4, r.clone()).unwrap(), &cache, &gamma);
        let h = 1e-6;
        for i in 0..24 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            assert!(((loss(&xp) - loss(&xm)) / (2.0 * h) - dx.data()[i]).abs() < 1e-6);
        }
        // running statistics moved toward the batch statistics
        assert!(m.iter().all(|v| *v != 0.0));
    }
}
