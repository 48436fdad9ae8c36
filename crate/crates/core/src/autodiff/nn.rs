//! Network layers: shrinkage, convolution, group normalization, swish,
//! nearest upsampling and softmax.

use super::{sign, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar};

/// Resolved shapes of one `conv2d` call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] || kernel[2] != kernel[3] {
            return Err(Error::dim("conv2d", input, kernel));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let (h, w, k) = (input[2], input[3], kernel[2]);
        if k == 0 || k > h + 2 * pad || k > w + 2 * pad {
            return Err(Error::dim("conv2d", input, kernel));
        }
        Ok(ConvGeometry {
            batch: input[0],
            in_ch: input[1],
            h,
            w,
            out_ch: kernel[0],
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits every run of consecutive output columns of the im2col
    /// matrix for one image whose taps land inside the input, as
    /// `(column offset, input offset, run length)`. Within a run the input
    /// offset advances by `stride`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let ncols = self.col_cols();
        let (s, p) = (self.stride, self.pad);
        for c in 0..self.in_ch {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    // ox range with 0 <= ox*s + kj - p < w
                    let ox0 = p.saturating_sub(kj).div_ceil(s);
                    let ox1 = ((self.w + p).saturating_sub(kj)).div_ceil(s).min(self.ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base_in = (c * self.h + iy as usize) * self.w;
                        f(row * ncols + oy * self.ow + ox0, base_in + ox0 * s + kj - p, ox1 - ox0);
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let s = self.stride;
        self.for_each_run(|ci, xi, len| {
            if s == 1 {
                cols[ci..ci + len].copy_from_slice(&x[xi..xi + len]);
            } else {
                for t in 0..len {
                    cols[ci + t] = x[xi + t * s];
                }
            }
        });
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let s = self.stride;
        self.for_each_run(|ci, xi, len| {
            for t in 0..len {
                x[xi + t * s] += cols[ci + t];
            }
        });
    }
}

#[derive(Debug)]
pub(crate) struct GroupStats<'a, T> {
    pub groups: usize,
    pub mean: &'a [T],
    pub rstd: &'a [T],
}

impl<T: Scalar> Tape<T> {
    /// `sign(v)·max(|v| − θ, 0)` with θ either a single value or one value
    /// per entry of `v`'s last axis.
    pub fn soft_threshold(&mut self, v: Var, theta: Var) -> Result<Var> {
        let (vs, ts) = (self.shape(v).to_vec(), self.shape(theta).to_vec());
        let tn = self.value(theta).len();
        let last = vs.last().copied().unwrap_or(1);
        if tn != 1 && (ts.len() != 1 || tn != last) {
            return Err(Error::dim("soft_threshold", &vs, &ts));
        }
        let tv = self.value(theta);
        if let Some(i) = tv.iter().position(|&t| !(t >= T::zero())) {
            return Err(Error::Domain(format!(
                "soft_threshold: threshold {} at index {i} is negative",
                tv[i]
            )));
        }
        let out = self
            .value(v)
            .iter()
            .enumerate()
            .map(|(i, &x)| shrink(x, tv[i % tn]))
            .collect();
        self.push("soft_threshold", vs, out, Op::SoftThreshold { v, theta }, &[v, theta])
    }

    /// Adds `bias[c]` to channel `c` of an `[B, C, …]` tensor.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() < 2 || self.value(bias).len() != s[1] {
            return Err(Error::dim("channel_bias", &s, self.shape(bias)));
        }
        let inner: usize = s[2..].iter().product();
        let bv = self.value(bias);
        let mut out = self.value(input).to_vec();
        for (i, chunk) in out.chunks_mut(inner.max(1)).enumerate() {
            let b = bv[i % s[1]];
            chunk.iter_mut().for_each(|x| *x += b);
        }
        self.push("channel_bias", s, out, Op::ChannelBias { input, bias }, &[input, bias])
    }

    /// 2-D cross-correlation of `[B, C, H, W]` with `[O, C, k, k]`, zero padded.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let geo = ConvGeometry::new(self.shape(input), self.shape(kernel), stride, pad)?;
        let (rows, ncols) = (geo.col_rows(), geo.col_cols());
        let in_sz = geo.in_ch * geo.h * geo.w;
        let out_sz = geo.out_ch * ncols;
        let x = self.value(input);
        let kv = self.value(kernel);
        let mut cols = vec![T::zero(); geo.batch * rows * ncols];
        let mut out = vec![T::zero(); geo.batch * out_sz];
        for b in 0..geo.batch {
            let xb = &x[b * in_sz..(b + 1) * in_sz];
            let cb = &mut cols[b * rows * ncols..(b + 1) * rows * ncols];
            geo.im2col(xb, cb);
            gemm(
                geo.out_ch,
                rows,
                ncols,
                kv,
                false,
                cb,
                false,
                &mut out[b * out_sz..(b + 1) * out_sz],
                false,
            );
        }
        self.push(
            "conv2d",
            vec![geo.batch, geo.out_ch, geo.oh, geo.ow],
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
                cols,
            },
            &[input, kernel],
        )
    }

    /// Group normalization over `[B, C, H, W]` followed by a per-channel
    /// affine map. Variance is the biased (population) estimate.
    pub fn group_norm(&mut self, input: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("group_norm needs rank 4, got {s:?}")));
        }
        let c = s[1];
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "group_norm: {c} channels not divisible into {groups} groups"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("group_norm: eps must be > 0, got {eps}")));
        }
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::dim("group_norm", &s, self.shape(gamma)));
        }
        let eps = T::lit(eps);
        let hw = s[2] * s[3];
        let per_group = (c / groups) * hw;
        let count = T::from_usize(per_group).expect("group size");
        let x = self.value(input);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut mean = Vec::with_capacity(s[0] * groups);
        let mut rstd = Vec::with_capacity(s[0] * groups);
        let mut out = vec![T::zero(); x.len()];
        for (gi, chunk) in x.chunks(per_group).enumerate() {
            let mu = chunk.iter().copied().sum::<T>() / count;
            let var = chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / count;
            let r = (var + eps).sqrt().recip();
            mean.push(mu);
            rstd.push(r);
            let base = gi * per_group;
            for (j, &v) in chunk.iter().enumerate() {
                let ch = ((base + j) / hw) % c;
                out[base + j] = (v - mu) * r * gv[ch] + bv[ch];
            }
        }
        self.push(
            "group_norm",
            s,
            out,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            &[input, gamma, beta],
        )
    }

    /// `v·σ(v)`.
    pub fn swish(&mut self, v: Var) -> Result<Var> {
        let out = self.value(v).iter().map(|&x| x * sigmoid(x)).collect();
        self.push("swish", self.shape(v).to_vec(), out, Op::Swish(v), &[v])
    }

    /// Nearest-neighbour ×2 upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, v: Var) -> Result<Var> {
        let s = self.shape(v).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("upsample2x needs rank 4, got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let x = self.value(v);
        let mut out = Vec::with_capacity(x.len() * 4);
        for plane in x.chunks(h * w) {
            for y in 0..2 * h {
                let row = &plane[(y / 2) * w..(y / 2 + 1) * w];
                for &val in row {
                    out.push(val);
                    out.push(val);
                }
            }
        }
        self.push(
            "upsample2x",
            vec![s[0], s[1], 2 * h, 2 * w],
            out,
            Op::Upsample2x(v),
            &[v],
        )
    }

    /// Mirror padding of `[B, C, H, W]` by `p` on every side, excluding the
    /// edge sample (`x[-1] = x[1]`). Needs `p < H` and `p < W`.
    pub fn reflect_pad(&mut self, v: Var, p: usize) -> Result<Var> {
        let s = self.shape(v).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("reflect_pad needs rank 4, got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        if p >= h || p >= w {
            return Err(Error::Shape(format!(
                "reflect_pad {p} needs a side larger than {p}, got {h}x{w}"
            )));
        }
        if p == 0 {
            return Ok(v);
        }
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let rows = reflect_index(h, p);
        let cols = reflect_index(w, p);
        let x = self.value(v);
        let mut out = Vec::with_capacity(x.len() / (h * w) * ph * pw);
        for plane in x.chunks(h * w) {
            for &r in &rows {
                let row = &plane[r * w..(r + 1) * w];
                out.extend(cols[..p].iter().map(|&c| row[c]));
                out.extend_from_slice(row);
                out.extend(cols[p + w..].iter().map(|&c| row[c]));
            }
        }
        self.push("reflect_pad", vec![s[0], s[1], ph, pw], out, Op::ReflectPad(v, p), &[v])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let s = self.shape(v).to_vec();
        let cols = *s.last().ok_or_else(|| Error::Shape("softmax on a scalar".into()))?;
        let mut out = self.value(v).to_vec();
        for row in out.chunks_mut(cols) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x = *x / total);
        }
        self.push("softmax", s, out, Op::Softmax(v), &[v])
    }
}

#[inline]
pub(crate) fn shrink<T: Scalar>(v: T, theta: T) -> T {
    let m = v.abs() - theta;
    if m > T::zero() {
        sign(v) * m
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// The subgradient at |v| = θ is taken on the dead-zone side (0).
pub(crate) fn soft_threshold_grad_v<T: Scalar>(v: &[T], theta: &[T], g: &[T], buf: &mut [T]) {
    let tn = theta.len();
    for (i, (d, &x)) in buf.iter_mut().zip(v).enumerate() {
        if x.abs() > theta[i % tn] {
            *d += g[i];
        }
    }
}

pub(crate) fn soft_threshold_grad_theta<T: Scalar>(v: &[T], theta: &[T], g: &[T], buf: &mut [T]) {
    let tn = theta.len();
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > theta[i % tn] {
            buf[i % tn] -= sign(x) * g[i];
        }
    }
}

pub(crate) fn channel_bias_grad<T: Scalar>(shape: &[usize], g: &[T], buf: &mut [T]) {
    let inner: usize = shape[2..].iter().product();
    for (i, chunk) in g.chunks(inner).enumerate() {
        buf[i % shape[1]] += chunk.iter().copied().sum::<T>();
    }
}

pub(crate) fn conv2d_grad_kernel<T: Scalar>(geo: &ConvGeometry, cols: &[T], g: &[T], buf: &mut [T]) {
    let (rows, ncols) = (geo.col_rows(), geo.col_cols());
    let out_sz = geo.out_ch * ncols;
    for b in 0..geo.batch {
        gemm(
            geo.out_ch,
            ncols,
            rows,
            &g[b * out_sz..(b + 1) * out_sz],
            false,
            &cols[b * rows * ncols..(b + 1) * rows * ncols],
            true,
            buf,
            true,
        );
    }
}

pub(crate) fn conv2d_grad_input<T: Scalar>(geo: &ConvGeometry, kernel: &[T], g: &[T], buf: &mut [T]) {
    let (rows, ncols) = (geo.col_rows(), geo.col_cols());
    let out_sz = geo.out_ch * ncols;
    let in_sz = geo.in_ch * geo.h * geo.w;
    let mut dcols = vec![T::zero(); rows * ncols];
    for b in 0..geo.batch {
        gemm(
            rows,
            geo.out_ch,
            ncols,
            kernel,
            true,
            &g[b * out_sz..(b + 1) * out_sz],
            false,
            &mut dcols,
            false,
        );
        let db = &mut buf[b * in_sz..(b + 1) * in_sz];
        geo.col2im_add(&dcols, db);
    }
}

pub(crate) fn group_norm_grad_gamma<T: Scalar>(
    shape: &[usize],
    stats: &GroupStats<'_, T>,
    x: &[T],
    g: &[T],
    buf: &mut [T],
) {
    let c = shape[1];
    let hw = shape[2] * shape[3];
    let per_group = (c / stats.groups) * hw;
    for (i, (&xv, &gv)) in x.iter().zip(g).enumerate() {
        let gi = i / per_group;
        let xhat = (xv - stats.mean[gi]) * stats.rstd[gi];
        buf[(i / hw) % c] += gv * xhat;
    }
}

pub(crate) fn group_norm_grad_input<T: Scalar>(
    shape: &[usize],
    stats: &GroupStats<'_, T>,
    x: &[T],
    gamma: &[T],
    g: &[T],
    buf: &mut [T],
) {
    let c = shape[1];
    let hw = shape[2] * shape[3];
    let per_group = (c / stats.groups) * hw;
    let count = T::from_usize(per_group).expect("group size");
    for gi in 0..x.len() / per_group {
        let base = gi * per_group;
        let (mu, r) = (stats.mean[gi], stats.rstd[gi]);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..per_group {
            let ch = ((base + j) / hw) % c;
            let dxhat = g[base + j] * gamma[ch];
            let xhat = (x[base + j] - mu) * r;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        for j in 0..per_group {
            let ch = ((base + j) / hw) % c;
            let dxhat = g[base + j] * gamma[ch];
            let xhat = (x[base + j] - mu) * r;
            buf[base + j] += r / count * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
        }
    }
}

pub(crate) fn swish_grad<T: Scalar>(v: &[T], g: &[T], buf: &mut [T]) {
    for ((d, &x), &gv) in buf.iter_mut().zip(v).zip(g) {
        let s = sigmoid(x);
        *d += gv * (s + x * s * (T::one() - s));
    }
}

pub(crate) fn upsample2x_grad<T: Scalar>(shape: &[usize], g: &[T], buf: &mut [T]) {
    let (h, w) = (shape[2], shape[3]);
    for (p, plane) in buf.chunks_mut(h * w).enumerate() {
        let gp = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..2 * w {
                plane[(y / 2) * w + x / 2] += gp[y * 2 * w + x];
            }
        }
    }
}

/// Source index of every padded position along one axis.
fn reflect_index(n: usize, p: usize) -> Vec<usize> {
    (0..n + 2 * p)
        .map(|i| {
            let i = i as isize - p as isize;
            let last = n as isize - 1;
            (if i < 0 {
                -i
            } else if i > last {
                2 * last - i
            } else {
                i
            }) as usize
        })
        .collect()
}

pub(crate) fn reflect_pad_grad<T: Scalar>(shape: &[usize], p: usize, g: &[T], buf: &mut [T]) {
    let (h, w) = (shape[2], shape[3]);
    let (rows, cols) = (reflect_index(h, p), reflect_index(w, p));
    let pw = w + 2 * p;
    for (plane, gp) in buf.chunks_mut(h * w).zip(g.chunks(rows.len() * pw)) {
        for (&r, grow) in rows.iter().zip(gp.chunks(pw)) {
            let dst = &mut plane[r * w..(r + 1) * w];
            for (&c, &gv) in cols.iter().zip(grow) {
                dst[c] += gv;
            }
        }
    }
}

pub(crate) fn softmax_grad<T: Scalar>(y: &[T], cols: usize, g: &[T], buf: &mut [T]) {
    for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(buf.chunks_mut(cols)) {
        let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d += yv * (gv - dot);
        }
    }
}
