//! Elementwise, reduction, layout and matrix-product operations.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar};

#[derive(Clone, Copy, Debug)]
pub(crate) struct MatDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub trans_a: bool,
    pub trans_b: bool,
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_values(a, b, |x, y| x + y);
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_values(a, b, |x, y| x - y);
        self.push("sub", self.shape(a).to_vec(), out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_values(a, b, |x, y| x * y);
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b])
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push("scale", self.shape(a).to_vec(), out, Op::Scale(a, c), &[a])
    }

    /// Elementwise absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x.abs()).collect();
        self.push("abs", self.shape(a).to_vec(), out, Op::Abs(a), &[a])
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum::<T>();
        self.push("sum", Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    /// `sum(a ⊙ a)`.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        self.sum(sq)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::dim("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(a), &[a])
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        let rank = in_shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::Shape(format!(
                "invalid permutation {axes:?} for shape {in_shape:?}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&x| in_shape[x]).collect();
        let src = self.value(a);
        let mut out = vec![T::zero(); src.len()];
        for_each_permuted(&in_shape, axes, |out_i, in_i| out[out_i] = src[in_i]);
        self.push(
            "permute",
            out_shape,
            out,
            Op::Permute {
                input: a,
                axes: axes.to_vec(),
            },
            &[a],
        )
    }

    /// `[B, C, H, W] → [B·H·W, C]`: one row per spatial location.
    pub fn nchw_to_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("nchw_to_rows needs rank 4, got {s:?}")));
        }
        let p = self.permute(a, &[0, 2, 3, 1])?;
        self.reshape(p, &[s[0] * s[2] * s[3], s[1]])
    }

    /// Inverse of [`Tape::nchw_to_rows`].
    pub fn rows_to_nchw(&mut self, a: Var, batch: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != batch * h * w {
            return Err(Error::dim("rows_to_nchw", &s, &[batch, h, w]));
        }
        let r = self.reshape(a, &[batch, h, w, s[1]])?;
        self.permute(r, &[0, 3, 1, 2])
    }

    /// Matrix product of rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let (m, ka) = if trans_a { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let dims = MatDims {
            batch: 1,
            m,
            k: ka,
            n,
            trans_a,
            trans_b,
        };
        self.matmul_impl(a, b, dims, vec![m, n])
    }

    /// Batched product of rank-3 tensors `[B, ·, ·]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("bmm", &sa, &sb));
        }
        let (m, ka) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if ka != kb {
            return Err(Error::dim("bmm", &sa, &sb));
        }
        let dims = MatDims {
            batch: sa[0],
            m,
            k: ka,
            n,
            trans_a,
            trans_b,
        };
        self.matmul_impl(a, b, dims, vec![sa[0], m, n])
    }

    fn matmul_impl(&mut self, a: Var, b: Var, d: MatDims, shape: Vec<usize>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); d.batch * d.m * d.n];
        let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
        for i in 0..d.batch {
            gemm(
                d.m,
                d.k,
                d.n,
                &av[i * sa..(i + 1) * sa],
                d.trans_a,
                &bv[i * sb..(i + 1) * sb],
                d.trans_b,
                &mut out[i * sc..(i + 1) * sc],
                false,
            );
        }
        self.push(
            "matmul",
            shape,
            out,
            Op::MatMul {
                a,
                b,
                batch: d.batch,
                m: d.m,
                k: d.k,
                n: d.n,
                trans_a: d.trans_a,
                trans_b: d.trans_b,
            },
            &[a, b],
        )
    }
}

/// Calls `f(out_index, in_index)` for every element of a permutation.
fn for_each_permuted(in_shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&x| in_shape[x]).collect();
    let strides: Vec<usize> = axes.iter().map(|&x| in_strides[x]).collect();
    let total: usize = in_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut in_off = 0usize;
    for out_i in 0..total {
        f(out_i, in_off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            in_off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            in_off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn permute_backward<T: Scalar>(in_shape: &[usize], axes: &[usize], g: &[T], buf: &mut [T]) {
    for_each_permuted(in_shape, axes, |out_i, in_i| buf[in_i] += g[out_i]);
}

// For C = op(A)·op(B): dA = G·op(B)ᵀ (transposed back when A was), and
// dB = op(A)ᵀ·G (likewise).
pub(crate) fn matmul_grad_a<T: Scalar>(d: &MatDims, g: &[T], b: &[T], buf: &mut [T]) {
    let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
    for i in 0..d.batch {
        let gi = &g[i * sc..(i + 1) * sc];
        let bi = &b[i * sb..(i + 1) * sb];
        let out = &mut buf[i * sa..(i + 1) * sa];
        if d.trans_a {
            gemm(d.k, d.n, d.m, bi, d.trans_b, gi, true, out, true);
        } else {
            gemm(d.m, d.n, d.k, gi, false, bi, !d.trans_b, out, true);
        }
    }
}

pub(crate) fn matmul_grad_b<T: Scalar>(d: &MatDims, g: &[T], a: &[T], buf: &mut [T]) {
    let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
    for i in 0..d.batch {
        let gi = &g[i * sc..(i + 1) * sc];
        let ai = &a[i * sa..(i + 1) * sa];
        let out = &mut buf[i * sb..(i + 1) * sb];
        if d.trans_b {
            gemm(d.n, d.m, d.k, gi, true, ai, d.trans_a, out, true);
        } else {
            gemm(d.k, d.m, d.n, ai, !d.trans_a, gi, false, out, true);
        }
    }
}
