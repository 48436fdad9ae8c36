//! Image quality (PSNR, SSIM), code sparsity (Hoyer) and mask overlap
//! (IoU, DICE).
//!
//! Images are `[C, H, W]` or `[H, W]` tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub hoyer: f64,
    pub iou: Option<f64>,
    pub dice: Option<f64>,
}

fn same_shape(op: &'static str, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `10·log₁₀(max_val² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, max_val: f64) -> Result<f64> {
    same_shape("psnr", a, b)?;
    if !(max_val > 0.0) {
        return Err(Error::Domain(format!("max_val must be > 0, got {max_val}")));
    }
    if a.numel() == 0 {
        return Err(Error::Shape("psnr of empty images".into()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| g[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| g[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

fn planes(t: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Shape(format!("expected [C, H, W] or [H, W], got {s:?}"))),
    }
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// channels.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>, max_val: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (c, h, w) = planes(a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim("ssim", a.shape(), &[SSIM_WINDOW, SSIM_WINDOW]));
    }
    if !(max_val > 0.0) {
        return Err(Error::Domain(format!("max_val must be > 0, got {max_val}")));
    }
    let c1 = (SSIM_K1 * max_val).powi(2);
    let c2 = (SSIM_K2 * max_val).powi(2);
    let g = gaussian_window();
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let pa = &a.data()[ch * plane..(ch + 1) * plane];
        let pb = &b.data()[ch * plane..(ch + 1) * plane];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(x, y)| f(*x, *y)).collect() };
        let mu_a = filter_valid(pa, h, w, &g);
        let mu_b = filter_valid(pb, h, w, &g);
        let aa = filter_valid(&prod(&|x, _| x * x), h, w, &g);
        let bb = filter_valid(&prod(&|_, y| y * y), h, w, &g);
        let ab = filter_valid(&prod(&|x, y| x * y), h, w, &g);
        let map_sum: f64 = (0..mu_a.len())
            .map(|i| {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = aa[i] - ma * ma;
                let vb = bb[i] - mb * mb;
                let cov = ab[i] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .sum();
        total += map_sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// `(√K − ‖z‖₁/‖z‖₂) / (√K − 1)`; 1.0 for the all-zero vector.
pub fn hoyer_sparsity(z: &[f64]) -> Result<f64> {
    if z.len() < 2 {
        return Err(Error::Domain(format!("hoyer sparsity needs K >= 2, got {}", z.len())));
    }
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    let l2 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return Ok(1.0);
    }
    let rk = (z.len() as f64).sqrt();
    Ok(((rk - l1 / l2) / (rk - 1.0)).clamp(0.0, 1.0))
}

/// `(|A∩B|/|A∪B|, 2|A∩B|/(|A|+|B|))`, both 1.0 when the masks are empty.
pub fn iou_dice(pred: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::dim("iou_dice", &[pred.len()], &[truth.len()]));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += (p && t) as usize;
        na += p as usize;
        nb += t as usize;
    }
    if na + nb == 0 {
        return Ok((1.0, 1.0));
    }
    let union = na + nb - inter;
    Ok((inter as f64 / union as f64, 2.0 * inter as f64 / (na + nb) as f64))
}
