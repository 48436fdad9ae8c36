//! Image decoding, resizing and export.
//!
//! Images are `[C, H, W]` `f64` tensors with values in `[0, 1]`, `C` being 1
//! (gray) or 3 (RGB).

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// File extensions accepted by [`load_image`], lower case.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Fixed palette for label maps; label `l` uses entry `l % 16`.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [255, 255, 255],
];

pub fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Decodes an 8-bit gray or RGB image to `[C, H, W]`, `C` ∈ {1, 3}.
/// Alpha channels are dropped.
pub fn load_image(path: &Path) -> Result<Tensor<f64>> {
    let img = image::open(path)?;
    Ok(match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Tensor::new(
                &[1, h as usize, w as usize],
                g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            )?
        }
        _ => {
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut data = vec![0.0; 3 * h * w];
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = p.0[c] as f64 / 255.0;
                }
            }
            Tensor::new(&[3, h, w], data)?
        }
    })
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear(img: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Tensor<f64>> {
    let [c, h, w] = dims3(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize target must be non-empty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let pos = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let d = img.data();
    let mut out = vec![0.0; c * out_h * out_w];
    for oy in 0..out_h {
        let (y0, y1, fy) = src(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = src(ox, out_w, w);
            for ch in 0..c {
                let p = |y: usize, x: usize| d[ch * h * w + y * w + x];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[ch * out_h * out_w + oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Converts between gray and RGB; luma weights 0.299/0.587/0.114.
pub fn convert_channels(img: &Tensor<f64>, channels: usize) -> Result<Tensor<f64>> {
    let [c, h, w] = dims3(img)?;
    let plane = h * w;
    match (c, channels) {
        (a, b) if a == b => Ok(img.clone()),
        (1, 3) => Tensor::new(&[3, h, w], img.data().repeat(3)),
        (3, 1) => {
            let d = img.data();
            let data = (0..plane)
                .map(|i| 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i])
                .collect();
            Tensor::new(&[1, h, w], data)
        }
        _ => Err(Error::Config(format!("cannot convert {c} channels to {channels}"))),
    }
}

pub(crate) fn dims3(img: &Tensor<f64>) -> Result<[usize; 3]> {
    match *img.shape() {
        [c, h, w] if h > 0 && w > 0 => Ok([c, h, w]),
        ref s => Err(Error::Shape(format!("expected a [C, H, W] image, got {s:?}"))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_dynamic(img: &Tensor<f64>) -> Result<DynamicImage> {
    let [c, h, w] = dims3(img)?;
    let d = img.data();
    let (wu, hu) = (w as u32, h as u32);
    match c {
        1 => {
            let buf = d.iter().map(|&v| quantize(v)).collect();
            Ok(DynamicImage::ImageLuma8(
                GrayImage::from_raw(wu, hu, buf).expect("buffer size"),
            ))
        }
        3 => {
            let plane = h * w;
            let buf = (0..plane)
                .flat_map(|i| (0..3).map(move |ch| quantize(d[ch * plane + i])))
                .collect();
            Ok(DynamicImage::ImageRgb8(
                RgbImage::from_raw(wu, hu, buf).expect("buffer size"),
            ))
        }
        _ => Err(Error::Config(format!("cannot export a {c}-channel image"))),
    }
}

/// Writes an image as 8-bit PNG, clamping to `[0, 1]`.
pub fn save_png(img: &Tensor<f64>, path: &Path) -> Result<()> {
    to_dynamic(img)?.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Writes an image as binary PGM (gray) or PPM (RGB).
pub fn save_pnm(img: &Tensor<f64>, path: &Path) -> Result<()> {
    to_dynamic(img)?.save_with_format(path, ImageFormat::Pnm)?;
    Ok(())
}

/// Label grid as binary PGM (P5), labels as gray levels.
pub fn save_label_pgm(labels: &[usize], h: usize, w: usize, path: &Path) -> Result<()> {
    if labels.len() != h * w {
        return Err(Error::dim("save_label_pgm", &[labels.len()], &[h, w]));
    }
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(labels.iter().map(|&l| l.min(255) as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Label grid as RGB PNG using [`PALETTE`].
pub fn save_label_png(labels: &[usize], h: usize, w: usize, path: &Path) -> Result<()> {
    if labels.len() != h * w {
        return Err(Error::dim("save_label_png", &[labels.len()], &[h, w]));
    }
    let buf = labels.iter().flat_map(|&l| PALETTE[l % PALETTE.len()]).collect();
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Reads a mask image; any nonzero pixel (first channel) is foreground.
pub fn load_mask(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let img = load_image(path)?;
    let [_, h, w] = dims3(&img)?;
    Ok((img.data()[..h * w].iter().map(|&v| v > 0.0).collect(), h, w))
}

/// Nearest-neighbour resampling of an `h×w` mask.
pub fn resize_mask_nearest(mask: &[bool], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let y = (oy * h / out_h).min(h - 1);
        for ox in 0..out_w {
            let x = (ox * w / out_w).min(w - 1);
            out.push(mask[y * w + x]);
        }
    }
    out
}
