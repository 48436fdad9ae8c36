//! Procedural gray-scale images: textured backgrounds with geometric
//! shapes, and two-texture foreground/background scenes with known masks.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio::save_png;
use crate::tensor::Tensor;

/// A periodic or smooth intensity pattern with values in `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    Flat,
    Stripes { angle: f64, period: f64, phase: f64 },
    Checker { cell: f64 },
    Dots { spacing: f64, radius: f64 },
    Gradient { angle: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fill {
    pub texture: Texture,
    pub lo: f64,
    pub hi: f64,
}

impl Fill {
    pub fn at(&self, x: f64, y: f64, size: f64) -> f64 {
        let t = match self.texture {
            Texture::Flat => 1.0,
            Texture::Stripes { angle, period, phase } => {
                let u = x * angle.cos() + y * angle.sin();
                0.5 + 0.5 * (2.0 * PI * u / period + phase).sin()
            }
            Texture::Checker { cell } => (((x / cell).floor() + (y / cell).floor()) as i64).rem_euclid(2) as f64,
            Texture::Dots { spacing, radius } => {
                let dx = x.rem_euclid(spacing) - spacing / 2.0;
                let dy = y.rem_euclid(spacing) - spacing / 2.0;
                if dx * dx + dy * dy <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            Texture::Gradient { angle } => {
                let u = (x - size / 2.0) * angle.cos() + (y - size / 2.0) * angle.sin();
                (0.5 + u / size).clamp(0.0, 1.0)
            }
        };
        self.lo + (self.hi - self.lo) * t
    }
}

fn random_texture(rng: &mut ChaCha8Rng) -> Texture {
    match rng.random_range(0..5) {
        0 => Texture::Flat,
        1 => Texture::Stripes {
            angle: rng.random_range(0.0..PI),
            period: rng.random_range(3.0..10.0),
            phase: rng.random_range(0.0..2.0 * PI),
        },
        2 => Texture::Checker {
            cell: rng.random_range(2..7) as f64,
        },
        3 => Texture::Dots {
            spacing: rng.random_range(4.0..9.0),
            radius: rng.random_range(1.0..2.5),
        },
        _ => Texture::Gradient {
            angle: rng.random_range(0.0..2.0 * PI),
        },
    }
}

fn random_fill(rng: &mut ChaCha8Rng) -> Fill {
    let a: f64 = rng.random_range(0.0..1.0);
    let b: f64 = rng.random_range(0.0..1.0);
    Fill {
        texture: random_texture(rng),
        lo: a.min(b),
        hi: a.max(b).max(a.min(b) + 0.25).min(1.0),
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle { p: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Triangle { p } => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let (s0, s1, s2) = (side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0]));
                (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
            }
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    let c = |rng: &mut ChaCha8Rng| rng.random_range(0.15 * size..0.85 * size);
    match rng.random_range(0..3) {
        0 => Shape::Disc {
            cx: c(rng),
            cy: c(rng),
            r: rng.random_range(0.1 * size..0.3 * size),
        },
        1 => {
            let (x, y) = (c(rng), c(rng));
            let (hw, hh) = (rng.random_range(0.1..0.3) * size, rng.random_range(0.1..0.3) * size);
            Shape::Rect {
                x0: x - hw,
                y0: y - hh,
                x1: x + hw,
                y1: y + hh,
            }
        }
        _ => Shape::Triangle {
            p: [(c(rng), c(rng)), (c(rng), c(rng)), (c(rng), c(rng))],
        },
    }
}

fn render(size: usize, mut f: impl FnMut(f64, f64) -> f64) -> Tensor<f64> {
    Tensor::from_fn(&[1, size, size], |i| {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        f(x, y).clamp(0.0, 1.0)
    })
}

/// One textured background with one to three textured shapes on top.
pub fn structured_image(size: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = size as f64;
    let background = random_fill(rng);
    let shapes: Vec<(Shape, Fill)> = (0..rng.random_range(1..=3))
        .map(|_| (random_shape(rng, s), random_fill(rng)))
        .collect();
    render(size, |x, y| {
        shapes
            .iter()
            .rev()
            .find(|(sh, _)| sh.contains(x, y))
            .map(|(_, f)| f.at(x, y, s))
            .unwrap_or_else(|| background.at(x, y, s))
    })
}

/// `count` structured `[1, size, size]` images from `seed`.
pub fn structured_corpus(count: usize, size: usize, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| structured_image(size, &mut rng)).collect()
}

/// The two contrasting textures used by [`two_texture_scene`].
pub fn scene_fills() -> (Fill, Fill) {
    (
        Fill {
            texture: Texture::Stripes {
                angle: 0.0,
                period: 2.0,
                phase: 0.0,
            },
            lo: 0.05,
            hi: 0.6,
        },
        Fill {
            texture: Texture::Checker { cell: 1.0 },
            lo: 0.45,
            hi: 0.95,
        },
    )
}

/// A scene with a central blob of one texture on a background of another.
/// Returns the image and its foreground mask (row-major, `size×size`).
pub fn two_texture_scene(size: usize, rng: &mut ChaCha8Rng) -> (Tensor<f64>, Vec<bool>) {
    let s = size as f64;
    let (mut bg, mut fg) = scene_fills();
    if rng.random_bool(0.5) {
        std::mem::swap(&mut bg, &mut fg);
    }
    let shape = match rng.random_range(0..2) {
        0 => Shape::Disc {
            cx: s / 2.0 + rng.random_range(-0.1..0.1) * s,
            cy: s / 2.0 + rng.random_range(-0.1..0.1) * s,
            r: rng.random_range(0.2..0.3) * s,
        },
        _ => {
            let (hw, hh) = (rng.random_range(0.18..0.3) * s, rng.random_range(0.18..0.3) * s);
            let (cx, cy) = (
                s / 2.0 + rng.random_range(-0.08..0.08) * s,
                s / 2.0 + rng.random_range(-0.08..0.08) * s,
            );
            Shape::Rect {
                x0: cx - hw,
                y0: cy - hh,
                x1: cx + hw,
                y1: cy + hh,
            }
        }
    };
    let mut mask = Vec::with_capacity(size * size);
    let img = render(size, |x, y| {
        let inside = shape.contains(x, y);
        mask.push(inside);
        if inside {
            fg.at(x, y, s)
        } else {
            bg.at(x, y, s)
        }
    });
    (img, mask)
}

/// Writes `images` as `prefix_0000.png`, … into `dir`.
pub fn write_corpus(dir: &Path, prefix: &str, images: &[Tensor<f64>]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        save_png(img, &dir.join(format!("{prefix}_{i:04}.png")))?;
    }
    Ok(())
}

/// Writes `count` two-texture scenes as `scene_NNNN.png` with masks
/// `scene_NNNN.mask.png` (255 = foreground).
pub fn write_scenes(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let (img, mask) = two_texture_scene(size, &mut rng);
        save_png(&img, &dir.join(format!("scene_{i:04}.png")))?;
        let m = Tensor::new(&[1, size, size], mask.iter().map(|&b| b as u8 as f64).collect())?;
        save_png(&m, &dir.join(format!("scene_{i:04}.mask.png")))?;
    }
    Ok(())
}
