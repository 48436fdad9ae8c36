//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! Criteria 4, 5 and 8 share the desk-scale model; criterion 6 is checked on
//! every training step taken anywhere in this run.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scvae::autodiff::{Tape, Var};
use scvae::cli::{eval_table, run};
use scvae::dictionary::{build_dct_dictionary, Dictionary};
use scvae::downstream::{segment_image, SegmentOptions};
use scvae::error::Result;
use scvae::gradcheck::{check, check_sampled};
use scvae::metrics::{hoyer_sparsity, iou_dice, psnr, ssim};
use scvae::model::{sparse_code_grid, ModelConfig, Registered, ScVae};
use scvae::solvers::{fista_solve, ista_solve, lista_forward, lista_init_from_dictionary, ListaVars, SparseProblem};
use scvae::synthetic::{structured_corpus, two_texture_scene};
use scvae::tensor::Tensor;
use scvae::training::{Checkpoint, TrainConfig, Trainer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian_dictionary(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Dictionary {
    let mut a: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
    for j in 0..k {
        let norm = (0..n).map(|i| a[i * k + j].powi(2)).sum::<f64>().sqrt();
        (0..n).for_each(|i| a[i * k + j] /= norm);
    }
    Dictionary::from_atoms(Tensor::new(&[n, k], a).unwrap()).unwrap()
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `Dᵀx` by explicit loops.
fn correlate(d: &Dictionary, x: &[f64]) -> Vec<f64> {
    let (n, k) = (d.dim(), d.atom_count());
    let a = d.atoms().data();
    (0..k).map(|j| (0..n).map(|i| a[i * k + j] * x[i]).sum()).collect()
}

/// `Dz` by explicit loops.
fn synthesize(d: &Dictionary, z: &[f64]) -> Vec<f64> {
    let (n, k) = (d.dim(), d.atom_count());
    let a = d.atoms().data();
    (0..n).map(|i| (0..k).map(|j| a[i * k + j] * z[j]).sum()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut gap = 0.0f64;
    for case in 0..50 {
        let n = [8, 16, 25, 32][case % 4];
        let k = rng.random_range(n..=64);
        let alpha = [0.01, 0.1, 1.0][case % 3];
        let d = gaussian_dictionary(&mut rng, n, k);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = SparseProblem::new(&x, &d, alpha).unwrap();
        let a = ista_solve(&p, 1_000_000, 1e-12).unwrap();
        let b = fista_solve(&p, 1_000_000, 1e-12).unwrap();
        gap = gap.max(max_abs_diff(&a.z, &b.z));
    }
    // orthonormal: DCT at K = n and random rotations
    let mut dicts: Vec<Dictionary> = [4, 9, 16, 25]
        .iter()
        .map(|&n| build_dct_dictionary(n, n).unwrap())
        .collect();
    for n in [5, 12, 32] {
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let q = m.qr().q();
        dicts.push(Dictionary::from_atoms(Tensor::from_fn(&[n, n], |i| q[(i / n, i % n)])).unwrap());
    }
    let mut closed = 0.0f64;
    for d in &dicts {
        for alpha in [0.01, 0.1, 1.0] {
            let x: Vec<f64> = (0..d.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let want: Vec<f64> = correlate(d, &x).iter().map(|&v| soft(v, alpha)).collect();
            let p = SparseProblem::new(&x, d, alpha).unwrap();
            for z in [
                ista_solve(&p, 1_000_000, 1e-12).unwrap().z,
                fista_solve(&p, 1_000_000, 1e-12).unwrap().z,
            ] {
                closed = closed.max(max_abs_diff(&z, &want));
            }
        }
    }
    outcome(
        gap <= 1e-5 && closed <= 1e-6,
        format!("ISTA/FISTA gap {gap:.2e} (<= 1e-5), orthonormal closed-form error {closed:.2e} (<= 1e-6)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let d = build_dct_dictionary(16, 64).unwrap();
    let alpha = 0.5;
    let l = d.lipschitz_bound();
    let mut worst = 0.0f64;
    for steps in [1, 4, 16] {
        let params = lista_init_from_dictionary::<f64>(&d, alpha, steps).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut z = vec![0.0; 64];
            for _ in 0..steps {
                let r: Vec<f64> = x.iter().zip(synthesize(&d, &z)).map(|(a, b)| a - b).collect();
                let g = correlate(&d, &r);
                z = z.iter().zip(&g).map(|(zi, gi)| soft(zi + gi / l, alpha / l)).collect();
            }
            worst = worst.max(max_abs_diff(&lista_forward(&params, &x).unwrap(), &z));
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max deviation from explicit ISTA {worst:.2e} (<= 1e-12)"),
    )
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(out ⊙ r)` for a fixed random `r`.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&mut rng, tape.shape(out));
    let rv = tape.leaf(&r);
    let prod = tape.mul(out, rv)?;
    tape.sum(prod)
}

type Builder = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Builder)> {
    vec![
        ("add", vec![vec![2, 3], vec![2, 3]], |t, v| t.add(v[0], v[1])),
        ("sub", vec![vec![2, 3], vec![2, 3]], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![vec![5], vec![5]], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![vec![4]], |t, v| t.scale(v[0], -1.7)),
        ("abs", vec![vec![6]], |t, v| t.abs(v[0])),
        ("sum", vec![vec![2, 3]], |t, v| t.sum(v[0])),
        ("sum_squares", vec![vec![7]], |t, v| t.sum_squares(v[0])),
        ("reshape", vec![vec![2, 6]], |t, v| t.reshape(v[0], &[3, 4])),
        ("permute", vec![vec![2, 3, 4]], |t, v| t.permute(v[0], &[2, 0, 1])),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("matmul_t(a)", vec![vec![4, 3], vec![4, 2]], |t, v| {
            t.matmul_t(v[0], v[1], true, false)
        }),
        ("matmul_t(b)", vec![vec![3, 4], vec![2, 4]], |t, v| {
            t.matmul_t(v[0], v[1], false, true)
        }),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 2]], |t, v| {
            t.bmm(v[0], v[1], false, false)
        }),
        ("bmm(a,b)", vec![vec![2, 4, 3], vec![2, 2, 4]], |t, v| {
            t.bmm(v[0], v[1], true, true)
        }),
        ("conv2d", vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3]], |t, v| {
            t.conv2d(v[0], v[1], 1, 0)
        }),
        ("conv2d(stride 2)", vec![vec![2, 2, 6, 6], vec![2, 2, 3, 3]], |t, v| {
            t.conv2d(v[0], v[1], 2, 1)
        }),
        ("channel_bias", vec![vec![2, 3, 2, 2], vec![3]], |t, v| {
            t.channel_bias(v[0], v[1])
        }),
        ("group_norm", vec![vec![2, 4, 2, 3], vec![4], vec![4]], |t, v| {
            t.group_norm(v[0], 2, v[1], v[2], 1e-5)
        }),
        ("swish", vec![vec![7]], |t, v| t.swish(v[0])),
        ("upsample2x", vec![vec![1, 2, 2, 3]], |t, v| t.upsample2x(v[0])),
        ("reflect_pad", vec![vec![2, 1, 3, 4]], |t, v| t.reflect_pad(v[0], 2)),
        ("softmax", vec![vec![3, 4]], |t, v| t.softmax(v[0])),
        ("nchw_to_rows", vec![vec![2, 3, 2, 2]], |t, v| t.nchw_to_rows(v[0])),
        ("rows_to_nchw", vec![vec![8, 3]], |t, v| t.rows_to_nchw(v[0], 2, 2, 2)),
    ]
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        channels: 1,
        downsample_blocks: 1,
        latent_dim: 8,
        dict_atoms: 16,
        lista_steps: 2,
        alpha: 0.5,
        // two channels per norm group keep every bias gradient non-zero
        base_channels: 16,
        mid_channels: 16,
        use_nonlocal: false,
    }
}

fn end_to_end_error() -> f64 {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    // n = 8 has no DCT construction; Gaussian atoms stand in
    let dict = gaussian_dictionary(&mut rng, cfg.latent_dim, cfg.dict_atoms);
    let lista = lista_init_from_dictionary(&dict, cfg.alpha, cfg.lista_steps).unwrap();
    let mut m = ScVae::<f64>::with_parts(cfg.clone(), dict, lista, 2).unwrap();
    for (name, t) in m.named_params_mut() {
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let mut inputs: Vec<Tensor<f64>> = m.named_params().iter().map(|(_, t)| t.clone()).collect();
    inputs.push(m.lista.w_e.clone());
    inputs.push(m.lista.s_matrix.clone());
    inputs.push(m.lista.theta.clone());
    inputs.push(Tensor::from_fn(&[1, 16, 16], |_| rng.random_range(0.0..1.0)));
    let np = m.named_params().len();
    let res = check_sampled(&inputs, 1e-6, 6, 11, |tape, v| {
        let reg = Registered {
            params: v[..np].to_vec(),
            lista: ListaVars {
                w_e: v[np],
                s_matrix: v[np + 1],
                theta: v[np + 2],
                steps: m.lista.steps,
            },
        };
        let x = tape.reshape(v[np + 3], &[1, 1, 16, 16])?;
        let fwd = m.forward(tape, &reg, x)?;
        Ok(m.losses_on(tape, x, &fwd)?.0)
    })
    .unwrap();
    res.max_rel_error()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut per_op = 0.0f64;
    let mut worst_op = "";
    let cases = op_cases();
    for &(name, ref shapes, build) in &cases {
        for inst in 0..20u64 {
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            let e = check(&inputs, 1e-5, |tape, v| {
                let y = build(tape, v)?;
                project(tape, y, 1000 + inst)
            })
            .unwrap()
            .max_rel_error();
            if e > per_op {
                per_op = e;
                worst_op = name;
            }
        }
    }
    for inst in 0..20u64 {
        let v = rand_tensor(&mut rng, &[3, 6]);
        let th = Tensor::from_fn(&[6], |_| rng.random_range(0.0..0.5));
        let e = check(&[v, th], 1e-5, |tape, x| {
            let y = tape.soft_threshold(x[0], x[1])?;
            project(tape, y, 2000 + inst)
        })
        .unwrap()
        .max_rel_error();
        if e > per_op {
            per_op = e;
            worst_op = "soft_threshold";
        }
    }
    let e2e = end_to_end_error();
    outcome(
        per_op <= 1e-4 && e2e <= 1e-3,
        format!(
            "{} ops x 20 instances, worst per-op rel. error {per_op:.2e} ({worst_op}, <= 1e-4); end-to-end {e2e:.2e} (<= 1e-3)",
            cases.len() + 1
        ),
    )
}

/// Largest `|total − (rec + latent/(h·w))|` over every training step.
struct LossSplit {
    worst: f64,
    steps: usize,
}

fn train_steps(t: &mut Trainer<f32>, data: &[Tensor<f64>], steps: usize, split: &mut LossSplit) {
    let g = t.config.model.grid() as f64;
    for _ in 0..steps {
        let r = t.train_step(data).unwrap();
        split.worst = split.worst.max((r.total - (r.rec + r.latent / (g * g))).abs());
        split.steps += 1;
    }
}

fn desk_config(lista_steps: usize) -> TrainConfig {
    let mut c = TrainConfig {
        learning_rate: 1e-4,
        batch_size: 8,
        epochs: 1000,
        max_steps: Some(2000),
        ..TrainConfig::default()
    };
    c.model = ModelConfig {
        lista_steps,
        ..ModelConfig::default()
    };
    c
}

fn clamp01(t: Tensor<f64>) -> Tensor<f64> {
    Tensor::new(t.shape(), t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect()).unwrap()
}

fn criterion_4(model: &ScVae<f32>, corpus: &[Tensor<f64>], secs: f64) -> Outcome {
    let (mut p, mut s) = (0.0, 0.0);
    for img in corpus {
        let rec = clamp01(model.reconstruct(&img.cast()).unwrap().0.cast());
        p += psnr(img, &rec, 1.0).unwrap();
        s += ssim(img, &rec, 1.0).unwrap();
    }
    let n = corpus.len() as f64;
    let (p, s) = (p / n, s / n);
    outcome(
        p >= 20.0 && s >= 0.6 && secs < 600.0,
        format!("2000 steps in {secs:.0} s (< 600), train PSNR {p:.2} dB (>= 20), SSIM {s:.3} (>= 0.6)"),
    )
}

fn hoyer(z: &[f64]) -> f64 {
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    let l2 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return 1.0;
    }
    let k = (z.len() as f64).sqrt();
    (k - l1 / l2) / (k - 1.0)
}

/// Mean squared latent reconstruction error `‖e − Dz‖²/n` per latent vector
/// and mean Hoyer sparsity of the codes.
fn latent_stats(model: &ScVae<f32>, images: &[Tensor<f64>]) -> (f64, f64) {
    let d = model.dictionary();
    let (n, k) = (d.dim(), d.atom_count());
    let (mut err, mut hoy, mut count) = (0.0, 0.0, 0usize);
    for img in images {
        let grid = sparse_code_grid(&model.encode(&img.cast()).unwrap(), &model.lista).unwrap();
        let e = grid.values.cast::<f64>();
        let z = grid.codes.unwrap().cast::<f64>();
        for (ev, zv) in e.data().chunks_exact(n).zip(z.data().chunks_exact(k)) {
            err += ev
                .iter()
                .zip(synthesize(d, zv))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n as f64;
            hoy += hoyer(zv);
            count += 1;
        }
    }
    (err / count as f64, hoy / count as f64)
}

fn criterion_5(s8: &ScVae<f32>, s1: &ScVae<f32>, corpus: &[Tensor<f64>], secs: f64) -> Outcome {
    let held_out = structured_corpus(64, 32, 1007);
    let (mse8, _) = latent_stats(s8, &held_out);
    let (mse1, _) = latent_stats(s1, &held_out);
    let (_, hoyer8) = latent_stats(s8, corpus);
    outcome(
        mse8 <= mse1 && hoyer8 >= 0.5 && secs < 1500.0,
        format!(
            "held-out latent MSE s=8 {mse8:.4e} vs s=1 {mse1:.4e} (s=8 <= s=1), Hoyer of s=8 codes {hoyer8:.3} (>= 0.5), {secs:.0} s (< 1500)"
        ),
    )
}

fn criterion_6(split: &LossSplit) -> Outcome {
    outcome(
        split.worst <= 1e-8,
        format!(
            "max |total - (rec + latent/hw)| {:.2e} over {} training steps (<= 1e-8)",
            split.worst, split.steps
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut fails = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let a = Tensor::from_fn(&[1, 16, 16], |_| rng.random_range(0.2..0.8));
    let shifted = Tensor::new(a.shape(), a.data().iter().map(|v| v + 0.1).collect()).unwrap();
    expect("psnr identical = 99", psnr(&a, &a, 1.0).unwrap() == 99.0);
    expect(
        "psnr uniform 0.1 error = 20 dB",
        (psnr(&a, &shifted, 1.0).unwrap() - 20.0).abs() < 1e-9,
    );
    let b = Tensor::new(a.shape(), a.data().iter().map(|v| v + 0.1 * 2f64.sqrt()).collect()).unwrap();
    let drop = psnr(&a, &shifted, 1.0).unwrap() - psnr(&a, &b, 1.0).unwrap();
    expect(
        "doubling MSE costs 10 log10 2 dB",
        (drop - 10.0 * 2f64.log10()).abs() < 1e-9,
    );
    expect("ssim identical = 1", (ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
    let c = Tensor::full(&[1, 16, 16], 0.4);
    expect(
        "ssim equal constants = 1",
        (ssim(&c, &c, 1.0).unwrap() - 1.0).abs() < 1e-9,
    );
    let checker = Tensor::from_fn(&[1, 16, 16], |i| ((i / 16 + i % 16) % 2) as f64);
    let inv = Tensor::new(checker.shape(), checker.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    expect(
        "ssim of inverted high-contrast image < 0.5",
        ssim(&checker, &inv, 1.0).unwrap() < 0.5,
    );
    let mut onehot = vec![0.0; 9];
    onehot[4] = -2.5;
    expect(
        "hoyer one-hot = 1",
        (hoyer_sparsity(&onehot).unwrap() - 1.0).abs() < 1e-12,
    );
    expect("hoyer constant = 0", hoyer_sparsity(&[0.7; 6]).unwrap().abs() < 1e-12);
    expect(
        "hoyer (1,1,0,0) = 2 - sqrt 2",
        (hoyer_sparsity(&[1.0, 1.0, 0.0, 0.0]).unwrap() - (2.0 - 2f64.sqrt())).abs() < 1e-12,
    );
    let m = [true, true, false, false];
    expect("iou/dice identical = 1", iou_dice(&m, &m).unwrap() == (1.0, 1.0));
    expect(
        "iou/dice disjoint = 0",
        iou_dice(&m, &[false, false, true, true]).unwrap() == (0.0, 0.0),
    );
    let (iou, dice) = iou_dice(
        &[true, true, false, false, false, false],
        &[false, true, true, false, false, false],
    )
    .unwrap();
    expect(
        "half overlap = (1/3, 1/2)",
        (iou - 1.0 / 3.0).abs() < 1e-15 && (dice - 0.5).abs() < 1e-15,
    );
    let mut identity = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..64);
        let p: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        let t: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        let (iou, dice) = iou_dice(&p, &t).unwrap();
        identity = identity.max((dice - 2.0 * iou / (1.0 + iou)).abs());
    }
    expect("DICE = 2 IoU / (1 + IoU)", identity <= 1e-15);
    let detail = if fails.is_empty() {
        format!("13 golden values hold; DICE identity max error {identity:.1e} over 1000 pairs")
    } else {
        format!("failed: {}", fails.join("; "))
    };
    outcome(fails.is_empty(), detail)
}

fn criterion_8(model: &ScVae<f32>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SegmentOptions::default();
    let count = 100;
    let mut total = 0.0;
    for _ in 0..count {
        let (img, mask) = two_texture_scene(32, &mut rng);
        let seg = segment_image(model, &img, &opts).unwrap();
        let f = 32 / seg.h;
        let (mut inter, mut union) = (0usize, 0usize);
        for (i, &truth) in mask.iter().enumerate() {
            let pred = seg.fg_mask[(i / 32 / f) * seg.w + (i % 32) / f];
            inter += (pred && truth) as usize;
            union += (pred || truth) as usize;
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    let iou = total / count as f64;
    outcome(
        iou >= 0.8,
        format!("mean IoU {iou:.3} over {count} two-texture scenes (>= 0.80)"),
    )
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const PIPELINE_CONFIG: &str = "\
learning_rate = 1e-3
batch_size = 8
epochs = 4
model.base_channels = 8
model.mid_channels = 16
";

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |rel: &str| root.join(rel).display().to_string();
    let mut runs = Vec::new();
    for _ in 0..2 {
        for sub in ["data", "run", "rec", "seg"] {
            let _ = fs::remove_dir_all(root.join(sub));
        }
        fs::write(root.join("train.cfg"), PIPELINE_CONFIG).unwrap();
        let steps: [&[String]; 5] = [
            &argv(&[
                "gen-data",
                "--kind",
                "scenes",
                "--count",
                "16",
                "--seed",
                "9",
                "--out",
                &p("data"),
            ]),
            &argv(&["make-dict", "--n", "16", "--atoms", "64", "--out", &p("dict.scvk")]),
            &argv(&[
                "train",
                "--config",
                &p("train.cfg"),
                "--data",
                &p("data"),
                "--out",
                &p("run"),
                "--seed",
                "3",
            ]),
            &argv(&[
                "reconstruct",
                "--ckpt",
                &p("run/best.scvk"),
                "--in",
                &p("data"),
                "--out",
                &p("rec"),
            ]),
            &argv(&[
                "segment",
                "--ckpt",
                &p("run/best.scvk"),
                "--in",
                &p("data"),
                "--out",
                &p("seg"),
            ]),
        ];
        for step in steps {
            if run(step.to_vec()) != 0 {
                return outcome(false, format!("command failed: {}", step[1..].join(" ")));
            }
        }
        let table = eval_table(
            &root.join("run/best.scvk"),
            &root.join("data"),
            &SegmentOptions::default(),
        )
        .unwrap();
        fs::write(root.join("eval.csv"), table).unwrap();
        runs.push(tree(root));
    }
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let same_names = runs[0].len() == runs[1].len();
    outcome(
        same_names && differing.is_empty(),
        if differing.is_empty() && same_names {
            format!("{} artifacts byte-identical across two runs", runs[0].len())
        } else {
            format!("artifacts differ: {differing:?}")
        },
    )
}

fn argv(list: &[&str]) -> Vec<String> {
    std::iter::once("scvae")
        .chain(list.iter().copied())
        .map(String::from)
        .collect()
}

fn criterion_10(split: &mut LossSplit) -> Outcome {
    let data = structured_corpus(40, 32, 5);
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 100,
        ..desk_config(8)
    };
    let mut straight = Trainer::<f32>::new(cfg.clone()).unwrap();
    train_steps(&mut straight, &data, 20, split);

    let mut first = Trainer::<f32>::new(cfg).unwrap();
    train_steps(&mut first, &data, 10, split);
    let bytes = first.checkpoint().to_bytes();
    let mut resumed = Trainer::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    train_steps(&mut resumed, &data, 10, split);

    let (a, b) = (straight.checkpoint().to_bytes(), resumed.checkpoint().to_bytes());
    outcome(
        a == b,
        format!(
            "10 + 10 resumed steps vs 20 straight: checkpoints of {} bytes, identical = {}",
            a.len(),
            a == b
        ),
    )
}

fn timed<F: FnOnce() -> Outcome>(f: F) -> (Outcome, f64) {
    let t0 = Instant::now();
    let o = f();
    (o, t0.elapsed().as_secs_f64())
}

fn main() {
    let mut split = LossSplit { worst: 0.0, steps: 0 };
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut report = |id: usize, name: &'static str, (o, secs): (Outcome, f64)| {
        eprintln!("[{id}] {name} done in {secs:.1} s");
        results.push((id, name, o, secs));
    };

    let (o, s) = timed(criterion_1);
    let limit = o.pass && s < 10.0;
    report(
        1,
        "sparse solver oracle equivalence",
        (outcome(limit, format!("{}, {s:.1} s (< 10)", o.detail)), s),
    );
    let (o, s) = timed(criterion_2);
    let limit = o.pass && s < 1.0;
    report(
        2,
        "LISTA at init equals ISTA",
        (outcome(limit, format!("{}, {s:.2} s (< 1)", o.detail)), s),
    );
    let (o, s) = timed(criterion_3);
    let limit = o.pass && s < 60.0;
    report(
        3,
        "gradient suite",
        (outcome(limit, format!("{}, {s:.1} s (< 60)", o.detail)), s),
    );

    let corpus = structured_corpus(200, 32, 7);
    let t0 = Instant::now();
    let mut s8 = Trainer::<f32>::new(desk_config(8)).unwrap();
    train_steps(&mut s8, &corpus, 2000, &mut split);
    let secs8 = t0.elapsed().as_secs_f64();
    report(
        4,
        "desk-scale training trend",
        timed(|| criterion_4(&s8.model, &corpus, secs8)),
    );

    let t0 = Instant::now();
    let mut s1 = Trainer::<f32>::new(desk_config(1)).unwrap();
    train_steps(&mut s1, &corpus, 2000, &mut split);
    let secs1 = t0.elapsed().as_secs_f64();
    report(
        5,
        "rollout ablation trend",
        timed(|| criterion_5(&s8.model, &s1.model, &corpus, secs8 + secs1)),
    );

    let (o, s) = timed(criterion_7);
    let limit = o.pass && s < 5.0;
    report(
        7,
        "metric golden values",
        (outcome(limit, format!("{}, {s:.2} s (< 5)", o.detail)), s),
    );
    let (o, s) = timed(|| criterion_8(&s8.model));
    let limit = o.pass && s < 300.0;
    report(
        8,
        "two-texture segmentation",
        (outcome(limit, format!("{}, {s:.1} s (< 300)", o.detail)), s),
    );
    report(9, "pipeline determinism", timed(criterion_9));
    report(10, "checkpoint round trip", timed(|| criterion_10(&mut split)));
    report(6, "loss decomposition", timed(|| criterion_6(&split)));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, o, _) in &results {
        println!(
            "criterion {id:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += !o.pass as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
