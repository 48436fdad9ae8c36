//! The `scvae` command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dictionary::build_dct_dictionary;
use crate::downstream::{kmeans, segment_image, SegmentMethod, SegmentOptions, SpectralOptions, ALL_NEIGHBOURS};
use crate::error::{Error, Result};
use crate::imageio::{load_mask, resize_mask_nearest, save_label_pgm, save_label_png, save_png};
use crate::metrics::{hoyer_sparsity, iou_dice, psnr, ssim};
use crate::model::{sparse_code_grid, ScVae};
use crate::synthetic::{structured_corpus, write_corpus, write_scenes};
use crate::tensor::Tensor;
use crate::training::{
    dictionary_checkpoint, load_dataset, losses_csv, model_from_checkpoint, train, Checkpoint, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "scvae", version, about = "Sparse-coding VAE with a LISTA latent coder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Kmeans,
    Spectral,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Corpus {
    Structured,
    Scenes,
}

#[derive(clap::Args, Debug)]
struct SegmentFlags {
    /// Number of clusters per image.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Clustering back end.
    #[arg(long, value_enum, default_value_t = Method::Spectral)]
    method: Method,
    /// Neighbours per node of the spectral affinity graph, or `all`.
    #[arg(long, default_value = "all", value_parser = parse_knn)]
    knn: usize,
    /// Boundary-connectivity threshold separating background classes.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Seed of the clustering initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_knn(s: &str) -> std::result::Result<usize, String> {
    if s == "all" {
        return Ok(ALL_NEIGHBOURS);
    }
    s.parse().map_err(|_| format!("expected a count or `all`, got {s:?}"))
}

impl SegmentFlags {
    fn options(&self) -> SegmentOptions {
        SegmentOptions {
            classes: self.classes,
            method: match self.method {
                Method::Kmeans => SegmentMethod::KMeans,
                Method::Spectral => SegmentMethod::Spectral,
            },
            tau: self.tau,
            spectral: SpectralOptions {
                knn: self.knn,
                seed: self.seed,
                ..SpectralOptions::default()
            },
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the DCT dictionary and write it as a checkpoint.
    MakeDict {
        /// Atom length (a perfect square).
        #[arg(long)]
        n: usize,
        /// Number of atoms.
        #[arg(long)]
        atoms: usize,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic image corpus (scenes come with masks).
    GenData {
        #[arg(long, value_enum, default_value_t = Corpus::Structured)]
        kind: Corpus,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes best.scvk, last.scvk and losses.csv.
    Train {
        /// Config file of `key = value` lines.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `data_dir` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `max_steps` from the config.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Write latents and sparse codes of every image as `<name>.codes.scvk`.
    Encode {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct every image; writes PNGs and metrics.csv.
    Reconstruct {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// K-means over the sparse codes of all grid cells of all images.
    ClusterPatches {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Image directory.
        #[arg(long)]
        data: PathBuf,
        /// Number of clusters.
        #[arg(long)]
        clusters: usize,
        /// Output CSV of `filename,row,col,cluster`.
        #[arg(long)]
        out: PathBuf,
        /// Seed of the k-means++ initialisation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lloyd iteration cap.
        #[arg(long, default_value_t = 300)]
        max_iters: usize,
    },
    /// Segment every image; writes `<name>.labels.pgm` and `<name>.fg.png`.
    Segment {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seg: SegmentFlags,
    },
    /// Print per-image PSNR, SSIM and Hoyer sparsity as CSV, plus IoU and
    /// DICE for images with a `<name>.mask.png`.
    Eval {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Image directory.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        seg: SegmentFlags,
    },
    /// Segmentation IoU/DICE under added Gaussian noise.
    NoiseSweep {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of images with `<name>.mask.png` masks.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated noise standard deviations.
        #[arg(long, default_value = "0,0.05,0.1")]
        sigmas: String,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seg: SegmentFlags,
    },
}

/// Parses `argv` (program name first) and runs the subcommand. Returns 0 on
/// success, 1 on runtime errors and 2 on usage errors.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeDict { n, atoms, out } => {
            let dict = build_dct_dictionary(n, atoms)?;
            dictionary_checkpoint(&dict).save(&out)?;
            info!("wrote {n}x{atoms} dictionary to {}", out.display());
            Ok(())
        }
        Command::GenData {
            kind,
            count,
            size,
            seed,
            out,
        } => match kind {
            Corpus::Structured => write_corpus(&out, "img", &structured_corpus(count, size, seed)),
            Corpus::Scenes => write_scenes(&out, count, size, seed),
        },
        Command::Train {
            config,
            data,
            out,
            seed,
            max_steps,
        } => {
            let mut cfg = TrainConfig::from_file(&config)?;
            if let Some(d) = data {
                cfg.data_dir = d;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if max_steps.is_some() {
                cfg.max_steps = max_steps;
            }
            run_train(cfg, &out)
        }
        Command::Encode { ckpt, input, out } => run_encode(&ckpt, &input, &out),
        Command::Reconstruct { ckpt, input, out } => run_reconstruct(&ckpt, &input, &out),
        Command::ClusterPatches {
            ckpt,
            data,
            clusters,
            out,
            seed,
            max_iters,
        } => run_cluster_patches(&ckpt, &data, clusters, seed, max_iters, &out),
        Command::Segment { ckpt, input, out, seg } => run_segment(&ckpt, &input, &out, &seg.options()),
        Command::Eval { ckpt, data, seg } => {
            print!("{}", eval_table(&ckpt, &data, &seg.options())?);
            Ok(())
        }
        Command::NoiseSweep {
            ckpt,
            data,
            sigmas,
            out,
            seg,
        } => {
            let sigmas = parse_sigmas(&sigmas)?;
            let csv = noise_sweep(&ckpt, &data, &sigmas, &seg.options())?;
            match out {
                Some(p) => write_file(&p, csv.as_bytes()),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_model(ckpt: &Path) -> Result<ScVae<f32>> {
    model_from_checkpoint::<f32>(&Checkpoint::load(ckpt)?)
}

fn dataset_for(model: &ScVae<f32>, dir: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let c = model.config();
    load_dataset(dir, c.image_size, c.channels)
}

fn stem(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(s, _)| s)
}

fn run_train(cfg: TrainConfig, out: &Path) -> Result<()> {
    let data: Vec<Tensor<f64>> = load_dataset(&cfg.data_dir, cfg.model.image_size, cfg.model.channels)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    info!("training on {} images", data.len());
    create_dir(out)?;
    let last_path = out.join("last.scvk");
    let outcome = train::<f32>(cfg, &data, |t| t.checkpoint().save(&last_path))?;
    outcome.best.save(&out.join("best.scvk"))?;
    outcome.last.save(&last_path)?;
    write_file(&out.join("losses.csv"), losses_csv(&outcome.epoch_losses).as_bytes())?;
    info!(
        "finished after {} steps, best epoch loss {}",
        outcome.steps, outcome.best_loss
    );
    Ok(())
}

fn run_encode(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let images = dataset_for(&model, input)?;
    create_dir(out)?;
    for (name, img) in &images {
        let grid = sparse_code_grid(&model.encode(&img.cast())?, &model.lista)?;
        let mut ck = Checkpoint::new();
        ck.put_tensor("latents", &grid.values);
        ck.put_tensor("codes", grid.codes.as_ref().expect("codes populated"));
        ck.save(&out.join(format!("{}.codes.scvk", stem(name))))?;
    }
    Ok(())
}

/// Reconstruction clamped to `[0, 1]` and the mean Hoyer sparsity of its
/// codes.
fn reconstruct_one(model: &ScVae<f32>, img: &Tensor<f64>) -> Result<(Tensor<f64>, f64)> {
    let (out, grid) = model.reconstruct(&img.cast())?;
    let out = out.cast::<f64>();
    let clamped = Tensor::new(out.shape(), out.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    let codes = grid.codes.expect("codes populated").cast::<f64>();
    let k = codes.shape()[2];
    let hoyer = if k >= 2 {
        let vals: Result<Vec<f64>> = codes.data().chunks_exact(k).map(hoyer_sparsity).collect();
        let vals = vals?;
        vals.iter().sum::<f64>() / vals.len() as f64
    } else {
        1.0
    };
    Ok((clamped, hoyer))
}

fn run_reconstruct(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let images = dataset_for(&model, input)?;
    create_dir(out)?;
    let mut csv = String::from("filename,psnr,ssim,hoyer\n");
    for (name, img) in &images {
        let (rec, hoyer) = reconstruct_one(&model, img)?;
        save_png(&rec, &out.join(format!("{}.png", stem(name))))?;
        let _ = writeln!(
            csv,
            "{name},{},{},{hoyer}",
            psnr(img, &rec, 1.0)?,
            ssim(img, &rec, 1.0)?
        );
    }
    write_file(&out.join("metrics.csv"), csv.as_bytes())
}

fn run_cluster_patches(
    ckpt: &Path,
    data: &Path,
    clusters: usize,
    seed: u64,
    max_iters: usize,
    out: &Path,
) -> Result<()> {
    let model = load_model(ckpt)?;
    let images = dataset_for(&model, data)?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut k = 0;
    for (name, img) in &images {
        let grid = sparse_code_grid(&model.encode(&img.cast())?, &model.lista)?;
        let codes = grid.codes.expect("codes populated").cast::<f64>();
        let s = codes.shape().to_vec();
        k = s[2];
        rows.extend_from_slice(codes.data());
        for r in 0..s[0] {
            for c in 0..s[1] {
                cells.push((name.clone(), r, c));
            }
        }
    }
    let points = Tensor::new(&[cells.len(), k], rows)?;
    let km = kmeans(&points, clusters, seed, max_iters)?;
    let mut csv = String::from("filename,row,col,cluster\n");
    for ((name, r, c), l) in cells.iter().zip(&km.labels) {
        let _ = writeln!(csv, "{name},{r},{c},{l}");
    }
    write_file(out, csv.as_bytes())
}

fn run_segment(ckpt: &Path, input: &Path, out: &Path, opts: &SegmentOptions) -> Result<()> {
    let model = load_model(ckpt)?;
    let images = dataset_for(&model, input)?;
    create_dir(out)?;
    let mut csv = String::from("filename,foreground_cells,bndcon\n");
    for (name, img) in &images {
        let seg = segment_image(&model, img, opts)?;
        let s = stem(name);
        save_label_pgm(&seg.label_grid, seg.h, seg.w, &out.join(format!("{s}.labels.pgm")))?;
        let fg: Vec<usize> = seg.fg_mask.iter().map(|&b| b as usize).collect();
        save_label_png(&fg, seg.h, seg.w, &out.join(format!("{s}.fg.png")))?;
        let bnd: Vec<String> = seg.bndcon_per_class.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(csv, "{name},{},{}", fg.iter().sum::<usize>(), bnd.join(";"));
    }
    write_file(&out.join("segments.csv"), csv.as_bytes())
}

fn mask_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{}.mask.png", stem(name)))
}

/// IoU and DICE of a grid foreground mask upsampled (nearest) onto the
/// ground-truth resolution.
fn score_mask(fg: &[bool], h: usize, w: usize, truth: &(Vec<bool>, usize, usize)) -> Result<(f64, f64)> {
    let (t, th, tw) = truth;
    iou_dice(&resize_mask_nearest(fg, h, w, *th, *tw), t)
}

/// Per-image metrics table as CSV, followed by a `mean` row. IoU and DICE
/// are filled for images with a mask and averaged over those.
pub fn eval_table(ckpt: &Path, data: &Path, opts: &SegmentOptions) -> Result<String> {
    let model = load_model(ckpt)?;
    let images = dataset_for(&model, data)?;
    let mut csv = String::from("filename,psnr,ssim,hoyer,iou,dice\n");
    let mut sums = [0.0; 5];
    let mut masked = 0usize;
    for (name, img) in &images {
        let (rec, hoyer) = reconstruct_one(&model, img)?;
        let (p, s) = (psnr(img, &rec, 1.0)?, ssim(img, &rec, 1.0)?);
        sums[0] += p;
        sums[1] += s;
        sums[2] += hoyer;
        let mp = mask_path(data, name);
        let overlap = if mp.is_file() {
            let seg = segment_image(&model, img, opts)?;
            let (iou, dice) = score_mask(&seg.fg_mask, seg.h, seg.w, &load_mask(&mp)?)?;
            sums[3] += iou;
            sums[4] += dice;
            masked += 1;
            format!("{iou},{dice}")
        } else {
            ",".to_string()
        };
        let _ = writeln!(csv, "{name},{p},{s},{hoyer},{overlap}");
    }
    let n = images.len() as f64;
    let overlap = if masked > 0 {
        format!("{},{}", sums[3] / masked as f64, sums[4] / masked as f64)
    } else {
        ",".to_string()
    };
    let _ = writeln!(csv, "mean,{},{},{},{overlap}", sums[0] / n, sums[1] / n, sums[2] / n);
    Ok(csv)
}

pub fn parse_sigmas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid sigma {p:?}")))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("sigma must be finite and >= 0, got {v}")));
            }
            Ok(v)
        })
        .collect()
}

/// `img + N(0, σ²)` per pixel, clamped to `[0, 1]`.
pub fn add_noise(img: &Tensor<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    Tensor::new(
        img.shape(),
        img.data()
            .iter()
            .map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
            .collect(),
    )
}

/// CSV `sigma,mean_iou,mean_dice` over the images that have masks.
pub fn noise_sweep(ckpt: &Path, data: &Path, sigmas: &[f64], opts: &SegmentOptions) -> Result<String> {
    let model = load_model(ckpt)?;
    let images = dataset_for(&model, data)?;
    let mut scored = Vec::new();
    for (name, img) in &images {
        let mp = mask_path(data, name);
        if !mp.is_file() {
            warn!("no mask for {name}; skipping");
            continue;
        }
        scored.push((img, load_mask(&mp)?));
    }
    if scored.is_empty() {
        return Err(Error::Dataset(format!("no image in {} has a mask", data.display())));
    }
    let mut csv = String::from("sigma,mean_iou,mean_dice\n");
    for (si, &sigma) in sigmas.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.spectral.seed);
        rng.set_stream(si as u64 + 1);
        let (mut iou_sum, mut dice_sum) = (0.0, 0.0);
        for (img, truth) in &scored {
            let noisy = add_noise(img, sigma, &mut rng)?;
            let seg = segment_image(&model, &noisy, opts)?;
            let (iou, dice) = score_mask(&seg.fg_mask, seg.h, seg.w, truth)?;
            iou_sum += iou;
            dice_sum += dice;
        }
        let n = scored.len() as f64;
        let _ = writeln!(csv, "{sigma},{},{}", iou_sum / n, dice_sum / n);
    }
    Ok(csv)
}
