//! Adam, the mini-batch training loop, image datasets, the text config
//! format and the `SCVK` checkpoint container.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::imageio::{convert_channels, has_image_extension, load_image, resize_bilinear};
use crate::model::{LossReport, ModelConfig, ScVae};
use crate::solvers::ListaParams;
use crate::tensor::{DType, Scalar, Tensor};

/// Largest accepted gap between the recorded total loss and
/// `rec + latent/(h·w)` recomputed from the report.
pub const DECOMPOSITION_TOL: f64 = 1e-8;

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Steps between periodic "last" checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub data_dir: PathBuf,
    /// Optional cap on the total number of optimizer steps.
    pub max_steps: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
            data_dir: PathBuf::from("data"),
            max_steps: None,
            model: ModelConfig::default(),
        }
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value {raw:?} for {key}")))
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment. Keys not listed
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            let m = &mut c.model;
            match key {
                "learning_rate" => c.learning_rate = parse_value(key, v)?,
                "batch_size" => c.batch_size = parse_value(key, v)?,
                "epochs" => c.epochs = parse_value(key, v)?,
                "seed" => c.seed = parse_value(key, v)?,
                "adam_beta1" => c.adam_beta1 = parse_value(key, v)?,
                "adam_beta2" => c.adam_beta2 = parse_value(key, v)?,
                "adam_eps" => c.adam_eps = parse_value(key, v)?,
                "checkpoint_every" => c.checkpoint_every = parse_value(key, v)?,
                "data_dir" => c.data_dir = PathBuf::from(v),
                "max_steps" => c.max_steps = if v == "none" { None } else { Some(parse_value(key, v)?) },
                "model.image_size" => m.image_size = parse_value(key, v)?,
                "model.channels" => m.channels = parse_value(key, v)?,
                "model.downsample_blocks" => m.downsample_blocks = parse_value(key, v)?,
                "model.latent_dim" => m.latent_dim = parse_value(key, v)?,
                "model.dict_atoms" => m.dict_atoms = parse_value(key, v)?,
                "model.lista_steps" => m.lista_steps = parse_value(key, v)?,
                "model.alpha" => m.alpha = parse_value(key, v)?,
                "model.base_channels" => m.base_channels = parse_value(key, v)?,
                "model.mid_channels" => m.mid_channels = parse_value(key, v)?,
                "model.use_nonlocal" => m.use_nonlocal = parse_value(key, v)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {key}", lineno + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialises every field; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let max_steps = self.max_steps.map_or("none".to_string(), |v| v.to_string());
        let rows: [(&str, String); 20] = [
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("max_steps", max_steps),
            ("model.image_size", m.image_size.to_string()),
            ("model.channels", m.channels.to_string()),
            ("model.downsample_blocks", m.downsample_blocks.to_string()),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("model.dict_atoms", m.dict_atoms.to_string()),
            ("model.lista_steps", m.lista_steps.to_string()),
            ("model.alpha", m.alpha.to_string()),
            ("model.base_channels", m.base_channels.to_string()),
            ("model.mid_channels", m.mid_channels.to_string()),
            ("model.use_nonlocal", m.use_nonlocal.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        self.model.validate()
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter, plus the shared step
/// count kept by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One bias-corrected Adam update of `param` given `grad`, where `t ≥ 1`
/// is the index of this step.
pub fn adam_step<T: Scalar>(
    name: &str,
    param: &mut [T],
    grad: &[T],
    state: &mut AdamMoments<T>,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::dim("adam_step", &[param.len()], &[grad.len()]));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numerical(
            "adam_step",
            format!("non-finite gradient for {name} at element {i}"),
        ));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powf(t as f64));
    let c2 = T::one() - T::lit(cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

const MAGIC: &[u8; 4] = b"SCVK";
const VERSION: u32 = 1;

/// On-disk element types of checkpoint tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoredType {
    F32 = 1,
    F64 = 2,
    U8 = 3,
    U64 = 4,
}

impl StoredType {
    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => StoredType::F32,
            2 => StoredType::F64,
            3 => StoredType::U8,
            4 => StoredType::U64,
            _ => return None,
        })
    }

    fn width(self) -> usize {
        match self {
            StoredType::F32 => 4,
            StoredType::F64 | StoredType::U64 => 8,
            StoredType::U8 => 1,
        }
    }

    fn of<T: Scalar>() -> Self {
        match T::DTYPE {
            DType::F32 => StoredType::F32,
            DType::F64 => StoredType::F64,
        }
    }
}

/// A named tensor as raw little-endian bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub dtype: StoredType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

/// Ordered map of named tensors; the unit of serialisation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<(String, StoredTensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&StoredTensor> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no tensor {name:?}")))
    }

    /// Inserts or replaces `name`.
    pub fn put(&mut self, name: &str, t: StoredTensor) {
        match self.tensors.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = t,
            None => self.tensors.push((name.to_string(), t)),
        }
    }

    pub fn put_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        let mut bytes = Vec::with_capacity(t.numel() * StoredType::of::<T>().width());
        t.data().iter().for_each(|v| v.write_le(&mut bytes));
        self.put(
            name,
            StoredTensor {
                dtype: StoredType::of::<T>(),
                shape: t.shape().to_vec(),
                bytes,
            },
        );
    }

    pub fn put_u64s(&mut self, name: &str, values: &[u64]) {
        self.put(
            name,
            StoredTensor {
                dtype: StoredType::U64,
                shape: vec![values.len()],
                bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
            },
        );
    }

    pub fn put_text(&mut self, name: &str, text: &str) {
        self.put(
            name,
            StoredTensor {
                dtype: StoredType::U8,
                shape: vec![text.len()],
                bytes: text.as_bytes().to_vec(),
            },
        );
    }

    /// Reads `name` as a tensor of element type `T`; the stored dtype must
    /// match.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let s = self.require(name)?;
        if s.dtype != StoredType::of::<T>() {
            return Err(Error::Config(format!(
                "tensor {name:?} is stored as {:?}, requested {:?}",
                s.dtype,
                T::DTYPE
            )));
        }
        let w = s.dtype.width();
        Tensor::new(&s.shape, s.bytes.chunks_exact(w).map(T::read_le).collect())
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        let s = self.require(name)?;
        if s.dtype != StoredType::U64 {
            return Err(Error::Config(format!("tensor {name:?} is not u64")));
        }
        Ok(s.bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let s = self.require(name)?;
        if s.dtype != StoredType::U8 {
            return Err(Error::Config(format!("tensor {name:?} is not text")));
        }
        String::from_utf8(s.bytes.clone()).map_err(|_| Error::Config(format!("tensor {name:?} is not UTF-8")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype as u8);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected SCVK".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format {
                    offset: at + 4,
                    msg: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            let code_at = r.pos as u64;
            let dtype = StoredType::from_code(r.take(1)?[0]).ok_or_else(|| Error::Format {
                offset: code_at,
                msg: "unknown dtype code".into(),
            })?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.width()))
                .ok_or_else(|| Error::Format {
                    offset: r.pos as u64,
                    msg: format!("tensor {name:?} is too large"),
                })?;
            let data = r.take(numel)?.to_vec();
            if ck.get(&name).is_some() {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("duplicate tensor name {name:?}"),
                });
            }
            ck.tensors.push((
                name,
                StoredTensor {
                    dtype,
                    shape,
                    bytes: data,
                },
            ));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                msg: "trailing bytes after last tensor".into(),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Checkpoint holding only a dictionary.
pub fn dictionary_checkpoint(dict: &Dictionary) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.put_tensor("dictionary.atoms", dict.atoms());
    ck
}

/// Images of a directory, sorted by file name, resized and converted to
/// `[channels, size, size]`. Files named `*.mask.*` are ground-truth masks
/// and are skipped; undecodable files are skipped with a warning.
pub fn load_dataset(data_dir: &Path, image_size: usize, channels: usize) -> Result<Vec<(String, Tensor<f64>)>> {
    let entries = std::fs::read_dir(data_dir).map_err(|e| Error::io(data_dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p) && !is_mask_file(p))
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    let mut out = Vec::new();
    for p in paths {
        let img = match load_image(&p) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", p.display());
                continue;
            }
        };
        let img = resize_bilinear(&img, image_size, image_size)?;
        let img = convert_channels(&img, channels)?;
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, img));
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no usable images in {}", data_dir.display())));
    }
    Ok(out)
}

/// True for `name.mask.ext`.
pub fn is_mask_file(p: &Path) -> bool {
    p.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with(".mask"))
}

/// Training state: model, optimizer moments and loss bookkeeping.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: ScVae<T>,
    moments: Vec<AdamMoments<T>>,
    step: u64,
    epoch_sum: f64,
    epoch_count: u64,
    epoch_losses: Vec<f64>,
    best_loss: f64,
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    /// Mean total loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub best_loss: f64,
    pub steps: u64,
}

const LISTA_NAMES: [&str; 3] = ["lista.w_e", "lista.s", "lista.theta"];

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ScVae::new(config.model.clone(), config.seed)?;
        let moments = Self::param_lengths(&model).map(AdamMoments::zeros).collect();
        Ok(Trainer {
            config,
            model,
            moments,
            step: 0,
            epoch_sum: 0.0,
            epoch_count: 0,
            epoch_losses: Vec::new(),
            best_loss: f64::INFINITY,
        })
    }

    fn param_lengths(model: &ScVae<T>) -> impl Iterator<Item = usize> + '_ {
        model.named_params().iter().map(|(_, t)| t.numel()).chain([
            model.lista.w_e.numel(),
            model.lista.s_matrix.numel(),
            model.lista.theta.numel(),
        ])
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len / self.config.batch_size
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.config.learning_rate,
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
        }
    }

    /// Dataset indices of the batch taken at global step `step`.
    fn batch_indices(&self, step: u64, n: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(n) as u64;
        let (epoch, within) = (step / spe, (step % spe) as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let b = self.config.batch_size;
        order[within * b..(within + 1) * b].to_vec()
    }

    /// One optimizer step on the next batch; returns its loss report.
    pub fn train_step(&mut self, data: &[Tensor<f64>]) -> Result<LossReport> {
        let spe = self.steps_per_epoch(data.len());
        if spe == 0 {
            return Err(Error::Dataset(format!(
                "{} images is fewer than batch_size {}",
                data.len(),
                self.config.batch_size
            )));
        }
        let idx = self.batch_indices(self.step, data.len());
        let [c, h, w] = self.model.config().image_shape();
        let mut batch = Vec::with_capacity(idx.len() * c * h * w);
        for &i in &idx {
            if data[i].shape() != [c, h, w] {
                return Err(Error::dim("training image", data[i].shape(), &[c, h, w]));
            }
            batch.extend(data[i].data().iter().map(|&v| T::lit(v)));
        }

        let mut tape = Tape::new();
        let reg = self.model.register(&mut tape);
        let x = tape.constant(&[idx.len(), c, h, w], batch)?;
        let fwd = self
            .model
            .forward(&mut tape, &reg, x)
            .map_err(|e| at_step(e, self.step + 1))?;
        let (total, report) = self
            .model
            .losses_on(&mut tape, x, &fwd)
            .map_err(|e| at_step(e, self.step + 1))?;
        let g = self.model.config().grid();
        let gap = report.total - (report.rec + report.latent / (g * g) as f64);
        let recorded = tape.item(total).to_f64().unwrap_or(f64::NAN);
        let rel = (recorded - report.total).abs() / report.total.abs().max(1.0);
        if gap.abs() > DECOMPOSITION_TOL || !(rel <= 1e-4) {
            return Err(Error::numerical(
                "loss decomposition",
                format!("step {}: gap {gap:e}, recorded total {recorded}", self.step + 1),
            ));
        }

        let grads = tape.backward(total)?;
        self.step += 1;
        let t = self.step;
        let cfg = self.adam();
        let np = self.model.named_params().len();
        let lista_vars = [reg.lista.w_e, reg.lista.s_matrix, reg.lista.theta];
        for i in 0..np + 3 {
            let var = if i < np { reg.params[i] } else { lista_vars[i - np] };
            let zeros;
            let grad = match grads.get(var) {
                Some(g) => g,
                None => {
                    zeros = vec![T::zero(); self.moments[i].m.len()];
                    &zeros
                }
            };
            let (name, param) = if i < np {
                let (n, p) = &mut self.model.named_params_mut()[i];
                (n.clone(), p.data_mut())
            } else {
                let l = &mut self.model.lista;
                let p = match i - np {
                    0 => &mut l.w_e,
                    1 => &mut l.s_matrix,
                    _ => &mut l.theta,
                };
                (LISTA_NAMES[i - np].to_string(), p.data_mut())
            };
            adam_step(&name, param, grad, &mut self.moments[i], t, &cfg).map_err(|e| at_step(e, t))?;
        }
        self.model.lista.clamp_theta();

        self.epoch_sum += report.total;
        self.epoch_count += 1;
        if self.epoch_count as usize == spe {
            self.close_epoch();
        }
        Ok(report)
    }

    fn close_epoch(&mut self) {
        let mean = self.epoch_sum / self.epoch_count as f64;
        self.epoch_losses.push(mean);
        info!(
            "epoch {} mean total loss {mean:.6} (step {})",
            self.epoch_losses.len(),
            self.step
        );
        self.epoch_sum = 0.0;
        self.epoch_count = 0;
    }

    /// Snapshot of everything needed to resume bit-exactly.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = model_checkpoint(&self.model, &self.config);
        ck.put_u64s("meta.step", &[self.step]);
        ck.put_tensor(
            "meta.epoch_losses",
            &Tensor::new(&[self.epoch_losses.len()], self.epoch_losses.clone()).expect("1-d"),
        );
        ck.put_tensor(
            "meta.running",
            &Tensor::new(&[3], vec![self.epoch_sum, self.epoch_count as f64, self.best_loss]).expect("1-d"),
        );
        let names: Vec<String> = self
            .model
            .named_params()
            .iter()
            .map(|(n, _)| n.clone())
            .chain(LISTA_NAMES.iter().map(|s| s.to_string()))
            .collect();
        for (name, mom) in names.iter().zip(&self.moments) {
            let len = mom.m.len();
            ck.put_tensor(
                &format!("adam.m.{name}"),
                &Tensor::new(&[len], mom.m.clone()).expect("1-d"),
            );
            ck.put_tensor(
                &format!("adam.v.{name}"),
                &Tensor::new(&[len], mom.v.clone()).expect("1-d"),
            );
        }
        ck
    }

    /// Restores a trainer saved by [`Trainer::checkpoint`]. The stored
    /// config is authoritative.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::parse(&ck.text("meta.config")?)?;
        let model = model_from_checkpoint::<T>(ck)?;
        let names: Vec<String> = model
            .named_params()
            .iter()
            .map(|(n, _)| n.clone())
            .chain(LISTA_NAMES.iter().map(|s| s.to_string()))
            .collect();
        let mut moments = Vec::with_capacity(names.len());
        for (name, len) in names.iter().zip(Self::param_lengths(&model)) {
            let m = ck.tensor::<T>(&format!("adam.m.{name}"))?.into_data();
            let v = ck.tensor::<T>(&format!("adam.v.{name}"))?.into_data();
            if m.len() != len || v.len() != len {
                return Err(Error::dim("adam state", &[m.len()], &[len]));
            }
            moments.push(AdamMoments { m, v });
        }
        let step = *ck
            .u64s("meta.step")?
            .first()
            .ok_or_else(|| Error::Config("empty meta.step".into()))?;
        let epoch_losses = ck.tensor::<f64>("meta.epoch_losses")?.into_data();
        let running = ck.tensor::<f64>("meta.running")?.into_data();
        if running.len() != 3 {
            return Err(Error::Config("meta.running must hold 3 values".into()));
        }
        Ok(Trainer {
            config,
            model,
            moments,
            step,
            epoch_sum: running[0],
            epoch_count: running[1] as u64,
            epoch_losses,
            best_loss: running[2],
        })
    }
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::Numerical { what, detail } => Error::Numerical {
            what,
            detail: format!("step {step}: {detail}"),
        },
        other => other,
    }
}

/// Model weights, LISTA parameters, dictionary and config snapshot.
pub fn model_checkpoint<T: Scalar>(model: &ScVae<T>, config: &TrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::new();
    let mut cfg = config.clone();
    cfg.model = model.config().clone();
    ck.put_text("meta.config", &cfg.to_text());
    ck.put_tensor("dictionary.atoms", model.dictionary().atoms());
    ck.put_tensor("lista.w_e", &model.lista.w_e);
    ck.put_tensor("lista.s", &model.lista.s_matrix);
    ck.put_tensor("lista.theta", &model.lista.theta);
    for (name, t) in model.named_params() {
        ck.put_tensor(name, t);
    }
    ck
}

/// Rebuilds a model from a checkpoint written by [`model_checkpoint`].
pub fn model_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<ScVae<T>> {
    let config = TrainConfig::parse(&ck.text("meta.config")?)?;
    let dict = Dictionary::from_atoms(ck.tensor::<f64>("dictionary.atoms")?)?;
    let lista = ListaParams {
        w_e: ck.tensor::<T>("lista.w_e")?.with_grad(),
        s_matrix: ck.tensor::<T>("lista.s")?.with_grad(),
        theta: ck.tensor::<T>("lista.theta")?.with_grad(),
        steps: config.model.lista_steps,
    };
    let k = config.model.dict_atoms;
    if lista.s_matrix.shape() != [k, k] || lista.theta.shape() != [k] {
        return Err(Error::dim("lista", lista.s_matrix.shape(), &[k, k]));
    }
    let mut model = ScVae::with_parts(config.model.clone(), dict, lista, config.seed)?;
    for (name, t) in model.named_params_mut() {
        let stored = ck.tensor::<T>(name)?;
        if stored.shape() != t.shape() {
            return Err(Error::dim("checkpoint tensor", stored.shape(), t.shape()));
        }
        *t = stored.with_grad();
    }
    Ok(model)
}

/// The train config stored in a checkpoint.
pub fn checkpoint_config(ck: &Checkpoint) -> Result<TrainConfig> {
    TrainConfig::parse(&ck.text("meta.config")?)
}

/// Trains from scratch on `data` for `config.epochs` epochs (or
/// `config.max_steps` steps). `on_checkpoint` receives the trainer every
/// `checkpoint_every` steps. The best checkpoint is the one with the lowest
/// epoch-mean total loss.
pub fn train<T: Scalar>(
    config: TrainConfig,
    data: &[Tensor<f64>],
    mut on_checkpoint: impl FnMut(&Trainer<T>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::<T>::new(config)?;
    let spe = trainer.steps_per_epoch(data.len());
    if spe == 0 {
        return Err(Error::Dataset(format!(
            "{} images is fewer than batch_size {}",
            data.len(),
            trainer.config.batch_size
        )));
    }
    let mut total_steps = (trainer.config.epochs * spe) as u64;
    if let Some(cap) = trainer.config.max_steps {
        total_steps = total_steps.min(cap as u64);
    }
    let mut best: Option<Checkpoint> = None;
    while trainer.step < total_steps {
        let epochs_before = trainer.epoch_losses.len();
        trainer.train_step(data)?;
        if trainer.step == total_steps && trainer.epoch_count > 0 {
            // a step cap can end the run inside an epoch
            trainer.close_epoch();
        }
        if trainer.epoch_losses.len() > epochs_before {
            let mean = *trainer.epoch_losses.last().expect("epoch closed");
            if mean < trainer.best_loss {
                trainer.best_loss = mean;
                best = Some(trainer.checkpoint());
            }
        }
        let every = trainer.config.checkpoint_every as u64;
        if every > 0 && trainer.step % every == 0 {
            on_checkpoint(&trainer)?;
        }
    }
    let last = trainer.checkpoint();
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        epoch_losses: trainer.epoch_losses.clone(),
        best_loss: trainer.best_loss,
        steps: trainer.step,
    })
}

/// Loss statistics keyed by epoch, for CSV export.
pub fn losses_csv(epoch_losses: &[f64]) -> String {
    let mut s = String::from("epoch,mean_total_loss\n");
    for (i, l) in epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

/// Sorted map of tensor names to shapes, for inspection.
pub fn describe(ck: &Checkpoint) -> BTreeMap<String, Vec<usize>> {
    ck.tensors.iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect()
}
