//! The SC-VAE network: convolutional encoder, per-location LISTA sparse
//! coding against a frozen dictionary, latent reconstruction `Ẽ = Z·Dᵀ`,
//! convolutional decoder and the two-level loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::dictionary::{build_dct_dictionary, Dictionary};
use crate::error::{Error, Result};
use crate::metrics::hoyer_sparsity;
use crate::solvers::{lista_init_from_dictionary, ListaParams, ListaVars};
use crate::tensor::{Scalar, Tensor};

const NORM_EPS: f64 = 1e-6;
const MAX_GROUPS: usize = 8;

/// Architecture and sparse-coding hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Square input side `H = W`.
    pub image_size: usize,
    pub channels: usize,
    /// `d`; the latent grid side is `H / 2^d`.
    pub downsample_blocks: usize,
    /// `n`, length of each latent vector.
    pub latent_dim: usize,
    /// `K`, number of dictionary atoms.
    pub dict_atoms: usize,
    /// `s`, LISTA shrinkage applications.
    pub lista_steps: usize,
    pub alpha: f64,
    pub base_channels: usize,
    pub mid_channels: usize,
    pub use_nonlocal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            channels: 1,
            downsample_blocks: 1,
            latent_dim: 16,
            dict_atoms: 64,
            lista_steps: 8,
            alpha: 1.0,
            base_channels: 16,
            mid_channels: 32,
            use_nonlocal: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("latent_dim", self.latent_dim),
            ("dict_atoms", self.dict_atoms),
            ("lista_steps", self.lista_steps),
            ("base_channels", self.base_channels),
            ("mid_channels", self.mid_channels),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if self.downsample_blocks >= usize::BITS as usize
            || !self.image_size.is_multiple_of(1 << self.downsample_blocks)
        {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size, self.downsample_blocks
            )));
        }
        if self.grid() < 2 {
            return Err(Error::Config(format!(
                "latent grid {0}x{0} is too small; reduce downsample_blocks",
                self.grid()
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("model.alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Latent grid side `h = w = H / 2^d`.
    pub fn grid(&self) -> usize {
        self.image_size >> self.downsample_blocks
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }
}

/// Largest divisor of `ch` not exceeding 8.
pub fn group_count(ch: usize) -> usize {
    (1..=MAX_GROUPS.min(ch))
        .rev()
        .find(|g| ch.is_multiple_of(*g))
        .unwrap_or(1)
}

/// Latent vectors of one image on its `h×w` grid, optionally with codes.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid<T> {
    /// `[h, w, n]`.
    pub values: Tensor<T>,
    /// `[h, w, K]`.
    pub codes: Option<Tensor<T>>,
}

/// Scalar losses of one forward pass, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub rec: f64,
    pub latent: f64,
    pub total: f64,
    /// Mean Hoyer sparsity of all code vectors in the batch.
    pub sparsity_hoyer: f64,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    groups: usize,
}

#[derive(Clone, Copy, Debug)]
struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    norm: Norm,
    q: Conv,
    k: Conv,
    v: Conv,
    proj: Conv,
}

#[derive(Clone, Copy, Debug)]
enum Layer {
    Conv(Conv),
    Res(ResBlock),
    Attn(Attention),
    NormSwish(Norm),
    Upsample(Conv),
}

struct Builder<'a, T> {
    params: &'a mut Vec<(String, Tensor<T>)>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, t: Tensor<T>) -> usize {
        self.params.push((name, t.with_grad()));
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        // He-style uniform fan-in bound
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        let w = Tensor::from_fn(&[cout, cin, k, k], |_| T::lit(self.rng.random_range(-bound..bound)));
        Conv {
            weight: self.add(format!("{name}.weight"), w),
            bias: self.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            pad: k / 2,
        }
    }

    fn norm(&mut self, name: &str, ch: usize) -> Norm {
        Norm {
            gamma: self.add(format!("{name}.gamma"), Tensor::full(&[ch], T::one())),
            beta: self.add(format!("{name}.beta"), Tensor::zeros(&[ch])),
            groups: group_count(ch),
        }
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize) -> ResBlock {
        ResBlock {
            norm1: self.norm(&format!("{name}.norm1"), cin),
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3, 1),
            norm2: self.norm(&format!("{name}.norm2"), cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3, 1),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, 1)),
        }
    }

    fn attn(&mut self, name: &str, ch: usize) -> Attention {
        Attention {
            norm: self.norm(&format!("{name}.norm"), ch),
            q: self.conv(&format!("{name}.q"), ch, ch, 1, 1),
            k: self.conv(&format!("{name}.k"), ch, ch, 1, 1),
            v: self.conv(&format!("{name}.v"), ch, ch, 1, 1),
            proj: self.conv(&format!("{name}.proj"), ch, ch, 1, 1),
        }
    }
}

/// The network: named encoder/decoder weights, LISTA parameters and the
/// frozen dictionary.
#[derive(Clone, Debug)]
pub struct ScVae<T> {
    config: ModelConfig,
    params: Vec<(String, Tensor<T>)>,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
    pub lista: ListaParams<T>,
    dict: Dictionary,
}

/// Tape handles of one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `E(x)` rows, `[B·h·w, n]`.
    pub latents: Var,
    /// `Z` rows, `[B·h·w, K]`.
    pub codes: Var,
    /// `Ẽ(x)` rows, `[B·h·w, n]`.
    pub recon_latents: Var,
    /// `G(Ẽ(x))`, `[B, C, H, W]`.
    pub output: Var,
}

/// Per-parameter tape handles, in [`ScVae::named_params`] order.
#[derive(Clone, Debug)]
pub struct Registered {
    pub params: Vec<Var>,
    pub lista: ListaVars,
}

impl<T: Scalar> ScVae<T> {
    /// Fresh model with seeded weights and ISTA-equivalent LISTA.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dict = build_dct_dictionary(config.latent_dim, config.dict_atoms)?;
        let lista = lista_init_from_dictionary(&dict, config.alpha, config.lista_steps)?;
        Self::with_parts(config, dict, lista, seed)
    }

    /// Model around an existing dictionary and LISTA parameters.
    pub fn with_parts(config: ModelConfig, dict: Dictionary, lista: ListaParams<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        if dict.dim() != config.latent_dim || dict.atom_count() != config.dict_atoms {
            return Err(Error::dim(
                "dictionary",
                dict.atoms().shape(),
                &[config.latent_dim, config.dict_atoms],
            ));
        }
        if lista.atom_count() != config.dict_atoms || lista.input_dim() != config.latent_dim {
            return Err(Error::dim(
                "lista",
                lista.w_e.shape(),
                &[config.dict_atoms, config.latent_dim],
            ));
        }
        let mut params = Vec::new();
        let mut b = Builder {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (c, base, mid, n) = (
            config.channels,
            config.base_channels,
            config.mid_channels,
            config.latent_dim,
        );
        let d = config.downsample_blocks;

        let mut encoder = vec![Layer::Conv(b.conv("encoder.conv_in", c, base, 3, 1))];
        let mut ch = base;
        for i in 0..d {
            encoder.push(Layer::Res(b.res(&format!("encoder.down{i}.res"), ch, ch)));
            let next = if i + 1 == d { mid } else { base };
            encoder.push(Layer::Conv(b.conv(&format!("encoder.down{i}.conv"), ch, next, 3, 2)));
            ch = next;
        }
        encoder.push(Layer::Res(b.res("encoder.mid.res1", ch, ch)));
        if config.use_nonlocal {
            encoder.push(Layer::Attn(b.attn("encoder.mid.attn", ch)));
        }
        encoder.push(Layer::Res(b.res("encoder.mid.res2", ch, ch)));
        encoder.push(Layer::NormSwish(b.norm("encoder.norm_out", ch)));
        encoder.push(Layer::Conv(b.conv("encoder.conv_out", ch, n, 3, 1)));

        let top = if d == 0 { base } else { mid };
        let mut decoder = vec![Layer::Conv(b.conv("decoder.conv_in", n, top, 3, 1))];
        decoder.push(Layer::Res(b.res("decoder.mid.res1", top, top)));
        if config.use_nonlocal {
            decoder.push(Layer::Attn(b.attn("decoder.mid.attn", top)));
        }
        decoder.push(Layer::Res(b.res("decoder.mid.res2", top, top)));
        let mut ch = top;
        for i in 0..d {
            decoder.push(Layer::Res(b.res(&format!("decoder.up{i}.res"), ch, ch)));
            decoder.push(Layer::Upsample(b.conv(&format!("decoder.up{i}.conv"), ch, base, 3, 1)));
            ch = base;
        }
        decoder.push(Layer::Res(b.res("decoder.out.res", ch, ch)));
        decoder.push(Layer::NormSwish(b.norm("decoder.norm_out", ch)));
        decoder.push(Layer::Conv(b.conv("decoder.conv_out", ch, c, 3, 1)));

        Ok(ScVae {
            config,
            params,
            encoder,
            decoder,
            lista,
            dict,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    /// Encoder and decoder weights in a fixed order.
    pub fn named_params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn named_params_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.params
    }

    /// Zeroes every kernel, bias and norm affine parameter.
    #[cfg(test)]
    pub(crate) fn zero_weights(&mut self) {
        for (_, t) in &mut self.params {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Records all trainable parameters as leaves.
    pub fn register(&self, tape: &mut Tape<T>) -> Registered {
        Registered {
            params: self.params.iter().map(|(_, t)| tape.leaf(t)).collect(),
            lista: self.lista.register(tape),
        }
    }

    fn check_images(&self, tape: &Tape<T>, images: Var) -> Result<usize> {
        let s = tape.shape(images);
        let [c, h, w] = self.config.image_shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::dim("encode", s, &[0, c, h, w]));
        }
        Ok(s[0])
    }

    /// `[B, C, H, W]` images to latent rows `[B·h·w, n]`.
    pub fn encode_on(&self, tape: &mut Tape<T>, reg: &Registered, images: Var) -> Result<Var> {
        self.check_images(tape, images)?;
        let feat = run_layers(tape, reg, &self.encoder, images)?;
        tape.nchw_to_rows(feat)
    }

    /// Latent rows `[B·h·w, n]` to images `[B, C, H, W]`.
    pub fn decode_on(&self, tape: &mut Tape<T>, reg: &Registered, rows: Var) -> Result<Var> {
        let g = self.config.grid();
        let s = tape.shape(rows).to_vec();
        if s.len() != 2 || s[1] != self.config.latent_dim || !s[0].is_multiple_of(g * g) {
            return Err(Error::dim("decode", &s, &[g * g, self.config.latent_dim]));
        }
        let nchw = tape.rows_to_nchw(rows, s[0] / (g * g), g, g)?;
        run_layers(tape, reg, &self.decoder, nchw)
    }

    /// `Ẽ = Z·Dᵀ` on the tape; the dictionary enters as a constant.
    pub fn reconstruct_latents_on(&self, tape: &mut Tape<T>, codes: Var) -> Result<Var> {
        let atoms = self.dict.atoms_as::<T>();
        let d = tape.leaf(&atoms);
        tape.matmul_t(codes, d, false, true)
    }

    /// Full pass: encode, sparse code, latent reconstruction, decode.
    pub fn forward(&self, tape: &mut Tape<T>, reg: &Registered, images: Var) -> Result<Forward> {
        let latents = self.encode_on(tape, reg, images)?;
        let codes = reg.lista.forward(tape, latents)?;
        let recon_latents = self.reconstruct_latents_on(tape, codes)?;
        let output = self.decode_on(tape, reg, recon_latents)?;
        Ok(Forward {
            latents,
            codes,
            recon_latents,
            output,
        })
    }

    /// Records the total loss and returns its handle with the report.
    pub fn losses_on(&self, tape: &mut Tape<T>, images: Var, fwd: &Forward) -> Result<(Var, LossReport)> {
        let batch = tape.shape(images)[0];
        let g = self.config.grid();
        compute_losses(
            tape,
            images,
            fwd.output,
            fwd.latents,
            fwd.codes,
            &self.dict,
            self.config.alpha,
            g,
            g,
            batch,
        )
    }

    /// Encodes one `[C, H, W]` image.
    pub fn encode(&self, image: &Tensor<T>) -> Result<LatentGrid<T>> {
        let mut tape = Tape::new();
        let reg = self.register(&mut tape);
        let x = self.single_image(&mut tape, image)?;
        let rows = self.encode_on(&mut tape, &reg, x)?;
        let g = self.config.grid();
        Ok(LatentGrid {
            values: tape.to_tensor(rows).reshape(&[g, g, self.config.latent_dim])?,
            codes: None,
        })
    }

    fn single_image(&self, tape: &mut Tape<T>, image: &Tensor<T>) -> Result<Var> {
        let [c, h, w] = self.config.image_shape();
        if image.shape() != [c, h, w] {
            return Err(Error::dim("image", image.shape(), &[c, h, w]));
        }
        tape.constant(&[1, c, h, w], image.data().to_vec())
    }

    /// Decodes one `[h, w, n]` latent grid to a `[C, H, W]` image.
    pub fn decode(&self, latents: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.config.grid();
        let n = self.config.latent_dim;
        if latents.shape() != [g, g, n] {
            return Err(Error::dim("decode", latents.shape(), &[g, g, n]));
        }
        let mut tape = Tape::new();
        let reg = self.register(&mut tape);
        let rows = tape.constant(&[g * g, n], latents.data().to_vec())?;
        let out = self.decode_on(&mut tape, &reg, rows)?;
        tape.to_tensor(out).reshape(&self.config.image_shape())
    }

    /// Encode, sparse code, reconstruct latents and decode one image.
    /// Returns the reconstruction and the populated latent grid.
    pub fn reconstruct(&self, image: &Tensor<T>) -> Result<(Tensor<T>, LatentGrid<T>)> {
        let mut tape = Tape::new();
        let reg = self.register(&mut tape);
        let x = self.single_image(&mut tape, image)?;
        let fwd = self.forward(&mut tape, &reg, x)?;
        let (g, n, k) = (self.config.grid(), self.config.latent_dim, self.config.dict_atoms);
        let grid = LatentGrid {
            values: tape.to_tensor(fwd.latents).reshape(&[g, g, n])?,
            codes: Some(tape.to_tensor(fwd.codes).reshape(&[g, g, k])?),
        };
        let out = tape.to_tensor(fwd.output).reshape(&self.config.image_shape())?;
        Ok((out, grid))
    }
}

// Padded convolutions mirror the border instead of zero filling it, so a
// texture touching the frame codes like its interior.
fn conv_on<T: Scalar>(tape: &mut Tape<T>, reg: &Registered, c: &Conv, x: Var) -> Result<Var> {
    let x = tape.reflect_pad(x, c.pad)?;
    let y = tape.conv2d(x, reg.params[c.weight], c.stride, 0)?;
    tape.channel_bias(y, reg.params[c.bias])
}

fn norm_swish<T: Scalar>(tape: &mut Tape<T>, reg: &Registered, n: &Norm, x: Var) -> Result<Var> {
    let y = tape.group_norm(x, n.groups, reg.params[n.gamma], reg.params[n.beta], NORM_EPS)?;
    tape.swish(y)
}

fn run_layers<T: Scalar>(tape: &mut Tape<T>, reg: &Registered, layers: &[Layer], mut x: Var) -> Result<Var> {
    for layer in layers {
        x = match layer {
            Layer::Conv(c) => conv_on(tape, reg, c, x)?,
            Layer::NormSwish(n) => norm_swish(tape, reg, n, x)?,
            Layer::Upsample(c) => {
                let up = tape.upsample2x(x)?;
                conv_on(tape, reg, c, up)?
            }
            Layer::Res(r) => {
                let h = norm_swish(tape, reg, &r.norm1, x)?;
                let h = conv_on(tape, reg, &r.conv1, h)?;
                let h = norm_swish(tape, reg, &r.norm2, h)?;
                let h = conv_on(tape, reg, &r.conv2, h)?;
                let skip = match &r.skip {
                    Some(c) => conv_on(tape, reg, c, x)?,
                    None => x,
                };
                tape.add(skip, h)?
            }
            Layer::Attn(a) => attention(tape, reg, a, x)?,
        };
    }
    Ok(x)
}

fn attention<T: Scalar>(tape: &mut Tape<T>, reg: &Registered, a: &Attention, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let h = tape.group_norm(
        x,
        a.norm.groups,
        reg.params[a.norm.gamma],
        reg.params[a.norm.beta],
        NORM_EPS,
    )?;
    let q = conv_on(tape, reg, &a.q, h)?;
    let k = conv_on(tape, reg, &a.k, h)?;
    let v = conv_on(tape, reg, &a.v, h)?;
    let q = tape.reshape(q, &[b, c, hw])?;
    let k = tape.reshape(k, &[b, c, hw])?;
    let v = tape.reshape(v, &[b, c, hw])?;
    // scores[i, j] = q_i · k_j over channels
    let scores = tape.bmm(q, k, true, false)?;
    let scores = tape.scale(scores, T::lit(1.0 / (c as f64).sqrt()))?;
    let attn = tape.softmax(scores)?;
    let out = tape.bmm(v, attn, false, true)?;
    let out = tape.reshape(out, &s)?;
    let out = conv_on(tape, reg, &a.proj, out)?;
    tape.add(x, out)
}

/// Records `L_rec`, `L_latent` and the total `L_rec + L_latent/(h·w)`.
///
/// `images`/`reconstruction` are `[B, C, H, W]`, `latents` and `codes` are
/// row-major `[B·h·w, n]` and `[B·h·w, K]`. Both terms are sums within a
/// sample and means over the batch. The report is assembled in `f64` from
/// the recorded `rec` and `latent` values.
#[allow(clippy::too_many_arguments)]
pub fn compute_losses<T: Scalar>(
    tape: &mut Tape<T>,
    images: Var,
    reconstruction: Var,
    latents: Var,
    codes: Var,
    dict: &Dictionary,
    alpha: f64,
    h: usize,
    w: usize,
    batch: usize,
) -> Result<(Var, LossReport)> {
    let (sl, sc) = (tape.shape(latents).to_vec(), tape.shape(codes).to_vec());
    if sl.len() != 2 || sc.len() != 2 || sl[0] != sc[0] || sl[0] != batch * h * w {
        return Err(Error::dim("compute_losses", &sl, &sc));
    }
    if sl[1] != dict.dim() || sc[1] != dict.atom_count() {
        return Err(Error::dim("compute_losses", &sc, dict.atoms().shape()));
    }
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let inv_b = T::lit(1.0 / batch as f64);

    let diff = tape.sub(reconstruction, images)?;
    let rec = tape.sum_squares(diff)?;
    let rec = tape.scale(rec, inv_b)?;

    let atoms = dict.atoms_as::<T>();
    let d = tape.leaf(&atoms);
    let dz = tape.matmul_t(codes, d, false, true)?;
    let resid = tape.sub(latents, dz)?;
    let fit = tape.sum_squares(resid)?;
    let abs = tape.abs(codes)?;
    let l1 = tape.sum(abs)?;
    let l1 = tape.scale(l1, T::lit(alpha))?;
    let latent = tape.add(fit, l1)?;
    let latent = tape.scale(latent, inv_b)?;

    let weighted = tape.scale(latent, T::lit(1.0 / (h * w) as f64))?;
    let total = tape.add(rec, weighted)?;

    let rec_v = tape.item(rec).to_f64().unwrap_or(f64::NAN);
    let latent_v = tape.item(latent).to_f64().unwrap_or(f64::NAN);
    for (name, v) in [("rec", rec_v), ("latent", latent_v)] {
        if !v.is_finite() {
            return Err(Error::numerical("compute_losses", format!("{name} loss is {v}")));
        }
    }
    let k = sc[1];
    let code_vals: Vec<f64> = tape.value(codes).iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
    let hoyer = if k >= 2 {
        code_vals
            .chunks_exact(k)
            .map(|z| hoyer_sparsity(z).unwrap_or(1.0))
            .sum::<f64>()
            / sc[0] as f64
    } else {
        1.0
    };
    Ok((
        total,
        LossReport {
            rec: rec_v,
            latent: latent_v,
            total: rec_v + latent_v / (h * w) as f64,
            sparsity_hoyer: hoyer,
        },
    ))
}

/// Per-cell LISTA codes for an `[h, w, n]` latent grid.
pub fn sparse_code_grid<T: Scalar>(latents: &LatentGrid<T>, params: &ListaParams<T>) -> Result<LatentGrid<T>> {
    let s = latents.values.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("latent grid must be [h, w, n], got {s:?}")));
    }
    let rows = latents.values.clone().reshape(&[s[0] * s[1], s[2]])?;
    let codes = crate::solvers::lista_batch_forward(params, &rows)?;
    let k = params.atom_count();
    Ok(LatentGrid {
        values: latents.values.clone(),
        codes: Some(codes.reshape(&[s[0], s[1], k])?),
    })
}

/// `Ẽ_ij = Z_ij·Dᵀ` for an `[h, w, K]` code grid.
pub fn reconstruct_latents<T: Scalar>(codes: &Tensor<T>, dict: &Dictionary) -> Result<Tensor<T>> {
    let s = codes.shape();
    if s.len() != 3 || s[2] != dict.atom_count() {
        return Err(Error::dim("reconstruct_latents", s, dict.atoms().shape()));
    }
    let rows = codes.clone().reshape(&[s[0] * s[1], s[2]])?;
    let dt = dict.atoms_as::<T>().transpose()?;
    rows.matmul(&dt)?.reshape(&[s[0], s[1], dict.dim()])
}
