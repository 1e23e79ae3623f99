//! Reference text encoder and masked-token pretraining.
//!
//! Each token is represented by the mean embedding of its hashed character
//! 3..5-grams plus a whole-word feature. A learned, position-weighted average
//! over a window of radius `w` mixes in context, and a `tanh` projection gives
//! the token state `h_i`. The article state is `tanh(A · mean(h) + a)`.
//!
//! The [`TextEncoder`] trait is the seam the detector depends on; any encoder
//! that can produce per-token and article vectors and backpropagate into its
//! own parameters can replace the reference one.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, TensorReader};
use crate::corpus::{tokenize, Article, Token, TokenSeq};
use crate::error::{Error, Result};
use crate::nn::{self, Matrix, Optimizer, OptimizerKind};

/// Surface form substituted for masked tokens.
pub const MASK_TOKEN: &str = "[MASK]";

const ENCODER_MAGIC: &[u8; 4] = b"EVTE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden size `d`.
    pub dim: usize,
    /// Context window radius `w`.
    pub window: usize,
    /// Hash vocabulary size.
    pub vocab: usize,
    /// Maximum number of tokens encoded.
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 128,
            window: 2,
            vocab: 32768,
            max_len: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.vocab < 2 || self.max_len == 0 {
            return Err(Error::Invalid(format!("bad encoder config {self:?}")));
        }
        Ok(())
    }
}

/// Per-token states and the article state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub article_repr: Vec<f64>,
    pub token_reprs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// `vocab × d`
    pub embed: Matrix,
    /// Position weights for offsets `-w..=w`.
    pub mix: Vec<f64>,
    /// `d × d`
    pub proj: Matrix,
    pub proj_bias: Vec<f64>,
    /// `d × d`, article transform
    pub cls: Matrix,
    pub cls_bias: Vec<f64>,
    /// `d × vocab`, masked-token output layer
    pub mlm_out: Matrix,
    pub mlm_bias: Vec<f64>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashed identity of a token, the masked-token prediction target.
pub fn token_id(surface: &str, vocab: usize) -> usize {
    let mut buf = Vec::with_capacity(surface.len() + 2);
    buf.extend_from_slice(b"w:");
    buf.extend_from_slice(surface.as_bytes());
    (fnv1a(&buf) % vocab as u64) as usize
}

/// Hashed character 3..5-grams of `<surface>` (lowercased) plus the word id.
pub fn token_features(surface: &str, vocab: usize) -> Vec<usize> {
    let chars: Vec<char> = std::iter::once('<')
        .chain(surface.chars().flat_map(char::to_lowercase))
        .chain(std::iter::once('>'))
        .collect();
    let mut out = vec![token_id(surface, vocab)];
    let mut buf = String::new();
    for n in 3..=5 {
        if chars.len() < n {
            break;
        }
        for win in chars.windows(n) {
            buf.clear();
            buf.push_str("g:");
            buf.extend(win.iter());
            out.push((fnv1a(buf.as_bytes()) % vocab as u64) as usize);
        }
    }
    out
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    feats: Vec<Vec<usize>>,
    e: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    pub(crate) h: Vec<Vec<f64>>,
    mean: Vec<f64>,
    pub(crate) cls: Vec<f64>,
}

impl Forward {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn output(&self) -> EncoderOutput {
        EncoderOutput {
            article_repr: self.cls.clone(),
            token_reprs: self.h.clone(),
        }
    }
}

/// Gradients for [`EncoderParams`]; the embedding gradient is row-sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub embed: BTreeMap<usize, Vec<f64>>,
    pub mix: Vec<f64>,
    pub proj: Matrix,
    pub proj_bias: Vec<f64>,
    pub cls: Matrix,
    pub cls_bias: Vec<f64>,
    pub mlm_out: Option<Matrix>,
    pub mlm_bias: Option<Vec<f64>>,
}

impl EncoderGrads {
    pub fn zeros(config: &EncoderConfig, with_mlm: bool) -> Self {
        let d = config.dim;
        EncoderGrads {
            embed: BTreeMap::new(),
            mix: vec![0.0; 2 * config.window + 1],
            proj: Matrix::zeros(d, d),
            proj_bias: vec![0.0; d],
            cls: Matrix::zeros(d, d),
            cls_bias: vec![0.0; d],
            mlm_out: with_mlm.then(|| Matrix::zeros(d, config.vocab)),
            mlm_bias: with_mlm.then(|| vec![0.0; config.vocab]),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for row in self.embed.values_mut() {
            row.iter_mut().for_each(|v| *v *= s);
        }
        for v in self.dense_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn dense_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.mix,
            &mut self.proj.data,
            &mut self.proj_bias,
            &mut self.cls.data,
            &mut self.cls_bias,
        ];
        if let Some(m) = self.mlm_out.as_mut() {
            out.push(&mut m.data);
        }
        if let Some(b) = self.mlm_bias.as_mut() {
            out.push(b);
        }
        out
    }

    fn dense(&self) -> Vec<Option<&[f64]>> {
        vec![
            Some(&self.mix),
            Some(&self.proj.data),
            Some(&self.proj_bias),
            Some(&self.cls.data),
            Some(&self.cls_bias),
            self.mlm_out.as_ref().map(|m| m.data.as_slice()),
            self.mlm_bias.as_deref(),
        ]
    }

    /// Dense view in the order of [`EncoderParams::named_params_mut`].
    pub fn to_dense(&self, config: &EncoderConfig) -> Vec<(&'static str, Vec<f64>)> {
        let d = config.dim;
        let mut embed = vec![0.0; config.vocab * d];
        for (&r, g) in &self.embed {
            embed[r * d..(r + 1) * d].copy_from_slice(g);
        }
        vec![
            ("embed", embed),
            ("mix", self.mix.clone()),
            ("proj", self.proj.data.clone()),
            ("proj_bias", self.proj_bias.clone()),
            ("cls", self.cls.data.clone()),
            ("cls_bias", self.cls_bias.clone()),
            (
                "mlm_out",
                self.mlm_out
                    .as_ref()
                    .map(|m| m.data.clone())
                    .unwrap_or_else(|| vec![0.0; d * config.vocab]),
            ),
            (
                "mlm_bias",
                self.mlm_bias
                    .clone()
                    .unwrap_or_else(|| vec![0.0; config.vocab]),
            ),
        ]
    }
}

/// What the detector needs from an encoder.
pub trait TextEncoder {
    type Cache;
    type Grads;

    fn dim(&self) -> usize;
    fn max_len(&self) -> usize;
    /// Encode an already tokenized, non-empty sequence.
    fn forward(&self, toks: &TokenSeq) -> Result<(EncoderOutput, Self::Cache)>;
    /// Accumulate parameter gradients given upstream gradients of the outputs.
    fn backward(
        &self,
        cache: &Self::Cache,
        d_tokens: &[Vec<f64>],
        d_article: &[f64],
        grads: &mut Self::Grads,
    );
}

impl EncoderParams {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let w = config.window as i64;
        Ok(EncoderParams {
            config,
            embed: Matrix::uniform(config.vocab, d, 1.0, &mut rng),
            mix: (-w..=w).map(|o| 1.0 / (1.0 + o.abs() as f64)).collect(),
            proj: Matrix::glorot(d, d, &mut rng),
            proj_bias: vec![0.0; d],
            cls: Matrix::glorot(d, d, &mut rng),
            cls_bias: vec![0.0; d],
            mlm_out: Matrix::uniform(d, config.vocab, 0.01, &mut rng),
            mlm_bias: vec![0.0; config.vocab],
        })
    }

    /// Every parameter tensor by name, in a fixed order.
    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("embed", &mut self.embed.data),
            ("mix", &mut self.mix),
            ("proj", &mut self.proj.data),
            ("proj_bias", &mut self.proj_bias),
            ("cls", &mut self.cls.data),
            ("cls_bias", &mut self.cls_bias),
            ("mlm_out", &mut self.mlm_out.data),
            ("mlm_bias", &mut self.mlm_bias),
        ]
    }

    fn dense_params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.mix,
            &mut self.proj.data,
            &mut self.proj_bias,
            &mut self.cls.data,
            &mut self.cls_bias,
            &mut self.mlm_out.data,
            &mut self.mlm_bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.embed.is_finite()
            && self.proj.is_finite()
            && self.cls.is_finite()
            && self.mlm_out.is_finite()
            && self
                .mix
                .iter()
                .chain(&self.proj_bias)
                .chain(&self.cls_bias)
                .chain(&self.mlm_bias)
                .all(|v| v.is_finite())
    }

    /// Apply one optimiser step. Slots `base..base+8` of `opt` are used.
    pub(crate) fn apply(
        &mut self,
        grads: &EncoderGrads,
        opt: &mut Optimizer,
        base: usize,
        lr: f64,
    ) {
        opt.update_rows(
            base,
            lr,
            &mut self.embed,
            grads.embed.iter().map(|(&r, g)| (r, g.as_slice())),
        );
        for (i, (p, g)) in self
            .dense_params_mut()
            .into_iter()
            .zip(grads.dense())
            .enumerate()
        {
            if let Some(g) = g {
                opt.update(base + 1 + i, lr, p, g);
            }
        }
    }

    pub fn forward_surfaces(&self, surfaces: &[&str]) -> Forward {
        let cfg = &self.config;
        let d = cfg.dim;
        let n = surfaces.len().min(cfg.max_len);
        let feats: Vec<Vec<usize>> = surfaces[..n]
            .iter()
            .map(|s| token_features(s, cfg.vocab))
            .collect();
        let e: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| {
                let mut v = vec![0.0; d];
                for &id in f {
                    nn::axpy(1.0, self.embed.row(id), &mut v);
                }
                let inv = 1.0 / f.len() as f64;
                v.iter_mut().for_each(|x| *x *= inv);
                v
            })
            .collect();
        let w = cfg.window;
        let mut c = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i.saturating_sub(w);
            let hi = (i + w).min(n - 1);
            let inv = 1.0 / (hi - lo + 1) as f64;
            let mut ci = vec![0.0; d];
            for (j, ej) in e.iter().enumerate().take(hi + 1).skip(lo) {
                let wgt = self.mix[j + w - i] * inv;
                nn::axpy(wgt, ej, &mut ci);
            }
            let mut hi_v = self.proj.affine(&ci, &self.proj_bias);
            hi_v.iter_mut().for_each(|x| *x = x.tanh());
            c.push(ci);
            h.push(hi_v);
        }
        let mut mean = vec![0.0; d];
        for hi in &h {
            nn::axpy(1.0 / n.max(1) as f64, hi, &mut mean);
        }
        let mut cls = self.cls.affine(&mean, &self.cls_bias);
        cls.iter_mut().for_each(|x| *x = x.tanh());
        Forward {
            feats,
            e,
            c,
            h,
            mean,
            cls,
        }
    }

    /// Backpropagate `d_h` (per token) and `d_cls` into `grads`.
    pub fn backward_into(
        &self,
        fw: &Forward,
        d_h: &[Vec<f64>],
        d_cls: &[f64],
        grads: &mut EncoderGrads,
    ) {
        let cfg = &self.config;
        let d = cfg.dim;
        let n = fw.h.len();
        let w = cfg.window;

        // article transform
        let g_cls: Vec<f64> = d_cls
            .iter()
            .zip(&fw.cls)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        grads.cls.add_outer(&g_cls, &fw.mean);
        nn::axpy(1.0, &g_cls, &mut grads.cls_bias);
        let mut d_mean = vec![0.0; d];
        self.cls.add_transpose_mul(&g_cls, &mut d_mean);

        let mut d_e = vec![vec![0.0; d]; n];
        let inv_n = 1.0 / n as f64;
        let mut g = vec![0.0; d];
        let mut d_c = vec![0.0; d];
        for i in 0..n {
            for k in 0..d {
                let dh = d_h[i][k] + d_mean[k] * inv_n;
                let y = fw.h[i][k];
                g[k] = dh * (1.0 - y * y);
            }
            grads.proj.add_outer(&g, &fw.c[i]);
            nn::axpy(1.0, &g, &mut grads.proj_bias);
            d_c.iter_mut().for_each(|x| *x = 0.0);
            self.proj.add_transpose_mul(&g, &mut d_c);

            let lo = i.saturating_sub(w);
            let hi = (i + w).min(n - 1);
            let inv = 1.0 / (hi - lo + 1) as f64;
            for j in lo..=hi {
                let slot = j + w - i;
                grads.mix[slot] += nn::dot(&d_c, &fw.e[j]) * inv;
                nn::axpy(self.mix[slot] * inv, &d_c, &mut d_e[j]);
            }
        }
        for (f, de) in fw.feats.iter().zip(&d_e) {
            let inv = 1.0 / f.len() as f64;
            for &id in f {
                let row = grads.embed.entry(id).or_insert_with(|| vec![0.0; d]);
                nn::axpy(inv, de, row);
            }
        }
    }

    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        container::write(w, ENCODER_MAGIC, &self.config, &self.tensors())
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let (config, tensors): (EncoderConfig, _) = container::read(r, ENCODER_MAGIC)?;
        let mut rd = TensorReader::new(tensors);
        let p = Self::from_tensors(config, &mut rd)?;
        rd.finish()?;
        Ok(p)
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        self.save(&mut f)?;
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f =
            std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
        Self::load(&mut f)
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.embed.data,
            &self.mix,
            &self.proj.data,
            &self.proj_bias,
            &self.cls.data,
            &self.cls_bias,
            &self.mlm_out.data,
            &self.mlm_bias,
        ]
    }

    pub(crate) fn from_tensors(config: EncoderConfig, rd: &mut TensorReader) -> Result<Self> {
        config.validate()?;
        let (d, v) = (config.dim, config.vocab);
        let mat = |rows, cols, data| Matrix { rows, cols, data };
        Ok(EncoderParams {
            config,
            embed: mat(v, d, rd.next("embed", v * d)?),
            mix: rd.next("mix", 2 * config.window + 1)?,
            proj: mat(d, d, rd.next("proj", d * d)?),
            proj_bias: rd.next("proj_bias", d)?,
            cls: mat(d, d, rd.next("cls", d * d)?),
            cls_bias: rd.next("cls_bias", d)?,
            mlm_out: mat(d, v, rd.next("mlm_out", d * v)?),
            mlm_bias: rd.next("mlm_bias", v)?,
        })
    }
}

impl TextEncoder for EncoderParams {
    type Cache = Forward;
    type Grads = EncoderGrads;

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn forward(&self, toks: &TokenSeq) -> Result<(EncoderOutput, Forward)> {
        if toks.is_empty() {
            return Err(Error::Invalid(
                "cannot encode an empty token sequence".into(),
            ));
        }
        let surfaces: Vec<&str> = toks.surfaces().collect();
        let fw = self.forward_surfaces(&surfaces);
        Ok((fw.output(), fw))
    }

    fn backward(
        &self,
        cache: &Forward,
        d_tokens: &[Vec<f64>],
        d_article: &[f64],
        grads: &mut EncoderGrads,
    ) {
        self.backward_into(cache, d_tokens, d_article, grads)
    }
}

/// Encode a token sequence, truncating to `max_len`.
pub fn encode(params: &EncoderParams, toks: &TokenSeq) -> Result<EncoderOutput> {
    params.forward(toks).map(|(out, _)| out)
}

/// Which positions were masked and what stood there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub positions: Vec<usize>,
    pub originals: Vec<String>,
    pub rate: f64,
}

/// Replace `round(rate · n)` (at least one) distinct tokens with [`MASK_TOKEN`].
pub fn mask_tokens<R: Rng>(
    toks: &TokenSeq,
    rate: f64,
    rng: &mut R,
) -> Result<(TokenSeq, MaskingPlan)> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Invalid(format!("mask rate {rate} not in (0, 1]")));
    }
    let n = toks.len();
    let count = if n == 0 {
        0
    } else {
        ((rate * n as f64).round() as usize).clamp(1, n)
    };
    let mut positions = index::sample(rng, n, count).into_vec();
    positions.sort_unstable();
    let mut masked = toks.clone();
    let mut originals = Vec::with_capacity(count);
    for &p in &positions {
        let t: &mut Token = &mut masked.tokens[p];
        originals.push(std::mem::replace(&mut t.surface, MASK_TOKEN.to_string()));
    }
    Ok((
        masked,
        MaskingPlan {
            positions,
            originals,
            rate,
        },
    ))
}

fn check_plan(params: &EncoderParams, masked: &TokenSeq, plan: &MaskingPlan) -> Result<usize> {
    if plan.positions.is_empty() {
        return Err(Error::Invalid(
            "masked-token loss needs at least one masked position".into(),
        ));
    }
    let len = masked.len().min(params.config.max_len);
    if let Some(&p) = plan.positions.iter().find(|&&p| p >= len) {
        return Err(Error::Invalid(format!(
            "masked position {p} beyond encoded length {len}"
        )));
    }
    if plan.positions.len() != plan.originals.len() {
        return Err(Error::Invalid(
            "masking plan positions/originals differ in length".into(),
        ));
    }
    Ok(len)
}

/// Logits over the hash vocabulary for one token state.
pub fn mlm_logits(params: &EncoderParams, h: &[f64]) -> Vec<f64> {
    let mut logits = params.mlm_bias.clone();
    params.mlm_out.add_transpose_mul(h, &mut logits);
    logits
}

/// Mean cross-entropy of the hashed original identities at masked positions.
pub fn mlm_loss(params: &EncoderParams, masked: &TokenSeq, plan: &MaskingPlan) -> Result<f64> {
    check_plan(params, masked, plan)?;
    let surfaces: Vec<&str> = masked.surfaces().collect();
    let fw = params.forward_surfaces(&surfaces);
    let v = params.config.vocab;
    let total: f64 = plan
        .positions
        .iter()
        .zip(&plan.originals)
        .map(|(&p, orig)| {
            let logits = mlm_logits(params, &fw.h[p]);
            nn::log_sum_exp(&logits) - logits[token_id(orig, v)]
        })
        .sum();
    Ok(total / plan.positions.len() as f64)
}

/// [`mlm_loss`] with its gradient accumulated into `grads` (scaled by `scale`).
pub fn mlm_loss_and_grad_into(
    params: &EncoderParams,
    masked: &TokenSeq,
    plan: &MaskingPlan,
    scale: f64,
    grads: &mut EncoderGrads,
) -> Result<f64> {
    check_plan(params, masked, plan)?;
    let cfg = &params.config;
    let surfaces: Vec<&str> = masked.surfaces().collect();
    let fw = params.forward_surfaces(&surfaces);
    let m = plan.positions.len() as f64;
    let mut d_h = vec![vec![0.0; cfg.dim]; fw.len()];
    let mut probs = vec![0.0; cfg.vocab];
    let mut total = 0.0;
    let mlm_out = grads
        .mlm_out
        .get_or_insert_with(|| Matrix::zeros(cfg.dim, cfg.vocab));
    let mlm_bias = grads.mlm_bias.get_or_insert_with(|| vec![0.0; cfg.vocab]);
    for (&p, orig) in plan.positions.iter().zip(&plan.originals) {
        let logits = mlm_logits(params, &fw.h[p]);
        let target = token_id(orig, cfg.vocab);
        total += nn::log_sum_exp(&logits) - logits[target];
        nn::softmax_into(&logits, &mut probs);
        probs[target] -= 1.0;
        probs.iter_mut().for_each(|x| *x *= scale / m);
        mlm_out.add_outer(&fw.h[p], &probs);
        nn::axpy(1.0, &probs, mlm_bias);
        for (k, dh) in d_h[p].iter_mut().enumerate() {
            *dh += nn::dot(params.mlm_out.row(k), &probs);
        }
    }
    let d_cls = vec![0.0; cfg.dim];
    params.backward_into(&fw, &d_h, &d_cls, grads);
    Ok(total / m)
}

/// Masked-token loss and its full gradient.
pub fn mlm_loss_and_grad(
    params: &EncoderParams,
    masked: &TokenSeq,
    plan: &MaskingPlan,
) -> Result<(f64, EncoderGrads)> {
    let mut grads = EncoderGrads::zeros(&params.config, true);
    let loss = mlm_loss_and_grad_into(params, masked, plan, 1.0, &mut grads)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.05,
            mask_rate: 0.15,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainReport {
    /// Mean masked-token loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Domain adaptation: mini-batch descent on the masked-token loss.
///
/// Documents are shuffled every epoch and re-masked on every visit. The
/// learning rate decays linearly to zero over the run.
pub fn pretrain(
    params: &EncoderParams,
    corpus: &[Article],
    config: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(EncoderParams, PretrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Invalid("pretraining corpus is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let docs: Vec<TokenSeq> = corpus
        .iter()
        .map(|a| tokenize(&a.title, &a.text).map(|t| t.truncated(params.config.max_len)))
        .collect::<Result<_>>()?;
    let mut params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer);
    let steps_per_epoch = docs.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut step = 0;
    let mut report = PretrainReport {
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    let mut order: Vec<usize> = (0..docs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = EncoderGrads::zeros(&params.config, true);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (masked, plan) = mask_tokens(&docs[i], config.mask_rate, &mut rng)?;
                let loss = mlm_loss_and_grad_into(&params, &masked, &plan, scale, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "masked-token loss diverged at epoch {} on document {:?}",
                        epoch + 1,
                        corpus[i].id
                    )));
                }
                epoch_loss += loss;
            }
            opt.begin_step();
            let lr = nn::linear_decay(config.learning_rate, step, total_steps);
            params.apply(&grads, &mut opt, 0, lr);
            step += 1;
        }
        let mean = epoch_loss / docs.len() as f64;
        if !params.is_finite() {
            return Err(Error::Numeric(format!(
                "parameters diverged at epoch {}",
                epoch + 1
            )));
        }
        on_epoch(epoch + 1, mean);
        report.epoch_losses.push(mean);
    }
    Ok((params, report))
}
