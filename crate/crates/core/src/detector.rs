//! Bi-level event detector.
//!
//! The low-level head scores every token against the `K + 1` labels. The
//! high-level head sees the whole padded score matrix (raw, row-major)
//! concatenated with the article state and emits `K` independent logits.
//! Both heads and the encoder are trained jointly on the sum of the two
//! losses.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, TensorReader};
use crate::corpus::{
    project_labels, tokenize, Article, EventType, Label, LabelSequence, LabelSet, LabeledArticle,
    TokenSeq,
};
use crate::encoder::{EncoderConfig, EncoderGrads, EncoderOutput, EncoderParams};
use crate::error::{Error, Result};
use crate::nn::{self, Matrix, Optimizer, OptimizerKind};

const MODEL_MAGIC: &[u8; 4] = b"EVTM";

/// How token-level and article-level detections are merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    #[default]
    Union,
    HighOnly,
    LowOnly,
    Intersection,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(CombineMode::Union),
            "high-only" => Ok(CombineMode::HighOnly),
            "low-only" => Ok(CombineMode::LowOnly),
            "intersection" => Ok(CombineMode::Intersection),
            _ => Err(Error::Invalid(format!("unknown combination mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Hidden units in each head.
    pub hidden: usize,
    pub threshold: f64,
    pub combine: CombineMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hidden: 2048,
            threshold: 0.5,
            combine: CombineMode::Union,
        }
    }
}

/// Hidden layer + output layer. Also used as its own gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Head {
    fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Head {
            w1: Matrix::glorot(hidden, input, rng),
            b1: vec![0.0; hidden],
            w2: Matrix::glorot(output, hidden, rng),
            b2: vec![0.0; output],
        }
    }

    fn zeros_like(other: &Head) -> Self {
        Head {
            w1: Matrix::zeros(other.w1.rows, other.w1.cols),
            b1: vec![0.0; other.b1.len()],
            w2: Matrix::zeros(other.w2.rows, other.w2.cols),
            b2: vec![0.0; other.b2.len()],
        }
    }

    /// Returns `(hidden activation, output)`.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut a = self.w1.affine(x, &self.b1);
        nn::relu(&mut a);
        let out = self.w2.affine(&a, &self.b2);
        (a, out)
    }

    /// Accumulates parameter gradients into `grads`, adds `dL/dx` into `dx`.
    fn backward(
        &self,
        x: &[f64],
        a: &[f64],
        d_out: &[f64],
        grads: &mut Head,
        dx: Option<&mut [f64]>,
    ) {
        grads.w2.add_outer(d_out, a);
        nn::axpy(1.0, d_out, &mut grads.b2);
        let mut da = vec![0.0; a.len()];
        self.w2.add_transpose_mul(d_out, &mut da);
        for (g, &act) in da.iter_mut().zip(a) {
            if act <= 0.0 {
                *g = 0.0;
            }
        }
        grads.w1.add_outer(&da, x);
        nn::axpy(1.0, &da, &mut grads.b1);
        if let Some(dx) = dx {
            self.w1.add_transpose_mul(&da, dx);
        }
    }

    fn named_mut<'a>(&'a mut self, prefix: &'static str) -> Vec<(String, &'a mut [f64])> {
        vec![
            (format!("{prefix}.w1"), &mut self.w1.data[..]),
            (format!("{prefix}.b1"), &mut self.b1[..]),
            (format!("{prefix}.w2"), &mut self.w2.data[..]),
            (format!("{prefix}.b2"), &mut self.b2[..]),
        ]
    }

    fn slices(&self) -> [&[f64]; 4] {
        [&self.w1.data, &self.b1, &self.w2.data, &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }

    fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn read(
        rd: &mut TensorReader,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Head> {
        Ok(Head {
            w1: Matrix {
                rows: hidden,
                cols: input,
                data: rd.next(&format!("{name}.w1"), hidden * input)?,
            },
            b1: rd.next(&format!("{name}.b1"), hidden)?,
            w2: Matrix {
                rows: output,
                cols: hidden,
                data: rd.next(&format!("{name}.w2"), output * hidden)?,
            },
            b2: rd.next(&format!("{name}.b2"), output)?,
        })
    }
}

/// Low-level scores, zero-padded to `max_len` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub max_len: usize,
    /// `K + 1`
    pub width: usize,
    pub actual_len: usize,
    /// Row-major `max_len × width`.
    pub scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn zeros(max_len: usize, width: usize, actual_len: usize) -> Self {
        ScoreMatrix {
            max_len,
            width,
            actual_len,
            scores: vec![0.0; max_len * width],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.scores[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub encoder: EncoderParams,
    /// `d → H → K+1`
    pub low: Head,
    /// `max_len·(K+1) + d → H → K`
    pub high: Head,
    pub label_set: LabelSet,
    pub threshold: f64,
    pub combine: CombineMode,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    encoder: EncoderConfig,
    hidden: usize,
    label_set: LabelSet,
    threshold: f64,
    combine: CombineMode,
}

impl DetectorModel {
    pub fn new(
        encoder: EncoderParams,
        label_set: LabelSet,
        config: &DetectorConfig,
        seed: u64,
    ) -> Result<Self> {
        check_threshold(config.threshold)?;
        if config.hidden == 0 {
            return Err(Error::Invalid("hidden size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de7e_c70e);
        let d = encoder.config.dim;
        let width = label_set.len();
        let high_in = encoder.config.max_len * width + d;
        Ok(DetectorModel {
            low: Head::new(d, config.hidden, width, &mut rng),
            high: Head::new(high_in, config.hidden, label_set.num_events(), &mut rng),
            encoder,
            label_set,
            threshold: config.threshold,
            combine: config.combine,
        })
    }

    pub fn max_len(&self) -> usize {
        self.encoder.config.max_len
    }

    pub fn hidden(&self) -> usize {
        self.low.b1.len()
    }

    /// Length of the high-level head's input vector.
    pub fn high_input_len(&self) -> usize {
        self.max_len() * self.label_set.len() + self.encoder.config.dim
    }

    /// Every parameter tensor by name, in a fixed order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = self
            .encoder
            .named_params_mut()
            .into_iter()
            .map(|(n, s)| (format!("encoder.{n}"), s))
            .collect();
        out.extend(self.low.named_mut("low"));
        out.extend(self.high.named_mut("high"));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.low.is_finite() && self.high.is_finite()
    }

    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let header = ModelHeader {
            encoder: self.encoder.config,
            hidden: self.hidden(),
            label_set: self.label_set.clone(),
            threshold: self.threshold,
            combine: self.combine,
        };
        let mut tensors = self.encoder.tensors();
        tensors.extend(self.low.slices());
        tensors.extend(self.high.slices());
        container::write(w, MODEL_MAGIC, &header, &tensors)
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let (h, tensors): (ModelHeader, _) = container::read(r, MODEL_MAGIC)?;
        check_threshold(h.threshold).map_err(|e| Error::Format(e.to_string()))?;
        let mut rd = TensorReader::new(tensors);
        let encoder = EncoderParams::from_tensors(h.encoder, &mut rd)?;
        let width = h.label_set.len();
        let d = h.encoder.dim;
        let low = Head::read(&mut rd, "low", d, h.hidden, width)?;
        let high = Head::read(
            &mut rd,
            "high",
            h.encoder.max_len * width + d,
            h.hidden,
            width - 1,
        )?;
        rd.finish()?;
        Ok(DetectorModel {
            encoder,
            low,
            high,
            label_set: h.label_set,
            threshold: h.threshold,
            combine: h.combine,
        })
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
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("threshold {t} not in (0, 1)")))
    }
}

/// Gradients of every detector parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGrads {
    pub encoder: EncoderGrads,
    pub low: Head,
    pub high: Head,
}

impl DetectorGrads {
    pub fn zeros(model: &DetectorModel) -> Self {
        DetectorGrads {
            encoder: EncoderGrads::zeros(&model.encoder.config, false),
            low: Head::zeros_like(&model.low),
            high: Head::zeros_like(&model.high),
        }
    }

    /// Dense view in the order of [`DetectorModel::named_params_mut`].
    pub fn to_dense(&self, model: &DetectorModel) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = self
            .encoder
            .to_dense(&model.encoder.config)
            .into_iter()
            .map(|(n, v)| (format!("encoder.{n}"), v))
            .collect();
        for (prefix, head) in [("low", &self.low), ("high", &self.high)] {
            for (name, s) in ["w1", "b1", "w2", "b2"].iter().zip(head.slices()) {
                out.push((format!("{prefix}.{name}"), s.to_vec()));
            }
        }
        out
    }
}

fn check_dim(model: &DetectorModel, enc: &EncoderOutput) -> Result<()> {
    let d = model.encoder.config.dim;
    if enc.article_repr.len() != d || enc.token_reprs.iter().any(|h| h.len() != d) {
        return Err(Error::Dimension(format!(
            "encoder output is not {d}-dimensional"
        )));
    }
    if enc.token_reprs.len() > model.max_len() {
        return Err(Error::Dimension(format!(
            "{} token states exceed max length {}",
            enc.token_reprs.len(),
            model.max_len()
        )));
    }
    Ok(())
}

/// Per-token `K + 1` scores; rows past the token count stay zero.
pub fn low_scores(model: &DetectorModel, enc: &EncoderOutput) -> Result<ScoreMatrix> {
    check_dim(model, enc)?;
    let mut sm = ScoreMatrix::zeros(
        model.max_len(),
        model.label_set.len(),
        enc.token_reprs.len(),
    );
    for (i, h) in enc.token_reprs.iter().enumerate() {
        let (_, s) = model.low.forward(h);
        sm.row_mut(i).copy_from_slice(&s);
    }
    Ok(sm)
}

fn gold_indices(gold: &LabelSequence, ls: &LabelSet) -> Result<Vec<usize>> {
    gold.labels
        .iter()
        .map(|&l| {
            ls.index(l)
                .ok_or_else(|| Error::Invalid(format!("label {l:?} not in the model's label set")))
        })
        .collect()
}

/// Mean per-token softmax cross-entropy over the real (non-padding) rows.
pub fn low_loss(sm: &ScoreMatrix, gold: &LabelSequence, ls: &LabelSet) -> Result<f64> {
    if gold.len() != sm.actual_len {
        return Err(Error::Dimension(format!(
            "{} gold labels for {} scored tokens",
            gold.len(),
            sm.actual_len
        )));
    }
    if sm.width != ls.len() {
        return Err(Error::Dimension(format!(
            "score width {} vs {} labels",
            sm.width,
            ls.len()
        )));
    }
    let idx = gold_indices(gold, ls)?;
    Ok(low_loss_idx(sm, &idx))
}

fn low_loss_idx(sm: &ScoreMatrix, gold: &[usize]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let total: f64 = gold
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let row = sm.row(i);
            nn::log_sum_exp(row) - row[g]
        })
        .sum();
    total / gold.len() as f64
}

fn high_input(sm: &ScoreMatrix, article: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(sm.scores.len() + article.len());
    x.extend_from_slice(&sm.scores);
    x.extend_from_slice(article);
    x
}

/// Article-level logits from the flattened score matrix and the article state.
pub fn high_logits(
    model: &DetectorModel,
    enc: &EncoderOutput,
    sm: &ScoreMatrix,
) -> Result<Vec<f64>> {
    check_dim(model, enc)?;
    let x = high_input(sm, &enc.article_repr);
    if x.len() != model.high_input_len() {
        return Err(Error::Dimension(format!(
            "high-level input has {} values, expected {}",
            x.len(),
            model.high_input_len()
        )));
    }
    Ok(model.high.forward(&x).1)
}

/// Summed sigmoid binary cross-entropy.
pub fn high_loss(logits: &[f64], gold: &[f64]) -> Result<f64> {
    if logits.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "{} logits for {} gold labels",
            logits.len(),
            gold.len()
        )));
    }
    if let Some(g) = gold.iter().find(|&&g| g != 0.0 && g != 1.0) {
        return Err(Error::Invalid(format!("gold label {g} is not binary")));
    }
    Ok(logits
        .iter()
        .zip(gold)
        .map(|(&z, &y)| nn::softplus(z) - y * z)
        .sum())
}

/// Article-level target: 1 for each tracked event annotated anywhere.
pub fn gold_vector(la: &LabeledArticle, ls: &LabelSet) -> Vec<f64> {
    let events = la.events();
    ls.events()
        .iter()
        .map(|e| if events.contains(e) { 1.0 } else { 0.0 })
        .collect()
}

/// An article turned into training tensors.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub toks: TokenSeq,
    pub gold: Vec<usize>,
    pub gold_vec: Vec<f64>,
    pub gold_events: BTreeSet<EventType>,
}

/// Tokenize, project labels and truncate to the model's input length.
pub fn prepare(la: &LabeledArticle, ls: &LabelSet, max_len: usize) -> Result<Prepared> {
    let toks = tokenize(&la.article.title, &la.article.text)?;
    let labels = project_labels(la, &toks, ls)?;
    let toks = toks.truncated(max_len);
    let gold = gold_indices(&labels, ls)?
        .into_iter()
        .take(max_len)
        .collect();
    Ok(Prepared {
        id: la.article.id.clone(),
        toks,
        gold,
        gold_vec: gold_vector(la, ls),
        gold_events: la
            .events()
            .into_iter()
            .filter(|e| ls.event_index(*e).is_some())
            .collect(),
    })
}

/// Which loss terms to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPart {
    Low,
    High,
    Total,
}

/// Loss of one article, with its gradient accumulated into `grads` times `scale`.
pub fn loss_and_grad_into(
    model: &DetectorModel,
    ex: &Prepared,
    part: LossPart,
    scale: f64,
    grads: &mut DetectorGrads,
) -> Result<f64> {
    if ex.toks.is_empty() {
        return Err(Error::Invalid(format!("article {:?} has no tokens", ex.id)));
    }
    let surfaces: Vec<&str> = ex.toks.surfaces().collect();
    let fw = model.encoder.forward_surfaces(&surfaces);
    let n = fw.len();
    if ex.gold.len() != n {
        return Err(Error::Dimension(format!(
            "{} gold labels for {n} tokens",
            ex.gold.len()
        )));
    }
    let width = model.label_set.len();
    let mut sm = ScoreMatrix::zeros(model.max_len(), width, n);
    let mut acts = Vec::with_capacity(n);
    for i in 0..n {
        let (a, s) = model.low.forward(&fw.h[i]);
        sm.row_mut(i).copy_from_slice(&s);
        acts.push(a);
    }
    let x = high_input(&sm, &fw.cls);
    let (u, logits) = model.high.forward(&x);

    let l_low = low_loss_idx(&sm, &ex.gold);
    let l_high = high_loss(&logits, &ex.gold_vec)?;
    let (w_low, w_high) = match part {
        LossPart::Low => (1.0, 0.0),
        LossPart::High => (0.0, 1.0),
        LossPart::Total => (1.0, 1.0),
    };

    // high head
    let mut dx = vec![0.0; x.len()];
    if w_high != 0.0 {
        let d_logits: Vec<f64> = logits
            .iter()
            .zip(&ex.gold_vec)
            .map(|(&z, &y)| (nn::sigmoid(z) - y) * w_high * scale)
            .collect();
        model
            .high
            .backward(&x, &u, &d_logits, &mut grads.high, Some(&mut dx));
    }

    // low head, taking the high head's gradient w.r.t. the raw scores
    let mut d_h = vec![vec![0.0; model.encoder.config.dim]; n];
    let mut ds = vec![0.0; width];
    let coef = w_low * scale / n as f64;
    for i in 0..n {
        if w_low != 0.0 {
            nn::softmax_into(sm.row(i), &mut ds);
            ds[ex.gold[i]] -= 1.0;
            ds.iter_mut().for_each(|v| *v *= coef);
        } else {
            ds.iter_mut().for_each(|v| *v = 0.0);
        }
        nn::axpy(1.0, &dx[i * width..(i + 1) * width], &mut ds);
        model
            .low
            .backward(&fw.h[i], &acts[i], &ds, &mut grads.low, Some(&mut d_h[i]));
    }
    let d_cls = &dx[model.max_len() * width..];
    model
        .encoder
        .backward_into(&fw, &d_h, d_cls, &mut grads.encoder);

    Ok(w_low * l_low + w_high * l_high)
}

/// Loss (one or both terms) of a labeled article and its full gradient.
pub fn loss_and_grad(
    model: &DetectorModel,
    la: &LabeledArticle,
    part: LossPart,
) -> Result<(f64, DetectorGrads)> {
    let ex = prepare(la, &model.label_set, model.max_len())?;
    let mut grads = DetectorGrads::zeros(model);
    let loss = loss_and_grad_into(model, &ex, part, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Low-level plus high-level loss, end to end through the encoder.
pub fn total_loss(model: &DetectorModel, la: &LabeledArticle) -> Result<f64> {
    let ex = prepare(la, &model.label_set, model.max_len())?;
    let (enc, sm) = score_tokens(model, &ex.toks)?;
    let logits = high_logits(model, &enc, &sm)?;
    Ok(low_loss_idx(&sm, &ex.gold) + high_loss(&logits, &ex.gold_vec)?)
}

fn score_tokens(model: &DetectorModel, toks: &TokenSeq) -> Result<(EncoderOutput, ScoreMatrix)> {
    let enc = crate::encoder::encode(&model.encoder, toks)?;
    let sm = low_scores(model, &enc)?;
    Ok((enc, sm))
}

/// Decoded detections for one article.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub low_labels: LabelSequence,
    pub low_events: BTreeSet<EventType>,
    pub high_probs: BTreeMap<EventType, f64>,
    pub high_events: BTreeSet<EventType>,
    pub final_events: BTreeSet<EventType>,
}

/// Row argmax; ties go to `O`, then to the lowest event index.
pub fn argmax_label(row: &[f64], o_index: usize) -> usize {
    let mut best = o_index;
    for (j, &v) in row.iter().enumerate().take(o_index) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Turn scores and logits into label sequence and event sets.
pub fn decide(
    ls: &LabelSet,
    threshold: f64,
    combine: CombineMode,
    sm: &ScoreMatrix,
    logits: &[f64],
) -> DetectionResult {
    let o = ls.o_index();
    let labels: Vec<Label> = (0..sm.actual_len)
        .map(|i| ls.label(argmax_label(sm.row(i), o)))
        .collect();
    let low_labels = LabelSequence { labels };
    let low_events = low_labels.events();
    let high_probs: BTreeMap<EventType, f64> = ls
        .events()
        .iter()
        .zip(logits)
        .map(|(&e, &z)| (e, nn::sigmoid(z)))
        .collect();
    let high_events: BTreeSet<EventType> = high_probs
        .iter()
        .filter(|(_, &p)| p > threshold)
        .map(|(&e, _)| e)
        .collect();
    let final_events = match combine {
        CombineMode::Union => low_events.union(&high_events).copied().collect(),
        CombineMode::HighOnly => high_events.clone(),
        CombineMode::LowOnly => low_events.clone(),
        CombineMode::Intersection => low_events.intersection(&high_events).copied().collect(),
    };
    DetectionResult {
        low_labels,
        low_events,
        high_probs,
        high_events,
        final_events,
    }
}

/// Run both detectors on a raw article.
pub fn decode(model: &DetectorModel, article: &Article) -> Result<DetectionResult> {
    let toks = tokenize(&article.title, &article.text)?.truncated(model.max_len());
    decode_tokens(model, &toks)
}

pub fn decode_tokens(model: &DetectorModel, toks: &TokenSeq) -> Result<DetectionResult> {
    if toks.is_empty() {
        return Err(Error::Invalid("cannot decode an empty article".into()));
    }
    let (enc, sm) = score_tokens(model, toks)?;
    let logits = high_logits(model, &enc, &sm)?;
    Ok(decide(
        &model.label_set,
        model.threshold,
        model.combine,
        &sm,
        &logits,
    ))
}

/// One line of detection output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: String,
    pub published_at: DateTime<Utc>,
    /// `[tok_start, tok_end)` runs of one event.
    pub low_spans: Vec<(usize, usize, EventType)>,
    pub high_probs: BTreeMap<EventType, f64>,
    pub final_events: Vec<EventType>,
    #[serde(default)]
    pub ticker: Option<String>,
}

impl DetectionRecord {
    pub fn new(article: &Article, det: &DetectionResult, ticker: Option<String>) -> Self {
        DetectionRecord {
            id: article.id.clone(),
            published_at: article.published_at,
            low_spans: det.low_labels.runs(),
            high_probs: det.high_probs.clone(),
            final_events: det.final_events.iter().copied().collect(),
            ticker,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        Prf {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

/// Event-set metrics over a validation set.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EventMetrics {
    pub micro: Prf,
    pub per_event: BTreeMap<EventType, Prf>,
}

/// Micro and per-event precision/recall/F1 of predicted vs gold event sets.
pub fn event_metrics<'a>(
    events: &[EventType],
    pairs: impl IntoIterator<Item = (&'a BTreeSet<EventType>, &'a BTreeSet<EventType>)>,
) -> EventMetrics {
    let mut counts: BTreeMap<EventType, (usize, usize, usize)> =
        events.iter().map(|&e| (e, (0, 0, 0))).collect();
    for (pred, gold) in pairs {
        for (e, c) in counts.iter_mut() {
            match (pred.contains(e), gold.contains(e)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    let (tp, fp, fn_) = counts
        .values()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    EventMetrics {
        micro: Prf::from_counts(tp, fp, fn_),
        per_event: counts
            .into_iter()
            .map(|(e, (tp, fp, fn_))| (e, Prf::from_counts(tp, fp, fn_)))
            .collect(),
    }
}

/// Evaluate `final_events` against gold event sets.
pub fn evaluate(model: &DetectorModel, data: &[Prepared]) -> Result<EventMetrics> {
    let preds = data
        .iter()
        .map(|ex| decode_tokens(model, &ex.toks).map(|d| d.final_events))
        .collect::<Result<Vec<_>>>()?;
    Ok(event_metrics(
        model.label_set.events(),
        preds.iter().zip(data.iter().map(|ex| &ex.gold_events)),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<EventMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch of the returned checkpoint; 0 if no epoch ran.
    pub best_epoch: usize,
}

/// Joint mini-batch training of encoder and both heads.
///
/// Returns the checkpoint with the best validation micro-F1 (the last one
/// when there is no validation data).
pub fn train(
    model: &DetectorModel,
    train_set: &[LabeledArticle],
    val_set: &[LabeledArticle],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(DetectorModel, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let ls = &model.label_set;
    let max_len = model.max_len();
    let train_ex = train_set
        .iter()
        .map(|la| prepare(la, ls, max_len))
        .collect::<Result<Vec<_>>>()?;
    let val_ex = val_set
        .iter()
        .map(|la| prepare(la, ls, max_len))
        .collect::<Result<Vec<_>>>()?;

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer);
    let total_steps = train_ex.len().div_ceil(config.batch_size) * config.epochs;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = DetectorGrads::zeros(&current);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let loss =
                    loss_and_grad_into(&current, &train_ex[i], LossPart::Total, scale, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged at epoch {epoch} on article {:?}",
                        train_ex[i].id
                    )));
                }
                epoch_loss += loss;
            }
            opt.begin_step();
            let lr = nn::linear_decay(config.learning_rate, step, total_steps);
            step += 1;
            current.encoder.apply(&grads.encoder, &mut opt, 0, lr);
            for (k, (p, g)) in current
                .low
                .slices_mut()
                .into_iter()
                .zip(grads.low.slices())
                .chain(
                    current
                        .high
                        .slices_mut()
                        .into_iter()
                        .zip(grads.high.slices()),
                )
                .enumerate()
            {
                opt.update(8 + k, lr, p, g);
            }
        }
        if !current.is_finite() {
            return Err(Error::Numeric(format!(
                "parameters diverged at epoch {epoch}"
            )));
        }
        let val = if val_ex.is_empty() {
            None
        } else {
            Some(evaluate(&current, &val_ex)?)
        };
        let score = val.as_ref().map_or(f64::INFINITY, |m| m.micro.f1);
        if score > best_f1 || val.is_none() {
            best_f1 = score;
            best = current.clone();
            best_epoch = epoch;
        }
        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / train_ex.len() as f64,
            val,
        };
        on_epoch(&log);
        report.epochs.push(log);
    }
    report.best_epoch = best_epoch;
    Ok((best, report))
}
