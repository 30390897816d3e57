//! A small two-pathway encoder-decoder with hand-written gradients.
//!
//! Speech path: `u = W_a mean_t(frames) + b_a`. Text path:
//! `u = mean_j E_x[x_j]`. Both feed the shared encoder layer
//! `h = tanh(W_s u + b_s)` and the shared decoder
//! `logits_i = W_o tanh(W_d h + W_y E_y[y_{i-1}] + b_d) + b_o`, with
//! `y_0 = BOS` and teacher forcing throughout.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::corpus::{Corpus, FrameSeq, Triple};
use crate::mixers::FrameMixedExample;
use crate::numfmt::fmt_sig;
use crate::objectives::{self, LogitSeq, ObjectiveError};
use crate::rng;

/// Reserved target id fed to the decoder at the first position.
pub const BOS: usize = 0;
pub const BOS_TOKEN: &str = "<s>";

const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid dimensions: {0}")]
    BadDims(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("empty source")]
    EmptySource,
    #[error("empty frame sequence")]
    EmptyFrames,
    #[error("frame dimension {found} does not match model dimension {expected}")]
    FrameDim { expected: usize, found: usize },
    #[error("source token id {id} out of range for vocabulary of {vocab}")]
    SourceOutOfRange { id: usize, vocab: usize },
    #[error("unknown {side} token {token:?}")]
    UnknownToken { side: &'static str, token: String },
    #[error("unknown triple id {0:?}")]
    UnknownId(String),
    #[error("empty {0} batch")]
    EmptyBatch(&'static str),
    #[error("no training data")]
    EmptyData,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
}

/// Where frame-level mixing happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixLayer {
    /// Mix the frame sequences themselves.
    #[default]
    Input,
    /// Mix the pooled encoder outputs of the two inputs.
    PostEncoder,
}

impl FromStr for MixLayer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "input" => Ok(Self::Input),
            "post_encoder" => Ok(Self::PostEncoder),
            other => Err(format!(
                "unknown mix layer {other:?} (expected input or post_encoder)"
            )),
        }
    }
}

impl std::fmt::Display for MixLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Input => "input",
            Self::PostEncoder => "post_encoder",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mix_layer: MixLayer,
    pub lambda: f64,
    pub mix_portion: f64,
    /// Stop a stage after this many epochs without improvement of the
    /// monitored loss (dev loss when a dev corpus is given).
    pub patience: Option<usize>,
    /// Weight on the JSD term in stage 2. Only tests set it to anything
    /// but 1.
    pub jsd_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 0,
            mix_layer: MixLayer::Input,
            lambda: crate::mixers::DEFAULT_LAMBDA,
            mix_portion: 1.0,
            patience: None,
            jsd_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.into()));
        if self.hidden == 0 {
            return bad("hidden size must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("lambda must lie strictly inside (0, 1)");
        }
        if !(self.mix_portion.is_finite() && self.mix_portion >= 0.0) {
            return bad("mix_portion must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub frame_dim: usize,
    pub hidden: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl ModelDims {
    fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("frame_dim", self.frame_dim),
            ("hidden", self.hidden),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
        ] {
            if v == 0 {
                return Err(ModelError::BadDims(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub w_a: Array2<f64>,
    pub b_a: Array1<f64>,
    pub e_x: Array2<f64>,
    pub w_s: Array2<f64>,
    pub b_s: Array1<f64>,
    pub e_y: Array2<f64>,
    pub w_d: Array2<f64>,
    pub w_y: Array2<f64>,
    pub b_d: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 11] = [
    "W_a", "b_a", "E_x", "W_s", "b_s", "E_y", "W_d", "W_y", "b_d", "W_o", "b_o",
];

impl ToyParams {
    pub fn zeros(d: ModelDims) -> Self {
        let h = d.hidden;
        Self {
            w_a: Array2::zeros((h, d.frame_dim)),
            b_a: Array1::zeros(h),
            e_x: Array2::zeros((d.src_vocab, h)),
            w_s: Array2::zeros((h, h)),
            b_s: Array1::zeros(h),
            e_y: Array2::zeros((d.tgt_vocab, h)),
            w_d: Array2::zeros((h, h)),
            w_y: Array2::zeros((h, h)),
            b_d: Array1::zeros(h),
            w_o: Array2::zeros((d.tgt_vocab, h)),
            b_o: Array1::zeros(d.tgt_vocab),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            frame_dim: self.w_a.ncols(),
            hidden: self.w_a.nrows(),
            src_vocab: self.e_x.nrows(),
            tgt_vocab: self.w_o.nrows(),
        }
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [ArrayViewD<'_, f64>; 11] {
        [
            self.w_a.view().into_dyn(),
            self.b_a.view().into_dyn(),
            self.e_x.view().into_dyn(),
            self.w_s.view().into_dyn(),
            self.b_s.view().into_dyn(),
            self.e_y.view().into_dyn(),
            self.w_d.view().into_dyn(),
            self.w_y.view().into_dyn(),
            self.b_d.view().into_dyn(),
            self.w_o.view().into_dyn(),
            self.b_o.view().into_dyn(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [ArrayViewMutD<'_, f64>; 11] {
        [
            self.w_a.view_mut().into_dyn(),
            self.b_a.view_mut().into_dyn(),
            self.e_x.view_mut().into_dyn(),
            self.w_s.view_mut().into_dyn(),
            self.b_s.view_mut().into_dyn(),
            self.e_y.view_mut().into_dyn(),
            self.w_d.view_mut().into_dyn(),
            self.w_y.view_mut().into_dyn(),
            self.b_d.view_mut().into_dyn(),
            self.w_o.view_mut().into_dyn(),
            self.b_o.view_mut().into_dyn(),
        ]
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &ToyParams) {
        for (mut p, g) in self.tensors_mut().into_iter().zip(other.tensors()) {
            p.scaled_add(scale, &g);
        }
    }

    pub fn scale(&mut self, by: f64) {
        for mut p in self.tensors_mut() {
            p.mapv_inplace(|x| x * by);
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Uniform `[-0.1, 0.1]` initialization, deterministic in `seed`.
pub fn init_params(seed: u64, dims: ModelDims) -> Result<ToyParams, ModelError> {
    dims.validate()?;
    let mut p = ToyParams::zeros(dims);
    let mut rng = rng::seeded(seed);
    for mut t in p.tensors_mut() {
        t.mapv_inplace(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE));
    }
    Ok(p)
}

struct Encoded {
    /// Input to the shared layer.
    u: Array1<f64>,
    h: Array1<f64>,
}

fn shared_layer(p: &ToyParams, u: Array1<f64>) -> Encoded {
    let h = (p.w_s.dot(&u) + &p.b_s).mapv(f64::tanh);
    Encoded { u, h }
}

/// Backprop `dh` through the shared layer; returns `du`.
fn shared_layer_backward(
    p: &ToyParams,
    enc: &Encoded,
    dh: &Array1<f64>,
    g: &mut ToyParams,
) -> Array1<f64> {
    let dpre = dh * &enc.h.mapv(|v| 1.0 - v * v);
    add_outer(&mut g.w_s, &dpre, &enc.u);
    g.b_s += &dpre;
    p.w_s.t().dot(&dpre)
}

fn add_outer(target: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    let outer = col
        .view()
        .insert_axis(Axis(1))
        .dot(&row.view().insert_axis(Axis(0)));
    *target += &outer;
}

fn frame_mean(p: &ToyParams, frames: ArrayView2<'_, f64>) -> Result<Array1<f64>, ModelError> {
    if frames.ncols() != p.w_a.ncols() {
        return Err(ModelError::FrameDim {
            expected: p.w_a.ncols(),
            found: frames.ncols(),
        });
    }
    frames.mean_axis(Axis(0)).ok_or(ModelError::EmptyFrames)
}

fn encode_speech(
    p: &ToyParams,
    frames: ArrayView2<'_, f64>,
) -> Result<(Encoded, Array1<f64>), ModelError> {
    let mean = frame_mean(p, frames)?;
    let u = p.w_a.dot(&mean) + &p.b_a;
    Ok((shared_layer(p, u), mean))
}

fn encode_speech_backward(
    p: &ToyParams,
    enc: &Encoded,
    mean: &Array1<f64>,
    dh: &Array1<f64>,
    g: &mut ToyParams,
) {
    let du = shared_layer_backward(p, enc, dh, g);
    add_outer(&mut g.w_a, &du, mean);
    g.b_a += &du;
}

fn check_source(p: &ToyParams, x: &[usize]) -> Result<(), ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptySource);
    }
    let vocab = p.e_x.nrows();
    match x.iter().find(|&&id| id >= vocab) {
        Some(&id) => Err(ModelError::SourceOutOfRange { id, vocab }),
        None => Ok(()),
    }
}

fn encode_text(p: &ToyParams, x: &[usize]) -> Result<Encoded, ModelError> {
    check_source(p, x)?;
    let mut u = Array1::zeros(p.e_x.ncols());
    for &id in x {
        u += &p.e_x.row(id);
    }
    u /= x.len() as f64;
    Ok(shared_layer(p, u))
}

fn encode_text_backward(
    p: &ToyParams,
    enc: &Encoded,
    x: &[usize],
    dh: &Array1<f64>,
    g: &mut ToyParams,
) {
    let du = shared_layer_backward(p, enc, dh, g) / x.len() as f64;
    for &id in x {
        let mut row = g.e_x.row_mut(id);
        row += &du;
    }
}

struct Decoded {
    logits: LogitSeq,
    /// Previous-token ids, `BOS` first.
    prev: Vec<usize>,
    /// Decoder states, one row per position.
    z: Array2<f64>,
}

fn check_targets(p: &ToyParams, y: &[usize]) -> Result<(), ModelError> {
    let vocab = p.w_o.nrows();
    match y.iter().find(|&&id| id >= vocab) {
        Some(&id) => Err(ObjectiveError::TokenOutOfRange { id, vocab }.into()),
        None => Ok(()),
    }
}

fn decode(p: &ToyParams, h: &Array1<f64>, y: &[usize]) -> Result<Decoded, ModelError> {
    check_targets(p, y)?;
    let hidden = p.w_d.nrows();
    let base = p.w_d.dot(h) + &p.b_d;
    let prev: Vec<usize> = std::iter::once(BOS)
        .chain(y.iter().copied())
        .take(y.len())
        .collect();
    let mut z = Array2::zeros((y.len(), hidden));
    for (i, &tok) in prev.iter().enumerate() {
        let zi = (&base + &p.w_y.dot(&p.e_y.row(tok))).mapv(f64::tanh);
        z.row_mut(i).assign(&zi);
    }
    let logits = z.dot(&p.w_o.t()) + &p.b_o;
    Ok(Decoded { logits, prev, z })
}

/// Backprop logit gradients through the decoder; returns `dh`.
fn decode_backward(
    p: &ToyParams,
    h: &Array1<f64>,
    dec: &Decoded,
    glogits: &LogitSeq,
    g: &mut ToyParams,
) -> Array1<f64> {
    g.w_o += &glogits.t().dot(&dec.z);
    g.b_o += &glogits.sum_axis(Axis(0));
    let dz = glogits.dot(&p.w_o);
    let da = dz * dec.z.mapv(|v| 1.0 - v * v);
    for (i, &tok) in dec.prev.iter().enumerate() {
        let dai = da.row(i).to_owned();
        let e = p.e_y.row(tok).to_owned();
        add_outer(&mut g.w_y, &dai, &e);
        let de = p.w_y.t().dot(&dai);
        let mut row = g.e_y.row_mut(tok);
        row += &de;
    }
    let da_sum = da.sum_axis(Axis(0));
    add_outer(&mut g.w_d, &da_sum, h);
    g.b_d += &da_sum;
    p.w_d.t().dot(&da_sum)
}

/// Speech-pathway logits, `|y| x V`.
pub fn forward_speech(
    p: &ToyParams,
    frames: &FrameSeq,
    y: &[usize],
) -> Result<LogitSeq, ModelError> {
    let (enc, _) = encode_speech(p, frames.view())?;
    Ok(decode(p, &enc.h, y)?.logits)
}

/// Text-pathway logits, `|y| x V`.
pub fn forward_text(p: &ToyParams, x: &[usize], y: &[usize]) -> Result<LogitSeq, ModelError> {
    let enc = encode_text(p, x)?;
    Ok(decode(p, &enc.h, y)?.logits)
}

/// Pooled encoder output of the speech pathway.
pub fn encode_speech_pooled(p: &ToyParams, frames: &FrameSeq) -> Result<Array1<f64>, ModelError> {
    Ok(encode_speech(p, frames.view())?.0.h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechExample {
    pub frames: Array2<f64>,
    pub y: Vec<usize>,
}

/// A frame-level mixture. `frames_i`/`frames_j` are the unmixed inputs,
/// needed when mixing after the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedExample {
    pub frames_mixed: Array2<f64>,
    pub frames_i: Option<Array2<f64>>,
    pub frames_j: Option<Array2<f64>>,
    pub y_i: Vec<usize>,
    pub y_j: Vec<usize>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    pub frames: Array2<f64>,
    pub x: Vec<usize>,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Speech CE on `speech`.
    Ce,
    /// Text CE on `paired`.
    CeText,
    /// Mixed CE on `mixed`.
    Mix,
    /// Speech/text JSD on `paired`.
    Jsd,
    /// `Ce` on `speech` plus `Mix` on `mixed`.
    Stage1,
    /// Speech CE + text CE + JSD on `paired`.
    Stage2,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Batch<'a> {
    pub speech: &'a [SpeechExample],
    pub mixed: &'a [MixedExample],
    pub paired: &'a [PairedExample],
}

#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    pub mix_layer: MixLayer,
    pub jsd_weight: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            mix_layer: MixLayer::Input,
            jsd_weight: 1.0,
        }
    }
}

/// Batch-mean loss components. Terms not involved in the objective are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub ce_speech: f64,
    pub ce_text: f64,
    pub l_mix: f64,
    /// Batch mean of the per-sequence JSD sum.
    pub jsd: f64,
    /// Un-averaged JSD sum and target-token count, for per-token rates.
    pub jsd_sum: f64,
    pub jsd_tokens: usize,
}

fn mean_scale(n: usize, what: &'static str) -> Result<f64, ModelError> {
    if n == 0 {
        Err(ModelError::EmptyBatch(what))
    } else {
        Ok(1.0 / n as f64)
    }
}

fn speech_ce(p: &ToyParams, batch: &[SpeechExample], g: &mut ToyParams) -> Result<f64, ModelError> {
    let scale = mean_scale(batch.len(), "speech")?;
    let mut total = 0.0;
    for ex in batch {
        let (enc, mean) = encode_speech(p, ex.frames.view())?;
        let dec = decode(p, &enc.h, &ex.y)?;
        let (loss, gl) = objectives::cross_entropy(&dec.logits, &ex.y)?;
        total += loss;
        let dh = decode_backward(p, &enc.h, &dec, &(gl * scale), g);
        encode_speech_backward(p, &enc, &mean, &dh, g);
    }
    Ok(total * scale)
}

fn mixed_loss(
    p: &ToyParams,
    batch: &[MixedExample],
    layer: MixLayer,
    g: &mut ToyParams,
) -> Result<f64, ModelError> {
    let scale = mean_scale(batch.len(), "mixed")?;
    let mut total = 0.0;
    for ex in batch {
        let lambda = ex.lambda;
        match layer {
            MixLayer::Input => {
                let (enc, mean) = encode_speech(p, ex.frames_mixed.view())?;
                let dec_i = decode(p, &enc.h, &ex.y_i)?;
                let dec_j = decode(p, &enc.h, &ex.y_j)?;
                let (loss, gi, gj) =
                    objectives::mix_loss(&dec_i.logits, &ex.y_i, &dec_j.logits, &ex.y_j, lambda)?;
                total += loss;
                let dh = decode_backward(p, &enc.h, &dec_i, &(gi * scale), g)
                    + decode_backward(p, &enc.h, &dec_j, &(gj * scale), g);
                encode_speech_backward(p, &enc, &mean, &dh, g);
            }
            MixLayer::PostEncoder => {
                let (fi, fj) = match (&ex.frames_i, &ex.frames_j) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(ModelError::BadConfig(
                            "post-encoder mixing needs the unmixed inputs".into(),
                        ))
                    }
                };
                let (enc_i, mean_i) = encode_speech(p, fi.view())?;
                let (enc_j, mean_j) = encode_speech(p, fj.view())?;
                let h = &enc_i.h * lambda + &enc_j.h * (1.0 - lambda);
                let dec_i = decode(p, &h, &ex.y_i)?;
                let dec_j = decode(p, &h, &ex.y_j)?;
                let (loss, gi, gj) =
                    objectives::mix_loss(&dec_i.logits, &ex.y_i, &dec_j.logits, &ex.y_j, lambda)?;
                total += loss;
                let dh = decode_backward(p, &h, &dec_i, &(gi * scale), g)
                    + decode_backward(p, &h, &dec_j, &(gj * scale), g);
                encode_speech_backward(p, &enc_i, &mean_i, &(&dh * lambda), g);
                encode_speech_backward(p, &enc_j, &mean_j, &(&dh * (1.0 - lambda)), g);
            }
        }
    }
    Ok(total * scale)
}

/// Paired-input terms: speech CE, text CE and JSD, weighted by `w`.
fn paired_terms(
    p: &ToyParams,
    batch: &[PairedExample],
    w: [f64; 3],
    terms: &mut LossTerms,
    g: &mut ToyParams,
) -> Result<(), ModelError> {
    let scale = mean_scale(batch.len(), "paired")?;
    let [w_s, w_x, w_j] = w;
    for ex in batch {
        let (enc_s, mean) = encode_speech(p, ex.frames.view())?;
        let enc_x = encode_text(p, &ex.x)?;
        let dec_s = decode(p, &enc_s.h, &ex.y)?;
        let dec_x = decode(p, &enc_x.h, &ex.y)?;
        let (ce_s, mut gs) = objectives::cross_entropy(&dec_s.logits, &ex.y)?;
        let (ce_x, mut gx) = objectives::cross_entropy(&dec_x.logits, &ex.y)?;
        let (jsd, js, jx) = objectives::jsd_sequence(&dec_s.logits, &dec_x.logits)?;
        terms.ce_speech += ce_s * scale;
        terms.ce_text += ce_x * scale;
        terms.jsd += jsd * scale;
        terms.jsd_sum += jsd;
        terms.jsd_tokens += ex.y.len();
        gs = gs * (w_s * scale) + js * (w_j * scale);
        gx = gx * (w_x * scale) + jx * (w_j * scale);
        let dh_s = decode_backward(p, &enc_s.h, &dec_s, &gs, g);
        let dh_x = decode_backward(p, &enc_x.h, &dec_x, &gx, g);
        encode_speech_backward(p, &enc_s, &mean, &dh_s, g);
        encode_text_backward(p, &enc_x, &ex.x, &dh_x, g);
    }
    Ok(())
}

/// Loss and analytic gradient of the chosen objective; batches average
/// over sequences.
pub fn loss_and_grad(
    p: &ToyParams,
    batch: &Batch<'_>,
    objective: Objective,
    opts: &LossOptions,
) -> Result<(LossTerms, ToyParams), ModelError> {
    let mut g = ToyParams::zeros(p.dims());
    let mut t = LossTerms::default();
    match objective {
        Objective::Ce => {
            t.ce_speech = speech_ce(p, batch.speech, &mut g)?;
            t.total = t.ce_speech;
        }
        Objective::Mix => {
            t.l_mix = mixed_loss(p, batch.mixed, opts.mix_layer, &mut g)?;
            t.total = t.l_mix;
        }
        Objective::Stage1 => {
            t.ce_speech = speech_ce(p, batch.speech, &mut g)?;
            t.l_mix = mixed_loss(p, batch.mixed, opts.mix_layer, &mut g)?;
            t.total = objectives::stage1_loss(t.ce_speech, t.l_mix);
        }
        Objective::CeText => {
            paired_terms(p, batch.paired, [0.0, 1.0, 0.0], &mut t, &mut g)?;
            t.total = t.ce_text;
        }
        Objective::Jsd => {
            paired_terms(p, batch.paired, [0.0, 0.0, 1.0], &mut t, &mut g)?;
            t.total = t.jsd;
        }
        Objective::Stage2 => {
            paired_terms(p, batch.paired, [1.0, 1.0, opts.jsd_weight], &mut t, &mut g)?;
            t.total = objectives::stage2_loss(t.ce_speech, t.ce_text, opts.jsd_weight * t.jsd);
        }
    }
    Ok((t, g))
}

/// Token inventory with stable ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Parameters together with the vocabularies that give ids meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub src_vocab: Vocab,
    /// Id 0 is [`BOS_TOKEN`].
    pub tgt_vocab: Vocab,
    pub params: ToyParams,
}

impl Checkpoint {
    /// Fresh checkpoint whose vocabularies cover every token in `triples`
    /// and `extra_targets` (sorted, BOS first on the target side).
    pub fn init<'a>(
        seed: u64,
        hidden: usize,
        triples: impl IntoIterator<Item = &'a Triple>,
        extra_targets: impl IntoIterator<Item = &'a [String]>,
    ) -> Result<Self, ModelError> {
        let mut src = std::collections::BTreeSet::new();
        let mut tgt = std::collections::BTreeSet::new();
        let mut frame_dim = None;
        for t in triples {
            src.extend(t.src_tokens.iter().cloned());
            tgt.extend(t.tgt_tokens.iter().cloned());
            match frame_dim {
                None => frame_dim = Some(t.frames.dim()),
                Some(d) if d != t.frames.dim() => {
                    return Err(ModelError::FrameDim {
                        expected: d,
                        found: t.frames.dim(),
                    })
                }
                _ => {}
            }
        }
        for y in extra_targets {
            tgt.extend(y.iter().cloned());
        }
        let frame_dim = frame_dim.ok_or(ModelError::EmptyData)?;
        tgt.remove(BOS_TOKEN);
        let src_vocab = Vocab::from_tokens(src.into_iter().collect());
        let tgt_vocab =
            Vocab::from_tokens(std::iter::once(BOS_TOKEN.to_string()).chain(tgt).collect());
        let params = init_params(
            seed,
            ModelDims {
                frame_dim,
                hidden,
                src_vocab: src_vocab.len(),
                tgt_vocab: tgt_vocab.len(),
            },
        )?;
        Ok(Self {
            src_vocab,
            tgt_vocab,
            params,
        })
    }

    pub fn source_ids(&self, tokens: &[String]) -> Result<Vec<usize>, ModelError> {
        ids(&self.src_vocab, tokens, "source")
    }

    pub fn target_ids(&self, tokens: &[String]) -> Result<Vec<usize>, ModelError> {
        ids(&self.tgt_vocab, tokens, "target")
    }

    /// Text form: vocabulary blocks, then one `tensor NAME ROWS COLS` block
    /// per parameter (vectors are a single row).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, v) in [("src", &self.src_vocab), ("tgt", &self.tgt_vocab)] {
            writeln!(out, "vocab {name} {}", v.len()).unwrap();
            for tok in v.tokens() {
                writeln!(out, "{tok}").unwrap();
            }
        }
        for (name, t) in TENSOR_NAMES.iter().zip(self.params.tensors()) {
            let (rows, cols) = match t.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => unreachable!("parameters are vectors or matrices"),
            };
            writeln!(out, "tensor {name} {rows} {cols}").unwrap();
            let flat: Vec<f64> = t.iter().copied().collect();
            for row in flat.chunks(cols.max(1)) {
                let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                writeln!(out, "{}", cells.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| ModelError::Checkpoint {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };
        let err = |line: usize, msg: String| ModelError::Checkpoint { line, msg };

        let mut vocabs = Vec::new();
        for side in ["src", "tgt"] {
            let (n, header) = next("vocab header")?;
            let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
                ["vocab", s, c] if s == side => c
                    .parse::<usize>()
                    .map_err(|_| err(n, format!("bad count in {header:?}")))?,
                _ => {
                    return Err(err(
                        n,
                        format!("expected \"vocab {side} N\", found {header:?}"),
                    ))
                }
            };
            let mut toks = Vec::with_capacity(count);
            for _ in 0..count {
                toks.push(next("vocab token")?.1.to_string());
            }
            vocabs.push(Vocab::from_tokens(toks));
        }
        let tgt_vocab = vocabs.pop().expect("two vocabs");
        let src_vocab = vocabs.pop().expect("two vocabs");

        let mut tensors: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for name in TENSOR_NAMES {
            let (n, header) = next("tensor header")?;
            let (rows, cols) = match header.split_whitespace().collect::<Vec<_>>()[..] {
                ["tensor", found, r, c] if found == name => (
                    r.parse::<usize>()
                        .map_err(|_| err(n, format!("bad rows in {header:?}")))?,
                    c.parse::<usize>()
                        .map_err(|_| err(n, format!("bad cols in {header:?}")))?,
                ),
                _ => {
                    return Err(err(
                        n,
                        format!("expected \"tensor {name} R C\", found {header:?}"),
                    ))
                }
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, line) = next("tensor row")?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    let x: f64 = tok
                        .parse()
                        .map_err(|_| err(n, format!("bad number {tok:?}")))?;
                    if !x.is_finite() {
                        return Err(err(n, "non-finite parameter".into()));
                    }
                    data.push(x);
                }
                if data.len() - before != cols {
                    return Err(err(n, format!("expected {cols} values")));
                }
            }
            tensors.push((rows, cols, data));
        }

        let (frame_dim, hidden) = (tensors[0].1, tensors[0].0);
        let dims = ModelDims {
            frame_dim,
            hidden,
            src_vocab: src_vocab.len(),
            tgt_vocab: tgt_vocab.len(),
        };
        dims.validate()?;
        let mut params = ToyParams::zeros(dims);
        for ((name, mut t), (rows, cols, data)) in
            TENSOR_NAMES.iter().zip(params.tensors_mut()).zip(tensors)
        {
            let expected = match t.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => unreachable!(),
            };
            if expected != (rows, cols) {
                return Err(err(
                    0,
                    format!(
                        "tensor {name} is {rows}x{cols}, expected {}x{}",
                        expected.0, expected.1
                    ),
                ));
            }
            for (dst, src) in t.iter_mut().zip(data) {
                *dst = src;
            }
        }
        Ok(Self {
            src_vocab,
            tgt_vocab,
            params,
        })
    }
}

fn ids(v: &Vocab, tokens: &[String], side: &'static str) -> Result<Vec<usize>, ModelError> {
    tokens
        .iter()
        .map(|t| {
            v.id(t).ok_or_else(|| ModelError::UnknownToken {
                side,
                token: t.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Text-pathway CE only.
    Pretrain,
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub ce_speech: f64,
    pub ce_text: f64,
    pub l_mix: f64,
    pub jsd: f64,
    pub jsd_per_token: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub stage: Stage,
    pub epochs: Vec<EpochStats>,
}

impl History {
    /// One line per epoch, 10 significant digits:
    /// stage 1 `epoch L1 CE_s L_MIX`, stage 2 `epoch L2 CE_s CE_x JSD`,
    /// pre-training `epoch CE_x CE_x`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let cols: Vec<f64> = match self.stage {
                Stage::Pretrain => vec![e.total, e.ce_text],
                Stage::One => vec![e.total, e.ce_speech, e.l_mix],
                Stage::Two => vec![e.total, e.ce_speech, e.ce_text, e.jsd],
            };
            out.push_str(&e.epoch.to_string());
            for c in cols {
                out.push_str("  ");
                out.push_str(&fmt_sig(c, 10));
            }
            out.push('\n');
        }
        out
    }
}

/// Augmented inputs to the first stage.
#[derive(Debug, Clone, Default)]
pub struct Stage1Data {
    /// Word- and sentence-mixed triples, trained with plain CE.
    pub triples: Vec<Triple>,
    pub frame_mixed: Vec<FrameMixedExample>,
}

pub fn speech_examples<'a>(
    ckpt: &Checkpoint,
    triples: impl IntoIterator<Item = &'a Triple>,
) -> Result<Vec<SpeechExample>, ModelError> {
    triples
        .into_iter()
        .map(|t| {
            Ok(SpeechExample {
                frames: t.frames.view().to_owned(),
                y: ckpt.target_ids(&t.tgt_tokens)?,
            })
        })
        .collect()
}

pub fn paired_examples<'a>(
    ckpt: &Checkpoint,
    triples: impl IntoIterator<Item = &'a Triple>,
) -> Result<Vec<PairedExample>, ModelError> {
    triples
        .into_iter()
        .map(|t| {
            Ok(PairedExample {
                frames: t.frames.view().to_owned(),
                x: ckpt.source_ids(&t.src_tokens)?,
                y: ckpt.target_ids(&t.tgt_tokens)?,
            })
        })
        .collect()
}

/// Resolves frame-mixed records against the corpus they were drawn from.
pub fn mixed_examples(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    set: &[FrameMixedExample],
) -> Result<Vec<MixedExample>, ModelError> {
    set.iter()
        .map(|ex| {
            let lookup = |id: &str| corpus.get(id).map(|t| t.frames.view().to_owned());
            Ok(MixedExample {
                frames_mixed: ex.frames_mixed.view().to_owned(),
                frames_i: lookup(&ex.id_i),
                frames_j: lookup(&ex.id_j),
                y_i: ckpt.target_ids(&ex.tgt_i)?,
                y_j: ckpt.target_ids(&ex.tgt_j)?,
                lambda: ex.lambda,
            })
        })
        .collect()
}

struct EarlyStop {
    patience: Option<usize>,
    best: f64,
    since_best: usize,
}

impl EarlyStop {
    fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records a monitored loss; true when training should stop.
    fn update(&mut self, loss: f64) -> bool {
        let Some(patience) = self.patience else {
            return false;
        };
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= patience
    }
}

fn accumulate(sum: &mut LossTerms, t: &LossTerms) {
    sum.total += t.total;
    sum.ce_speech += t.ce_speech;
    sum.ce_text += t.ce_text;
    sum.l_mix += t.l_mix;
    sum.jsd += t.jsd;
    sum.jsd_sum += t.jsd_sum;
    sum.jsd_tokens += t.jsd_tokens;
}

fn epoch_stats(epoch: usize, sum: &LossTerms, steps: usize) -> EpochStats {
    let s = 1.0 / steps as f64;
    EpochStats {
        epoch,
        total: sum.total * s,
        ce_speech: sum.ce_speech * s,
        ce_text: sum.ce_text * s,
        l_mix: sum.l_mix * s,
        jsd: sum.jsd * s,
        jsd_per_token: if sum.jsd_tokens == 0 {
            0.0
        } else {
            sum.jsd_sum / sum.jsd_tokens as f64
        },
    }
}

fn shuffled(n: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Stage 1 from a fresh initialization.
pub fn train_stage1(
    corpus: &Corpus,
    data: &Stage1Data,
    cfg: &TrainConfig,
    dev: Option<&Corpus>,
) -> Result<(Checkpoint, History), ModelError> {
    cfg.validate()?;
    let ckpt = Checkpoint::init(
        cfg.seed,
        cfg.hidden,
        corpus.iter().chain(&data.triples),
        data.frame_mixed
            .iter()
            .flat_map(|e| [e.tgt_i.as_slice(), e.tgt_j.as_slice()]),
    )?;
    continue_stage1(ckpt, corpus, data, cfg, dev)
}

/// Stage 1: each step takes an original-stream batch (originals plus word-
/// and sentence-mixed triples) under CE and a frame-mixed batch under the
/// mixed loss, and descends on their sum.
pub fn continue_stage1(
    mut ckpt: Checkpoint,
    corpus: &Corpus,
    data: &Stage1Data,
    cfg: &TrainConfig,
    dev: Option<&Corpus>,
) -> Result<(Checkpoint, History), ModelError> {
    cfg.validate()?;
    if corpus.is_empty() || data.frame_mixed.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let speech = speech_examples(&ckpt, corpus.iter().chain(&data.triples))?;
    let mixed = mixed_examples(&ckpt, corpus, &data.frame_mixed)?;
    if cfg.mix_layer == MixLayer::PostEncoder {
        if let Some(ex) = data
            .frame_mixed
            .iter()
            .find(|e| corpus.get(&e.id_i).is_none() || corpus.get(&e.id_j).is_none())
        {
            let missing = if corpus.get(&ex.id_i).is_none() {
                &ex.id_i
            } else {
                &ex.id_j
            };
            return Err(ModelError::UnknownId(missing.clone()));
        }
    }
    let dev_speech = dev.map(|d| speech_examples(&ckpt, d)).transpose()?;
    let opts = LossOptions {
        mix_layer: cfg.mix_layer,
        jsd_weight: cfg.jsd_weight,
    };
    let mut rng = rng::substream(cfg.seed, "stage1", 0);
    let mut stop = EarlyStop::new(cfg.patience);
    let mut history = History {
        stage: Stage::One,
        epochs: Vec::new(),
    };
    let bs = cfg.batch_size;
    for epoch in 1..=cfg.epochs {
        let order = shuffled(speech.len(), &mut rng);
        let mix_order = shuffled(mixed.len(), &mut rng);
        let mut sum = LossTerms::default();
        let steps = order.len().div_ceil(bs);
        for step in 0..steps {
            let sb: Vec<SpeechExample> = order[step * bs..((step + 1) * bs).min(order.len())]
                .iter()
                .map(|&k| speech[k].clone())
                .collect();
            let mb: Vec<MixedExample> = (0..bs.min(mixed.len()))
                .map(|k| mixed[mix_order[(step * bs + k) % mixed.len()]].clone())
                .collect();
            let batch = Batch {
                speech: &sb,
                mixed: &mb,
                paired: &[],
            };
            let (terms, grad) = loss_and_grad(&ckpt.params, &batch, Objective::Stage1, &opts)?;
            ckpt.params.add_scaled(-cfg.learning_rate, &grad);
            accumulate(&mut sum, &terms);
        }
        history.epochs.push(epoch_stats(epoch, &sum, steps));
        let monitored = match &dev_speech {
            Some(d) if !d.is_empty() => {
                let batch = Batch {
                    speech: d,
                    ..Default::default()
                };
                loss_and_grad(&ckpt.params, &batch, Objective::Ce, &opts)?
                    .0
                    .total
            }
            _ => history.epochs.last().expect("pushed").total,
        };
        if stop.update(monitored) {
            break;
        }
    }
    Ok((ckpt, history))
}

fn train_paired(
    mut ckpt: Checkpoint,
    corpus: &Corpus,
    cfg: &TrainConfig,
    dev: Option<&Corpus>,
    stage: Stage,
) -> Result<(Checkpoint, History), ModelError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let objective = match stage {
        Stage::Pretrain => Objective::CeText,
        _ => Objective::Stage2,
    };
    let paired = paired_examples(&ckpt, corpus)?;
    let dev_paired = dev.map(|d| paired_examples(&ckpt, d)).transpose()?;
    let opts = LossOptions {
        mix_layer: cfg.mix_layer,
        jsd_weight: cfg.jsd_weight,
    };
    let label = if stage == Stage::Pretrain {
        "stage0"
    } else {
        "stage2"
    };
    let mut rng = rng::substream(cfg.seed, label, 0);
    let mut stop = EarlyStop::new(cfg.patience);
    let mut history = History {
        stage,
        epochs: Vec::new(),
    };
    let bs = cfg.batch_size;
    for epoch in 1..=cfg.epochs {
        let order = shuffled(paired.len(), &mut rng);
        let mut sum = LossTerms::default();
        let steps = order.len().div_ceil(bs);
        for chunk in order.chunks(bs) {
            let pb: Vec<PairedExample> = chunk.iter().map(|&k| paired[k].clone()).collect();
            let batch = Batch {
                paired: &pb,
                ..Default::default()
            };
            let (terms, grad) = loss_and_grad(&ckpt.params, &batch, objective, &opts)?;
            ckpt.params.add_scaled(-cfg.learning_rate, &grad);
            accumulate(&mut sum, &terms);
        }
        history.epochs.push(epoch_stats(epoch, &sum, steps));
        let monitored = match &dev_paired {
            Some(d) if !d.is_empty() => {
                let batch = Batch {
                    paired: d,
                    ..Default::default()
                };
                loss_and_grad(&ckpt.params, &batch, objective, &opts)?
                    .0
                    .total
            }
            _ => history.epochs.last().expect("pushed").total,
        };
        if stop.update(monitored) {
            break;
        }
    }
    Ok((ckpt, history))
}

/// Stage 2: speech CE, text CE and their JSD on the same triples each step.
pub fn train_stage2(
    corpus: &Corpus,
    ckpt: Checkpoint,
    cfg: &TrainConfig,
    dev: Option<&Corpus>,
) -> Result<(Checkpoint, History), ModelError> {
    train_paired(ckpt, corpus, cfg, dev, Stage::Two)
}

/// Optional text-only pre-training of the shared encoder and decoder.
pub fn train_stage0(
    corpus: &Corpus,
    ckpt: Checkpoint,
    cfg: &TrainConfig,
    dev: Option<&Corpus>,
) -> Result<(Checkpoint, History), ModelError> {
    train_paired(ckpt, corpus, cfg, dev, Stage::Pretrain)
}
