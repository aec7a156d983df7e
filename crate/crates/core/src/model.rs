//! End-to-end model: configuration, parameters, and the per-example forward
//! pass `embed → bilstm → channels → conv/pool → softmax → cross-entropy`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{build_channels, AttentionMode, ChannelParams, ChannelVars, SumAxis};
use crate::conv::{classify, conv_forward, cross_entropy, max_pool, stack_channels, ClassifierHead, ConvBank, ConvVars, HeadVars};
use crate::error::{Error, Result};
use crate::lstm::{bilstm_encode, BiLstmParams, BiLstmVars};
use crate::params::{substream, Named, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::{init_embeddings, EncodedBatch, EncodedRow, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden size of each LSTM direction.
    pub hidden: usize,
    pub embed_dim: usize,
    pub channels: usize,
    pub mode: AttentionMode,
    pub filter_widths: Vec<usize>,
    /// Filters per width.
    pub filter_maps: usize,
    pub classes: usize,
    pub dropout_embedding: f64,
    pub dropout_cnn_input: f64,
    pub dropout_penultimate: f64,
    pub l2: f64,
    /// One keep probability per channel.
    pub keep_probs: Vec<f64>,
    /// Sentence length after padding; 0 means "longest training sentence".
    pub max_len: usize,
    /// Vectorial attention hidden size; 0 means `2 × hidden`.
    pub attention_hidden: usize,
    pub sum_axis: SumAxis,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 100,
            embed_dim: 300,
            channels: 3,
            mode: AttentionMode::Combined,
            filter_widths: vec![3, 4, 5],
            filter_maps: 100,
            classes: 2,
            dropout_embedding: 0.5,
            dropout_cnn_input: 0.5,
            dropout_penultimate: 0.5,
            l2: 0.0005,
            keep_probs: vec![0.8; 3],
            max_len: 0,
            attention_hidden: 0,
            sum_axis: SumAxis::Column,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checking.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 4,
            embed_dim: 5,
            channels: 2,
            mode: AttentionMode::Combined,
            filter_widths: vec![2, 3],
            filter_maps: 3,
            classes: 3,
            dropout_embedding: 0.0,
            dropout_cnn_input: 0.0,
            dropout_penultimate: 0.0,
            keep_probs: vec![0.8; 2],
            max_len: 7,
            ..ModelConfig::default()
        }
    }

    /// Resizes `keep_probs` to the channel count when it holds a single value.
    pub fn with_channels(mut self, channels: usize) -> Self {
        let p = self.keep_probs.first().copied().unwrap_or(0.8);
        self.channels = channels;
        self.keep_probs = vec![p; channels];
        self
    }

    pub fn channel_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn attn_hidden(&self) -> usize {
        if self.attention_hidden == 0 {
            self.channel_width()
        } else {
            self.attention_hidden
        }
    }

    pub fn feature_count(&self) -> usize {
        self.filter_widths.len() * self.filter_maps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("channels", self.channels),
            ("filter_maps", self.filter_maps),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return bad("filter widths must be a non-empty list of positive integers".into());
        }
        for (name, r) in [
            ("dropout_embedding", self.dropout_embedding),
            ("dropout_cnn_input", self.dropout_cnn_input),
            ("dropout_penultimate", self.dropout_penultimate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1), got {r}"));
            }
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.keep_probs.len() != self.channels {
            return bad(format!(
                "{} keep probabilities for {} channels",
                self.keep_probs.len(),
                self.channels
            ));
        }
        if let Some(p) = self.keep_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return bad(format!("keep probability {p} outside (0, 1]"));
        }
        if self.max_len > 0 {
            let widest = *self.filter_widths.iter().max().unwrap();
            if widest > self.max_len {
                return bad(format!(
                    "filter width {widest} exceeds the sentence length {}",
                    self.max_len
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub encoder: BiLstmParams,
    pub attention: Vec<ChannelParams>,
    pub conv: Vec<ConvBank>,
    pub head: ClassifierHead,
}

impl ModelParams {
    /// Random initialization; the embedding and the remaining weights draw
    /// from separate streams of `cfg.seed`.
    pub fn init(cfg: &ModelConfig, vocab: &Vocabulary, pretrained: Option<&HashMap<String, Vec<f64>>>) -> Result<Self> {
        cfg.validate()?;
        let mut erng = substream(cfg.seed, Stream::Embedding, &[]);
        let embedding = init_embeddings(vocab, cfg.embed_dim, pretrained, &mut erng)?;
        let mut rng = substream(cfg.seed, Stream::Params, &[]);
        let width = cfg.channel_width();
        let encoder = BiLstmParams::init(cfg.hidden, cfg.embed_dim, &mut rng);
        let attention = cfg
            .keep_probs
            .iter()
            .map(|&p| ChannelParams::init(cfg.mode, width, cfg.attn_hidden(), p, &mut rng))
            .collect();
        let conv = cfg
            .filter_widths
            .iter()
            .map(|&w| ConvBank::init(w, cfg.filter_maps, width, cfg.channels, &mut rng))
            .collect();
        let head = ClassifierHead::init(cfg.classes, cfg.feature_count(), &mut rng);
        Ok(ModelParams {
            embedding,
            encoder,
            attention,
            conv,
            head,
        })
    }

    /// Every tensor with a stable dotted name, embedding first.
    pub fn entries(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_owned(), &self.embedding)];
        for (dir, p) in [("forward", &self.encoder.forward), ("backward", &self.encoder.backward)] {
            out.extend(p.named().into_iter().map(|(n, t)| (format!("lstm.{dir}.{n}"), t)));
        }
        for (l, ch) in self.attention.iter().enumerate() {
            if let Some(s) = &ch.scalar {
                out.extend(s.named().into_iter().map(|(n, t)| (format!("attention.{l}.scalar.{n}"), t)));
            }
            if let Some(v) = &ch.vectorial {
                out.extend(v.named().into_iter().map(|(n, t)| (format!("attention.{l}.vectorial.{n}"), t)));
            }
        }
        for (i, bank) in self.conv.iter().enumerate() {
            out.extend(bank.named().into_iter().map(|(n, t)| (format!("conv.{i}.{n}"), t)));
        }
        out.extend(self.head.named().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::entries`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.encoder.forward.named_mut().into_iter().map(|(_, t)| t));
        out.extend(self.encoder.backward.named_mut().into_iter().map(|(_, t)| t));
        for ch in &mut self.attention {
            if let Some(s) = &mut ch.scalar {
                out.extend(s.named_mut().into_iter().map(|(_, t)| t));
            }
            if let Some(v) = &mut ch.vectorial {
                out.extend(v.named_mut().into_iter().map(|(_, t)| t));
            }
        }
        for bank in &mut self.conv {
            out.extend(bank.named_mut().into_iter().map(|(_, t)| t));
        }
        out.extend(self.head.named_mut().into_iter().map(|(_, t)| t));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    fn bind(&self, tape: &mut Tape, grad: bool) -> Result<ModelVars> {
        Ok(ModelVars {
            encoder: self.encoder.bind(tape, grad)?,
            channels: self.attention.iter().map(|c| c.bind(tape, grad)).collect(),
            conv: self.conv.iter().map(|b| b.bind(tape, grad)).collect(),
            head: self.head.bind(tape, grad),
        })
    }

    /// Checks every shape against `cfg`.
    pub fn validate(&self, cfg: &ModelConfig, vocab_len: usize) -> Result<()> {
        let fresh = ModelParams::init(cfg, &Vocabulary::from_tokens(placeholder_vocab(vocab_len))?, None)?;
        let mine = self.entries();
        let want = fresh.entries();
        if mine.len() != want.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                want.len(),
                mine.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in mine.iter().zip(&want) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Config(format!(
                    "parameter {n1} {:?} does not match expected {n2} {:?}",
                    t1.shape(),
                    t2.shape()
                )));
            }
        }
        self.encoder.validate()
    }
}

pub(crate) fn placeholder_vocab(len: usize) -> Vec<String> {
    std::iter::once(crate::text::UNK.to_owned())
        .chain((1..len.max(1)).map(|i| format!("#{i}")))
        .collect()
}

/// Whether `name` is subject to L2 decay: weight matrices and conv filters,
/// never biases or the embedding table.
pub fn is_decayed(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    name != "embedding" && (last.starts_with('W') || last == "m")
}

struct ModelVars {
    encoder: BiLstmVars,
    channels: Vec<ChannelVars>,
    conv: Vec<ConvVars>,
    head: HeadVars,
}

impl ModelVars {
    /// Leaf handles aligned with `ModelParams::entries()[1..]`.
    fn leaves(&self) -> Vec<Var> {
        let mut v = self.encoder.forward.leaves();
        v.extend(self.encoder.backward.leaves());
        for c in &self.channels {
            v.extend(c.leaves());
        }
        for b in &self.conv {
            v.extend([b.weights, b.bias]);
        }
        v.extend([self.head.w, self.head.b]);
        v
    }
}

/// Inverted dropout: zero with probability `rate`, scale survivors by `1/(1−rate)`.
/// Identity when not training or when `rate` is 0.
pub fn apply_dropout<R: Rng>(tape: &mut Tape, x: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::arg(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).numel();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(rate) { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}

/// `λ/2 · Σ w²` over decayed tensors.
pub fn l2_penalty(params: &ModelParams, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let sq: f64 = params
        .entries()
        .iter()
        .filter(|(n, _)| is_decayed(n))
        .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    0.5 * lambda * sq
}

/// Scalar attention weights of one sentence, as exported for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub tokens: Vec<String>,
    pub pads: Vec<bool>,
    /// One weight list per channel; empty in vectorial mode.
    pub channels: Vec<Vec<f64>>,
    pub predicted: usize,
    pub label: Option<usize>,
}

/// Randomness for one forward pass, identified by an optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct PassSeed {
    pub seed: u64,
    pub step: u64,
}

impl PassSeed {
    pub fn eval() -> Self {
        PassSeed { seed: 0, step: 0 }
    }
}

pub struct ForwardOutput {
    /// Mean cross-entropy plus the L2 penalty.
    pub loss: f64,
    pub probs: Vec<Vec<f64>>,
    pub attention: Vec<AttentionRecord>,
}

/// Gradients aligned with [`ModelParams::entries`].
pub struct ParamGrads {
    pub grads: Vec<Vec<f64>>,
}

struct ExampleResult {
    loss: f64,
    probs: Vec<f64>,
    weights: Vec<Vec<f64>>,
    grads: Option<(Vec<(usize, Vec<f64>)>, Vec<Vec<f64>>)>,
}

#[derive(Clone, Copy)]
struct PassOptions<'a> {
    cfg: &'a ModelConfig,
    training: bool,
    with_grad: bool,
    fault: Option<crate::tape::OpKind>,
}

fn run_example(params: &ModelParams, row: &EncodedRow, label: usize, opts: PassOptions, seed: PassSeed, index: u64) -> Result<ExampleResult> {
    let cfg = opts.cfg;
    let mut tape = Tape::new();
    if let Some(k) = opts.fault {
        tape.inject_fault(k);
    }
    let n = row.len();
    let k = cfg.embed_dim;
    if params.embedding.shape()[1] != k {
        return Err(Error::Config("embedding width does not match embed_dim".into()));
    }
    let mut rows = Vec::with_capacity(n * k);
    for &id in &row.ids {
        if id >= params.embedding.rows() {
            return Err(Error::Config(format!("token id {id} outside the embedding table")));
        }
        rows.extend_from_slice(params.embedding.row(id));
    }
    let x = tape.leaf(Tensor::matrix(n, k, rows)?, opts.with_grad);
    let vars = params.bind(&mut tape, opts.with_grad)?;

    let mut drop_rng = substream(seed.seed, Stream::Dropout, &[seed.step, index]);
    let mut mask_rng = substream(seed.seed, Stream::ChannelMask, &[seed.step, index]);

    let xd = apply_dropout(&mut tape, x, cfg.dropout_embedding, &mut drop_rng, opts.training)?;
    let h = bilstm_encode(&mut tape, xd, &vars.encoder)?;
    let set = build_channels(&mut tape, h, &row.pad_mask, &vars.channels, cfg.mode, cfg.sum_axis, &mut mask_rng, opts.training)?;
    let stacked = stack_channels(&mut tape, &set)?;
    let stacked = apply_dropout(&mut tape, stacked, cfg.dropout_cnn_input, &mut drop_rng, opts.training)?;
    let mut pooled = Vec::with_capacity(vars.conv.len());
    for bank in &vars.conv {
        let fm = conv_forward(&mut tape, stacked, bank)?;
        pooled.push(max_pool(&mut tape, fm)?);
    }
    let r = tape.concat_all(&pooled, 0)?;
    let r = apply_dropout(&mut tape, r, cfg.dropout_penultimate, &mut drop_rng, opts.training)?;
    let probs = classify(&mut tape, r, &vars.head)?;
    let loss = cross_entropy(&mut tape, probs, label)?;

    let weights = set
        .scalar_weights
        .iter()
        .map(|&a| tape.value(a).data().to_vec())
        .collect();
    let grads = if opts.with_grad {
        let g = tape.backward(loss)?;
        let gx = g.get(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n * k]);
        let emb_rows = row
            .ids
            .iter()
            .zip(gx.chunks(k))
            .map(|(&id, gr)| (id, gr.to_vec()))
            .collect();
        let rest = vars
            .leaves()
            .into_iter()
            .map(|v| {
                g.get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
            })
            .collect();
        Some((emb_rows, rest))
    } else {
        None
    };
    Ok(ExampleResult {
        loss: tape.value(loss).item()?,
        probs: tape.value(probs).data().to_vec(),
        weights,
        grads,
    })
}

fn check_batch(batch: &EncodedBatch, cfg: &ModelConfig) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if let Some(r) = batch.rows.iter().find(|r| r.len() != cfg.max_len) {
        return Err(Error::Config(format!(
            "batch row has length {} but the model expects {}",
            r.len(),
            cfg.max_len
        )));
    }
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= cfg.classes) {
        return Err(Error::arg(format!("label {l} outside [0, {})", cfg.classes)));
    }
    Ok(())
}

fn pass(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &EncodedBatch,
    seed: PassSeed,
    training: bool,
    with_grad: bool,
    fault: Option<crate::tape::OpKind>,
) -> Result<(ForwardOutput, Option<ParamGrads>)> {
    check_batch(batch, cfg)?;
    let opts = PassOptions {
        cfg,
        training,
        with_grad,
        fault,
    };
    let b = batch.len() as f64;
    let entries = params.entries();
    let mut grads: Option<Vec<Vec<f64>>> =
        with_grad.then(|| entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect());
    let k = cfg.embed_dim;
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(batch.len());
    let mut attention = Vec::with_capacity(batch.len());
    for (i, (row, &label)) in batch.rows.iter().zip(&batch.labels).enumerate() {
        let res = run_example(params, row, label, opts, seed, i as u64)?;
        total += res.loss;
        if let (Some(acc), Some((emb, rest))) = (grads.as_mut(), res.grads) {
            for (id, gr) in emb {
                for (a, g) in acc[0][id * k..(id + 1) * k].iter_mut().zip(gr) {
                    *a += g / b;
                }
            }
            for (a, g) in acc[1..].iter_mut().zip(rest) {
                for (x, y) in a.iter_mut().zip(g) {
                    *x += y / b;
                }
            }
        }
        let predicted = argmax(&res.probs);
        attention.push(AttentionRecord {
            tokens: Vec::new(),
            pads: row.pad_mask.clone(),
            channels: res.weights,
            predicted,
            label: Some(label),
        });
        probs.push(res.probs);
    }
    let mut loss = total / b + l2_penalty(params, cfg.l2);
    if !loss.is_finite() {
        loss = f64::INFINITY;
    }
    if let Some(acc) = grads.as_mut() {
        if cfg.l2 > 0.0 {
            for ((name, t), g) in entries.iter().zip(acc.iter_mut()) {
                if is_decayed(name) {
                    for (gv, w) in g.iter_mut().zip(t.data()) {
                        *gv += cfg.l2 * w;
                    }
                }
            }
        }
    }
    Ok((
        ForwardOutput {
            loss,
            probs,
            attention,
        },
        grads.map(|grads| ParamGrads { grads }),
    ))
}

/// Loss, probabilities and attention weights for a batch, without gradients.
pub fn forward(params: &ModelParams, cfg: &ModelConfig, batch: &EncodedBatch, seed: PassSeed, training: bool) -> Result<ForwardOutput> {
    Ok(pass(params, cfg, batch, seed, training, false, None)?.0)
}

/// Forward pass plus gradients of the batch loss for every parameter.
pub fn loss_and_grad(params: &ModelParams, cfg: &ModelConfig, batch: &EncodedBatch, seed: PassSeed, training: bool) -> Result<(ForwardOutput, ParamGrads)> {
    let (out, g) = pass(params, cfg, batch, seed, training, true, None)?;
    Ok((out, g.expect("gradients requested")))
}

/// Like [`loss_and_grad`] with one backward rule deliberately broken.
#[doc(hidden)]
pub fn loss_and_grad_with_fault(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &EncodedBatch,
    fault: crate::tape::OpKind,
) -> Result<(ForwardOutput, ParamGrads)> {
    let (out, g) = pass(params, cfg, batch, PassSeed::eval(), false, true, Some(fault))?;
    Ok((out, g.expect("gradients requested")))
}

/// Index of the largest entry, first on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Configuration, vocabulary and weights: everything needed to classify text.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, pretrained: Option<&HashMap<String, Vec<f64>>>) -> Result<Self> {
        if config.max_len == 0 {
            return Err(Error::Config("max_len must be resolved before building a model".into()));
        }
        let params = ModelParams::init(&config, &vocab, pretrained)?;
        Ok(Model { config, vocab, params })
    }

    pub fn encode(&self, examples: &[crate::text::Example]) -> EncodedBatch {
        EncodedBatch::encode(examples, &self.vocab, self.config.max_len)
    }
}
