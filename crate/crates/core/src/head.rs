//! Narrative classification over frozen sequence embeddings.
//!
//! The head is a single linear layer followed by softmax, trained with mean
//! cross-entropy using AdamW (decoupled weight decay), linear warmup then
//! linear decay of the learning rate, and global gradient-norm clipping. An
//! optional ReLU hidden layer can be switched on through [`TrainConfig`].
//! Predicted classes are turned back into narrative text through the
//! taxonomy lookup.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EmbedRequest, GenRequest};
use crate::corpus::TweetRecord;
use crate::error::{Error, Result};
use crate::icl::ProbDist;
use crate::io;
use crate::taxonomy::Taxonomy;
use crate::template::Template;

pub const NARRATIVE_TEMPLATE: &str = "narrative-v1";
pub const NARRATIVE_MAX_TOKENS: u32 = 32;
const CHECKPOINT_MAGIC: &str = "narrative-head v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Width of an optional ReLU hidden layer; `None` trains a single linear layer.
    pub hidden_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 0.001,
            // Higher than the usual 0.9.
            beta1: 0.98,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 10,
            warmup_fraction: 0.10,
            max_grad_norm: 1.0,
            seed: 0,
            hidden_dim: None,
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if self.hidden_dim == Some(0) {
            return bad("hidden_dim must be positive when set");
        }
        Ok(())
    }

    /// Short stable digest recorded in checkpoints.
    pub fn hash(&self) -> String {
        io::sha256_hex(serde_json::to_string(self).unwrap().as_bytes())[..16].to_string()
    }

    /// Learning-rate multiplier for a 0-based step out of `total`.
    pub fn schedule(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_fraction * total as f64) as usize;
        if step < warmup {
            (step + 1) as f64 / warmup as f64
        } else {
            let remain = total.saturating_sub(step) as f64;
            (remain / total.saturating_sub(warmup).max(1) as f64).max(0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dim: usize,
    /// Row-major `dim × embed_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub topic: String,
    pub embed_dim: usize,
    pub class_count: usize,
    pub hidden: Option<HiddenLayer>,
    /// Row-major `class_count × input_dim`.
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
    pub config_hash: String,
    pub backend_model: String,
}

/// Gradients shaped like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
    pub hidden: Option<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        if let Some((w, b)) = &self.hidden {
            v.push(w);
            v.push(b);
        }
        v.push(&self.w);
        v.push(&self.bias);
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        if let Some((w, b)) = &mut self.hidden {
            v.push(w);
            v.push(b);
        }
        v.push(&mut self.w);
        v.push(&mut self.bias);
        v
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl HeadModel {
    pub fn zeros(topic: impl Into<String>, embed_dim: usize, class_count: usize) -> Self {
        Self {
            topic: topic.into(),
            embed_dim,
            class_count,
            hidden: None,
            w: vec![0.0; class_count * embed_dim],
            bias: vec![0.0; class_count],
            config_hash: String::new(),
            backend_model: String::new(),
        }
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`.
    pub fn init(topic: impl Into<String>, embed_dim: usize, class_count: usize, hidden_dim: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let hidden = hidden_dim.map(|h| HiddenLayer {
            dim: h,
            w: draw(h * embed_dim, embed_dim),
            b: vec![0.0; h],
        });
        let input_dim = hidden_dim.unwrap_or(embed_dim);
        let w = draw(class_count * input_dim, input_dim);
        Self {
            topic: topic.into(),
            embed_dim,
            class_count,
            hidden,
            w,
            bias: vec![0.0; class_count],
            config_hash: String::new(),
            backend_model: String::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.embed_dim, |h| h.dim)
    }

    fn check(&self) -> Result<()> {
        let inp = self.input_dim();
        let mut ok = self.w.len() == self.class_count * inp && self.bias.len() == self.class_count && self.class_count > 0;
        if let Some(h) = &self.hidden {
            ok &= h.w.len() == h.dim * self.embed_dim && h.b.len() == h.dim;
        }
        if !ok {
            return Err(Error::Invalid("head parameter shapes are inconsistent".into()));
        }
        if self.params().iter().any(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("head parameters".into()));
        }
        Ok(())
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        if let Some(h) = &self.hidden {
            v.push(&h.w);
            v.push(&h.b);
        }
        v.push(&self.w);
        v.push(&self.bias);
        v
    }

    /// Parameter slices in gradient order, each flagged for weight decay.
    fn params_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut v: Vec<(&mut [f64], bool)> = Vec::new();
        if let Some(h) = &mut self.hidden {
            v.push((&mut h.w, true));
            v.push((&mut h.b, false));
        }
        v.push((&mut self.w, true));
        v.push((&mut self.bias, false));
        v
    }

    fn hidden_activation(&self, e: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        self.hidden.as_ref().map(|h| {
            let pre: Vec<f64> = (0..h.dim)
                .map(|j| h.b[j] + dot(&h.w[j * self.embed_dim..(j + 1) * self.embed_dim], e))
                .collect();
            let act = pre.iter().map(|x| x.max(0.0)).collect();
            (pre, act)
        })
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.embed_dim {
            return Err(Error::Dimension {
                expected: self.embed_dim,
                got: embedding.len(),
            });
        }
        let hidden = self.hidden_activation(embedding);
        let input = hidden.as_ref().map_or(embedding, |(_, a)| a.as_slice());
        Ok(self.linear(input))
    }

    fn linear(&self, input: &[f64]) -> Vec<f64> {
        let d = input.len();
        (0..self.class_count)
            .map(|c| self.bias[c] + dot(&self.w[c * d..(c + 1) * d], input))
            .collect()
    }

    /// Class distribution `softmax(W·e + bias)`; labels are class indices.
    pub fn forward(&self, embedding: &[f64]) -> Result<ProbDist> {
        let logits = self.logits(embedding)?;
        let labels = (0..self.class_count).map(|c| c.to_string()).collect();
        ProbDist::new(labels, softmax(&logits))
    }

    /// Highest-probability class, lowest index on ties.
    pub fn predict_class(&self, embedding: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(embedding)?))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over the batch plus `weight_decay/2 · ‖W‖²` over the
/// weight matrices, with analytic gradients.
pub fn loss_and_grad(model: &HeadModel, batch: &[(&[f64], usize)], weight_decay: f64) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let inp = model.input_dim();
    let mut g = Gradients {
        w: vec![0.0; model.w.len()],
        bias: vec![0.0; model.class_count],
        hidden: model.hidden.as_ref().map(|h| (vec![0.0; h.w.len()], vec![0.0; h.dim])),
    };
    let mut loss = 0.0;
    for (e, y) in batch {
        if *y >= model.class_count {
            return Err(Error::IndexOutOfRange {
                topic: model.topic.clone(),
                index: *y,
                size: model.class_count,
            });
        }
        if e.len() != model.embed_dim {
            return Err(Error::Dimension {
                expected: model.embed_dim,
                got: e.len(),
            });
        }
        let hidden = model.hidden_activation(e);
        let input: &[f64] = hidden.as_ref().map_or(e, |(_, a)| a.as_slice());
        let z = model.linear(input);
        loss += log_sum_exp(&z) - z[*y];
        let mut dz = softmax(&z);
        dz[*y] -= 1.0;
        for (c, d) in dz.iter().enumerate() {
            g.bias[c] += d;
            for (k, x) in input.iter().enumerate() {
                g.w[c * inp + k] += d * x;
            }
        }
        if let (Some(h), Some((pre, _)), Some((gw1, gb1))) = (&model.hidden, &hidden, g.hidden.as_mut()) {
            for j in 0..h.dim {
                if pre[j] <= 0.0 {
                    continue;
                }
                let da: f64 = (0..model.class_count).map(|c| dz[c] * model.w[c * inp + j]).sum();
                gb1[j] += da;
                for k in 0..model.embed_dim {
                    gw1[j * model.embed_dim + k] += da * e[k];
                }
            }
        }
    }
    let n = batch.len() as f64;
    loss /= n;
    for s in g.slices_mut() {
        s.iter_mut().for_each(|x| *x /= n);
    }
    if weight_decay > 0.0 {
        loss += 0.5 * weight_decay * dot(&model.w, &model.w);
        for (gw, w) in g.w.iter_mut().zip(&model.w) {
            *gw += weight_decay * w;
        }
        if let (Some(h), Some((gw1, _))) = (&model.hidden, g.hidden.as_mut()) {
            loss += 0.5 * weight_decay * dot(&h.w, &h.w);
            for (gw, w) in gw1.iter_mut().zip(&h.w) {
                *gw += weight_decay * w;
            }
        }
    }
    Ok((loss, g))
}

/// Mean cross-entropy without any regularization term.
pub fn mean_loss(model: &HeadModel, data: &[(Vec<f64>, usize)]) -> Result<f64> {
    let batch: Vec<(&[f64], usize)> = data.iter().map(|(e, y)| (e.as_slice(), *y)).collect();
    Ok(loss_and_grad(model, &batch, 0.0)?.0)
}

pub fn accuracy(model: &HeadModel, data: &[(Vec<f64>, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (e, y) in data {
        if model.predict_class(e)? == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: HeadModel,
    /// Mean training cross-entropy per epoch, measured on the mini-batches
    /// before each update.
    pub loss_trace: Vec<f64>,
}

/// AdamW state: first and second moments per parameter slice.
struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    fn new(model: &HeadModel) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|s| s.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut HeadModel, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (((param, decay), g), (m, v)) in model
            .params_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                if decay {
                    param[i] -= lr * cfg.weight_decay * param[i];
                }
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Train `model` on `(embedding, class)` pairs. Deterministic for a fixed
/// `config.seed`; `epochs = 0` returns the model unchanged.
pub fn train(model: &HeadModel, dataset: &[(Vec<f64>, usize)], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model.check()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    for (e, y) in dataset {
        if e.len() != model.embed_dim {
            return Err(Error::Dimension {
                expected: model.embed_dim,
                got: e.len(),
            });
        }
        if *y >= model.class_count {
            return Err(Error::IndexOutOfRange {
                topic: model.topic.clone(),
                index: *y,
                size: model.class_count,
            });
        }
    }
    let mut model = model.clone();
    model.config_hash = config.hash();
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut opt = AdamW::new(&model);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| (dataset[i].0.as_slice(), dataset[i].1)).collect();
            let (loss, mut grads) = loss_and_grad(&model, &batch, 0.0)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch}, step {step} (lr multiplier {})",
                    config.schedule(step, total)
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            let norm = grads.norm();
            if norm > config.max_grad_norm {
                let scale = config.max_grad_norm / norm;
                grads.slices_mut().into_iter().for_each(|s| s.iter_mut().for_each(|g| *g *= scale));
            }
            let lr = config.learning_rate * config.schedule(step, total);
            opt.step(&mut model, &grads, lr, config);
            step += 1;
        }
        trace.push(epoch_loss / dataset.len() as f64);
    }
    model.check()?;
    Ok(TrainOutcome { model, loss_trace: trace })
}

fn embed_texts(backend: &dyn Backend, texts: Vec<String>) -> Result<Vec<Vec<f64>>> {
    Ok(backend.embed(&EmbedRequest::sequence(texts))?.into_sequence()?)
}

/// Sequence embeddings for many texts, in input order, fanned out over the
/// backend's batch API.
pub fn embed_all(backend: &dyn Backend, texts: &[String], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let reqs: Vec<EmbedRequest> = texts
        .chunks(chunk.max(1))
        .map(|c| EmbedRequest::sequence(c.to_vec()))
        .collect();
    let mut out = Vec::with_capacity(texts.len());
    for r in backend.embed_batch(&reqs) {
        out.extend(r?.into_sequence()?);
    }
    Ok(out)
}

/// Classify `tweet` and look the class up in the topic's narrative list.
pub fn predict_narrative_cls(
    backend: &dyn Backend,
    model: &HeadModel,
    taxonomy: &Taxonomy,
    tweet: &TweetRecord,
) -> Result<(usize, String)> {
    if tweet.topic != model.topic {
        return Err(Error::Invalid(format!(
            "head trained for `{}`, tweet `{}` is about `{}`",
            model.topic, tweet.id, tweet.topic
        )));
    }
    let set = taxonomy.set(&tweet.topic)?;
    if set.len() != model.class_count {
        return Err(Error::Invalid(format!(
            "head has {} classes, topic `{}` lists {}",
            model.class_count,
            tweet.topic,
            set.len()
        )));
    }
    let e = embed_texts(backend, vec![tweet.text.clone()])?.pop().unwrap();
    let class = model.predict_class(&e)?;
    Ok((class, set.get(class)?.to_string()))
}

/// Free-form narrative generated directly from the tweet.
pub fn predict_narrative_t2t(backend: &dyn Backend, tweet: &TweetRecord, taxonomy: &Taxonomy) -> Result<String> {
    taxonomy.set(&tweet.topic)?;
    if tweet.text.trim().is_empty() {
        return Err(Error::Invalid(format!("tweet `{}` has empty text", tweet.id)));
    }
    let prompt = Template::builtin(NARRATIVE_TEMPLATE)?.render("body", &[("topic", &tweet.topic), ("text", &tweet.text)])?;
    let cands = backend.generate(&GenRequest::new(prompt, NARRATIVE_MAX_TOKENS))?;
    Ok(cands.into_iter().next().map(|c| c.text).unwrap_or_default())
}

fn write_matrix(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    writeln!(out, "{name} {rows} {cols}").unwrap();
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
}

/// Textual checkpoint holding one or more heads.
pub fn render_checkpoint(models: &[HeadModel]) -> String {
    let mut out = String::new();
    for m in models {
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(out, "topic\t{}", m.topic).unwrap();
        writeln!(out, "embed_dim\t{}", m.embed_dim).unwrap();
        writeln!(out, "class_count\t{}", m.class_count).unwrap();
        writeln!(out, "hidden_dim\t{}", m.hidden.as_ref().map_or(0, |h| h.dim)).unwrap();
        writeln!(out, "config_hash\t{}", m.config_hash).unwrap();
        writeln!(out, "backend_model\t{}", m.backend_model).unwrap();
        if let Some(h) = &m.hidden {
            write_matrix(&mut out, "w1", h.dim, m.embed_dim, &h.w);
            write_matrix(&mut out, "b1", 1, h.dim, &h.b);
        }
        write_matrix(&mut out, "w", m.class_count, m.input_dim(), &m.w);
        write_matrix(&mut out, "bias", 1, m.class_count, &m.bias);
        writeln!(out, "end").unwrap();
    }
    out
}

pub fn save_checkpoint(models: &[HeadModel], path: &Path) -> Result<()> {
    io::write_atomic(path, render_checkpoint(models).as_bytes())
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let (i, l) = self
            .inner
            .next()
            .ok_or_else(|| Error::parse(self.path, self.line + 1, "unexpected end of checkpoint"))?;
        self.line = i + 1;
        Ok(l)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, msg)
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix('\t'))
            .ok_or_else(|| self.err(format!("expected `{key}`")))
    }

    fn usize_field(&mut self, key: &str) -> Result<usize> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.err(format!("bad integer for `{key}`")))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let header = self.next()?;
        if header != format!("{name} {rows} {cols}") {
            return Err(self.err(format!("expected `{name} {rows} {cols}`")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = self.next()?;
            let row = l
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| self.err("bad number"))?;
            if row.len() != cols {
                return Err(self.err(format!("expected {cols} values, got {}", row.len())));
            }
            data.extend(row);
        }
        Ok(data)
    }
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Vec<HeadModel>> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
        line: 0,
    };
    let mut models = Vec::new();
    loop {
        let magic = match lines.inner.next() {
            None => break,
            Some((i, l)) => {
                lines.line = i + 1;
                l
            }
        };
        if magic.trim().is_empty() {
            continue;
        }
        if magic != CHECKPOINT_MAGIC {
            return Err(lines.err(format!("expected `{CHECKPOINT_MAGIC}`")));
        }
        let topic = lines.field("topic")?.to_string();
        let embed_dim = lines.usize_field("embed_dim")?;
        let class_count = lines.usize_field("class_count")?;
        let hidden_dim = lines.usize_field("hidden_dim")?;
        let config_hash = lines.field("config_hash")?.to_string();
        let backend_model = lines.field("backend_model")?.to_string();
        let hidden = if hidden_dim > 0 {
            let w = lines.matrix("w1", hidden_dim, embed_dim)?;
            let b = lines.matrix("b1", 1, hidden_dim)?;
            Some(HiddenLayer { dim: hidden_dim, w, b })
        } else {
            None
        };
        let input_dim = if hidden_dim > 0 { hidden_dim } else { embed_dim };
        let w = lines.matrix("w", class_count, input_dim)?;
        let bias = lines.matrix("bias", 1, class_count)?;
        if lines.next()? != "end" {
            return Err(lines.err("expected `end`"));
        }
        let model = HeadModel {
            topic,
            embed_dim,
            class_count,
            hidden,
            w,
            bias,
            config_hash,
            backend_model,
        };
        model.check()?;
        models.push(model);
    }
    Ok(models)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<HeadModel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_uniform() {
        let m = HeadModel::zeros("t", 3, 4);
        let p = m.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert!(p.probs().iter().all(|x| (x - 0.25).abs() < 1e-15));
        assert_eq!(m.predict_class(&[1.0, -2.0, 0.5]).unwrap(), 0);
    }

    #[test]
    fn biased_class_dominates() {
        let mut m = HeadModel::zeros("t", 2, 3);
        m.bias[1] = 10.0;
        let p = m.forward(&[0.3, 0.3]).unwrap();
        let expected = 10f64.exp() / (10f64.exp() + 2.0);
        assert!((p.probs()[1] - expected).abs() < 1e-12);
        assert!(p.probs()[1] > 0.99);
    }

    #[test]
    fn dimension_mismatch() {
        let m = HeadModel::zeros("t", 2, 3);
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn loss_edge_cases() {
        let m = HeadModel::zeros("t", 2, 5);
        let (l, _) = loss_and_grad(&m, &[(&[1.0, 2.0], 3)], 0.0).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);

        let mut sure = HeadModel::zeros("t", 2, 3);
        sure.bias = vec![-800.0, 800.0, -800.0];
        let (l, _) = loss_and_grad(&sure, &[(&[0.0, 0.0], 1)], 0.0).unwrap();
        assert!(l.abs() < 1e-12);

        assert!(loss_and_grad(&m, &[], 0.0).is_err());
        assert!(loss_and_grad(&m, &[(&[0.0, 0.0], 5)], 0.0).is_err());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig::default();
        let total = 100;
        assert!((cfg.schedule(0, total) - 0.1).abs() < 1e-12);
        assert!((cfg.schedule(9, total) - 1.0).abs() < 1e-12);
        assert!((cfg.schedule(10, total) - 1.0).abs() < 1e-12);
        assert!(cfg.schedule(55, total) < cfg.schedule(20, total));
        assert!(cfg.schedule(99, total) > 0.0 && cfg.schedule(100, total) == 0.0);
    }

    #[test]
    fn epochs_zero_is_identity() {
        let m = HeadModel::init("t", 2, 2, None, 1);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let out = train(&m, &[(vec![1.0, 0.0], 0)], &cfg).unwrap();
        assert_eq!(out.model.w, m.w);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = HeadModel::init("alpha", 3, 4, None, 5);
        let mut b = HeadModel::init("beta gamma", 3, 2, Some(5), 6);
        b.backend_model = "mock".into();
        let text = render_checkpoint(&[a.clone(), b.clone()]);
        let back = parse_checkpoint(&text, Path::new("c")).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(parse_checkpoint(&text.replace("end", "fin"), Path::new("c")).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { warmup_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_ok());
        assert_eq!(TrainConfig::default().hash(), TrainConfig::default().hash());
    }
}
