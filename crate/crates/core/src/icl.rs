//! In-context stance and aspect prediction.
//!
//! Prompts are assembled from a versioned template and up to four annotated
//! exemplars. Stance is read off the backend's scores for the two words
//! `for` and `against`; aspect is generated under a decode restriction to the
//! tweet's own content words and aligned back onto the tweet's tokens.
//!
//! Contextual calibration estimates the label bias of a prompt by scoring
//! content-free inputs (`"N/A"`, `""`) and rescales every later
//! distribution so those inputs would come out uniform.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendResult, GenCandidate, GenRequest, ScoreRequest};
use crate::bio::{align_span, TagSequence, TokenSpan};
use crate::corpus::TweetRecord;
use crate::error::{Error, Result};
use crate::template::Template;
use crate::text::{is_special, is_stopword, tokenize};

pub const MAX_SHOTS: usize = 4;
pub const DEFAULT_CONTENT_FREE: [&str; 2] = ["N/A", ""];
pub const STANCE_LABELS: [&str; 2] = ["for", "against"];
pub const ASPECT_MAX_TOKENS: u32 = 8;
pub const COT_MAX_TOKENS: u32 = 48;
const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Against,
    For,
}

impl Stance {
    /// `for` = 1, `against` = 0.
    pub fn code(self) -> u8 {
        match self {
            Stance::For => 1,
            Stance::Against => 0,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Stance::For),
            0 => Ok(Stance::Against),
            other => Err(Error::Invalid(format!("stance code must be 0 or 1, got {other}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stance::For => "for",
            Stance::Against => "against",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Plain,
    Cot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Stance,
    Aspect,
}

impl Task {
    pub fn default_template(self) -> &'static str {
        match self {
            Task::Stance => "stance-v1",
            Task::Aspect => "aspect-v1",
        }
    }
}

/// A handmade annotated example. Tokens are computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub topic: String,
    pub text: String,
    pub stance: Stance,
    pub aspect: TokenSpan,
    pub explanation: Option<String>,
    tokens: Vec<String>,
}

impl Exemplar {
    pub fn new(
        topic: impl Into<String>,
        text: impl Into<String>,
        stance: Stance,
        aspect: TokenSpan,
        explanation: Option<String>,
    ) -> Result<Self> {
        let text = text.into();
        let tokens = tokenize(&text);
        if aspect.end >= tokens.len() {
            return Err(Error::Invalid(format!(
                "exemplar aspect {}..={} out of bounds for {} tokens",
                aspect.start,
                aspect.end,
                tokens.len()
            )));
        }
        Ok(Self {
            topic: topic.into(),
            text,
            stance,
            aspect,
            explanation,
            tokens,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn aspect_text(&self) -> String {
        self.tokens[self.aspect.start..=self.aspect.end].join(" ")
    }
}

/// On-disk exemplar shape. `aspect_end` is the index of the last aspect token.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarRecord {
    pub topic: String,
    pub text: String,
    pub stance: Stance,
    pub aspect_start: usize,
    pub aspect_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl TryFrom<ExemplarRecord> for Exemplar {
    type Error = Error;
    fn try_from(r: ExemplarRecord) -> Result<Self> {
        Exemplar::new(r.topic, r.text, r.stance, TokenSpan::new(r.aspect_start, r.aspect_end)?, r.explanation)
    }
}

/// Read an exemplar file (a JSON list of [`ExemplarRecord`]).
pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<ExemplarRecord> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    records.into_iter().map(Exemplar::try_from).collect()
}

#[derive(Debug, Clone)]
pub struct PromptSpec {
    mode: PromptMode,
    task: Task,
    exemplars: Vec<Exemplar>,
    template: Template,
}

impl PromptSpec {
    pub fn new(mode: PromptMode, task: Task, exemplars: Vec<Exemplar>) -> Result<Self> {
        Self::with_template(mode, task, exemplars, Template::builtin(task.default_template())?)
    }

    pub fn with_template(mode: PromptMode, task: Task, exemplars: Vec<Exemplar>, template: Template) -> Result<Self> {
        if exemplars.len() > MAX_SHOTS {
            return Err(Error::Invalid(format!(
                "at most {MAX_SHOTS} exemplars, got {}",
                exemplars.len()
            )));
        }
        if mode == PromptMode::Cot && exemplars.iter().any(|e| e.explanation.is_none()) {
            return Err(Error::Invalid("chain-of-thought prompts need an explanation on every exemplar".into()));
        }
        let spec = Self {
            mode,
            task,
            exemplars,
            template,
        };
        // Surface unbound placeholders now rather than at prediction time.
        spec.try_build(&TweetRecord::new("", "", ""))?;
        if mode == PromptMode::Cot {
            spec.template.section("answer_cue")?;
        }
        Ok(spec)
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn template_id(&self) -> &str {
        self.template.id()
    }

    fn try_build(&self, tweet: &TweetRecord) -> Result<String> {
        let cot = self.mode == PromptMode::Cot;
        let mut blocks = vec![self.template.render("header", &[])?];
        for ex in &self.exemplars {
            let answer = match self.task {
                Task::Stance => ex.stance.label().to_string(),
                Task::Aspect => ex.aspect_text(),
            };
            let explanation = ex.explanation.as_deref().unwrap_or("");
            let vars = [
                ("topic", ex.topic.as_str()),
                ("text", ex.text.as_str()),
                ("explanation", explanation),
                ("answer", answer.as_str()),
            ];
            blocks.push(self.template.render(if cot { "exemplar_cot" } else { "exemplar" }, &vars)?);
        }
        let vars = [("topic", tweet.topic.as_str()), ("text", tweet.text.as_str())];
        blocks.push(self.template.render(if cot { "query_cot" } else { "query" }, &vars)?);
        Ok(blocks.join("\n\n"))
    }

    /// Append a generated explanation and the answer cue to a CoT prompt.
    pub fn finish_cot(&self, prompt: &str, explanation: &str) -> String {
        let cue = self.template.section("answer_cue").unwrap_or("");
        format!("{prompt} {}\n{cue}", explanation.trim())
    }
}

/// Deterministic prompt for `tweet`: instructions, exemplars in the given
/// order, then the query.
pub fn build_prompt(spec: &PromptSpec, tweet: &TweetRecord) -> String {
    spec.try_build(tweet).expect("template validated when the spec was built")
}

/// Normalized probability vector over an ordered label list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbDist {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl ProbDist {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if labels.len() != probs.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: probs.len(),
            });
        }
        if probs.is_empty() {
            return Err(Error::Invalid("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invalid("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::Invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { labels, probs })
    }

    /// Softmax of `logprobs` restricted to these labels.
    pub fn from_logprobs(labels: Vec<String>, logprobs: &[f64]) -> Result<Self> {
        if labels.len() != logprobs.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: logprobs.len(),
            });
        }
        let probs = softmax(logprobs);
        Self::new(labels, probs)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Diagonal affine correction `q ∝ w·p + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub labels: Vec<String>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Calibration {
    pub fn new(labels: Vec<String>, w: Vec<f64>) -> Result<Self> {
        if labels.len() != w.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: w.len(),
            });
        }
        if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::DegenerateCalibration("weights must be positive and finite".into()));
        }
        let b = vec![0.0; w.len()];
        Ok(Self { labels, w, b })
    }

    pub fn identity(labels: Vec<String>) -> Self {
        let w = vec![1.0; labels.len()];
        let b = vec![0.0; labels.len()];
        Self { labels, w, b }
    }

    /// Weights `1 / p̄[i]` for a mean content-free distribution `p̄`.
    pub fn from_mean(mean: &ProbDist) -> Result<Self> {
        if let Some(i) = mean.probs.iter().position(|p| *p <= 0.0) {
            return Err(Error::DegenerateCalibration(format!(
                "content-free probability of `{}` is zero",
                mean.labels[i]
            )));
        }
        Self::new(mean.labels.clone(), mean.probs.iter().map(|p| 1.0 / p).collect())
    }

    pub fn apply(&self, p: &ProbDist) -> Result<ProbDist> {
        if self.labels != p.labels {
            return Err(Error::LabelMismatch(format!(
                "calibration labels {:?} vs distribution labels {:?}",
                self.labels, p.labels
            )));
        }
        let raw: Vec<f64> = self
            .w
            .iter()
            .zip(&self.b)
            .zip(&p.probs)
            .map(|((w, b), p)| (w * p + b).max(0.0))
            .collect();
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::DegenerateCalibration("calibrated mass is zero".into()));
        }
        ProbDist::new(p.labels.clone(), raw.iter().map(|x| x / sum).collect())
    }
}

pub fn apply_calibration(cal: &Calibration, p: &ProbDist) -> Result<ProbDist> {
    cal.apply(p)
}

fn stance_labels() -> Vec<String> {
    STANCE_LABELS.iter().map(|s| s.to_string()).collect()
}

fn require_task(spec: &PromptSpec, task: Task) -> Result<()> {
    if spec.task != task {
        return Err(Error::Invalid(format!("prompt spec is for {:?}, not {:?}", spec.task, task)));
    }
    Ok(())
}

fn explanation_request(prompt: &str) -> GenRequest {
    let mut req = GenRequest::new(prompt, COT_MAX_TOKENS);
    req.num_beams = 1;
    req.temperature = 0.0;
    req
}

/// Final prompts for a batch: plain prompts as built, CoT prompts completed
/// with a generated explanation.
fn final_prompts(backend: &dyn Backend, spec: &PromptSpec, tweets: &[&TweetRecord]) -> Vec<Result<String>> {
    let prompts: Vec<String> = tweets.iter().map(|t| build_prompt(spec, t)).collect();
    if spec.mode == PromptMode::Plain {
        return prompts.into_iter().map(Ok).collect();
    }
    let reqs: Vec<GenRequest> = prompts.iter().map(|p| explanation_request(p)).collect();
    backend
        .generate_batch(&reqs)
        .into_iter()
        .zip(prompts)
        .map(|(r, p)| {
            let cands = r?;
            let expl = cands.first().map(|c| c.text.as_str()).unwrap_or("");
            Ok(spec.finish_cot(&p, expl))
        })
        .collect()
}

fn stance_dists(backend: &dyn Backend, spec: &PromptSpec, tweets: &[&TweetRecord]) -> Vec<Result<ProbDist>> {
    let prompts = final_prompts(backend, spec, tweets);
    let mut out: Vec<Option<Result<ProbDist>>> = prompts.iter().map(|_| None).collect();
    let mut reqs = Vec::new();
    let mut slots = Vec::new();
    for (i, p) in prompts.into_iter().enumerate() {
        match p {
            Ok(prompt) => {
                reqs.push(ScoreRequest {
                    prompt,
                    continuations: stance_labels(),
                });
                slots.push(i);
            }
            Err(e) => out[i] = Some(Err(e)),
        }
    }
    for (slot, r) in slots.into_iter().zip(backend.score_batch(&reqs)) {
        out[slot] = Some(r.map_err(Error::from).and_then(|lp| ProbDist::from_logprobs(stance_labels(), &lp)));
    }
    out.into_iter().map(|r| r.expect("filled")).collect()
}

/// Mean stance distribution over content-free inputs for one topic.
pub fn content_free_mean(
    backend: &dyn Backend,
    spec: &PromptSpec,
    topic: &str,
    content_free_inputs: &[&str],
) -> Result<ProbDist> {
    require_task(spec, Task::Stance)?;
    if content_free_inputs.is_empty() {
        return Err(Error::Invalid("no content-free inputs".into()));
    }
    let tweets: Vec<TweetRecord> = content_free_inputs
        .iter()
        .enumerate()
        .map(|(i, t)| TweetRecord::new(format!("content-free-{i}"), topic, *t))
        .collect();
    let refs: Vec<&TweetRecord> = tweets.iter().collect();
    let dists = stance_dists(backend, spec, &refs)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    mean_dist(&dists)
}

fn mean_dist(dists: &[ProbDist]) -> Result<ProbDist> {
    let n = dists.len() as f64;
    let labels = dists[0].labels.clone();
    let mut mean = vec![0.0; labels.len()];
    for d in dists {
        for (m, p) in mean.iter_mut().zip(&d.probs) {
            *m += p / n;
        }
    }
    // Re-normalize away accumulated rounding.
    let s: f64 = mean.iter().sum();
    ProbDist::new(labels, mean.iter().map(|m| m / s).collect())
}

pub fn fit_calibration(
    backend: &dyn Backend,
    spec: &PromptSpec,
    topic: &str,
    content_free_inputs: &[&str],
) -> Result<Calibration> {
    Calibration::from_mean(&content_free_mean(backend, spec, topic, content_free_inputs)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationScope {
    PerTopic,
    Global,
}

/// Fitted calibrations keyed by topic, or a single global entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub scope: CalibrationScope,
    pub template_id: String,
    pub shots: usize,
    pub entries: BTreeMap<String, Calibration>,
}

pub const GLOBAL_KEY: &str = "*";

impl CalibrationSet {
    pub fn fit<'a>(
        backend: &dyn Backend,
        spec: &PromptSpec,
        topics: impl IntoIterator<Item = &'a str>,
        content_free_inputs: &[&str],
        scope: CalibrationScope,
    ) -> Result<Self> {
        let topics: Vec<&str> = topics.into_iter().collect();
        let mut entries = BTreeMap::new();
        match scope {
            CalibrationScope::PerTopic => {
                for t in &topics {
                    entries.insert(t.to_string(), fit_calibration(backend, spec, t, content_free_inputs)?);
                }
            }
            CalibrationScope::Global => {
                let means = topics
                    .iter()
                    .map(|t| content_free_mean(backend, spec, t, content_free_inputs))
                    .collect::<Result<Vec<_>>>()?;
                if means.is_empty() {
                    return Err(Error::Invalid("no topics to calibrate".into()));
                }
                entries.insert(GLOBAL_KEY.to_string(), Calibration::from_mean(&mean_dist(&means)?)?);
            }
        }
        Ok(Self {
            scope,
            template_id: spec.template_id().to_string(),
            shots: spec.exemplars().len(),
            entries,
        })
    }

    pub fn for_topic(&self, topic: &str) -> Option<&Calibration> {
        match self.scope {
            CalibrationScope::PerTopic => self.entries.get(topic),
            CalibrationScope::Global => self.entries.get(GLOBAL_KEY),
        }
    }
}

fn decide_stance(p: &ProbDist, cal: Option<&Calibration>) -> Result<(Stance, ProbDist)> {
    let q = match cal {
        Some(c) => c.apply(p)?,
        None => p.clone(),
    };
    // Ties go to `against`.
    let stance = if q.probs[0] > q.probs[1] { Stance::For } else { Stance::Against };
    Ok((stance, q))
}

pub fn predict_stance(
    backend: &dyn Backend,
    tweet: &TweetRecord,
    spec: &PromptSpec,
    cal: Option<&Calibration>,
) -> Result<(Stance, ProbDist)> {
    require_task(spec, Task::Stance)?;
    let p = stance_dists(backend, spec, &[tweet]).pop().unwrap()?;
    decide_stance(&p, cal)
}

/// Order-preserving batch form of [`predict_stance`]; the calibration for
/// each tweet is looked up by its topic.
pub fn predict_stance_batch(
    backend: &dyn Backend,
    tweets: &[&TweetRecord],
    spec: &PromptSpec,
    cals: Option<&CalibrationSet>,
) -> Result<Vec<Result<(Stance, ProbDist)>>> {
    require_task(spec, Task::Stance)?;
    Ok(stance_dists(backend, spec, tweets)
        .into_iter()
        .zip(tweets)
        .map(|(p, t)| {
            let cal = match cals {
                Some(set) => Some(
                    set.for_topic(&t.topic)
                        .ok_or_else(|| Error::UnknownTopic(format!("{} (no calibration)", t.topic)))?,
                ),
                None => None,
            };
            decide_stance(&p?, cal)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectPrediction {
    pub tokens: Vec<String>,
    /// `None` records an abstention.
    pub span: Option<TokenSpan>,
    pub tags: TagSequence,
    /// Generated text the span was aligned from.
    pub generated: Option<String>,
}

impl AspectPrediction {
    fn abstain(tokens: Vec<String>) -> Self {
        let tags = TagSequence::all_outside(tokens.len());
        Self {
            tokens,
            span: None,
            tags,
            generated: None,
        }
    }

    pub fn is_abstention(&self) -> bool {
        self.span.is_none()
    }

    pub fn aspect_text(&self) -> Option<String> {
        self.span.map(|s| self.tokens[s.start..=s.end].join(" "))
    }
}

/// Decode restriction for a tweet: allowed content words in order of first
/// appearance, and the stop words and special characters it contains.
pub fn aspect_vocabulary(tokens: &[String]) -> (Vec<String>, Vec<String>) {
    let mut allowed: Vec<String> = Vec::new();
    let mut forbidden: Vec<String> = Vec::new();
    for t in tokens {
        let bucket = if is_stopword(t) || is_special(t) { &mut forbidden } else { &mut allowed };
        if !bucket.contains(t) {
            bucket.push(t.clone());
        }
    }
    (allowed, forbidden)
}

fn aspect_request(prompt: String, allowed: Vec<String>, forbidden: Vec<String>) -> GenRequest {
    let mut req = GenRequest::new(prompt, ASPECT_MAX_TOKENS);
    req.allowed_words = Some(allowed);
    req.forbidden_words = (!forbidden.is_empty()).then_some(forbidden);
    req
}

/// Align the first candidate (best first) that matches a contiguous span.
fn align_candidates(tokens: Vec<String>, cands: &[GenCandidate]) -> AspectPrediction {
    for c in cands {
        let words = tokenize(&c.text);
        if let Some(span) = align_span(&tokens, &words) {
            let tags = TagSequence::from_span(tokens.len(), Some(span)).expect("aligned span is in bounds");
            return AspectPrediction {
                tokens,
                span: Some(span),
                tags,
                generated: Some(c.text.clone()),
            };
        }
    }
    AspectPrediction::abstain(tokens)
}

pub fn predict_aspect(backend: &dyn Backend, tweet: &TweetRecord, spec: &PromptSpec) -> Result<AspectPrediction> {
    predict_aspect_batch(backend, &[tweet], spec)?.pop().unwrap()
}

pub fn predict_aspect_batch(
    backend: &dyn Backend,
    tweets: &[&TweetRecord],
    spec: &PromptSpec,
) -> Result<Vec<Result<AspectPrediction>>> {
    require_task(spec, Task::Aspect)?;
    let prompts = final_prompts(backend, spec, tweets);
    let mut out: Vec<Option<Result<AspectPrediction>>> = tweets.iter().map(|_| None).collect();
    let mut reqs = Vec::new();
    let mut pending = Vec::new();
    for (i, (tweet, prompt)) in tweets.iter().zip(prompts).enumerate() {
        let tokens = tokenize(&tweet.text);
        if tokens.is_empty() {
            out[i] = Some(Err(Error::Invalid(format!("tweet `{}` has no tokens", tweet.id))));
            continue;
        }
        let prompt = match prompt {
            Ok(p) => p,
            Err(e) => {
                out[i] = Some(Err(e));
                continue;
            }
        };
        let (allowed, forbidden) = aspect_vocabulary(&tokens);
        if allowed.is_empty() {
            out[i] = Some(Ok(AspectPrediction::abstain(tokens)));
            continue;
        }
        reqs.push(aspect_request(prompt, allowed, forbidden));
        pending.push((i, tokens));
    }
    let results: Vec<BackendResult<Vec<GenCandidate>>> = backend.generate_batch(&reqs);
    for ((i, tokens), r) in pending.into_iter().zip(results) {
        out[i] = Some(r.map_err(Error::from).map(|cands| align_candidates(tokens, &cands)));
    }
    Ok(out.into_iter().map(|r| r.expect("filled")).collect())
}
