//! The `narrative` command line.
//!
//! Data goes to files only; diagnostics go to stderr through `log`. Every
//! output file is written atomically.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::bio::TagSequence;
use crate::config::{CandidateSource, PipelineConfig, BACKEND_URL_ENV};
use crate::corpus::{filter_dump, load_raw_dump, load_records, save_records, validate_against, TweetRecord};
use crate::error::{Error, Result};
use crate::head::{
    embed_all, load_checkpoint, predict_narrative_cls, predict_narrative_t2t, save_checkpoint, train, HeadModel,
};
use crate::icl::{
    load_exemplars, predict_aspect_batch, predict_stance_batch, CalibrationScope, CalibrationSet, PromptSpec, Stance,
    Task,
};
use crate::io::{self, ProgressLog};
use crate::metrics::{self, report, MetricReport};
use crate::pcg::{self, generate_candidates, merge_training_set, CandidateRecord, PcgConfig, Provenance};
use crate::taxonomy::{load_taxonomy, Taxonomy};
use crate::template::Template;

#[derive(Debug, Parser)]
#[command(name = "narrative", version, about = "Narrative prediction pipeline")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the mock backend and head training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Backend base URL, or `mock`.
    #[arg(long, global = true, env = BACKEND_URL_ENV)]
    pub backend_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, global = true)]
    pub exemplars: Option<PathBuf>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictTask {
    Stance,
    Aspect,
    NarrativeCls,
    NarrativeT2t,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Narrative,
    Stance,
    Aspect,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum ReportKind {
    /// Render table fixtures as aligned text.
    Table {
        #[arg(required = true)]
        fixtures: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Convert a score-versus-shots fixture to tab-separated columns.
    Plot {
        fixture: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Mean scores and agreement tables from raw annotations.
    HumanEval {
        annotations: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter and clean a raw tweet dump.
    Clean(InOut),
    /// Fit stance calibration on content-free inputs for the topics in the input.
    Calibrate {
        #[command(flatten)]
        io: InOut,
        #[arg(long, value_enum)]
        scope: Option<ScopeArg>,
    },
    /// Batch prediction.
    Predict {
        #[arg(value_enum)]
        task: PredictTask,
        #[command(flatten)]
        io: InOut,
        /// Calibration file for stance prediction.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Head checkpoint for narrative classification.
        #[arg(long)]
        heads: Option<PathBuf>,
    },
    /// Generate labelled candidate tweets.
    GenCandidates {
        #[command(flatten)]
        io: InOut,
        #[arg(long, value_enum)]
        source: Option<CandidateSource>,
        /// Evaluation records that must not appear in a pool source.
        #[arg(long)]
        exclude: Option<PathBuf>,
        #[arg(long)]
        per_record: Option<usize>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Also write originals plus candidates as a training set.
        #[arg(long)]
        merged: Option<PathBuf>,
    },
    /// Train one classification head per topic.
    TrainHead {
        #[arg(long)]
        input: PathBuf,
        /// Candidate file to merge into the training data.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Head checkpoint to write.
        #[arg(long)]
        output: PathBuf,
        /// Per-epoch loss trace.
        #[arg(long)]
        loss_trace: Option<PathBuf>,
    },
    /// Score predictions against gold data.
    Eval {
        #[arg(value_enum)]
        kind: EvalKind,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Annotator agreement and mean scores from human evaluation records.
    Agreement(InOut),
    /// Render tables and plot data.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    PerTopic,
    Global,
}

impl From<ScopeArg> for CalibrationScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::PerTopic => CalibrationScope::PerTopic,
            ScopeArg::Global => CalibrationScope::Global,
        }
    }
}

/// Prediction record for `predict stance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceOutput {
    pub id: String,
    pub topic: String,
    pub stance: Stance,
    pub p_for: f64,
    pub p_against: f64,
}

/// Prediction record for `predict aspect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectOutput {
    pub id: String,
    pub topic: String,
    pub tokens: Vec<String>,
    pub tags: TagSequence,
    pub aspect: Option<String>,
}

/// Prediction record for both narrative tasks; `class` is absent for text2text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeOutput {
    pub id: String,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    pub narrative: String,
}

/// Gold stance and aspect annotations keyed by record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldLabel {
    pub id: String,
    #[serde(default)]
    pub stance: Option<Stance>,
    #[serde(default)]
    pub tags: Option<TagSequence>,
}

/// Resolved configuration and shared resources for one invocation.
pub struct Context {
    pub config: PipelineConfig,
    backend: Option<Arc<dyn Backend>>,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        if let Some(u) = &cli.backend_url {
            config.backend.url = u.clone();
        }
        if let Some(m) = &cli.model {
            config.backend.model = m.clone();
        }
        if let Some(t) = &cli.taxonomy {
            config.taxonomy = Some(t.clone());
        }
        if let Some(e) = &cli.exemplars {
            config.exemplars = Some(e.clone());
        }
        Self::new(config)
    }

    pub fn new(mut config: PipelineConfig) -> Result<Self> {
        // One seed drives every stochastic component.
        config.train.seed = config.seed;
        config.validate()?;
        Ok(Self { config, backend: None })
    }

    fn backend(&mut self) -> Result<Arc<dyn Backend>> {
        if self.backend.is_none() {
            self.backend = Some(self.config.build_backend()?);
        }
        Ok(Arc::clone(self.backend.as_ref().unwrap()))
    }

    fn taxonomy(&self) -> Result<Taxonomy> {
        let p = self
            .config
            .taxonomy
            .as_ref()
            .ok_or_else(|| Error::Config("a taxonomy file is required (--taxonomy or `taxonomy` in the config)".into()))?;
        load_taxonomy(p)
    }

    fn spec(&self, task: Task) -> Result<PromptSpec> {
        let exemplars = match &self.config.exemplars {
            Some(p) => load_exemplars(p)?,
            None => Vec::new(),
        };
        let shots: Vec<_> = exemplars.into_iter().take(self.config.icl.shots).collect();
        let template_path = match task {
            Task::Stance => &self.config.icl.stance_template,
            Task::Aspect => &self.config.icl.aspect_template,
        };
        let template = match template_path {
            Some(p) => Template::load(p)?,
            None => Template::builtin(task.default_template())?,
        };
        PromptSpec::with_template(self.config.icl.mode, task, shots, template)
    }
}

fn load_calibration(path: &Path) -> Result<CalibrationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    io::write_atomic(path, s.as_bytes())
}

fn check_unique(records: &[TweetRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    match records.iter().find(|r| !seen.insert(r.id.as_str())) {
        Some(r) => Err(Error::DuplicateId(r.id.clone())),
        None => Ok(()),
    }
}

pub fn cmd_clean(input: &Path, output: &Path) -> Result<usize> {
    let raw = load_raw_dump(input)?;
    let kept = filter_dump(&raw);
    let records: Vec<TweetRecord> = kept.iter().map(TweetRecord::from_raw).collect();
    log::info!("clean: {} of {} tweets kept", records.len(), raw.len());
    save_records(&records, output)?;
    Ok(records.len())
}

pub fn cmd_calibrate(ctx: &mut Context, input: &Path, output: &Path, scope: Option<CalibrationScope>) -> Result<()> {
    let records = load_records(input)?;
    let taxonomy = ctx.taxonomy()?;
    validate_against(&records, &taxonomy)?;
    let topics: BTreeSet<&str> = records.iter().map(|r| r.topic.as_str()).collect();
    let spec = ctx.spec(Task::Stance)?;
    let backend = ctx.backend()?;
    let inputs: Vec<&str> = ctx.config.icl.content_free.iter().map(String::as_str).collect();
    let scope = scope.unwrap_or(ctx.config.icl.calibration_scope);
    let set = CalibrationSet::fit(backend.as_ref(), &spec, topics, &inputs, scope)?;
    write_json(output, &set)
}

const PREDICT_CHUNK: usize = 32;

fn predict_key(ctx: &Context, task: PredictTask, input: &Path, extras: &[Option<&PathBuf>]) -> Result<String> {
    let mut material = format!(
        "{:?}|{}|{}|{:?}|{}|{}",
        task,
        io::file_hash(input)?,
        ctx.config.backend.model,
        ctx.config.icl,
        ctx.config.seed,
        ctx.config.backend.url
    );
    for p in extras.iter().flatten() {
        material.push('|');
        material.push_str(&io::file_hash(p)?);
    }
    if let Some(p) = &ctx.config.exemplars {
        material.push('|');
        material.push_str(&io::file_hash(p)?);
    }
    Ok(io::sha256_hex(material.as_bytes()))
}

/// Run `f` over chunks of records, logging each finished prediction so an
/// interrupted run resumes where it stopped.
fn resumable<T, F>(records: &[TweetRecord], log: &ProgressLog, id_of: fn(&T) -> String, mut f: F) -> Result<Vec<T>>
where
    T: Serialize + serde::de::DeserializeOwned,
    F: FnMut(&[&TweetRecord]) -> Result<Vec<Result<T>>>,
{
    let mut done: HashMap<String, T> = log.load(id_of)?;
    if !done.is_empty() {
        log::info!("resuming: {} of {} records already predicted", done.len(), records.len());
    }
    let mut file = log.open_for_append(done.is_empty())?;
    let todo: Vec<&TweetRecord> = records.iter().filter(|r| !done.contains_key(&r.id)).collect();
    for chunk in todo.chunks(PREDICT_CHUNK) {
        let mut first_err = None;
        for r in f(chunk)? {
            match r {
                Ok(v) => {
                    log.append(&mut file, &v)?;
                    done.insert(id_of(&v), v);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
    }
    Ok(records.iter().map(|r| done.remove(&r.id).expect("every record predicted")).collect())
}

fn progress_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".progress");
    PathBuf::from(s)
}

pub fn cmd_predict(
    ctx: &mut Context,
    task: PredictTask,
    input: &Path,
    output: &Path,
    calibration: Option<&PathBuf>,
    heads: Option<&PathBuf>,
) -> Result<()> {
    let records = load_records(input)?;
    check_unique(&records)?;
    let taxonomy = ctx.taxonomy()?;
    validate_against(&records, &taxonomy)?;
    let backend = ctx.backend()?;
    let b = backend.as_ref();
    let log = ProgressLog::new(progress_path(output), predict_key(ctx, task, input, &[calibration, heads])?);

    let body = match task {
        PredictTask::Stance => {
            let spec = ctx.spec(Task::Stance)?;
            let cal = calibration.map(|p| load_calibration(p)).transpose()?;
            let out = resumable(&records, &log, |o: &StanceOutput| o.id.clone(), |chunk| {
                Ok(predict_stance_batch(b, chunk, &spec, cal.as_ref())?
                    .into_iter()
                    .zip(chunk)
                    .map(|(r, t)| {
                        r.map(|(stance, q)| StanceOutput {
                            id: t.id.clone(),
                            topic: t.topic.clone(),
                            stance,
                            p_for: q.probs()[0],
                            p_against: q.probs()[1],
                        })
                    })
                    .collect())
            })?;
            io::to_jsonl(&out)
        }
        PredictTask::Aspect => {
            let spec = ctx.spec(Task::Aspect)?;
            let out = resumable(&records, &log, |o: &AspectOutput| o.id.clone(), |chunk| {
                Ok(predict_aspect_batch(b, chunk, &spec)?
                    .into_iter()
                    .zip(chunk)
                    .map(|(r, t)| {
                        r.map(|a| AspectOutput {
                            id: t.id.clone(),
                            topic: t.topic.clone(),
                            aspect: a.aspect_text(),
                            tokens: a.tokens,
                            tags: a.tags,
                        })
                    })
                    .collect())
            })?;
            io::to_jsonl(&out)
        }
        PredictTask::NarrativeCls => {
            let path = heads.ok_or_else(|| Error::Config("narrative-cls needs --heads".into()))?;
            let models: HashMap<String, HeadModel> =
                load_checkpoint(path)?.into_iter().map(|m| (m.topic.clone(), m)).collect();
            if let Some(r) = records.iter().find(|r| !models.contains_key(&r.topic)) {
                return Err(Error::Invalid(format!(
                    "no head for topic `{}` (record `{}`) in {}",
                    r.topic,
                    r.id,
                    path.display()
                )));
            }
            let out = resumable(&records, &log, |o: &NarrativeOutput| o.id.clone(), |chunk| {
                Ok(chunk
                    .iter()
                    .map(|t| {
                        predict_narrative_cls(b, &models[&t.topic], &taxonomy, t).map(|(c, n)| NarrativeOutput {
                            id: t.id.clone(),
                            topic: t.topic.clone(),
                            class: Some(c),
                            narrative: n,
                        })
                    })
                    .collect())
            })?;
            io::to_jsonl(&out)
        }
        PredictTask::NarrativeT2t => {
            let out = resumable(&records, &log, |o: &NarrativeOutput| o.id.clone(), |chunk| {
                Ok(chunk
                    .iter()
                    .map(|t| {
                        predict_narrative_t2t(b, t, &taxonomy).map(|n| NarrativeOutput {
                            id: t.id.clone(),
                            topic: t.topic.clone(),
                            class: None,
                            narrative: n,
                        })
                    })
                    .collect())
            })?;
            io::to_jsonl(&out)
        }
    };
    io::write_atomic(output, body.as_bytes())?;
    log.remove()
}

pub struct GenCandidatesArgs<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
    pub source: Option<CandidateSource>,
    pub exclude: Option<&'a Path>,
    pub per_record: Option<usize>,
    pub calibration: Option<&'a Path>,
    pub merged: Option<&'a Path>,
}

pub fn cmd_gen_candidates(ctx: &mut Context, args: GenCandidatesArgs) -> Result<usize> {
    let records = load_records(args.input)?;
    let taxonomy = ctx.taxonomy()?;
    validate_against(&records, &taxonomy)?;
    let source = args.source.unwrap_or(ctx.config.candidates.source);
    match (source, args.exclude) {
        (CandidateSource::Test, _) => log::warn!(
            "generating candidates from evaluation records: candidates share narratives and wording with the test set, \
             so scores on that set are optimistic"
        ),
        (CandidateSource::Pool, Some(ex)) => {
            let held: HashSet<String> = load_records(ex)?.into_iter().map(|r| r.id).collect();
            let clash: Vec<&str> = records.iter().filter(|r| held.contains(&r.id)).map(|r| r.id.as_str()).collect();
            if !clash.is_empty() {
                return Err(Error::Invalid(format!(
                    "pool overlaps the evaluation records: {}",
                    clash.join(", ")
                )));
            }
        }
        (CandidateSource::Pool, None) => {}
    }
    let stance_spec = ctx.spec(Task::Stance)?;
    let aspect_spec = ctx.spec(Task::Aspect)?;
    let cal = args.calibration.map(load_calibration).transpose()?;
    let cfg = PcgConfig {
        stance_spec: &stance_spec,
        aspect_spec: &aspect_spec,
        calibration: cal.as_ref(),
        per_record: args.per_record.unwrap_or(ctx.config.candidates.per_record),
        decode: ctx.config.decode,
    };
    let backend = ctx.backend()?;
    let checkpoint = pcg::Checkpoint::new(
        progress_path(args.output),
        pcg::run_key(&records, &cfg, backend.as_ref()) + &ctx.config.seed.to_string(),
    );
    let out = generate_candidates(backend.as_ref(), &records, &cfg, Some(&checkpoint))?;
    log::info!(
        "gen-candidates: {} candidates from {} records ({} skipped after aspect abstention)",
        out.candidates.len(),
        records.len(),
        out.skipped
    );
    pcg::save_candidates(&out.candidates, args.output)?;
    if let Some(m) = args.merged {
        io::write_jsonl(m, &merge_training_set(&records, &out.candidates)?)?;
    }
    checkpoint.remove()?;
    Ok(out.candidates.len())
}

/// Records from a plain record file or a merged training file.
fn load_training_records(path: &Path) -> Result<Vec<TweetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            if let Some(p) = obj.remove("provenance") {
                serde_json::from_value::<Provenance>(p).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            }
        }
        out.push(serde_json::from_value(v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn cmd_train_head(
    ctx: &mut Context,
    input: &Path,
    candidates: Option<&Path>,
    output: &Path,
    loss_trace: Option<&Path>,
) -> Result<Vec<HeadModel>> {
    let mut records = load_training_records(input)?;
    if let Some(c) = candidates {
        let cands: Vec<CandidateRecord> = pcg::load_candidates(c)?;
        records = merge_training_set(&records, &cands)?.into_iter().map(|t| t.record).collect();
    }
    check_unique(&records)?;
    let taxonomy = ctx.taxonomy()?;
    validate_against(&records, &taxonomy)?;
    let mut by_topic: BTreeMap<&str, Vec<&TweetRecord>> = BTreeMap::new();
    for r in &records {
        if r.narrative_label.is_none() {
            return Err(Error::Invalid(format!("record `{}` has no narrative label", r.id)));
        }
        by_topic.entry(&r.topic).or_default().push(r);
    }
    let backend = ctx.backend()?;
    let mut models = Vec::new();
    let mut trace = String::from("topic\tepoch\tloss\n");
    for (topic, recs) in by_topic {
        let set = taxonomy.set(topic)?;
        let texts: Vec<String> = recs.iter().map(|r| r.text.clone()).collect();
        let embs = embed_all(backend.as_ref(), &texts, ctx.config.embed_chunk())?;
        let dim = embs.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(recs.len());
        for (r, e) in recs.iter().zip(embs) {
            let label = r.narrative_label.unwrap();
            set.get(label)?;
            data.push((e, label));
        }
        let seed = io::stable_hash64(&[&ctx.config.seed.to_le_bytes(), topic.as_bytes()]);
        let init = HeadModel::init(topic, dim, set.len(), ctx.config.train.hidden_dim, seed);
        let outcome = train(&init, &data, &ctx.config.train)?;
        for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
            trace.push_str(&format!("{topic}\t{}\t{loss:?}\n", epoch + 1));
        }
        let mut model = outcome.model;
        model.backend_model = backend.model_id().to_string();
        log::info!("train-head: `{topic}` on {} records, {} classes", data.len(), set.len());
        models.push(model);
    }
    save_checkpoint(&models, output)?;
    if let Some(p) = loss_trace {
        io::write_atomic(p, trace.as_bytes())?;
    }
    Ok(models)
}

fn index_by_id<T>(items: Vec<T>, id: impl Fn(&T) -> &str, path: &Path) -> Result<HashMap<String, T>> {
    let mut m = HashMap::new();
    for it in items {
        let k = id(&it).to_string();
        if m.insert(k.clone(), it).is_some() {
            return Err(Error::Invalid(format!("{}: duplicate id `{k}`", path.display())));
        }
    }
    Ok(m)
}

/// Pair predictions with gold items by id, in gold order. Both sides must
/// cover the same ids.
fn align<'a, P, G>(preds: &'a HashMap<String, P>, gold: &'a [G], gold_id: impl Fn(&G) -> &str) -> Result<Vec<(&'a P, &'a G)>> {
    if preds.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: gold.len(),
        });
    }
    gold.iter()
        .map(|g| {
            preds
                .get(gold_id(g))
                .map(|p| (p, g))
                .ok_or_else(|| Error::Invalid(format!("no prediction for gold id `{}`", gold_id(g))))
        })
        .collect()
}

fn per_topic<T>(items: &[T], topic: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<&T>> {
    let mut m: BTreeMap<String, Vec<&T>> = BTreeMap::new();
    m.insert(ALL_TOPICS.to_string(), items.iter().collect());
    for it in items {
        m.entry(topic(it).to_string()).or_default().push(it);
    }
    m
}

/// Topic key for reports pooled over all topics.
pub const ALL_TOPICS: &str = "*";

pub fn cmd_eval(ctx: &mut Context, kind: EvalKind, pred: &Path, gold: &Path, output: &Path) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::new();
    match kind {
        EvalKind::Narrative => {
            let taxonomy = ctx.taxonomy()?;
            let golds = load_records(gold)?;
            validate_against(&golds, &taxonomy)?;
            let preds = index_by_id(io::read_jsonl::<NarrativeOutput>(pred)?, |p| &p.id, pred)?;
            let pairs = align(&preds, &golds, |g| &g.id)?;
            for (topic, group) in per_topic(&pairs, |(_, g)| &g.topic) {
                let mut rep = MetricReport::new(topic);
                let mut cands = Vec::new();
                let mut refs = Vec::new();
                let mut hits = 0u64;
                let mut with_class = 0u64;
                for (p, g) in group {
                    let label = g
                        .narrative_label
                        .ok_or_else(|| Error::Invalid(format!("gold record `{}` has no narrative label", g.id)))?;
                    cands.push(p.narrative.clone());
                    refs.push(taxonomy.lookup_g(&g.topic, label)?.to_string());
                    if let Some(c) = p.class {
                        with_class += 1;
                        hits += (c == label) as u64;
                    }
                }
                rep.set("rouge_l_f1", metrics::mean_pairwise(&cands, &refs, metrics::rouge_l_f1)?)?;
                if with_class > 0 {
                    rep.set("accuracy", hits as f64 / with_class as f64)?;
                }
                rep.count("pairs", cands.len() as u64);
                reports.push(rep);
            }
        }
        EvalKind::Stance => {
            let golds: Vec<GoldLabel> = io::read_jsonl(gold)?;
            let preds = index_by_id(io::read_jsonl::<StanceOutput>(pred)?, |p| &p.id, pred)?;
            let pairs = align(&preds, &golds, |g| &g.id)?;
            for (topic, group) in per_topic(&pairs, |(p, _)| &p.topic) {
                let mut g = Vec::new();
                let mut p = Vec::new();
                for (pr, gl) in group {
                    let s = gl
                        .stance
                        .ok_or_else(|| Error::Invalid(format!("gold `{}` has no stance", gl.id)))?;
                    g.push(s.code());
                    p.push(pr.stance.code());
                }
                let (f1, acc) = metrics::stance_scores(&g, &p)?;
                let mut rep = MetricReport::new(topic);
                rep.set("micro_f1", f1)?;
                rep.set("accuracy", acc)?;
                rep.count("items", g.len() as u64);
                reports.push(rep);
            }
        }
        EvalKind::Aspect => {
            let golds: Vec<GoldLabel> = io::read_jsonl(gold)?;
            let preds = index_by_id(io::read_jsonl::<AspectOutput>(pred)?, |p| &p.id, pred)?;
            let pairs = align(&preds, &golds, |g| &g.id)?;
            for (topic, group) in per_topic(&pairs, |(p, _)| &p.topic) {
                let mut g = Vec::new();
                let mut p = Vec::new();
                for (pr, gl) in group {
                    g.push(
                        gl.tags
                            .clone()
                            .ok_or_else(|| Error::Invalid(format!("gold `{}` has no tags", gl.id)))?,
                    );
                    p.push(pr.tags.clone());
                }
                let (f1, acc) = metrics::bio_scores_corpus(&g, &p)?;
                let mut rep = MetricReport::new(topic);
                rep.set("micro_f1", f1)?;
                rep.set("accuracy", acc)?;
                rep.count("sequences", g.len() as u64);
                reports.push(rep);
            }
        }
        EvalKind::Text => {
            let golds = load_records(gold)?;
            let by_id: HashMap<&str, &TweetRecord> = golds.iter().map(|g| (g.id.as_str(), g)).collect();
            let cands = pcg::load_candidates(pred)?;
            let mut pairs = Vec::with_capacity(cands.len());
            for c in &cands {
                let src = by_id
                    .get(c.source_id.as_str())
                    .ok_or_else(|| Error::Invalid(format!("candidate `{}` cites unknown source `{}`", c.id, c.source_id)))?;
                pairs.push((c, *src));
            }
            if pairs.is_empty() {
                return Err(Error::Invalid("no candidates to score".into()));
            }
            let backend = ctx.backend()?;
            for (topic, group) in per_topic(&pairs, |(c, _)| &c.topic) {
                let c: Vec<String> = group.iter().map(|(c, _)| c.generated_text.clone()).collect();
                let r: Vec<String> = group.iter().map(|(_, s)| s.text.clone()).collect();
                let mut rep = MetricReport::new(topic);
                metrics::text_suite(&c, &r, &mut rep)?;
                let bs = metrics::bertscore_corpus(backend.as_ref(), &c, &r)?;
                rep.set("bertscore_f1", bs.f1)?;
                rep.set("bertscore_p", bs.precision)?;
                rep.set("bertscore_r", bs.recall)?;
                reports.push(rep);
            }
        }
    }
    io::write_atomic(output, metrics::render_reports(&reports).as_bytes())?;
    Ok(reports)
}

pub fn cmd_agreement(input: &Path, output: &Path) -> Result<metrics::HumanEvalSummary> {
    let summary = metrics::human_eval_ingest(input)?;
    write_json(output, &summary)?;
    Ok(summary)
}

pub fn cmd_report(kind: &ReportKind) -> Result<()> {
    match kind {
        ReportKind::Table { fixtures, output } => {
            let mut out = String::new();
            for (i, f) in fixtures.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                out.push_str(&report::render_table(&report::ReportTable::load(f)?)?);
            }
            io::write_atomic(output, out.as_bytes())
        }
        ReportKind::Plot { fixture, output } => {
            io::write_atomic(output, report::render_plot_tsv(&report::PlotData::load(fixture)?)?.as_bytes())
        }
        ReportKind::HumanEval { annotations, output } => {
            let s = metrics::human_eval_ingest(annotations)?;
            let mut out = report::render_table(&report::human_eval_table(&s, "Human evaluation: mean scores"))?;
            out.push('\n');
            out.push_str(&report::render_agreement_table(&s, "Annotator agreement (kappa/alpha)"));
            io::write_atomic(output, out.as_bytes())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Report { kind } = &cli.command {
        return cmd_report(kind);
    }
    if let Command::Clean(a) = &cli.command {
        return cmd_clean(&a.input, &a.output).map(|_| ());
    }
    if let Command::Agreement(a) = &cli.command {
        return cmd_agreement(&a.input, &a.output).map(|_| ());
    }
    let mut ctx = Context::from_cli(&cli)?;
    match &cli.command {
        Command::Calibrate { io, scope } => cmd_calibrate(&mut ctx, &io.input, &io.output, scope.map(Into::into)),
        Command::Predict {
            task,
            io,
            calibration,
            heads,
        } => cmd_predict(&mut ctx, *task, &io.input, &io.output, calibration.as_ref(), heads.as_ref()),
        Command::GenCandidates {
            io,
            source,
            exclude,
            per_record,
            calibration,
            merged,
        } => cmd_gen_candidates(
            &mut ctx,
            GenCandidatesArgs {
                input: &io.input,
                output: &io.output,
                source: *source,
                exclude: exclude.as_deref(),
                per_record: *per_record,
                calibration: calibration.as_deref(),
                merged: merged.as_deref(),
            },
        )
        .map(|_| ()),
        Command::TrainHead {
            input,
            candidates,
            output,
            loss_trace,
        } => cmd_train_head(&mut ctx, input, candidates.as_deref(), output, loss_trace.as_deref()).map(|_| ()),
        Command::Eval { kind, pred, gold, output } => cmd_eval(&mut ctx, *kind, pred, gold, output).map(|_| ()),
        Command::Clean(_) | Command::Agreement(_) | Command::Report { .. } => unreachable!("handled above"),
    }
}

/// Entry point for the binary: parse arguments, run, map errors to exit code 1.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
