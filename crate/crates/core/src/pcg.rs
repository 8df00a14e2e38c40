//! Synthetic candidate generation.
//!
//! For each labelled tweet the stance and aspect are predicted in context,
//! the backend is asked for a new tweet that takes that stance and contains
//! the aspect words, and the source tweet's narrative label is copied onto
//! the result. Candidates are meant to be merged into the training set.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenRequest, DEFAULT_NUM_BEAMS, DEFAULT_TEMPERATURE, DEFAULT_TOP_P};
use crate::corpus::TweetRecord;
use crate::error::{Error, Result};
use crate::icl::{predict_aspect_batch, predict_stance_batch, CalibrationSet, PromptSpec, Stance, Task};
use crate::io;
use crate::template::Template;

pub const CONDITION_TEMPLATE: &str = "condition-v1";
pub const CANDIDATE_MAX_TOKENS: u32 = 48;
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Candidate,
}

/// A synthetic tweet. Serialized in the record format plus `source_id`,
/// `backend_model`, `provenance`, the predicted `stance` and `aspect_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub id: String,
    pub topic: String,
    #[serde(rename = "text")]
    pub generated_text: String,
    pub narrative_label: usize,
    pub source_id: String,
    pub backend_model: String,
    pub provenance: Provenance,
    pub stance: Stance,
    pub aspect_text: String,
}

impl CandidateRecord {
    pub fn to_record(&self) -> TweetRecord {
        TweetRecord::new(self.id.clone(), self.topic.clone(), self.generated_text.clone())
            .with_label(self.narrative_label)
    }
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateRecord>> {
    io::read_jsonl(path)
}

pub fn save_candidates(candidates: &[CandidateRecord], path: &Path) -> Result<()> {
    io::write_jsonl(path, candidates)
}

/// Prompt asking for a tweet about `topic` taking `stance` and containing
/// `aspect_text` verbatim.
pub fn condition_prompt(topic: &str, stance: Stance, aspect_text: &str) -> Result<String> {
    condition_prompt_with(&Template::builtin(CONDITION_TEMPLATE)?, topic, stance, aspect_text)
}

pub fn condition_prompt_with(template: &Template, topic: &str, stance: Stance, aspect_text: &str) -> Result<String> {
    if aspect_text.trim().is_empty() {
        return Err(Error::Invalid("aspect text must be non-empty".into()));
    }
    template.render(
        "body",
        &[("topic", topic), ("stance", stance.label()), ("aspect", aspect_text)],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub num_beams: u32,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            num_beams: DEFAULT_NUM_BEAMS,
            max_tokens: CANDIDATE_MAX_TOKENS,
        }
    }
}

pub struct PcgConfig<'a> {
    pub stance_spec: &'a PromptSpec,
    pub aspect_spec: &'a PromptSpec,
    pub calibration: Option<&'a CalibrationSet>,
    pub per_record: usize,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcgOutput {
    pub candidates: Vec<CandidateRecord>,
    /// Records skipped because their aspect prediction abstained.
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointEntry {
    source_id: String,
    skipped: bool,
    candidates: Vec<CandidateRecord>,
}

/// Progress log for a candidate run.
pub type Checkpoint = io::ProgressLog;

/// Key identifying a candidate run over `records` with `cfg` and `backend`.
pub fn run_key(records: &[TweetRecord], cfg: &PcgConfig, backend: &dyn Backend) -> String {
    let mut material = io::to_jsonl(records);
    material.push_str(&format!(
        "|{}|{}|{}|{}|{}|{}|{:?}",
        backend.model_id(),
        cfg.stance_spec.template_id(),
        cfg.aspect_spec.template_id(),
        cfg.stance_spec.exemplars().len(),
        cfg.aspect_spec.exemplars().len(),
        cfg.per_record,
        cfg.decode,
    ));
    io::sha256_hex(material.as_bytes())
}

fn process_chunk(backend: &dyn Backend, chunk: &[&TweetRecord], cfg: &PcgConfig) -> Result<Vec<Result<CheckpointEntry>>> {
    let stances = predict_stance_batch(backend, chunk, cfg.stance_spec, cfg.calibration)?;
    let aspects = predict_aspect_batch(backend, chunk, cfg.aspect_spec)?;

    let mut out: Vec<Option<Result<CheckpointEntry>>> = chunk.iter().map(|_| None).collect();
    let mut reqs = Vec::new();
    let mut pending = Vec::new();
    for (i, ((rec, st), asp)) in chunk.iter().zip(stances).zip(aspects).enumerate() {
        let (stance, aspect) = match (st, asp) {
            (Ok((s, _)), Ok(a)) => (s, a),
            (Err(e), _) | (_, Err(e)) => {
                out[i] = Some(Err(e));
                continue;
            }
        };
        let Some(aspect_text) = aspect.aspect_text() else {
            out[i] = Some(Ok(CheckpointEntry {
                source_id: rec.id.clone(),
                skipped: true,
                candidates: vec![],
            }));
            continue;
        };
        let prompt = condition_prompt(&rec.topic, stance, &aspect_text)?;
        let mut req = GenRequest::new(prompt, cfg.decode.max_tokens);
        req.temperature = cfg.decode.temperature;
        req.top_p = cfg.decode.top_p;
        req.num_beams = cfg.decode.num_beams;
        reqs.push(req);
        pending.push((i, stance, aspect_text));
    }

    for ((i, stance, aspect_text), r) in pending.into_iter().zip(backend.generate_batch(&reqs)) {
        let rec = chunk[i];
        out[i] = Some(r.map_err(Error::from).map(|cands| {
            let label = rec.narrative_label.expect("checked by caller");
            let candidates = cands
                .into_iter()
                .filter(|c| !c.text.trim().is_empty())
                .take(cfg.per_record)
                .enumerate()
                .map(|(j, c)| CandidateRecord {
                    id: format!("{}#c{j}", rec.id),
                    topic: rec.topic.clone(),
                    generated_text: c.text,
                    narrative_label: label,
                    source_id: rec.id.clone(),
                    backend_model: backend.model_id().to_string(),
                    provenance: Provenance::Candidate,
                    stance,
                    aspect_text: aspect_text.clone(),
                })
                .collect();
            CheckpointEntry {
                source_id: rec.id.clone(),
                skipped: false,
                candidates,
            }
        }));
    }
    Ok(out.into_iter().map(|e| e.expect("filled")).collect())
}

/// Generate up to `per_record` candidates per labelled record.
///
/// With a checkpoint, progress is appended after every chunk; a backend
/// failure returns the error with all completed records already logged, and
/// a later call with the same inputs resumes from there.
pub fn generate_candidates(
    backend: &dyn Backend,
    records: &[TweetRecord],
    cfg: &PcgConfig,
    checkpoint: Option<&Checkpoint>,
) -> Result<PcgOutput> {
    if cfg.stance_spec.task() != Task::Stance || cfg.aspect_spec.task() != Task::Aspect {
        return Err(Error::Invalid("candidate generation needs a stance spec and an aspect spec".into()));
    }
    if cfg.per_record == 0 {
        return Err(Error::Invalid("per_record must be positive".into()));
    }
    if let Some(r) = records.iter().find(|r| r.narrative_label.is_none()) {
        return Err(Error::Invalid(format!("record `{}` has no narrative label", r.id)));
    }
    let mut seen = HashSet::new();
    if let Some(r) = records.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(Error::DuplicateId(r.id.clone()));
    }

    let mut done = match checkpoint {
        Some(c) => c.load(|e: &CheckpointEntry| e.source_id.clone())?,
        None => HashMap::new(),
    };
    let mut log_file = match checkpoint {
        Some(c) => Some(c.open_for_append(done.is_empty())?),
        None => None,
    };

    let todo: Vec<&TweetRecord> = records.iter().filter(|r| !done.contains_key(&r.id)).collect();
    for chunk in todo.chunks(CHUNK) {
        let results = process_chunk(backend, chunk, cfg)?;
        let mut first_err = None;
        for r in results {
            match r {
                Ok(entry) => {
                    if let (Some(c), Some(f)) = (checkpoint, log_file.as_mut()) {
                        c.append(f, &entry)?;
                    }
                    done.insert(entry.source_id.clone(), entry);
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

    let mut out = PcgOutput {
        candidates: Vec::new(),
        skipped: 0,
    };
    for r in records {
        let entry = done.remove(&r.id).expect("every record processed");
        if entry.skipped {
            out.skipped += 1;
        }
        out.candidates.extend(entry.candidates);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    #[serde(flatten)]
    pub record: TweetRecord,
    pub provenance: Provenance,
}

/// Originals followed by candidates, each tagged with its provenance.
pub fn merge_training_set(original: &[TweetRecord], candidates: &[CandidateRecord]) -> Result<Vec<TrainingRecord>> {
    let mut ids = HashSet::new();
    for id in original.iter().map(|r| &r.id).chain(candidates.iter().map(|c| &c.id)) {
        if !ids.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(original
        .iter()
        .map(|r| TrainingRecord {
            record: r.clone(),
            provenance: Provenance::Original,
        })
        .chain(candidates.iter().map(|c| TrainingRecord {
            record: c.to_record(),
            provenance: Provenance::Candidate,
        }))
        .collect())
}
