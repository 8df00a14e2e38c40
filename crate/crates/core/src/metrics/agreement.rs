//! Inter-annotator agreement and ingestion of human evaluation records.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair<T>(a: &[T], b: &[T], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < min {
        return Err(Error::Invalid(format!("agreement needs at least {min} items, got {}", a.len())));
    }
    Ok(())
}

/// Cohen's kappa for two annotators. Returns 1 when chance agreement is 1.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    check_pair(a, b, 1)?;
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ma: BTreeMap<&T, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&T, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1.0;
        *mb.entry(y).or_default() += 1.0;
    }
    let p_e: f64 = ma.iter().map(|(k, ca)| ca * mb.get(k).copied().unwrap_or(0.0)).sum::<f64>() / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Krippendorff's alpha with the nominal distance for two annotators and no
/// missing values, computed from the coincidence matrix. Returns 1 when the
/// expected disagreement is zero.
pub fn krippendorff_alpha_nominal<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    check_pair(a, b, 2)?;
    // Each unit contributes its ordered value pairs with weight 1/(m_u - 1) = 1.
    let mut n_c: BTreeMap<&T, f64> = BTreeMap::new();
    let mut disagree = 0.0;
    for (x, y) in a.iter().zip(b) {
        *n_c.entry(x).or_default() += 1.0;
        *n_c.entry(y).or_default() += 1.0;
        if x != y {
            disagree += 2.0;
        }
    }
    let n: f64 = n_c.values().sum();
    let sum_sq: f64 = n_c.values().map(|v| v * v).sum();
    let expected = n * n - sum_sq;
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * disagree / expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Persuasiveness,
    Fluency,
    ArgumentQuality,
    Meaning,
}

impl Scale {
    pub const ALL: [Scale; 4] = [Scale::Persuasiveness, Scale::Fluency, Scale::ArgumentQuality, Scale::Meaning];

    pub fn bounds(self) -> (u8, u8) {
        match self {
            Scale::Persuasiveness | Scale::Fluency => (1, 3),
            Scale::ArgumentQuality | Scale::Meaning => (1, 5),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Scale::Persuasiveness => "persuasiveness",
            Scale::Fluency => "fluency",
            Scale::ArgumentQuality => "argument_quality",
            Scale::Meaning => "meaning",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Scale::Persuasiveness => "Persuasiveness",
            Scale::Fluency => "Fluency",
            Scale::ArgumentQuality => "Argument",
            Scale::Meaning => "Meaning",
        }
    }
}

/// One annotator's judgement of one generated candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub model: String,
    pub topic: String,
    pub item: String,
    pub annotator: String,
    pub argument_quality: u8,
    pub persuasiveness: u8,
    pub fluency: u8,
    pub meaning: u8,
}

impl Annotation {
    pub fn score(&self, s: Scale) -> u8 {
        match s {
            Scale::Persuasiveness => self.persuasiveness,
            Scale::Fluency => self.fluency,
            Scale::ArgumentQuality => self.argument_quality,
            Scale::Meaning => self.meaning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub kappa: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub items: usize,
    pub means: BTreeMap<Scale, f64>,
    /// Absent for a scale when fewer than two items were rated.
    pub agreement: BTreeMap<Scale, Agreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalSummary {
    pub models: BTreeMap<String, ModelSummary>,
}

/// Validate annotations and summarize them per model. Every
/// `(model, topic, item)` must be rated by exactly two distinct annotators.
pub fn summarize_human_eval(records: &[Annotation], origin: &Path) -> Result<HumanEvalSummary> {
    type Key<'a> = (&'a str, &'a str, &'a str);
    let mut units: BTreeMap<Key, Vec<(usize, &Annotation)>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for s in Scale::ALL {
            let (lo, hi) = s.bounds();
            let v = r.score(s);
            if !(lo..=hi).contains(&v) {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!(
                        "item `{}` by `{}`: {} = {v} outside {lo}..={hi}",
                        r.item,
                        r.annotator,
                        s.key()
                    ),
                ));
            }
        }
        units.entry((&r.model, &r.topic, &r.item)).or_default().push((i, r));
    }
    let mut per_model: BTreeMap<&str, Vec<[&Annotation; 2]>> = BTreeMap::new();
    for ((model, topic, item), mut anns) in units {
        let names: BTreeSet<&str> = anns.iter().map(|(_, a)| a.annotator.as_str()).collect();
        if anns.len() != 2 || names.len() != 2 {
            return Err(Error::parse(
                origin,
                anns[0].0 + 1,
                format!(
                    "item `{item}` ({model}, {topic}) has {} annotations from {} annotators; exactly 2 distinct are required",
                    anns.len(),
                    names.len()
                ),
            ));
        }
        anns.sort_by(|x, y| x.1.annotator.cmp(&y.1.annotator));
        per_model.entry(model).or_default().push([anns[0].1, anns[1].1]);
    }
    let mut models = BTreeMap::new();
    for (model, pairs) in per_model {
        let mut means = BTreeMap::new();
        let mut agreement = BTreeMap::new();
        for s in Scale::ALL {
            let a: Vec<u8> = pairs.iter().map(|p| p[0].score(s)).collect();
            let b: Vec<u8> = pairs.iter().map(|p| p[1].score(s)).collect();
            let total: f64 = a.iter().chain(&b).map(|&v| v as f64).sum();
            means.insert(s, total / (2 * pairs.len()) as f64);
            if pairs.len() >= 2 {
                agreement.insert(
                    s,
                    Agreement {
                        kappa: cohen_kappa(&a, &b)?,
                        alpha: krippendorff_alpha_nominal(&a, &b)?,
                    },
                );
            }
        }
        models.insert(
            model.to_string(),
            ModelSummary {
                items: pairs.len(),
                means,
                agreement,
            },
        );
    }
    Ok(HumanEvalSummary { models })
}

pub fn human_eval_ingest(path: &Path) -> Result<HumanEvalSummary> {
    let records: Vec<Annotation> = crate::io::read_jsonl(path)?;
    summarize_human_eval(&records, path)
}
