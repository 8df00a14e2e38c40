//! Token-level and binary classification scores.

use serde::{Deserialize, Serialize};

use crate::bio::{Tag, TagSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub correct: u64,
    pub total: u64,
}

impl Confusion {
    /// F1 from pooled counts; 0/0 is reported as 1.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.correct += other.correct;
        self.total += other.total;
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Counts pooled over the B and I classes; O is never a positive.
pub fn bio_confusion(gold: &TagSequence, pred: &TagSequence) -> Result<Confusion> {
    check_len(gold.len(), pred.len())?;
    let mut c = Confusion::default();
    for (g, p) in gold.tags().iter().zip(pred.tags()) {
        c.total += 1;
        if g == p {
            c.correct += 1;
            if *g != Tag::O {
                c.tp += 1;
            }
        } else {
            if *p != Tag::O {
                c.fp += 1;
            }
            if *g != Tag::O {
                c.fn_ += 1;
            }
        }
    }
    Ok(c)
}

/// `(micro_f1, accuracy)` for one tag sequence pair.
pub fn bio_scores(gold: &TagSequence, pred: &TagSequence) -> Result<(f64, f64)> {
    let c = bio_confusion(gold, pred)?;
    Ok((c.f1(), c.accuracy()))
}

/// Pooled `(micro_f1, accuracy)` over many sequence pairs.
pub fn bio_scores_corpus(gold: &[TagSequence], pred: &[TagSequence]) -> Result<(f64, f64)> {
    check_len(gold.len(), pred.len())?;
    let mut c = Confusion::default();
    for (g, p) in gold.iter().zip(pred) {
        c.merge(&bio_confusion(g, p)?);
    }
    Ok((c.f1(), c.accuracy()))
}

/// `(f1 on class 1, accuracy)` for binary stance codes.
pub fn stance_scores(gold: &[u8], pred: &[u8]) -> Result<(f64, f64)> {
    check_len(gold.len(), pred.len())?;
    if gold.is_empty() {
        return Err(Error::Invalid("stance scores over an empty set".into()));
    }
    if let Some(bad) = gold.iter().chain(pred).find(|&&v| v > 1) {
        return Err(Error::Invalid(format!("stance code {bad} is not 0 or 1")));
    }
    let mut c = Confusion::default();
    for (&g, &p) in gold.iter().zip(pred) {
        c.total += 1;
        c.correct += (g == p) as u64;
        match (g, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok((c.f1(), c.accuracy()))
}
