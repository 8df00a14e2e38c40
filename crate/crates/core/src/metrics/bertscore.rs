//! Greedy cosine matching between token embeddings, without baseline rescaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn normalized(rows: &[Vec<f64>], dim: usize, side: &str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != dim {
                return Err(Error::Dimension { expected: dim, got: v.len() });
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Invalid(format!("{side} token {i} has zero or non-finite norm")));
            }
            Ok(v.iter().map(|x| x / n).collect())
        })
        .collect()
}

pub fn bertscore(cand: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<BertScore> {
    if cand.is_empty() || reference.is_empty() {
        return Err(Error::Invalid("bertscore needs at least one token on each side".into()));
    }
    let dim = cand[0].len();
    let c = normalized(cand, dim, "candidate")?;
    let r = normalized(reference, dim, "reference")?;
    let sim: Vec<Vec<f64>> = r
        .iter()
        .map(|rv| c.iter().map(|cv| rv.iter().zip(cv).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let recall = sim.iter().map(|row| max(&mut row.iter().copied())).sum::<f64>() / r.len() as f64;
    let precision = (0..c.len()).map(|j| max(&mut sim.iter().map(|row| row[j]))).sum::<f64>() / c.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BertScore { precision, recall, f1 })
}
