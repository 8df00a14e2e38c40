//! Evaluation metrics and report rendering.
//!
//! Pairwise text metrics are pure functions. Corpus averages are computed in
//! parallel over contiguous chunks and reduced in input order, so results do
//! not depend on thread scheduling.

pub mod agreement;
pub mod bertscore;
pub mod report;
pub mod tagging;
pub mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EmbedRequest};
use crate::error::{Error, Result};

pub use agreement::{cohen_kappa, human_eval_ingest, krippendorff_alpha_nominal, HumanEvalSummary, Scale};
pub use bertscore::{bertscore, BertScore};
pub use report::{render_plot_tsv, render_table, PlotData, ReportTable};
pub use tagging::{bio_scores, bio_scores_corpus, stance_scores};
pub use text::{bleu, chrf, meteor_es, rouge_l_f1};

/// Every tokenizer, smoothing and matching choice that affects scores.
pub const METRIC_CONFIG: &str = "metrics-v1;tokens=folded-ws-punct/en-v1;rouge=lcs-f1,empty-empty=1;\
bleu=corpus,n1-4,clip,add1-n>=2-zero-only,bp=exp(1-r/c);meteor=exact+suffix-stem,no-synonyms,\
fmean=10PR/(R+9P),pen=0.5(ch/m)^3;chrf=nows,n1-6,beta2,mean-f-defined-n,empty-empty=100;\
bertscore=cos-greedy,no-rescale;bio=micro-BI;stance=f1-pos1";

pub fn config_hash() -> String {
    crate::io::sha256_hex(METRIC_CONFIG.as_bytes())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub topic: String,
    pub values: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub config_hash: String,
}

impl MetricReport {
    pub fn new(topic: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            values: BTreeMap::new(),
            counts: BTreeMap::new(),
            config_hash: config_hash(),
        }
    }

    pub fn set(&mut self, name: &str, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("metric `{name}` = {v}")));
        }
        self.values.insert(name.to_string(), v);
        Ok(())
    }

    pub fn count(&mut self, name: &str, n: u64) {
        self.counts.insert(name.to_string(), n);
    }
}

/// Key-sorted pretty JSON for a list of reports.
pub fn render_reports(reports: &[MetricReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("finite values serialize");
    s.push('\n');
    s
}

const PAR_CHUNK: usize = 64;

/// Mean of `f` over aligned pairs.
pub fn mean_pairwise<F>(cands: &[String], refs: &[String], f: F) -> Result<f64>
where
    F: Fn(&str, &str) -> f64 + Sync,
{
    if cands.len() != refs.len() {
        return Err(Error::LengthMismatch {
            left: cands.len(),
            right: refs.len(),
        });
    }
    if cands.is_empty() {
        return Err(Error::Invalid("no pairs to score".into()));
    }
    let f = &f;
    let partial: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = cands
            .chunks(PAR_CHUNK)
            .zip(refs.chunks(PAR_CHUNK))
            .map(|(c, r)| s.spawn(move || c.iter().zip(r).map(|(a, b)| f(a, b)).collect::<Vec<f64>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("metric worker panicked")).collect()
    });
    Ok(partial.iter().sum::<f64>() / partial.len() as f64)
}

/// Similarity suite for generated text against references: BLEU and chrF on
/// a 0..100 scale, ROUGE-L and METEOR as mean F on 0..1.
pub fn text_suite(cands: &[String], refs: &[String], report: &mut MetricReport) -> Result<()> {
    report.set("bleu", 100.0 * bleu(cands, refs)?)?;
    report.set("rouge_l_f1", mean_pairwise(cands, refs, rouge_l_f1)?)?;
    report.set("meteor", mean_pairwise(cands, refs, meteor_es)?)?;
    report.set("chrf", mean_pairwise(cands, refs, chrf)?)?;
    report.count("pairs", cands.len() as u64);
    Ok(())
}

/// Mean BERTScore over pairs using the backend's token embeddings. A pair
/// with an empty side scores 0, or 1 when both sides are empty.
pub fn bertscore_corpus(backend: &dyn Backend, cands: &[String], refs: &[String]) -> Result<BertScore> {
    if cands.len() != refs.len() {
        return Err(Error::LengthMismatch {
            left: cands.len(),
            right: refs.len(),
        });
    }
    if cands.is_empty() {
        return Err(Error::Invalid("no pairs to score".into()));
    }
    let reqs: Vec<EmbedRequest> = cands
        .chunks(PAR_CHUNK)
        .zip(refs.chunks(PAR_CHUNK))
        .flat_map(|(c, r)| [EmbedRequest::token(c.to_vec()), EmbedRequest::token(r.to_vec())])
        .collect();
    let mut mats = Vec::with_capacity(reqs.len());
    for r in backend.embed_batch(&reqs) {
        mats.push(r?.into_token()?);
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for pair in mats.chunks(2) {
        for (c, g) in pair[0].iter().zip(&pair[1]) {
            let s = match (c.is_empty(), g.is_empty()) {
                (true, true) => BertScore { precision: 1.0, recall: 1.0, f1: 1.0 },
                (false, false) => bertscore(c, g)?,
                _ => BertScore { precision: 0.0, recall: 0.0, f1: 0.0 },
            };
            p += s.precision;
            r += s.recall;
            f += s.f1;
        }
    }
    let n = cands.len() as f64;
    Ok(BertScore {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_mean_matches_serial() {
        let c: Vec<String> = (0..300).map(|i| format!("w{} x y", i % 7)).collect();
        let r: Vec<String> = (0..300).map(|i| format!("w{} y", i % 5)).collect();
        let serial = c.iter().zip(&r).map(|(a, b)| rouge_l_f1(a, b)).sum::<f64>() / 300.0;
        assert_eq!(mean_pairwise(&c, &r, rouge_l_f1).unwrap(), serial);
    }

    #[test]
    fn report_rejects_non_finite() {
        let mut r = MetricReport::new("t");
        assert!(r.set("x", f64::NAN).is_err());
        r.set("x", 1.0).unwrap();
        assert!(render_reports(&[r]).contains("\"config_hash\""));
    }
}
