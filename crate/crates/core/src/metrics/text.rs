//! Reference-based text similarity: ROUGE-L, BLEU, METEOR and chrF.
//!
//! Word-level metrics share the case-folded tokenizer from [`crate::text`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::text::tokenize_folded;

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 on token sequences. Two empty sequences score 1.
pub fn rouge_l_tokens<T: PartialEq>(cand: &[T], reference: &[T]) -> f64 {
    if cand.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l_f1(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&tokenize_folded(candidate), &tokenize_folded(reference))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub const BLEU_MAX_N: usize = 4;

/// Corpus BLEU with one reference per candidate, uniform weights over
/// n = 1..4 and add-one smoothing of zero-match orders above unigrams.
pub fn bleu(candidates: &[String], references: &[String]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::Invalid("bleu over an empty corpus".into()));
    }
    let mut matched = [0usize; BLEU_MAX_N];
    let mut total = [0usize; BLEU_MAX_N];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        let ct = tokenize_folded(cand);
        let rt = tokenize_folded(reference);
        c += ct.len();
        r += rt.len();
        for n in 1..=BLEU_MAX_N {
            let rc = ngram_counts(&rt, n);
            for (g, k) in ngram_counts(&ct, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += ct.len().saturating_sub(n - 1);
        }
    }
    if c == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_MAX_N {
        let p = if n > 0 && matched[n] == 0 {
            1.0 / (total[n] + 1) as f64
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / BLEU_MAX_N as f64).exp())
}

const SUFFIXES: &[&str] = &[
    "ations", "ation", "ments", "ment", "ness", "ings", "ing", "edly", "ies", "ied", "ers", "est", "ed", "er", "ly", "es", "s",
];

/// Suffix-stripping stem; the remaining stem keeps at least three characters.
pub fn stem(word: &str) -> &str {
    for s in SUFFIXES {
        if let Some(base) = word.strip_suffix(s) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    word
}

/// Alignment search budget; past it the best alignment found so far is used.
pub const METEOR_NODE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorAlignment {
    pub exact: usize,
    pub matches: usize,
    pub chunks: usize,
}

struct Search<'a> {
    edges: &'a [Vec<(usize, bool)>],
    reach: Vec<(usize, usize)>,
    used: Vec<bool>,
    path: Vec<(usize, usize)>,
    best: (usize, usize, usize),
    nodes: usize,
}

impl Search<'_> {
    fn better(a: (usize, usize, usize), b: (usize, usize, usize)) -> bool {
        (a.0, a.1, std::cmp::Reverse(a.2)) > (b.0, b.1, std::cmp::Reverse(b.2))
    }

    fn run(&mut self, i: usize, exact: usize, total: usize, chunks: usize) {
        self.nodes += 1;
        if i == self.edges.len() {
            if Self::better((exact, total, chunks), self.best) {
                self.best = (exact, total, chunks);
            }
            return;
        }
        if self.nodes > METEOR_NODE_BUDGET {
            return;
        }
        let (re, rt) = self.reach[i];
        let ub = (exact + re, total + rt);
        if ub < (self.best.0, self.best.1) || (ub == (self.best.0, self.best.1) && chunks >= self.best.2) {
            return;
        }
        for &(j, is_exact) in &self.edges[i] {
            if self.used[j] {
                continue;
            }
            let extends = self.path.last().is_some_and(|&(pi, pj)| pi + 1 == i && pj + 1 == j);
            self.used[j] = true;
            self.path.push((i, j));
            self.run(i + 1, exact + is_exact as usize, total + 1, chunks + (!extends) as usize);
            self.path.pop();
            self.used[j] = false;
        }
        self.run(i + 1, exact, total, chunks);
    }
}

/// Unigram alignment preferring exact matches, then more matches overall,
/// then fewer chunks.
pub fn meteor_align(cand: &[String], reference: &[String]) -> MeteorAlignment {
    let ref_stems: Vec<&str> = reference.iter().map(|w| stem(w)).collect();
    let edges: Vec<Vec<(usize, bool)>> = cand
        .iter()
        .map(|w| {
            let s = stem(w);
            let mut e: Vec<(usize, bool)> = reference
                .iter()
                .enumerate()
                .filter_map(|(j, r)| {
                    if r == w {
                        Some((j, true))
                    } else if ref_stems[j] == s {
                        Some((j, false))
                    } else {
                        None
                    }
                })
                .collect();
            // Exact edges first, then by position.
            e.sort_by_key(|&(j, x)| (!x, j));
            e
        })
        .collect();
    let mut reach = vec![(0, 0); cand.len() + 1];
    for i in (0..cand.len()).rev() {
        let has_exact = edges[i].iter().any(|e| e.1) as usize;
        let has_any = !edges[i].is_empty() as usize;
        reach[i] = (reach[i + 1].0 + has_exact, reach[i + 1].1 + has_any);
    }
    let mut s = Search {
        edges: &edges,
        reach,
        used: vec![false; reference.len()],
        path: Vec::new(),
        best: (0, 0, 0),
        nodes: 0,
    };
    s.run(0, 0, 0, 0);
    MeteorAlignment {
        exact: s.best.0,
        matches: s.best.1,
        chunks: s.best.2,
    }
}

/// Closed-form METEOR score from match and chunk counts.
pub fn meteor_formula(matches: usize, chunks: usize, cand_len: usize, ref_len: usize) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// METEOR with exact and stem matching stages (no synonym stage).
pub fn meteor_es(candidate: &str, reference: &str) -> f64 {
    let c = tokenize_folded(candidate);
    let r = tokenize_folded(reference);
    let a = meteor_align(&c, &r);
    meteor_formula(a.matches, a.chunks, c.len(), r.len())
}

pub const CHRF_MAX_N: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// chrF on whitespace-stripped text, averaging F_beta over the orders for
/// which either side has n-grams. Scaled to 0..100; two empty strings score 100.
pub fn chrf(candidate: &str, reference: &str) -> f64 {
    let c: Vec<char> = candidate.chars().filter(|ch| !ch.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|ch| !ch.is_whitespace()).collect();
    if c.is_empty() && r.is_empty() {
        return 100.0;
    }
    let b2 = CHRF_BETA * CHRF_BETA;
    let mut sum = 0.0;
    let mut defined = 0usize;
    for n in 1..=CHRF_MAX_N {
        let cn = char_ngrams(&c, n);
        let rn = char_ngrams(&r, n);
        if cn.is_empty() && rn.is_empty() {
            continue;
        }
        defined += 1;
        let overlap: usize = cn.iter().map(|(g, k)| (*k).min(rn.get(g).copied().unwrap_or(0))).sum();
        let ctot: usize = cn.values().sum();
        let rtot: usize = rn.values().sum();
        let p = if ctot > 0 { overlap as f64 / ctot as f64 } else { 0.0 };
        let rec = if rtot > 0 { overlap as f64 / rtot as f64 } else { 0.0 };
        if p + rec > 0.0 {
            sum += (1.0 + b2) * p * rec / (b2 * p + rec);
        }
    }
    100.0 * sum / defined as f64
}
