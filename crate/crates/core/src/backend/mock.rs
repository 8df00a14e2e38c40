use std::collections::HashSet;

use super::{
    Backend, BackendError, BackendResult, EmbedRequest, EmbedResponse, Embeddings, GenCandidate, GenRequest,
    Granularity, ScoreRequest,
};
use crate::io::{stable_hash64, unit_interval};
use crate::text::{is_special, tokenize};

/// Deterministic stand-in for an inference service.
///
/// Every response is a pure function of the request and the seed. Scores and
/// embeddings come from SHA-256 of the inputs; completions are windows over
/// the allowed words (when a decode restriction is given) or over the tail
/// of the prompt.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dim: usize,
    model: String,
}

pub const MOCK_EMBED_DIM: usize = 32;
const PROMPT_TAIL_TOKENS: usize = 40;

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: MOCK_EMBED_DIM,
            model: "mock".into(),
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn h(&self, parts: &[&[u8]]) -> u64 {
        let seed = self.seed.to_le_bytes();
        let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
        all.push(&seed);
        all.extend_from_slice(parts);
        stable_hash64(&all)
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let folded = token.to_lowercase();
        (0..self.dim)
            .map(|k| 2.0 * unit_interval(self.h(&[b"embed", folded.as_bytes(), &(k as u64).to_le_bytes()])) - 1.0)
            .collect()
    }

    fn text_matrix(&self, text: &str) -> Vec<Vec<f64>> {
        tokenize(text).iter().map(|t| self.token_vector(t)).collect()
    }

    fn text_vector(&self, text: &str) -> Vec<f64> {
        let rows = self.text_matrix(text);
        let mut mean = vec![0.0; self.dim];
        if rows.is_empty() {
            return mean;
        }
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    fn vocabulary(&self, req: &GenRequest) -> (Vec<String>, bool) {
        let forbidden: HashSet<&str> = req
            .forbidden_words
            .iter()
            .flatten()
            .map(String::as_str)
            .collect();
        let mut seen = HashSet::new();
        let (source, restricted): (Vec<String>, bool) = match &req.allowed_words {
            Some(words) => (words.clone(), true),
            None => {
                let toks = tokenize(&req.prompt);
                let start = toks.len().saturating_sub(PROMPT_TAIL_TOKENS);
                (toks[start..].iter().filter(|t| !is_special(t)).cloned().collect(), false)
            }
        };
        let vocab = source
            .into_iter()
            .filter(|w| !forbidden.contains(w.as_str()))
            .filter(|w| seen.insert(w.clone()))
            .collect();
        (vocab, restricted)
    }
}

impl Backend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn generate(&self, req: &GenRequest) -> BackendResult<Vec<GenCandidate>> {
        req.validate()?;
        let (vocab, restricted) = self.vocabulary(req);
        if vocab.is_empty() {
            if restricted {
                return Err(BackendError::Remote {
                    status: 422,
                    message: "every allowed word is also forbidden".into(),
                });
            }
            return Ok(vec![GenCandidate { text: String::new(), logprob: 0.0 }]);
        }
        let prompt = req.prompt.as_bytes();
        let cap = if restricted { 3 } else { 12 };
        let max_len = (req.max_tokens as usize).min(cap).min(vocab.len()).max(1);
        let first_len = 1 + (self.h(&[b"len", prompt]) % max_len as u64) as usize;

        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for beam in 0..req.num_beams as usize {
            // Lengths shrink by one per beam down to a single word, so a
            // one-word candidate is always present when beams allow.
            let len = first_len.saturating_sub(beam).max(1);
            let bh = self.h(&[b"beam", prompt, &(beam as u64).to_le_bytes()]);
            let offset = (bh % (vocab.len() - len + 1) as u64) as usize;
            let text = vocab[offset..offset + len].join(" ");
            if !seen.insert(text.clone()) {
                continue;
            }
            let per_token = 0.1 + unit_interval(self.h(&[b"lp", prompt, text.as_bytes()]));
            out.push(GenCandidate {
                text,
                logprob: -(len as f64) * per_token,
            });
        }
        out.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.text.cmp(&b.text)));
        Ok(out)
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<Vec<f64>> {
        req.validate()?;
        Ok(req
            .continuations
            .iter()
            .map(|c| -(0.05 + 3.0 * unit_interval(self.h(&[b"score", req.prompt.as_bytes(), c.as_bytes()]))))
            .collect())
    }

    fn embed(&self, req: &EmbedRequest) -> BackendResult<EmbedResponse> {
        req.validate()?;
        let embeddings = match req.granularity {
            Granularity::Sequence => Embeddings::Sequence(req.texts.iter().map(|t| self.text_vector(t)).collect()),
            Granularity::Token => Embeddings::Token(req.texts.iter().map(|t| self.text_matrix(t)).collect()),
        };
        Ok(EmbedResponse { dim: self.dim, embeddings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_request_same_output() {
        let m = MockBackend::new(7);
        let req = GenRequest::new("Write a tweet about crypto against ponzi scheme", 8);
        assert_eq!(m.generate(&req).unwrap(), m.generate(&req).unwrap());
        let other = MockBackend::new(8);
        assert_ne!(m.score(&ScoreRequest { prompt: "p".into(), continuations: vec!["a".into()] }).unwrap(),
                   other.score(&ScoreRequest { prompt: "p".into(), continuations: vec!["a".into()] }).unwrap());
    }

    #[test]
    fn restriction_is_enforced() {
        let m = MockBackend::new(1);
        for p in ["a", "b", "c", "stance?"] {
            let mut req = GenRequest::new(p, 1);
            req.allowed_words = Some(vec!["for".into(), "against".into()]);
            for c in m.generate(&req).unwrap() {
                assert!(c.text == "for" || c.text == "against");
            }
        }
    }

    #[test]
    fn beams_bound_and_sorted() {
        let m = MockBackend::new(3);
        let mut req = GenRequest::new("x", 3);
        req.allowed_words = Some("one two three four five six".split(' ').map(String::from).collect());
        let out = m.generate(&req).unwrap();
        assert!(!out.is_empty() && out.len() <= 5);
        assert!(out.windows(2).all(|w| w[0].logprob >= w[1].logprob));
        assert!(out.iter().any(|c| !c.text.contains(' ')));
    }

    #[test]
    fn forbidden_words_never_appear() {
        let m = MockBackend::new(3);
        let mut req = GenRequest::new("alpha beta gamma delta", 4);
        req.forbidden_words = Some(vec!["beta".into()]);
        for c in m.generate(&req).unwrap() {
            assert!(!c.text.split(' ').any(|w| w == "beta"));
        }
    }

    #[test]
    fn embeddings_shapes() {
        let m = MockBackend::new(0);
        let r = m.embed(&EmbedRequest::sequence(vec!["a".into(), "b c".into(), "d".into()])).unwrap();
        r.check_dims().unwrap();
        assert_eq!(r.into_sequence().unwrap().len(), 3);
        let t = m.embed(&EmbedRequest::token(vec!["a b".into()])).unwrap().into_token().unwrap();
        assert_eq!(t[0].len(), 2);
        let again = m.embed(&EmbedRequest::token(vec!["a b".into()])).unwrap().into_token().unwrap();
        assert_eq!(t, again);
    }
}
