use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{Envelope, ErrorBody, GenerateResponse, ScoreResponse};
use super::{
    Backend, BackendError, BackendResult, EmbedRequest, EmbedResponse, GenCandidate, GenRequest, ScoreRequest,
};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    /// Retries after the first attempt, for transport failures only.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Concurrent in-flight requests for the batch APIs.
    pub concurrency: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 4,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(5),
            concurrency: 4,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self {
            config,
            agent,
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.config
            .initial_backoff
            .saturating_mul(factor)
            .min(self.config.max_backoff)
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Envelope<Req>) -> BackendResult<Resp> {
        let result = self.agent.post(url).send_json(body);
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let message = r
                    .into_json::<ErrorBody>()
                    .map(|b| b.error)
                    .unwrap_or_else(|_| "unreadable error body".into());
                return Err(if matches!(status, 429 | 502 | 503 | 504) {
                    BackendError::Transport(format!("{status}: {message}"))
                } else {
                    BackendError::Remote { status, message }
                });
            }
            Err(ureq::Error::Transport(t)) => return Err(BackendError::Transport(t.to_string())),
        };
        let text = response
            .into_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let env: Envelope<Resp> =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))?;
        if env.id != body.id {
            return Err(BackendError::Protocol(format!(
                "correlation id mismatch: sent {}, got {}",
                body.id, env.id
            )));
        }
        Ok(env.body)
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, req: &Req) -> BackendResult<Resp> {
        let url = format!("{}/v1/{}", self.config.base_url.trim_end_matches('/'), endpoint);
        let env = Envelope {
            id: self.next_id.fetch_add(1, Ordering::Relaxed),
            model: Some(self.config.model.clone()),
            body: req,
        };
        let mut attempt = 0;
        loop {
            match self.post_once(&url, &env) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    log::warn!("{endpoint} attempt {} failed: {e}; retrying", attempt + 1);
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Run `f` over `items` with at most `concurrency` requests in flight,
    /// returning results in input order.
    fn fan_out<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        let workers = self.config.concurrency.max(1).min(items.len());
        if workers <= 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&items[i]);
                    slots.lock().unwrap()[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, req: &GenRequest) -> BackendResult<Vec<GenCandidate>> {
        req.validate()?;
        let resp: GenerateResponse = self.call("generate", req)?;
        if resp.candidates.len() > req.num_beams as usize {
            return Err(BackendError::Protocol("more candidates than beams".into()));
        }
        Ok(resp.candidates)
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<Vec<f64>> {
        req.validate()?;
        let resp: ScoreResponse = self.call("score", req)?;
        if resp.logprobs.len() != req.continuations.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} logprobs, got {}",
                req.continuations.len(),
                resp.logprobs.len()
            )));
        }
        if resp.logprobs.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Protocol("non-finite logprob".into()));
        }
        Ok(resp.logprobs)
    }

    fn embed(&self, req: &EmbedRequest) -> BackendResult<EmbedResponse> {
        req.validate()?;
        let resp: EmbedResponse = self.call("embed", req)?;
        resp.check_dims()?;
        Ok(resp)
    }

    fn generate_batch(&self, reqs: &[GenRequest]) -> Vec<BackendResult<Vec<GenCandidate>>> {
        self.fan_out(reqs, |r| self.generate(r))
    }

    fn score_batch(&self, reqs: &[ScoreRequest]) -> Vec<BackendResult<Vec<f64>>> {
        self.fan_out(reqs, |r| self.score(r))
    }

    fn embed_batch(&self, reqs: &[EmbedRequest]) -> Vec<BackendResult<EmbedResponse>> {
        self.fan_out(reqs, |r| self.embed(r))
    }
}
