//! Pipeline configuration loaded from TOML.
//!
//! Relative paths are resolved against the directory of the config file.
//! Every field has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, HttpBackend, HttpConfig, MockBackend};
use crate::error::{Error, Result};
use crate::head::TrainConfig;
use crate::icl::{CalibrationScope, PromptMode, DEFAULT_CONTENT_FREE, MAX_SHOTS};
use crate::pcg::DecodeParams;

pub const BACKEND_URL_ENV: &str = "NARRATIVE_BACKEND_URL";
/// Backend URL value selecting the in-process mock.
pub const MOCK_URL: &str = "mock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// `mock` or an `http://` base URL.
    pub url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    /// Embedding width of the mock backend.
    pub mock_dim: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            url: MOCK_URL.into(),
            model: "mock".into(),
            timeout_secs: 60,
            max_retries: 4,
            concurrency: 4,
            mock_dim: crate::backend::MOCK_EMBED_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IclConfig {
    pub mode: PromptMode,
    /// Number of leading exemplars placed in each prompt.
    pub shots: usize,
    /// Template files overriding the built-in ones.
    pub stance_template: Option<PathBuf>,
    pub aspect_template: Option<PathBuf>,
    pub content_free: Vec<String>,
    pub calibration_scope: CalibrationScope,
}

impl Default for IclConfig {
    fn default() -> Self {
        Self {
            mode: PromptMode::Plain,
            shots: MAX_SHOTS,
            stance_template: None,
            aspect_template: None,
            content_free: DEFAULT_CONTENT_FREE.iter().map(|s| s.to_string()).collect(),
            calibration_scope: CalibrationScope::PerTopic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    /// A held-out pool disjoint from evaluation records.
    Pool,
    /// The evaluation records themselves.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub per_record: usize,
    pub source: CandidateSource,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            per_record: 1,
            source: CandidateSource::Pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub taxonomy: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub backend: BackendConfig,
    pub icl: IclConfig,
    pub decode: DecodeParams,
    pub candidates: CandidateConfig,
    pub train: TrainConfig,
    /// Texts per embedding request.
    pub embed_chunk: Option<usize>,
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })?;
        let base = origin.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.taxonomy,
            &mut cfg.exemplars,
            &mut cfg.icl.stance_template,
            &mut cfg.icl.aspect_template,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.taxonomy, &self.exemplars, &self.icl.stance_template, &self.icl.aspect_template]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        if self.icl.shots > MAX_SHOTS {
            return Err(Error::Config(format!("icl.shots must be at most {MAX_SHOTS}")));
        }
        if self.icl.content_free.is_empty() {
            return Err(Error::Config("icl.content_free must not be empty".into()));
        }
        if self.candidates.per_record == 0 {
            return Err(Error::Config("candidates.per_record must be positive".into()));
        }
        if self.backend.concurrency == 0 {
            return Err(Error::Config("backend.concurrency must be positive".into()));
        }
        if self.embed_chunk == Some(0) {
            return Err(Error::Config("embed_chunk must be positive".into()));
        }
        self.train.validate()
    }

    pub fn embed_chunk(&self) -> usize {
        self.embed_chunk.unwrap_or(32)
    }

    pub fn is_mock(&self) -> bool {
        self.backend.url.is_empty() || self.backend.url == MOCK_URL
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>> {
        if self.is_mock() {
            return Ok(Arc::new(
                MockBackend::new(self.seed)
                    .with_dim(self.backend.mock_dim)
                    .with_model(self.backend.model.clone()),
            ));
        }
        if !(self.backend.url.starts_with("http://") || self.backend.url.starts_with("https://")) {
            return Err(Error::Config(format!(
                "backend url `{}` is neither `{MOCK_URL}` nor an http(s) URL",
                self.backend.url
            )));
        }
        let mut http = HttpConfig::new(self.backend.url.clone(), self.backend.model.clone());
        http.timeout = Duration::from_secs(self.backend.timeout_secs);
        http.max_retries = self.backend.max_retries;
        http.concurrency = self.backend.concurrency;
        Ok(Arc::new(HttpBackend::new(http)))
    }
}
