#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

use narrative_core::backend::{
    Backend, BackendError, BackendResult, EmbedRequest, EmbedResponse, GenCandidate, GenRequest, ScoreRequest,
};
use narrative_core::io::{stable_hash64, unit_interval};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Backend whose continuation scores are arbitrary but fixed per seed and
/// prompt. Only scoring is supported.
pub struct SimBackend {
    pub seed: u64,
}

impl Backend for SimBackend {
    fn model_id(&self) -> &str {
        "sim"
    }

    fn generate(&self, _req: &GenRequest) -> BackendResult<Vec<GenCandidate>> {
        Err(BackendError::InvalidRequest("sim backend only scores".into()))
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<Vec<f64>> {
        Ok(req
            .continuations
            .iter()
            .map(|c| {
                let h = stable_hash64(&[&self.seed.to_le_bytes(), req.prompt.as_bytes(), c.as_bytes()]);
                -(0.01 + 8.0 * unit_interval(h))
            })
            .collect())
    }

    fn embed(&self, _req: &EmbedRequest) -> BackendResult<EmbedResponse> {
        Err(BackendError::InvalidRequest("sim backend only scores".into()))
    }
}

/// Wraps a backend and fails the first `failures` calls of every kind with
/// the given error.
pub struct FlakyBackend<B> {
    pub inner: B,
    pub failures: usize,
    pub error: fn() -> BackendError,
    pub calls: AtomicUsize,
}

impl<B: Backend> FlakyBackend<B> {
    pub fn new(inner: B, failures: usize, error: fn() -> BackendError) -> Self {
        Self {
            inner,
            failures,
            error,
            calls: AtomicUsize::new(0),
        }
    }

    fn gate(&self) -> BackendResult<()> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.failures {
            Err((self.error)())
        } else {
            Ok(())
        }
    }
}

impl<B: Backend> Backend for FlakyBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, req: &GenRequest) -> BackendResult<Vec<GenCandidate>> {
        self.gate()?;
        self.inner.generate(req)
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<Vec<f64>> {
        self.gate()?;
        self.inner.score(req)
    }

    fn embed(&self, req: &EmbedRequest) -> BackendResult<EmbedResponse> {
        self.gate()?;
        self.inner.embed(req)
    }
}

/// Fails every generate call whose prompt contains `needle`.
pub struct PoisonBackend<B> {
    pub inner: B,
    pub needle: String,
}

impl<B: Backend> Backend for PoisonBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, req: &GenRequest) -> BackendResult<Vec<GenCandidate>> {
        if req.prompt.contains(&self.needle) {
            return Err(BackendError::Transport("injected failure".into()));
        }
        self.inner.generate(req)
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<Vec<f64>> {
        self.inner.score(req)
    }

    fn embed(&self, req: &EmbedRequest) -> BackendResult<EmbedResponse> {
        self.inner.embed(req)
    }
}

/// Longest common subsequence by plain recursion over suffixes with
/// memoization; independent of the library's rolling-row implementation.
pub fn lcs_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut memo = vec![vec![usize::MAX; b.len() + 1]; a.len() + 1];
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut Vec<Vec<usize>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if memo[i][j] != usize::MAX {
            return memo[i][j];
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = v;
        v
    }
    go(a, b, 0, 0, &mut memo)
}

/// ROUGE-L F1 from an LCS length, written out from the definition.
pub fn rouge_oracle(l: usize, cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 && ref_len == 0 {
        return 1.0;
    }
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand_len as f64;
    let r = l as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn narrative(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_narrative"))
        .args(args)
        .env_remove("NARRATIVE_BACKEND_URL")
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = narrative(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn fail(args: &[&str]) -> String {
    let out = narrative(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    assert_eq!(out.status.code(), Some(1));
    String::from_utf8(out.stderr).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every pipeline stage on the 20-tweet fixture; returns the produced files.
pub fn run_pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let cfg = fixture("pipeline.toml");
    let tweets = fixture("tweets20.jsonl");
    let o = |name: &str| dir.join(name);
    let c = p(&cfg);
    let t = p(&tweets);
    ok(&["clean", "--config", c, "--input", p(&fixture("raw_dump.jsonl")), "--output", p(&o("clean.jsonl"))]);
    ok(&["calibrate", "--config", c, "--input", t, "--output", p(&o("cal.json"))]);
    ok(&["predict", "stance", "--config", c, "--input", t, "--output", p(&o("stance.jsonl")), "--calibration", p(&o("cal.json"))]);
    ok(&["predict", "aspect", "--config", c, "--input", t, "--output", p(&o("aspect.jsonl"))]);
    ok(&[
        "gen-candidates", "--config", c, "--input", t, "--output", p(&o("cands.jsonl")),
        "--calibration", p(&o("cal.json")), "--merged", p(&o("merged.jsonl")),
    ]);
    ok(&[
        "train-head", "--config", c, "--input", t, "--candidates", p(&o("cands.jsonl")),
        "--output", p(&o("heads.txt")), "--loss-trace", p(&o("trace.tsv")),
    ]);
    ok(&["predict", "narrative-cls", "--config", c, "--input", t, "--output", p(&o("ncls.jsonl")), "--heads", p(&o("heads.txt"))]);
    ok(&["predict", "narrative-t2t", "--config", c, "--input", t, "--output", p(&o("nt2t.jsonl"))]);
    ok(&["eval", "narrative", "--config", c, "--pred", p(&o("ncls.jsonl")), "--gold", t, "--output", p(&o("eval_cls.json"))]);
    ok(&["eval", "narrative", "--config", c, "--pred", p(&o("nt2t.jsonl")), "--gold", t, "--output", p(&o("eval_t2t.json"))]);
    ok(&["eval", "text", "--config", c, "--pred", p(&o("cands.jsonl")), "--gold", t, "--output", p(&o("eval_text.json"))]);

    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        files.insert(e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap());
    }
    files
}
