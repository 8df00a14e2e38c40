//! C ABI over `narrative-core`.
//!
//! Every fallible function returns a [`NarrativeStatus`]; on failure a
//! message is available from [`narrative_last_error`] on the same thread.
//! Strings handed out by the library must be released with
//! [`narrative_string_free`]; handles with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use narrative_core::backend::{Backend, HttpBackend, HttpConfig, MockBackend};
use narrative_core::bio::TagSequence;
use narrative_core::corpus::{clean_text, TweetRecord};
use narrative_core::head::{load_checkpoint, predict_narrative_cls, HeadModel};
use narrative_core::metrics::{self, cohen_kappa, krippendorff_alpha_nominal};
use narrative_core::taxonomy::{load_taxonomy, Taxonomy};
use narrative_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NarrativeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Parse = 5,
    UnknownTopic = 6,
    OutOfRange = 7,
    Backend = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A loaded narrative taxonomy.
pub struct NarrativeTaxonomy(Taxonomy);

/// An inference backend: the deterministic mock or an HTTP server.
pub struct NarrativeBackend(Arc<dyn Backend>);

/// Classification heads loaded from a checkpoint, one per topic.
pub struct NarrativeHeads(Vec<HeadModel>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NarrativeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => NarrativeStatus::Io,
            Error::Parse { .. } => NarrativeStatus::Parse,
            Error::UnknownTopic(_) => NarrativeStatus::UnknownTopic,
            Error::IndexOutOfRange { .. } => NarrativeStatus::OutOfRange,
            Error::Backend(_) => NarrativeStatus::Backend,
            _ => NarrativeStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NarrativeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NarrativeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NarrativeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(NarrativeStatus::NullArgument, format!("`{what}` is null"))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NarrativeStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

/// # Safety
/// `p` is null or points to `n` valid string pointers.
unsafe fn str_array(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<String>, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    (0..n).map(|i| str_arg(*p.add(i), what).map(str::to_owned)).collect()
}

/// # Safety
/// `p` is null or points to `n` readable values.
unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `out` is null or writable.
unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn narrative_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn narrative_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Clean a raw tweet into 7-bit text.
///
/// # Safety
/// `raw` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_clean_text(raw: *const c_char, out: *mut *mut c_char) -> NarrativeStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        write_out(out, owned_string(clean_text(raw)), "out")
    })
}

/// # Safety
/// String arguments are NUL-terminated; `out` is writable.
unsafe fn pair_metric(
    cand: *const c_char,
    reference: *const c_char,
    out: *mut f64,
    f: fn(&str, &str) -> f64,
) -> NarrativeStatus {
    guard(|| {
        let v = f(str_arg(cand, "candidate")?, str_arg(reference, "reference")?);
        write_out(out, v, "out")
    })
}

/// ROUGE-L F1 in [0, 1].
///
/// # Safety
/// String arguments are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_rouge_l_f1(cand: *const c_char, reference: *const c_char, out: *mut f64) -> NarrativeStatus {
    pair_metric(cand, reference, out, metrics::rouge_l_f1)
}

/// METEOR with exact and stem matching, in [0, 1].
///
/// # Safety
/// String arguments are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_meteor(cand: *const c_char, reference: *const c_char, out: *mut f64) -> NarrativeStatus {
    pair_metric(cand, reference, out, metrics::meteor_es)
}

/// chrF in [0, 100].
///
/// # Safety
/// String arguments are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_chrf(cand: *const c_char, reference: *const c_char, out: *mut f64) -> NarrativeStatus {
    pair_metric(cand, reference, out, metrics::chrf)
}

/// Corpus BLEU in [0, 1] over `n` aligned candidate/reference pairs.
///
/// # Safety
/// `cands` and `refs` each point to `n` NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_bleu(
    cands: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> NarrativeStatus {
    guard(|| {
        let c = str_array(cands, n, "cands")?;
        let r = str_array(refs, n, "refs")?;
        write_out(out, metrics::bleu(&c, &r)?, "out")
    })
}

/// Cohen's kappa between two label vectors of length `n`.
///
/// # Safety
/// `a` and `b` point to `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_cohen_kappa(a: *const i32, b: *const i32, n: usize, out: *mut f64) -> NarrativeStatus {
    guard(|| {
        let v = cohen_kappa(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        write_out(out, v, "out")
    })
}

/// Krippendorff's alpha (nominal) for two coders over `n` items.
///
/// # Safety
/// `a` and `b` point to `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_krippendorff_alpha(a: *const i32, b: *const i32, n: usize, out: *mut f64) -> NarrativeStatus {
    guard(|| {
        let v = krippendorff_alpha_nominal(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        write_out(out, v, "out")
    })
}

/// Micro F1 over B/I tags and token accuracy for space-separated tag
/// strings such as `"O B I O"`.
///
/// # Safety
/// Tag strings are NUL-terminated; `f1` and `accuracy` are writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_bio_scores(
    gold: *const c_char,
    pred: *const c_char,
    f1: *mut f64,
    accuracy: *mut f64,
) -> NarrativeStatus {
    guard(|| {
        let g = TagSequence::parse(str_arg(gold, "gold")?)?;
        let p = TagSequence::parse(str_arg(pred, "pred")?)?;
        let (f, a) = metrics::bio_scores(&g, &p)?;
        write_out(f1, f, "f1")?;
        write_out(accuracy, a, "accuracy")
    })
}

/// Load a taxonomy file.
///
/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_taxonomy_load(path: *const c_char, out: *mut *mut NarrativeTaxonomy) -> NarrativeStatus {
    guard(|| {
        let t = load_taxonomy(Path::new(str_arg(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(NarrativeTaxonomy(t))), "out")
    })
}

/// # Safety
/// `t` is null or a handle from [`narrative_taxonomy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn narrative_taxonomy_free(t: *mut NarrativeTaxonomy) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of narratives listed for `topic`, sentinel included.
///
/// # Safety
/// `t` is a live handle; `topic` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_taxonomy_len(
    t: *const NarrativeTaxonomy,
    topic: *const c_char,
    out: *mut usize,
) -> NarrativeStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let n = t.0.set(str_arg(topic, "topic")?)?.len();
        write_out(out, n, "out")
    })
}

/// Narrative text for class `index` of `topic`.
///
/// # Safety
/// `t` is a live handle; `topic` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_taxonomy_lookup(
    t: *const NarrativeTaxonomy,
    topic: *const c_char,
    index: usize,
    out: *mut *mut c_char,
) -> NarrativeStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("taxonomy"))?;
        let s = t.0.lookup_g(str_arg(topic, "topic")?, index)?.to_string();
        write_out(out, owned_string(s), "out")
    })
}

/// Deterministic mock backend. `dim` of 0 selects the default width.
#[no_mangle]
pub extern "C" fn narrative_backend_mock(seed: u64, dim: usize) -> *mut NarrativeBackend {
    let mut b = MockBackend::new(seed);
    if dim > 0 {
        b = b.with_dim(dim);
    }
    Box::into_raw(Box::new(NarrativeBackend(Arc::new(b))))
}

/// Backend talking to an inference server at `url`.
///
/// # Safety
/// `url` and `model` are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_backend_http(
    url: *const c_char,
    model: *const c_char,
    out: *mut *mut NarrativeBackend,
) -> NarrativeStatus {
    guard(|| {
        let url = str_arg(url, "url")?;
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(Failure(NarrativeStatus::InvalidInput, format!("`{url}` is not an http(s) URL")));
        }
        let b = HttpBackend::new(HttpConfig::new(url, str_arg(model, "model")?));
        write_out(out, Box::into_raw(Box::new(NarrativeBackend(Arc::new(b)))), "out")
    })
}

/// # Safety
/// `b` is null or a backend handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn narrative_backend_free(b: *mut NarrativeBackend) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Sequence embedding of `text`. Writes up to `cap` values to `out` and the
/// full dimension to `dim`; fails with `BufferTooSmall` when `cap < dim`.
///
/// # Safety
/// `b` is a live handle; `text` is NUL-terminated; `out` has room for `cap`
/// values (may be null when `cap` is 0); `dim` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_backend_embed(
    b: *const NarrativeBackend,
    text: *const c_char,
    out: *mut f64,
    cap: usize,
    dim: *mut usize,
) -> NarrativeStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(|| null("backend"))?;
        let text = str_arg(text, "text")?.to_string();
        let e = narrative_core::head::embed_all(b.0.as_ref(), &[text], 1)?.pop().unwrap_or_default();
        write_out(dim, e.len(), "dim")?;
        if cap < e.len() {
            return Err(Failure(
                NarrativeStatus::BufferTooSmall,
                format!("embedding has {} values, buffer holds {cap}", e.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(e.as_ptr(), out, e.len());
        Ok(())
    })
}

/// Load every head in a checkpoint file.
///
/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_heads_load(path: *const c_char, out: *mut *mut NarrativeHeads) -> NarrativeStatus {
    guard(|| {
        let heads = load_checkpoint(Path::new(str_arg(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(NarrativeHeads(heads))), "out")
    })
}

/// # Safety
/// `h` is null or a handle from [`narrative_heads_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn narrative_heads_free(h: *mut NarrativeHeads) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Classify `text` under `topic` and return the class index and narrative.
///
/// # Safety
/// Handles are live; strings are NUL-terminated; `class_out` and
/// `narrative_out` are writable.
#[no_mangle]
pub unsafe extern "C" fn narrative_heads_predict(
    heads: *const NarrativeHeads,
    backend: *const NarrativeBackend,
    taxonomy: *const NarrativeTaxonomy,
    topic: *const c_char,
    text: *const c_char,
    class_out: *mut usize,
    narrative_out: *mut *mut c_char,
) -> NarrativeStatus {
    guard(|| {
        let heads = heads.as_ref().ok_or_else(|| null("heads"))?;
        let backend = backend.as_ref().ok_or_else(|| null("backend"))?;
        let taxonomy = taxonomy.as_ref().ok_or_else(|| null("taxonomy"))?;
        let topic = str_arg(topic, "topic")?;
        let model = heads
            .0
            .iter()
            .find(|m| m.topic == topic)
            .ok_or_else(|| Failure(NarrativeStatus::UnknownTopic, format!("no head for topic `{topic}`")))?;
        let tweet = TweetRecord::new("ffi", topic, str_arg(text, "text")?);
        let (class, narrative) = predict_narrative_cls(backend.0.as_ref(), model, &taxonomy.0, &tweet)?;
        write_out(class_out, class, "class_out")?;
        write_out(narrative_out, owned_string(narrative), "narrative_out")
    })
}
