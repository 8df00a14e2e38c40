use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use narrative_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn fixture(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    c(p.to_str().unwrap())
}

/// Take ownership of a library string.
unsafe fn take(s: *mut c_char) -> String {
    let v = CStr::from_ptr(s).to_str().unwrap().to_string();
    narrative_string_free(s);
    v
}

unsafe fn last_error() -> String {
    let p = narrative_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_str().unwrap().to_string()
}

#[test]
fn pairwise_metrics() {
    unsafe {
        let mut v = 0.0;
        let (a, b) = (c("the cat sat on the mat"), c("the cat sat on the red mat"));
        assert_eq!(narrative_rouge_l_f1(a.as_ptr(), b.as_ptr(), &mut v), NarrativeStatus::Ok);
        assert!((v - 12.0 / 13.0).abs() < 1e-12);
        assert_eq!(narrative_chrf(a.as_ptr(), a.as_ptr(), &mut v), NarrativeStatus::Ok);
        assert_eq!(v, 100.0);
        let (x, y) = (c("crypto is not money"), c("crypto is real money"));
        assert_eq!(narrative_meteor(x.as_ptr(), y.as_ptr(), &mut v), NarrativeStatus::Ok);
        assert!((v - 0.75 * 23.0 / 27.0).abs() < 1e-12);

        assert_eq!(narrative_rouge_l_f1(ptr::null(), b.as_ptr(), &mut v), NarrativeStatus::NullArgument);
        assert!(last_error().contains("candidate"));
        assert_eq!(narrative_rouge_l_f1(a.as_ptr(), b.as_ptr(), ptr::null_mut()), NarrativeStatus::NullArgument);
        let bad = [0xffu8, 0];
        assert_eq!(
            narrative_chrf(bad.as_ptr() as *const c_char, b.as_ptr(), &mut v),
            NarrativeStatus::InvalidUtf8
        );
    }
}

#[test]
fn corpus_metrics() {
    unsafe {
        let cands = [c("the cat is on the mat"), c("a b c d")];
        let ptrs: Vec<*const c_char> = cands.iter().map(|s| s.as_ptr()).collect();
        let mut v = 0.0;
        assert_eq!(narrative_bleu(ptrs.as_ptr(), ptrs.as_ptr(), 2, &mut v), NarrativeStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(narrative_bleu(ptrs.as_ptr(), ptrs.as_ptr(), 0, &mut v), NarrativeStatus::InvalidInput);

        let a = [1, 1, 1, 0, 0, 0, 1, 0, 1, 0];
        let b = [1, 1, 0, 0, 0, 0, 1, 0, 1, 1];
        assert_eq!(narrative_cohen_kappa(a.as_ptr(), b.as_ptr(), 10, &mut v), NarrativeStatus::Ok);
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(narrative_krippendorff_alpha(a.as_ptr(), b.as_ptr(), 10, &mut v), NarrativeStatus::Ok);
        assert!((v - 0.62).abs() < 1e-12);

        let (mut f1, mut acc) = (0.0, 0.0);
        let (g, p) = (c("O B I O"), c("O B O O"));
        assert_eq!(narrative_bio_scores(g.as_ptr(), p.as_ptr(), &mut f1, &mut acc), NarrativeStatus::Ok);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12 && (acc - 0.75).abs() < 1e-12);
        let invalid = c("O I");
        assert_eq!(narrative_bio_scores(invalid.as_ptr(), p.as_ptr(), &mut f1, &mut acc), NarrativeStatus::InvalidInput);
    }
}

#[test]
fn cleaning_round_trip() {
    unsafe {
        let mut out = ptr::null_mut();
        let raw = c("Caf\u{e9} \u{1F600} @bob https://t.co/x  #btc");
        assert_eq!(narrative_clean_text(raw.as_ptr(), &mut out), NarrativeStatus::Ok);
        let once = take(out);
        assert!(once.is_ascii());
        let again = c(&once);
        assert_eq!(narrative_clean_text(again.as_ptr(), &mut out), NarrativeStatus::Ok);
        assert_eq!(take(out), once);
        assert!(narrative_last_error().is_null());
        narrative_string_free(ptr::null_mut());
    }
}

#[test]
fn taxonomy_handle() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(narrative_taxonomy_load(fixture("narratives_appendix.json").as_ptr(), &mut t), NarrativeStatus::Ok);
        let mut n = 0;
        let topic = c("Crypto");
        assert_eq!(narrative_taxonomy_len(t, topic.as_ptr(), &mut n), NarrativeStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(narrative_taxonomy_lookup(t, topic.as_ptr(), n - 1, &mut s), NarrativeStatus::Ok);
        assert_eq!(take(s), "No claim in the list is describing the tweet");
        assert_eq!(narrative_taxonomy_lookup(t, topic.as_ptr(), n, &mut s), NarrativeStatus::OutOfRange);
        let nope = c("Gardening");
        assert_eq!(narrative_taxonomy_len(t, nope.as_ptr(), &mut n), NarrativeStatus::UnknownTopic);
        assert!(last_error().contains("Gardening"));
        narrative_taxonomy_free(t);
        narrative_taxonomy_free(ptr::null_mut());

        let missing = c("/nonexistent/taxonomy.json");
        assert_eq!(narrative_taxonomy_load(missing.as_ptr(), &mut t), NarrativeStatus::Io);
    }
}

#[test]
fn backend_and_heads() {
    unsafe {
        let b = narrative_backend_mock(7, 0);
        let mut dim = 0;
        let text = c("Animals are not ingredients!");
        assert_eq!(
            narrative_backend_embed(b, text.as_ptr(), ptr::null_mut(), 0, &mut dim),
            NarrativeStatus::BufferTooSmall
        );
        let mut buf = vec![0.0; dim];
        assert_eq!(narrative_backend_embed(b, text.as_ptr(), buf.as_mut_ptr(), dim, &mut dim), NarrativeStatus::Ok);
        assert!(buf.iter().any(|x| *x != 0.0));

        // A zero head predicts class 0 for any input.
        let dir = tempfile_dir();
        let ckpt = dir.join("heads.txt");
        let mut tax = ptr::null_mut();
        assert_eq!(narrative_taxonomy_load(fixture("narratives_appendix.json").as_ptr(), &mut tax), NarrativeStatus::Ok);
        let topic = c("Alternative meat");
        let mut classes = 0;
        assert_eq!(narrative_taxonomy_len(tax, topic.as_ptr(), &mut classes), NarrativeStatus::Ok);
        let model = narrative_core::head::HeadModel::zeros("Alternative meat", dim, classes);
        narrative_core::head::save_checkpoint(&[model], &ckpt).unwrap();

        let mut heads = ptr::null_mut();
        let path = c(ckpt.to_str().unwrap());
        assert_eq!(narrative_heads_load(path.as_ptr(), &mut heads), NarrativeStatus::Ok);
        let (mut class, mut narrative) = (usize::MAX, ptr::null_mut());
        assert_eq!(
            narrative_heads_predict(heads, b, tax, topic.as_ptr(), text.as_ptr(), &mut class, &mut narrative),
            NarrativeStatus::Ok
        );
        assert_eq!(class, 0);
        let mut want = ptr::null_mut();
        assert_eq!(narrative_taxonomy_lookup(tax, topic.as_ptr(), 0, &mut want), NarrativeStatus::Ok);
        assert_eq!(take(narrative), take(want));

        let other = c("Crypto");
        assert_eq!(
            narrative_heads_predict(heads, b, tax, other.as_ptr(), text.as_ptr(), &mut class, &mut narrative),
            NarrativeStatus::UnknownTopic
        );
        narrative_heads_free(heads);
        narrative_taxonomy_free(tax);
        narrative_backend_free(b);

        let mut hb = ptr::null_mut();
        let (url, model) = (c("ftp://x"), c("m"));
        assert_eq!(narrative_backend_http(url.as_ptr(), model.as_ptr(), &mut hb), NarrativeStatus::InvalidInput);
        let url = c("http://127.0.0.1:9");
        assert_eq!(narrative_backend_http(url.as_ptr(), model.as_ptr(), &mut hb), NarrativeStatus::Ok);
        narrative_backend_free(hb);
        std::fs::remove_dir_all(dir).unwrap();
    }
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("narrative-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
