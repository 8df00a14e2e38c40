//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines appear in order; exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use narrative_core::backend::MockBackend;
use narrative_core::bio::{Tag, TagSequence};
use narrative_core::corpus::{clean_text, TweetRecord};
use narrative_core::head::{accuracy, loss_and_grad, train, HeadModel, TrainConfig};
use narrative_core::icl::{content_free_mean, load_exemplars, predict_aspect_batch, Calibration, PromptMode, PromptSpec, ProbDist, Task};
use narrative_core::metrics::report::{render_table, ReportTable};
use narrative_core::metrics::{bio_scores, bleu, chrf, cohen_kappa, rouge_l_f1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, lcs_oracle, rel_err, rouge_oracle, run_pipeline, SimBackend};

const ROUGE_TOL: f64 = 1e-12;
const ROUGE_PAIRS: usize = 1_000;
const ROUGE_MAX_LEN: usize = 12;
const ROUGE_LIMIT: Duration = Duration::from_secs(5);
const FIXTURE_TOL: f64 = 1e-9;
const CALIBRATION_TOL: f64 = 1e-9;
const CALIBRATION_BACKENDS: u64 = 100;
const GRID_STEP: f64 = 0.01;
const GRAD_CASES: usize = 100;
const GRAD_MAX_CLASSES: usize = 5;
const GRAD_MAX_DIM: usize = 8;
const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_LIMIT: Duration = Duration::from_secs(10);
const TRAIN_EPOCHS: usize = 200;
const E2E_LIMIT: Duration = Duration::from_secs(60);
const BIO_SEQUENCES: usize = 10_000;
const CLEAN_STRINGS: usize = 10_000;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report_fixtures() -> Outcome {
    let mut rendered = Vec::new();
    for name in ["table3.json", "table4.json", "table7.json"] {
        let path = fixture(name);
        let a = render_table(&ReportTable::load(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let b = render_table(&ReportTable::load(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name} renders differently on reload"));
        }
        rendered.push(a);
    }
    let t3 = &rendered[0];
    let rows = [
        ["SFT_T0", "43.56", "43.89"],
        ["SFT_T5F", "44.12", "44.34"],
        ["SFT_BLOOM", "42.64", "42.97"],
        ["SFT_CTRL", "43.34", "--"],
    ];
    for row in rows {
        let found = t3
            .lines()
            .any(|l| l.split_whitespace().collect::<Vec<_>>() == row);
        if !found {
            return Err(format!("table 3 row {row:?} missing"));
        }
    }
    Ok(format!("3 tables byte-stable, {} table-3 rows match", rows.len()))
}

fn rouge_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vocab = ["a", "b", "c", "d", "e"];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..ROUGE_PAIRS {
        let mut gen = || -> Vec<&str> {
            let n = rng.gen_range(0..=ROUGE_MAX_LEN);
            (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect()
        };
        let (a, b) = (gen(), gen());
        let got = rouge_l_f1(&a.join(" "), &b.join(" "));
        let want = rouge_oracle(lcs_oracle(&a, &b), a.len(), b.len());
        worst = worst.max((got - want).abs());
    }
    let t = start.elapsed();
    check(
        worst < ROUGE_TOL && t < ROUGE_LIMIT,
        format!("{ROUGE_PAIRS} pairs, max diff {worst:e} (tol {ROUGE_TOL:e}), {:.2}s (limit {}s)", t.as_secs_f64(), ROUGE_LIMIT.as_secs()),
    )
}

fn hand_fixtures() -> Outcome {
    let s = |x: &str| vec![x.to_string()];
    let (bio_f1, bio_acc) = bio_scores(
        &TagSequence::parse("O B I O").unwrap(),
        &TagSequence::parse("O B O O").unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let cases = [
        ("rouge 12/13", rouge_l_f1("the cat sat on the mat", "the cat sat on the red mat"), 12.0 / 13.0),
        ("bleu identical", bleu(&s("the cat is on the mat"), &s("the cat is on the mat")).unwrap(), 1.0),
        ("bleu disjoint", bleu(&s("alpha beta gamma"), &s("one two three")).unwrap(), 0.0),
        ("chrf identical", chrf("Crypto is a scam", "Crypto is a scam"), 100.0),
        (
            "kappa",
            cohen_kappa(&[1, 1, 1, 0, 0, 0, 1, 0, 1, 0], &[1, 1, 0, 0, 0, 0, 1, 0, 1, 1]).unwrap(),
            0.6,
        ),
        ("bio f1", bio_f1, 2.0 / 3.0),
        ("bio accuracy", bio_acc, 0.75),
    ];
    let worst = cases.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let bad: Vec<&str> = cases.iter().filter(|c| (c.1 - c.2).abs() >= FIXTURE_TOL).map(|c| c.0).collect();
    check(
        bad.is_empty(),
        format!("{} fixtures, max diff {worst:e} (tol {FIXTURE_TOL:e}){}", cases.len(), if bad.is_empty() { String::new() } else { format!(", failing: {bad:?}") }),
    )
}

fn calibration_uniform() -> Outcome {
    let ex = load_exemplars(&fixture("exemplars.json")).map_err(|e| e.to_string())?;
    let spec = PromptSpec::new(PromptMode::Plain, Task::Stance, ex).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in 0..CALIBRATION_BACKENDS {
        let backend = SimBackend { seed };
        let topic = ["Crypto", "Abortion", "Alternative meat"][seed as usize % 3];
        let mean = content_free_mean(&backend, &spec, topic, &["N/A", ""]).map_err(|e| e.to_string())?;
        let cal = Calibration::from_mean(&mean).map_err(|e| e.to_string())?;
        let q = cal.apply(&mean).map_err(|e| e.to_string())?;
        for p in q.probs() {
            worst = worst.max((p - 1.0 / q.probs().len() as f64).abs());
        }
    }
    check(
        worst < CALIBRATION_TOL,
        format!("{CALIBRATION_BACKENDS} simulated backends, max deviation from uniform {worst:e} (tol {CALIBRATION_TOL:e})"),
    )
}

fn calibration_scaling() -> Outcome {
    let labels = vec!["for".to_string(), "against".to_string()];
    let steps = (1.0 / GRID_STEP).round() as usize;
    let scales = [0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0];
    let mut checked = 0;
    for i in 1..steps {
        for j in 1..steps {
            // Unnormalized two-label logit pairs on the grid.
            let l = [(i as f64 * GRID_STEP).ln(), (j as f64 * GRID_STEP).ln()];
            let base = ProbDist::from_logprobs(labels.clone(), &l).map_err(|e| e.to_string())?.argmax();
            for c in scales {
                let scaled = [l[0] * c, l[1] * c];
                let got = ProbDist::from_logprobs(labels.clone(), &scaled).map_err(|e| e.to_string())?.argmax();
                if got != base {
                    return Err(format!("grid point ({i}, {j}) scale {c}: argmax {base} -> {got}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} grid points x scales at resolution {GRID_STEP}, argmax unchanged"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..GRAD_CASES {
        let classes = rng.gen_range(2..=GRAD_MAX_CLASSES);
        let dim = rng.gen_range(1..=GRAD_MAX_DIM);
        let m = HeadModel::init("t", dim, classes, None, rng.gen());
        let data: Vec<(Vec<f64>, usize)> = (0..rng.gen_range(1..=6))
            .map(|_| ((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(), rng.gen_range(0..classes)))
            .collect();
        let batch: Vec<(&[f64], usize)> = data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let wd = if case % 2 == 0 { 0.0 } else { 0.01 };
        let (_, g) = loss_and_grad(&m, &batch, wd).map_err(|e| e.to_string())?;
        let loss = |m: &HeadModel| loss_and_grad(m, &batch, wd).unwrap().0;
        for k in 0..m.w.len() {
            let (mut up, mut down) = (m.clone(), m.clone());
            up.w[k] += GRAD_H;
            down.w[k] -= GRAD_H;
            worst = worst.max(rel_err(g.w[k], (loss(&up) - loss(&down)) / (2.0 * GRAD_H)));
        }
        for k in 0..m.bias.len() {
            let (mut up, mut down) = (m.clone(), m.clone());
            up.bias[k] += GRAD_H;
            down.bias[k] -= GRAD_H;
            worst = worst.max(rel_err(g.bias[k], (loss(&up) - loss(&down)) / (2.0 * GRAD_H)));
        }
    }
    let t = start.elapsed();
    check(
        worst < GRAD_TOL && t < GRAD_LIMIT,
        format!("{GRAD_CASES} instances, max relative error {worst:e} (tol {GRAD_TOL:e}), {:.2}s (limit {}s)", t.as_secs_f64(), GRAD_LIMIT.as_secs()),
    )
}

fn separable(seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..20)
        .map(|i| {
            let y = i % 2;
            let sign = if y == 1 { 1.0 } else { -1.0 };
            ((0..4).map(|d| if d == 0 { sign * 2.0 } else { 0.0 } + rng.gen_range(-0.5..0.5)).collect(), y)
        })
        .collect()
}

/// Two overlapping clusters, so held-out accuracy is informative.
fn overlapping(seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..40)
        .map(|i| {
            let y = i % 2;
            let sign = if y == 1 { 1.0 } else { -1.0 };
            ((0..4).map(|d| if d == 0 { sign * 0.5 } else { 0.0 } + rng.gen_range(-1.0..1.0)).collect(), y)
        })
        .collect()
}

fn trainability() -> Outcome {
    let data = separable(3);
    let cfg = TrainConfig {
        epochs: TRAIN_EPOCHS,
        ..TrainConfig::default()
    };
    let m = HeadModel::init("t", 4, 2, None, 5);
    let a = train(&m, &data, &cfg).map_err(|e| e.to_string())?;
    let b = train(&m, &data, &cfg).map_err(|e| e.to_string())?;
    let acc = accuracy(&a.model, &data).map_err(|e| e.to_string())?;
    check(
        acc == 1.0 && a.model == b.model,
        format!("train accuracy {acc} after {TRAIN_EPOCHS} epochs, repeat run identical: {}", a.model == b.model),
    )
}

fn augmentation() -> Outcome {
    let all = overlapping(9);
    let (train_set, held_out) = (all[..6].to_vec(), all[6..].to_vec());
    let mut merged = train_set.clone();
    merged.extend(train_set.iter().cloned());
    let cfg = TrainConfig::default();
    let m = HeadModel::zeros("t", 4, 2);
    let base = accuracy(&train(&m, &train_set, &cfg).unwrap().model, &held_out).map_err(|e| e.to_string())?;
    let aug = accuracy(&train(&m, &merged, &cfg).unwrap().model, &held_out).map_err(|e| e.to_string())?;
    check(aug >= base, format!("held-out accuracy {aug:.3} with duplicates vs {base:.3} without"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = run_pipeline(a.path());
    let fb = run_pipeline(b.path());
    let t = start.elapsed();
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    check(
        differing.is_empty() && fa.len() == fb.len() && t < E2E_LIMIT,
        format!("{} files identical across 2 runs, {:.2}s (limit {}s){}", fa.len(), t.as_secs_f64(), E2E_LIMIT.as_secs(),
            if differing.is_empty() { String::new() } else { format!(", differing: {differing:?}") }),
    )
}

fn bio_structure() -> Outcome {
    let ex = load_exemplars(&fixture("exemplars.json")).map_err(|e| e.to_string())?;
    let spec = PromptSpec::new(PromptMode::Plain, Task::Aspect, ex).map_err(|e| e.to_string())?;
    let words = [
        "crypto", "is", "the", "a", "scam", "bitcoin", "meat", "planet", "not", "!", "of", "banks", "#btc", "@user",
        "future", "and", "money", "eating", "murder", ",",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    let mut spans = 0;
    while checked < BIO_SEQUENCES {
        let backend = MockBackend::new(rng.gen());
        let tweets: Vec<TweetRecord> = (0..100)
            .map(|i| {
                let n = rng.gen_range(1..=14);
                let text: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
                TweetRecord::new(format!("t{i}"), "Crypto", text.join(" "))
            })
            .collect();
        let refs: Vec<&TweetRecord> = tweets.iter().collect();
        for pred in predict_aspect_batch(&backend, &refs, &spec).map_err(|e| e.to_string())? {
            let pred = pred.map_err(|e| e.to_string())?;
            let tags = pred.tags.tags();
            if tags.first() == Some(&Tag::I) {
                return Err(format!("leading I in {tags:?}"));
            }
            if tags.windows(2).any(|w| w[0] == Tag::O && w[1] == Tag::I) {
                return Err(format!("I after O in {tags:?}"));
            }
            spans += !pred.is_abstention() as usize;
            checked += 1;
        }
    }
    Ok(format!("{checked} predicted sequences ({spans} with a span), no leading I, no O->I"))
}

fn random_unicode(rng: &mut ChaCha8Rng) -> String {
    let pieces = ["#crypto", "@someone", "https://t.co/x", " ", "\t", "\n", "RT ", "&amp;", "\\u00e9", "\u{301}", "…"];
    let n = rng.gen_range(0..24);
    let mut s = String::new();
    for _ in 0..n {
        match rng.gen_range(0..4) {
            0 => s.push_str(pieces[rng.gen_range(0..pieces.len())]),
            1 => s.push(rng.gen_range(' '..='~')),
            _ => {
                if let Some(c) = char::from_u32(rng.gen_range(0..0x11_0000)) {
                    s.push(c);
                }
            }
        }
    }
    s
}

fn cleaning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..CLEAN_STRINGS {
        let s = random_unicode(&mut rng);
        let once = clean_text(&s);
        if !once.is_ascii() {
            return Err(format!("non-ASCII output for {s:?}: {once:?}"));
        }
        if clean_text(&once) != once {
            return Err(format!("not idempotent on {s:?}"));
        }
    }
    Ok(format!("{CLEAN_STRINGS} random strings, idempotent and 7-bit"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("report fixtures render byte-stably", report_fixtures),
        ("rouge-l matches lcs oracle", rouge_oracle_equivalence),
        ("hand-valued metric fixtures", hand_fixtures),
        ("calibration makes content-free mean uniform", calibration_uniform),
        ("argmax invariant under logit scaling", calibration_scaling),
        ("head gradients match central differences", gradient_check),
        ("separable fixture reaches full train accuracy", trainability),
        ("duplicate candidates do not lower held-out accuracy", augmentation),
        ("end-to-end pipeline is byte-identical", end_to_end),
        ("predicted bio tags are well formed", bio_structure),
        ("cleaning is idempotent and 7-bit", cleaning),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
