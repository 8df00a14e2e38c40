mod common;

use narrative_core::backend::MockBackend;
use narrative_core::corpus::load_records;
use narrative_core::head::{
    accuracy, embed_all, loss_and_grad, parse_checkpoint, predict_narrative_cls, render_checkpoint, train, HeadModel,
    TrainConfig,
};
use narrative_core::metrics::rouge_l_f1;
use narrative_core::taxonomy::load_taxonomy;
use narrative_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, rel_err};

type Data = Vec<(Vec<f64>, usize)>;

fn refs(d: &Data) -> Vec<(&[f64], usize)> {
    d.iter().map(|(x, y)| (x.as_slice(), *y)).collect()
}

/// Loss as a function of one scalar parameter, for finite differences.
fn nudge(m: &HeadModel, which: usize, k: usize, delta: f64) -> HeadModel {
    let mut m = m.clone();
    match which {
        0 => m.w[k] += delta,
        1 => m.bias[k] += delta,
        2 => m.hidden.as_mut().unwrap().w[k] += delta,
        _ => m.hidden.as_mut().unwrap().b[k] += delta,
    }
    m
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let classes = rng.gen_range(2..=5);
        let dim = rng.gen_range(1..=8);
        let hidden = if case % 4 == 3 { Some(rng.gen_range(1..=4)) } else { None };
        let m = HeadModel::init("t", dim, classes, hidden, rng.gen());
        let n = rng.gen_range(1..=6);
        let data: Data = (0..n)
            .map(|_| ((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(), rng.gen_range(0..classes)))
            .collect();
        let wd = if case % 2 == 0 { 0.0 } else { 0.01 };
        let batch = refs(&data);
        let (_, g) = loss_and_grad(&m, &batch, wd).unwrap();
        let mut groups = vec![(0, g.w.clone()), (1, g.bias.clone())];
        if let Some((hw, hb)) = &g.hidden {
            groups.push((2, hw.clone()));
            groups.push((3, hb.clone()));
        }
        for (which, analytic) in groups {
            for (k, a) in analytic.iter().enumerate() {
                let up = loss_and_grad(&nudge(&m, which, k, h), &batch, wd).unwrap().0;
                let down = loss_and_grad(&nudge(&m, which, k, -h), &batch, wd).unwrap().0;
                let numeric = (up - down) / (2.0 * h);
                worst = worst.max(rel_err(*a, numeric));
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

/// Two well separated clusters in four dimensions, ten points each.
pub fn separable(seed: u64) -> Data {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..20)
        .map(|i| {
            let y = i % 2;
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let x = (0..4).map(|d| if d == 0 { sign * 2.0 } else { 0.0 } + rng.gen_range(-0.5..0.5)).collect();
            (x, y)
        })
        .collect()
}

#[test]
fn separable_fixture_is_learned_deterministically() {
    let data = separable(3);
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let m = HeadModel::init("t", 4, 2, None, 5);
    let a = train(&m, &data, &cfg).unwrap();
    let b = train(&m, &data, &cfg).unwrap();
    assert_eq!(accuracy(&a.model, &data).unwrap(), 1.0);
    assert_eq!(a.model, b.model);
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.loss_trace.len(), 200);
    assert!(a.loss_trace.last().unwrap() < a.loss_trace.first().unwrap());
}

/// Two overlapping clusters, so held-out accuracy is informative.
fn overlapping(seed: u64) -> Data {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..40)
        .map(|i| {
            let y = i % 2;
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let x = (0..4).map(|d| if d == 0 { sign * 0.5 } else { 0.0 } + rng.gen_range(-1.0..1.0)).collect();
            (x, y)
        })
        .collect()
}

fn held_out_pair(seed: u64) -> (f64, f64) {
    let all = overlapping(seed);
    let (train_set, held_out) = (all[..6].to_vec(), all[6..].to_vec());
    let mut merged = train_set.clone();
    merged.extend(train_set.iter().cloned());
    let cfg = TrainConfig::default();
    let m = HeadModel::zeros("t", 4, 2);
    let base = accuracy(&train(&m, &train_set, &cfg).unwrap().model, &held_out).unwrap();
    let aug = accuracy(&train(&m, &merged, &cfg).unwrap().model, &held_out).unwrap();
    (base, aug)
}

#[test]
fn duplicated_candidates_do_not_hurt_held_out_accuracy() {
    let (base, aug) = held_out_pair(9);
    assert!(aug >= base, "{aug} < {base}");
    // Not guaranteed per draw, but holds on average.
    let (b, a): (Vec<f64>, Vec<f64>) = (0..10).map(held_out_pair).unzip();
    assert!(a.iter().sum::<f64>() >= b.iter().sum::<f64>());
}

#[test]
fn non_finite_inputs_are_reported() {
    let m = HeadModel::zeros("t", 2, 2);
    let data: Data = vec![(vec![f64::INFINITY, 0.0], 0), (vec![1.0, 0.0], 1)];
    let e = train(&m, &data, &TrainConfig::default()).unwrap_err();
    assert!(matches!(e, Error::NonFinite(_)), "{e}");
}

#[test]
fn classifier_head_recovers_paired_narrative() {
    let backend = MockBackend::new(7);
    let tax = load_taxonomy(&fixture("narratives_appendix.json")).unwrap();
    let records: Vec<_> = load_records(&fixture("tweets20.jsonl"))
        .unwrap()
        .into_iter()
        .filter(|r| r.topic == "Alternative meat")
        .collect();
    let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let emb = embed_all(&backend, &texts, 4).unwrap();
    let data: Data = emb.into_iter().zip(&records).map(|(e, r)| (e, r.narrative_label.unwrap())).collect();
    let set = tax.set("Alternative meat").unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 200,
        ..TrainConfig::default()
    };
    let m = HeadModel::init("Alternative meat", data[0].0.len(), set.len(), None, 2);
    let trained = train(&m, &data, &cfg).unwrap().model;
    assert_eq!(accuracy(&trained, &data).unwrap(), 1.0);

    let tweet = records.iter().find(|r| r.text == "Animals are not ingredients!").unwrap();
    let (class, narrative) = predict_narrative_cls(&backend, &trained, &tax, tweet).unwrap();
    assert_eq!(class, tweet.narrative_label.unwrap());
    assert_eq!(rouge_l_f1(&narrative, "eating meat is murder"), 1.0);

    let text = render_checkpoint(std::slice::from_ref(&trained));
    let back = parse_checkpoint(&text, std::path::Path::new("ckpt")).unwrap();
    assert_eq!(back, vec![trained]);
}
