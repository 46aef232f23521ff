mod common;

use proptest::prelude::*;
use smdn::calibration::softermax;
use smdn::data::ExampleRecord;
use smdn::thresholds::{fit_thresholds, predict_open_set, thresholded_max};
use smdn::{Label, LabelSpace, Method, Split};

use common::*;

fn space(n: usize) -> LabelSpace {
    LabelSpace::new((0..n).map(|i| format!("c{i}")).collect(), 1).unwrap()
}

#[test]
fn confidence_matches_brute_force() {
    let mut r = rng(5);
    let recs = softmax_sampled(400, 5, 2.0, 6);
    let model = fit_thresholds(&recs, &space(5), 1.3, 1.0, Split::Val).unwrap();
    let t = model.thresholds();
    for _ in 0..2000 {
        let z: Vec<f64> = (0..5).map(|_| 3.0 * normal(&mut r)).collect();
        let p = direct_probs(&z, 1.3);
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..5 {
            if p[i] - t[i] > best.0 {
                best = (p[i] - t[i], i);
            }
        }
        let (score, class) = model.confidence_score(&z).unwrap();
        assert!((score - best.0).abs() < 1e-12);
        assert_eq!(class, best.1);
    }
}

#[test]
fn known_decisions_clear_their_threshold() {
    let recs = softmax_sampled(600, 4, 2.5, 8);
    let model = fit_thresholds(&recs, &space(4), 1.2, 2.0, Split::Val).unwrap();
    let t = model.thresholds();
    for rec in &recs {
        let pred = predict_open_set(rec, &model, Method::Softermax).unwrap();
        let p = softermax(&rec.logits, 1.2).unwrap();
        match pred.decision {
            Label::Known(c) => assert!(p[c] >= t[c]),
            Label::Unknown => assert!(p.iter().zip(&t).all(|(pi, ti)| pi < ti)),
        }
    }
}

#[test]
fn softened_temperature_can_flip_a_decision() {
    // Two training classes with spread-out confidences keep thresholds above
    // the floor; a borderline query is rejected at T = 1 but accepted at
    // T = 1.4 because the threshold drops faster than its probability.
    let mut recs = Vec::new();
    for (i, m) in [4.0, 4.5, 5.0, 5.5, 6.0, 6.5].iter().enumerate() {
        recs.push(record(2 * i, Split::Train, 0, vec![*m, 0.0], vec![0.0]));
        recs.push(record(2 * i + 1, Split::Train, 1, vec![0.0, *m], vec![0.0]));
    }
    let doc = fit_thresholds(&recs, &space(2), 1.0, 2.0, Split::Train).unwrap();
    let soft = fit_thresholds(&recs, &space(2), 1.4, 2.0, Split::Train).unwrap();
    let query: ExampleRecord<f64> = record(99, Split::Test, 0, vec![3.95, 0.0], vec![0.0]);
    let a = predict_open_set(&query, &doc, Method::DocSoftmax).unwrap();
    let b = predict_open_set(&query, &soft, Method::Softermax).unwrap();
    assert_eq!(a.decision, Label::Unknown, "doc threshold {:?}", doc.thresholds());
    assert_eq!(b.decision, Label::Known(0), "softermax threshold {:?}", soft.thresholds());
}

#[test]
fn softmax_t_rejects_at_half() {
    let m = fit_thresholds(&softmax_sampled(50, 2, 1.0, 1), &space(2), 1.0, 2.0, Split::Val).unwrap();
    let tie = record(0, Split::Test, 0, vec![1.0, 1.0], vec![0.0]);
    assert_eq!(predict_open_set(&tie, &m, Method::SoftmaxT).unwrap().decision, Label::Unknown);
    let sure = record(1, Split::Test, 0, vec![1.0, 0.9], vec![0.0]);
    assert_eq!(predict_open_set(&sure, &m, Method::SoftmaxT).unwrap().decision, Label::Known(0));
}

#[test]
fn fusion_methods_need_the_fused_model() {
    let m = fit_thresholds(&softmax_sampled(50, 2, 1.0, 1), &space(2), 1.0, 2.0, Split::Val).unwrap();
    let q = record(0, Split::Test, 0, vec![1.0, 0.0], vec![0.0]);
    assert!(predict_open_set(&q, &m, Method::Lof).is_err());
    assert!(predict_open_set(&q, &m, Method::Smdn).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn larger_alpha_never_rejects_more(seed in 0..1000u64, a in 0.0..3.0_f64, da in 0.0..3.0_f64) {
        let recs = softmax_sampled(200, 3, 2.0, seed);
        let lo = fit_thresholds(&recs, &space(3), 1.0, a, Split::Val).unwrap();
        let hi = fit_thresholds(&recs, &space(3), 1.0, a + da, Split::Val).unwrap();
        for (x, y) in lo.thresholds().iter().zip(hi.thresholds()) {
            prop_assert!(y <= *x);
        }
        for rec in &recs {
            let r_lo = predict_open_set(rec, &lo, Method::DocSoftmax).unwrap().decision.is_unknown();
            let r_hi = predict_open_set(rec, &hi, Method::DocSoftmax).unwrap().decision.is_unknown();
            prop_assert!(!r_hi || r_lo);
        }
    }

    #[test]
    fn thresholded_max_picks_largest_margin(p in proptest::collection::vec(0.0..1.0_f64, 1..10), t in 0.5..1.0_f64) {
        let thresholds = vec![t; p.len()];
        let (score, idx) = thresholded_max(&p, &thresholds);
        prop_assert_eq!(score, p[idx] - t);
        prop_assert!(p.iter().all(|&v| v - t <= score));
    }
}

#[test]
fn thresholds_round_trip_and_reject_tampering() {
    let recs = softmax_sampled(300, 3, 2.0, 3);
    let m = fit_thresholds(&recs, &space(3), 1.1, 2.0, Split::Val).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("thresholds.json");
    m.save(&path).unwrap();
    assert_eq!(smdn::SofterMaxModel::load(&path).unwrap(), m);
    let mut bad = m.clone();
    bad.per_class[0].threshold += 0.01;
    bad.save(&path).unwrap();
    assert!(smdn::SofterMaxModel::load(&path).is_err());
}
