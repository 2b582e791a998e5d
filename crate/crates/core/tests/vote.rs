mod common;

use std::collections::{BTreeMap, BTreeSet};

use dfpe::config::RunConfig;
use dfpe::error::Error;
use dfpe::ingest::{Dataset, DisciplineMap, PredictionRecord, PredictionSet, QuestionRecord, Split};
use dfpe::pipeline::{run, Inputs};
use dfpe::select::{EnsembleMember, SubjectEnsemble};
use dfpe::simulate::{default_spec, generate};
use dfpe::sweep::preset;
use dfpe::vote::{
    baseline_bsm, baseline_bsmov, baseline_mvoting, cooccurrence_matrix, evaluate, mvoting_answer, participation_stats,
    predict_all, render_report, score_answers, weighted_vote, Answers, DisciplineAggregation, Method,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn question(subject: &str, id: &str, split: Split, correct: &str) -> QuestionRecord {
    QuestionRecord {
        question_id: id.into(),
        subject_id: subject.into(),
        split,
        choices: ["A", "B", "C", "D"].map(String::from).to_vec(),
        correct_choice: correct.into(),
        question: None,
        choice_texts: None,
    }
}

fn pred(model: &str, subject: &str, id: &str, choice: &str) -> PredictionRecord {
    PredictionRecord {
        model_id: model.into(),
        subject_id: subject.into(),
        question_id: id.into(),
        predicted_choice: choice.into(),
        raw_response: None,
    }
}

fn ensemble(weights: &[(&str, f64)]) -> SubjectEnsemble {
    SubjectEnsemble {
        subject_id: "s".into(),
        threshold: 0.0,
        members: weights
            .iter()
            .map(|(m, w)| EnsembleMember { model_id: m.to_string(), alpha: 0.5, weight_raw: *w, weight: *w })
            .collect(),
        cluster_of: BTreeMap::new(),
        alphas: BTreeMap::new(),
    }
}

#[test]
fn plurality_examples() {
    let q = question("s", "q", Split::Test, "A");
    let votes = BTreeMap::from([("m1", "B"), ("m2", "B"), ("m3", "C")]);
    assert_eq!(mvoting_answer(&q, &votes).as_deref(), Some("B"));
    let tie = BTreeMap::from([("m1", "D"), ("m2", "B")]);
    assert_eq!(mvoting_answer(&q, &tie).as_deref(), Some("B"));
    assert_eq!(mvoting_answer(&q, &BTreeMap::new()), None);
}

#[test]
fn weighted_vote_examples() {
    let q = question("s", "q", Split::Test, "A");
    let e = ensemble(&[("m1", 0.5), ("m2", 0.3), ("m3", 0.2)]);
    let t = weighted_vote(&e, &q, &BTreeMap::from([("m1", "A"), ("m2", "B"), ("m3", "B")])).unwrap();
    assert_eq!(t.winner, "A");
    assert_eq!(t.scores[0], ("A".to_string(), 0.5));
    assert_eq!(t.scores[1], ("B".to_string(), 0.5));
    // exact tie resolved by choice order
    let e = ensemble(&[("m1", 0.5), ("m2", 0.5)]);
    let t = weighted_vote(&e, &q, &BTreeMap::from([("m1", "C"), ("m2", "B")])).unwrap();
    assert_eq!(t.winner, "B");
    // non-members are ignored, an empty vote is an error
    let err = weighted_vote(&e, &q, &BTreeMap::from([("other", "A")])).unwrap_err();
    assert!(matches!(err, Error::EmptyVote { .. }));
    assert!(weighted_vote(&e, &q, &BTreeMap::from([("m1", "Z")])).is_err());
}

#[test]
fn fixture_mvoting_matches_script() {
    let inputs = small_inputs();
    let want = expected("expected.json");
    let mv = baseline_mvoting(&inputs.predictions, &inputs.dataset);
    for (key, choice) in want["mvoting"].as_object().unwrap() {
        let (s, q) = key.split_once('/').unwrap();
        assert_eq!(mv[s][q].as_deref(), choice.as_str(), "{key}");
    }
}

/// Validation favors `early`; test favors `late`.
fn rank_flip() -> (Dataset, PredictionSet) {
    let mut qs = Vec::new();
    let mut ps = Vec::new();
    for i in 0..4 {
        let v = format!("v{i}");
        qs.push(question("s", &v, Split::Validation, "A"));
        ps.push(pred("early", "s", &v, "A"));
        ps.push(pred("late", "s", &v, if i < 2 { "A" } else { "B" }));
    }
    for i in 0..4 {
        let t = format!("t{i}");
        qs.push(question("s", &t, Split::Test, "C"));
        ps.push(pred("early", "s", &t, if i < 1 { "C" } else { "D" }));
        ps.push(pred("late", "s", &t, "C"));
    }
    let ds = Dataset::from_records(qs).unwrap();
    let set = PredictionSet::from_records(ps, &ds).unwrap();
    (ds, set)
}

#[test]
fn bsm_and_bsmov_can_differ() {
    let (ds, set) = rank_flip();
    assert_eq!(baseline_bsm(&set, &ds).0, "late");
    assert_eq!(baseline_bsmov(&set, &ds).0, "early");
}

#[test]
fn best_model_ties_go_to_smaller_id() {
    let qs = vec![question("s", "t0", Split::Test, "A"), question("s", "v0", Split::Validation, "A")];
    let ds = Dataset::from_records(qs).unwrap();
    let ps = ["zulu", "mike", "alpha"]
        .iter()
        .flat_map(|m| [pred(m, "s", "t0", "A"), pred(m, "s", "v0", "A")])
        .collect();
    let set = PredictionSet::from_records(ps, &ds).unwrap();
    assert_eq!(baseline_bsm(&set, &ds).0, "alpha");
    assert_eq!(baseline_bsmov(&set, &ds).0, "alpha");
}

#[test]
fn discipline_mean_is_unweighted() {
    // d1: one subject, 4 questions, 2 right. d2: one subject, 1 question, right.
    let mut qs = Vec::new();
    for i in 0..4 {
        qs.push(question("s1", &format!("t{i}"), Split::Test, "A"));
    }
    qs.push(question("s2", "t0", Split::Test, "A"));
    let ds = Dataset::from_records(qs).unwrap();
    let mut answers: Answers = BTreeMap::new();
    answers.insert("s1".into(), (0..4).map(|i| (format!("t{i}"), Some(if i < 2 { "A" } else { "B" }.to_string()))).collect());
    answers.insert("s2".into(), BTreeMap::from([("t0".to_string(), Some("A".to_string()))]));
    let map = DisciplineMap::new(BTreeMap::from([("s1".into(), "d1".into()), ("s2".into(), "d2".into())]));
    for agg in [DisciplineAggregation::Pooled, DisciplineAggregation::SubjectMean] {
        let r = score_answers(Method::Dfpe, &answers, &ds, &map, agg).unwrap();
        assert_eq!(r.discipline_accuracy_mean, 0.75);
        assert_eq!(r.overall_accuracy, 0.6);
    }

    // one discipline over both subjects separates the two aggregations
    let one = DisciplineMap::new(BTreeMap::from([("s1".into(), "d".into()), ("s2".into(), "d".into())]));
    let pooled = score_answers(Method::Dfpe, &answers, &ds, &one, DisciplineAggregation::Pooled).unwrap();
    let mean = score_answers(Method::Dfpe, &answers, &ds, &one, DisciplineAggregation::SubjectMean).unwrap();
    assert_eq!(pooled.per_discipline["d"], 0.6);
    assert_eq!(mean.per_discipline["d"], 0.75);

    let missing = DisciplineMap::new(BTreeMap::from([("s1".into(), "d1".into())]));
    assert!(score_answers(Method::Dfpe, &answers, &ds, &missing, DisciplineAggregation::Pooled).is_err());
}

#[test]
fn single_subject_levels_agree() {
    let (ds, set) = rank_flip();
    let map = DisciplineMap::new(BTreeMap::from([("s".into(), "only".into())]));
    let ensembles = run(
        &Inputs { dataset: ds.clone(), predictions: set.clone(), disciplines: Some(map.clone()), embeddings: None },
        &RunConfig::default(),
        DisciplineAggregation::Pooled,
    )
    .unwrap()
    .ensembles;
    let report = evaluate(&set, &ds, &map, &ensembles, DisciplineAggregation::Pooled).unwrap();
    for m in &report.methods {
        assert_eq!(m.overall_accuracy, m.subject_accuracy["s"]);
        assert_eq!(m.overall_accuracy, m.discipline_accuracy_mean);
    }
}

#[test]
fn abstentions_score_as_wrong() {
    let qs = vec![question("s", "v0", Split::Validation, "A"), question("s", "t0", Split::Test, "A"), question("s", "t1", Split::Test, "A")];
    let ds = Dataset::from_records(qs).unwrap();
    let set = PredictionSet::from_records(vec![pred("m", "s", "v0", "A"), pred("m", "s", "t0", "A")], &ds).unwrap();
    let inputs = Inputs { dataset: ds, predictions: set, disciplines: None, embeddings: None };
    let out = run(&inputs, &RunConfig::default(), DisciplineAggregation::Pooled).unwrap();
    let answers = predict_all(&out.ensembles, &inputs.predictions, &inputs.dataset).unwrap();
    assert_eq!(answers["s"]["t1"], None);
    assert_eq!(out.report.method(Method::Dfpe).overall_accuracy, 0.5);
    assert_eq!(out.report.method(Method::MVoting).overall_accuracy, 0.5);
}

#[test]
fn accuracy_identities_on_synthetic_pool() {
    let pool = generate(&default_spec(5)).unwrap();
    let inputs = synthetic_inputs(pool);
    let out = run(&inputs, &preset("optimal").unwrap(), DisciplineAggregation::Pooled).unwrap();
    for m in &out.report.methods {
        assert!((0.0..=1.0).contains(&m.overall_accuracy));
        let weighted: f64 = m
            .subject_accuracy
            .iter()
            .map(|(s, a)| a * inputs.dataset.subject(s).unwrap().test.len() as f64)
            .sum::<f64>()
            / m.total as f64;
        assert!((weighted - m.overall_accuracy).abs() < 1e-12);
        assert!(m.per_discipline.values().all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn participation_edge_cases_and_recount() {
    let inputs = synthetic_inputs(generate(&default_spec(2)).unwrap());
    let n = inputs.predictions.pool().len();

    let singletons = RunConfig { quantile_q: 0.0, dbscan_min_pts: n + 1, ..RunConfig::default() };
    let p = run(&inputs, &singletons, DisciplineAggregation::Pooled).unwrap().report.participation;
    assert!(p.per_subject.values().all(|&c| c == n));

    let one = RunConfig { dbscan_eps: 2.0, ..RunConfig::default() };
    let p = run(&inputs, &one, DisciplineAggregation::Pooled).unwrap().report.participation;
    assert!(p.per_subject.values().all(|&c| c == 1));
    assert_eq!(p.histogram, BTreeMap::from([(1, 20)]));

    let out = run(&inputs, &preset("balanced").unwrap(), DisciplineAggregation::Pooled).unwrap();
    let recount: usize = out.ensembles.values().map(|e| e.member_ids().count()).sum();
    let p = &out.report.participation;
    assert_eq!(*p, participation_stats(&out.ensembles));
    assert_eq!(p.mean, recount as f64 / out.ensembles.len() as f64);
    assert_eq!(p.histogram.values().sum::<usize>(), 20);
    assert!(p.min <= p.max && p.max <= n);
}

fn random_selection(rng: &mut ChaCha8Rng, pool: &[String], subjects: usize) -> BTreeMap<String, SubjectEnsemble> {
    (0..subjects)
        .map(|k| {
            let members: Vec<(&str, f64)> = pool.iter().filter(|_| rng.gen_bool(0.5)).map(|m| (m.as_str(), 0.1)).collect();
            (format!("s{k:02}"), ensemble(&members))
        })
        .collect()
}

#[test]
fn cooccurrence_matches_pairwise_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pool: Vec<String> = (0..8).map(|i| format!("m{i}")).collect();
    for _ in 0..20 {
        let sel = random_selection(&mut rng, &pool, 20);
        let c = cooccurrence_matrix(&sel, &pool);
        for a in &pool {
            for b in &pool {
                let want = if a == b {
                    0
                } else {
                    sel.values().filter(|e| e.member(a).is_some() && e.member(b).is_some()).count() as u32
                };
                assert_eq!(c.get(a, b), Some(want));
            }
            let row: u32 = pool.iter().map(|b| c.get(a, b).unwrap()).sum();
            assert!(row as usize <= 20 * (pool.len() - 1));
        }
    }
}

#[test]
fn cooccurrence_simple_cases() {
    let pool: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let sel: BTreeMap<String, SubjectEnsemble> =
        (0..3).map(|k| (format!("s{k}"), ensemble(&[("a", 0.5), ("b", 0.5)]))).collect();
    let c = cooccurrence_matrix(&sel, &pool);
    assert_eq!(c.get("a", "b"), Some(3));
    assert_eq!(c.get("b", "a"), Some(3));
    assert!(pool.iter().all(|m| c.get("c", m) == Some(0) && c.get(m, "c") == Some(0)));
    assert_eq!(c.to_csv(), "model,a,b,c\na,0,3,0\nb,3,0,0\nc,0,0,0\n");
}

#[test]
fn gamma_zero_singletons_equal_mvoting_on_fixture() {
    let inputs = small_inputs();
    let cfg = RunConfig { quantile_q: 0.0, gamma: 0.0, dbscan_min_pts: 6, ..RunConfig::default() };
    let out = run(&inputs, &cfg, DisciplineAggregation::Pooled).unwrap();
    let dfpe = predict_all(&out.ensembles, &inputs.predictions, &inputs.dataset).unwrap();
    assert_eq!(dfpe, baseline_mvoting(&inputs.predictions, &inputs.dataset));
    assert_eq!(out.report.method(Method::Dfpe).correct, out.report.method(Method::MVoting).correct);
}

#[test]
fn report_renders_both_tables() {
    let inputs = small_inputs();
    let out = run(&inputs, &RunConfig::default(), DisciplineAggregation::Pooled).unwrap();
    let text = render_report(&out.report);
    for needle in ["Discipline-Accuracy", "BSMoV", "MVoting", "DFPE", "Average", "Chemistry", "Humanities", "Physics"] {
        assert!(text.contains(needle), "{needle} missing:\n{text}");
    }
    let json = serde_json::to_string(&out.report).unwrap();
    assert!(json.contains("\"BSMoV\"") && json.contains("\"discipline_accuracy_mean\""));
}

fn tally_case() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize)> {
    (2usize..=6).prop_flat_map(|k| {
        (
            proptest::collection::vec(0.001f64..1.0, 7),
            proptest::collection::vec(0..k, 7),
            Just(k),
        )
    })
}

proptest! {
    #[test]
    fn seven_member_tally_matches_exhaustive_sum((raw, picks, k) in tally_case(), lambda in 0.01f64..100.0) {
        let labels: Vec<String> = (0..k).map(|i| char::from(b'A' + i as u8).to_string()).collect();
        let q = QuestionRecord { choices: labels.clone(), correct_choice: labels[0].clone(), ..question("s", "q", Split::Test, "A") };
        let total: f64 = raw.iter().sum();
        let names: Vec<String> = (0..7).map(|i| format!("m{i}")).collect();
        let weights: Vec<(&str, f64)> = names.iter().zip(&raw).map(|(m, r)| (m.as_str(), r / total)).collect();
        let votes: BTreeMap<&str, &str> = names.iter().zip(&picks).map(|(m, p)| (m.as_str(), labels[*p].as_str())).collect();
        let t = weighted_vote(&ensemble(&weights), &q, &votes).unwrap();

        let mut best = (0usize, f64::NEG_INFINITY);
        for (ci, _) in labels.iter().enumerate() {
            let s: f64 = weights.iter().zip(&picks).filter(|(_, p)| **p == ci).map(|((_, w), _)| *w).sum();
            prop_assert!((t.scores[ci].1 - s).abs() < 1e-12);
            if s > best.1 + 1e-12 {
                best = (ci, s);
            }
        }
        prop_assert_eq!(&t.winner, &labels[best.0]);
        prop_assert!((t.scores.iter().map(|(_, s)| s).sum::<f64>() - 1.0).abs() < 1e-9);

        // scaling every weight leaves the winner alone
        let scaled: Vec<(&str, f64)> = weights.iter().map(|(m, w)| (*m, w * lambda)).collect();
        let t2 = weighted_vote(&ensemble(&scaled), &q, &votes).unwrap();
        prop_assert_eq!(t2.winner, t.winner);
    }
}

#[test]
fn unique_methods_in_table_order() {
    let inputs = small_inputs();
    let out = run(&inputs, &RunConfig::default(), DisciplineAggregation::Pooled).unwrap();
    let order: Vec<Method> = out.report.methods.iter().map(|m| m.method).collect();
    assert_eq!(order, Method::ALL);
    let set: BTreeSet<Method> = order.into_iter().collect();
    assert_eq!(set.len(), 4);
}
