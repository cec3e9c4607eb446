mod common;

use std::collections::BTreeMap;

use common::synth;
use groundkit::benchkit::{
    attribute_slot, chance_accuracy, evaluate, is_context_determined, render_table, synth_generate, Assignment,
    Baseline, EvalReport, NamedReport, SynthConfig, ATTRIBUTES,
};
use groundkit::data::{CommonsenseType, Sample, Token};
use groundkit::grounder::{select_context_objects, Region};
use groundkit::rulekit::{filter_sample, FilterVerdict};
use proptest::prelude::*;

fn chance_oracle(samples: &[Sample]) -> f64 {
    // every synthetic sample has exactly one link
    samples.iter().map(|s| 1.0 / s.image.persons.len() as f64).sum::<f64>() / samples.len() as f64
}

fn run(b: Baseline, samples: &[Sample], seed: u64) -> EvalReport {
    let a: Vec<Assignment> = samples.iter().map(|s| b.assign(s, seed)).collect();
    evaluate(&a, samples).unwrap()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = synth(100, 5, 21);
    assert_eq!(a, synth(100, 5, 21));
    assert_ne!(a, synth(100, 5, 22));
    // the first samples do not depend on how many follow
    assert_eq!(synth(10, 5, 21).samples, a.samples[..10]);
}

#[test]
fn synth_samples_are_valid_and_kept() {
    let d = synth(500, 10, 4);
    for s in &d.samples {
        s.validate(&d.header).unwrap();
        assert_eq!(filter_sample(s), FilterVerdict::Keep, "{}", s.sample_id);
        assert_eq!(s.description.link_ids(), vec![0]);
    }
}

#[test]
fn context_samples_carry_a_qualifying_object() {
    let d = synth_generate(&SynthConfig {
        n_samples: 400,
        distractor_rate: 1.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut n_context = 0;
    for s in &d.samples {
        let sets = select_context_objects(s, 0.3, 0.1, true).unwrap();
        let has_object = sets[0].positives.iter().any(|p| matches!(p.region, Region::Object(_)));
        if is_context_determined(s) {
            n_context += 1;
            assert_eq!(s.commonsense_type, CommonsenseType::Mental);
            assert!(has_object, "{}", s.sample_id);
            // the named class sits on the ground-truth person
            let class = s.description.tokens.iter().filter_map(Token::as_word).nth(3).unwrap();
            let gt = s.labels.get(0).unwrap();
            let obj = s.image.context_objects.iter().find(|c| c.class_name == class).unwrap();
            assert!(s.image.persons[gt].bbox.contains(&obj.bbox));
        } else {
            assert_eq!(s.commonsense_type, CommonsenseType::Temporal);
        }
    }
    assert!((150..250).contains(&n_context), "{n_context}");
}

#[test]
fn attribute_samples_solved_by_reading_the_one_hot() {
    let d = synth(1000, 10, 13);
    let mut solved = 0;
    let mut total = 0;
    for s in d.samples.iter().filter(|s| !is_context_determined(s)) {
        let word = s.description.tokens.iter().filter_map(Token::as_word).nth(2).unwrap();
        let a = ATTRIBUTES.iter().position(|w| *w == word).unwrap();
        let slot = attribute_slot(a);
        let chosen = (0..s.image.persons.len())
            .max_by(|&i, &j| s.image.persons[i].feature[slot].total_cmp(&s.image.persons[j].feature[slot]))
            .unwrap();
        total += 1;
        solved += (chosen == s.labels.get(0).unwrap()) as usize;
    }
    assert!(total > 400);
    assert_eq!(solved, total);
}

#[test]
fn heuristics_sit_at_chance() {
    let d = synth(2000, 5, 7);
    let chance = chance_oracle(&d.samples);
    assert!((chance_accuracy(&d.samples) - chance).abs() < 1e-12);
    for b in Baseline::ALL {
        let acc = run(b, &d.samples, 0).overall.accuracy;
        let tol = if b == Baseline::Random { 0.03 } else { 0.05 };
        assert!((acc - chance).abs() < tol, "{}: {acc} vs {chance}", b.name());
    }
}

#[test]
fn random_baseline_monte_carlo_two_persons() {
    let d = synth(10_000, 2, 99);
    assert!(d.samples.iter().all(|s| s.image.persons.len() == 2));
    let acc = run(Baseline::Random, &d.samples, 5).overall.accuracy;
    // 3 standard deviations of a 10k-draw Bernoulli(0.5) mean
    assert!((acc - 0.5).abs() < 3.0 * 0.005, "{acc}");
}

#[test]
fn random_baseline_depends_on_seed_only() {
    let d = synth(50, 5, 2);
    let a = run(Baseline::Random, &d.samples, 3);
    assert_eq!(a, run(Baseline::Random, &d.samples, 3));
    let mut rev = d.samples.clone();
    rev.reverse();
    assert_eq!(a, run(Baseline::Random, &rev, 3));
}

#[test]
fn missing_prediction_names_the_sample() {
    let d = synth(5, 3, 0);
    let mut a: Vec<Assignment> = d.samples.iter().map(|s| Baseline::BigToSmall.assign(s, 0)).collect();
    a.remove(2);
    let err = evaluate(&a, &d.samples).unwrap_err();
    assert!(err.to_string().contains(&d.samples[2].sample_id), "{err}");
}

#[test]
fn constructed_per_type_accuracy() {
    // correct on every temporal sample, wrong on every mental one
    let d = synth(300, 4, 17);
    let a: Vec<Assignment> = d
        .samples
        .iter()
        .map(|s| {
            let gt = s.labels.get(0).unwrap();
            let pick = if is_context_determined(s) { (gt + 1) % s.image.persons.len() } else { gt };
            Assignment {
                sample_id: s.sample_id.clone(),
                choices: BTreeMap::from([(0, pick)]),
            }
        })
        .collect();
    let r = evaluate(&a, &d.samples).unwrap();
    assert_eq!(r.by_type["temporal"].accuracy, 1.0);
    assert_eq!(r.by_type["mental"].accuracy, 0.0);
    let temporal = d.samples.iter().filter(|s| !is_context_determined(s)).count();
    assert_eq!(r.overall.correct, temporal);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluate_decomposes_and_ignores_order(seed in 0u64..10_000, rot in 0usize..60) {
        let d = synth(60, 6, seed);
        let a: Vec<Assignment> = d.samples.iter().map(|s| Baseline::Random.assign(s, seed)).collect();
        let r = evaluate(&a, &d.samples).unwrap();
        let weighted: f64 = r.by_type.values().map(|b| b.accuracy * b.total as f64).sum::<f64>() / r.overall.total as f64;
        prop_assert!((weighted - r.overall.accuracy).abs() < 1e-12);
        let by_n: usize = r.by_n.values().map(|b| b.correct).sum();
        prop_assert_eq!(by_n, r.overall.correct);
        let mut samples = d.samples.clone();
        samples.rotate_left(rot);
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(evaluate(&shuffled, &samples).unwrap(), r);
    }
}

#[test]
fn table_json_round_trips() {
    let d = synth(200, 5, 1);
    let reports: Vec<NamedReport> = [Baseline::LeftToRight, Baseline::Random]
        .into_iter()
        .map(|b| NamedReport {
            name: b.name().to_string(),
            report: run(b, &d.samples, 0),
        })
        .collect();
    let t = render_table(&reports).unwrap();
    let back: Vec<NamedReport> = serde_json::from_str(&t.json).unwrap();
    assert_eq!(back, reports);
    let lines: Vec<&str> = t.text.lines().collect();
    assert!(lines[1].chars().all(|c| c == '-'));
    assert!(lines[2].starts_with("left_to_right") && lines[3].starts_with("random"), "{}", t.text);
    assert!(render_table(&[]).is_err());
}
