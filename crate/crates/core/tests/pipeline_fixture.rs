mod common;

use std::collections::BTreeMap;

use common::{fixture_header, qa_cases, qa_corpus, toks, Expect};
use groundkit::data::{write_dataset, Sample};
use groundkit::rulekit::{read_qa_file, run_pipeline, write_qa_file, PipelineOutput, RuleSet, SplitSpec};

fn run() -> PipelineOutput {
    run_pipeline(&qa_corpus(), &RuleSet::default_rules(), &SplitSpec::default()).unwrap()
}

fn kept(out: &PipelineOutput) -> BTreeMap<String, Sample> {
    [&out.train, &out.validation, &out.test]
        .into_iter()
        .flat_map(|d| d.samples.iter().cloned())
        .map(|s| (s.sample_id.clone(), s))
        .collect()
}

fn serialized(out: &PipelineOutput) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (name, d) in [("train", &out.train), ("validation", &out.validation), ("test", &out.test)] {
        let path = dir.path().join(format!("{name}.jsonl"));
        write_dataset(d, &path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
        bytes.push(std::fs::read(path.with_extension("cgf")).unwrap());
    }
    bytes.push(serde_json::to_vec(&out.report).unwrap());
    bytes
}

#[test]
fn fixture_has_fifty_pairs() {
    assert_eq!(qa_cases().len(), 50);
}

#[test]
fn outcomes_match_hand_labels() {
    let out = run();
    let kept = kept(&out);
    let drops: BTreeMap<_, _> = out.report.drops.iter().map(|d| (d.sample_id.clone(), d.reason)).collect();
    for case in qa_cases() {
        match case.expect {
            Expect::Kept(ty, statement, n_objects) => {
                let s = kept.get(&case.id).unwrap_or_else(|| panic!("{} not kept", case.id));
                assert_eq!(s.commonsense_type, ty, "{}", case.id);
                assert_eq!(s.description.tokens, toks(statement), "{}", case.id);
                assert_eq!(s.image.context_objects.len(), n_objects, "{}", case.id);
            }
            Expect::Dropped(reason) => {
                assert_eq!(drops.get(&case.id), Some(&reason), "{}", case.id);
            }
            Expect::Unmatched => {
                assert!(out.report.unmatched_ids.contains(&case.id), "{}", case.id);
            }
        }
    }
    let n_kept = qa_cases().iter().filter(|c| matches!(c.expect, Expect::Kept(..))).count();
    assert_eq!(kept.len(), n_kept);
    assert_eq!(out.report.kept, n_kept);
    assert_eq!(out.report.kept + out.report.drops.len() + out.report.unmatched, 50);
}

#[test]
fn labels_point_at_the_original_person() {
    let out = run();
    let kept = kept(&out);
    // "PERSON3 does look angry because PERSON1 insulted PERSON3"
    let s = &kept["qa02"];
    let labels: Vec<_> = (0..3).map(|l| s.labels.get(l).unwrap()).collect();
    assert_eq!(labels, vec![3, 1, 3]);
}

#[test]
fn every_emitted_sample_is_valid() {
    let out = run();
    for s in kept(&out).values() {
        s.validate(&fixture_header()).unwrap();
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = serialized(&run());
    let b = serialized(&run());
    assert_eq!(a, b);
}

#[test]
fn input_order_does_not_matter() {
    let mut corpus = qa_corpus();
    corpus.pairs.reverse();
    let reversed = run_pipeline(&corpus, &RuleSet::default_rules(), &SplitSpec::default()).unwrap();
    assert_eq!(serialized(&reversed), serialized(&run()));
}

#[test]
fn qa_file_round_trip_feeds_the_same_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qa.jsonl");
    let corpus = qa_corpus();
    write_qa_file(&corpus, &path).unwrap();
    let back = read_qa_file(&path).unwrap();
    assert_eq!(back, corpus);
    let out = run_pipeline(&back, &RuleSet::default_rules(), &SplitSpec::default()).unwrap();
    assert_eq!(serialized(&out), serialized(&run()));
}
