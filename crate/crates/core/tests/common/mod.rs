//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use groundkit::benchkit::{synth_generate, SynthConfig};
use groundkit::data::{
    BoundingBox, CommonsenseType, ContextObject, Dataset, DatasetHeader, ImageRecord, PersonBox, Sample, Token,
};
use groundkit::grounder::{GroundingModel, ModelConfig, Vocab, DEFAULT_NEUTRAL_NAMES};
use groundkit::numcore::EncoderConfig;
use groundkit::rulekit::{DropReason, QAPair, QaCorpus};

pub const D_VIS: usize = 4;

/// `PERSONk` becomes a person link, `OBJk:class` an object link, anything
/// else a word.
pub fn toks(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|w| {
            if let Some(id) = w.strip_prefix("PERSON").and_then(|n| n.parse().ok()) {
                return Token::PersonLink(id);
            }
            if let Some((id, class)) = w.strip_prefix("OBJ").and_then(|r| r.split_once(':')) {
                return Token::ObjectLink {
                    region_id: id.parse().unwrap(),
                    class_name: class.to_string(),
                };
            }
            Token::word(w)
        })
        .collect()
}

pub fn fixture_header() -> DatasetHeader {
    DatasetHeader {
        max_context_objects: 2,
        ..DatasetHeader::new(D_VIS)
    }
}

/// `n` side-by-side persons on a 400x100 canvas, plus one context object
/// per entry of `objectness`.
pub fn image(id: &str, n: usize, objectness: &[f64]) -> ImageRecord {
    let persons = (0..n)
        .map(|i| {
            let x1 = 5.0 + 30.0 * i as f64;
            PersonBox {
                index: i,
                bbox: BoundingBox::new(x1, 10.0, x1 + 25.0, 90.0),
                feature: (0..D_VIS).map(|k| (i * 7 + k) as f32 * 0.25).collect(),
            }
        })
        .collect();
    let context_objects = objectness
        .iter()
        .enumerate()
        .map(|(c, &o)| ContextObject {
            bbox: BoundingBox::new(6.0 + c as f64, 40.0, 20.0 + c as f64, 60.0),
            feature: vec![0.5 + c as f32; D_VIS],
            objectness: o,
            class_name: "cup".into(),
        })
        .collect();
    ImageRecord {
        image_id: format!("img-{id}"),
        width: 400,
        height: 100,
        persons,
        context_objects,
    }
}

/// What the pipeline must do with one fixture pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    /// Kept with this type, statement (after renumbering) and number of
    /// context objects surviving threshold and cap.
    Kept(CommonsenseType, &'static str, usize),
    Unmatched,
    Dropped(DropReason),
}

pub struct Case {
    pub id: String,
    pub question: &'static str,
    pub answer: &'static str,
    pub n_persons: usize,
    pub objectness: &'static [f64],
    pub expect: Expect,
}

/// Fifty hand-labeled question/answer pairs covering every rule, every
/// drop reason and the unmatched path.
pub fn qa_cases() -> Vec<Case> {
    use CommonsenseType::*;
    use DropReason::*;
    use Expect::*;
    let table: Vec<(&str, &str, usize, &'static [f64], Expect)> = vec![
        // kept; statements show renumbered links
        ("why is PERSON1 smiling ?", "PERSON1 just won", 3, &[0.9], Kept(Causal, "PERSON0 is smiling because PERSON1 just won", 1)),
        ("why did PERSON0 leave ?", "PERSON2 was rude .", 3, &[], Kept(Causal, "PERSON0 did leave because PERSON1 was rude", 0)),
        ("why does PERSON3 look angry ?", "PERSON1 insulted PERSON3", 5, &[0.5, 0.1], Kept(Causal, "PERSON0 does look angry because PERSON1 insulted PERSON2", 1)),
        ("why is the PERSON0 here ?", "PERSON0 lives here", 2, &[], Kept(Causal, "is the PERSON0 here because PERSON1 lives here", 0)),
        ("what is PERSON0 doing ?", "PERSON0 is reading a book", 2, &[], Kept(Activity, "PERSON0 is reading a book", 0)),
        ("what are PERSON1 doing ?", "PERSON1 is cooking", 2, &[0.3, 0.4, 0.5], Kept(Activity, "PERSON0 is cooking", 2)),
        ("what is PERSON2 doing with the cup ?", "PERSON2 is drinking from OBJ4:cup", 4, &[0.8], Kept(Activity, "PERSON0 is drinking from cup", 1)),
        ("what will PERSON0 do ?", "PERSON0 will leave the room", 4, &[], Kept(Temporal, "PERSON0 will leave the room", 0)),
        ("what will PERSON1 do next ?", "PERSON1 will sit down .", 2, &[], Kept(Temporal, "PERSON0 will sit down", 0)),
        ("what happened before PERSON0 sat down ?", "PERSON0 walked in", 3, &[], Kept(Temporal, "before PERSON0 sat down , PERSON1 walked in", 0)),
        ("what is PERSON1 really feeling ?", "PERSON1 is upset", 3, &[], Kept(Mental, "PERSON0 is upset", 0)),
        ("how is PERSON0 feeling ?", "PERSON0 feels calm", 2, &[0.25], Kept(Mental, "PERSON0 feels calm", 1)),
        ("what is PERSON1 holding ?", "a OBJ3:bottle", 2, &[], Kept(Activity, "PERSON0 is holding a bottle", 0)),
        ("how are PERSON0 and PERSON1 related ?", "PERSON0 is the father of PERSON1", 2, &[], Kept(Other, "PERSON0 is the father of PERSON1", 0)),
        ("where is PERSON1 going ?", "to the kitchen", 3, &[], Kept(Spatial, "PERSON0 is going to the kitchen", 0)),
        ("where will PERSON0 sit ?", "next to PERSON2", 3, &[0.7, 0.6, 0.95], Kept(Spatial, "PERSON0 will sit next to PERSON1", 2)),
        ("who is holding the menu ?", "PERSON1 is holding it", 3, &[], Kept(Attribute, "PERSON0 is holding it", 0)),
        ("whose coat is this ?", "it belongs to PERSON0", 2, &[], Kept(Attribute, "it belongs to PERSON0", 0)),
        ("which person is the host ?", "PERSON2 is the host", 3, &[], Kept(Attribute, "PERSON0 is the host", 0)),
        ("why is PERSON0 holding OBJ2:glass ?", "PERSON0 is thirsty !", 2, &[0.4], Kept(Causal, "PERSON0 is holding glass because PERSON1 is thirsty", 1)),
        ("what would PERSON1 do ?", "PERSON1 would laugh", 2, &[], Kept(Activity, "PERSON0 would do PERSON1 would laugh", 0)),
        ("what is PERSON9 doing ?", "PERSON9 is waving", 10, &[], Kept(Activity, "PERSON0 is waving", 0)),
        ("why are PERSON0 and the others here ?", "PERSON0 invited them", 2, &[], Kept(Causal, "PERSON0 are and the others here because PERSON1 invited them", 0)),
        ("who is next to PERSON1 ?", "PERSON0 is", 2, &[0.19], Kept(Attribute, "PERSON0 is", 0)),
        ("what is PERSON0 doing ?", "PERSON0 is talking to PERSON1 or to PERSON2 later", 3, &[], Kept(Activity, "PERSON0 is talking to PERSON1 or to PERSON2 later", 0)),
        ("what was PERSON3 doing ?", "PERSON3 was dancing", 4, &[1.0, 0.2], Kept(Activity, "PERSON0 was dancing", 2)),
        // no person link in the statement
        ("why is the room dark ?", "the lights are off", 3, &[], Dropped(NoPersonLink)),
        ("what happened before the storm ?", "it was windy", 2, &[], Dropped(NoPersonLink)),
        ("how is the weather ?", "sunny", 4, &[], Dropped(NoPersonLink)),
        ("which cup is full ?", "the red one", 2, &[], Dropped(NoPersonLink)),
        ("whose dog is that ?", "the neighbour 's", 0, &[], Dropped(NoPersonLink)),
        // no candidate persons at all
        ("who is holding the menu ?", "PERSON0 is holding it", 0, &[], Dropped(NoCandidate)),
        ("what is PERSON0 doing ?", "PERSON0 is sleeping", 0, &[0.9], Dropped(NoCandidate)),
        // a single candidate
        ("what is PERSON0 doing ?", "PERSON0 is sleeping", 1, &[], Dropped(SingleCandidate)),
        ("who is talking ?", "PERSON0 and PERSON0", 1, &[], Dropped(SingleCandidate)),
        ("why is PERSON0 sad ?", "PERSON0 lost", 1, &[0.5], Dropped(SingleCandidate)),
        // more than ten candidates
        ("what is PERSON3 doing ?", "PERSON3 is singing", 11, &[], Dropped(TooManyPersons)),
        ("who is talking ?", "PERSON1 and PERSON2", 11, &[], Dropped(TooManyPersons)),
        ("where is PERSON10 going ?", "home", 12, &[], Dropped(TooManyPersons)),
        // tied links
        ("who is talking ?", "PERSON1 and PERSON2", 3, &[], Dropped(TiedLinks)),
        ("who will win ?", "PERSON0 or PERSON1", 2, &[], Dropped(TiedLinks)),
        ("what are PERSON0 and PERSON1 doing ?", "PERSON0 and PERSON1 are eating", 2, &[], Dropped(TiedLinks)),
        ("why is PERSON0 smiling ?", "PERSON1 AND PERSON2 are dancing", 3, &[], Dropped(TiedLinks)),
        ("where is PERSON0 going ?", "with PERSON1 and PERSON2", 3, &[], Dropped(TiedLinks)),
        // no rule matches
        ("is PERSON0 happy ?", "yes", 2, &[], Unmatched),
        ("when will PERSON1 leave ?", "soon", 2, &[], Unmatched),
        ("what is PERSON0 doing", "PERSON0 is cooking", 2, &[], Unmatched),
        ("do PERSON0 and PERSON1 know each other ?", "yes they do", 2, &[], Unmatched),
        ("why ?", "because", 2, &[], Unmatched),
        ("PERSON0 is what ?", "tall", 2, &[], Unmatched),
    ];
    table
        .into_iter()
        .enumerate()
        .map(|(i, (question, answer, n_persons, objectness, expect))| Case {
            id: format!("qa{i:02}"),
            question,
            answer,
            n_persons,
            objectness,
            expect,
        })
        .collect()
}

pub fn qa_pair(case: &Case) -> QAPair {
    QAPair {
        sample_id: case.id.clone(),
        question: toks(case.question),
        answers: vec![toks("no"), toks("not sure"), toks(case.answer), toks("maybe")],
        correct_index: 2,
        image: image(&case.id, case.n_persons, case.objectness),
    }
}

pub fn qa_corpus() -> QaCorpus {
    QaCorpus {
        header: fixture_header(),
        pairs: qa_cases().iter().map(qa_pair).collect(),
    }
}

/// Synthetic data for model tests.
pub fn synth(n: usize, max_persons: usize, seed: u64) -> Dataset {
    synth_generate(&SynthConfig {
        n_samples: n,
        max_persons,
        d_vis: 18,
        context_rate: 0.5,
        distractor_rate: 0.5,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// A small model config suitable for finite differences.
pub fn tiny_config(d_model: usize, n_layers: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d_model,
            n_heads: 2,
            n_layers,
            d_ff: 2 * d_model,
            seed,
        },
        d_vis: 18,
        max_text_len: 12,
        tau: 0.5,
        contrastive_layer: 1,
        neutral_names: DEFAULT_NEUTRAL_NAMES[..10].iter().map(|s| s.to_string()).collect(),
        init_std: 0.2,
        seed,
        ..ModelConfig::default()
    }
}

pub fn model_for(config: ModelConfig, samples: &[Sample]) -> GroundingModel {
    let vocab = Vocab::build(samples, &config.neutral_names);
    GroundingModel::new(config, vocab).unwrap()
}

/// Smaller scales leave entries near the 1e-8 floor of the relative error,
/// where roundoff of the central difference dominates; larger ones
/// saturate and raise the truncation term.
pub const INIT_STD_SUITE: f64 = 0.25;

/// One configuration of the finite-difference suite.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub label: String,
    pub config: ModelConfig,
    pub max_persons: usize,
    pub context_rate: f64,
}

/// Twenty seeded toy configurations: d_model 8 or 16, one or two layers,
/// both similarity modes, with and without context objects and location
/// frequencies.
pub fn gradient_cases() -> Vec<GradCase> {
    (0..20u64)
        .map(|seed| {
            let d_model = if seed % 4 == 3 { 16 } else { 8 };
            let n_layers = 1 + (seed as usize / 2) % 2;
            let mut config = tiny_config(d_model, n_layers, seed);
            config.normalize_similarity = seed % 3 == 0;
            config.tau = if config.normalize_similarity { 0.1 } else { [0.5, 1.0][seed as usize % 2] };
            config.lambda = [1.0, 0.5, 2.0][seed as usize % 3];
            config.contrastive_layer = 1 + (seed as usize) % n_layers;
            config.location_frequencies = [0, 2, 1][seed as usize % 3];
            config.use_context_objects = seed % 5 != 4;
            config.init_std = INIT_STD_SUITE;
            let max_persons = 2 + seed as usize % 4;
            let context_rate = if seed % 2 == 0 { 1.0 } else { 0.5 };
            GradCase {
                label: format!(
                    "seed={seed} d={d_model} layers={n_layers} norm={} tau={} persons<={max_persons} ctx={}",
                    config.normalize_similarity, config.tau, config.use_context_objects
                ),
                config,
                max_persons,
                context_rate,
            }
        })
        .collect()
}

/// Worst relative error per loss kind on one synthetic sample, plus its
/// region count.
pub fn grad_check_case(case: &GradCase) -> ([groundkit::numcore::GradCheckReport; 3], usize) {
    use groundkit::grounder::{prepare_all, LossKind, LossObjective};
    use groundkit::numcore::grad_check;
    let data = synth_generate(&SynthConfig {
        n_samples: 1,
        max_persons: case.max_persons,
        d_vis: case.config.d_vis,
        context_rate: case.context_rate,
        seed: case.config.seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let regions = data
        .samples
        .iter()
        .map(|s| s.image.persons.len() + s.image.context_objects.len())
        .max()
        .unwrap();
    let model = model_for(case.config.clone(), &data.samples);
    let prepared = prepare_all(&model, &data.samples).unwrap();
    let reports = [LossKind::Cls, LossKind::Con, LossKind::Total].map(|kind| {
        let obj = LossObjective {
            config: &model.config,
            arch: &model.arch,
            samples: &prepared,
            kind,
        };
        let mut params = model.params.clone();
        grad_check(&obj, &mut params, 1e-5).unwrap()
    });
    (reports, regions)
}
