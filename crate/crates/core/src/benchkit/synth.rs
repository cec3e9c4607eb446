//! Synthetic scenes whose answer is decided by a person attribute or by a
//! context object overlapping the person, never by box size or position.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    CommonsenseType, ContextObject, Dataset, DatasetHeader, Description, ImageRecord,
    PersonBox, Sample, Token, MAX_PERSONS, MIN_PERSONS,
};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

pub const ATTRIBUTES: [&str; 10] = [
    "red", "blue", "green", "yellow", "black", "white", "orange", "purple", "pink", "gray",
];
pub const OBJECT_CLASSES: [&str; 8] = ["bag", "umbrella", "dog", "bicycle", "guitar", "cup", "book", "phone"];

pub const CANVAS_WIDTH: u32 = 800;
pub const CANVAS_HEIGHT: u32 = 600;
const PLACEMENT_RETRIES: usize = 1000;
const SCENE_RETRIES: usize = 100;
const FEATURE_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub max_persons: usize,
    pub d_vis: usize,
    /// Probability that a sample's answer depends only on a context object.
    pub context_rate: f64,
    pub seed: u64,
    /// Object-to-person overlap must exceed this.
    pub t1: f64,
    /// Object overlap with every other person stays below this.
    pub t2: f64,
    /// Chance that a person not tied to the answer still carries an object.
    /// Off by default: with distractors the toy model stops generalizing on
    /// the context-determined samples.
    pub distractor_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 2000,
            max_persons: 5,
            d_vis: 32,
            context_rate: 0.5,
            seed: 0,
            t1: 0.3,
            t2: 0.1,
            distractor_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_PERSONS..=MAX_PERSONS).contains(&self.max_persons) {
            return Err(Error::Config(format!(
                "max_persons {} outside [{MIN_PERSONS}, {MAX_PERSONS}]",
                self.max_persons
            )));
        }
        let need = ATTRIBUTES.len() + OBJECT_CLASSES.len();
        if self.d_vis < need {
            return Err(Error::Config(format!("d_vis must be at least {need}, got {}", self.d_vis)));
        }
        for (name, r) in [("context_rate", self.context_rate), ("distractor_rate", self.distractor_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} outside [0, 1]")));
            }
        }
        if !(0.0..0.81).contains(&self.t1) || !(self.t2 > 0.0 && self.t2 <= 1.0) {
            return Err(Error::Config(format!(
                "thresholds t1 = {}, t2 = {} leave no room for context objects",
                self.t1, self.t2
            )));
        }
        Ok(())
    }
}

/// Feature slot of attribute `a` in a person vector.
pub fn attribute_slot(a: usize) -> usize {
    a
}

/// Feature slot of object class `c` in an object vector.
pub fn class_slot(c: usize) -> usize {
    ATTRIBUTES.len() + c
}

fn feature(rng: &mut ChaCha8Rng, d_vis: usize, hot: usize) -> Vec<f32> {
    let noise = Normal::new(0.0, FEATURE_NOISE).expect("valid std");
    (0..d_vis)
        .map(|k| (noise.sample(rng) + if k == hot { 1.0 } else { 0.0 }) as f32)
        .collect()
}

fn place_persons(rng: &mut ChaCha8Rng, n: usize) -> Option<Vec<BoundingBox>> {
    let (w, h) = (CANVAS_WIDTH as f64, CANVAS_HEIGHT as f64);
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let bw = rng.random_range(40.0..100.0f64).round();
            let bh = rng.random_range(100.0..250.0f64).round();
            let x1 = rng.random_range(0.0..w - bw).round();
            let y1 = rng.random_range(0.0..h - bh).round();
            let b = BoundingBox::new(x1, y1, x1 + bw, y1 + bh);
            if boxes.iter().all(|o| b.intersection_area(o) == 0.0) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(boxes)
}

/// An object box inside `person` covering 60-90% of each side.
fn object_box(
    rng: &mut ChaCha8Rng,
    person: usize,
    persons: &[BoundingBox],
    t1: f64,
    t2: f64,
) -> Result<BoundingBox> {
    let p = &persons[person];
    for _ in 0..PLACEMENT_RETRIES {
        let ow = (p.width() * rng.random_range(0.6..0.9)).round();
        let oh = (p.height() * rng.random_range(0.6..0.9)).round();
        let x1 = p.x1 + rng.random_range(0.0..=(p.width() - ow)).round();
        let y1 = p.y1 + rng.random_range(0.0..=(p.height() - oh)).round();
        let b = BoundingBox::new(x1, y1, x1 + ow, y1 + oh);
        let own = iou(&b, p)?;
        let mut other: f64 = 0.0;
        for (j, q) in persons.iter().enumerate() {
            if j != person {
                other = other.max(iou(&b, q)?);
            }
        }
        if own > t1 && other < t2 {
            return Ok(b);
        }
    }
    Err(Error::Config("could not place a context object within the thresholds".into()))
}

fn generate_one(cfg: &SynthConfig, rng: &mut ChaCha8Rng, index: usize) -> Result<Sample> {
    let sample_id = format!("synth-{}-{index:05}", cfg.seed);
    let n = rng.random_range(MIN_PERSONS..=cfg.max_persons);
    let boxes = (0..SCENE_RETRIES)
        .find_map(|_| place_persons(rng, n))
        .ok_or_else(|| Error::Config(format!("infeasible placement of {n} persons")))?;
    let gt = rng.random_range(0..n);
    let attrs = sample_indices(rng, ATTRIBUTES.len(), n).into_vec();
    let persons: Vec<PersonBox> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| PersonBox {
            index: i,
            bbox: *b,
            feature: feature(rng, cfg.d_vis, attribute_slot(attrs[i])),
        })
        .collect();

    let context_determined = rng.random_bool(cfg.context_rate);
    // Distinct classes per scene keep the answer unique.
    let classes = sample_indices(rng, OBJECT_CLASSES.len(), n.min(OBJECT_CLASSES.len())).into_vec();
    let mut holders: Vec<usize> = Vec::new();
    if context_determined {
        holders.push(gt);
    }
    for j in 0..n {
        if j != gt || !context_determined {
            if rng.random_bool(cfg.distractor_rate) && holders.len() < classes.len() {
                holders.push(j);
            }
        }
    }
    // Object order follows person order so it carries no hint of the answer.
    holders.sort_unstable();
    let mut context_objects = Vec::with_capacity(holders.len());
    let mut gt_class = None;
    for (k, &j) in holders.iter().enumerate() {
        let c = classes[k];
        if j == gt {
            gt_class = Some(c);
        }
        context_objects.push(ContextObject {
            bbox: object_box(rng, j, &boxes, cfg.t1, cfg.t2)?,
            feature: feature(rng, cfg.d_vis, class_slot(c)),
            objectness: rng.random_range(0.5..1.0),
            class_name: OBJECT_CLASSES[c].to_string(),
        });
    }

    let (words, commonsense_type): (Vec<&str>, _) = if context_determined {
        let c = gt_class.expect("ground truth holds an object");
        (
            vec!["next", "to", "the", OBJECT_CLASSES[c], "feels", "upset"],
            CommonsenseType::Mental,
        )
    } else {
        (vec!["who", "is", ATTRIBUTES[attrs[gt]], "will", "leave"], CommonsenseType::Temporal)
    };
    let tokens = std::iter::once(Token::PersonLink(0))
        .chain(words.into_iter().map(Token::word))
        .collect();
    Ok(Sample {
        image: ImageRecord {
            image_id: sample_id.clone(),
            width: CANVAS_WIDTH,
            height: CANVAS_HEIGHT,
            persons,
            context_objects,
        },
        sample_id,
        description: Description::new(tokens),
        labels: [(0, gt)].into_iter().collect(),
        commonsense_type,
    })
}

/// Generates `n_samples` scenes; identical configs give identical datasets.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let header = DatasetHeader::new(cfg.d_vis);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        // One stream per sample keeps samples independent of each other.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let s = generate_one(cfg, &mut rng, i)?;
        s.validate(&header)?;
        samples.push(s);
    }
    Ok(Dataset::new(header, samples))
}

/// True when the description names an object class (context-determined).
pub fn is_context_determined(sample: &Sample) -> bool {
    sample
        .description
        .tokens
        .iter()
        .filter_map(Token::as_word)
        .any(|w| OBJECT_CLASSES.contains(&w))
}
