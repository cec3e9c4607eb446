//! Heuristic and random person assignments.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Sample;
use crate::grounder::Prediction;

/// Chosen person index per link id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub sample_id: String,
    pub choices: BTreeMap<u32, usize>,
}

impl Assignment {
    pub fn from_prediction(sample_id: &str, p: &Prediction) -> Assignment {
        Assignment {
            sample_id: sample_id.to_string(),
            choices: p.link_ids.iter().copied().zip(p.chosen.iter().copied()).collect(),
        }
    }
}

/// Distinct link ids in order of first mention.
pub fn distinct_links(sample: &Sample) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for id in sample.description.link_ids() {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// Assigns links in order to `order`, wrapping cyclically.
fn assign_cyclic(sample: &Sample, order: &[usize]) -> Assignment {
    let choices = distinct_links(sample)
        .into_iter()
        .enumerate()
        .map(|(i, link)| (link, order[i % order.len()]))
        .collect();
    Assignment {
        sample_id: sample.sample_id.clone(),
        choices,
    }
}

fn sample_rng(sample_id: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"random-baseline");
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize()[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Each link uniform over the persons, seeded by `(seed, sample_id)`.
pub fn baseline_random(sample: &Sample, seed: u64) -> Assignment {
    let n = sample.image.persons.len();
    let mut rng = sample_rng(&sample.sample_id, seed);
    let choices = distinct_links(sample)
        .into_iter()
        .map(|link| (link, rng.random_range(0..n)))
        .collect();
    Assignment {
        sample_id: sample.sample_id.clone(),
        choices,
    }
}

/// Person indices by decreasing area, lower index first on ties.
fn by_area(sample: &Sample) -> Vec<usize> {
    let persons = &sample.image.persons;
    let mut idx: Vec<usize> = (0..persons.len()).collect();
    idx.sort_by(|&a, &b| persons[b].bbox.area().total_cmp(&persons[a].bbox.area()).then(a.cmp(&b)));
    idx
}

pub fn baseline_big_to_small(sample: &Sample) -> Assignment {
    assign_cyclic(sample, &by_area(sample))
}

/// Left to right by `(x1, y1, index)`, optionally over only the `k` largest
/// boxes where `k` is the number of links.
pub fn baseline_left_to_right(sample: &Sample, top_k_only: bool) -> Assignment {
    let persons = &sample.image.persons;
    let mut cands: Vec<usize> = if top_k_only {
        let k = distinct_links(sample).len().clamp(1, persons.len());
        by_area(sample).into_iter().take(k).collect()
    } else {
        (0..persons.len()).collect()
    };
    cands.sort_by(|&a, &b| {
        let (ba, bb) = (&persons[a].bbox, &persons[b].bbox);
        ba.x1.total_cmp(&bb.x1).then(ba.y1.total_cmp(&bb.y1)).then(a.cmp(&b))
    });
    assign_cyclic(sample, &cands)
}

/// Baselines selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Random,
    BigToSmall,
    LeftToRight,
    LeftToRightTopK,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [
        Baseline::Random,
        Baseline::BigToSmall,
        Baseline::LeftToRight,
        Baseline::LeftToRightTopK,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Random => "random",
            Baseline::BigToSmall => "big_to_small",
            Baseline::LeftToRight => "left_to_right",
            Baseline::LeftToRightTopK => "left_to_right_top_k",
        }
    }

    pub fn from_name(name: &str) -> Option<Baseline> {
        Baseline::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn assign(&self, sample: &Sample, seed: u64) -> Assignment {
        match self {
            Baseline::Random => baseline_random(sample, seed),
            Baseline::BigToSmall => baseline_big_to_small(sample),
            Baseline::LeftToRight => baseline_left_to_right(sample, false),
            Baseline::LeftToRightTopK => baseline_left_to_right(sample, true),
        }
    }
}
