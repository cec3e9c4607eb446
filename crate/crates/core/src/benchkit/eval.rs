//! Link-level accuracy with per-type and per-candidate-count breakdowns.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::baselines::{distinct_links, Assignment};
use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Bucket {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as usize;
    }

    fn finish(&mut self) {
        self.accuracy = if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        };
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Bucket,
    /// Keyed by commonsense type name.
    pub by_type: BTreeMap<String, Bucket>,
    /// Keyed by number of candidate persons.
    pub by_n: BTreeMap<usize, Bucket>,
}

/// Scores one assignment per sample, matched by `sample_id`.
pub fn evaluate(assignments: &[Assignment], samples: &[Sample]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &Assignment> =
        assignments.iter().map(|a| (a.sample_id.as_str(), a)).collect();
    let mut report = EvalReport::default();
    for s in samples {
        let a = by_id
            .get(s.sample_id.as_str())
            .ok_or_else(|| Error::invalid(&s.sample_id, "no prediction for sample"))?;
        let n = s.image.persons.len();
        for link in distinct_links(s) {
            let gold = s
                .labels
                .get(link)
                .ok_or_else(|| Error::invalid(&s.sample_id, format!("link {link} has no label")))?;
            let chosen = a.choices.get(&link).copied().ok_or_else(|| {
                Error::invalid(&s.sample_id, format!("prediction lacks link {link}"))
            })?;
            let ok = chosen == gold;
            report.overall.add(ok);
            report
                .by_type
                .entry(s.commonsense_type.as_str().to_string())
                .or_default()
                .add(ok);
            report.by_n.entry(n).or_default().add(ok);
        }
    }
    report.overall.finish();
    report.by_type.values_mut().for_each(Bucket::finish);
    report.by_n.values_mut().for_each(Bucket::finish);
    Ok(report)
}

/// Expected accuracy of uniform guessing: mean over links of `1/N`.
pub fn chance_accuracy(samples: &[Sample]) -> f64 {
    let mut sum = 0.0;
    let mut links = 0usize;
    for s in samples {
        let k = distinct_links(s).len();
        sum += k as f64 / s.image.persons.len() as f64;
        links += k;
    }
    if links == 0 {
        0.0
    } else {
        sum / links as f64
    }
}
