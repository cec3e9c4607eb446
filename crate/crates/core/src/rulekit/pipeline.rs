//! Corpus-level stages: QA ingestion, coverage reporting, and the full
//! match -> transform -> replace -> filter -> tag -> split pipeline.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dsl::{QuestionType, Rule, RuleSet};
use super::filter::{filter_sample, replace_object_links, DropReason, FilterVerdict};
use crate::data::format::{
    companion_feature_path, ensure_consumed, load_features, read_jsonl, region_rows, tokens_from_json,
    tokens_to_json, write_feature_file, ImageJson, TokenJson,
};
use crate::data::{
    CommonsenseType, Dataset, DatasetHeader, Description, GroundingLabel, ImageRecord, Sample, Token,
};
use crate::error::{Error, Result};

/// One question with its four answer choices over an annotated image.
#[derive(Debug, Clone, PartialEq)]
pub struct QAPair {
    pub sample_id: String,
    pub question: Vec<Token>,
    pub answers: Vec<Vec<Token>>,
    pub correct_index: usize,
    pub image: ImageRecord,
}

impl QAPair {
    pub fn validate(&self) -> Result<()> {
        if self.question.is_empty() {
            return Err(Error::invalid(&self.sample_id, "empty question"));
        }
        if self.answers.len() != 4 {
            return Err(Error::invalid(
                &self.sample_id,
                format!("expected 4 answers, found {}", self.answers.len()),
            ));
        }
        if self.correct_index >= 4 {
            return Err(Error::invalid(
                &self.sample_id,
                format!("correct_index {} outside 0..3", self.correct_index),
            ));
        }
        Ok(())
    }

    pub fn correct_answer(&self) -> &[Token] {
        &self.answers[self.correct_index]
    }

    pub fn question_type(&self) -> QuestionType {
        QuestionType::of_question(&self.question)
    }
}

/// A QA file: dataset header plus QA pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QaCorpus {
    pub header: DatasetHeader,
    pub pairs: Vec<QAPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaJson {
    sample_id: String,
    image: ImageJson,
    question: Vec<TokenJson>,
    answers: Vec<Vec<TokenJson>>,
    correct_index: usize,
}

/// Reads a QA file and its companion feature file.
pub fn read_qa_file(path: impl AsRef<Path>) -> Result<QaCorpus> {
    let path = path.as_ref();
    let (header, records) = read_jsonl::<QaJson>(path)?;
    let mut features = load_features(path, &header)?;
    let mut pairs = Vec::with_capacity(records.len());
    let mut ids = std::collections::HashSet::new();
    for (_line, rec) in records {
        if !ids.insert(rec.sample_id.clone()) {
            return Err(Error::invalid(rec.sample_id, "duplicate sample_id"));
        }
        let image = rec.image.into_record(&rec.sample_id, &mut features)?;
        let qa = QAPair {
            question: tokens_from_json(rec.question),
            answers: rec.answers.into_iter().map(tokens_from_json).collect(),
            correct_index: rec.correct_index,
            sample_id: rec.sample_id,
            image,
        };
        qa.validate()?;
        pairs.push(qa);
    }
    ensure_consumed(&features)?;
    Ok(QaCorpus { header, pairs })
}

pub fn write_qa_file(corpus: &QaCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for qa in &corpus.pairs {
        qa.validate()?;
    }
    let io = |e| Error::io(path, e);
    let json = |e: serde_json::Error| Error::io(path, e.into());
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer(&mut w, &corpus.header).map_err(json)?;
    w.write_all(b"\n").map_err(io)?;
    for qa in &corpus.pairs {
        let rec = QaJson {
            sample_id: qa.sample_id.clone(),
            image: ImageJson::from_record(&qa.image),
            question: tokens_to_json(&qa.question),
            answers: qa.answers.iter().map(|a| tokens_to_json(a)).collect(),
            correct_index: qa.correct_index,
        };
        serde_json::to_writer(&mut w, &rec).map_err(json)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let rows: Vec<Sample> = corpus
        .pairs
        .iter()
        .map(|qa| Sample {
            sample_id: qa.sample_id.clone(),
            image: qa.image.clone(),
            description: Description::default(),
            labels: GroundingLabel::default(),
            commonsense_type: CommonsenseType::Other,
        })
        .collect();
    write_feature_file(&companion_feature_path(path), corpus.header.d_vis, region_rows(&rows))
}

/// Highest-priority rule matching the question, if any.
pub fn match_rule<'r>(qa: &QAPair, rules: &'r RuleSet) -> Option<&'r str> {
    rules.first_match(&qa.question).map(|r| r.rule_id.as_str())
}

/// Rewrites the question and correct answer into a statement. Trailing
/// sentence punctuation on the answer is dropped.
pub fn transform(qa: &QAPair, rule: &Rule) -> Result<Vec<Token>> {
    let caps = rule.captures(&qa.question).ok_or_else(|| {
        Error::invalid(&qa.sample_id, format!("rule {} does not match the question", rule.rule_id))
    })?;
    let mut answer = qa.correct_answer();
    while let Some((last, head)) = answer.split_last() {
        match last.as_word() {
            Some("." | "!") => answer = head,
            _ => break,
        }
    }
    rule.render(&caps, answer)
}

pub fn classify_commonsense(
    rule_id: &str,
    mapping: &BTreeMap<String, CommonsenseType>,
) -> Result<CommonsenseType> {
    mapping
        .get(rule_id)
        .copied()
        .ok_or_else(|| Error::Rules(format!("unknown rule id {rule_id:?}")))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub total: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub matched: usize,
    pub matched_fraction: Option<f64>,
    pub question_types: BTreeMap<QuestionType, TypeCounts>,
    pub rule_hits: BTreeMap<String, usize>,
    pub unmatched_ids: Vec<String>,
}

pub fn coverage_report(corpus: &[QAPair], rules: &RuleSet) -> CoverageReport {
    let mut question_types: BTreeMap<QuestionType, TypeCounts> = BTreeMap::new();
    let mut rule_hits = BTreeMap::new();
    let mut unmatched_ids = Vec::new();
    let mut matched = 0;
    for qa in corpus {
        let counts = question_types.entry(qa.question_type()).or_default();
        counts.total += 1;
        match match_rule(qa, rules) {
            Some(id) => {
                matched += 1;
                counts.matched += 1;
                *rule_hits.entry(id.to_string()).or_insert(0) += 1;
            }
            None => unmatched_ids.push(qa.sample_id.clone()),
        }
    }
    CoverageReport {
        total: corpus.len(),
        matched,
        matched_fraction: (!corpus.is_empty()).then(|| matched as f64 / corpus.len() as f64),
        question_types,
        rule_hits,
        unmatched_ids,
    }
}

/// Split fractions plus the seed of the sample-id hash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        // 120k / 7k / 7k
        let total = 134.0;
        SplitSpec {
            train: 120.0 / total,
            validation: 7.0 / total,
            test: 7.0 / total,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!(
                "split fractions {parts:?} must lie in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Uniform draw in `[0, 1)` from a SHA-256 of `(seed, sample_id)`.
    pub fn unit_hash(&self, sample_id: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(sample_id.as_bytes());
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn assign(&self, sample_id: &str) -> Split {
        let u = self.unit_hash(sample_id);
        if u < self.train {
            Split::Train
        } else if u < self.train + self.validation {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub sample_id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub total: usize,
    pub matched: usize,
    pub unmatched: usize,
    pub unmatched_ids: Vec<String>,
    pub dropped: BTreeMap<DropReason, usize>,
    pub drops: Vec<DropRecord>,
    pub kept: usize,
    /// Context objects removed by the objectness threshold or the cap.
    pub context_objects_removed: usize,
    pub question_types: BTreeMap<QuestionType, TypeCounts>,
    pub commonsense_types: BTreeMap<CommonsenseType, usize>,
    pub splits: BTreeMap<Split, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub report: PipelineReport,
}

enum Outcome {
    Unmatched,
    Dropped(DropReason),
    Kept(Box<Sample>, usize),
}

/// Applies the objectness threshold and the per-image cap; survivors keep
/// their original order. Returns the number removed.
fn threshold_context_objects(image: &mut ImageRecord, header: &DatasetHeader) -> usize {
    let before = image.context_objects.len();
    let mut ranked: Vec<(usize, f64)> = image
        .context_objects
        .iter()
        .enumerate()
        .filter(|(_, c)| c.objectness >= header.objectness_threshold)
        .map(|(i, c)| (i, c.objectness))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(header.max_context_objects);
    let mut keep: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
    keep.sort_unstable();
    let objects = std::mem::take(&mut image.context_objects);
    image.context_objects = keep.into_iter().map(|i| objects[i].clone()).collect();
    before - image.context_objects.len()
}

fn process(qa: &QAPair, rules: &RuleSet, header: &DatasetHeader) -> Result<Outcome> {
    let Some(rule) = rules.first_match(&qa.question) else {
        return Ok(Outcome::Unmatched);
    };
    let statement = transform(qa, rule)?;
    let statement =
        replace_object_links(&statement).map_err(|e| Error::invalid(&qa.sample_id, e.to_string()))?;

    // Every person-link occurrence becomes its own link; its label is the
    // person box it pointed at.
    let mut labels = GroundingLabel::default();
    let mut next = 0u32;
    let tokens = statement
        .into_iter()
        .map(|t| match t {
            Token::PersonLink(person) => {
                labels.pairs.insert(next, person as usize);
                next += 1;
                Token::PersonLink(next - 1)
            }
            other => other,
        })
        .collect();
    let mut sample = Sample {
        sample_id: qa.sample_id.clone(),
        image: qa.image.clone(),
        description: Description::new(tokens),
        labels,
        commonsense_type: CommonsenseType::Other,
    };
    if let FilterVerdict::Drop(reason) = filter_sample(&sample) {
        return Ok(Outcome::Dropped(reason));
    }
    let removed = threshold_context_objects(&mut sample.image, header);
    sample.commonsense_type = classify_commonsense(&rule.rule_id, &rules.type_table())?;
    sample.validate(header)?;
    Ok(Outcome::Kept(Box::new(sample), removed))
}

/// Runs every stage over the corpus. Output datasets are ordered by sample id.
pub fn run_pipeline(corpus: &QaCorpus, rules: &RuleSet, split: &SplitSpec) -> Result<PipelineOutput> {
    split.validate()?;
    if rules.is_empty() {
        return Err(Error::Rules("empty rule set".into()));
    }
    corpus.header.validate()?;
    let mut pairs: Vec<&QAPair> = corpus.pairs.iter().collect();
    pairs.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let outcomes: Vec<Outcome> = pairs
        .par_iter()
        .map(|qa| {
            qa.validate()?;
            process(qa, rules, &corpus.header)
        })
        .collect::<Result<_>>()?;

    let mut report = PipelineReport {
        total: pairs.len(),
        ..Default::default()
    };
    let mut buckets: BTreeMap<Split, Vec<Sample>> = BTreeMap::new();
    for (qa, outcome) in pairs.iter().zip(outcomes) {
        let counts = report.question_types.entry(qa.question_type()).or_default();
        counts.total += 1;
        match outcome {
            Outcome::Unmatched => {
                report.unmatched += 1;
                report.unmatched_ids.push(qa.sample_id.clone());
                continue;
            }
            Outcome::Dropped(reason) => {
                *report.dropped.entry(reason).or_insert(0) += 1;
                report.drops.push(DropRecord {
                    sample_id: qa.sample_id.clone(),
                    reason,
                });
            }
            Outcome::Kept(sample, removed) => {
                report.kept += 1;
                report.context_objects_removed += removed;
                *report.commonsense_types.entry(sample.commonsense_type).or_insert(0) += 1;
                let which = split.assign(&sample.sample_id);
                *report.splits.entry(which).or_insert(0) += 1;
                buckets.entry(which).or_default().push(*sample);
            }
        }
        report.matched += 1;
        counts.matched += 1;
    }
    let mut take = |s: Split| Dataset::new(corpus.header, buckets.remove(&s).unwrap_or_default());
    Ok(PipelineOutput {
        train: take(Split::Train),
        validation: take(Split::Validation),
        test: take(Split::Test),
        report,
    })
}
