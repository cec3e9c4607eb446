//! Domain types shared by every module, their invariants, and the on-disk
//! dataset formats.

pub(crate) mod format;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crate::geometry::BoundingBox;
pub use format::{
    companion_feature_path, read_dataset, read_feature_file, write_dataset, write_feature_file,
    DatasetHeader, FeatureTable, FEATURE_MAGIC, FORMAT_VERSION,
};
pub use stats::{dataset_stats, DatasetStats};

use crate::error::{Error, Result};

/// Largest number of candidate persons a finished sample may have.
pub const MAX_PERSONS: usize = 10;
/// Smallest number of candidate persons a finished sample may have.
pub const MIN_PERSONS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PersonBox {
    pub index: usize,
    pub bbox: BoundingBox,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextObject {
    pub bbox: BoundingBox,
    pub feature: Vec<f32>,
    pub objectness: f64,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub persons: Vec<PersonBox>,
    pub context_objects: Vec<ContextObject>,
}

impl ImageRecord {
    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    /// Person boxes followed by context-object boxes, in region-ordinal order.
    pub fn region_boxes(&self) -> impl Iterator<Item = &BoundingBox> {
        self.persons
            .iter()
            .map(|p| &p.bbox)
            .chain(self.context_objects.iter().map(|c| &c.bbox))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Word(String),
    PersonLink(u32),
    ObjectLink { region_id: u32, class_name: String },
}

impl Token {
    pub fn word(text: impl Into<String>) -> Self {
        Token::Word(text.into())
    }

    pub fn as_word(&self) -> Option<&str> {
        match self {
            Token::Word(w) => Some(w),
            _ => None,
        }
    }

    pub fn is_person(&self) -> bool {
        matches!(self, Token::PersonLink(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Word(w) => f.write_str(w),
            Token::PersonLink(id) => write!(f, "PERSON{id}"),
            Token::ObjectLink { class_name, .. } => write!(f, "[{class_name}]"),
        }
    }
}

/// Renders tokens space-separated, person links as `PERSON<id>`.
pub fn render_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Description {
    pub tokens: Vec<Token>,
}

impl Description {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    /// Link ids in description order.
    pub fn link_ids(&self) -> Vec<u32> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::PersonLink(id) => Some(*id),
                _ => None,
            })
            .collect()
    }

    pub fn n_links(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_person()).count()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ground-truth link id -> person index pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundingLabel {
    pub pairs: BTreeMap<u32, usize>,
}

impl GroundingLabel {
    pub fn get(&self, link_id: u32) -> Option<usize> {
        self.pairs.get(&link_id).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl FromIterator<(u32, usize)> for GroundingLabel {
    fn from_iter<I: IntoIterator<Item = (u32, usize)>>(iter: I) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommonsenseType {
    Causal,
    Activity,
    Temporal,
    Mental,
    Spatial,
    Attribute,
    Other,
}

impl CommonsenseType {
    pub const ALL: [CommonsenseType; 7] = [
        CommonsenseType::Causal,
        CommonsenseType::Activity,
        CommonsenseType::Temporal,
        CommonsenseType::Mental,
        CommonsenseType::Spatial,
        CommonsenseType::Attribute,
        CommonsenseType::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CommonsenseType::Causal => "causal",
            CommonsenseType::Activity => "activity",
            CommonsenseType::Temporal => "temporal",
            CommonsenseType::Mental => "mental",
            CommonsenseType::Spatial => "spatial",
            CommonsenseType::Attribute => "attribute",
            CommonsenseType::Other => "other",
        }
    }
}

impl fmt::Display for CommonsenseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommonsenseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CommonsenseType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown commonsense type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub image: ImageRecord,
    pub description: Description,
    pub labels: GroundingLabel,
    pub commonsense_type: CommonsenseType,
}

impl Sample {
    /// Total sequence length seen by the encoder (text tokens + all regions),
    /// before neutral-name expansion.
    pub fn sequence_len(&self) -> usize {
        self.description.len() + self.image.persons.len() + self.image.context_objects.len()
    }

    /// Checks every invariant a finished sample must satisfy.
    pub fn validate(&self, header: &DatasetHeader) -> Result<()> {
        let id = self.sample_id.as_str();
        let fail = |msg: String| Err(Error::invalid(id, msg));
        if id.is_empty() {
            return fail("empty sample_id".into());
        }
        let img = &self.image;
        if img.width == 0 || img.height == 0 {
            return fail(format!("image size {}x{} must be positive", img.width, img.height));
        }
        let n = img.persons.len();
        if n < MIN_PERSONS {
            return fail(format!("needs at least {MIN_PERSONS} persons, has {n}"));
        }
        if n > MAX_PERSONS {
            return fail(format!("at most {MAX_PERSONS} persons allowed, has {n}"));
        }
        let (w, h) = (img.width as f64, img.height as f64);
        for (i, p) in img.persons.iter().enumerate() {
            if p.index != i {
                return fail(format!("person indices not consecutive at {i} (found {})", p.index));
            }
            check_region(id, &format!("person {i}"), &p.bbox, &p.feature, w, h, header.d_vis)?;
        }
        if img.context_objects.len() > header.max_context_objects {
            return fail(format!(
                "{} context objects exceed cap {}",
                img.context_objects.len(),
                header.max_context_objects
            ));
        }
        for (i, c) in img.context_objects.iter().enumerate() {
            let what = format!("context object {i}");
            check_region(id, &what, &c.bbox, &c.feature, w, h, header.d_vis)?;
            if !(c.objectness >= header.objectness_threshold && c.objectness <= 1.0) {
                return fail(format!(
                    "{what}: objectness {} outside [{}, 1]",
                    c.objectness, header.objectness_threshold
                ));
            }
            if c.class_name.is_empty() {
                return fail(format!("{what}: empty class_name"));
            }
        }

        let mut seen = BTreeSet::new();
        for t in &self.description.tokens {
            match t {
                Token::Word(text) if text.is_empty() => return fail("empty word token".into()),
                Token::Word(_) => {}
                Token::ObjectLink { .. } => {
                    return fail("object link remains in finished description".into())
                }
                Token::PersonLink(link) => {
                    if !seen.insert(*link) {
                        return fail(format!("duplicate person link id {link}"));
                    }
                    match self.labels.get(*link) {
                        None => return fail(format!("person link {link} has no label")),
                        Some(j) if j >= n => {
                            return fail(format!("label out of range: link {link} -> {j} (N={n})"))
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        if seen.is_empty() {
            return fail("description has no person link".into());
        }
        if self.labels.len() != seen.len() {
            return fail(format!(
                "{} labels for {} person links",
                self.labels.len(),
                seen.len()
            ));
        }
        Ok(())
    }
}

fn check_region(
    id: &str,
    what: &str,
    bbox: &BoundingBox,
    feature: &[f32],
    width: f64,
    height: f64,
    d_vis: usize,
) -> Result<()> {
    bbox.validate()
        .map_err(|e| Error::invalid(id, format!("{what}: {e}")))?;
    if !bbox.within(width, height) {
        return Err(Error::invalid(
            id,
            format!("{what}: box {bbox:?} outside {width}x{height} image"),
        ));
    }
    if feature.len() != d_vis {
        return Err(Error::DimensionMismatch {
            expected: d_vis,
            found: feature.len(),
            context: format!("sample {id}, {what}"),
        });
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(id, format!("{what}: non-finite feature")));
    }
    Ok(())
}

/// A header plus its samples, as stored in one dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, samples: Vec<Sample>) -> Self {
        Self { header, samples }
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        self.samples.iter().try_for_each(|s| s.validate(&self.header))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn header(d_vis: usize) -> DatasetHeader {
        DatasetHeader {
            format_version: FORMAT_VERSION,
            d_vis,
            objectness_threshold: 0.2,
            max_context_objects: 100,
        }
    }

    pub fn person(index: usize, x1: f64, d_vis: usize) -> PersonBox {
        PersonBox {
            index,
            bbox: BoundingBox::new(x1, 10.0, x1 + 20.0, 80.0),
            feature: (0..d_vis).map(|k| (index * 31 + k) as f32 * 0.125).collect(),
        }
    }

    pub fn sample(id: &str, n_persons: usize, d_vis: usize) -> Sample {
        let persons = (0..n_persons).map(|i| person(i, 5.0 + 25.0 * i as f64, d_vis)).collect();
        Sample {
            sample_id: id.to_string(),
            image: ImageRecord {
                image_id: format!("img-{id}"),
                width: 400,
                height: 100,
                persons,
                context_objects: vec![ContextObject {
                    bbox: BoundingBox::new(6.0, 40.0, 20.0, 60.0),
                    feature: vec![0.5; d_vis],
                    objectness: 0.75,
                    class_name: "cup".into(),
                }],
            },
            description: Description::new(vec![
                Token::PersonLink(0),
                Token::word("holds"),
                Token::word("a"),
                Token::word("cup"),
            ]),
            labels: [(0, 0)].into_iter().collect(),
            commonsense_type: CommonsenseType::Activity,
        }
    }
}
