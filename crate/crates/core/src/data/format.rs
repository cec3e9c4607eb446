//! JSON-lines dataset files and their binary companion feature files.
//!
//! The dataset file carries one header line followed by one sample object per
//! line. Region features live in a separate little-endian file (`CGF1`) keyed
//! by `(sample_id, region ordinal)`, where persons take ordinals `0..N` and
//! context objects follow them.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    CommonsenseType, ContextObject, Dataset, Description, GroundingLabel, ImageRecord, PersonBox,
    Sample, Token,
};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const FORMAT_VERSION: u32 = 1;
pub const FEATURE_MAGIC: [u8; 4] = *b"CGF1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub d_vis: usize,
    pub objectness_threshold: f64,
    pub max_context_objects: usize,
}

impl DatasetHeader {
    pub fn new(d_vis: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            d_vis,
            objectness_threshold: 0.2,
            max_context_objects: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported format_version {}", self.format_version),
            });
        }
        if self.d_vis == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "d_vis must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.objectness_threshold) {
            return Err(Error::Parse {
                line: 1,
                message: format!("objectness_threshold {} outside [0,1]", self.objectness_threshold),
            });
        }
        Ok(())
    }
}

/// `samples.jsonl` -> `samples.cgf`.
pub fn companion_feature_path(path: &Path) -> PathBuf {
    path.with_extension("cgf")
}

// ---------------------------------------------------------------------------
// JSON records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum TokenJson {
    Word(String),
    Person {
        person: u32,
    },
    Object {
        object: u32,
        class_name: String,
    },
}

impl From<&Token> for TokenJson {
    fn from(t: &Token) -> Self {
        match t {
            Token::Word(w) => TokenJson::Word(w.clone()),
            Token::PersonLink(id) => TokenJson::Person { person: *id },
            Token::ObjectLink {
                region_id,
                class_name,
            } => TokenJson::Object {
                object: *region_id,
                class_name: class_name.clone(),
            },
        }
    }
}

impl From<TokenJson> for Token {
    fn from(t: TokenJson) -> Self {
        match t {
            TokenJson::Word(w) => Token::Word(w),
            TokenJson::Person { person } => Token::PersonLink(person),
            TokenJson::Object { object, class_name } => Token::ObjectLink {
                region_id: object,
                class_name,
            },
        }
    }
}

pub(crate) fn tokens_to_json(tokens: &[Token]) -> Vec<TokenJson> {
    tokens.iter().map(TokenJson::from).collect()
}

pub(crate) fn tokens_from_json(tokens: Vec<TokenJson>) -> Vec<Token> {
    tokens.into_iter().map(Token::from).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonJson {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextObjectJson {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    objectness: f64,
    class_name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ImageJson {
    image_id: String,
    width: u32,
    height: u32,
    persons: Vec<PersonJson>,
    context_objects: Vec<ContextObjectJson>,
}

impl ImageJson {
    pub(crate) fn from_record(img: &ImageRecord) -> Self {
        ImageJson {
            image_id: img.image_id.clone(),
            width: img.width,
            height: img.height,
            persons: img
                .persons
                .iter()
                .map(|p| PersonJson {
                    x1: p.bbox.x1,
                    y1: p.bbox.y1,
                    x2: p.bbox.x2,
                    y2: p.bbox.y2,
                })
                .collect(),
            context_objects: img
                .context_objects
                .iter()
                .map(|c| ContextObjectJson {
                    x1: c.bbox.x1,
                    y1: c.bbox.y1,
                    x2: c.bbox.x2,
                    y2: c.bbox.y2,
                    objectness: c.objectness,
                    class_name: c.class_name.clone(),
                })
                .collect(),
        }
    }

    /// Builds the record, pulling region features out of `features`.
    pub(crate) fn into_record(self, sample_id: &str, features: &mut FeatureTable) -> Result<ImageRecord> {
        let n = self.persons.len();
        let persons = self
            .persons
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(PersonBox {
                    index: i,
                    bbox: BoundingBox::new(p.x1, p.y1, p.x2, p.y2),
                    feature: features.take(sample_id, i as u32)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let context_objects = self
            .context_objects
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(ContextObject {
                    bbox: BoundingBox::new(c.x1, c.y1, c.x2, c.y2),
                    feature: features.take(sample_id, (n + i) as u32)?,
                    objectness: c.objectness,
                    class_name: c.class_name,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageRecord {
            image_id: self.image_id,
            width: self.width,
            height: self.height,
            persons,
            context_objects,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleJson {
    sample_id: String,
    image: ImageJson,
    tokens: Vec<TokenJson>,
    labels: BTreeMap<u32, usize>,
    commonsense_type: CommonsenseType,
}

// ---------------------------------------------------------------------------
// Feature file

/// Region features keyed by `(sample_id, ordinal)`, as loaded from a `CGF1` file.
#[derive(Debug, Default)]
pub struct FeatureTable {
    pub d_vis: usize,
    rows: HashMap<(String, u32), Vec<f32>>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, sample_id: &str, ordinal: u32) -> Option<&[f32]> {
        self.rows
            .get(&(sample_id.to_string(), ordinal))
            .map(Vec::as_slice)
    }

    pub(crate) fn take(&mut self, sample_id: &str, ordinal: u32) -> Result<Vec<f32>> {
        self.rows
            .remove(&(sample_id.to_string(), ordinal))
            .ok_or_else(|| Error::invalid(sample_id, format!("missing feature row for region {ordinal}")))
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a whole `CGF1` feature file.
pub fn read_feature_file(path: &Path) -> Result<FeatureTable> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            what: "feature file",
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    let d_vis = read_u32(&mut r).map_err(io)? as usize;
    let mut table = FeatureTable {
        d_vis,
        rows: HashMap::new(),
    };
    let mut row_bytes = vec![0u8; 4 * d_vis];
    loop {
        let id_len = match read_u32(&mut r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io(e)),
        };
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(io)?;
        let id = String::from_utf8(id).map_err(|_| Error::Parse {
            line: 0,
            message: "feature file: sample_id is not UTF-8".into(),
        })?;
        let ordinal = read_u32(&mut r).map_err(io)?;
        r.read_exact(&mut row_bytes).map_err(io)?;
        let row = row_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if table.rows.insert((id.clone(), ordinal), row).is_some() {
            return Err(Error::invalid(id, format!("duplicate feature row for region {ordinal}")));
        }
    }
    Ok(table)
}

/// Writes `(sample_id, ordinal, feature)` rows in the given order.
pub fn write_feature_file<'a>(
    path: &Path,
    d_vis: usize,
    rows: impl IntoIterator<Item = (&'a str, u32, &'a [f32])>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&FEATURE_MAGIC).map_err(io)?;
    w.write_all(&(d_vis as u32).to_le_bytes()).map_err(io)?;
    for (id, ordinal, feature) in rows {
        if feature.len() != d_vis {
            return Err(Error::DimensionMismatch {
                expected: d_vis,
                found: feature.len(),
                context: format!("sample {id}, region {ordinal}"),
            });
        }
        w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
        w.write_all(&ordinal.to_le_bytes()).map_err(io)?;
        for v in feature {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub(crate) fn region_rows(samples: &[Sample]) -> impl Iterator<Item = (&str, u32, &[f32])> {
    samples.iter().flat_map(|s| {
        let id = s.sample_id.as_str();
        let n = s.image.persons.len();
        s.image
            .persons
            .iter()
            .enumerate()
            .map(move |(i, p)| (id, i as u32, p.feature.as_slice()))
            .chain(
                s.image
                    .context_objects
                    .iter()
                    .enumerate()
                    .map(move |(i, c)| (id, (n + i) as u32, c.feature.as_slice())),
            )
    })
}

// ---------------------------------------------------------------------------
// Line-oriented readers shared with the QA ingestion path

/// Parses the header and raw record lines of a JSON-lines file. Returned
/// records carry their 1-based line numbers.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(DatasetHeader, Vec<(usize, T)>)> {
    let io = |e| Error::io(path, e);
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: DatasetHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad header: {e}"),
            })?;
            h.validate()?;
            header = Some(h);
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push((line_no, rec));
    }
    let header = header.ok_or(Error::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    Ok((header, records))
}

pub(crate) fn load_features(path: &Path, header: &DatasetHeader) -> Result<FeatureTable> {
    let table = read_feature_file(&companion_feature_path(path))?;
    if table.d_vis != header.d_vis {
        return Err(Error::DimensionMismatch {
            expected: header.d_vis,
            found: table.d_vis,
            context: "feature file header".into(),
        });
    }
    Ok(table)
}

pub(crate) fn ensure_consumed(features: &FeatureTable) -> Result<()> {
    if let Some(((id, ordinal), _)) = features.rows.iter().min_by(|a, b| a.0.cmp(b.0)) {
        return Err(Error::invalid(
            id.clone(),
            format!("feature row for unknown region {ordinal}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset read/write

/// Reads a dataset file and its companion feature file, validating every
/// sample against the header.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let (header, records) = read_jsonl::<SampleJson>(path)?;
    let mut features = load_features(path, &header)?;
    let mut samples = Vec::with_capacity(records.len());
    let mut ids = std::collections::HashSet::new();
    for (_line, rec) in records {
        if !ids.insert(rec.sample_id.clone()) {
            return Err(Error::invalid(rec.sample_id, "duplicate sample_id"));
        }
        let image = rec.image.into_record(&rec.sample_id, &mut features)?;
        let sample = Sample {
            description: Description::new(tokens_from_json(rec.tokens)),
            labels: GroundingLabel { pairs: rec.labels },
            commonsense_type: rec.commonsense_type,
            sample_id: rec.sample_id,
            image,
        };
        sample.validate(&header)?;
        samples.push(sample);
    }
    ensure_consumed(&features)?;
    Ok(Dataset { header, samples })
}

/// Writes the dataset file and its companion feature file. Every sample is
/// validated before anything touches the disk.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    dataset.validate()?;
    let mut ids = std::collections::HashSet::new();
    for s in &dataset.samples {
        if !ids.insert(s.sample_id.as_str()) {
            return Err(Error::invalid(s.sample_id.clone(), "duplicate sample_id"));
        }
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let json = |e: serde_json::Error| Error::io(path, e.into());
    serde_json::to_writer(&mut w, &dataset.header).map_err(json)?;
    w.write_all(b"\n").map_err(io)?;
    for s in &dataset.samples {
        let rec = SampleJson {
            sample_id: s.sample_id.clone(),
            image: ImageJson::from_record(&s.image),
            tokens: tokens_to_json(&s.description.tokens),
            labels: s.labels.pairs.clone(),
            commonsense_type: s.commonsense_type,
        };
        serde_json::to_writer(&mut w, &rec).map_err(json)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    write_feature_file(
        &companion_feature_path(path),
        dataset.header.d_vis,
        region_rows(&dataset.samples),
    )
}
