//! Lower-cased word vocabulary with an unknown-word entry at index 0.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::data::{Sample, Token};
use crate::error::{Error, Result};

pub const UNK: &str = "[unk]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from explicit words; order is `[unk]` then the sorted set.
    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Vocab {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .filter(|w| w != UNK)
            .collect();
        let words: Vec<String> = std::iter::once(UNK.to_string()).chain(set).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    /// Every word of every description plus every neutral name.
    pub fn build(samples: &[Sample], names: &[String]) -> Vocab {
        let mut all: Vec<String> = Vec::new();
        for s in samples {
            for t in &s.description.tokens {
                match t {
                    Token::Word(w) => all.extend(w.split_whitespace().map(str::to_string)),
                    Token::ObjectLink { class_name, .. } => {
                        all.extend(class_name.split_whitespace().map(str::to_string))
                    }
                    Token::PersonLink(_) => {}
                }
            }
        }
        for n in names {
            all.extend(n.split_whitespace().map(str::to_string));
        }
        Vocab::from_words(all)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `word` (case-insensitive), `0` when unknown.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One word per line, `[unk]` first.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.words.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vocab> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        if words.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Parse {
                line: 1,
                message: format!("vocabulary must start with {UNK}"),
            });
        }
        let vocab = Vocab::from_words(&words[1..]);
        if vocab.words != words {
            return Err(Error::Parse {
                line: 1,
                message: "vocabulary not sorted, lower-cased and unique".into(),
            });
        }
        Ok(vocab)
    }
}

/// Sidecar vocabulary path stored next to a checkpoint.
pub fn vocab_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".vocab");
    s.into()
}
