//! Replacement of person links by neutral first names.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::Token;
use crate::error::{Error, Result};

/// Description text after name substitution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedText {
    pub words: Vec<String>,
    /// Distinct link ids in order of first mention, with the word position
    /// where each link's name starts.
    pub links: Vec<(u32, usize)>,
}

fn name_rng(sample_id: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"names");
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Replaces every person link with a name drawn from `pool`, distinct links
/// getting distinct names. The draw depends only on `(sample_id, seed)`.
/// Object links render as their class name; words are split on whitespace.
pub fn substitute_neutral_names(
    tokens: &[Token],
    pool: &[String],
    sample_id: &str,
    seed: u64,
) -> Result<NamedText> {
    let mut distinct: Vec<u32> = Vec::new();
    for t in tokens {
        if let Token::PersonLink(id) = t {
            if !distinct.contains(id) {
                distinct.push(*id);
            }
        }
    }
    if distinct.len() > pool.len() {
        return Err(Error::invalid(
            sample_id,
            format!("{} links but only {} neutral names", distinct.len(), pool.len()),
        ));
    }
    let picks = if distinct.is_empty() {
        Vec::new()
    } else {
        sample_indices(&mut name_rng(sample_id, seed), pool.len(), distinct.len()).into_vec()
    };

    let mut words = Vec::with_capacity(tokens.len() + distinct.len());
    let mut links: Vec<(u32, usize)> = Vec::with_capacity(distinct.len());
    for t in tokens {
        match t {
            Token::Word(w) => words.extend(w.split_whitespace().map(str::to_string)),
            Token::ObjectLink { class_name, .. } => {
                words.extend(class_name.split_whitespace().map(str::to_string))
            }
            Token::PersonLink(id) => {
                let k = distinct.iter().position(|d| d == id).expect("collected above");
                if !links.iter().any(|(l, _)| l == id) {
                    links.push((*id, words.len()));
                }
                words.extend(pool[picks[k]].split_whitespace().map(str::to_string));
            }
        }
    }
    Ok(NamedText { words, links })
}
