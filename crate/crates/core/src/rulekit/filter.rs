use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Sample, Token, MAX_PERSONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DropReason {
    NoPersonLink,
    NoCandidate,
    SingleCandidate,
    TooManyPersons,
    TiedLinks,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterVerdict {
    Keep,
    Drop(DropReason),
}

/// Replaces every object link with a word carrying its class name.
pub fn replace_object_links(tokens: &[Token]) -> Result<Vec<Token>> {
    tokens
        .iter()
        .map(|t| match t {
            Token::ObjectLink {
                region_id,
                class_name,
            } => {
                if class_name.trim().is_empty() {
                    Err(Error::Rules(format!("object link {region_id} has empty class_name")))
                } else {
                    Ok(Token::Word(class_name.clone()))
                }
            }
            other => Ok(other.clone()),
        })
        .collect()
}

/// `PERSONa and PERSONb` / `PERSONa or PERSONb` with nothing else in between.
pub fn has_tied_links(tokens: &[Token]) -> bool {
    tokens.windows(3).any(|w| {
        w[0].is_person()
            && w[2].is_person()
            && w[1]
                .as_word()
                .is_some_and(|c| c.eq_ignore_ascii_case("and") || c.eq_ignore_ascii_case("or"))
    })
}

/// Post-processing filter. Reasons are checked in declaration order of
/// [`DropReason`] and the first one triggered wins.
pub fn filter_sample(sample: &Sample) -> FilterVerdict {
    let tokens = &sample.description.tokens;
    let n = sample.image.persons.len();
    let reason = if !tokens.iter().any(Token::is_person) {
        Some(DropReason::NoPersonLink)
    } else if n == 0 {
        Some(DropReason::NoCandidate)
    } else if n == 1 {
        Some(DropReason::SingleCandidate)
    } else if n > MAX_PERSONS {
        Some(DropReason::TooManyPersons)
    } else if has_tied_links(tokens) {
        Some(DropReason::TiedLinks)
    } else {
        None
    };
    reason.map_or(FilterVerdict::Keep, FilterVerdict::Drop)
}
