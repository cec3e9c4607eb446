//! Toolkit for human-centric commonsense grounding.
//!
//! * [`data`]: samples, invariants and the on-disk dataset/feature formats.
//! * [`geometry`]: box IoU and the 7-dimensional location feature.
//! * [`rulekit`]: question/answer to statement rewriting, post-processing
//!   filters and commonsense-type tagging.
//! * [`numcore`]: a small dense tensor kernel with reverse-mode gradients.
//! * [`grounder`]: the context-object-aware grounding model and its losses.
//! * [`benchkit`]: heuristic baselines, accuracy reports and a synthetic
//!   scene generator.

pub mod benchkit;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod grounder;
pub mod numcore;
pub mod rulekit;

pub use error::{Error, ErrorKind, Result};
