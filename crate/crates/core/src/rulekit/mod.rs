//! Dataset construction from question/answer corpora.
//!
//! A [`RuleSet`] of declarative rewrite rules turns each question and its
//! correct answer into a statement; object links are replaced by their class
//! names, post-processing filters drop unusable samples, and the matched rule
//! decides the commonsense type.

mod dsl;
mod filter;
mod pipeline;

pub use dsl::{
    parse_pattern, parse_rules, parse_template, Captures, PatternAtom, QuestionType, Rule, RuleSet,
    TemplatePart, AUXILIARIES, DEFAULT_RULES,
};
pub use filter::{filter_sample, has_tied_links, replace_object_links, DropReason, FilterVerdict};
pub use pipeline::{
    classify_commonsense, coverage_report, match_rule, read_qa_file, run_pipeline, transform,
    write_qa_file, CoverageReport, DropRecord, PipelineOutput, PipelineReport, QAPair, QaCorpus,
    Split, SplitSpec, TypeCounts,
};
