//! Heuristic baselines, link-level accuracy, result tables and a synthetic
//! scene generator for desk-scale experiments.

mod baselines;
mod eval;
mod synth;
mod table;

pub use baselines::{
    baseline_big_to_small, baseline_left_to_right, baseline_random, distinct_links, Assignment, Baseline,
};
pub use eval::{chance_accuracy, evaluate, Bucket, EvalReport};
pub use synth::{
    attribute_slot, class_slot, is_context_determined, synth_generate, SynthConfig, ATTRIBUTES,
    CANVAS_HEIGHT, CANVAS_WIDTH, OBJECT_CLASSES,
};
pub use table::{render_table, NamedReport, RenderedTable};
