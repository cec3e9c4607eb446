//! The grounding model: neutral-name substitution, a single-stream
//! Transformer over text and regions, classification and contrastive losses,
//! training and prediction.

mod config;
mod loss;
mod model;
mod names;
mod train;
mod vocab;

pub use config::{ExperimentConfig, ModelConfig, TrainSchedule, DEFAULT_NEUTRAL_NAMES};
pub use loss::{
    argmax, cls_loss_node, con_loss_node, loss_cls, loss_total, predict, sample_loss,
    select_context_objects, ContrastiveSet, LossBreakdown, LossKind, Positive, Prediction, Region,
};
pub use model::{
    classification_logits, embed_sample, encode_location, forward, location_input_dim, prepare_sample, GroundingModel, ModelArch,
    PreparedSample, LOCATION_DIM,
};
pub use names::{substitute_neutral_names, NamedText};
pub use train::{
    load_model, make_batches, predict_samples, prepare_all, save_model, train, LossObjective,
    TrainReport,
};
pub use vocab::{vocab_path, Vocab, UNK};
