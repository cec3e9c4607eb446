//! Model and training hyperparameters, and their flat `key = value` file form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{AdamWConfig, EncoderConfig, INIT_STD};

pub const DEFAULT_NEUTRAL_NAMES: [&str; 20] = [
    "james", "mary", "john", "patricia", "robert", "jennifer", "michael", "linda", "william",
    "elizabeth", "david", "barbara", "richard", "susan", "joseph", "jessica", "thomas", "sarah",
    "charles", "karen",
];

/// Every hyperparameter of the grounding model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub d_vis: usize,
    pub max_text_len: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Context object must overlap its person with IoU above this.
    pub t1: f64,
    /// ...and every other person with IoU below this.
    pub t2: f64,
    /// Weight of the contrastive loss.
    pub lambda: f64,
    /// Hidden layer used by the contrastive loss, counted from the last.
    pub contrastive_layer: usize,
    pub normalize_similarity: bool,
    /// Append detected context objects to the input sequence.
    pub use_context_objects: bool,
    /// Sinusoidal frequencies added per location coordinate; 0 keeps the
    /// raw 7-dim location feature.
    pub location_frequencies: usize,
    pub neutral_names: Vec<String>,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            d_vis: 2048,
            max_text_len: 64,
            tau: 0.07,
            t1: 0.3,
            t2: 0.1,
            lambda: 1.0,
            contrastive_layer: 3,
            normalize_similarity: false,
            use_context_objects: true,
            location_frequencies: 0,
            neutral_names: DEFAULT_NEUTRAL_NAMES.iter().map(|s| s.to_string()).collect(),
            init_std: INIT_STD,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.d_vis == 0 || self.max_text_len == 0 {
            return bad("d_vis and max_text_len must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        for (name, t) in [("t1", self.t1), ("t2", self.t2)] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{name} = {t} outside [0, 1]"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.contrastive_layer == 0 || self.contrastive_layer > self.encoder.n_layers {
            return bad(format!(
                "contrastive_layer {} outside 1..={}",
                self.contrastive_layer, self.encoder.n_layers
            ));
        }
        if self.neutral_names.len() < 10 {
            return bad(format!(
                "neutral name pool needs at least 10 names, has {}",
                self.neutral_names.len()
            ));
        }
        if self.neutral_names.iter().any(|n| n.trim().is_empty()) {
            return bad("empty neutral name".into());
        }
        if self.location_frequencies > 16 {
            return bad(format!("location_frequencies {} above 16", self.location_frequencies));
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }
}

/// Optimizer and batching settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub steps: usize,
    pub optimizer: AdamWConfig,
    /// Batches hold samples until their total sequence length would exceed this.
    pub token_budget: usize,
    /// Linear warmup length in steps.
    pub warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            steps: 4000,
            optimizer: AdamWConfig::default(),
            token_budget: 4000,
            warmup_steps: 0,
            grad_clip: 0.0,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.token_budget == 0 {
            return Err(Error::Config("token_budget must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config(format!("bad optimizer settings {o:?}")));
        }
        if !(o.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::Config("weight_decay and grad_clip must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            self.optimizer.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.optimizer.lr
        }
    }
}

/// Model config plus training schedule, as stored in one config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("config: bad value {v:?} for {key}"),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("config: expected `key = value`, got {line:?}"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("config: duplicate key {key}"),
                });
            }
            let m = &mut c.model;
            let s = &mut c.schedule;
            match key {
                "d_model" => m.encoder.d_model = parse_value(key, v, line_no)?,
                "n_heads" => m.encoder.n_heads = parse_value(key, v, line_no)?,
                "n_layers" => m.encoder.n_layers = parse_value(key, v, line_no)?,
                "d_ff" => m.encoder.d_ff = parse_value(key, v, line_no)?,
                "d_vis" => m.d_vis = parse_value(key, v, line_no)?,
                "max_text_len" => m.max_text_len = parse_value(key, v, line_no)?,
                "tau" => m.tau = parse_value(key, v, line_no)?,
                "t1" => m.t1 = parse_value(key, v, line_no)?,
                "t2" => m.t2 = parse_value(key, v, line_no)?,
                "lambda" => m.lambda = parse_value(key, v, line_no)?,
                "contrastive_layer" => m.contrastive_layer = parse_value(key, v, line_no)?,
                "normalize_similarity" => m.normalize_similarity = parse_value(key, v, line_no)?,
                "use_context_objects" => m.use_context_objects = parse_value(key, v, line_no)?,
                "location_frequencies" => m.location_frequencies = parse_value(key, v, line_no)?,
                "neutral_names" => {
                    m.neutral_names = v
                        .split(',')
                        .map(|n| n.trim().to_string())
                        .filter(|n| !n.is_empty())
                        .collect()
                }
                "init_std" => m.init_std = parse_value(key, v, line_no)?,
                "seed" => {
                    m.seed = parse_value(key, v, line_no)?;
                    m.encoder.seed = m.seed;
                    s.seed = m.seed;
                }
                "steps" => s.steps = parse_value(key, v, line_no)?,
                "lr" => s.optimizer.lr = parse_value(key, v, line_no)?,
                "beta1" => s.optimizer.beta1 = parse_value(key, v, line_no)?,
                "beta2" => s.optimizer.beta2 = parse_value(key, v, line_no)?,
                "adam_eps" => s.optimizer.eps = parse_value(key, v, line_no)?,
                "weight_decay" => s.optimizer.weight_decay = parse_value(key, v, line_no)?,
                "token_budget" => s.token_budget = parse_value(key, v, line_no)?,
                "warmup_steps" => s.warmup_steps = parse_value(key, v, line_no)?,
                "grad_clip" => s.grad_clip = parse_value(key, v, line_no)?,
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("config: unknown key {key}"),
                    })
                }
            }
        }
        c.model.validate()?;
        c.schedule.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text)
    }

    /// Renders every key; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let m = &self.model;
        let s = &self.schedule;
        let o = &s.optimizer;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("d_model", m.encoder.d_model.to_string());
        kv("n_heads", m.encoder.n_heads.to_string());
        kv("n_layers", m.encoder.n_layers.to_string());
        kv("d_ff", m.encoder.d_ff.to_string());
        kv("d_vis", m.d_vis.to_string());
        kv("max_text_len", m.max_text_len.to_string());
        kv("tau", format!("{:?}", m.tau));
        kv("t1", format!("{:?}", m.t1));
        kv("t2", format!("{:?}", m.t2));
        kv("lambda", format!("{:?}", m.lambda));
        kv("contrastive_layer", m.contrastive_layer.to_string());
        kv("normalize_similarity", m.normalize_similarity.to_string());
        kv("use_context_objects", m.use_context_objects.to_string());
        kv("location_frequencies", m.location_frequencies.to_string());
        kv("neutral_names", m.neutral_names.join(","));
        kv("init_std", format!("{:?}", m.init_std));
        kv("seed", m.seed.to_string());
        kv("steps", s.steps.to_string());
        kv("lr", format!("{:?}", o.lr));
        kv("beta1", format!("{:?}", o.beta1));
        kv("beta2", format!("{:?}", o.beta2));
        kv("adam_eps", format!("{:?}", o.eps));
        kv("weight_decay", format!("{:?}", o.weight_decay));
        kv("token_budget", s.token_budget.to_string());
        kv("warmup_steps", s.warmup_steps.to_string());
        kv("grad_clip", format!("{:?}", s.grad_clip));
        out
    }
}
