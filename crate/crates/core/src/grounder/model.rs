//! Parameters, input preparation and the forward pass of the grounding model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::loss::{select_context_objects, ContrastiveSet};
use super::names::substitute_neutral_names;
use super::vocab::Vocab;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geometry::location_feature;
use crate::numcore::{
    encode, register_layer_norm, register_linear, EncoderParams, Graph, HiddenStates, NodeId, ParamId,
    ParamStore, Tensor,
};

/// Width of the box location feature.
pub const LOCATION_DIM: usize = 7;

/// Width of the encoded location input for `frequencies` sinusoid pairs.
pub fn location_input_dim(frequencies: usize) -> usize {
    LOCATION_DIM * (1 + 2 * frequencies)
}

/// The raw location feature followed by `sin(2^k pi v)`, `cos(2^k pi v)` for
/// every coordinate `v` and `k < frequencies`.
pub fn encode_location(feature: &[f64; LOCATION_DIM], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(location_input_dim(frequencies));
    out.extend_from_slice(feature);
    for k in 0..frequencies {
        let w = std::f64::consts::PI * (1u64 << k) as f64;
        for &v in feature {
            out.push((w * v).sin());
            out.push((w * v).cos());
        }
    }
    out
}

/// Segment rows of the token-type embedding.
const SEGMENT_TEXT: usize = 0;
const SEGMENT_PERSON: usize = 1;
const SEGMENT_OBJECT: usize = 2;

/// Parameter handles; values live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ModelArch {
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub segment_emb: ParamId,
    pub text_ln: (ParamId, ParamId),
    pub vis_feat: (ParamId, ParamId),
    pub vis_loc: (ParamId, ParamId),
    pub vis_ln: (ParamId, ParamId),
    pub encoder: EncoderParams,
    pub cls_w1: ParamId,
    pub cls_w2: ParamId,
}

impl ModelArch {
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, vocab_len: usize) -> Result<ModelArch> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.encoder.d_model;
        let std = cfg.init_std;
        let word_emb = store.normal("embed.word", vocab_len, d, std, &mut rng)?;
        let pos_emb = store.normal("embed.position", cfg.max_text_len, d, std, &mut rng)?;
        let segment_emb = store.normal("embed.segment", 3, d, std, &mut rng)?;
        let text_ln = register_layer_norm(store, "embed.text_ln", d)?;
        let vis_feat = register_linear(store, "embed.visual.feature", cfg.d_vis, d, std, &mut rng)?;
        let vis_loc = register_linear(
            store,
            "embed.visual.location",
            location_input_dim(cfg.location_frequencies),
            d,
            std,
            &mut rng,
        )?;
        let vis_ln = register_layer_norm(store, "embed.visual_ln", d)?;
        let encoder = EncoderParams::register(store, &cfg.encoder, std, &mut rng)?;
        let cls_w1 = store.normal("head.text_proj", d, d, std, &mut rng)?;
        let cls_w2 = store.normal("head.region_proj", d, d, std, &mut rng)?;
        Ok(ModelArch {
            word_emb,
            pos_emb,
            segment_emb,
            text_ln,
            vis_feat,
            vis_loc,
            vis_ln,
            encoder,
            cls_w1,
            cls_w2,
        })
    }
}

/// A sample turned into model inputs; computed once and reused every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample_id: String,
    pub word_ids: Vec<usize>,
    /// Link ids in order of first mention.
    pub link_ids: Vec<u32>,
    /// Text position of each link's name.
    pub link_positions: Vec<usize>,
    /// Ground-truth person per link.
    pub targets: Vec<usize>,
    pub n_persons: usize,
    /// Context objects placed in the sequence (0 when disabled).
    pub n_objects: usize,
    /// `[n_persons + n_objects, d_vis]`
    pub region_features: Tensor,
    /// `[n_persons + n_objects, location_input_dim]`
    pub region_locations: Tensor,
    pub contrastive_sets: Vec<ContrastiveSet>,
}

impl PreparedSample {
    pub fn sequence_len(&self) -> usize {
        self.word_ids.len() + self.n_persons + self.n_objects
    }

    pub fn person_position(&self, j: usize) -> usize {
        self.word_ids.len() + j
    }

    pub fn object_position(&self, c: usize) -> usize {
        self.word_ids.len() + self.n_persons + c
    }
}

/// Model config, vocabulary, handles and values together.
#[derive(Debug, Clone)]
pub struct GroundingModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub arch: ModelArch,
    pub params: ParamStore,
}

impl GroundingModel {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<GroundingModel> {
        let mut params = ParamStore::new();
        let arch = ModelArch::register(&mut params, &config, vocab.len())?;
        Ok(GroundingModel {
            config,
            vocab,
            arch,
            params,
        })
    }

    pub fn prepare(&self, sample: &Sample) -> Result<PreparedSample> {
        prepare_sample(&self.config, &self.vocab, sample)
    }
}

pub fn prepare_sample(cfg: &ModelConfig, vocab: &Vocab, sample: &Sample) -> Result<PreparedSample> {
    let id = sample.sample_id.as_str();
    let named = substitute_neutral_names(&sample.description.tokens, &cfg.neutral_names, id, cfg.seed)?;
    if named.words.is_empty() || named.links.is_empty() {
        return Err(Error::invalid(id, "description has no person link"));
    }
    if named.words.len() > cfg.max_text_len {
        return Err(Error::invalid(
            id,
            format!("{} text tokens exceed max_text_len {}", named.words.len(), cfg.max_text_len),
        ));
    }
    let img = &sample.image;
    let n_persons = img.persons.len();
    let mut targets = Vec::with_capacity(named.links.len());
    for &(link, _) in &named.links {
        let t = sample
            .labels
            .get(link)
            .ok_or_else(|| Error::invalid(id, format!("link {link} has no label")))?;
        if t >= n_persons {
            return Err(Error::invalid(id, format!("label {t} for link {link} out of range")));
        }
        targets.push(t);
    }
    let objects: &[_] = if cfg.use_context_objects {
        &img.context_objects
    } else {
        &[]
    };
    let (w, h) = (img.width as f64, img.height as f64);
    let n_regions = n_persons + objects.len();
    let mut feats = Vec::with_capacity(n_regions * cfg.d_vis);
    let loc_dim = location_input_dim(cfg.location_frequencies);
    let mut locs = Vec::with_capacity(n_regions * loc_dim);
    let regions = img
        .persons
        .iter()
        .map(|p| (&p.bbox, &p.feature))
        .chain(objects.iter().map(|o| (&o.bbox, &o.feature)));
    for (bbox, feature) in regions {
        if feature.len() != cfg.d_vis {
            return Err(Error::DimensionMismatch {
                expected: cfg.d_vis,
                found: feature.len(),
                context: format!("region feature of sample {id}"),
            });
        }
        feats.extend(feature.iter().map(|&v| v as f64));
        locs.extend(encode_location(&location_feature(bbox, w, h)?.0, cfg.location_frequencies));
    }
    let contrastive_sets = select_context_objects(sample, cfg.t1, cfg.t2, cfg.use_context_objects)?;
    Ok(PreparedSample {
        sample_id: sample.sample_id.clone(),
        word_ids: named.words.iter().map(|w| vocab.id(w)).collect(),
        link_ids: named.links.iter().map(|l| l.0).collect(),
        link_positions: named.links.iter().map(|l| l.1).collect(),
        targets,
        n_persons,
        n_objects: objects.len(),
        region_features: Tensor::matrix(n_regions, cfg.d_vis, feats)?,
        region_locations: Tensor::matrix(n_regions, loc_dim, locs)?,
        contrastive_sets,
    })
}

fn ln(g: &mut Graph, x: NodeId, p: (ParamId, ParamId)) -> Result<NodeId> {
    let (gain, bias) = (g.param(p.0)?, g.param(p.1)?);
    g.layer_norm(x, gain, bias)
}

fn lin(g: &mut Graph, x: NodeId, p: (ParamId, ParamId)) -> Result<NodeId> {
    let (w, b) = (g.param(p.0)?, g.param(p.1)?);
    g.linear(x, w, b)
}

/// Embeds text and regions and returns the `[L, d_model]` input sequence:
/// text tokens, then persons, then context objects.
pub fn embed_sample(g: &mut Graph, arch: &ModelArch, s: &PreparedSample) -> Result<NodeId> {
    let n_text = s.word_ids.len();
    let words = g.param(arch.word_emb)?;
    let words = g.gather_rows(words, &s.word_ids)?;
    let pos = g.param(arch.pos_emb)?;
    let pos = g.gather_rows(pos, &(0..n_text).collect::<Vec<_>>())?;
    let seg = g.param(arch.segment_emb)?;
    let text_seg = g.gather_rows(seg, &vec![SEGMENT_TEXT; n_text])?;
    let text = g.add(words, pos)?;
    let text = g.add(text, text_seg)?;
    let text = ln(g, text, arch.text_ln)?;

    let feats = g.input(s.region_features.clone())?;
    let locs = g.input(s.region_locations.clone())?;
    let f = lin(g, feats, arch.vis_feat)?;
    let l = lin(g, locs, arch.vis_loc)?;
    let segments: Vec<usize> = (0..s.n_persons)
        .map(|_| SEGMENT_PERSON)
        .chain((0..s.n_objects).map(|_| SEGMENT_OBJECT))
        .collect();
    let vis_seg = g.gather_rows(seg, &segments)?;
    let vis = g.add(f, l)?;
    let vis = g.add(vis, vis_seg)?;
    let vis = ln(g, vis, arch.vis_ln)?;
    g.concat_rows(&[text, vis])
}

/// Embeds and encodes one sample.
pub fn forward(g: &mut Graph, arch: &ModelArch, s: &PreparedSample) -> Result<HiddenStates> {
    let x = embed_sample(g, arch, s)?;
    encode(g, x, &arch.encoder)
}

/// `Q = (F_t W1)(F_r W2)^T` over link tokens and person regions of the final layer: `[k, N]`.
pub fn classification_logits(
    g: &mut Graph,
    arch: &ModelArch,
    s: &PreparedSample,
    hidden: &HiddenStates,
) -> Result<NodeId> {
    let last = hidden.last();
    let text = g.gather_rows(last, &s.link_positions)?;
    let persons: Vec<usize> = (0..s.n_persons).map(|j| s.person_position(j)).collect();
    let regions = g.gather_rows(last, &persons)?;
    let w1 = g.param(arch.cls_w1)?;
    let w2 = g.param(arch.cls_w2)?;
    let a = g.matmul(text, w1)?;
    let b = g.matmul(regions, w2)?;
    g.matmul_t(a, b)
}
