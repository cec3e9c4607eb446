//! Classification and human-centric contrastive losses.

use serde::Serialize;

use super::model::{classification_logits, forward, ModelArch, PreparedSample};
use super::config::ModelConfig;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::numcore::{Graph, Grads, NodeId, ParamStore, Tensor};

/// A region of the input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    Person(usize),
    Object(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Positive {
    pub region: Region,
    /// IoU with the ground-truth person; `1` for the person itself.
    pub weight: f64,
}

/// Positives and negatives of one link's contrastive term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastiveSet {
    pub link_id: u32,
    /// Ground-truth person first, then qualifying context objects in order.
    pub positives: Vec<Positive>,
    /// Every person other than the ground truth.
    pub negatives: Vec<usize>,
}

/// For every link (first-mention order): the ground-truth person plus each
/// context object with IoU above `t1` against it and below `t2` against
/// every other person. Objects are skipped entirely when `include_objects`
/// is false.
pub fn select_context_objects(
    sample: &Sample,
    t1: f64,
    t2: f64,
    include_objects: bool,
) -> Result<Vec<ContrastiveSet>> {
    let img = &sample.image;
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for link in sample.description.link_ids() {
        if seen.contains(&link) {
            continue;
        }
        seen.push(link);
        let gt = sample
            .labels
            .get(link)
            .filter(|&t| t < img.persons.len())
            .ok_or_else(|| Error::invalid(&sample.sample_id, format!("link {link} has no valid label")))?;
        let gt_box = &img.persons[gt].bbox;
        let mut positives = vec![Positive {
            region: Region::Person(gt),
            weight: 1.0,
        }];
        if include_objects {
            for (c, obj) in img.context_objects.iter().enumerate() {
                let w = iou(&obj.bbox, gt_box)?;
                if w <= t1 {
                    continue;
                }
                let mut max_other: f64 = 0.0;
                for (j, p) in img.persons.iter().enumerate() {
                    if j != gt {
                        max_other = max_other.max(iou(&obj.bbox, &p.bbox)?);
                    }
                }
                if max_other < t2 {
                    positives.push(Positive {
                        region: Region::Object(c),
                        weight: w,
                    });
                }
            }
        }
        out.push(ContrastiveSet {
            link_id: link,
            positives,
            negatives: (0..img.persons.len()).filter(|&j| j != gt).collect(),
        });
    }
    Ok(out)
}

/// `-(1/k) sum_i log softmax(Q_i)[targets_i]` as a graph node.
pub fn cls_loss_node(g: &mut Graph, q: NodeId, targets: &[usize]) -> Result<NodeId> {
    let k = g.value(q).rows();
    if k != targets.len() || k == 0 {
        return Err(Error::Shape {
            op: "loss_cls",
            left: g.value(q).shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let logp = g.log_softmax(q)?;
    let picks: Vec<_> = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| (i, t, -1.0 / k as f64))
        .collect();
    g.weighted_pick(logp, &picks)
}

/// Classification loss of a logit matrix outside any model.
pub fn loss_cls(q: &Tensor, targets: &[usize]) -> Result<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let qn = g.input(q.clone())?;
    let l = cls_loss_node(&mut g, qn, targets)?;
    Ok(g.value(l).item())
}

/// Contrastive loss over hidden rows `h` (`[L, d]`).
///
/// For link `i` anchored at row `anchors[i]`, with positive rows `P` and
/// negative rows `N` (`rows` maps regions to sequence rows):
/// `-(1/k) sum_i sum_p (w_p/|P|) log softmax_{P u N}(h_a . h_r / tau)[p]`.
pub fn con_loss_node(
    g: &mut Graph,
    h: NodeId,
    anchors: &[usize],
    sets: &[ContrastiveSet],
    rows: &dyn Fn(Region) -> usize,
    tau: f64,
    normalize: bool,
) -> Result<NodeId> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if anchors.len() != sets.len() || sets.is_empty() {
        return Err(Error::Shape {
            op: "loss_con",
            left: vec![anchors.len()],
            right: vec![sets.len()],
        });
    }
    let h = if normalize { g.l2_normalize_rows(h)? } else { h };
    let k = sets.len() as f64;
    let mut total: Option<NodeId> = None;
    for (&a, set) in anchors.iter().zip(sets) {
        let cand: Vec<usize> = set
            .positives
            .iter()
            .map(|p| rows(p.region))
            .chain(set.negatives.iter().map(|&j| rows(Region::Person(j))))
            .collect();
        let anchor = g.gather_rows(h, &[a])?;
        let cand = g.gather_rows(h, &cand)?;
        let sims = g.matmul_t(anchor, cand)?;
        let sims = g.scale(sims, 1.0 / tau)?;
        let logp = g.log_softmax(sims)?;
        let np = set.positives.len() as f64;
        let picks: Vec<_> = set
            .positives
            .iter()
            .enumerate()
            .map(|(c, p)| (0, c, -p.weight / (np * k)))
            .collect();
        let term = g.weighted_pick(logp, &picks)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.expect("at least one set"))
}

/// Per-sample loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub con: f64,
    pub total: f64,
}

/// Which scalar an objective differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Cls,
    Con,
    Total,
}

/// Builds the full forward graph of one prepared sample and returns the
/// node of the requested loss together with all three values.
pub fn sample_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    arch: &ModelArch,
    s: &PreparedSample,
    kind: LossKind,
) -> Result<(NodeId, LossBreakdown)> {
    let hidden = forward(g, arch, s)?;
    let q = classification_logits(g, arch, s, &hidden)?;
    let cls = cls_loss_node(g, q, &s.targets)?;
    let hl = hidden.from_last(cfg.contrastive_layer)?;
    let rows = |r: Region| match r {
        Region::Person(j) => s.person_position(j),
        Region::Object(c) => s.object_position(c),
    };
    let con = con_loss_node(g, hl, &s.link_positions, &s.contrastive_sets, &rows, cfg.tau, cfg.normalize_similarity)?;
    let weighted = g.scale(con, cfg.lambda)?;
    let total = g.add(cls, weighted)?;
    let values = LossBreakdown {
        cls: g.value(cls).item(),
        con: g.value(con).item(),
        total: g.value(total).item(),
    };
    let node = match kind {
        LossKind::Cls => cls,
        LossKind::Con => con,
        LossKind::Total => total,
    };
    Ok((node, values))
}

/// `L_cls + lambda * L_con` of one sample with parameter gradients.
pub fn loss_total(
    cfg: &ModelConfig,
    arch: &ModelArch,
    params: &ParamStore,
    s: &PreparedSample,
) -> Result<(LossBreakdown, Grads)> {
    let mut g = Graph::new(params);
    let (node, values) = sample_loss(&mut g, cfg, arch, s, LossKind::Total)?;
    Ok((values, g.backward(node)?))
}

/// Scores and chosen person per link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub link_ids: Vec<u32>,
    pub scores: Vec<Vec<f64>>,
    pub chosen: Vec<usize>,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(arch: &ModelArch, params: &ParamStore, s: &PreparedSample) -> Result<Prediction> {
    let mut g = Graph::new(params);
    let hidden = forward(&mut g, arch, s)?;
    let q = classification_logits(&mut g, arch, s, &hidden)?;
    let q = g.value(q);
    let scores: Vec<Vec<f64>> = (0..q.rows()).map(|i| q.row_slice(i).to_vec()).collect();
    Ok(Prediction {
        link_ids: s.link_ids.clone(),
        chosen: scores.iter().map(|r| argmax(r)).collect(),
        scores,
    })
}
