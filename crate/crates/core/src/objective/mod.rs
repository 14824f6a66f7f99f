//! Ranking + classification objective with in-batch hard negative mining.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{cosine, Graph, Var};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Piecewise-constant weight on the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub switch_fraction: f64,
    pub lambda_before: f64,
    pub lambda_after: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            switch_fraction: 0.75,
            lambda_before: 1.0,
            lambda_after: 0.02,
        }
    }
}

impl LossWeights {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.switch_fraction) {
            v.push(format!("switch_fraction must be in [0, 1], got {}", self.switch_fraction));
        }
        if !(self.lambda_before >= 0.0) || !(self.lambda_after >= 0.0) {
            v.push("lambda values must be >= 0".to_string());
        }
        v
    }
}

/// `lambda_before` until `switch_fraction` of the first epoch's iterations
/// have run, `lambda_after` from then on. The boundary iteration already
/// uses `lambda_after`.
pub fn lambda_schedule(global_iter: u64, iters_per_epoch: u64, weights: &LossWeights) -> f64 {
    let switch_at = weights.switch_fraction * iters_per_epoch.max(1) as f64;
    if (global_iter as f64) < switch_at {
        weights.lambda_before
    } else {
        weights.lambda_after
    }
}

pub fn dual_loss(g: &mut Graph<'_>, ranking: Var, classification: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let weighted = g.scale(classification, lambda)?;
    g.add(ranking, weighted)
}

pub fn dual_loss_value(ranking: f64, classification: f64, lambda: f64) -> f64 {
    ranking + lambda * classification
}

/// One summand of the ranking loss given its three cosine similarities.
pub fn ranking_terms(s_anchor_pos: f64, s_neg_item_pos: f64, s_anchor_neg_label: f64) -> f64 {
    (1.0 - s_anchor_pos) + s_neg_item_pos.max(0.0) + s_anchor_neg_label.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// One record per anchor: the hardest wrong label and the hardest
    /// wrong-class item in the batch.
    Hardest,
    /// One record per anchor and per other class present in the batch.
    AllClasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeMode {
    /// Binary cross-entropy on per-class sigmoid scores, summed over classes.
    SummedBinary,
    /// Softmax over the logits followed by categorical cross-entropy.
    Softmax,
}

/// Batch positions and class ids that make up one ranking-loss summand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRecord {
    pub anchor: usize,
    pub class: usize,
    /// Class whose label vector is the contrastive verb vector.
    pub negative_label: usize,
    /// Batch position of the contrastive action embedding.
    pub negative_item: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPairing {
    pub records: Vec<PairRecord>,
}

fn similarity_to(embedding: &[f64], label: &[f64]) -> Result<f64> {
    cosine(embedding, label)
}

/// Picks contrastive terms for every anchor from the batch itself.
///
/// The contrastive label is the other-class label most similar to the
/// anchor; the contrastive item is the other-class embedding most similar
/// to the anchor's own label. Ties go to the lowest class id, then the
/// lowest batch position.
pub fn mine_hard_negatives(
    embeddings: &[Vec<f64>],
    classes: &[usize],
    labels: &[Vec<f64>],
    mode: NegativeMode,
) -> Result<BatchPairing> {
    if embeddings.len() != classes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings but {} class ids",
            embeddings.len(),
            classes.len()
        )));
    }
    if let Some(c) = classes.iter().find(|c| **c >= labels.len()) {
        return Err(Error::InvalidArgument(format!("class id {c} has no label vector")));
    }
    // class -> batch positions, ordered by class id
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, c) in classes.iter().enumerate() {
        members.entry(*c).or_default().push(pos);
    }
    if members.len() < 2 {
        return Err(Error::Data("no contrastive class available in batch".into()));
    }

    // similarity of every item to every present label, computed once
    let mut sim: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (pos, e) in embeddings.iter().enumerate() {
        for c in members.keys() {
            sim.insert((pos, *c), similarity_to(e, &labels[*c])?);
        }
    }

    // hardest item of class `k` w.r.t. label `c`
    let hardest_item_in = |k: usize, c: usize| -> usize {
        let mut best = members[&k][0];
        for &pos in &members[&k][1..] {
            if sim[&(pos, c)] > sim[&(best, c)] {
                best = pos;
            }
        }
        best
    };

    let mut records = Vec::new();
    for (anchor, &class) in classes.iter().enumerate() {
        let others = members.keys().copied().filter(|k| *k != class);
        match mode {
            NegativeMode::Hardest => {
                let mut neg_label = None::<usize>;
                let mut neg_item = None::<usize>;
                for k in others {
                    if neg_label.is_none_or(|b| sim[&(anchor, k)] > sim[&(anchor, b)]) {
                        neg_label = Some(k);
                    }
                    let cand = hardest_item_in(k, class);
                    if neg_item.is_none_or(|b| sim[&(cand, class)] > sim[&(b, class)]) {
                        neg_item = Some(cand);
                    }
                }
                records.push(PairRecord {
                    anchor,
                    class,
                    negative_label: neg_label.unwrap(),
                    negative_item: neg_item.unwrap(),
                });
            }
            NegativeMode::AllClasses => {
                for k in others {
                    records.push(PairRecord {
                        anchor,
                        class,
                        negative_label: k,
                        negative_item: hardest_item_in(k, class),
                    });
                }
            }
        }
    }
    Ok(BatchPairing { records })
}

/// `Σ (1 − s(aᵢ,vᵢ)) + max{0, s(a_x,vᵢ)} + max{0, s(aᵢ,v_x)}` over the
/// pairing's records. `labels` maps class id to its label vector node.
pub fn pairwise_ranking_loss(
    g: &mut Graph<'_>,
    anchors: &[Var],
    labels: &BTreeMap<usize, Var>,
    pairing: &BatchPairing,
) -> Result<Var> {
    if pairing.records.is_empty() {
        return Err(Error::InvalidArgument("empty pairing".into()));
    }
    let label = |c: usize| {
        labels
            .get(&c)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no label node for class {c}")))
    };
    let mut terms = Vec::with_capacity(pairing.records.len());
    for r in &pairing.records {
        let (a_i, a_x) = (anchors[r.anchor], anchors[r.negative_item]);
        let (v_i, v_x) = (label(r.class)?, label(r.negative_label)?);
        let s_pos = g.cosine_similarity(a_i, v_i)?;
        let s_item = g.cosine_similarity(a_x, v_i)?;
        let s_label = g.cosine_similarity(a_i, v_x)?;
        let pull = g.scale(s_pos, -1.0)?;
        let pull = g.add_scalar(pull, 1.0)?;
        let push_item = g.relu(s_item)?;
        let push_label = g.relu(s_label)?;
        let t = g.add(pull, push_item)?;
        terms.push(g.add(t, push_label)?);
    }
    let all = g.concat(&terms)?;
    g.sum(all)
}

/// Value-only ranking loss over plain vectors.
pub fn pairwise_ranking_loss_value(embeddings: &[Vec<f64>], labels: &[Vec<f64>], pairing: &BatchPairing) -> Result<f64> {
    let mut g = Graph::new();
    let anchors: Vec<Var> = embeddings.iter().map(|e| g.constant(e.clone())).collect();
    let mut label_vars = BTreeMap::new();
    for r in &pairing.records {
        for c in [r.class, r.negative_label] {
            if let std::collections::btree_map::Entry::Vacant(slot) = label_vars.entry(c) {
                slot.insert(g.constant(labels[c].clone()));
            }
        }
    }
    let loss = pairwise_ranking_loss(&mut g, &anchors, &label_vars, pairing)?;
    Ok(g.scalar(loss))
}

/// `−log p_k − Σ_{j≠k} log(1 − p_j)` on sigmoid scores, with
/// probabilities clamped to `[1e-12, 1 − 1e-12]`.
pub fn cross_entropy_loss(g: &mut Graph<'_>, scores: Var, target: usize) -> Result<Var> {
    let k = g.shape(scores)[0];
    if target >= k {
        return Err(Error::InvalidArgument(format!("target {target} out of {k} classes")));
    }
    let mut onehot = vec![0.0; k];
    onehot[target] = 1.0;
    // t·log p + (1−t)·log(1−p)
    let log_p = g.ln_clamped(scores, PROB_EPS, 1.0 - PROB_EPS)?;
    let neg = g.scale(scores, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let log_q = g.ln_clamped(one_minus, PROB_EPS, 1.0 - PROB_EPS)?;
    let t = g.constant(onehot.clone());
    let not_t = g.constant(onehot.iter().map(|x| 1.0 - x).collect());
    let pos = g.mul(t, log_p)?;
    let negs = g.mul(not_t, log_q)?;
    let ll = g.add(pos, negs)?;
    let total = g.sum(ll)?;
    g.scale(total, -1.0)
}

/// [`cross_entropy_loss`] evaluated from logits as
/// `softplus(−z_k) + Σ_{j≠k} softplus(z_j)`, which avoids the cancellation in
/// `1 − σ(z)` for large logits. Each term is capped at `−ln PROB_EPS`, the
/// same bound the clamped form applies.
pub fn binary_cross_entropy_logits(g: &mut Graph<'_>, logits: Var, target: usize) -> Result<Var> {
    let k = g.shape(logits)[0];
    if target >= k {
        return Err(Error::InvalidArgument(format!("target {target} out of {k} classes")));
    }
    let signs: Vec<f64> = (0..k).map(|j| if j == target { -1.0 } else { 1.0 }).collect();
    let s = g.constant(signs);
    let signed = g.mul(s, logits)?;
    let terms = g.softplus_capped(signed, -PROB_EPS.ln())?;
    g.sum(terms)
}

/// Categorical cross-entropy of `softmax(logits)` against `target`.
pub fn softmax_cross_entropy(g: &mut Graph<'_>, logits: Var, target: usize) -> Result<Var> {
    let k = g.shape(logits)[0];
    if target >= k {
        return Err(Error::InvalidArgument(format!("target {target} out of {k} classes")));
    }
    let p = g.softmax(logits)?;
    let pk = g.slice(p, target, 1)?;
    let l = g.ln_clamped(pk, PROB_EPS, 1.0)?;
    g.scale(l, -1.0)
}

/// Classification loss for one clip from its classifier logits.
pub fn classification_loss(g: &mut Graph<'_>, logits: Var, target: usize, mode: CeMode) -> Result<Var> {
    match mode {
        CeMode::SummedBinary => binary_cross_entropy_logits(g, logits, target),
        CeMode::Softmax => softmax_cross_entropy(g, logits, target),
    }
}
