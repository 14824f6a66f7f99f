//! Adam training loop over the dual objective.
//!
//! Every random draw is keyed on `(seed, iteration)`: the epoch shuffle on
//! `shuffle/<epoch>`, the fallback batch on `resample/<iter>` and the
//! dropout of batch position `p` on `dropout/<iter>/<p>`. A run can
//! therefore be resumed from any iteration with identical results.

mod adam;
mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::datakit::{Dataset, FeatureSequence};
use crate::encoder::{encode, EncoderConfig, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::ndcore::{finite_difference_check, Graph, Tensor, Var};
use crate::objective::{
    classification_loss, dual_loss, lambda_schedule, mine_hard_negatives, pairwise_ranking_loss, CeMode,
    LossWeights, NegativeMode,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub shuffle: bool,
    pub negative_mode: NegativeMode,
    pub ce_mode: CeMode,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 1,
            seed: 0,
            loss_weights: LossWeights::default(),
            shuffle: true,
            negative_mode: NegativeMode::AllClasses,
            ce_mode: CeMode::SummedBinary,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            v.push(format!("learning_rate must be > 0, got {}", a.learning_rate));
        }
        for (name, b) in [("beta1", a.beta1), ("beta2", a.beta2)] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(a.eps > 0.0) {
            v.push(format!("adam_eps must be > 0, got {}", a.eps));
        }
        if self.batch_size < 2 {
            v.push(format!(
                "batch_size must be >= 2 (mining needs >= 2 classes per batch), got {}",
                self.batch_size
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                v.push(format!("clip_norm must be > 0, got {c}"));
            }
        }
        v.extend(self.loss_weights.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }
}

/// Losses of one iteration, measured before its parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: u64,
    pub epoch: u64,
    pub lambda: f64,
    pub l_pr: f64,
    pub l_ce: f64,
    pub l_dual: f64,
}

/// Loss values and summed parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub l_pr: f64,
    pub l_ce: f64,
    pub l_dual: f64,
    /// Per-tensor gradients in canonical parameter order.
    pub grads: Vec<Vec<f64>>,
}

/// Forward and backward pass of the dual loss over one batch.
///
/// Each clip is encoded in its own graph (in parallel). A second graph
/// takes the detached embeddings plus the classifier weights, mines
/// negatives and evaluates the loss; its gradient w.r.t. each embedding
/// seeds the backward pass of that clip's graph. Per-clip gradients are
/// summed in batch order, so the result does not depend on the number of
/// threads. `dropout` yields the dropout RNG for a batch position, or
/// `None` for an eval-mode pass.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    clips: &[&FeatureSequence],
    labels: &[Vec<f64>],
    lambda: f64,
    negative_mode: NegativeMode,
    ce_mode: CeMode,
    dropout: &(dyn Fn(usize) -> Option<rand_chacha::ChaCha8Rng> + Sync),
) -> Result<BatchOutcome> {
    let forward: Vec<(Graph<'_>, Vec<Var>, Var)> = clips
        .par_iter()
        .enumerate()
        .map(|(pos, clip)| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let out = match dropout(pos) {
                Some(mut rng) => encode(&mut g, clip, &bound, cfg, &mut Mode::Train(&mut rng))?,
                None => encode(&mut g, clip, &bound, cfg, &mut Mode::Eval)?,
            };
            Ok((g, bound.vars(), out))
        })
        .collect::<Result<_>>()?;
    let embeddings: Vec<Vec<f64>> = forward.iter().map(|(g, _, out)| g.value(*out).to_vec()).collect();
    let classes: Vec<usize> = clips.iter().map(|c| c.class_id).collect();

    let mut lg = Graph::new();
    let anchors = embeddings
        .iter()
        .map(|e| lg.owned_leaf(vec![e.len()], e.clone(), true))
        .collect::<Result<Vec<Var>>>()?;
    let cls_w = lg.leaf(&params.classifier.weight);
    let cls_b = lg.leaf(&params.classifier.bias);
    let pairing = mine_hard_negatives(&embeddings, &classes, labels, negative_mode)?;
    let present: BTreeSet<usize> = pairing
        .records
        .iter()
        .flat_map(|r| [r.class, r.negative_label])
        .collect();
    let label_vars: BTreeMap<usize, Var> = present
        .into_iter()
        .map(|c| (c, lg.constant_ref(&labels[c])))
        .collect();
    let l_pr = pairwise_ranking_loss(&mut lg, &anchors, &label_vars, &pairing)?;
    let mut ce_terms = Vec::with_capacity(anchors.len());
    for (a, c) in anchors.iter().zip(&classes) {
        let z = lg.matmul(cls_w, *a)?;
        let logits = lg.add(z, cls_b)?;
        ce_terms.push(classification_loss(&mut lg, logits, *c, ce_mode)?);
    }
    let ce_all = lg.concat(&ce_terms)?;
    let l_ce = lg.sum(ce_all)?;
    let total = dual_loss(&mut lg, l_pr, l_ce, lambda)?;
    let (l_pr_v, l_ce_v, l_dual_v) = (lg.scalar(l_pr), lg.scalar(l_ce), lg.scalar(total));
    if !l_dual_v.is_finite() {
        return Err(Error::NonFinite(format!("dual loss ({l_dual_v})")));
    }
    let loss_grads = lg.backward(total)?;

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut grads: Vec<Vec<f64>> = sizes.iter().map(|n| vec![0.0; *n]).collect();
    let chunk = rayon::current_num_threads().max(1);
    for (base, part) in forward.chunks(chunk).enumerate() {
        let partial: Vec<Vec<Vec<f64>>> = part
            .par_iter()
            .enumerate()
            .map(|(k, (g, vars, out))| {
                let pos = base * chunk + k;
                let seed = loss_grads.wrt(anchors[pos], embeddings[pos].len());
                let gr = g.backward_from(*out, &seed)?;
                Ok(vars.iter().zip(&sizes).map(|(v, n)| gr.wrt(*v, *n)).collect())
            })
            .collect::<Result<_>>()?;
        for clip_grads in partial {
            for (acc, g) in grads.iter_mut().zip(clip_grads) {
                acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
            }
        }
    }
    let n = grads.len();
    for (slot, var) in [(n - 2, cls_w), (n - 1, cls_b)] {
        let g = loss_grads.wrt(var, sizes[slot]);
        grads[slot].iter_mut().zip(g).for_each(|(a, x)| *a += x);
    }
    Ok(BatchOutcome {
        l_pr: l_pr_v,
        l_ce: l_ce_v,
        l_dual: l_dual_v,
        grads,
    })
}

/// Rescales `grads` in place so that their joint L2 norm is at most `cap`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], cap: f64) -> f64 {
    let norm = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if norm > cap {
        let s = cap / norm;
        grads.iter_mut().flatten().for_each(|x| *x *= s);
    }
    norm
}

/// Parameter point for gradient checks: every weight drawn from
/// uniform(-1, 1). At the training initialization the embeddings are about
/// 0.01 long and some gradients are near 1e-8, so a step of 1e-4 is
/// dominated by curvature or roundoff; unit-scale weights keep every
/// coordinate well conditioned.
pub fn gradcheck_params(cfg: &EncoderConfig, seed: u64) -> EncoderParams {
    use rand::Rng;
    let mut rng = seed::stream(seed, "gradcheck");
    let mut params = EncoderParams::zeros(cfg);
    for t in params.tensors_mut() {
        for x in t.values_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    params
}

/// Largest relative error between [`batch_gradients`] and central
/// differences of the dual loss, over every parameter coordinate. Dropout
/// masks are fixed by `dropout_seed` so the loss is deterministic.
#[allow(clippy::too_many_arguments)]
pub fn dual_loss_gradient_check(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    clips: &[&FeatureSequence],
    labels: &[Vec<f64>],
    lambda: f64,
    negative_mode: NegativeMode,
    ce_mode: CeMode,
    dropout_seed: u64,
    eps: f64,
) -> Result<f64> {
    let dropout = |pos: usize| Some(seed::stream(dropout_seed, &format!("dropout/check/{pos}")));
    let eval = |p: &EncoderParams| batch_gradients(p, cfg, clips, labels, lambda, negative_mode, ce_mode, &dropout);
    let analytic = eval(params)?.grads;
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    finite_difference_check(&tensors, &analytic, eps, |perturbed| {
        let p = EncoderParams::from_values(cfg, perturbed.iter().map(|t| t.values().to_vec()).collect())?;
        Ok(eval(&p)?.l_dual)
    })
}

/// Resumable training state over one dataset.
pub struct Trainer<'d> {
    data: &'d Dataset,
    labels: Vec<Vec<f64>>,
    pub encoder_config: EncoderConfig,
    pub config: TrainConfig,
    pub params: EncoderParams,
    pub adam: AdamState,
    pub global_iter: u64,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl<'d> Trainer<'d> {
    /// Fresh run; parameters are drawn from the `init` stream of the seed.
    pub fn new(data: &'d Dataset, encoder_config: EncoderConfig, config: TrainConfig) -> Result<Self> {
        let params = EncoderParams::init(&encoder_config, &mut seed::stream(config.seed, "init"));
        let adam = AdamState::zeros_like(&params);
        Self::assemble(data, encoder_config, config, params, adam, 0)
    }

    pub fn resume(data: &'d Dataset, ckpt: Checkpoint) -> Result<Self> {
        Self::assemble(
            data,
            ckpt.encoder_config,
            ckpt.train_config,
            ckpt.params,
            ckpt.adam,
            ckpt.global_iter,
        )
    }

    fn assemble(
        data: &'d Dataset,
        encoder_config: EncoderConfig,
        config: TrainConfig,
        params: EncoderParams,
        adam: AdamState,
        global_iter: u64,
    ) -> Result<Self> {
        encoder_config.validate()?;
        config.validate()?;
        if data.clips.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if data.num_classes() < 2 {
            return Err(Error::Data("training needs at least 2 classes".into()));
        }
        if encoder_config.num_classes != data.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "encoder has {} classes, training set has {}",
                encoder_config.num_classes,
                data.num_classes()
            )));
        }
        let labels = data.label_vectors()?;
        if let Some(l) = labels.iter().find(|l| l.len() != encoder_config.embed_dim) {
            return Err(Error::InvalidArgument(format!(
                "label vectors have {} dims, embed_dim is {}",
                l.len(),
                encoder_config.embed_dim
            )));
        }
        Ok(Self {
            data,
            labels,
            encoder_config,
            config,
            params,
            adam,
            global_iter,
            epoch_order: None,
        })
    }

    pub fn iters_per_epoch(&self) -> u64 {
        self.data.clips.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_iters(&self) -> u64 {
        self.iters_per_epoch() * self.config.epochs as u64
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            encoder_config: self.encoder_config.clone(),
            train_config: self.config.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            global_iter: self.global_iter,
        }
    }

    fn distinct_classes(&self, batch: &[usize]) -> usize {
        batch
            .iter()
            .map(|i| self.data.clips[*i].class_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Clip indices of iteration `iter`: a slice of the epoch's shuffled
    /// order, redrawn once at random if it holds a single class.
    pub fn batch_for(&mut self, iter: u64) -> Result<Vec<usize>> {
        let n = self.data.clips.len();
        let ipe = self.iters_per_epoch();
        let (epoch, k) = (iter / ipe, (iter % ipe) as usize);
        if self.epoch_order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            if self.config.shuffle {
                order.shuffle(&mut seed::stream(self.config.seed, &format!("shuffle/{epoch}")));
            }
            self.epoch_order = Some((epoch, order));
        }
        let order = &self.epoch_order.as_ref().expect("set above").1;
        let b = self.config.batch_size;
        let batch = order[k * b..((k + 1) * b).min(n)].to_vec();
        if self.distinct_classes(&batch) >= 2 {
            return Ok(batch);
        }
        let mut rng = seed::stream(self.config.seed, &format!("resample/{iter}"));
        let batch = rand::seq::index::sample(&mut rng, n, b.min(n)).into_vec();
        if self.distinct_classes(&batch) >= 2 {
            Ok(batch)
        } else {
            Err(Error::Data(format!(
                "iteration {iter}: batch holds a single class even after resampling"
            )))
        }
    }

    /// One optimizer step at `global_iter`.
    pub fn step(&mut self) -> Result<IterLog> {
        let iter = self.global_iter;
        let ipe = self.iters_per_epoch();
        let lambda = lambda_schedule(iter, ipe, &self.config.loss_weights);
        let batch = self.batch_for(iter)?;
        let clips: Vec<&FeatureSequence> = batch.iter().map(|i| &self.data.clips[*i]).collect();
        let seed = self.config.seed;
        let dropout = move |pos: usize| Some(seed::stream(seed, &format!("dropout/{iter}/{pos}")));
        let mut out = batch_gradients(
            &self.params,
            &self.encoder_config,
            &clips,
            &self.labels,
            lambda,
            self.config.negative_mode,
            self.config.ce_mode,
            &dropout,
        )?;
        if let Some(cap) = self.config.clip_norm {
            clip_global_norm(&mut out.grads, cap);
        }
        adam_step(&mut self.params, &out.grads, &mut self.adam, &self.config.adam)?;
        self.global_iter += 1;
        Ok(IterLog {
            iter,
            epoch: iter / ipe,
            lambda,
            l_pr: out.l_pr,
            l_ce: out.l_ce,
            l_dual: out.l_dual,
        })
    }

    /// Steps until `global_iter` reaches `stop` (capped at the configured
    /// total), calling `on_iter` after each step.
    pub fn run_until(&mut self, stop: u64, mut on_iter: impl FnMut(&IterLog)) -> Result<Vec<IterLog>> {
        let stop = stop.min(self.total_iters());
        let mut log = Vec::new();
        while self.global_iter < stop {
            let entry = self.step()?;
            on_iter(&entry);
            log.push(entry);
        }
        Ok(log)
    }

    pub fn run(&mut self) -> Result<Vec<IterLog>> {
        self.run_until(self.total_iters(), |_| {})
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: Vec<IterLog>,
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(data: &Dataset, encoder_config: &EncoderConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(data, encoder_config.clone(), config.clone())?;
    let log = t.run()?;
    Ok(TrainOutcome { params: t.params, log })
}

/// Mean of `l_dual` (or another field) per epoch.
pub fn epoch_means(log: &[IterLog], field: impl Fn(&IterLog) -> f64) -> Vec<f64> {
    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for e in log {
        let s = sums.entry(e.epoch).or_default();
        s.0 += field(e);
        s.1 += 1;
    }
    sums.values().map(|(s, n)| s / *n as f64).collect()
}
