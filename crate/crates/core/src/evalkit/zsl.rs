use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::{Dataset, SplitSpec};
use crate::encoder::Embedder;
use crate::error::{Error, Result};
use crate::ndcore::{cosine, l2_normalize};

/// Nearest label by cosine similarity; ties go to the lowest index.
pub fn zsl_classify(embedding: &[f64], candidates: &[Vec<f64>]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("zero-shot classification needs a candidate".into()));
    }
    let e = l2_normalize(embedding)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (k, c) in candidates.iter().enumerate() {
        let s = cosine(&e, c)?;
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

/// Fraction of `predictions` equal to `truth`.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / predictions.len() as f64
}

/// Per-clip predictions plus overall and per-class accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZslOutcome {
    pub accuracy: f64,
    /// `(class name, accuracy, clip count)` in class order.
    pub per_class: Vec<(String, f64, usize)>,
    pub predictions: Vec<usize>,
}

/// Checks that `test` holds exactly held-out classes of `split`.
pub fn check_split(test: &Dataset, split: &SplitSpec) -> Result<()> {
    split.check_disjoint()?;
    let train: BTreeSet<&String> = split.train.iter().collect();
    let leaked: Vec<String> = test
        .class_names()
        .into_iter()
        .filter(|n| train.contains(n))
        .collect();
    if !leaked.is_empty() {
        return Err(Error::SplitLeakage(leaked));
    }
    let held: BTreeSet<&String> = split.test.iter().collect();
    if let Some(n) = test.class_names().iter().find(|n| !held.contains(n)) {
        return Err(Error::Data(format!("evaluation class {n:?} is not in the split's test list")));
    }
    Ok(())
}

/// Scores precomputed embeddings against the label vectors of `test`.
pub fn zsl_from_embeddings(embeddings: &[Vec<f64>], test: &Dataset) -> Result<ZslOutcome> {
    let candidates = test.label_vectors()?;
    let predictions = embeddings
        .par_iter()
        .map(|e| zsl_classify(e, &candidates))
        .collect::<Result<Vec<usize>>>()?;
    let truth: Vec<usize> = test.clips.iter().map(|c| c.class_id).collect();
    let per_class = test
        .classes
        .iter()
        .map(|c| {
            let idx: Vec<usize> = (0..truth.len()).filter(|i| truth[*i] == c.class_id).collect();
            let hits = idx.iter().filter(|i| predictions[**i] == c.class_id).count();
            let acc = if idx.is_empty() { 0.0 } else { hits as f64 / idx.len() as f64 };
            (c.raw_name.clone(), acc, idx.len())
        })
        .collect();
    Ok(ZslOutcome {
        accuracy: accuracy(&predictions, &truth),
        per_class,
        predictions,
    })
}

/// Embeds every clip of `test` and classifies it among the test classes
/// only. Fails on any train/test class overlap.
pub fn zsl_evaluate<E: Embedder + Sync + ?Sized>(embedder: &E, test: &Dataset, split: &SplitSpec) -> Result<ZslOutcome> {
    check_split(test, split)?;
    let embeddings = test
        .clips
        .par_iter()
        .map(|c| embedder.embed(c))
        .collect::<Result<Vec<_>>>()?;
    zsl_from_embeddings(&embeddings, test)
}

pub fn zsl_accuracy<E: Embedder + Sync + ?Sized>(embedder: &E, test: &Dataset, split: &SplitSpec) -> Result<f64> {
    Ok(zsl_evaluate(embedder, test, split)?.accuracy)
}
