use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datakit::{class_mean_embedding, noun_vector, ClassSpec, EmbeddingTable};
use crate::error::{Error, Result};
use crate::ndcore::euclidean;

/// One analogy: `mean(source) − noun(noun_from) + noun(noun_to)` should land
/// nearest to `mean(target)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArithmeticCase {
    pub verb: String,
    pub noun_from: String,
    pub noun_to: String,
    pub source: usize,
    pub target: usize,
}

/// All ordered pairs of classes sharing a verb with different nouns.
/// Classes without a noun are skipped.
pub fn enumerate_arithmetic_cases(classes: &[ClassSpec]) -> Vec<ArithmeticCase> {
    let mut by_verb: BTreeMap<&str, Vec<&ClassSpec>> = BTreeMap::new();
    for c in classes {
        if let (Some(v), Some(_)) = (&c.verb, &c.noun) {
            by_verb.entry(v).or_default().push(c);
        }
    }
    let mut cases = Vec::new();
    for (verb, group) in by_verb {
        for a in &group {
            for b in &group {
                let (na, nb) = (a.noun.as_ref().unwrap(), b.noun.as_ref().unwrap());
                if na != nb {
                    cases.push(ArithmeticCase {
                        verb: verb.to_string(),
                        noun_from: na.clone(),
                        noun_to: nb.clone(),
                        source: a.class_id,
                        target: b.class_id,
                    });
                }
            }
        }
    }
    cases
}

/// Normalized per-class mean of `embeddings`, keyed by class id.
pub fn class_means(embeddings: &[Vec<f64>], class_ids: &[usize]) -> Result<BTreeMap<usize, Vec<f64>>> {
    if embeddings.len() != class_ids.len() {
        return Err(Error::InvalidArgument("one class id per embedding".into()));
    }
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for (e, c) in embeddings.iter().zip(class_ids) {
        groups.entry(*c).or_default().push(e);
    }
    groups
        .into_iter()
        .map(|(c, es)| Ok((c, class_mean_embedding(&es)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticOutcome {
    pub passes: usize,
    pub total: usize,
    pub precision: f64,
    /// `(case index, predicted class)` for every miss.
    pub misses: Vec<(usize, usize)>,
}

/// Runs every case with euclidean nearest neighbour over all entries of
/// `means`; ties go to the lowest class id.
pub fn run_arithmetic_tests(
    cases: &[ArithmeticCase],
    means: &BTreeMap<usize, Vec<f64>>,
    table: &EmbeddingTable,
) -> Result<ArithmeticOutcome> {
    if cases.is_empty() {
        return Err(Error::Data("no arithmetic cases (need a verb with two nouns)".into()));
    }
    let mut nouns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut misses = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        for n in [&case.noun_from, &case.noun_to] {
            if !nouns.contains_key(n.as_str()) {
                nouns.insert(n, noun_vector(n, table)?);
            }
        }
        let src = means
            .get(&case.source)
            .ok_or_else(|| Error::Data(format!("no class mean for class {}", case.source)))?;
        if !means.contains_key(&case.target) {
            return Err(Error::Data(format!("no class mean for class {}", case.target)));
        }
        let (from, to) = (&nouns[case.noun_from.as_str()], &nouns[case.noun_to.as_str()]);
        if from.len() != src.len() {
            return Err(Error::Data(format!(
                "embedding width {} differs from word vector width {}",
                src.len(),
                from.len()
            )));
        }
        let query: Vec<f64> = (0..src.len()).map(|k| src[k] - from[k] + to[k]).collect();
        let mut best = (usize::MAX, f64::INFINITY);
        for (c, m) in means {
            let d = euclidean(&query, m);
            if d < best.1 {
                best = (*c, d);
            }
        }
        if best.0 != case.target {
            misses.push((i, best.0));
        }
    }
    let total = cases.len();
    let passes = total - misses.len();
    Ok(ArithmeticOutcome {
        passes,
        total,
        precision: passes as f64 / total as f64,
        misses,
    })
}
