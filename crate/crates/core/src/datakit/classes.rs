use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::table::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ndcore::l2_normalize;

/// Splits a class name into word tokens on whitespace and underscores.
pub fn tokenize(name: &str) -> Vec<String> {
    name.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// User-supplied renames from raw class names to in-vocabulary tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RemapTable {
    entries: BTreeMap<String, Vec<String>>,
}

impl RemapTable {
    pub fn insert(&mut self, raw: impl Into<String>, tokens: Vec<String>) {
        self.entries.insert(raw.into(), tokens);
    }

    pub fn get(&self, raw: &str) -> Option<&[String]> {
        self.entries.get(raw).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tokens for a raw class name: the remap entry if one exists,
    /// otherwise the name's own tokens.
    pub fn apply(&self, raw: &str) -> Vec<String> {
        match self.get(raw) {
            Some(t) => t.to_vec(),
            None => tokenize(raw),
        }
    }

    /// `raw_name<TAB>replacement tokens` per line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut table = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (raw, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected raw_name<TAB>tokens".into(),
            })?;
            let tokens: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message: format!("no replacement tokens for {raw:?}"),
                });
            }
            table.insert(raw.trim(), tokens);
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(raw, toks)| format!("{raw}\t{}\n", toks.join(" ")))
            .collect()
    }
}

pub fn load_remap(path: &Path) -> Result<RemapTable> {
    RemapTable::parse(&std::fs::read_to_string(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: usize,
    pub raw_name: String,
    pub remapped_tokens: Vec<String>,
    /// Verb and noun used by the analogy tests; `None` when the name has
    /// no noun part.
    pub verb: Option<String>,
    pub noun: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_vector: Option<Vec<f64>>,
}

impl ClassSpec {
    /// Builds a class from its raw name. The verb is the first word of the
    /// raw name and the noun the remaining words.
    pub fn new(class_id: usize, raw_name: &str, remap: &RemapTable) -> Self {
        let words = tokenize(raw_name);
        let verb = words.first().cloned();
        let noun = (words.len() > 1).then(|| words[1..].join(" "));
        Self {
            class_id,
            raw_name: raw_name.to_string(),
            remapped_tokens: remap.apply(raw_name),
            verb,
            noun,
            label_vector: None,
        }
    }

    pub fn label(&self) -> Result<&[f64]> {
        self.label_vector
            .as_deref()
            .ok_or_else(|| Error::Data(format!("class {:?} has no label vector", self.raw_name)))
    }
}

/// Mean of the class's remapped token vectors.
pub fn class_label_vector(spec: &ClassSpec, table: &EmbeddingTable) -> Result<Vec<f64>> {
    if spec.remapped_tokens.is_empty() {
        return Err(Error::Data(format!("class {:?} has no tokens", spec.raw_name)));
    }
    if let Some(missing) = spec.remapped_tokens.iter().find(|t| !table.contains(t)) {
        return Err(Error::Data(format!(
            "token {missing:?} of class {:?} is not in the word table",
            spec.raw_name
        )));
    }
    table.mean_of(&spec.remapped_tokens)
}

/// Fills `label_vector` on every class.
pub fn assign_label_vectors(classes: &mut [ClassSpec], table: &EmbeddingTable) -> Result<()> {
    for c in classes.iter_mut() {
        c.label_vector = Some(class_label_vector(c, table)?);
    }
    Ok(())
}

/// Noun vector for the analogy tests: the mean of the noun's words.
pub fn noun_vector(noun: &str, table: &EmbeddingTable) -> Result<Vec<f64>> {
    let words = tokenize(noun);
    if let Some(missing) = words.iter().find(|w| !table.contains(w)) {
        return Err(Error::Data(format!("noun word {missing:?} is not in the word table")));
    }
    table.mean_of(&words)
}

/// Arithmetic mean of a class's clip embeddings, L2-normalized.
pub fn class_mean_embedding(embeddings: &[&[f64]]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Data("class has no embeddings to average".into()))?;
    let mut mean = vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != mean.len() {
            return Err(Error::Data("embeddings of differing widths".into()));
        }
        for (m, x) in mean.iter_mut().zip(e.iter()) {
            *m += x;
        }
    }
    let n = embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    l2_normalize(&mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("walk", vec![1.0, 0.0]).unwrap();
        t.insert("weightlift", vec![0.0, 1.0]).unwrap();
        t.insert("play", vec![1.0, 2.0]).unwrap();
        t.insert("piano", vec![3.0, -2.0]).unwrap();
        t
    }

    fn remap() -> RemapTable {
        RemapTable::parse("walking\twalk\nclean and jerk\tweightlift\n", Path::new("mem")).unwrap()
    }

    #[test]
    fn remapped_single_token() {
        let c = ClassSpec::new(0, "walking", &remap());
        assert_eq!(class_label_vector(&c, &table()).unwrap(), vec![1.0, 0.0]);
        let c = ClassSpec::new(1, "clean and jerk", &remap());
        assert_eq!(c.remapped_tokens, vec!["weightlift"]);
        assert_eq!(class_label_vector(&c, &table()).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn multi_word_name_averages() {
        let c = ClassSpec::new(2, "play_piano", &RemapTable::default());
        assert_eq!(c.verb.as_deref(), Some("play"));
        assert_eq!(c.noun.as_deref(), Some("piano"));
        assert_eq!(class_label_vector(&c, &table()).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn missing_token_names_class() {
        let c = ClassSpec::new(3, "ride horse", &RemapTable::default());
        let err = class_label_vector(&c, &table()).unwrap_err().to_string();
        assert!(err.contains("ride") && err.contains("ride horse"), "{err}");
    }

    #[test]
    fn class_mean_examples() {
        assert_eq!(class_mean_embedding(&[&[3.0, 4.0]]).unwrap(), vec![0.6, 0.8]);
        assert!(class_mean_embedding(&[&[1.0, -2.0], &[-1.0, 2.0]]).is_err());
        assert!(class_mean_embedding(&[]).is_err());
    }

    #[test]
    fn class_mean_matches_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let vs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let got = class_mean_embedding(&refs).unwrap();
        let mut m = [0.0; 5];
        for v in &vs {
            for k in 0..5 {
                m[k] += v[k] / 10.0;
            }
        }
        let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in 0..5 {
            assert!((got[k] - m[k] / n).abs() < 1e-12);
        }
    }
}
