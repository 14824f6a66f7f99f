use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::classes::{ClassSpec, RemapTable};
use super::io::{write_dataset, Dataset};
use super::sequence::FeatureSequence;
use super::splits::SplitSpec;
use super::table::{save_word_vectors, EmbeddingTable};
use super::taxonomy::Taxonomy;
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of the planted verb × noun dataset. Every verb is combined
/// with every noun of a shared pool of `num_nouns_per_verb` nouns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_verbs: usize,
    pub num_nouns_per_verb: usize,
    pub clips_per_class: usize,
    pub seq_len: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub noise_scale: f64,
    /// Spectral radius of the per-verb transition matrices.
    pub decay: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The reference desk-scale set: 5 verbs × 5 nouns, 40 clips per class.
    pub fn s0() -> Self {
        Self {
            num_verbs: 5,
            num_nouns_per_verb: 5,
            clips_per_class: 40,
            seq_len: 24,
            feature_dim: 32,
            embed_dim: 16,
            noise_scale: 0.25,
            decay: 0.9,
            seed: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_verbs * self.num_nouns_per_verb
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("num_verbs", self.num_verbs),
            ("num_nouns_per_verb", self.num_nouns_per_verb),
            ("clips_per_class", self.clips_per_class),
            ("seq_len", self.seq_len),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
        ] {
            if val == 0 {
                v.push(format!("{name} must be >= 1"));
            }
        }
        if self.num_verbs + self.num_nouns_per_verb > self.embed_dim {
            v.push(format!(
                "num_verbs + num_nouns_per_verb ({}) must not exceed embed_dim ({}) so word vectors are orthonormal",
                self.num_verbs + self.num_nouns_per_verb,
                self.embed_dim
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            v.push("noise_scale must be finite and >= 0".into());
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            v.push("decay must be finite and >= 0".into());
        }
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

pub fn verb_token(i: usize) -> String {
    format!("verb{i}")
}

pub fn noun_token(j: usize) -> String {
    format!("noun{j}")
}

pub fn class_name(i: usize, j: usize) -> String {
    format!("{} {}", verb_token(i), noun_token(j))
}

pub const TAXONOMY_ROOT: &str = "action";

/// Generated dataset plus every side file the pipeline consumes.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub dataset: Dataset,
    pub table: EmbeddingTable,
    pub remap: RemapTable,
    pub taxonomy: Taxonomy,
}

impl SyntheticData {
    /// Writes `manifest.jsonl`, `features/`, `words.txt`, `remap.tsv`,
    /// `taxonomy.tsv` and `synth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_dataset(&self.dataset, dir)?;
        save_word_vectors(&self.table, &dir.join("words.txt"))?;
        std::fs::write(dir.join("remap.tsv"), self.remap.to_text())?;
        std::fs::write(dir.join("taxonomy.tsv"), self.taxonomy.to_text())?;
        std::fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&self.spec)? + "\n")?;
        Ok(())
    }
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `n` orthonormal vectors of length `dim` (`n ≤ dim`).
fn orthonormal_rows<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let q = gaussian_matrix(dim, n, rng).qr().q();
    (0..n).map(|k| q.column(k).iter().copied().collect()).collect()
}

/// `rows × cols` matrix with orthonormal columns when `rows ≥ cols`,
/// orthonormal rows otherwise.
fn semi_orthogonal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    if rows >= cols {
        gaussian_matrix(rows, cols, rng).qr().q()
    } else {
        gaussian_matrix(cols, rows, rng).qr().q().transpose()
    }
}

/// Builds the planted dataset. Verb vectors `u_i` and noun vectors `m_j`
/// are mutually orthonormal; the word table holds `w(verb_i) = u_i/√2`,
/// `w(noun_j) = m_j/√2` and the composed token `verb_i_noun_j` whose
/// vector is the class label `(u_i + m_j)/√2 = normalize(u_i + m_j)`. The
/// remap file points each class at its composed token, so
/// `label(i, n2) = label(i, n1) − w(n1) + w(n2)` holds exactly.
///
/// Clip features follow `z_0 = √D·P·label`, `z_{t+1} = ρ·Q_verb·z_t + σ·ε`,
/// with `P` a fixed semi-orthogonal `D × e` map and `Q_verb` a random
/// orthogonal matrix per verb.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (nv, nn, e, d) = (spec.num_verbs, spec.num_nouns_per_verb, spec.embed_dim, spec.feature_dim);
    let mut rng = seed::stream(spec.seed, "synth/words");
    let basis = orthonormal_rows(nv + nn, e, &mut rng);
    let (verbs, nouns) = basis.split_at(nv);
    let half = std::f64::consts::FRAC_1_SQRT_2;

    let mut table = EmbeddingTable::new(e);
    for (i, u) in verbs.iter().enumerate() {
        table.insert(verb_token(i), u.iter().map(|x| x * half).collect())?;
    }
    for (j, m) in nouns.iter().enumerate() {
        table.insert(noun_token(j), m.iter().map(|x| x * half).collect())?;
    }
    let mut remap = RemapTable::default();
    let mut classes = Vec::with_capacity(nv * nn);
    let mut edges = Vec::new();
    for i in 0..nv {
        edges.push((TAXONOMY_ROOT.to_string(), verb_token(i)));
        for j in 0..nn {
            let name = class_name(i, j);
            let composed = format!("{}_{}", verb_token(i), noun_token(j));
            let label: Vec<f64> = verbs[i].iter().zip(&nouns[j]).map(|(u, m)| (u + m) * half).collect();
            table.insert(composed.clone(), label.clone())?;
            remap.insert(name.clone(), vec![composed]);
            let mut c = ClassSpec::new(i * nn + j, &name, &remap);
            c.label_vector = Some(label);
            classes.push(c);
            edges.push((verb_token(i), name));
        }
    }
    let taxonomy = Taxonomy::from_edges(edges)?;

    let mut rng = seed::stream(spec.seed, "synth/dynamics");
    let projection = semi_orthogonal(d, e, &mut rng) * (d as f64).sqrt();
    let transitions: Vec<DMatrix<f64>> = (0..nv)
        .map(|_| gaussian_matrix(d, d, &mut rng).qr().q() * spec.decay)
        .collect();

    let mut clips = Vec::with_capacity(spec.num_classes() * spec.clips_per_class);
    for c in &classes {
        let verb = c.class_id / nn;
        let label = nalgebra::DVector::from_column_slice(c.label_vector.as_deref().expect("set above"));
        let z0 = &projection * label;
        for k in 0..spec.clips_per_class {
            let mut rng = seed::stream(spec.seed, &format!("synth/clip/{}/{k}", c.class_id));
            let mut z = z0.clone();
            let mut data = Vec::with_capacity(spec.seq_len * d);
            for t in 0..spec.seq_len {
                if t > 0 {
                    z = &transitions[verb] * &z;
                    for x in z.iter_mut() {
                        *x += spec.noise_scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                data.extend(z.iter());
            }
            let id = format!("{}_{}_{k:03}", verb_token(verb), noun_token(c.class_id % nn));
            clips.push(FeatureSequence::new(id, c.class_id, spec.seq_len, d, data)?);
        }
    }
    Ok(SyntheticData {
        spec: spec.clone(),
        dataset: Dataset::new(clips, classes)?,
        table,
        remap,
        taxonomy,
    })
}

/// Holds out exactly one noun per verb, along a seed-rotated diagonal so
/// that every held-out noun differs.
pub fn one_per_verb_split(spec: &SyntheticSpec, seed: u64) -> SplitSpec {
    let nn = spec.num_nouns_per_verb;
    let offset = (seed::derive_seed(seed, "synth/holdout") % nn as u64) as usize;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in 0..spec.num_verbs {
        let held = (i + offset) % nn;
        for j in 0..nn {
            if j == held {
                test.push(class_name(i, j));
            } else {
                train.push(class_name(i, j));
            }
        }
    }
    SplitSpec {
        train,
        test,
        seed,
        fraction: 1.0 / nn as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::classes::{class_label_vector, noun_vector};
    use crate::ndcore::{l2_normalize, norm};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            clips_per_class: 3,
            ..SyntheticSpec::s0()
        }
    }

    #[test]
    fn s0_counts() {
        let data = generate_synthetic(&SyntheticSpec::s0()).unwrap();
        assert_eq!(data.dataset.clips.len(), 1000);
        assert_eq!(data.dataset.num_classes(), 25);
        assert!(data.dataset.clips.iter().all(|c| c.len() == 24 && c.dim() == 32));
    }

    #[test]
    fn noise_free_clips_coincide() {
        let spec = SyntheticSpec {
            noise_scale: 0.0,
            ..small()
        };
        let data = generate_synthetic(&spec).unwrap();
        let clips: Vec<_> = data.dataset.clips_of(7).collect();
        assert_eq!(clips[0].data(), clips[1].data());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_synthetic(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.dataset.clips[0].data(), c.dataset.clips[0].data());
    }

    #[test]
    fn arithmetic_identity_is_exact_on_labels() {
        let data = generate_synthetic(&small()).unwrap();
        let nn = data.spec.num_nouns_per_verb;
        let classes = &data.dataset.classes;
        for i in 0..data.spec.num_verbs {
            for n1 in 0..nn {
                for n2 in 0..nn {
                    if n1 == n2 {
                        continue;
                    }
                    let src = classes[i * nn + n1].label().unwrap();
                    let tgt = classes[i * nn + n2].label().unwrap();
                    let w1 = noun_vector(&noun_token(n1), &data.table).unwrap();
                    let w2 = noun_vector(&noun_token(n2), &data.table).unwrap();
                    let q: Vec<f64> = (0..src.len()).map(|k| src[k] - w1[k] + w2[k]).collect();
                    let q = l2_normalize(&q).unwrap();
                    for k in 0..q.len() {
                        assert!((q[k] - tgt[k]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn labels_come_from_remapped_table_and_are_unit() {
        let data = generate_synthetic(&small()).unwrap();
        for c in &data.dataset.classes {
            let from_table = class_label_vector(c, &data.table).unwrap();
            assert_eq!(from_table, c.label().unwrap());
            assert!((norm(&from_table) - 1.0).abs() < 1e-12);
            assert!(c.verb.is_some() && c.noun.is_some());
        }
    }

    #[test]
    fn taxonomy_shape() {
        let data = generate_synthetic(&small()).unwrap();
        assert_eq!(data.taxonomy.root(), TAXONOMY_ROOT);
        assert_eq!(data.taxonomy.depth(&class_name(2, 3)).unwrap(), 3);
        assert_eq!(data.taxonomy.depth(&verb_token(2)).unwrap(), 2);
    }

    #[test]
    fn too_many_words_for_dim() {
        let spec = SyntheticSpec {
            embed_dim: 8,
            ..small()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn holdout_is_one_distinct_noun_per_verb() {
        let spec = small();
        for seed in 0..5 {
            let s = one_per_verb_split(&spec, seed);
            assert_eq!(s.test.len(), 5);
            assert_eq!(s.train.len(), 20);
            assert!(s.overlap().is_empty());
            let nouns: std::collections::BTreeSet<&str> =
                s.test.iter().map(|n| n.split(' ').nth(1).unwrap()).collect();
            assert_eq!(nouns.len(), 5);
        }
    }

    #[test]
    fn written_bundle_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&SyntheticSpec {
            num_verbs: 2,
            num_nouns_per_verb: 2,
            clips_per_class: 2,
            ..small()
        })
        .unwrap();
        data.write(dir.path()).unwrap();
        let remap = super::super::classes::load_remap(&dir.path().join("remap.tsv")).unwrap();
        let mut ds = super::super::io::load_dataset(&dir.path().join("manifest.jsonl"), &remap).unwrap();
        let table = super::super::table::load_word_vectors(&dir.path().join("words.txt")).unwrap();
        ds.assign_labels(&table).unwrap();
        assert_eq!(ds.class_names(), data.dataset.class_names());
        assert_eq!(ds.label_vectors().unwrap(), data.dataset.label_vectors().unwrap());
        assert_eq!(ds.clips.len(), 8);
        let t = super::super::taxonomy::load_taxonomy(&dir.path().join("taxonomy.tsv")).unwrap();
        assert_eq!(t, data.taxonomy);
    }
}
