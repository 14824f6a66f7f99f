use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classes::{assign_label_vectors, ClassSpec, RemapTable};
use super::sequence::{pad_or_clip, FeatureSequence};
use super::table::EmbeddingTable;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"A2VF";
const FEATURE_HEADER_LEN: usize = 16;

/// Writes one clip as an `A2VF` feature file (values stored as f32).
pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * seq.data().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in seq.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads an `A2VF` file into `(rows, cols, values)`.
pub fn read_features(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < FEATURE_HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("not an A2VF feature file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols, reserved) = (word(4), word(8), word(12));
    if reserved != 0 {
        return Err(bad(format!("reserved header field is {reserved}, expected 0")));
    }
    let expected = FEATURE_HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{rows}x{cols} features need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values = bytes[FEATURE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((rows, cols, values))
}

/// One manifest line. `verb`/`noun` override the name-derived split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub class_name: String,
    pub feature_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun: Option<String>,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no clips", path.display())));
    }
    Ok(out)
}

/// Clips plus the classes they index into (`clips[k].class_id` is a
/// position in `classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clips: Vec<FeatureSequence>,
    pub classes: Vec<ClassSpec>,
}

impl Dataset {
    pub fn new(clips: Vec<FeatureSequence>, classes: Vec<ClassSpec>) -> Result<Self> {
        for (i, c) in classes.iter().enumerate() {
            if c.class_id != i {
                return Err(Error::Data(format!(
                    "class {:?} has id {} at position {i}",
                    c.raw_name, c.class_id
                )));
            }
        }
        if let Some(clip) = clips.iter().find(|c| c.class_id >= classes.len()) {
            return Err(Error::Data(format!(
                "clip {} refers to class {} of {}",
                clip.clip_id,
                clip.class_id,
                classes.len()
            )));
        }
        Ok(Self { clips, classes })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.raw_name.clone()).collect()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.raw_name == name)
    }

    pub fn clips_of(&self, class_id: usize) -> impl Iterator<Item = &FeatureSequence> {
        self.clips.iter().filter(move |c| c.class_id == class_id)
    }

    /// Label vectors in class order; every class must have one.
    pub fn label_vectors(&self) -> Result<Vec<Vec<f64>>> {
        self.classes.iter().map(|c| c.label().map(<[f64]>::to_vec)).collect()
    }

    pub fn assign_labels(&mut self, table: &EmbeddingTable) -> Result<()> {
        assign_label_vectors(&mut self.classes, table)
    }

    pub fn pad_or_clip(&mut self, target_len: usize) {
        for c in &mut self.clips {
            *c = pad_or_clip(c, target_len);
        }
    }

    /// The named classes and their clips, renumbered in the order given.
    pub fn restrict(&self, names: &[String]) -> Result<Self> {
        let mut remap = BTreeMap::new();
        let mut classes = Vec::with_capacity(names.len());
        for (new_id, name) in names.iter().enumerate() {
            let old = self
                .class_id(name)
                .ok_or_else(|| Error::Data(format!("class {name:?} is not in the dataset")))?;
            if remap.insert(old, new_id).is_some() {
                return Err(Error::Data(format!("class {name:?} listed twice")));
            }
            let mut spec = self.classes[old].clone();
            spec.class_id = new_id;
            classes.push(spec);
        }
        let clips = self
            .clips
            .iter()
            .filter_map(|c| {
                remap.get(&c.class_id).map(|&id| {
                    let mut c = c.clone();
                    c.class_id = id;
                    c
                })
            })
            .collect();
        Self::new(clips, classes)
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every clip listed in a manifest. Class ids follow the sorted
/// class names; relative feature paths resolve against the manifest's
/// directory.
pub fn load_dataset(manifest: &Path, remap: &RemapTable) -> Result<Dataset> {
    let entries = load_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let names: Vec<String> = entries
        .iter()
        .map(|e| e.class_name.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut classes: Vec<ClassSpec> = names
        .iter()
        .enumerate()
        .map(|(i, n)| ClassSpec::new(i, n, remap))
        .collect();
    let mut overridden: BTreeMap<usize, (Option<String>, Option<String>)> = BTreeMap::new();
    let mut clips = Vec::with_capacity(entries.len());
    for e in &entries {
        let id = names.binary_search(&e.class_name).expect("name collected above");
        if e.verb.is_some() || e.noun.is_some() {
            let pair = (e.verb.clone(), e.noun.clone());
            match overridden.get(&id) {
                Some(prev) if *prev != pair => {
                    return Err(Error::Data(format!(
                        "class {:?} has conflicting verb/noun overrides",
                        e.class_name
                    )))
                }
                _ => {
                    overridden.insert(id, pair);
                }
            }
        }
        let (rows, cols, values) = read_features(&resolve(base, &e.feature_path))?;
        clips.push(FeatureSequence::new(e.clip_id.clone(), id, rows, cols, values)?);
    }
    for (id, (verb, noun)) in overridden {
        if verb.is_some() {
            classes[id].verb = verb;
        }
        if noun.is_some() {
            classes[id].noun = noun;
        }
    }
    if let Some(c) = clips.iter().find(|c| c.dim() != clips[0].dim()) {
        return Err(Error::Data(format!(
            "clip {} has feature width {}, expected {}",
            c.clip_id,
            c.dim(),
            clips[0].dim()
        )));
    }
    Dataset::new(clips, classes)
}

fn file_stem(clip_id: &str) -> String {
    clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `features/<clip>.a2vf` files and `manifest.jsonl` under `dir`,
/// returning the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir)?;
    let manifest = dir.join("manifest.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&manifest)?);
    for clip in &dataset.clips {
        let rel = format!("features/{}.a2vf", file_stem(&clip.clip_id));
        write_features(&dir.join(&rel), clip)?;
        let class = &dataset.classes[clip.class_id];
        let entry = ManifestEntry {
            clip_id: clip.clip_id.clone(),
            class_name: class.raw_name.clone(),
            feature_path: rel,
            verb: None,
            noun: None,
        };
        writeln!(out, "{}", serde_json::to_string(&entry)?)?;
    }
    out.flush()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: &str, class: usize, rows: usize) -> FeatureSequence {
        let data = (0..rows * 3).map(|i| i as f64 * 0.5).collect();
        FeatureSequence::new(id, class, rows, 3, data).unwrap()
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.a2vf");
        let c = clip("c", 0, 4);
        write_features(&p, &c).unwrap();
        let (r, d, v) = read_features(&p).unwrap();
        assert_eq!((r, d), (4, 3));
        assert_eq!(v, c.data());
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 48);
    }

    #[test]
    fn truncated_feature_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.a2vf");
        write_features(&p, &clip("c", 0, 4)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(read_features(&p).is_err());
        std::fs::write(&p, b"XXXX\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_features(&p).is_err());
    }

    #[test]
    fn manifest_round_trip_and_class_order() {
        let dir = tempfile::tempdir().unwrap();
        let classes = vec![
            ClassSpec::new(0, "ride horse", &RemapTable::default()),
            ClassSpec::new(1, "brush hair", &RemapTable::default()),
        ];
        let ds = Dataset::new(vec![clip("a/1", 0, 2), clip("b/1", 1, 3), clip("a/2", 0, 2)], classes).unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&manifest, &RemapTable::default()).unwrap();
        // Sorted names: "brush hair" gets id 0.
        assert_eq!(back.class_names(), vec!["brush hair", "ride horse"]);
        assert_eq!(back.clips.len(), 3);
        assert_eq!(back.clips[0].clip_id, "a/1");
        assert_eq!(back.clips[0].class_id, 1);
        assert_eq!(back.clips[1].len(), 3);
        assert_eq!(back.classes[1].verb.as_deref(), Some("ride"));
    }

    #[test]
    fn manifest_overrides_verb_and_noun() {
        let dir = tempfile::tempdir().unwrap();
        write_features(&dir.path().join("x.a2vf"), &clip("x", 0, 2)).unwrap();
        let m = dir.path().join("m.jsonl");
        std::fs::write(
            &m,
            r#"{"clip_id":"x","class_name":"push ups","feature_path":"x.a2vf","verb":"push","noun":"up"}"#,
        )
        .unwrap();
        let ds = load_dataset(&m, &RemapTable::default()).unwrap();
        assert_eq!(ds.classes[0].noun.as_deref(), Some("up"));
    }

    #[test]
    fn bad_manifest_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        std::fs::write(&m, "\n{not json}\n").unwrap();
        assert!(matches!(load_manifest(&m), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn restrict_renumbers() {
        let classes = vec![
            ClassSpec::new(0, "a x", &RemapTable::default()),
            ClassSpec::new(1, "b y", &RemapTable::default()),
            ClassSpec::new(2, "c z", &RemapTable::default()),
        ];
        let ds = Dataset::new(vec![clip("1", 0, 1), clip("2", 1, 1), clip("3", 2, 1)], classes).unwrap();
        let sub = ds.restrict(&["c z".into(), "a x".into()]).unwrap();
        assert_eq!(sub.class_names(), vec!["c z", "a x"]);
        let ids: Vec<(String, usize)> = sub.clips.iter().map(|c| (c.clip_id.clone(), c.class_id)).collect();
        assert_eq!(ids, vec![("1".into(), 1), ("3".into(), 0)]);
        assert!(ds.restrict(&["nope".into()]).is_err());
    }
}
