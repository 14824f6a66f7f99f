use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Disjoint train/test partition of class names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub fraction: f64,
}

impl SplitSpec {
    /// Classes present on both sides.
    pub fn overlap(&self) -> Vec<String> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        self.test.iter().filter(|c| train.contains(c)).cloned().collect()
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let overlap = self.overlap();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(Error::SplitLeakage(overlap))
        }
    }

    /// `"90_10"`-style label of the split.
    pub fn label(&self) -> String {
        let test = (self.fraction * 100.0).round() as u32;
        format!("{}_{}", 100 - test, test)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.check_disjoint()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Number of held-out classes: `max(1, floor(K·fraction))`, leaving at
/// least one training class.
pub fn test_count(num_classes: usize, fraction: f64) -> usize {
    let raw = (num_classes as f64 * fraction + 1e-9).floor() as usize;
    raw.max(1).min(num_classes - 1)
}

/// Parses `"90_10"`, `"80/20"` or a bare fraction like `"0.1"` into the
/// held-out fraction.
pub fn parse_split_label(s: &str) -> Result<f64> {
    let bad = || Error::InvalidArgument(format!("unrecognized split {s:?}"));
    if let Some((a, b)) = s.split_once(['_', '/', ':']) {
        let a: f64 = a.parse().map_err(|_| bad())?;
        let b: f64 = b.parse().map_err(|_| bad())?;
        if a <= 0.0 || b <= 0.0 {
            return Err(bad());
        }
        return Ok(b / (a + b));
    }
    let f: f64 = s.parse().map_err(|_| bad())?;
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(bad())
    }
}

/// Uniformly random class partition, reproducible per seed. Both sides keep
/// the input order of `classes`.
pub fn make_splits(classes: &[String], test_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("splitting needs at least 2 classes".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n_test = test_count(classes.len(), test_fraction);
    let mut idx: Vec<usize> = (0..classes.len()).collect();
    idx.shuffle(&mut seed::stream(seed, "splits"));
    let held: BTreeSet<usize> = idx[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, c) in classes.iter().enumerate() {
        if held.contains(&i) {
            test.push(c.clone());
        } else {
            train.push(c.clone());
        }
    }
    Ok(SplitSpec {
        train,
        test,
        seed,
        fraction: test_fraction,
    })
}
