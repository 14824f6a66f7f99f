use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-shot result for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    /// For example `90_10`.
    pub label: String,
    pub fraction: f64,
    pub seed: u64,
    /// `hrnn`, `krr-linear`, ...
    pub method: String,
    pub num_train_classes: usize,
    pub num_test_classes: usize,
    pub accuracy: f64,
    pub per_class: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    /// For example `taxonomy_vs_embeddings`.
    pub name: String,
    pub rho: f64,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticSummary {
    pub precision: f64,
    pub passes: usize,
    pub comparisons: usize,
}

/// Deterministic evaluation results. Timestamps and host details live in
/// [`RunMeta`], written to a separate file so reruns give identical
/// reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default)]
    pub splits: Vec<SplitResult>,
    #[serde(default)]
    pub rank_correlations: Vec<RankCorrelation>,
    #[serde(default)]
    pub arithmetic: Option<ArithmeticSummary>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub unix_time: u64,
    pub threads: usize,
    pub command: String,
}

impl RunMeta {
    pub fn now(command: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            unix_time: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            threads: rayon::current_num_threads(),
            command: command.to_string(),
        }
    }
}

impl EvalReport {
    /// `(split, metric, value)` rows: one per split per metric, then the
    /// split-independent metrics under split `all`.
    pub fn metric_rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        for s in &self.splits {
            let split = format!("{}/{}", s.label, s.method);
            rows.push((split.clone(), "zsl_accuracy".into(), s.accuracy));
            rows.push((split.clone(), "num_train_classes".into(), s.num_train_classes as f64));
            rows.push((split, "num_test_classes".into(), s.num_test_classes as f64));
        }
        for r in &self.rank_correlations {
            rows.push(("all".into(), format!("rank_correlation/{}", r.name), r.rho));
        }
        if let Some(a) = &self.arithmetic {
            rows.push(("all".into(), "arithmetic_precision".into(), a.precision));
            rows.push(("all".into(), "arithmetic_comparisons".into(), a.comparisons as f64));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,metric,value\n");
        for (s, m, v) in self.metric_rows() {
            writeln!(out, "{s},{m},{v}").unwrap();
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric_rows().is_empty() {
            return Err(Error::Data("report has no metrics".into()));
        }
        let rates = self
            .splits
            .iter()
            .map(|s| s.accuracy)
            .chain(self.splits.iter().flat_map(|s| s.per_class.values().copied()))
            .chain(self.arithmetic.iter().map(|a| a.precision));
        for r in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Data(format!("rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Appends the results of `other`.
    pub fn merge(&mut self, other: EvalReport) {
        self.splits.extend(other.splits);
        self.rank_correlations.extend(other.rank_correlations);
        if other.arithmetic.is_some() {
            self.arithmetic = other.arithmetic;
        }
        self.notes.extend(other.notes);
    }
}

/// Writes `report.json`, `metrics.csv` and `run_meta.json` into `dir`.
/// A report without metrics, or with a rate outside [0, 1], is rejected
/// before anything is written.
pub fn write_report(report: &EvalReport, meta: &RunMeta, dir: &Path) -> Result<()> {
    report.validate()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    std::fs::write(dir.join("metrics.csv"), report.to_csv())?;
    std::fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Tab-separated `clip_id`, `class`, then one column per dimension.
pub fn embeddings_tsv(rows: &[(String, String, Vec<f64>)]) -> Result<String> {
    let width = rows.first().map_or(0, |r| r.2.len());
    let mut out = String::from("clip_id\tclass");
    for k in 0..width {
        write!(out, "\te{k}").unwrap();
    }
    out.push('\n');
    for (id, class, v) in rows {
        if v.len() != width {
            return Err(Error::Data(format!("embedding for {id:?} has width {}", v.len())));
        }
        if id.contains(['\t', '\n']) || class.contains(['\t', '\n']) {
            return Err(Error::Data(format!("tab or newline in name of clip {id:?}")));
        }
        write!(out, "{id}\t{class}").unwrap();
        for x in v {
            write!(out, "\t{x}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(label: &str, acc: f64) -> SplitResult {
        SplitResult {
            label: label.into(),
            fraction: 0.1,
            seed: 0,
            method: "hrnn".into(),
            num_train_classes: 9,
            num_test_classes: 1,
            accuracy: acc,
            per_class: BTreeMap::from([("x".into(), acc)]),
        }
    }

    fn sample() -> EvalReport {
        EvalReport {
            splits: vec![split("90_10", 0.5), split("80_20", 0.25), split("50_50", 0.125)],
            rank_correlations: vec![RankCorrelation {
                name: "taxonomy_vs_embeddings".into(),
                rho: 0.3,
                num_classes: 10,
            }],
            arithmetic: Some(ArithmeticSummary {
                precision: 0.9,
                passes: 54,
                comparisons: 60,
            }),
            notes: vec![],
        }
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert_eq!(r.to_json().unwrap(), sample().to_json().unwrap());
    }

    #[test]
    fn csv_has_one_row_per_split_per_metric() {
        let csv = sample().to_csv();
        let acc_rows = csv.lines().filter(|l| l.contains(",zsl_accuracy,")).count();
        assert_eq!(acc_rows, 3);
        assert!(csv.starts_with("split,metric,value\n90_10/hrnn,zsl_accuracy,0.5\n"));
        assert!(csv.contains("all,arithmetic_precision,0.9"));
    }

    #[test]
    fn write_report_separates_run_metadata() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&sample(), &RunMeta::now("test"), dir.path()).unwrap();
        let a = std::fs::read(dir.path().join("report.json")).unwrap();
        write_report(&sample(), &RunMeta::now("again"), dir.path()).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("report.json")).unwrap());
        assert!(dir.path().join("run_meta.json").exists());
    }

    #[test]
    fn empty_report_is_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(write_report(&EvalReport::default(), &RunMeta::now("t"), &out).is_err());
        assert!(!out.exists());
        let mut bad = sample();
        bad.splits[0].accuracy = 1.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tsv_rows() {
        let t = embeddings_tsv(&[("a".into(), "cut x".into(), vec![1.0, -0.5])]).unwrap();
        assert_eq!(t, "clip_id\tclass\te0\te1\na\tcut x\t1\t-0.5\n");
        assert!(embeddings_tsv(&[("a".into(), "c".into(), vec![1.0]), ("b".into(), "c".into(), vec![])]).is_err());
    }
}
