use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datakit::Taxonomy;
use crate::error::{Error, Result};
use crate::ndcore::cosine;

/// `2·depth(lca) / (depth(a) + depth(b))`, with the root at depth 1.
pub fn wu_palmer(tax: &Taxonomy, a: &str, b: &str) -> Result<f64> {
    let lca = tax.lowest_common_ancestor(a, b)?;
    let d = tax.depth(lca)? as f64;
    Ok(2.0 * d / (tax.depth(a)? + tax.depth(b)?) as f64)
}

/// Square similarity matrix over named classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Header row of names, then one row per class.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("class");
        for n in &self.names {
            out.push(',');
            out.push_str(&quote(n));
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.values) {
            out.push_str(&quote(n));
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Where pairwise similarities come from.
pub enum SimilaritySource<'a> {
    /// Wu-Palmer over taxonomy nodes named like the classes.
    Taxonomy(&'a Taxonomy),
    /// Cosine between per-class vectors (label vectors or class means).
    Vectors(&'a BTreeMap<String, Vec<f64>>),
}

/// Names that are nodes of `tax`, in input order.
pub fn names_in_taxonomy(names: &[String], tax: &Taxonomy) -> Vec<String> {
    names.iter().filter(|n| tax.contains(n)).cloned().collect()
}

/// Builds the pairwise matrix over `names`. For a taxonomy source, names
/// that are not nodes are dropped first; vector sources require every
/// name. Fewer than 3 remaining names is an error.
pub fn build_similarity_matrix(names: &[String], source: &SimilaritySource<'_>) -> Result<SimilarityMatrix> {
    let kept: Vec<String> = match source {
        SimilaritySource::Taxonomy(tax) => names_in_taxonomy(names, tax),
        SimilaritySource::Vectors(map) => {
            if let Some(n) = names.iter().find(|n| !map.contains_key(*n)) {
                return Err(Error::Data(format!("no vector for class {n:?}")));
            }
            names.to_vec()
        }
    };
    if kept.len() < 3 {
        return Err(Error::Data(format!(
            "matrix too small: {} classes remain, at least 3 needed",
            kept.len()
        )));
    }
    let n = kept.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = match source {
                SimilaritySource::Taxonomy(tax) => wu_palmer(tax, &kept[i], &kept[j])?,
                SimilaritySource::Vectors(map) => cosine(&map[&kept[i]], &map[&kept[j]])?,
            };
            values[i][j] = s;
            values[j][i] = s;
        }
    }
    Ok(SimilarityMatrix { names: kept, values })
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs at least 2 values".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank correlation input".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Data("undefined correlation: constant input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean over rows of the per-row Spearman ρ between two matrices over the
/// same names. The diagonal is excluded unless `include_diagonal`.
pub fn matrix_rank_correlation(a: &SimilarityMatrix, b: &SimilarityMatrix, include_diagonal: bool) -> Result<f64> {
    if a.names != b.names {
        return Err(Error::InvalidArgument("similarity matrices cover different classes".into()));
    }
    if a.len() < 3 {
        return Err(Error::Data("rank correlation needs at least 3 classes".into()));
    }
    let mut total = 0.0;
    for i in 0..a.len() {
        let keep = |j: &usize| include_diagonal || *j != i;
        let x: Vec<f64> = (0..a.len()).filter(keep).map(|j| a.values[i][j]).collect();
        let y: Vec<f64> = (0..a.len()).filter(keep).map(|j| b.values[i][j]).collect();
        total += spearman_rho(&x, &y).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("row {:?}: {m}", a.names[i])),
            other => other,
        })?;
    }
    Ok(total / a.len() as f64)
}
