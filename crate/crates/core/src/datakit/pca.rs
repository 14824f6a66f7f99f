use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted projection: subtract `mean`, then multiply by `components`
/// (`target × input` rows ordered by decreasing variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalues of all input directions, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.input_dim() {
            return Err(Error::shape("pca_transform", &[&[row.len()], &[self.input_dim()]]));
        }
        let centered: Vec<f64> = row.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Centers the rows and projects them onto the top `target_dim` principal
/// axes. When the input is already no wider than `target_dim` the data is
/// only centered.
pub fn pca_fit_transform(rows: &[Vec<f64>], target_dim: usize) -> Result<(Vec<Vec<f64>>, PcaBasis)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 rows".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("PCA rows of differing widths".into()));
    }
    if target_dim == 0 {
        return Err(Error::InvalidArgument("PCA target dimension must be >= 1".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let eigenvalues: Vec<f64> = order.iter().map(|i| eig.eigenvalues[*i]).collect();

    let components: Vec<Vec<f64>> = if d <= target_dim {
        (0..d)
            .map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        if target_dim > n {
            return Err(Error::InvalidArgument(format!(
                "PCA target dimension {target_dim} exceeds min(rows={n}, cols={d})"
            )));
        }
        order[..target_dim]
            .iter()
            .map(|i| eig.eigenvectors.column(*i).iter().copied().collect())
            .collect()
    };
    let basis = PcaBasis {
        mean,
        components,
        eigenvalues,
    };
    let out = rows.iter().map(|r| basis.transform(r)).collect::<Result<Vec<_>>>()?;
    Ok((out, basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Cyclic Jacobi eigenvalues of a symmetric matrix.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (n, d) = (rows.len(), rows[0].len());
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n as f64 - 1.0))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn reconstruction_error_equals_discarded_eigenvalues() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|j| rng.gen_range(-1.0..1.0) * (1.0 + j as f64 * 0.3)).collect())
            .collect();
        let (out, basis) = pca_fit_transform(&rows, 4).unwrap();
        let oracle = jacobi_eigenvalues(covariance(&rows));
        for (a, b) in basis.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let mut sq = 0.0;
        for (r, z) in rows.iter().zip(&out) {
            for j in 0..10 {
                let rec = basis.mean[j] + (0..4).map(|k| z[k] * basis.components[k][j]).sum::<f64>();
                sq += (r[j] - rec).powi(2);
            }
        }
        let discarded: f64 = oracle[4..].iter().sum();
        assert!((sq / 49.0 - discarded).abs() < 1e-8, "{} vs {discarded}", sq / 49.0);
    }

    proptest! {
        #[test]
        fn output_columns_are_uncorrelated(seed in any::<u64>(), n in 12usize..40, d in 5usize..9) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let (out, _) = pca_fit_transform(&rows, 3).unwrap();
            let cov = covariance(&out);
            let max_var = (0..3).map(|k| cov[k][k]).fold(0.0, f64::max);
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        prop_assert!(cov[a][b].abs() <= 1e-8 * max_var);
                    }
                }
                if a > 0 {
                    prop_assert!(cov[a][a] <= cov[a - 1][a - 1] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn narrow_input_is_only_centered() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 6.0]];
        let (out, basis) = pca_fit_transform(&rows, 4).unwrap();
        assert_eq!(out, vec![vec![-1.0, -2.0], vec![1.0, 2.0]]);
        assert_eq!(basis.output_dim(), 2);
    }

    #[test]
    fn points_on_a_line_reconstruct_exactly() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let (out, basis) = pca_fit_transform(&rows, 1).unwrap();
        for (r, z) in rows.iter().zip(&out) {
            for j in 0..2 {
                let rec = basis.mean[j] + z[0] * basis.components[0][j];
                assert!((rec - r[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn too_many_components_is_an_error() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 5.0]];
        assert!(pca_fit_transform(&rows, 3).is_ok()); // width 3 ≤ 3: centering only
        assert!(pca_fit_transform(&rows, 2).is_ok());
        let wide: Vec<Vec<f64>> = (0..2).map(|i| vec![i as f64; 6]).collect();
        assert!(pca_fit_transform(&wide, 4).is_err());
    }
}
