use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma·‖a − b‖²)`.
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    /// `linear` or `rbf:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "linear" => Ok(Kernel::Linear),
            Some(("rbf", g)) => {
                let gamma: f64 = g
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad rbf gamma {g:?}")))?;
                if gamma > 0.0 {
                    Ok(Kernel::Rbf { gamma })
                } else {
                    Err(Error::InvalidArgument("rbf gamma must be > 0".into()))
                }
            }
            _ => Err(Error::InvalidArgument(format!("unknown kernel {s:?} (linear | rbf:<gamma>)"))),
        }
    }
}

pub fn gram(a: &[Vec<f64>], b: &[Vec<f64>], kernel: Kernel) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel.eval(&a[i], &b[j]))
}

/// Fitted kernel ridge regressor: `coefficients = (K + μI)⁻¹ Y`.
#[derive(Debug, Clone)]
pub struct KrrModel {
    train: Vec<Vec<f64>>,
    coefficients: DMatrix<f64>,
    kernel: Kernel,
}

impl KrrModel {
    pub fn fit(train_x: &[Vec<f64>], train_y: &[Vec<f64>], mu: f64, kernel: Kernel) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge mu must be > 0, got {mu}")));
        }
        if train_x.is_empty() || train_x.len() != train_y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs vs {} targets",
                train_x.len(),
                train_y.len()
            )));
        }
        let out_dim = train_y[0].len();
        if train_y.iter().any(|y| y.len() != out_dim) || train_x.iter().any(|x| x.len() != train_x[0].len()) {
            return Err(Error::InvalidArgument("ragged KRR inputs".into()));
        }
        let n = train_x.len();
        let mut k = gram(train_x, train_x, kernel);
        for i in 0..n {
            k[(i, i)] += mu;
        }
        let y = DMatrix::from_fn(n, out_dim, |i, j| train_y[i][j]);
        let coefficients = match k.clone().cholesky() {
            Some(ch) => ch.solve(&y),
            None => k
                .lu()
                .solve(&y)
                .ok_or_else(|| Error::Data("kernel system is singular even with the ridge term".into()))?,
        };
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("kernel ridge coefficients".into()));
        }
        Ok(Self {
            train: train_x.to_vec(),
            coefficients,
            kernel,
        })
    }

    pub fn predict(&self, test_x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = gram(test_x, &self.train, self.kernel);
        let p = k * &self.coefficients;
        (0..p.nrows()).map(|i| p.row(i).iter().copied().collect()).collect()
    }
}

pub fn krr_fit_predict(
    train_x: &[Vec<f64>],
    train_y: &[Vec<f64>],
    mu: f64,
    kernel: Kernel,
    test_x: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    Ok(KrrModel::fit(train_x, train_y, mu, kernel)?.predict(test_x))
}
