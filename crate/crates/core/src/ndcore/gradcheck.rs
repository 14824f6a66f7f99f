use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / REL_ERROR_FLOOR.max(analytic.abs() + numeric.abs())
}

/// Compares `analytic` (one buffer per parameter tensor) against central
/// differences of `loss_fn` and returns the worst relative error over all
/// coordinates.
pub fn finite_difference_check<F>(params: &[Tensor], analytic: &[Vec<f64>], eps: f64, mut loss_fn: F) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {eps}")));
    }
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(a, p)| a.len() != p.len()) {
        return Err(Error::InvalidArgument(
            "analytic gradients do not line up with parameters".into(),
        ));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (ti, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = work[ti].values()[k];
            work[ti].values_mut()[k] = orig + eps;
            let up = finite(loss_fn(&work)?)?;
            work[ti].values_mut()[k] = orig - eps;
            let down = finite(loss_fn(&work)?)?;
            work[ti].values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad[k], numeric));
        }
    }
    Ok(worst)
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite("loss function".into()))
    }
}

/// Builds the loss with `build` on a fresh graph, differentiates it, and
/// checks the result against central differences of the same builder.
pub fn check_graph_gradients<F>(params: &[Tensor], eps: f64, build: F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.leaf(p)).collect();
        let loss = build(&mut g, &vars)?;
        super::graph::reverse_accumulate(&g, loss, &vars)?
    };
    finite_difference_check(params, &analytic, eps, |ps| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p)).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.scalar(loss))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = vec![Tensor::scalar(3.0).with_grad()];
        let err = check_graph_gradients(&theta, 1e-4, |g, v| g.mul(v[0], v[0])).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let theta = vec![Tensor::vector(vec![1.0, 2.0]).with_grad()];
        let err = finite_difference_check(&theta, &[vec![0.0, 0.0]], 1e-4, |_| Ok(5.0)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let theta = vec![Tensor::scalar(1.0).with_grad()];
        let r = finite_difference_check(&theta, &[vec![0.0]], 1e-4, |_| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
