use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Central-difference step used by [`grad_check`].
pub const FD_EPSILON: f64 = 1e-5;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences over every element of every input, returning the
/// largest `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
///
/// `f` builds the function on a fresh graph from the given input leaves and
/// must be deterministic.
pub fn grad_check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[i].len()];
        let ga = grads.wrt(v).unwrap_or(&zeros).to_vec();
        for k in 0..inputs[i].len() {
            let x0 = inputs[i].data()[k];
            xs[i].data_mut()[k] = x0 + eps;
            let fp = eval(&xs)?;
            xs[i].data_mut()[k] = x0 - eps;
            let fm = eval(&xs)?;
            xs[i].data_mut()[k] = x0;
            let gf = (fp - fm) / (2.0 * eps);
            if !gf.is_finite() || !ga[k].is_finite() {
                return Err(TensorError::invalid("grad_check", "non-finite gradient"));
            }
            let err = (ga[k] - gf).abs() / (ga[k].abs() + gf.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// [`grad_check`] over the listed parameters of a store instead of over
/// input leaves.
pub fn grad_check_params<F>(store: &ParamStore, ids: &[ParamId], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.get(id).len();
        let zeros = vec![0.0; n];
        let ga = grads.param(id).unwrap_or(&zeros).to_vec();
        for k in 0..n {
            let x0 = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = x0 + eps;
            let fp = eval_store(&f, &work)?;
            work.get_mut(id).data_mut()[k] = x0 - eps;
            let fm = eval_store(&f, &work)?;
            work.get_mut(id).data_mut()[k] = x0;
            let gf = (fp - fm) / (2.0 * eps);
            if !gf.is_finite() || !ga[k].is_finite() {
                return Err(TensorError::invalid("grad_check", "non-finite gradient"));
            }
            worst = worst.max((ga[k] - gf).abs() / (ga[k].abs() + gf.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

fn eval_store<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    Ok(g.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::row(&[0.3, -1.2, 2.0]);
        let err = grad_check(&[x], FD_EPSILON, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
