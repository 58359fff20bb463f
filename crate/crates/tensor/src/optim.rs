use crate::error::{Result, TensorError};
use crate::graph::Gradients;
use crate::params::ParamStore;

/// Adam with decoupled weight decay.
///
/// Decay applies only to parameters whose name ends in `.w` (weight
/// matrices and embedding tables); biases and norm gains are left alone.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip: Some(1.0),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<f64> {
        let norm = grads.param_norm();
        if !norm.is_finite() {
            return Err(TensorError::invalid("adamw", format!("non-finite gradient norm {norm}")));
        }
        if self.m.len() < store.len() {
            for id in self.m.len()..store.len() {
                let n = store.iter().nth(id).map_or(0, |(_, _, t)| t.len());
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
        }
        let scale = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads.params() {
            let i = id.index();
            let decay = store.name(id).ends_with(".w");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = store.get_mut(id).data_mut();
            for k in 0..w.len() {
                let gk = g[k] * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                if decay {
                    w[k] -= self.lr * self.weight_decay * w[k];
                }
                w[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Tensor};

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x.b", Tensor::row(&[3.0, -2.0])).unwrap();
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..500 {
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let sq = g.mul(x, x).unwrap();
            let l = g.sum(sq);
            let grads = g.backward(l).unwrap();
            opt.step(&mut store, &grads).unwrap();
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first Adam step is lr * sign(g).
        let mut store = ParamStore::new();
        let id = store.add("x.b", Tensor::row(&[1.0])).unwrap();
        let mut opt = AdamW::new(0.01, 0.0);
        opt.clip = None;
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let l = g.scale(x, 5.0);
        let l = g.sum(l);
        let grads = g.backward(l).unwrap();
        opt.step(&mut store, &grads).unwrap();
        assert!((store.get(id).data()[0] - 0.99).abs() < 1e-9);
    }
}
