use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 4e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adaptive-moment state with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimState {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update at the configured learning rate.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let lr = self.hyper.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One update at an explicit learning rate. Parameters without a gradient
    /// entry only receive weight decay.
    pub fn step_with_lr(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("gradient for unknown parameter {name}"),
            })?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("{name}: {:?} vs {:?}", p.shape(), g.shape()),
                });
            }
        }
        self.step += 1;
        let h = self.hyper;
        let t = self.step as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let decay = 1.0 - lr * h.weight_decay;
            let Some(g) = grads.get(name) else {
                p.data_mut().iter_mut().for_each(|x| *x *= decay);
                continue;
            };
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for (((x, &gv), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *m = h.beta1 * *m + (1.0 - h.beta1) * gv;
                *v = h.beta2 * *v + (1.0 - h.beta2) * gv * gv;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *x = *x * decay - lr * mhat / (vhat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate: `start_lr` during the warmup epochs, then `lr`.
pub fn warmup_lr(epoch: usize, warmup_epochs: usize, start_lr: f64, lr: f64) -> f64 {
    if epoch < warmup_epochs {
        start_lr
    } else {
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, t: Tensor) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), t)])
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut st = OptimState::new(AdamHyper {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut p = one("w", Tensor::row(vec![1.0, -2.0, 3.0]));
        let before = p.clone();
        for _ in 0..5 {
            st.step(&mut p, &one("w", Tensor::zeros(&[1, 3]))).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_bounded_by_lr() {
        let h = AdamHyper {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimState::new(h);
        let mut p = one("w", Tensor::row(vec![0.0, 0.0, 0.0]));
        st.step(&mut p, &one("w", Tensor::row(vec![3.0, -0.001, 1e-3])))
            .unwrap();
        for &x in p["w"].data() {
            assert!(x.abs() <= 0.1 * (1.0 + 1e-6));
            assert!(x.abs() > 0.09);
        }
        assert!(p["w"].data()[0] < 0.0 && p["w"].data()[1] > 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let h = AdamHyper {
            lr: 1e-2,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimState::new(h);
        let mut p = one("x", Tensor::row(vec![1.0, -0.5, 0.25]));
        for _ in 0..500 {
            let g = p["x"].clone();
            st.step(&mut p, &one("x", g)).unwrap();
        }
        assert!(p["x"].norm() < 1e-3, "{}", p["x"].norm());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = OptimState::new(AdamHyper::default());
        let mut p = one("w", Tensor::row(vec![1.0, 2.0]));
        assert!(st.step(&mut p, &one("w", Tensor::row(vec![1.0]))).is_err());
    }

    #[test]
    fn schedule() {
        assert_eq!(warmup_lr(0, 2, 1e-3, 5e-4), 1e-3);
        assert_eq!(warmup_lr(1, 2, 1e-3, 5e-4), 1e-3);
        assert_eq!(warmup_lr(2, 2, 1e-3, 5e-4), 5e-4);
    }
}
