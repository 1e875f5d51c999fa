//! First-order parameter updates: adaptive-moment estimation by default,
//! plain SGD behind config.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Which update rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimKind {
    /// Adaptive moments with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Plain gradient descent.
    Sgd,
}

impl OptimKind {
    pub fn adam_default() -> Self {
        OptimKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter moment accumulators plus the step counter.
pub struct OptimizerState {
    kind: OptimKind,
    learning_rate: f64,
    step: u64,
    // first/second moment per parameter, allocated lazily on first update
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(kind: OptimKind, learning_rate: f64) -> Self {
        Self { kind, learning_rate, step: 0, moments: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Adjust the learning rate (for external schedules).
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Apply one update. `params` and `grads` are aligned one-to-one; `names`
    /// provide context for the non-finite-gradient error.
    pub fn step(
        &mut self,
        params: &mut [Arc<Tensor>],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter '{}'",
                    names.get(i).map(String::as_str).unwrap_or("?")
                )));
            }
        }
        if self.moments.is_empty() {
            self.moments = params.iter().map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()])).collect();
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    let pv = Arc::make_mut(p);
                    for (w, &gi) in pv.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * gi;
                    }
                }
            }
            OptimKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
                    let pv = Arc::make_mut(p);
                    for (j, (w, &gi)) in pv.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gi;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gi * gi;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap(v: Vec<f64>) -> Arc<Tensor> {
        Arc::new(Tensor::vector(v))
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut st = OptimizerState::new(OptimKind::adam_default(), 1e-3);
        let mut params = vec![wrap(vec![1.0, -2.0, 0.5])];
        let grads = vec![Tensor::vector(vec![0.0, 0.0, 0.0])];
        st.step(&mut params, &grads, &["w".into()]).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 0.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Constant gradient 1.0: bias-corrected mhat = 1, vhat = 1, so the
        // first update is -lr / (1 + eps).
        let lr = 1e-3;
        let mut st = OptimizerState::new(OptimKind::adam_default(), lr);
        let mut params = vec![wrap(vec![0.0])];
        let grads = vec![Tensor::vector(vec![1.0])];
        st.step(&mut params, &grads, &["w".into()]).unwrap();
        assert!((params[0].data()[0] + lr).abs() < 1e-9);
    }

    #[test]
    fn quadratic_converges_and_matches_scalar_recurrence() {
        // f(w) = (w-3)^2, grad = 2(w-3). The oracle runs the Adam recurrence
        // directly on a scalar; the implementation must match it step for step.
        let lr = 0.1;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut st = OptimizerState::new(OptimKind::Adam { beta1: b1, beta2: b2, eps }, lr);
        let mut params = vec![wrap(vec![0.0])];

        let (mut w_ref, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let w = params[0].data()[0];
            let g = 2.0 * (w - 3.0);
            st.step(&mut params, &[Tensor::vector(vec![g])], &["w".into()]).unwrap();

            let g_ref = 2.0 * (w_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g_ref;
            v = b2 * v + (1.0 - b2) * g_ref * g_ref;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            w_ref -= lr * mhat / (vhat.sqrt() + eps);
            assert_eq!(params[0].data()[0], w_ref);
        }
        assert!((params[0].data()[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut st = OptimizerState::new(OptimKind::adam_default(), 1e-3);
        let mut params = vec![wrap(vec![0.0]), wrap(vec![0.0])];
        let grads = vec![Tensor::vector(vec![0.0]), Tensor::vector(vec![f64::NAN])];
        let err = st
            .step(&mut params, &grads, &["a".into(), "blk0.wq".into()])
            .unwrap_err();
        match err {
            Error::Training(msg) => assert!(msg.contains("blk0.wq")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut st = OptimizerState::new(OptimKind::Sgd, 0.5);
        let mut params = vec![wrap(vec![1.0])];
        st.step(&mut params, &[Tensor::vector(vec![2.0])], &["w".into()]).unwrap();
        assert_eq!(params[0].data()[0], 0.0);
    }
}
