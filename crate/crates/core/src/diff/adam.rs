//! Adam optimizer over a fixed parameter list.

use crate::error::{DgektError, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Debug, Clone)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
}

/// First and second moment state, aligned with the parameter list the
/// state was created for.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    alpha: S,
    beta1: S,
    beta2: S,
    epsilon: S,
    step_count: u64,
    moments: Vec<Moments<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>], alpha: S) -> AdamState<S> {
        Self::with_hyperparams(params, alpha, S::of(0.9), S::of(0.999), S::of(1e-8))
    }

    pub fn with_hyperparams(
        params: &[Tensor<S>],
        alpha: S,
        beta1: S,
        beta2: S,
        epsilon: S,
    ) -> AdamState<S> {
        let moments = params
            .iter()
            .map(|p| Moments {
                m: vec![S::zero(); p.len()],
                v: vec![S::zero(); p.len()],
            })
            .collect();
        AdamState {
            alpha,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            moments,
        }
    }

    /// One update from the gradients currently held by `params`. Gradients
    /// are left untouched; callers zero them between steps.
    pub fn step(&mut self, params: &[Tensor<S>]) {
        assert_eq!(
            params.len(),
            self.moments.len(),
            "optimizer state does not match parameter list"
        );
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let one = S::one();
        for (p, mom) in params.iter().zip(self.moments.iter_mut()) {
            assert_eq!(p.len(), mom.m.len(), "parameter size changed under optimizer");
            let g = p.grad();
            let mut data = p.data_mut();
            for i in 0..g.len() {
                let gi = g[i];
                mom.m[i] = self.beta1 * mom.m[i] + (one - self.beta1) * gi;
                mom.v[i] = self.beta2 * mom.v[i] + (one - self.beta2) * gi * gi;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                data[i] = data[i] - self.alpha * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> S {
        self.alpha
    }

    /// Moment vectors per parameter, in parameter list order.
    pub fn moment_slices(&self) -> Vec<(&[S], &[S])> {
        self.moments
            .iter()
            .map(|m| (m.m.as_slice(), m.v.as_slice()))
            .collect()
    }

    /// Rebuilds state saved by [`AdamState::moment_slices`].
    pub fn restore(
        params: &[Tensor<S>],
        alpha: S,
        step_count: u64,
        moments: Vec<(Vec<S>, Vec<S>)>,
    ) -> Result<AdamState<S>> {
        if moments.len() != params.len() {
            return Err(DgektError::Checkpoint(format!(
                "optimizer state holds {} moment pairs, model has {} parameters",
                moments.len(),
                params.len()
            )));
        }
        let mut state = AdamState::new(params, alpha);
        for (i, ((m, v), p)) in moments.into_iter().zip(params).enumerate() {
            if m.len() != p.len() || v.len() != p.len() {
                return Err(DgektError::Checkpoint(format!(
                    "optimizer moment {} has length {}/{}, parameter expects {}",
                    i,
                    m.len(),
                    v.len(),
                    p.len()
                )));
            }
            state.moments[i] = Moments { m, v };
        }
        state.step_count = step_count;
        Ok(state)
    }
}
