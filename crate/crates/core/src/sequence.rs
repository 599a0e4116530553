//! GRU over interaction embeddings, knowledge state assembly and the
//! prediction readout with its cross entropy loss.

use rand_chacha::ChaCha8Rng;

use crate::diff::Tensor;
use crate::encoders::{dense_weight, uniform_parameter};
use crate::error::{DgektError, Result};
use crate::scalar::Scalar;

/// Predicted probabilities are clamped into
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` before entering a logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Gates and candidate transform of a single layer GRU. Weights act on
/// the concatenation `[h, x]`, so they have `hidden + input` rows.
#[derive(Debug, Clone)]
pub struct GruParameters<S: Scalar> {
    pub w_reset: Tensor<S>,
    pub w_update: Tensor<S>,
    pub w_cand: Tensor<S>,
    pub b_reset: Tensor<S>,
    pub b_update: Tensor<S>,
    pub b_cand: Tensor<S>,
    pub hidden: usize,
}

impl<S: Scalar> GruParameters<S> {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruParameters<S> {
        let rows = hidden + input;
        GruParameters {
            w_reset: dense_weight(rows, hidden, rng),
            w_update: dense_weight(rows, hidden, rng),
            w_cand: dense_weight(rows, hidden, rng),
            b_reset: Tensor::parameter(1, hidden, vec![S::zero(); hidden]),
            b_update: Tensor::parameter(1, hidden, vec![S::zero(); hidden]),
            b_cand: Tensor::parameter(1, hidden, vec![S::zero(); hidden]),
            hidden,
        }
    }

    pub fn parameters(&self) -> Vec<Tensor<S>> {
        vec![
            self.w_reset.clone(),
            self.w_update.clone(),
            self.w_cand.clone(),
            self.b_reset.clone(),
            self.b_update.clone(),
            self.b_cand.clone(),
        ]
    }
}

/// Runs the recurrence from a zero initial state and returns the hidden
/// state after every step. Inputs may be batched row-wise; all steps must
/// share a row count.
pub fn gru_forward<S: Scalar>(
    params: &GruParameters<S>,
    inputs: &[Tensor<S>],
) -> Result<Vec<Tensor<S>>> {
    let first = inputs
        .first()
        .ok_or_else(|| DgektError::Data("gru_forward requires at least one input".into()))?;
    let mut h = Tensor::zeros_const(first.rows(), params.hidden);
    let mut states = Vec::with_capacity(inputs.len());
    for x in inputs {
        let hx = Tensor::concat_cols(&[&h, x])?;
        let reset = hx.matmul(&params.w_reset)?.add_bias(&params.b_reset)?.sigmoid();
        let update = hx.matmul(&params.w_update)?.add_bias(&params.b_update)?.sigmoid();
        let masked = Tensor::concat_cols(&[&reset.hadamard(&h)?, x])?;
        let cand = masked.matmul(&params.w_cand)?.add_bias(&params.b_cand)?.tanh();
        // h' = (1 - u) . h + u . c
        h = update
            .affine(-S::one(), S::one())
            .hadamard(&h)?
            .add(&update.hadamard(&cand)?)?;
        states.push(h.clone());
    }
    Ok(states)
}

/// Knowledge state for one queried exercise: the hidden state joined with
/// the exercise's correct and incorrect node embeddings.
pub fn knowledge_state<S: Scalar>(
    hidden: &Tensor<S>,
    x_correct: &Tensor<S>,
    x_incorrect: &Tensor<S>,
) -> Result<Tensor<S>> {
    Tensor::concat_cols(&[hidden, x_correct, x_incorrect])
}

/// Scalar readout mapping a knowledge state row to a logit.
#[derive(Debug, Clone)]
pub struct ReadoutParameters<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> ReadoutParameters<S> {
    pub fn new(state_width: usize, rng: &mut ChaCha8Rng) -> ReadoutParameters<S> {
        ReadoutParameters {
            weight: uniform_parameter(state_width, 1, 1.0 / (state_width as f64).sqrt(), rng),
            bias: Tensor::parameter(1, 1, vec![S::zero()]),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor<S>> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Applies the readout to one state row per input row. Returns logits and
/// their sigmoids, both shaped rows x 1.
pub fn predict_prob<S: Scalar>(
    states: &Tensor<S>,
    readout: &ReadoutParameters<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let logits = states.matmul(&readout.weight)?.add_bias(&readout.bias)?;
    let probs = logits.sigmoid();
    Ok((logits, probs))
}

/// Binary cross entropy summed over the given steps. Each probability is
/// a 1x1 tensor, clamped away from 0 and 1 before the logarithm.
pub fn ce_loss<S: Scalar>(probs: &[Tensor<S>], targets: &[bool]) -> Result<Tensor<S>> {
    if probs.is_empty() {
        return Err(DgektError::Data(
            "cross entropy needs at least one prediction".into(),
        ));
    }
    if probs.len() != targets.len() {
        return Err(DgektError::Data(format!(
            "{} predictions but {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let lo = S::of(PROB_CLAMP);
    let hi = S::one() - S::of(PROB_CLAMP);
    let mut total: Option<Tensor<S>> = None;
    for (p, &correct) in probs.iter().zip(targets) {
        if p.len() != 1 {
            return Err(DgektError::shape("ce_loss", p.shape(), (1, 1)));
        }
        let clamped = p.clamp(lo, hi);
        let term = if correct {
            clamped.ln().scale(-S::one())
        } else {
            clamped.affine(-S::one(), S::one()).ln().scale(-S::one())
        };
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("probs checked non-empty"))
}
