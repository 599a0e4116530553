//! Ensemble fusion gate and the mutual distillation loss.

use rand_chacha::ChaCha8Rng;

use crate::diff::Tensor;
use crate::encoders::dense_weight;
use crate::error::{DgektError, Result};
use crate::scalar::Scalar;

/// Learned gate blending two knowledge states of width `k`. The weight
/// acts on their concatenation, so it is 2k x k.
#[derive(Debug, Clone)]
pub struct GateParameters<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> GateParameters<S> {
    pub fn new(state_width: usize, rng: &mut ChaCha8Rng) -> GateParameters<S> {
        GateParameters {
            weight: dense_weight(2 * state_width, state_width, rng),
            bias: Tensor::parameter(1, state_width, vec![S::zero(); state_width]),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor<S>> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Convex blend `g . s_c + (1 - g) . s_d` with
/// `g = sigmoid([s_c, s_d] W + b)`, computed row-wise; both states may be
/// batched.
pub fn gate_fuse<S: Scalar>(
    gate: &GateParameters<S>,
    s_concept: &Tensor<S>,
    s_transition: &Tensor<S>,
) -> Result<Tensor<S>> {
    if s_concept.shape() != s_transition.shape() {
        return Err(DgektError::shape(
            "gate_fuse",
            s_concept.shape(),
            s_transition.shape(),
        ));
    }
    let joint = Tensor::concat_cols(&[s_concept, s_transition])?;
    let g = joint.matmul(&gate.weight)?.add_bias(&gate.bias)?.sigmoid();
    g.hadamard(s_concept)?
        .add(&g.affine(-S::one(), S::one()).hadamard(s_transition)?)
}

/// Temperature softened probability `sigmoid(z / gamma)`.
pub fn soften<S: Scalar>(logits: &Tensor<S>, gamma: S) -> Tensor<S> {
    logits.scale(S::one() / gamma).sigmoid()
}

/// Mean absolute gap between the softened ensemble outputs and each
/// branch's softened outputs, averaged over rows:
/// `(1/n) * sum_i |ye_i - yc_i| + |ye_i - yd_i|`.
pub fn distill_loss<S: Scalar>(
    z_ensemble: &Tensor<S>,
    z_concept: &Tensor<S>,
    z_transition: &Tensor<S>,
    gamma: S,
) -> Result<Tensor<S>> {
    if z_ensemble.shape() != z_concept.shape() {
        return Err(DgektError::shape(
            "distill_loss",
            z_ensemble.shape(),
            z_concept.shape(),
        ));
    }
    if z_ensemble.shape() != z_transition.shape() {
        return Err(DgektError::shape(
            "distill_loss",
            z_ensemble.shape(),
            z_transition.shape(),
        ));
    }
    let n = S::of(z_ensemble.len() as f64);
    let ye = soften(z_ensemble, gamma);
    let yc = soften(z_concept, gamma);
    let yd = soften(z_transition, gamma);
    let gap_c = ye.sub(&yc)?.abs_sum();
    let gap_d = ye.sub(&yd)?.abs_sum();
    Ok(gap_c.add(&gap_d)?.scale(S::one() / n))
}

/// Joint objective: the three cross entropies plus the weighted
/// distillation term.
pub fn total_loss<S: Scalar>(
    ce_concept: &Tensor<S>,
    ce_transition: &Tensor<S>,
    ce_ensemble: &Tensor<S>,
    kd: &Tensor<S>,
    lambda: S,
) -> Result<Tensor<S>> {
    for (name, t) in [
        ("ce_concept", ce_concept),
        ("ce_transition", ce_transition),
        ("ce_ensemble", ce_ensemble),
        ("kd", kd),
    ] {
        if t.len() != 1 {
            return Err(DgektError::Data(format!(
                "total_loss expects scalar terms, {name} has shape {:?}",
                t.shape()
            )));
        }
    }
    ce_concept
        .add(ce_transition)?
        .add(ce_ensemble)?
        .add(&kd.scale(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_gate(k: usize) -> GateParameters<f64> {
        GateParameters {
            weight: Tensor::parameter(2 * k, k, vec![0.0; 2 * k * k]),
            bias: Tensor::parameter(1, k, vec![0.0; k]),
        }
    }

    #[test]
    fn zero_gate_blends_to_midpoint() {
        let gate = zero_gate(2);
        let a = Tensor::parameter(1, 2, vec![1.0, -3.0]);
        let b = Tensor::parameter(1, 2, vec![3.0, 5.0]);
        let s = gate_fuse(&gate, &a, &b).unwrap();
        assert_eq!(s.data().as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn equal_states_are_a_fixed_point_of_any_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gate: GateParameters<f64> = GateParameters::new(3, &mut rng);
        let a = Tensor::parameter(1, 3, vec![0.4, -0.6, 2.0]);
        let s = gate_fuse(&gate, &a, &a).unwrap();
        for (got, want) in s.data().iter().zip(a.data().iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_gate_selects_the_first_state() {
        let gate = GateParameters {
            weight: Tensor::parameter(4, 2, vec![0.0f64; 8]),
            bias: Tensor::parameter(1, 2, vec![20.0, 20.0]),
        };
        let a = Tensor::parameter(1, 2, vec![1.0, 2.0]);
        let b = Tensor::parameter(1, 2, vec![-7.0, 9.0]);
        let s = gate_fuse(&gate, &a, &b).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!((s.data()[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn fused_state_stays_between_the_inputs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let gate: GateParameters<f64> = GateParameters::new(4, &mut rng);
            let a = Tensor::parameter(2, 4, (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let b = Tensor::parameter(2, 4, (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let s = gate_fuse(&gate, &a, &b).unwrap();
            let (sd, ad, bd) = (s.data(), a.data(), b.data());
            for i in 0..sd.len() {
                let (lo, hi) = (ad[i].min(bd[i]), ad[i].max(bd[i]));
                assert!(sd[i] >= lo - 1e-12 && sd[i] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn gate_shape_mismatch_errors() {
        let gate = zero_gate(2);
        let a = Tensor::parameter(1, 2, vec![0.0; 2]);
        let b = Tensor::parameter(2, 2, vec![0.0; 4]);
        assert!(gate_fuse(&gate, &a, &b).is_err());
    }

    #[test]
    fn gradients_flow_to_both_states_and_the_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gate: GateParameters<f64> = GateParameters::new(2, &mut rng);
        let a = Tensor::parameter(1, 2, vec![0.5, -0.5]);
        let b = Tensor::parameter(1, 2, vec![1.5, 0.25]);
        gate_fuse(&gate, &a, &b).unwrap().sum().backward().unwrap();
        assert!(a.grad().iter().any(|&g| g != 0.0));
        assert!(b.grad().iter().any(|&g| g != 0.0));
        assert!(gate.weight.grad().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn soften_known_values() {
        let z = Tensor::parameter(1, 1, vec![0.0f64]);
        assert_eq!(soften(&z, 0.5).item(), 0.5);

        let z = Tensor::parameter(1, 1, vec![1.0f64]);
        // temperature 0.5 doubles the logit
        assert!((soften(&z, 0.5).item() - 0.8807970779778823).abs() < 1e-15);
    }

    #[test]
    fn higher_temperature_pulls_toward_half() {
        let z = Tensor::parameter(1, 1, vec![1.0f64]);
        let mut prev = soften(&z, 0.25).item();
        for gamma in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let y = soften(&z, gamma).item();
            assert!(y < prev && y > 0.5);
            prev = y;
        }
    }

    #[test]
    fn distill_loss_is_zero_for_identical_logits() {
        let z = Tensor::parameter(3, 1, vec![0.5, -1.0, 2.0]);
        let loss = distill_loss(&z, &z, &z, 0.5).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn distill_loss_saturated_gap_is_half() {
        // ensemble and concept logits agree at 0 (softened 0.5); the
        // transition logit 20 softens to nearly 1, a gap of about 0.5.
        let ze = Tensor::parameter(1, 1, vec![0.0f64]);
        let zc = Tensor::parameter(1, 1, vec![0.0f64]);
        let zd = Tensor::parameter(1, 1, vec![20.0f64]);
        let loss = distill_loss(&ze, &zc, &zd, 0.5).unwrap();
        assert!((loss.item() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn distill_loss_matches_direct_formula() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 4;
        let gamma = 0.5;
        let ze: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let zc: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let zd: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let sig = |z: f64| 1.0 / (1.0 + (-z / gamma).exp());
        let want: f64 = (0..n)
            .map(|i| (sig(ze[i]) - sig(zc[i])).abs() + (sig(ze[i]) - sig(zd[i])).abs())
            .sum::<f64>()
            / n as f64;
        let loss = distill_loss(
            &Tensor::parameter(n, 1, ze),
            &Tensor::parameter(n, 1, zc),
            &Tensor::parameter(n, 1, zd),
            gamma,
        )
        .unwrap();
        assert!((loss.item() - want).abs() < 1e-12);
    }

    #[test]
    fn distill_loss_is_permutation_invariant() {
        let ze = vec![0.1, -0.7, 1.3];
        let zc = vec![0.5, 0.2, -0.9];
        let zd = vec![-1.0, 0.8, 0.0];
        let a = distill_loss(
            &Tensor::parameter(3, 1, ze.clone()),
            &Tensor::parameter(3, 1, zc.clone()),
            &Tensor::parameter(3, 1, zd.clone()),
            0.5,
        )
        .unwrap()
        .item();
        let perm = [2usize, 0, 1];
        let p = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let b = distill_loss(
            &Tensor::parameter(3, 1, p(&ze)),
            &Tensor::parameter(3, 1, p(&zc)),
            &Tensor::parameter(3, 1, p(&zd)),
            0.5,
        )
        .unwrap()
        .item();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn distill_loss_shape_mismatch_errors() {
        let a = Tensor::parameter(2, 1, vec![0.0; 2]);
        let b = Tensor::parameter(3, 1, vec![0.0; 3]);
        assert!(distill_loss(&a, &a, &b, 0.5).is_err());
        assert!(distill_loss(&a, &b, &a, 0.5).is_err());
    }

    #[test]
    fn total_loss_combines_terms() {
        let ce = |v: f64| Tensor::parameter(1, 1, vec![v]);
        let loss = total_loss(&ce(0.7), &ce(0.6), &ce(0.5), &ce(2.0), 0.01).unwrap();
        assert!((loss.item() - 1.82).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_ignores_distillation() {
        let ce = |v: f64| Tensor::parameter(1, 1, vec![v]);
        let loss = total_loss(&ce(0.7), &ce(0.6), &ce(0.5), &ce(123.0), 0.0).unwrap();
        assert!((loss.item() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn total_loss_rejects_non_scalars() {
        let ce = Tensor::parameter(1, 1, vec![0.5f64]);
        let vec2 = Tensor::parameter(1, 2, vec![0.5, 0.5]);
        assert!(total_loss(&vec2, &ce, &ce, &ce, 0.01).is_err());
    }
}
