//! Central difference gradient verification.

use crate::error::Result;
use crate::scalar::Scalar;

use super::Tensor;

/// Worst relative disagreement found by [`finite_difference_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport<S> {
    pub max_rel_err: S,
    /// Index into the checked parameter list.
    pub param: usize,
    /// Flat coordinate within that parameter.
    pub coord: usize,
    pub analytic: S,
    pub numeric: S,
}

/// Compares analytic gradients of `f` against central differences at the
/// current parameter values. `f` must rebuild its graph on every call and
/// be deterministic. Relative error uses
/// `max(|analytic|, |numeric|, 1e-6)` as the denominator; the floor is
/// what central differences with steps near 1e-5 can still resolve on a
/// unit-scale output before roundoff takes over.
pub fn finite_difference_check<S: Scalar>(
    f: &mut dyn FnMut() -> Result<Tensor<S>>,
    params: &[Tensor<S>],
    h: S,
) -> Result<GradCheckReport<S>> {
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Vec<S>> = params.iter().map(|p| p.grad().clone()).collect();

    let floor = S::of(1e-6);
    let two_h = h + h;
    let mut report = GradCheckReport {
        max_rel_err: S::zero(),
        param: 0,
        coord: 0,
        analytic: S::zero(),
        numeric: S::zero(),
    };

    for (pi, p) in params.iter().enumerate() {
        for c in 0..p.len() {
            let orig = p.data()[c];
            p.data_mut()[c] = orig + h;
            let plus = f()?.item();
            p.data_mut()[c] = orig - h;
            let minus = f()?.item();
            p.data_mut()[c] = orig;

            let numeric = (plus - minus) / two_h;
            let a = analytic[pi][c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    param: pi,
                    coord: c,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
