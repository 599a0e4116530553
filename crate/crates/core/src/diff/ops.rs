//! Differentiable operations.
//!
//! Shapes follow the row vector convention: activations are rows,
//! weights map columns, so a dense layer is `x.matmul(w)` with `w`
//! shaped in x out.

use std::rc::Rc;

use crate::error::{DgektError, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

use super::Tensor;

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        let e = (-x).exp();
        S::one() / (S::one() + e)
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// out[p x r] = a[p x q] * b[q x r], plain row major loops.
pub(crate) fn mat_mul_raw<S: Scalar>(a: &[S], b: &[S], p: usize, q: usize, r: usize) -> Vec<S> {
    let mut out = vec![S::zero(); p * r];
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik != S::zero() {
                let brow = &b[k * r..(k + 1) * r];
                for j in 0..r {
                    orow[j] += aik * brow[j];
                }
            }
        }
    }
    out
}

fn elementwise_unary<S: Scalar>(
    x: &Tensor<S>,
    f: impl Fn(S) -> S,
    // local derivative as a function of (input, output)
    df: impl Fn(S, S) -> S + 'static,
) -> Tensor<S> {
    let out: Vec<S> = x.data().iter().map(|&v| f(v)).collect();
    let parent = x.clone();
    Tensor::from_op(x.rows(), x.cols(), out, vec![x.clone()], move |node| {
        let g = node.grad.borrow();
        let y = node.data.borrow();
        let xd = parent.data();
        let mut pg = parent.grad_mut();
        for i in 0..g.len() {
            pg[i] += g[i] * df(xd[i], y[i]);
        }
    })
}

impl<S: Scalar> Tensor<S> {
    fn check_same_shape(&self, op: &'static str, rhs: &Tensor<S>) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(DgektError::shape(op, self.shape(), rhs.shape()));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_same_shape("add", rhs)?;
        let out: Vec<S> = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.rows(),
            self.cols(),
            out,
            vec![self.clone(), rhs.clone()],
            move |node| {
                let g = node.grad.borrow();
                if a.needs_grad() {
                    let mut ga = a.grad_mut();
                    for i in 0..g.len() {
                        ga[i] += g[i];
                    }
                }
                if b.needs_grad() {
                    let mut gb = b.grad_mut();
                    for i in 0..g.len() {
                        gb[i] += g[i];
                    }
                }
            },
        ))
    }

    pub fn sub(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_same_shape("sub", rhs)?;
        let out: Vec<S> = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.rows(),
            self.cols(),
            out,
            vec![self.clone(), rhs.clone()],
            move |node| {
                let g = node.grad.borrow();
                if a.needs_grad() {
                    let mut ga = a.grad_mut();
                    for i in 0..g.len() {
                        ga[i] += g[i];
                    }
                }
                if b.needs_grad() {
                    let mut gb = b.grad_mut();
                    for i in 0..g.len() {
                        gb[i] -= g[i];
                    }
                }
            },
        ))
    }

    /// Elementwise product.
    pub fn hadamard(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_same_shape("hadamard", rhs)?;
        let out: Vec<S> = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.rows(),
            self.cols(),
            out,
            vec![self.clone(), rhs.clone()],
            move |node| {
                let g = node.grad.borrow();
                if a.needs_grad() {
                    let bd = b.data();
                    let mut ga = a.grad_mut();
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                }
                if b.needs_grad() {
                    let ad = a.data();
                    let mut gb = b.grad_mut();
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
            },
        ))
    }

    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.cols() != rhs.rows() {
            return Err(DgektError::shape("matmul", self.shape(), rhs.shape()));
        }
        let (p, q, r) = (self.rows(), self.cols(), rhs.cols());
        let out = mat_mul_raw(&self.data(), &rhs.data(), p, q, r);
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            p,
            r,
            out,
            vec![self.clone(), rhs.clone()],
            move |node| {
                let g = node.grad.borrow();
                if a.needs_grad() {
                    // dA += G * B^T
                    let bd = b.data();
                    let mut ga = a.grad_mut();
                    for i in 0..p {
                        for k in 0..r {
                            let gik = g[i * r + k];
                            if gik != S::zero() {
                                for j in 0..q {
                                    ga[i * q + j] += gik * bd[j * r + k];
                                }
                            }
                        }
                    }
                }
                if b.needs_grad() {
                    // dB += A^T * G
                    let ad = a.data();
                    let mut gb = b.grad_mut();
                    for i in 0..p {
                        for j in 0..q {
                            let aij = ad[i * q + j];
                            if aij != S::zero() {
                                for k in 0..r {
                                    gb[j * r + k] += aij * g[i * r + k];
                                }
                            }
                        }
                    }
                }
            },
        ))
    }

    /// Sparse constant matrix times dense tensor: `p * x`. The sparse
    /// factor carries no gradient; dX += P^T * G.
    pub fn spmm(p: &Rc<CsrMatrix<S>>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if p.cols() != x.rows() {
            return Err(DgektError::shape(
                "spmm",
                (p.rows(), p.cols()),
                x.shape(),
            ));
        }
        let (rows, cols) = (p.rows(), x.cols());
        let out = {
            let xd = x.data();
            let mut out = vec![S::zero(); rows * cols];
            for i in 0..rows {
                let (idx, vals) = p.row(i);
                let orow = &mut out[i * cols..(i + 1) * cols];
                for (&j, &v) in idx.iter().zip(vals) {
                    let xrow = &xd[j * cols..(j + 1) * cols];
                    for c in 0..cols {
                        orow[c] += v * xrow[c];
                    }
                }
            }
            out
        };
        let parent = x.clone();
        let pm = Rc::clone(p);
        Ok(Tensor::from_op(
            rows,
            cols,
            out,
            vec![x.clone()],
            move |node| {
                let g = node.grad.borrow();
                let mut pg = parent.grad_mut();
                for i in 0..rows {
                    let (idx, vals) = pm.row(i);
                    let grow = &g[i * cols..(i + 1) * cols];
                    for (&j, &v) in idx.iter().zip(vals) {
                        let prow = &mut pg[j * cols..(j + 1) * cols];
                        for c in 0..cols {
                            prow[c] += v * grow[c];
                        }
                    }
                }
            },
        ))
    }

    /// `m * x + a` elementwise with constant coefficients.
    pub fn affine(&self, m: S, a: S) -> Tensor<S> {
        elementwise_unary(self, |x| m * x + a, move |_, _| m)
    }

    pub fn scale(&self, m: S) -> Tensor<S> {
        self.affine(m, S::zero())
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        elementwise_unary(self, stable_sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn tanh(&self) -> Tensor<S> {
        elementwise_unary(self, |x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn leaky_relu(&self, slope: S) -> Tensor<S> {
        elementwise_unary(
            self,
            move |x| if x >= S::zero() { x } else { slope * x },
            move |x, _| if x >= S::zero() { S::one() } else { slope },
        )
    }

    pub fn ln(&self) -> Tensor<S> {
        elementwise_unary(self, |x| x.ln(), |x, _| S::one() / x)
    }

    /// Clamps into `[lo, hi]`. The local derivative is 1 inside the
    /// interval, boundaries included, and 0 outside.
    pub fn clamp(&self, lo: S, hi: S) -> Tensor<S> {
        elementwise_unary(
            self,
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&self) -> Tensor<S> {
        let total = self.data().iter().copied().sum();
        let parent = self.clone();
        Tensor::from_op(1, 1, vec![total], vec![self.clone()], move |node| {
            let g = node.grad.borrow()[0];
            let mut pg = parent.grad_mut();
            for v in pg.iter_mut() {
                *v += g;
            }
        })
    }

    /// Sum of absolute values as a 1x1 tensor. Subgradient 0 at zero.
    pub fn abs_sum(&self) -> Tensor<S> {
        let total = self.data().iter().map(|&v| v.abs()).sum();
        let parent = self.clone();
        Tensor::from_op(1, 1, vec![total], vec![self.clone()], move |node| {
            let g = node.grad.borrow()[0];
            let xd = parent.data();
            let mut pg = parent.grad_mut();
            for (v, &x) in pg.iter_mut().zip(xd.iter()) {
                if x > S::zero() {
                    *v += g;
                } else if x < S::zero() {
                    *v -= g;
                }
            }
        })
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let first = parts.first().ok_or_else(|| {
            DgektError::Data("concat_cols requires at least one tensor".into())
        })?;
        let rows = first.rows();
        for p in parts {
            if p.rows() != rows {
                return Err(DgektError::shape("concat_cols", first.shape(), p.shape()));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let cols: usize = widths.iter().sum();
        let mut out = vec![S::zero(); rows * cols];
        let mut off = 0;
        for p in parts {
            let pd = p.data();
            let w = p.cols();
            for r in 0..rows {
                out[r * cols + off..r * cols + off + w]
                    .copy_from_slice(&pd[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let owned: Vec<Tensor<S>> = parts.iter().map(|&p| p.clone()).collect();
        let captured = owned.clone();
        Ok(Tensor::from_op(rows, cols, out, owned, move |node| {
            let g = node.grad.borrow();
            let mut off = 0;
            for p in &captured {
                let w = p.cols();
                if p.needs_grad() {
                    let mut pg = p.grad_mut();
                    for r in 0..rows {
                        let grow = &g[r * cols + off..r * cols + off + w];
                        let prow = &mut pg[r * w..(r + 1) * w];
                        for c in 0..w {
                            prow[c] += grow[c];
                        }
                    }
                }
                off += w;
            }
        }))
    }

    /// Selects rows by index; an index may repeat. Gradients scatter add
    /// back into the source rows.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor<S>> {
        for &i in idx {
            if i >= self.rows() {
                return Err(DgektError::Data(format!(
                    "gather_rows index {i} out of bounds for {} rows",
                    self.rows()
                )));
            }
        }
        let cols = self.cols();
        let mut out = vec![S::zero(); idx.len() * cols];
        {
            let d = self.data();
            for (r, &i) in idx.iter().enumerate() {
                out[r * cols..(r + 1) * cols].copy_from_slice(&d[i * cols..(i + 1) * cols]);
            }
        }
        let parent = self.clone();
        let idx: Vec<usize> = idx.to_vec();
        Ok(Tensor::from_op(
            idx.len(),
            cols,
            out,
            vec![self.clone()],
            move |node| {
                let g = node.grad.borrow();
                let mut pg = parent.grad_mut();
                for (r, &i) in idx.iter().enumerate() {
                    let grow = &g[r * cols..(r + 1) * cols];
                    let prow = &mut pg[i * cols..(i + 1) * cols];
                    for c in 0..cols {
                        prow[c] += grow[c];
                    }
                }
            },
        ))
    }

    /// Tiles a 1-row tensor `n` times.
    pub fn repeat_row(&self, n: usize) -> Result<Tensor<S>> {
        if self.rows() != 1 {
            return Err(DgektError::shape("repeat_row", self.shape(), (1, self.cols())));
        }
        let cols = self.cols();
        let mut out = Vec::with_capacity(n * cols);
        {
            let d = self.data();
            for _ in 0..n {
                out.extend_from_slice(&d);
            }
        }
        let parent = self.clone();
        Ok(Tensor::from_op(n, cols, out, vec![self.clone()], move |node| {
            let g = node.grad.borrow();
            let mut pg = parent.grad_mut();
            for r in 0..n {
                for c in 0..cols {
                    pg[c] += g[r * cols + c];
                }
            }
        }))
    }

    /// Adds a 1-row bias to every row.
    pub fn add_bias(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        if bias.rows() != 1 || bias.cols() != self.cols() {
            return Err(DgektError::shape("add_bias", self.shape(), bias.shape()));
        }
        let (rows, cols) = self.shape();
        let out: Vec<S> = {
            let d = self.data();
            let b = bias.data();
            d.iter()
                .enumerate()
                .map(|(i, &v)| v + b[i % cols])
                .collect()
        };
        let (a, bt) = (self.clone(), bias.clone());
        Ok(Tensor::from_op(
            rows,
            cols,
            out,
            vec![self.clone(), bias.clone()],
            move |node| {
                let g = node.grad.borrow();
                if a.needs_grad() {
                    let mut ga = a.grad_mut();
                    for i in 0..g.len() {
                        ga[i] += g[i];
                    }
                }
                if bt.needs_grad() {
                    let mut gb = bt.grad_mut();
                    for r in 0..rows {
                        for c in 0..cols {
                            gb[c] += g[r * cols + c];
                        }
                    }
                }
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::parameter(rows, cols, data.to_vec())
    }

    #[test]
    fn matmul_identity_preserves_values() {
        let a = param(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let eye = Tensor::constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let y = a.matmul(&eye).unwrap();
        assert_eq!(y.data().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (p, q, r) = (3, 4, 2);
        let a: Vec<f64> = (0..p * q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..q * r).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut expect = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..r {
                for k in 0..q {
                    expect[i * r + j] += a[i * q + k] * b[k * r + j];
                }
            }
        }
        let y = param(p, q, &a).matmul(&param(q, r, &b)).unwrap();
        for (got, want) in y.data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = param(2, 3, &[0.0; 6]);
        let b = param(2, 2, &[0.0; 4]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn matmul_gradients() {
        // y = sum(A*B); dA = ones * B^T, dB = A^T * ones
        let a = param(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = param(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        a.matmul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().as_slice(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().as_slice(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn spmm_matches_dense_product() {
        let p = Rc::new(CsrMatrix::from_triplets(
            2,
            3,
            vec![(0, 0, 2.0), (0, 2, 1.0), (1, 1, 3.0)],
        ));
        let x = param(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = Tensor::spmm(&p, &x).unwrap();
        assert_eq!(y.data().as_slice(), &[7.0, 10.0, 9.0, 12.0]);
        y.sum().backward().unwrap();
        // dX = P^T * ones(2x2)
        assert_eq!(x.grad().as_slice(), &[2.0, 2.0, 3.0, 3.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_known_values() {
        let x = param(1, 3, &[0.0, 2.0, -2.0]);
        let y = x.sigmoid();
        let d = y.data();
        assert!((d[0] - 0.5).abs() < 1e-15);
        assert!((d[1] - 0.8807970779778823).abs() < 1e-15);
        assert!((d[2] - (1.0 - 0.8807970779778823)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let x = param(1, 1, &[0.0]);
        x.sigmoid().backward().unwrap();
        assert!((x.grad()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        // a naive exp(500) overflows and turns the quotient into NaN
        let x = param(1, 2, &[500.0, -500.0]);
        let y = x.sigmoid();
        assert_eq!(y.data()[0], 1.0);
        assert!(y.data()[1] > 0.0 && y.data()[1] < 1e-200);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn leaky_relu_values_and_grads() {
        let x = param(1, 3, &[2.0, -2.0, 0.0]);
        let y = x.leaky_relu(0.01);
        assert_eq!(y.data().as_slice(), &[2.0, -0.02, 0.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().as_slice(), &[1.0, 0.01, 1.0]);
    }

    #[test]
    fn tanh_gradient() {
        let x = param(1, 1, &[0.7]);
        x.tanh().backward().unwrap();
        let y = 0.7f64.tanh();
        assert!((x.grad()[0] - (1.0 - y * y)).abs() < 1e-15);
    }

    #[test]
    fn ln_and_clamp_compose_for_cross_entropy() {
        let y = param(1, 1, &[0.5]);
        let loss = y.clamp(1e-7, 1.0 - 1e-7).ln().scale(-1.0);
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-15);
        loss.backward().unwrap();
        assert!((y.grad()[0] - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn clamp_gradient_dies_outside_interval() {
        let x = param(1, 3, &[-5.0, 0.3, 5.0]);
        x.clamp(0.0, 1.0).sum().backward().unwrap();
        assert_eq!(x.grad().as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn clamp_gradient_is_one_at_boundaries() {
        let x = param(1, 2, &[0.0, 1.0]);
        x.clamp(0.0, 1.0).sum().backward().unwrap();
        assert_eq!(x.grad().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn abs_sum_value_and_subgradient() {
        let x = param(1, 3, &[-1.5, 0.0, 2.5]);
        let y = x.abs_sum();
        assert_eq!(y.item(), 4.0);
        y.backward().unwrap();
        assert_eq!(x.grad().as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn hadamard_and_sub() {
        let a = param(1, 2, &[3.0, 4.0]);
        let b = param(1, 2, &[1.0, 2.0]);
        let y = a.sub(&b).unwrap().hadamard(&a.sub(&b).unwrap()).unwrap();
        assert_eq!(y.data().as_slice(), &[4.0, 4.0]);
        y.sum().backward().unwrap();
        assert_eq!(a.grad().as_slice(), &[4.0, 4.0]);
        assert_eq!(b.grad().as_slice(), &[-4.0, -4.0]);
    }

    #[test]
    fn concat_cols_values_and_split_gradient() {
        let a = param(2, 1, &[1.0, 2.0]);
        let b = param(2, 2, &[3.0, 4.0, 5.0, 6.0]);
        let y = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), (2, 3));
        assert_eq!(y.data().as_slice(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        // weight each output column differently to catch offset bugs
        let w = Tensor::constant(3, 1, vec![1.0, 10.0, 100.0]);
        y.matmul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().as_slice(), &[1.0, 1.0]);
        assert_eq!(b.grad().as_slice(), &[10.0, 100.0, 10.0, 100.0]);
    }

    #[test]
    fn concat_cols_row_mismatch_errors() {
        let a = param(2, 1, &[1.0, 2.0]);
        let b = param(3, 1, &[1.0, 2.0, 3.0]);
        assert!(Tensor::concat_cols(&[&a, &b]).is_err());
    }

    #[test]
    fn gather_rows_with_repeats_scatter_adds() {
        let x = param(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(y.data().as_slice(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().as_slice(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_rows_bounds_check() {
        let x = param(2, 1, &[1.0, 2.0]);
        assert!(x.gather_rows(&[2]).is_err());
    }

    #[test]
    fn repeat_row_grad_is_column_sum() {
        let x = param(1, 2, &[1.0, 2.0]);
        let y = x.repeat_row(3).unwrap();
        assert_eq!(y.shape(), (3, 2));
        y.sum().backward().unwrap();
        assert_eq!(x.grad().as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn add_bias_broadcasts_and_accumulates() {
        let x = param(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = param(1, 2, &[0.5, -0.5]);
        let y = x.add_bias(&b).unwrap();
        assert_eq!(y.data().as_slice(), &[1.5, 0.5, 1.5, 0.5]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().as_slice(), &[2.0, 2.0]);
        assert_eq!(x.grad().as_slice(), &[1.0; 4]);
    }

    #[test]
    fn chain_through_dense_layer() {
        // y = sigmoid(x . w), x = [1, 2], w = [0.5, -0.25]^T => z = 0
        let x = param(1, 2, &[1.0, 2.0]);
        let w = param(2, 1, &[0.5, -0.25]);
        let y = x.matmul(&w).unwrap().sigmoid();
        assert!((y.item() - 0.5).abs() < 1e-15);
        y.backward().unwrap();
        assert_eq!(w.grad().as_slice(), &[0.25, 0.5]);
        assert_eq!(x.grad().as_slice(), &[0.125, -0.0625]);
    }
}
