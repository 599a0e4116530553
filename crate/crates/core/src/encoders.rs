//! Graph convolution encoders over the interaction node space.
//!
//! A branch encoder repeatedly propagates node features through its
//! graph: multiply by the precomputed coefficient matrix, apply the layer
//! weight, pass through a leaky rectifier. The directed flavor runs an
//! incoming and an outgoing propagation with separate weights and sums
//! them.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::EncoderKind;
use crate::diff::Tensor;
use crate::error::{DgektError, Result};
use crate::graph::{
    cahg_propagation_coefficients, clique_expand_concepts, dtg_propagation_coefficients,
    symmetrize_transitions, undirected_propagation_coefficients, GraphSet,
};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Parameter with entries drawn uniformly from `[-bound, bound)`.
/// Sampling happens in `f64` so a given seed yields the same values for
/// every scalar type, up to rounding.
pub(crate) fn uniform_parameter<S: Scalar>(
    rows: usize,
    cols: usize,
    bound: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<S> {
    let data: Vec<S> = (0..rows * cols)
        .map(|_| S::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::parameter(rows, cols, data)
}

/// Fan-in scaled init for a dense weight of shape in x out.
pub(crate) fn dense_weight<S: Scalar>(
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<S> {
    uniform_parameter(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
}

/// Node embedding table, one row per interaction node.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<S: Scalar> {
    pub weights: Tensor<S>,
}

impl<S: Scalar> EmbeddingTable<S> {
    pub fn new(num_nodes: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingTable<S> {
        EmbeddingTable {
            weights: uniform_parameter(num_nodes, dim, 1.0 / (dim as f64).sqrt(), rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SymmetricConvLayer<S: Scalar> {
    pub weight: Tensor<S>,
}

#[derive(Debug, Clone)]
pub struct DirectedConvLayer<S: Scalar> {
    pub weight_in: Tensor<S>,
    pub weight_out: Tensor<S>,
}

/// One propagation step through a symmetric coefficient matrix:
/// `leaky_relu(coeff * x * w)`.
pub fn symmetric_conv_forward<S: Scalar>(
    coeff: &Rc<CsrMatrix<S>>,
    x: &Tensor<S>,
    layer: &SymmetricConvLayer<S>,
) -> Result<Tensor<S>> {
    Ok(Tensor::spmm(coeff, x)?
        .matmul(&layer.weight)?
        .leaky_relu(S::of(LEAKY_SLOPE)))
}

/// One propagation step through a directed graph, running the incoming
/// and outgoing coefficient matrices with their own weights:
/// `leaky_relu(p_in * x * w_in) + leaky_relu(p_out * x * w_out)`.
pub fn directed_conv_forward<S: Scalar>(
    p_in: &Rc<CsrMatrix<S>>,
    p_out: &Rc<CsrMatrix<S>>,
    x: &Tensor<S>,
    layer: &DirectedConvLayer<S>,
) -> Result<Tensor<S>> {
    let slope = S::of(LEAKY_SLOPE);
    let incoming = Tensor::spmm(p_in, x)?
        .matmul(&layer.weight_in)?
        .leaky_relu(slope);
    let outgoing = Tensor::spmm(p_out, x)?
        .matmul(&layer.weight_out)?
        .leaky_relu(slope);
    incoming.add(&outgoing)
}

#[derive(Debug, Clone)]
pub enum Propagation<S: Scalar> {
    Symmetric(Rc<CsrMatrix<S>>),
    Directed {
        incoming: Rc<CsrMatrix<S>>,
        outgoing: Rc<CsrMatrix<S>>,
    },
}

#[derive(Debug, Clone)]
pub enum ConvLayer<S: Scalar> {
    Symmetric(SymmetricConvLayer<S>),
    Directed(DirectedConvLayer<S>),
}

/// A branch encoder: fixed propagation coefficients plus a stack of
/// convolution layers.
#[derive(Debug, Clone)]
pub struct Encoder<S: Scalar> {
    pub kind: EncoderKind,
    pub propagation: Propagation<S>,
    pub layers: Vec<ConvLayer<S>>,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(
        kind: EncoderKind,
        graphs: &GraphSet,
        dim: usize,
        num_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Encoder<S>> {
        let propagation = match kind {
            EncoderKind::Hypergraph => {
                let g = graphs.cahg.as_ref().ok_or_else(|| {
                    DgektError::Data("hypergraph encoder requires the concept hypergraph".into())
                })?;
                Propagation::Symmetric(Rc::new(cahg_propagation_coefficients(g)))
            }
            EncoderKind::ConceptClique => {
                let g = graphs.cahg.as_ref().ok_or_else(|| {
                    DgektError::Data("clique encoder requires the concept hypergraph".into())
                })?;
                let clique = clique_expand_concepts(g);
                Propagation::Symmetric(Rc::new(undirected_propagation_coefficients(&clique)))
            }
            EncoderKind::DirectedTransition => {
                let g = graphs.dtg.as_ref().ok_or_else(|| {
                    DgektError::Data("directed encoder requires the transition graph".into())
                })?;
                let (p_in, p_out) = dtg_propagation_coefficients(g);
                Propagation::Directed {
                    incoming: Rc::new(p_in),
                    outgoing: Rc::new(p_out),
                }
            }
            EncoderKind::UndirectedTransition => {
                let g = graphs.dtg.as_ref().ok_or_else(|| {
                    DgektError::Data("undirected encoder requires the transition graph".into())
                })?;
                let sym = symmetrize_transitions(&g.counts, g.num_nodes);
                Propagation::Symmetric(Rc::new(undirected_propagation_coefficients(&sym)))
            }
        };
        let layers = (0..num_layers)
            .map(|_| match propagation {
                Propagation::Symmetric(_) => ConvLayer::Symmetric(SymmetricConvLayer {
                    weight: dense_weight(dim, dim, rng),
                }),
                Propagation::Directed { .. } => ConvLayer::Directed(DirectedConvLayer {
                    weight_in: dense_weight(dim, dim, rng),
                    weight_out: dense_weight(dim, dim, rng),
                }),
            })
            .collect();
        Ok(Encoder {
            kind,
            propagation,
            layers,
        })
    }

    /// Runs the layer stack over the embedding table.
    pub fn encode(&self, x0: &Tensor<S>) -> Result<Tensor<S>> {
        let mut x = x0.clone();
        for layer in &self.layers {
            x = match (&self.propagation, layer) {
                (Propagation::Symmetric(c), ConvLayer::Symmetric(l)) => {
                    symmetric_conv_forward(c, &x, l)?
                }
                (
                    Propagation::Directed { incoming, outgoing },
                    ConvLayer::Directed(l),
                ) => directed_conv_forward(incoming, outgoing, &x, l)?,
                _ => {
                    return Err(DgektError::Data(
                        "encoder propagation and layer kinds diverge".into(),
                    ))
                }
            };
        }
        Ok(x)
    }

    pub fn parameters(&self) -> Vec<Tensor<S>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                ConvLayer::Symmetric(l) => out.push(l.weight.clone()),
                ConvLayer::Directed(l) => {
                    out.push(l.weight_in.clone());
                    out.push(l.weight_out.clone());
                }
            }
        }
        out
    }
}
