//! Builders for the two interaction graphs and their propagation
//! coefficients.
//!
//! Both graphs share one node space: every exercise contributes a correct
//! node (even index) and an incorrect node (odd index), see
//! [`crate::data::node_index`].
//!
//! The concept association hypergraph connects interaction nodes through
//! concepts: answering exercises of concept `j` correctly joins hyperedge
//! `2j`, incorrectly hyperedge `2j + 1`. The directed transition graph
//! counts which interaction immediately follows which in the training
//! sequences. Graph construction runs in `f64` regardless of the scalar
//! type models train with; coefficient matrices are cast at the end.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::config::{EncoderKind, Wiring};
use crate::data::{node_index, StudentSequence, Vocabulary};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Incidence structure of the concept association hypergraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptHypergraph {
    pub num_nodes: usize,
    pub num_hyperedges: usize,
    /// (node, hyperedge) pairs, sorted.
    pub incidence: Vec<(usize, usize)>,
    /// Hyperedges each node belongs to.
    pub node_degree: Vec<usize>,
    /// Nodes each hyperedge contains.
    pub hyperedge_degree: Vec<usize>,
}

pub fn build_cahg(vocab: &Vocabulary) -> ConceptHypergraph {
    let num_nodes = vocab.num_nodes();
    let num_hyperedges = 2 * vocab.num_concepts();
    let mut incidence = Vec::new();
    for e in 0..vocab.num_exercises() {
        for &c in vocab.concepts_of(e) {
            incidence.push((2 * e, 2 * c));
        }
        for &c in vocab.concepts_of(e) {
            incidence.push((2 * e + 1, 2 * c + 1));
        }
    }
    let mut node_degree = vec![0usize; num_nodes];
    let mut hyperedge_degree = vec![0usize; num_hyperedges];
    for &(v, h) in &incidence {
        node_degree[v] += 1;
        hyperedge_degree[h] += 1;
    }
    ConceptHypergraph {
        num_nodes,
        num_hyperedges,
        incidence,
        node_degree,
        hyperedge_degree,
    }
}

impl ConceptHypergraph {
    /// Node lists per hyperedge.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_hyperedges];
        for &(v, h) in &self.incidence {
            members[h].push(v);
        }
        members
    }
}

/// Hypergraph convolution coefficients: entry (i, q) sums
/// `1 / (g_j * sqrt(d_i * d_q))` over the hyperedges `j` containing both
/// nodes. One propagation step is then `coeff * X`.
pub fn cahg_propagation_coefficients<S: Scalar>(g: &ConceptHypergraph) -> CsrMatrix<S> {
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for members in g.members() {
        if members.is_empty() {
            continue;
        }
        let w = 1.0 / members.len() as f64;
        for &a in &members {
            let da = g.node_degree[a] as f64;
            for &b in &members {
                let db = g.node_degree[b] as f64;
                triplets.push((a, b, w / (da * db).sqrt()));
            }
        }
    }
    CsrMatrix::from_triplets(g.num_nodes, g.num_nodes, triplets).map(S::of)
}

/// Directed transition structure with its normalized adjacencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    pub num_nodes: usize,
    /// (from, to, times observed), sorted; self transitions included.
    pub counts: Vec<(usize, usize, u64)>,
    /// Row i holds incoming transition frequencies of node i; diagonal
    /// forced to 1 after normalization.
    pub a_in: CsrMatrix<f64>,
    /// Row i holds outgoing transition frequencies of node i; diagonal
    /// forced to 1 after normalization.
    pub a_out: CsrMatrix<f64>,
    /// Row sums of `a_in`.
    pub d_in: Vec<f64>,
    /// Row sums of `a_out`.
    pub d_out: Vec<f64>,
}

/// Counts ordered interaction pairs within each training sequence.
/// Sequences never contribute pairs across their boundaries.
pub fn count_transitions(train: &[StudentSequence], num_nodes: usize) -> Vec<(usize, usize, u64)> {
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for seq in train {
        for pair in seq.steps.windows(2) {
            let from = node_index(pair[0].0, pair[0].1);
            let to = node_index(pair[1].0, pair[1].1);
            assert!(from < num_nodes && to < num_nodes, "step outside node space");
            *counts.entry((from, to)).or_insert(0) += 1;
        }
    }
    counts.into_iter().map(|((f, t), c)| (f, t, c)).collect()
}

pub fn transition_graph_from_counts(
    num_nodes: usize,
    counts: Vec<(usize, usize, u64)>,
) -> TransitionGraph {
    let mut out_sum = vec![0u64; num_nodes];
    let mut in_sum = vec![0u64; num_nodes];
    for &(f, t, c) in &counts {
        out_sum[f] += c;
        in_sum[t] += c;
    }

    // Frequencies normalize over all observed transitions, the self
    // transitions included, but the diagonal itself is then overwritten
    // with the unit self loop.
    let mut a_out_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut a_in_trip: Vec<(usize, usize, f64)> = Vec::new();
    for &(f, t, c) in &counts {
        if f != t {
            a_out_trip.push((f, t, c as f64 / out_sum[f] as f64));
            a_in_trip.push((t, f, c as f64 / in_sum[t] as f64));
        }
    }
    for i in 0..num_nodes {
        a_out_trip.push((i, i, 1.0));
        a_in_trip.push((i, i, 1.0));
    }
    let a_out = CsrMatrix::from_triplets(num_nodes, num_nodes, a_out_trip);
    let a_in = CsrMatrix::from_triplets(num_nodes, num_nodes, a_in_trip);

    let mut d_out = vec![0.0; num_nodes];
    let mut d_in = vec![0.0; num_nodes];
    for (r, _, v) in a_out.iter() {
        d_out[r] += v;
    }
    for (r, _, v) in a_in.iter() {
        d_in[r] += v;
    }

    TransitionGraph {
        num_nodes,
        counts,
        a_in,
        a_out,
        d_in,
        d_out,
    }
}

pub fn build_dtg(train: &[StudentSequence], num_nodes: usize) -> TransitionGraph {
    transition_graph_from_counts(num_nodes, count_transitions(train, num_nodes))
}

/// Directed convolution coefficients. The incoming matrix scales
/// `a_in[i][j]` by `1 / sqrt(d_in[i] * d_out[j])`, the outgoing one
/// scales `a_out[i][j]` by `1 / sqrt(d_out[i] * d_in[j])`.
pub fn dtg_propagation_coefficients<S: Scalar>(
    g: &TransitionGraph,
) -> (CsrMatrix<S>, CsrMatrix<S>) {
    let p_in: Vec<(usize, usize, f64)> = g
        .a_in
        .iter()
        .map(|(i, j, v)| (i, j, v / (g.d_in[i] * g.d_out[j]).sqrt()))
        .collect();
    let p_out: Vec<(usize, usize, f64)> = g
        .a_out
        .iter()
        .map(|(i, j, v)| (i, j, v / (g.d_out[i] * g.d_in[j]).sqrt()))
        .collect();
    (
        CsrMatrix::from_triplets(g.num_nodes, g.num_nodes, p_in).map(S::of),
        CsrMatrix::from_triplets(g.num_nodes, g.num_nodes, p_out).map(S::of),
    )
}

/// Weighted undirected graph with unit self loops, used by the ablation
/// variants that replace one of the structures above.
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    pub num_nodes: usize,
    /// Symmetric weight list including the diagonal, sorted.
    pub weights: Vec<(usize, usize, f64)>,
    pub degree: Vec<f64>,
}

fn undirected_from_weights(
    num_nodes: usize,
    mut weights: Vec<(usize, usize, f64)>,
) -> UndirectedGraph {
    for i in 0..num_nodes {
        weights.push((i, i, 1.0));
    }
    weights.sort_by_key(|&(a, b, _)| (a, b));
    let mut degree = vec![0.0; num_nodes];
    for &(a, _, w) in &weights {
        degree[a] += w;
    }
    UndirectedGraph {
        num_nodes,
        weights,
        degree,
    }
}

/// Clique expansion of the hypergraph: two nodes are adjacent with weight
/// 1 when they share at least one hyperedge.
pub fn clique_expand_concepts(g: &ConceptHypergraph) -> UndirectedGraph {
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for members in g.members() {
        for (ai, &a) in members.iter().enumerate() {
            for &b in &members[ai + 1..] {
                pairs.insert((a, b));
                pairs.insert((b, a));
            }
        }
    }
    let weights = pairs.into_iter().map(|(a, b)| (a, b, 1.0)).collect();
    undirected_from_weights(g.num_nodes, weights)
}

/// Drops transition direction: the weight between two distinct nodes is
/// the total count observed in either direction.
pub fn symmetrize_transitions(
    counts: &[(usize, usize, u64)],
    num_nodes: usize,
) -> UndirectedGraph {
    let mut sym: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for &(f, t, c) in counts {
        if f != t {
            *sym.entry((f.min(t), f.max(t))).or_insert(0) += c;
        }
    }
    let mut weights = Vec::with_capacity(2 * sym.len());
    for (&(a, b), &c) in &sym {
        weights.push((a, b, c as f64));
        weights.push((b, a, c as f64));
    }
    undirected_from_weights(num_nodes, weights)
}

/// Symmetric normalization `w_ij / sqrt(d_i * d_j)`.
pub fn undirected_propagation_coefficients<S: Scalar>(g: &UndirectedGraph) -> CsrMatrix<S> {
    let triplets: Vec<(usize, usize, f64)> = g
        .weights
        .iter()
        .map(|&(i, j, w)| (i, j, w / (g.degree[i] * g.degree[j]).sqrt()))
        .collect();
    CsrMatrix::from_triplets(g.num_nodes, g.num_nodes, triplets).map(S::of)
}

/// The graphs a model variant actually uses. Branches removed by the
/// variant leave their slot empty.
#[derive(Debug, Clone)]
pub struct GraphSet {
    pub cahg: Option<ConceptHypergraph>,
    pub dtg: Option<TransitionGraph>,
}

impl GraphSet {
    pub fn for_wiring(
        wiring: &Wiring,
        vocab: &Vocabulary,
        train: &[StudentSequence],
    ) -> GraphSet {
        let cahg = match wiring.concept_branch {
            Some(EncoderKind::Hypergraph) | Some(EncoderKind::ConceptClique) => {
                Some(build_cahg(vocab))
            }
            _ => None,
        };
        let dtg = match wiring.transition_branch {
            Some(EncoderKind::DirectedTransition) | Some(EncoderKind::UndirectedTransition) => {
                Some(build_dtg(train, vocab.num_nodes()))
            }
            _ => None,
        };
        GraphSet { cahg, dtg }
    }

    /// Both graphs unconditionally, for graph export.
    pub fn full(vocab: &Vocabulary, train: &[StudentSequence]) -> GraphSet {
        GraphSet {
            cahg: Some(build_cahg(vocab)),
            dtg: Some(build_dtg(train, vocab.num_nodes())),
        }
    }
}

/// Structural statistics for reports.
#[derive(Debug, Serialize)]
pub struct GraphSummary {
    pub hypergraph: Option<HypergraphSummary>,
    pub transitions: Option<TransitionSummary>,
}

#[derive(Debug, Serialize)]
pub struct HypergraphSummary {
    pub num_nodes: usize,
    pub num_hyperedges: usize,
    pub incidence_entries: usize,
    /// degree -> how many nodes have it
    pub node_degree_histogram: BTreeMap<usize, usize>,
    /// size -> how many hyperedges have it
    pub hyperedge_degree_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Serialize)]
pub struct TransitionSummary {
    pub num_nodes: usize,
    pub distinct_transitions: usize,
    pub total_transitions: u64,
    /// distinct successors (self excluded) -> node count
    pub out_degree_histogram: BTreeMap<usize, usize>,
    /// distinct predecessors (self excluded) -> node count
    pub in_degree_histogram: BTreeMap<usize, usize>,
}

fn histogram(values: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

pub fn summarize(set: &GraphSet) -> GraphSummary {
    let hypergraph = set.cahg.as_ref().map(|g| HypergraphSummary {
        num_nodes: g.num_nodes,
        num_hyperedges: g.num_hyperedges,
        incidence_entries: g.incidence.len(),
        node_degree_histogram: histogram(g.node_degree.iter().copied()),
        hyperedge_degree_histogram: histogram(g.hyperedge_degree.iter().copied()),
    });
    let transitions = set.dtg.as_ref().map(|g| {
        let mut out_deg = vec![0usize; g.num_nodes];
        let mut in_deg = vec![0usize; g.num_nodes];
        let mut total = 0u64;
        for &(f, t, c) in &g.counts {
            total += c;
            if f != t {
                out_deg[f] += 1;
                in_deg[t] += 1;
            }
        }
        TransitionSummary {
            num_nodes: g.num_nodes,
            distinct_transitions: g.counts.len(),
            total_transitions: total,
            out_degree_histogram: histogram(out_deg.into_iter()),
            in_degree_histogram: histogram(in_deg.into_iter()),
        }
    });
    GraphSummary {
        hypergraph,
        transitions,
    }
}
