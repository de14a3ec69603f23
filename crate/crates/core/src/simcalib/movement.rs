use crate::graph::Graph;
use crate::numerics::{dot, softmax_in_place, DenseMatrix, SparseMatrix};

/// Attention neighborhood of `i`: its neighbors, plus itself when
/// `include_self` is set or it has no neighbors.
fn neighborhood(graph: &Graph, i: usize, include_self: bool) -> Vec<usize> {
    let mut nb = graph.neighbors(i).to_vec();
    if include_self || nb.is_empty() {
        nb.push(i);
        nb.sort_unstable();
    }
    nb
}

/// Row `i` holds `α_ij = softmax_j LeakyReLU(ẑ_i·ẑ_j / (η_i η_j))` over the
/// attention neighborhood, or the uniform distribution when `uniform` is set.
pub fn movement_attention(
    logits: &DenseMatrix,
    eta: &[usize],
    graph: &Graph,
    slope: f64,
    include_self: bool,
    uniform: bool,
) -> SparseMatrix {
    let rows = (0..graph.num_nodes())
        .map(|i| {
            let nb = neighborhood(graph, i, include_self);
            let mut w: Vec<f64> = if uniform {
                vec![0.0; nb.len()]
            } else {
                nb.iter()
                    .map(|&j| {
                        let s = dot(logits.row(i), logits.row(j)) / (eta[i] as f64 * eta[j] as f64);
                        if s >= 0.0 {
                            s
                        } else {
                            slope * s
                        }
                    })
                    .collect()
            };
            softmax_in_place(&mut w);
            nb.into_iter().zip(w).collect()
        })
        .collect();
    SparseMatrix::from_rows(rows)
}

/// Each row of the logits sorted in descending order.
pub fn sorted_logits(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        out.row_mut(i).sort_by(|a, b| b.total_cmp(a));
    }
    out
}

/// `U_i = Σ_j α_ij η_j ((d_i+1)/(d_j+1))^t z̃_j`, so the per-head movement
/// message is `U W`.
pub fn movement_operator(
    alpha: &SparseMatrix,
    logits: &DenseMatrix,
    eta: &[usize],
    graph: &Graph,
    t: f64,
) -> DenseMatrix {
    let rows = (0..alpha.n())
        .map(|i| {
            let di = (graph.degree(i) + 1) as f64;
            alpha
                .row(i)
                .map(|(j, a)| {
                    let ratio = di / (graph.degree(j) + 1) as f64;
                    (j, a * eta[j] as f64 * ratio.powf(t))
                })
                .collect()
        })
        .collect();
    let c = SparseMatrix::from_rows(rows);
    c.matmul(&sorted_logits(logits))
        .expect("attention operator is N×N over N logit rows")
}
