//! Transductive label propagation over a k-nearest-neighbour graph of the
//! episode's support and query embeddings.
//!
//! Columns of every label matrix follow node order: supports first, then
//! queries. Scores are `F* = Φ_X (I − αS)⁻¹` where `Φ_X` holds the
//! L1-normalized support labels and zero query columns.

use serde::{Deserialize, Serialize};

use crate::episodes::LabelVector;
use crate::numeric::{linalg, Tape, Tensor, Var};

use super::HeadError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Damping in `(0, 1)`.
    pub alpha: f64,
    /// RBF scale in `exp(−σ‖a − b‖²)`.
    pub sigma: f64,
    /// Neighbours per node; `None` means `min(10, nodes − 1)`.
    pub knn: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            sigma: 1.0,
            knn: None,
        }
    }
}

impl GraphConfig {
    pub fn neighbours(&self, nodes: usize) -> usize {
        self.knn.unwrap_or(10).min(nodes.saturating_sub(1))
    }
}

/// Symmetric 0/1 mask with `m_ij = 1` when `j` is among the `k` nearest
/// neighbours of `i` or vice versa. Distance ties go to the lower index.
pub fn knn_mask(distances: &Tensor, k: usize) -> Tensor {
    let n = distances.rows();
    let mut mask = Tensor::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            distances
                .get(i, a)
                .total_cmp(&distances.get(i, b))
                .then(a.cmp(&b))
        });
        for &j in others.iter().take(k) {
            mask.data_mut()[i * n + j] = 1.0;
            mask.data_mut()[j * n + i] = 1.0;
        }
    }
    mask
}

/// Affinity matrix `W`: RBF weights on k-NN edges, symmetrized by elementwise
/// max, zero diagonal.
pub fn build_graph(tape: &mut Tape, nodes: Var, sigma: f64, knn: usize) -> Result<Var, HeadError> {
    let n = tape.value(nodes).rows();
    if n < 2 {
        return Err(HeadError::Graph(format!("graph needs at least 2 nodes, got {n}")));
    }
    if !(sigma > 0.0) {
        return Err(HeadError::Graph(format!("sigma must be positive, got {sigma}")));
    }
    if knn == 0 || knn >= n {
        return Err(HeadError::Graph(format!(
            "k_nn must lie in [1, {}), got {knn}",
            n
        )));
    }
    let dist = tape.sq_dist_rows(nodes, nodes)?;
    // The kernel is symmetric in (i, j), so max(W, Wᵀ) over kNN-masked
    // weights equals the full kernel masked by the symmetrized kNN mask.
    let mask = tape.constant(knn_mask(tape.value(dist), knn));
    let kernel = tape.scale(dist, -sigma)?;
    let kernel = tape.exp(kernel)?;
    Ok(tape.mul(kernel, mask)?)
}

/// Degrees at or below this count as isolated; `d^{-3/2}` in the gradient
/// overflows for underflowed kernel sums.
pub const MIN_DEGREE: f64 = 1e-12;

/// `S = D^{-1/2} W D^{-1/2}`; nodes with (numerically) zero degree first
/// receive a unit self-loop.
pub fn normalize_graph(tape: &mut Tape, w: Var) -> Result<Var, HeadError> {
    let n = tape.value(w).rows();
    let isolated: Vec<usize> = (0..n)
        .filter(|&i| tape.value(w).row(i).iter().sum::<f64>() <= MIN_DEGREE)
        .collect();
    let w = if isolated.is_empty() {
        w
    } else {
        let mut loops = Tensor::zeros(n, n);
        for i in isolated {
            loops.data_mut()[i * n + i] = 1.0;
        }
        let loops = tape.constant(loops);
        tape.add(w, loops)?
    };
    let degree = tape.row_sum(w)?;
    let inv_sqrt = tape.pow(degree, -0.5)?;
    let inv_sqrt_t = tape.transpose(inv_sqrt)?;
    let outer = tape.matmul(inv_sqrt, inv_sqrt_t)?;
    Ok(tape.mul(w, outer)?)
}

/// `S` for the RBF k-NN graph over `nodes`, computed in the log domain:
/// `log S_ij = −σ‖a_i − a_j‖² − ½(log d_i + log d_j)` on mask edges.
///
/// Equal to `normalize_graph(build_graph(..))`, but degrees never underflow
/// to zero when embeddings are far apart, so no node is spuriously isolated.
pub fn graph_operator(tape: &mut Tape, nodes: Var, sigma: f64, knn: usize) -> Result<Var, HeadError> {
    let n = tape.value(nodes).rows();
    if n < 2 {
        return Err(HeadError::Graph(format!("graph needs at least 2 nodes, got {n}")));
    }
    if !(sigma > 0.0) {
        return Err(HeadError::Graph(format!("sigma must be positive, got {sigma}")));
    }
    if knn == 0 || knn >= n {
        return Err(HeadError::Graph(format!("k_nn must lie in [1, {n}), got {knn}")));
    }
    let dist = tape.sq_dist_rows(nodes, nodes)?;
    let mask_t = knn_mask(tape.value(dist), knn);
    let log_w = tape.scale(dist, -sigma)?;

    // Shift each row by its largest edge log-weight; the shift cancels
    // exactly in log d_i, so it is held constant.
    let mut shift = Tensor::zeros(n, n);
    let mut shift_col = Tensor::zeros(n, 1);
    for i in 0..n {
        let c = (0..n)
            .filter(|&j| mask_t.get(i, j) > 0.0)
            .map(|j| tape.value(log_w).get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        shift_col.data_mut()[i] = c;
        shift.data_mut()[i * n..(i + 1) * n].fill(c);
    }
    let mask = tape.constant(mask_t);
    let shift = tape.constant(shift);
    let shift_col = tape.constant(shift_col);

    // Off-mask entries are zeroed before exp so the diagonal cannot overflow.
    let shifted = tape.sub(log_w, shift)?;
    let shifted = tape.mul(shifted, mask)?;
    let scaled = tape.exp(shifted)?;
    let scaled = tape.mul(scaled, mask)?;
    let row = tape.row_sum(scaled)?;
    let log_row = tape.ln(row)?;
    let log_degree = tape.add(log_row, shift_col)?;

    let ones = tape.constant(Tensor::filled(1, n, 1.0));
    let by_row = tape.matmul(log_degree, ones)?;
    let by_col = tape.transpose(by_row)?;
    let both = tape.add(by_row, by_col)?;
    let half = tape.scale(both, 0.5)?;
    let log_s = tape.sub(log_w, half)?;
    let log_s = tape.mul(log_s, mask)?;
    let s = tape.exp(log_s)?;
    Ok(tape.mul(s, mask)?)
}

/// Label matrices `[way, support + queries]`: `Φ_X` with zero query columns,
/// and `Φ` with the queries' normalized ground truth filled in.
pub fn label_matrices(
    support: &[LabelVector],
    queries: &[LabelVector],
    way: usize,
) -> Result<(Tensor, Tensor), HeadError> {
    let cols = support.len() + queries.len();
    let mut known = Tensor::zeros(way, cols);
    let mut full = Tensor::zeros(way, cols);
    for (i, y) in support.iter().chain(queries).enumerate() {
        if y.len() != way {
            return Err(HeadError::LabelWidth {
                expected: way,
                found: y.len(),
            });
        }
        for (k, v) in y.normalized().into_iter().enumerate() {
            full.data_mut()[k * cols + i] = v;
            if i < support.len() {
                known.data_mut()[k * cols + i] = v;
            }
        }
    }
    Ok((known, full))
}

fn check_alpha(alpha: f64) -> Result<(), HeadError> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(HeadError::Graph(format!("alpha must lie in [0, 1), got {alpha}")))
    }
}

/// `F* = Φ_X (I − αS)⁻¹` with the inverse recorded on the tape.
pub fn propagate(tape: &mut Tape, known: Var, s: Var, alpha: f64) -> Result<Var, HeadError> {
    check_alpha(alpha)?;
    let n = tape.value(s).rows();
    let eye = tape.constant(Tensor::identity(n));
    let scaled = tape.scale(s, alpha)?;
    let system = tape.sub(eye, scaled)?;
    let inv = tape.inverse(system)?;
    Ok(tape.matmul(known, inv)?)
}

/// Same closed form as [`propagate`], via an LU solve and without gradients.
pub fn propagate_solve(known: &Tensor, s: &Tensor, alpha: f64) -> Result<Tensor, HeadError> {
    check_alpha(alpha)?;
    let n = s.rows();
    let system = Tensor::identity(n).zip_map(s, |i, v| i - alpha * v);
    Ok(linalg::solve_right(known, &system)?)
}

/// Iterates `F ← α F S + Φ_X` from `F = Φ_X` until the largest update drops
/// below `tolerance` or `max_iters` is reached. Its fixed point is the closed
/// form of [`propagate`]; the classic `(1 − α)`-weighted recursion converges
/// to the same matrix scaled by `1 − α`.
pub fn propagate_iterative(
    known: &Tensor,
    s: &Tensor,
    alpha: f64,
    tolerance: f64,
    max_iters: usize,
) -> Result<(Tensor, usize), HeadError> {
    check_alpha(alpha)?;
    let mut f = known.clone();
    for iter in 1..=max_iters {
        let next = f
            .matmul(s)?
            .zip_map(known, |fs, phi| alpha * fs + phi);
        let delta = next.max_abs_diff(&f);
        f = next;
        if delta < tolerance {
            return Ok((f, iter));
        }
    }
    Ok((f, max_iters))
}

/// `‖Φ − F*‖²` (squared Frobenius norm).
pub fn lp_loss(tape: &mut Tape, scores: Var, full: Var) -> Result<Var, HeadError> {
    let diff = tape.sub(full, scores)?;
    let sq = tape.square(diff)?;
    Ok(tape.sum(sq)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_operator_matches_two_step_normalization() {
        let mut rng = crate::rng::seeded(11);
        for knn in [1, 3, 6] {
            let pts = Tensor::new(
                vec![7, 3],
                (0..21).map(|_| rand::Rng::random_range(&mut rng, -1.5..1.5)).collect(),
            )
            .unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(pts);
            let w = build_graph(&mut tape, x, 0.7, knn).unwrap();
            let two_step = normalize_graph(&mut tape, w).unwrap();
            let direct = graph_operator(&mut tape, x, 0.7, knn).unwrap();
            assert!(tape.value(two_step).max_abs_diff(tape.value(direct)) < 1e-12);
        }
    }

    #[test]
    fn graph_operator_survives_kernel_underflow() {
        // Squared distances of 10^4 underflow exp(−σd²) to exactly zero.
        let pts = Tensor::from_rows(&[vec![0.0], vec![100.0], vec![200.0]]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(pts.clone());
        let w = build_graph(&mut tape, x, 1.0, 1).unwrap();
        assert!(tape.value(w).data().iter().all(|&v| v == 0.0));
        let s = graph_operator(&mut tape, x, 1.0, 1).unwrap();
        // Node 1 has two equidistant neighbours; the end nodes hang off it.
        let h = 0.5f64.sqrt();
        let expected = Tensor::from_rows(&[vec![0.0, h, 0.0], vec![h, 0.0, h], vec![0.0, h, 0.0]]).unwrap();
        assert!(tape.value(s).max_abs_diff(&expected) < 1e-12);
    }
    use crate::rng::seeded;
    use rand::Rng;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector::new(bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    fn normalize(w: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let w = tape.constant(w.clone());
        let s = normalize_graph(&mut tape, w).unwrap();
        tape.value(s).clone()
    }

    #[test]
    fn identical_neighbours_get_unit_weight() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap());
        let w = build_graph(&mut tape, x, 1.0, 1).unwrap();
        assert_eq!(tape.value(w).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn unit_distance_weight() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap());
        let w = build_graph(&mut tape, x, 1.0, 1).unwrap();
        assert!((tape.value(w).get(0, 1) - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn non_neighbour_has_zero_weight() {
        // node 0 and node 2 are never within each other's single nearest neighbour
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::from_rows(&[vec![0.0], vec![0.1], vec![5.0], vec![5.1]]).unwrap());
        let w = build_graph(&mut tape, x, 1.0, 1).unwrap();
        let w = tape.value(w);
        assert_eq!(w.get(0, 2), 0.0);
        assert_eq!(w.get(1, 3), 0.0);
        assert!(w.get(0, 1) > 0.0);
        assert_eq!(w, &w.transpose());
    }

    #[test]
    fn graph_preconditions() {
        let mut tape = Tape::new();
        let one = tape.constant(Tensor::zeros(1, 2));
        assert!(build_graph(&mut tape, one, 1.0, 1).is_err());
        let two = tape.constant(Tensor::zeros(2, 2));
        assert!(build_graph(&mut tape, two, 0.0, 1).is_err());
        assert!(build_graph(&mut tape, two, 1.0, 2).is_err());
    }

    #[test]
    fn two_node_normalization() {
        let w = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(normalize(&w), w);
    }

    #[test]
    fn empty_graph_normalizes_to_identity() {
        assert_eq!(normalize(&Tensor::zeros(3, 3)), Tensor::identity(3));
    }

    #[test]
    fn normalization_is_scale_free() {
        let w = Tensor::from_rows(&[
            vec![0.0, 0.3, 0.1],
            vec![0.3, 0.0, 0.7],
            vec![0.1, 0.7, 0.0],
        ])
        .unwrap();
        let scaled = w.map(|v| 4.5 * v);
        assert!(normalize(&w).max_abs_diff(&normalize(&scaled)) < 1e-15);
    }

    #[test]
    fn alpha_zero_returns_known_labels() {
        let (known, _) = label_matrices(&[lv(&[1, 0]), lv(&[1, 1])], &[lv(&[0, 1])], 2).unwrap();
        let s = normalize(&Tensor::from_rows(&[
            vec![0.0, 0.5, 0.2],
            vec![0.5, 0.0, 0.9],
            vec![0.2, 0.9, 0.0],
        ])
        .unwrap());
        let mut tape = Tape::new();
        let k = tape.constant(known.clone());
        let sv = tape.constant(s);
        let f = propagate(&mut tape, k, sv, 0.0).unwrap();
        assert_eq!(tape.value(f), &known);
    }

    #[test]
    fn two_node_closed_form() {
        let s = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let known = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        // (I − αS)⁻¹ for [[1, −α], [−α, 1]] is [[1, α], [α, 1]] / (1 − α²)
        let alpha: f64 = 0.99;
        let det = 1.0 - alpha * alpha;
        let expected = [1.0 / det, alpha / det];
        let mut tape = Tape::new();
        let k = tape.constant(known.clone());
        let sv = tape.constant(s.clone());
        let f = propagate(&mut tape, k, sv, alpha).unwrap();
        for (got, want) in tape.value(f).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-11, "{got} vs {want}");
        }
        let solved = propagate_solve(&known, &s, alpha).unwrap();
        assert!(solved.max_abs_diff(tape.value(f)) < 1e-11);
    }

    #[test]
    fn closed_form_matches_iteration() {
        let mut rng = seeded(11);
        for _ in 0..5 {
            let n = 12;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::from_rows(&rows).unwrap());
            let w = build_graph(&mut tape, x, 1.0, 4).unwrap();
            let s = normalize_graph(&mut tape, w).unwrap();
            let s = tape.value(s).clone();
            let support: Vec<LabelVector> = (0..8).map(|i| lv(if i % 2 == 0 { &[1, 0] } else { &[1, 1] })).collect();
            let queries: Vec<LabelVector> = (0..4).map(|_| lv(&[0, 1])).collect();
            let (known, _) = label_matrices(&support, &queries, 2).unwrap();
            let closed = propagate_solve(&known, &s, 0.99).unwrap();
            let (iterated, _) = propagate_iterative(&known, &s, 0.99, 1e-12, 10_000).unwrap();
            assert!(closed.max_abs_diff(&iterated) < 1e-8);
        }
    }

    #[test]
    fn loss_hand_values() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::filled(2, 2, 0.3));
        let b = tape.constant(Tensor::filled(2, 2, 0.4));
        let l = lp_loss(&mut tape, a, b).unwrap();
        assert!((tape.value(l).item().unwrap() - 0.04).abs() < 1e-15);
        let l0 = lp_loss(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(l0).item().unwrap(), 0.0);
    }

    #[test]
    fn label_matrix_layout() {
        let (known, full) = label_matrices(&[lv(&[1, 1])], &[lv(&[0, 1])], 2).unwrap();
        assert_eq!(known.data(), &[0.5, 0.0, 0.5, 0.0]);
        assert_eq!(full.data(), &[0.5, 0.0, 0.5, 1.0]);
    }
}
