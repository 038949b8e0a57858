//! Neural label count.
//!
//! A counter network looks at a support embedding, a query embedding and the
//! mean support embedding `z`, and classifies the combined label count of the
//! pair into `2·way` classes (class `c`, 1-based, means `c` labels). At
//! inference each support sample votes for `M − B`, its predicted combined
//! count minus its own known count, and the query's count is the most voted
//! value in `1..=way`.

use thiserror::Error;

use crate::embedding::BoundMlp;
use crate::numeric::{NumericError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlcError {
    #[error("combined count {count} outside [2, {max}]")]
    CountOutOfRange { count: usize, max: usize },
    #[error("expected {expected} pair targets, got {found}")]
    PairCount { expected: usize, found: usize },
    #[error("support set is empty")]
    EmptySupport,
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Mean of the support embeddings, shape `[1, n]`.
pub fn context_vector(tape: &mut Tape, support: Var) -> Result<Var, NlcError> {
    let ns = tape.value(support).rows();
    if ns == 0 {
        return Err(NlcError::EmptySupport);
    }
    let avg = tape.constant(Tensor::filled(1, ns, 1.0 / ns as f64));
    Ok(tape.matmul(avg, support)?)
}

/// Index of the (support `i`, query `q`) pair in every pair-major tensor.
pub fn pair_index(support: usize, query: usize, support_len: usize) -> usize {
    query * support_len + support
}

/// Rows `[f(x_i) ‖ f(q) ‖ z]` for every pair, ordered by [`pair_index`].
pub fn pair_inputs(tape: &mut Tape, support: Var, queries: Var) -> Result<Var, NlcError> {
    let ns = tape.value(support).rows();
    let nq = tape.value(queries).rows();
    let z = context_vector(tape, support)?;
    let pairs = ns * nq;
    let mut take_support = Tensor::zeros(pairs, ns);
    let mut take_query = Tensor::zeros(pairs, nq);
    for q in 0..nq {
        for i in 0..ns {
            let p = pair_index(i, q, ns);
            take_support.data_mut()[p * ns + i] = 1.0;
            take_query.data_mut()[p * nq + q] = 1.0;
        }
    }
    let take_support = tape.constant(take_support);
    let take_query = tape.constant(take_query);
    let repeat = tape.constant(Tensor::filled(pairs, 1, 1.0));
    let xs = tape.matmul(take_support, support)?;
    let qs = tape.matmul(take_query, queries)?;
    let zs = tape.matmul(repeat, z)?;
    Ok(tape.concat_cols(&[xs, qs, zs])?)
}

/// Count logits `[support·queries, 2·way]`.
pub fn pair_logits(
    tape: &mut Tape,
    counter: &BoundMlp,
    support: Var,
    queries: Var,
) -> Result<Var, NlcError> {
    let input = pair_inputs(tape, support, queries)?;
    Ok(counter.forward(tape, input)?)
}

/// Predicted combined count: 1-based argmax, ties to the lowest index.
pub fn predict_pair_count(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best + 1
}

/// Cross-entropy `−Σ_pairs log softmax(logits)[count − 1]`.
pub fn count_loss(tape: &mut Tape, logits: Var, counts: &[usize]) -> Result<Var, NlcError> {
    let (rows, classes) = (tape.value(logits).rows(), tape.value(logits).cols());
    if counts.len() != rows {
        return Err(NlcError::PairCount {
            expected: rows,
            found: counts.len(),
        });
    }
    let mut pick = Tensor::zeros(rows, classes);
    for (p, &c) in counts.iter().enumerate() {
        if c < 2 || c > classes {
            return Err(NlcError::CountOutOfRange {
                count: c,
                max: classes,
            });
        }
        pick.data_mut()[p * classes + c - 1] = 1.0;
    }
    let pick = tape.constant(pick);
    let log_probs = tape.log_softmax(logits)?;
    let picked = tape.mul(pick, log_probs)?;
    let total = tape.sum(picked)?;
    Ok(tape.neg(total)?)
}

/// `L_E = L_head + λ·L_count`.
pub fn joint_loss(
    tape: &mut Tape,
    head_loss: Var,
    count_loss: Var,
    lambda: f64,
) -> Result<Var, NlcError> {
    let weighted = tape.scale(count_loss, lambda)?;
    Ok(tape.add(head_loss, weighted)?)
}

/// Combined count targets for every pair, ordered by [`pair_index`].
pub fn pair_targets(support_counts: &[usize], query_counts: &[usize]) -> Vec<usize> {
    query_counts
        .iter()
        .flat_map(|q| support_counts.iter().map(move |b| b + q))
        .collect()
}

/// `h(m)` for `m` in `0..=2·way`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountHistogram {
    bins: Vec<usize>,
}

impl CountHistogram {
    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn get(&self, m: usize) -> usize {
        self.bins.get(m).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.bins.iter().sum()
    }
}

/// Histogram of `M_i − B_i`, clamped into `[0, 2·way]`.
pub fn count_histogram(predicted: &[usize], support_counts: &[usize], way: usize) -> CountHistogram {
    assert_eq!(predicted.len(), support_counts.len(), "one prediction per support sample");
    let top = 2 * way;
    let mut bins = vec![0; top + 1];
    for (&m, &b) in predicted.iter().zip(support_counts) {
        let diff = (m as i64 - b as i64).clamp(0, top as i64) as usize;
        bins[diff] += 1;
    }
    CountHistogram { bins }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote {
    pub count: usize,
    /// No support sample voted for any count in `1..=way`; `count` is 1.
    pub fallback: bool,
}

/// Majority vote over `1..=way`. Ties go to the tied count whose implied
/// combined count `m + B_i` receives the most softmax mass summed over the
/// support samples, then to the smaller count.
pub fn vote_label_count(
    histogram: &CountHistogram,
    pair_probs: &[Vec<f64>],
    support_counts: &[usize],
    way: usize,
) -> Vote {
    let best = (1..=way).map(|m| histogram.get(m)).max().unwrap_or(0);
    if best == 0 {
        return Vote {
            count: 1,
            fallback: true,
        };
    }
    let tied: Vec<usize> = (1..=way).filter(|&m| histogram.get(m) == best).collect();
    if tied.len() == 1 {
        return Vote {
            count: tied[0],
            fallback: false,
        };
    }
    let mass = |m: usize| -> f64 {
        pair_probs
            .iter()
            .zip(support_counts)
            .filter_map(|(probs, &b)| probs.get(m + b - 1))
            .sum()
    };
    let mut winner = tied[0];
    let mut winner_mass = mass(winner);
    for &m in &tied[1..] {
        let w = mass(m);
        if w > winner_mass {
            winner = m;
            winner_mass = w;
        }
    }
    Vote {
        count: winner,
        fallback: false,
    }
}

/// Votes a label count for every query from pair logits laid out by
/// [`pair_index`].
pub fn predict_query_counts(logits: &Tensor, support_counts: &[usize], way: usize) -> Vec<Vote> {
    let ns = support_counts.len();
    let nq = logits.rows().checked_div(ns).unwrap_or(0);
    let softmax = |row: &[f64]| -> Vec<f64> {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let t: f64 = e.iter().sum();
        e.into_iter().map(|v| v / t).collect()
    };
    (0..nq)
        .map(|q| {
            let rows: Vec<&[f64]> = (0..ns).map(|i| logits.row(pair_index(i, q, ns))).collect();
            let predicted: Vec<usize> = rows.iter().map(|r| predict_pair_count(r)).collect();
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| softmax(r)).collect();
            let hist = count_histogram(&predicted, support_counts, way);
            vote_label_count(&hist, &probs, support_counts, way)
        })
        .collect()
}
