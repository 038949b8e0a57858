//! Relation head with binary relevance: a learned module scores every
//! (query, class mean) pair independently.

use serde::{Deserialize, Serialize};

use crate::embedding::BoundMlp;
use crate::episodes::LabelVector;
use crate::numeric::{Tape, Tensor, Var};

use super::proto::{binary_targets, compute_prototypes};
use super::HeadError;

/// Probabilities are clamped to this margin before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationLoss {
    Mse,
    #[default]
    Bce,
}

impl std::str::FromStr for RelationLoss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(Self::Mse),
            "bce" => Ok(Self::Bce),
            other => Err(format!("unknown relation loss {other:?} (expected mse or bce)")),
        }
    }
}

/// One-hot row selectors that repeat `rows` entries `repeat` times in the
/// pattern needed to pair every query with every class.
fn pair_selector(pairs: usize, rows: usize, pick: impl Fn(usize) -> usize) -> Tensor {
    let mut sel = Tensor::zeros(pairs, rows);
    for p in 0..pairs {
        sel.data_mut()[p * rows + pick(p)] = 1.0;
    }
    sel
}

/// Relation scores `[queries, way]`, each in `(0, 1)`.
pub fn relation_scores(
    tape: &mut Tape,
    module: &BoundMlp,
    support: Var,
    labels: &[LabelVector],
    queries: Var,
    way: usize,
) -> Result<Var, HeadError> {
    let means = compute_prototypes(tape, support, labels, way)?;
    let nq = tape.value(queries).rows();
    let pairs = nq * way;
    // pair p = q * way + j
    let take_query = tape.constant(pair_selector(pairs, nq, |p| p / way));
    let take_class = tape.constant(pair_selector(pairs, way, |p| p % way));
    let q_rows = tape.matmul(take_query, queries)?;
    let c_rows = tape.matmul(take_class, means)?;
    let input = tape.concat_cols(&[q_rows, c_rows])?;
    let out = module.forward(tape, input)?;
    Ok(tape.reshape(out, vec![nq, way])?)
}

/// Relation training loss, minimized at `r = y` in both modes.
///
/// `Mse` is `Σ (r − y)²`; `Bce` is `−Σ [y ln r + (1 − y) ln(1 − r)]` with `r`
/// clamped to `[1e-7, 1 − 1e-7]`.
pub fn relation_loss(
    tape: &mut Tape,
    scores: Var,
    truth: &[LabelVector],
    mode: RelationLoss,
) -> Result<Var, HeadError> {
    let way = tape.value(scores).cols();
    let target = binary_targets(truth, way)?;
    if target.rows() != tape.value(scores).rows() {
        return Err(HeadError::QueryCount {
            scores: tape.value(scores).rows(),
            labels: truth.len(),
        });
    }
    match mode {
        RelationLoss::Mse => {
            let y = tape.constant(target);
            let diff = tape.sub(scores, y)?;
            let sq = tape.square(diff)?;
            Ok(tape.sum(sq)?)
        }
        RelationLoss::Bce => {
            let complement = target.map(|v| 1.0 - v);
            let y = tape.constant(target);
            let not_y = tape.constant(complement);
            let r = tape.clamp(scores, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
            let log_r = tape.ln(r)?;
            let one_minus = tape.affine(r, -1.0, 1.0)?;
            let log_not_r = tape.ln(one_minus)?;
            let pos = tape.mul(y, log_r)?;
            let neg = tape.mul(not_y, log_not_r)?;
            let total = tape.add(pos, neg)?;
            let s = tape.sum(total)?;
            Ok(tape.neg(s)?)
        }
    }
}
