//! Multi-label prototypes: a sample carrying several classes contributes to
//! each of their prototypes.

use crate::episodes::LabelVector;
use crate::numeric::{Tape, Tensor, Var};

use super::HeadError;

/// `[way, support]` matrix whose row `k` averages the supporters of class `k`.
pub fn class_mean_weights(labels: &[LabelVector], way: usize) -> Result<Tensor, HeadError> {
    let n = labels.len();
    let mut weights = Tensor::zeros(way, n);
    for k in 0..way {
        let members: Vec<usize> = (0..n)
            .filter(|&i| labels[i].len() == way && labels[i].contains(k))
            .collect();
        if members.is_empty() {
            return Err(HeadError::EmptyClass(k));
        }
        let w = 1.0 / members.len() as f64;
        for i in members {
            weights.data_mut()[k * n + i] = w;
        }
    }
    if let Some(bad) = labels.iter().find(|l| l.len() != way) {
        return Err(HeadError::LabelWidth {
            expected: way,
            found: bad.len(),
        });
    }
    Ok(weights)
}

/// Prototype matrix `[way, n]`; row `k` is the mean embedding of class `k`.
pub fn compute_prototypes(
    tape: &mut Tape,
    support: Var,
    labels: &[LabelVector],
    way: usize,
) -> Result<Var, HeadError> {
    if tape.value(support).rows() != labels.len() {
        return Err(HeadError::SupportCount {
            embeddings: tape.value(support).rows(),
            labels: labels.len(),
        });
    }
    let weights = tape.constant(class_mean_weights(labels, way)?);
    Ok(tape.matmul(weights, support)?)
}

/// Squared Euclidean distances `[queries, way]` from each query to each prototype.
pub fn proto_scores(tape: &mut Tape, prototypes: Var, queries: Var) -> Result<Var, HeadError> {
    Ok(tape.sq_dist_rows(queries, prototypes)?)
}

/// `Σ_q Σ_j (y_qj / ‖y_q‖₁ − softmax(−z_q)_j)²`.
pub fn proto_loss(tape: &mut Tape, distances: Var, truth: &[LabelVector]) -> Result<Var, HeadError> {
    let target = normalized_targets(truth, tape.value(distances).cols())?;
    if target.rows() != tape.value(distances).rows() {
        return Err(HeadError::QueryCount {
            scores: tape.value(distances).rows(),
            labels: truth.len(),
        });
    }
    let target = tape.constant(target);
    let neg = tape.neg(distances)?;
    let probs = tape.softmax(neg)?;
    let diff = tape.sub(probs, target)?;
    let sq = tape.square(diff)?;
    Ok(tape.sum(sq)?)
}

pub(crate) fn normalized_targets(truth: &[LabelVector], way: usize) -> Result<Tensor, HeadError> {
    let rows: Vec<Vec<f64>> = truth.iter().map(LabelVector::normalized).collect();
    targets_from_rows(rows, truth, way)
}

pub(crate) fn binary_targets(truth: &[LabelVector], way: usize) -> Result<Tensor, HeadError> {
    let rows: Vec<Vec<f64>> = truth.iter().map(LabelVector::to_f64).collect();
    targets_from_rows(rows, truth, way)
}

fn targets_from_rows(
    rows: Vec<Vec<f64>>,
    truth: &[LabelVector],
    way: usize,
) -> Result<Tensor, HeadError> {
    if let Some(bad) = truth.iter().find(|l| l.len() != way) {
        return Err(HeadError::LabelWidth {
            expected: way,
            found: bad.len(),
        });
    }
    if rows.is_empty() {
        return Err(HeadError::QueryCount {
            scores: 0,
            labels: 0,
        });
    }
    Ok(Tensor::from_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector::new(bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    fn prototypes(rows: &[Vec<f64>], labels: &[LabelVector], way: usize) -> Tensor {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::from_rows(rows).unwrap());
        let p = compute_prototypes(&mut tape, s, labels, way).unwrap();
        tape.value(p).clone()
    }

    #[test]
    fn one_sample_per_class_is_its_own_prototype() {
        let rows = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let p = prototypes(&rows, &[lv(&[1, 0]), lv(&[0, 1])], 2);
        assert_eq!(p, Tensor::from_rows(&rows).unwrap());
    }

    #[test]
    fn mean_of_two_members() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = prototypes(&rows, &[lv(&[1]), lv(&[1])], 1);
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn multi_label_sample_joins_each_prototype() {
        let rows = vec![vec![2.0, 0.0], vec![0.0, 4.0], vec![6.0, 6.0]];
        let labels = [lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 1])];
        let p = prototypes(&rows, &labels, 2);
        // brute-force grouping
        for k in 0..2 {
            let members: Vec<&Vec<f64>> = rows
                .iter()
                .zip(&labels)
                .filter(|(_, l)| l.contains(k))
                .map(|(r, _)| r)
                .collect();
            for d in 0..2 {
                let mean = members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64;
                assert_eq!(p.get(k, d), mean);
            }
        }
    }

    #[test]
    fn empty_class_is_an_error() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(1, 2));
        assert!(matches!(
            compute_prototypes(&mut tape, s, &[lv(&[1, 0])], 2),
            Err(HeadError::EmptyClass(1))
        ));
    }

    #[test]
    fn distance_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap());
        let q = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let z = proto_scores(&mut tape, p, q).unwrap();
        assert_eq!(tape.value(z).data(), &[25.0, 0.0]);
    }

    fn loss_at(z: &[f64], y: &[u8]) -> f64 {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[z.to_vec()]).unwrap());
        let l = proto_loss(&mut tape, z, &[lv(y)]).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_at(&[0.0, 0.0], &[1, 1]), 0.0);
        assert_eq!(loss_at(&[0.0, 0.0], &[1, 0]), 0.5);
    }
}
