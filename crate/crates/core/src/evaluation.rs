//! Ranking and counting metrics over evaluation episodes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassId;
use crate::episodes::LabelVector;
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("truth has no positive label")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("no values to aggregate")]
    Empty,
    #[error("label count {count} outside 1..={way}")]
    CountRange { count: usize, way: usize },
}

/// Class positions sorted by descending score, ties by ascending position.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean over positive classes of the precision at each positive's rank.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::Length(scores.len(), truth.len()));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, idx) in ranking(scores).into_iter().enumerate() {
        if truth[idx] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

pub fn mean(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Fraction of exact matches.
pub fn lc_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::Length(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Whether the top-`count` classes by score are exactly the true label set.
pub fn hard_decision(scores: &[f64], count: usize, truth: &[bool]) -> Result<bool, EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::Length(scores.len(), truth.len()));
    }
    if count == 0 || count > scores.len() {
        return Err(EvalError::CountRange {
            count,
            way: scores.len(),
        });
    }
    let mut predicted = vec![false; scores.len()];
    for idx in ranking(scores).into_iter().take(count) {
        predicted[idx] = true;
    }
    Ok(predicted == truth)
}

/// Scores and labels for one evaluated episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub label_set: Vec<ClassId>,
    /// One score vector of length `way` per query.
    pub scores: Vec<Vec<f64>>,
    pub truth: Vec<LabelVector>,
    /// Voted label counts, when a counter is available.
    pub predicted_counts: Option<Vec<usize>>,
}

impl EpisodeResult {
    pub fn true_counts(&self) -> Vec<usize> {
        self.truth.iter().map(LabelVector::count).collect()
    }

    pub fn average_precisions(&self) -> Result<Vec<f64>, EvalError> {
        self.scores
            .iter()
            .zip(&self.truth)
            .map(|(s, t)| average_precision(s, t.values()))
            .collect()
    }

    pub fn hard_decisions(&self) -> Result<Option<Vec<bool>>, EvalError> {
        let Some(counts) = &self.predicted_counts else {
            return Ok(None);
        };
        self.scores
            .iter()
            .zip(&self.truth)
            .zip(counts)
            .map(|((s, t), &l)| hard_decision(s, l, t.values()))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

/// Mean per-query AP over every query of every episode.
pub fn map_over_episodes(results: &[EpisodeResult]) -> Result<f64, EvalError> {
    let aps: Vec<f64> = results
        .iter()
        .map(EpisodeResult::average_precisions)
        .collect::<Result<Vec<_>, _>>()?
        .concat();
    mean(&aps)
}

/// Per-class AP with queries pooled by global class, averaged over classes
/// that have at least one positive query.
pub fn macro_map(results: &[EpisodeResult]) -> Result<f64, EvalError> {
    let mut pooled: BTreeMap<ClassId, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for r in results {
        for (scores, truth) in r.scores.iter().zip(&r.truth) {
            for (j, class) in r.label_set.iter().enumerate() {
                let entry = pooled.entry(*class).or_default();
                entry.0.push(scores[j]);
                entry.1.push(truth.contains(j));
            }
        }
    }
    let aps: Vec<f64> = pooled
        .values()
        .filter(|(_, t)| t.iter().any(|&v| v))
        .map(|(s, t)| average_precision(s, t))
        .collect::<Result<_, _>>()?;
    mean(&aps)
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, rng: &mut Rng) -> (f64, f64) {
    if values.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    (at(tail), at(1.0 - tail))
}

/// Monte-Carlo mean AP of uniformly random rankings, for queries with the
/// given positive counts out of `way` classes. Returns `(mean, standard error)`.
pub fn random_ranking_baseline(
    positive_counts: &[usize],
    way: usize,
    trials: usize,
    rng: &mut Rng,
) -> (f64, f64) {
    assert!(!positive_counts.is_empty() && trials > 0);
    let mut aps = Vec::with_capacity(trials);
    let mut order: Vec<usize> = (0..way).collect();
    for t in 0..trials {
        let positives = positive_counts[t % positive_counts.len()].clamp(1, way);
        order.shuffle(rng);
        let (mut hits, mut total) = (0usize, 0.0);
        for (rank, &idx) in order.iter().enumerate() {
            if idx < positives {
                hits += 1;
                total += hits as f64 / (rank + 1) as f64;
            }
        }
        aps.push(total / positives as f64);
    }
    let m = aps.iter().sum::<f64>() / trials as f64;
    let var = aps.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (trials.max(2) - 1) as f64;
    (m, (var / trials as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub map: f64,
    pub map_ci: [f64; 2],
    pub macro_map: f64,
    pub lc: Option<f64>,
    pub lc_ci: Option<[f64; 2]>,
    pub hard_acc: Option<f64>,
    pub hard_acc_ci: Option<[f64; 2]>,
    pub episodes: usize,
    pub queries: usize,
    pub count_fallbacks: usize,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Aggregates episode results; intervals resample whole episodes.
pub fn summarize(
    results: &[EpisodeResult],
    count_fallbacks: usize,
    rng: &mut Rng,
) -> Result<Report, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let per_episode_ap: Vec<f64> = results
        .iter()
        .map(|r| r.average_precisions().and_then(|a| mean(&a)))
        .collect::<Result<_, _>>()?;
    let map = map_over_episodes(results)?;
    let (lo, hi) = bootstrap_ci(&per_episode_ap, BOOTSTRAP_RESAMPLES, 0.95, rng);

    let with_counts = results.iter().all(|r| r.predicted_counts.is_some());
    let (lc, lc_ci, hard_acc, hard_acc_ci) = if with_counts {
        let mut predicted = Vec::new();
        let mut truth = Vec::new();
        let mut per_episode_lc = Vec::new();
        let mut per_episode_hard = Vec::new();
        let mut hard_all = Vec::new();
        for r in results {
            let p = r.predicted_counts.as_ref().expect("checked above");
            let t = r.true_counts();
            per_episode_lc.push(lc_accuracy(p, &t)?);
            let hard = r.hard_decisions()?.expect("counts present");
            per_episode_hard
                .push(hard.iter().filter(|&&h| h).count() as f64 / hard.len() as f64);
            hard_all.extend(hard);
            predicted.extend_from_slice(p);
            truth.extend(t);
        }
        let lc = lc_accuracy(&predicted, &truth)?;
        let hard = hard_all.iter().filter(|&&h| h).count() as f64 / hard_all.len() as f64;
        let lc_ci = bootstrap_ci(&per_episode_lc, BOOTSTRAP_RESAMPLES, 0.95, rng);
        let hard_ci = bootstrap_ci(&per_episode_hard, BOOTSTRAP_RESAMPLES, 0.95, rng);
        (
            Some(lc),
            Some([lc_ci.0, lc_ci.1]),
            Some(hard),
            Some([hard_ci.0, hard_ci.1]),
        )
    } else {
        (None, None, None, None)
    };

    Ok(Report {
        map,
        map_ci: [lo, hi],
        macro_map: macro_map(results)?,
        lc,
        lc_ci,
        hard_acc,
        hard_acc_ci,
        episodes: results.len(),
        queries: results.iter().map(|r| r.scores.len()).sum(),
        count_fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.1, 0.8], &[true, false, true]).unwrap(),
            1.0
        );
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(
            average_precision(&[0.1, 0.5, 0.2], &[true, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&[0.1, 0.5], &[false, false]),
            Err(EvalError::NoPositives)
        );
    }

    #[test]
    fn ties_rank_lower_index_first() {
        assert_eq!(ranking(&[0.5, 0.5, 0.7]), vec![2, 0, 1]);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    fn result(scores: Vec<Vec<f64>>, truth: Vec<Vec<bool>>) -> EpisodeResult {
        EpisodeResult {
            label_set: (0..scores[0].len() as u32).map(ClassId).collect(),
            scores,
            truth: truth.into_iter().map(|t| LabelVector::new(t).unwrap()).collect(),
            predicted_counts: None,
        }
    }

    #[test]
    fn map_is_mean_of_query_aps() {
        let r = result(
            vec![vec![0.9, 0.1], vec![0.9, 0.1]],
            vec![vec![true, false], vec![false, true]],
        );
        assert_eq!(map_over_episodes(std::slice::from_ref(&r)).unwrap(), 0.75);
        let single = result(vec![vec![0.2, 0.1]], vec![vec![false, true]]);
        assert_eq!(map_over_episodes(&[single]).unwrap(), 0.5);
        assert_eq!(map_over_episodes(&[r.clone(), r.clone()]).unwrap(), 0.75);
    }

    #[test]
    fn lc_examples() {
        assert_eq!(lc_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(lc_accuracy(&[2, 3, 4], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(lc_accuracy(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn hard_decision_examples() {
        assert!(hard_decision(&[0.9, 0.1, 0.8], 2, &[true, false, true]).unwrap());
        assert!(!hard_decision(&[0.9, 0.1, 0.8], 3, &[true, false, true]).unwrap());
        assert!(hard_decision(&[0.9, 0.1, 0.8], 0, &[true, false, true]).is_err());
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let values: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let m = mean(&values).unwrap();
        let (lo, hi) = bootstrap_ci(&values, 1000, 0.95, &mut seeded(2));
        assert!(lo <= m && m <= hi && lo < hi);
    }

    #[test]
    fn random_baseline_single_positive_three_way() {
        // E[1/rank] for a uniformly placed positive among 3
        let exact = (1.0 + 0.5 + 1.0 / 3.0) / 3.0;
        let (m, se) = random_ranking_baseline(&[1], 3, 20_000, &mut seeded(5));
        assert!((m - exact).abs() < 4.0 * se + 1e-3, "{m} vs {exact}");
    }

    #[test]
    fn summary_with_counts() {
        let mut r = result(
            vec![vec![0.9, 0.1, 0.8], vec![0.1, 0.9, 0.8]],
            vec![vec![true, false, true], vec![false, true, false]],
        );
        r.predicted_counts = Some(vec![2, 2]);
        let rep = summarize(&[r], 0, &mut seeded(1)).unwrap();
        assert_eq!(rep.lc, Some(0.5));
        assert_eq!(rep.hard_acc, Some(0.5));
        assert_eq!(rep.queries, 2);
    }
}
