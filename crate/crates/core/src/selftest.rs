//! Built-in correctness checks: finite-difference gradients for every loss,
//! closed-form versus iterative propagation, the label-count voting oracle
//! and the average-precision oracle.

use std::io::Write;

use rand::Rng as _;

use crate::episodes::{EpisodeSampler, EpisodeShape, QueryRule};
use crate::error::Error;
use crate::evaluation::average_precision;
use crate::heads::{self, HeadKind, RelationLoss};
use crate::learner::{Learner, ModelConfig};
use crate::nlc::{self, count_histogram, vote_label_count};
use crate::numeric::{check_gradients_with, Tape, Tensor};
use crate::rng::{derive_seed, stream};
use crate::synth::{generate, SynthConfig};

/// One differentiable objective to verify.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCase {
    pub name: &'static str,
    pub head: HeadKind,
    pub relation_loss: RelationLoss,
    /// Adds the label-count term with this weight.
    pub count_weight: Option<f64>,
}

pub const LOSS_CASES: [LossCase; 5] = [
    LossCase {
        name: "prototype loss",
        head: HeadKind::Proto,
        relation_loss: RelationLoss::Bce,
        count_weight: None,
    },
    LossCase {
        name: "relation log-loss",
        head: HeadKind::Relation,
        relation_loss: RelationLoss::Bce,
        count_weight: None,
    },
    LossCase {
        name: "relation squared error",
        head: HeadKind::Relation,
        relation_loss: RelationLoss::Mse,
        count_weight: None,
    },
    LossCase {
        name: "propagation loss",
        head: HeadKind::Lpn,
        relation_loss: RelationLoss::Bce,
        count_weight: None,
    },
    LossCase {
        name: "joint loss with label count",
        head: HeadKind::Proto,
        relation_loss: RelationLoss::Bce,
        count_weight: Some(1.0),
    },
];

/// Test-only fault injection, used to confirm that the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the analytic gradient of the prototype loss.
    FlipPrototypeGradient,
}

pub const FD_EPSILON: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

fn small_task(seed: u64) -> SynthConfig {
    SynthConfig {
        num_classes: 6,
        feature_dim: 4,
        samples_per_class: 8,
        max_labels: 2,
        separation: 3.0,
        noise: 0.5,
        cooccurrence: 0.0,
        seed,
    }
}

/// Largest relative error (`|a − n| / max(1, |a|)`) between analytic and
/// central-difference gradients over every parameter of a small randomly
/// initialised model, across `episodes` random 3-way 2-shot episodes.
pub fn loss_gradient_error(
    case: LossCase,
    episodes: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<f64, Error> {
    let data = generate(&small_task(seed))?;
    let sampler = EpisodeSampler::new(&data);
    let shape = EpisodeShape {
        way: 3,
        shot: 2,
        queries: QueryRule::Fixed(2),
    };
    let config = ModelConfig {
        embedding_hidden: vec![6],
        embedding_dim: 4,
        relation_hidden: vec![5],
        relation_loss: case.relation_loss,
        count_hidden: vec![5],
        nlc: case.count_weight.is_some(),
        lambda: case.count_weight.unwrap_or(0.0),
        ..ModelConfig::new(case.head, shape.way, 4)
    };
    let flip = fault == Some(Fault::FlipPrototypeGradient) && case.head == HeadKind::Proto;

    let mut worst: f64 = 0.0;
    for i in 0..episodes as u64 {
        let episode = sampler.sample(shape, &mut stream(seed, i))?;
        let learner = Learner::new(config.clone(), &mut stream(derive_seed(seed, 1 << 32), i));
        let at = |flat: &[f64]| {
            let mut l = learner.clone();
            l.set_flat_parameters(flat).map(|_| l)
        };
        let point = learner.flat_parameters();
        let failure = std::cell::RefCell::new(None);
        let err = check_gradients_with(
            |p| match at(p).and_then(|l| l.loss(&episode)) {
                Ok(parts) => parts.total,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e.to_string());
                    f64::NAN
                }
            },
            |p| {
                let grads = at(p).and_then(|l| l.loss_and_gradients(&episode));
                let flat: Vec<f64> = match grads {
                    Ok((_, g)) => g.iter().flat_map(|t| t.data().to_vec()).collect(),
                    Err(_) => vec![f64::NAN; p.len()],
                };
                if flip {
                    flat.into_iter().map(|v| -v).collect()
                } else {
                    flat
                }
            },
            &point,
            FD_EPSILON,
        );
        if let Some(msg) = failure.into_inner() {
            return Err(Error::Config(format!("gradient check episode {i}: {msg}")));
        }
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(worst)
}

/// Largest elementwise gap between the closed-form and iterative
/// propagation on `graphs` random graphs with up to `max_nodes` nodes.
pub fn propagation_gap(graphs: usize, max_nodes: usize, alpha: f64, seed: u64) -> Result<f64, Error> {
    let mut worst: f64 = 0.0;
    for g in 0..graphs as u64 {
        let mut rng = stream(seed, g);
        let n = rng.random_range(2..=max_nodes.max(2));
        let dim = rng.random_range(1..=4);
        let way = rng.random_range(1..=5);
        let points = Tensor::new(
            vec![n, dim],
            (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )?;
        let knn = rng.random_range(1..n);
        let mut tape = Tape::new();
        let x = tape.constant(points);
        let w = heads::build_graph(&mut tape, x, 1.0, knn)?;
        let s = heads::normalize_graph(&mut tape, w)?;
        let s = tape.value(s).clone();

        let labelled = rng.random_range(1..=n);
        let mut known = Tensor::zeros(way, n);
        for col in 0..labelled {
            let weights: Vec<f64> = (0..way).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (k, w) in weights.into_iter().enumerate() {
                known.data_mut()[k * n + col] = w / total;
            }
        }
        let closed = heads::propagate_solve(&known, &s, alpha)?;
        let (iterated, _) = heads::propagate_iterative(&known, &s, alpha, 1e-13, 100_000)?;
        worst = worst.max(closed.max_abs_diff(&iterated));
    }
    Ok(worst)
}

/// Episodes (out of `episodes`) on which voting with a perfect pair-count
/// predictor recovers every query's true label count.
pub fn voting_oracle_hits(episodes: usize, seed: u64) -> Result<usize, Error> {
    let data = generate(&SynthConfig {
        num_classes: 12,
        max_labels: 3,
        samples_per_class: 20,
        cooccurrence: 0.5,
        seed,
        ..SynthConfig::default()
    })?;
    let sampler = EpisodeSampler::new(&data);
    let mut hits = 0;
    for e in 0..episodes as u64 {
        let mut rng = stream(seed, e);
        let shape = EpisodeShape {
            way: rng.random_range(2..=6),
            shot: rng.random_range(1..=3),
            queries: QueryRule::Fixed(rng.random_range(1..=4)),
        };
        let episode = sampler.sample(shape, &mut rng)?;
        let way = episode.way();
        let support: Vec<usize> = episode.support_labels().iter().map(|l| l.count()).collect();
        let truth: Vec<usize> = episode.query_labels().iter().map(|l| l.count()).collect();
        let ns = support.len();
        let mut logits = Tensor::zeros(ns * truth.len(), 2 * way);
        for (q, &l) in truth.iter().enumerate() {
            for (i, &b) in support.iter().enumerate() {
                let p = nlc::pair_index(i, q, ns);
                logits.data_mut()[p * 2 * way + b + l - 1] = 4.0;
            }
        }
        let votes = nlc::predict_query_counts(&logits, &support, way);
        if votes.iter().map(|v| v.count).eq(truth.iter().copied()) {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Four supports vote 3, 3, 2, 3 for the query's count.
pub fn dissenting_vote_count() -> usize {
    let way = 5;
    let support = [1, 2, 1, 1];
    let predicted = [4, 5, 3, 4];
    let hist = count_histogram(&predicted, &support, way);
    let uniform = vec![vec![1.0 / (2 * way) as f64; 2 * way]; support.len()];
    vote_label_count(&hist, &uniform, &support, way).count
}

/// AP by explicit enumeration: each class's rank is the number of classes
/// ahead of it, and precision at a rank is counted over the whole prefix.
pub fn brute_force_ap(scores: &[f64], truth: &[bool]) -> f64 {
    let n = scores.len();
    let rank_of = |i: usize| {
        (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut at_rank = vec![0; n];
    for i in 0..n {
        at_rank[rank_of(i)] = i;
    }
    let positives = truth.iter().filter(|&&t| t).count();
    let mut total = 0.0;
    for k in 0..n {
        if truth[at_rank[k]] {
            let hits = (0..=k).filter(|&r| truth[at_rank[r]]).count();
            total += hits as f64 / (k + 1) as f64;
        }
    }
    total / positives as f64
}

/// Draws (out of `draws`) where [`average_precision`] equals the brute force
/// bit for bit. Half the draws use coarse scores to force ties.
pub fn ap_oracle_matches(draws: usize, seed: u64) -> Result<usize, Error> {
    let mut rng = stream(seed, 0);
    let mut matches = 0;
    for d in 0..draws {
        let n = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if d % 2 == 0 {
                    rng.random_range(-1.0..1.0)
                } else {
                    rng.random_range(0..3) as f64
                }
            })
            .collect();
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let forced = rng.random_range(0..n);
        truth[forced] = true;
        let fast = average_precision(&scores, &truth)?;
        if fast.to_bits() == brute_force_ap(&scores, &truth).to_bits() {
            matches += 1;
        }
    }
    Ok(matches)
}

/// Runs every check, writing one line per check; true when all pass.
pub fn run(out: &mut dyn Write, fault: Option<Fault>) -> Result<bool, Error> {
    let mut all = true;
    let mut line = |ok: bool, text: String| -> Result<(), Error> {
        all &= ok;
        writeln!(out, "{}  {}", if ok { "PASS" } else { "FAIL" }, text)
            .map_err(|e| Error::io("<output>", e))
    };

    for case in LOSS_CASES {
        let err = loss_gradient_error(case, 5, 7, fault)?;
        line(
            err < GRADIENT_TOLERANCE,
            format!("gradient {}: max rel err {err:.2e} (< {GRADIENT_TOLERANCE:e})", case.name),
        )?;
    }
    let gap = propagation_gap(20, 60, 0.99, 7)?;
    line(gap <= 1e-8, format!("propagation closed form vs iteration: max gap {gap:.2e} (<= 1e-8)"))?;
    let hits = voting_oracle_hits(100, 7)?;
    line(hits == 100, format!("count voting with perfect predictor: {hits}/100 episodes"))?;
    let dissent = dissenting_vote_count();
    line(dissent == 3, format!("count voting with one dissenting vote: {dissent} (expected 3)"))?;
    let ap = ap_oracle_matches(1000, 7)?;
    line(ap == 1000, format!("average precision vs enumeration: {ap}/1000 exact"))?;
    Ok(all)
}
