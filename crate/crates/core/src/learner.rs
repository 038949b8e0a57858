//! The trainable model: embedding network, optional relation module and
//! optional label counter, wired to one classifier head.

use serde::{Deserialize, Serialize};

use crate::embedding::{BoundMlp, Mlp, OutputActivation};
use crate::episodes::Episode;
use crate::evaluation::EpisodeResult;
use crate::heads::{self, GraphConfig, HeadError, HeadKind, RelationLoss};
use crate::nlc::{self, NlcError};
use crate::numeric::{NumericError, Tape, Tensor, Var};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: HeadKind,
    pub way: usize,
    pub input_dim: usize,
    /// Hidden widths of the embedding network.
    pub embedding_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub relation_hidden: Vec<usize>,
    pub relation_loss: RelationLoss,
    pub count_hidden: Vec<usize>,
    pub graph: GraphConfig,
    pub nlc: bool,
    pub lambda: f64,
}

impl ModelConfig {
    pub fn new(head: HeadKind, way: usize, input_dim: usize) -> Self {
        Self {
            head,
            way,
            input_dim,
            embedding_hidden: vec![64, 64],
            embedding_dim: 32,
            relation_hidden: vec![64, 8],
            relation_loss: RelationLoss::default(),
            count_hidden: vec![64],
            graph: GraphConfig::default(),
            nlc: false,
            lambda: 0.01,
        }
    }

    fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect()
    }

    pub fn embedding_widths(&self) -> Vec<usize> {
        Self::widths(self.input_dim, &self.embedding_hidden, self.embedding_dim)
    }

    pub fn relation_widths(&self) -> Vec<usize> {
        Self::widths(2 * self.embedding_dim, &self.relation_hidden, 1)
    }

    pub fn count_widths(&self) -> Vec<usize> {
        Self::widths(3 * self.embedding_dim, &self.count_hidden, 2 * self.way)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Count(#[from] NlcError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("episode has way {found}, model was built for {expected}")]
    Way { expected: usize, found: usize },
    #[error("episode features have dimension {found}, model expects {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("parameter vector has length {found}, expected {expected}")]
    ParameterLength { expected: usize, found: usize },
}

/// Loss values from one training forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub head: f64,
    pub count: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub config: ModelConfig,
    pub embedding: Mlp,
    pub relation: Option<Mlp>,
    pub counter: Option<Mlp>,
}

struct Bound {
    embedding: BoundMlp,
    relation: Option<BoundMlp>,
    counter: Option<BoundMlp>,
}

struct Embedded {
    all: Var,
    support: Var,
    queries: Var,
}

fn rows_of(samples: &[crate::episodes::EpisodeSample]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.features.clone()).collect()
}

fn row_selector(rows: std::ops::Range<usize>, total: usize) -> Tensor {
    let mut sel = Tensor::zeros(rows.len(), total);
    for (r, src) in rows.enumerate() {
        sel.data_mut()[r * total + src] = 1.0;
    }
    sel
}

impl Learner {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Self {
        let embedding = Mlp::new(&config.embedding_widths(), OutputActivation::Identity, rng);
        let relation = (config.head == HeadKind::Relation)
            .then(|| Mlp::new(&config.relation_widths(), OutputActivation::Sigmoid, rng));
        let counter = config
            .nlc
            .then(|| Mlp::new(&config.count_widths(), OutputActivation::Identity, rng));
        Self {
            config,
            embedding,
            relation,
            counter,
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.embedding.parameters();
        if let Some(r) = &self.relation {
            out.extend(r.parameters());
        }
        if let Some(c) = &self.counter {
            out.extend(c.parameters());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.embedding.parameters_mut();
        if let Some(r) = &mut self.relation {
            out.extend(r.parameters_mut());
        }
        if let Some(c) = &mut self.counter {
            out.extend(c.parameters_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters()
            .into_iter()
            .flat_map(|p| p.data().to_vec())
            .collect()
    }

    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<(), LearnerError> {
        let expected = self.parameter_count();
        if flat.len() != expected {
            return Err(LearnerError::ParameterLength {
                expected,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for p in self.parameters_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.is_finite())
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> (Bound, Vec<Var>) {
        let embedding = self.embedding.bind(tape, trainable);
        let relation = self.relation.as_ref().map(|m| m.bind(tape, trainable));
        let counter = self.counter.as_ref().map(|m| m.bind(tape, trainable));
        let mut vars = embedding.parameter_vars();
        if let Some(r) = &relation {
            vars.extend(r.parameter_vars());
        }
        if let Some(c) = &counter {
            vars.extend(c.parameter_vars());
        }
        (
            Bound {
                embedding,
                relation,
                counter,
            },
            vars,
        )
    }

    fn check_episode(&self, episode: &Episode) -> Result<(), LearnerError> {
        if episode.way() != self.config.way {
            return Err(LearnerError::Way {
                expected: self.config.way,
                found: episode.way(),
            });
        }
        if let Some(s) = episode.support.iter().chain(&episode.query).find(|s| {
            s.features.len() != self.config.input_dim
        }) {
            return Err(LearnerError::FeatureDim {
                expected: self.config.input_dim,
                found: s.features.len(),
            });
        }
        Ok(())
    }

    fn embed(&self, tape: &mut Tape, net: &BoundMlp, episode: &Episode) -> Result<Embedded, LearnerError> {
        let ns = episode.support.len();
        let nq = episode.query.len();
        let mut rows = rows_of(&episode.support);
        rows.extend(rows_of(&episode.query));
        let x = tape.constant(Tensor::from_rows(&rows)?);
        let all = crate::embedding::embed(tape, net, x)?;
        let take_s = tape.constant(row_selector(0..ns, ns + nq));
        let take_q = tape.constant(row_selector(ns..ns + nq, ns + nq));
        let support = tape.matmul(take_s, all)?;
        let queries = tape.matmul(take_q, all)?;
        Ok(Embedded {
            all,
            support,
            queries,
        })
    }

    /// Records the training objective for `episode`; returns the loss
    /// variable, its parts and the parameter leaves.
    fn record_loss(
        &self,
        tape: &mut Tape,
        episode: &Episode,
    ) -> Result<(Var, Var, Option<Var>, Vec<Var>), LearnerError> {
        self.check_episode(episode)?;
        let (bound, vars) = self.bind(tape, true);
        let e = self.embed(tape, &bound.embedding, episode)?;
        let way = self.config.way;
        let support_labels = episode.support_labels();
        let query_labels = episode.query_labels();

        let head_loss = match self.config.head {
            HeadKind::Proto => {
                let p = heads::compute_prototypes(tape, e.support, &support_labels, way)?;
                let z = heads::proto_scores(tape, p, e.queries)?;
                heads::proto_loss(tape, z, &query_labels)?
            }
            HeadKind::Relation => {
                let module = bound.relation.as_ref().expect("relation head owns a module");
                let r = heads::relation_scores(tape, module, e.support, &support_labels, e.queries, way)?;
                heads::relation_loss(tape, r, &query_labels, self.config.relation_loss)?
            }
            HeadKind::Lpn => {
                let g = self.config.graph;
                let nodes = tape.value(e.all).rows();
                let s = heads::graph_operator(tape, e.all, g.sigma, g.neighbours(nodes))?;
                let (known, full) = heads::label_matrices(&support_labels, &query_labels, way)?;
                let known = tape.constant(known);
                let full = tape.constant(full);
                let f = heads::propagate(tape, known, s, g.alpha)?;
                heads::lp_loss(tape, f, full)?
            }
        };

        let count_loss = match &bound.counter {
            Some(counter) => {
                let logits = nlc::pair_logits(tape, counter, e.support, e.queries)?;
                let b: Vec<usize> = support_labels.iter().map(|l| l.count()).collect();
                let q: Vec<usize> = query_labels.iter().map(|l| l.count()).collect();
                Some(nlc::count_loss(tape, logits, &nlc::pair_targets(&b, &q))?)
            }
            None => None,
        };
        let total = match count_loss {
            Some(c) => nlc::joint_loss(tape, head_loss, c, self.config.lambda)?,
            None => head_loss,
        };
        Ok((total, head_loss, count_loss, vars))
    }

    pub fn loss(&self, episode: &Episode) -> Result<LossParts, LearnerError> {
        let mut tape = Tape::new();
        let (total, head, count, _) = self.record_loss(&mut tape, episode)?;
        Ok(LossParts {
            total: tape.value(total).item()?,
            head: tape.value(head).item()?,
            count: count.map(|c| tape.value(c).item()).transpose()?,
        })
    }

    /// Loss parts and one gradient per parameter, in [`Learner::parameters`] order.
    pub fn loss_and_gradients(
        &self,
        episode: &Episode,
    ) -> Result<(LossParts, Vec<Tensor>), LearnerError> {
        let mut tape = Tape::new();
        let (total, head, count, vars) = self.record_loss(&mut tape, episode)?;
        let grads = tape.backward(total)?;
        let parts = LossParts {
            total: tape.value(total).item()?,
            head: tape.value(head).item()?,
            count: count.map(|c| tape.value(c).item()).transpose()?,
        };
        Ok((parts, vars.into_iter().map(|v| grads.get(v)).collect()))
    }

    /// Per-query scores (higher is better) and, with a counter, voted label
    /// counts. Query labels are only copied into the result, never used.
    pub fn score_episode(&self, episode: &Episode) -> Result<(EpisodeResult, usize), LearnerError> {
        self.check_episode(episode)?;
        let mut tape = Tape::new();
        let (bound, _) = self.bind(&mut tape, false);
        let e = self.embed(&mut tape, &bound.embedding, episode)?;
        let way = self.config.way;
        let ns = episode.support.len();
        let nq = episode.query.len();
        let support_labels = episode.support_labels();

        let scores: Vec<Vec<f64>> = match self.config.head {
            HeadKind::Proto => {
                let p = heads::compute_prototypes(&mut tape, e.support, &support_labels, way)?;
                let z = heads::proto_scores(&mut tape, p, e.queries)?;
                let z = tape.value(z);
                (0..nq).map(|q| z.row(q).iter().map(|d| -d).collect()).collect()
            }
            HeadKind::Relation => {
                let module = bound.relation.as_ref().expect("relation head owns a module");
                let r = heads::relation_scores(&mut tape, module, e.support, &support_labels, e.queries, way)?;
                let r = tape.value(r);
                (0..nq).map(|q| r.row(q).to_vec()).collect()
            }
            HeadKind::Lpn => {
                let g = self.config.graph;
                let s = heads::graph_operator(&mut tape, e.all, g.sigma, g.neighbours(ns + nq))?;
                let blank: Vec<_> = Vec::new();
                let (known, _) = heads::label_matrices(&support_labels, &blank, way)?;
                // pad query columns with zeros
                let mut padded = Tensor::zeros(way, ns + nq);
                for k in 0..way {
                    for i in 0..ns {
                        padded.data_mut()[k * (ns + nq) + i] = known.get(k, i);
                    }
                }
                let f = heads::propagate_solve(&padded, tape.value(s), g.alpha)?;
                (0..nq).map(|q| (0..way).map(|k| f.get(k, ns + q)).collect()).collect()
            }
        };

        let mut fallbacks = 0;
        let predicted_counts = match &bound.counter {
            Some(counter) => {
                let logits = nlc::pair_logits(&mut tape, counter, e.support, e.queries)?;
                let b: Vec<usize> = support_labels.iter().map(|l| l.count()).collect();
                let votes = nlc::predict_query_counts(tape.value(logits), &b, way);
                fallbacks = votes.iter().filter(|v| v.fallback).count();
                Some(votes.into_iter().map(|v| v.count).collect())
            }
            None => None,
        };

        Ok((
            EpisodeResult {
                label_set: episode.label_set.clone(),
                scores,
                truth: episode.query_labels(),
                predicted_counts,
            },
            fallbacks,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassId, Dataset, Sample};
    use crate::episodes::{sample_episode, EpisodeShape, QueryRule};
    use crate::rng::seeded;
    use rand::Rng as _;

    fn toy_dataset() -> Dataset {
        let mut rng = seeded(0);
        let mut samples = Vec::new();
        for i in 0..40u32 {
            let labels = if i % 3 == 0 {
                vec![ClassId(i % 4), ClassId((i + 1) % 4)]
            } else {
                vec![ClassId(i % 4)]
            };
            let features = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            samples.push(Sample::new(format!("{i}"), features, labels).unwrap());
        }
        Dataset::new(samples, (0..4).map(|c| c.to_string()).collect())
    }

    fn small_config(head: HeadKind, nlc: bool) -> ModelConfig {
        ModelConfig {
            embedding_hidden: vec![6],
            embedding_dim: 4,
            relation_hidden: vec![5],
            count_hidden: vec![5],
            nlc,
            ..ModelConfig::new(head, 3, 5)
        }
    }

    #[test]
    fn gradients_have_parameter_shapes() {
        let ds = toy_dataset();
        let shape = EpisodeShape {
            way: 3,
            shot: 2,
            queries: QueryRule::Fixed(2),
        };
        let ep = sample_episode(&ds, shape, &mut seeded(1)).unwrap();
        for head in HeadKind::ALL {
            let learner = Learner::new(small_config(head, true), &mut seeded(2));
            let (parts, grads) = learner.loss_and_gradients(&ep).unwrap();
            assert!(parts.total.is_finite() && parts.count.is_some());
            let params = learner.parameters();
            assert_eq!(grads.len(), params.len());
            for (g, p) in grads.iter().zip(params) {
                assert_eq!(g.shape(), p.shape());
            }
            let (res, _) = learner.score_episode(&ep).unwrap();
            assert_eq!(res.scores.len(), ep.query.len());
            assert!(res.scores.iter().all(|s| s.len() == 3));
            assert_eq!(res.predicted_counts.as_ref().unwrap().len(), ep.query.len());
        }
    }

    #[test]
    fn flat_parameters_round_trip() {
        let mut learner = Learner::new(small_config(HeadKind::Relation, true), &mut seeded(3));
        let flat = learner.flat_parameters();
        assert_eq!(flat.len(), learner.parameter_count());
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        learner.set_flat_parameters(&shifted).unwrap();
        assert_eq!(learner.flat_parameters(), shifted);
        assert!(learner.set_flat_parameters(&flat[1..]).is_err());
    }

    #[test]
    fn lp_scores_vanish_without_propagation() {
        let ds = toy_dataset();
        let shape = EpisodeShape {
            way: 3,
            shot: 1,
            queries: QueryRule::Fixed(2),
        };
        let ep = sample_episode(&ds, shape, &mut seeded(4)).unwrap();
        let mut cfg = small_config(HeadKind::Lpn, false);
        cfg.graph.alpha = 0.0;
        let learner = Learner::new(cfg, &mut seeded(5));
        let (res, _) = learner.score_episode(&ep).unwrap();
        assert!(res.scores.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn way_mismatch_is_rejected() {
        let ds = toy_dataset();
        let shape = EpisodeShape {
            way: 2,
            shot: 1,
            queries: QueryRule::Fixed(1),
        };
        let ep = sample_episode(&ds, shape, &mut seeded(4)).unwrap();
        let learner = Learner::new(small_config(HeadKind::Proto, false), &mut seeded(5));
        assert!(matches!(learner.loss(&ep), Err(LearnerError::Way { .. })));
    }
}
