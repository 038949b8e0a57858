//! Multi-label N-way K-shot episodes.
//!
//! A support sample may carry several of the episode's classes, so the
//! support set holds at most `N·K` samples and usually fewer on data whose
//! labels co-occur. Every class is still covered by at least `K` support
//! samples.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, Dataset, Sample};
use crate::rng::Rng;

/// Binary membership vector aligned with an episode's label order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<bool>);

impl LabelVector {
    pub fn new(values: Vec<bool>) -> Result<Self, EpisodeError> {
        if !values.iter().any(|&v| v) {
            return Err(EpisodeError::EmptyRestriction);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, position: usize) -> bool {
        self.0[position]
    }

    /// Number of positive entries (`‖y‖₁`).
    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    /// `y / ‖y‖₁`.
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.count() as f64;
        self.0.iter().map(|&v| if v { 1.0 / n } else { 0.0 }).collect()
    }
}

/// Position `j` is set iff `label_set[j]` is one of the sample's labels.
pub fn encode_labels(sample: &Sample, label_set: &[ClassId]) -> Result<LabelVector, EpisodeError> {
    LabelVector::new(label_set.iter().map(|c| sample.has_label(*c)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSample {
    /// Position of the sample in the source dataset.
    pub index: usize,
    pub features: Vec<f64>,
    pub labels: LabelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub label_set: Vec<ClassId>,
    pub support: Vec<EpisodeSample>,
    pub query: Vec<EpisodeSample>,
    pub shot: usize,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.label_set.len()
    }

    pub fn support_labels(&self) -> Vec<LabelVector> {
        self.support.iter().map(|s| s.labels.clone()).collect()
    }

    pub fn query_labels(&self) -> Vec<LabelVector> {
        self.query.iter().map(|s| s.labels.clone()).collect()
    }

    pub fn support_indices(&self) -> Vec<usize> {
        self.support.iter().map(|s| s.index).collect()
    }

    pub fn query_indices(&self) -> Vec<usize> {
        self.query.iter().map(|s| s.index).collect()
    }

    /// Number of support samples carrying each episode class.
    pub fn class_coverage(&self) -> Vec<usize> {
        (0..self.way())
            .map(|j| self.support.iter().filter(|s| s.labels.contains(j)).count())
            .collect()
    }
}

/// How many queries an episode draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRule {
    /// Half the number of sampled labels, at least one.
    #[default]
    HalfWay,
    Fixed(usize),
}

impl QueryRule {
    pub fn query_count(self, way: usize) -> usize {
        match self {
            QueryRule::HalfWay => (way / 2).max(1),
            QueryRule::Fixed(q) => q,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub way: usize,
    pub shot: usize,
    pub queries: QueryRule,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodeError {
    #[error("dataset has {available} classes, episode needs {way}")]
    InsufficientClasses { available: usize, way: usize },
    #[error("only {eligible} classes have at least {shot} samples, episode needs {way}")]
    InsufficientShots {
        eligible: usize,
        shot: usize,
        way: usize,
    },
    #[error("only {available} samples left for {requested} queries")]
    InsufficientQueries { available: usize, requested: usize },
    #[error("invalid episode shape: {0}")]
    InvalidShape(String),
    #[error("sample shares no label with the episode label set")]
    EmptyRestriction,
    #[error("split fractions train={train}, val={val} are invalid")]
    InvalidFractions { train: f64, val: f64 },
}

/// Draws episodes from one dataset, caching its per-class sample index.
#[derive(Debug)]
pub struct EpisodeSampler<'a> {
    dataset: &'a Dataset,
    by_class: Vec<Vec<usize>>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self {
            by_class: dataset.class_index(),
            dataset,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn sample(&self, shape: EpisodeShape, rng: &mut Rng) -> Result<Episode, EpisodeError> {
        let EpisodeShape { way, shot, queries } = shape;
        let query_count = queries.query_count(way);
        if way == 0 || shot == 0 || query_count == 0 {
            return Err(EpisodeError::InvalidShape(format!(
                "way={way} shot={shot} queries={query_count}"
            )));
        }
        let available = self.by_class.iter().filter(|s| !s.is_empty()).count();
        if available < way {
            return Err(EpisodeError::InsufficientClasses { available, way });
        }
        let eligible: Vec<ClassId> = self
            .by_class
            .iter()
            .enumerate()
            .filter(|(_, s)| s.len() >= shot)
            .map(|(c, _)| ClassId(c as u32))
            .collect();
        if eligible.len() < way {
            return Err(EpisodeError::InsufficientShots {
                eligible: eligible.len(),
                shot,
                way,
            });
        }

        let label_set: Vec<ClassId> = index::sample(rng, eligible.len(), way)
            .into_iter()
            .map(|i| eligible[i])
            .collect();

        let mut support: Vec<usize> = Vec::new();
        let mut in_support: HashSet<usize> = HashSet::new();
        let mut order: Vec<usize> = (0..way).collect();
        order.shuffle(rng);
        for &j in &order {
            let class = label_set[j];
            let members = &self.by_class[class.0 as usize];
            let covered = members.iter().filter(|i| in_support.contains(i)).count();
            if covered >= shot {
                continue;
            }
            let candidates: Vec<usize> = members
                .iter()
                .copied()
                .filter(|i| !in_support.contains(i))
                .collect();
            for k in index::sample(rng, candidates.len(), shot - covered) {
                let chosen = candidates[k];
                in_support.insert(chosen);
                support.push(chosen);
            }
        }

        let pool: Vec<usize> = (0..self.dataset.len())
            .filter(|i| !in_support.contains(i))
            .filter(|&i| {
                let s = &self.dataset.samples[i];
                label_set.iter().any(|c| s.has_label(*c))
            })
            .collect();
        if pool.len() < query_count {
            return Err(EpisodeError::InsufficientQueries {
                available: pool.len(),
                requested: query_count,
            });
        }
        let query: Vec<usize> = index::sample(rng, pool.len(), query_count)
            .into_iter()
            .map(|k| pool[k])
            .collect();

        let restrict = |i: usize| -> Result<EpisodeSample, EpisodeError> {
            let s = &self.dataset.samples[i];
            Ok(EpisodeSample {
                index: i,
                features: s.features.clone(),
                labels: encode_labels(s, &label_set)?,
            })
        };
        Ok(Episode {
            support: support.into_iter().map(restrict).collect::<Result<_, _>>()?,
            query: query.into_iter().map(restrict).collect::<Result<_, _>>()?,
            label_set,
            shot,
        })
    }
}

pub fn sample_episode(
    dataset: &Dataset,
    shape: EpisodeShape,
    rng: &mut Rng,
) -> Result<Episode, EpisodeError> {
    EpisodeSampler::new(dataset).sample(shape, rng)
}

/// Three class-disjoint partitions of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub train_classes: Vec<ClassId>,
    pub val_classes: Vec<ClassId>,
    pub test_classes: Vec<ClassId>,
}

/// Partitions the classes at random, then keeps each sample only in the
/// partition that owns all of its labels. Samples whose labels straddle
/// partitions are dropped.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    val_fraction: f64,
    rng: &mut Rng,
) -> Result<DatasetSplit, EpisodeError> {
    let valid = train_fraction > 0.0
        && train_fraction < 1.0
        && (0.0..1.0).contains(&val_fraction)
        && train_fraction + val_fraction < 1.0;
    if !valid {
        return Err(EpisodeError::InvalidFractions {
            train: train_fraction,
            val: val_fraction,
        });
    }
    let n = dataset.num_classes();
    let n_train = ((n as f64 * train_fraction).round() as usize).min(n);
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n - n_train);

    let mut classes: Vec<ClassId> = (0..n as u32).map(ClassId).collect();
    classes.shuffle(rng);
    let mut train_classes = classes[..n_train].to_vec();
    let mut val_classes = classes[n_train..n_train + n_val].to_vec();
    let mut test_classes = classes[n_train + n_val..].to_vec();
    train_classes.sort_unstable();
    val_classes.sort_unstable();
    test_classes.sort_unstable();

    // 0 = train, 1 = val, 2 = test
    let mut owner = vec![0u8; n];
    for c in &val_classes {
        owner[c.0 as usize] = 1;
    }
    for c in &test_classes {
        owner[c.0 as usize] = 2;
    }
    let mut parts: [Vec<Sample>; 3] = Default::default();
    for s in &dataset.samples {
        let first = owner[s.labels()[0].0 as usize];
        if s.labels().iter().all(|c| owner[c.0 as usize] == first) {
            parts[first as usize].push(s.clone());
        }
    }
    let [train, val, test] = parts;
    let names = dataset.class_names.clone();
    Ok(DatasetSplit {
        train: Dataset::new(train, names.clone()),
        val: Dataset::new(val, names.clone()),
        test: Dataset::new(test, names),
        train_classes,
        val_classes,
        test_classes,
    })
}
