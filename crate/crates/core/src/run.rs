//! End-to-end runs: configuration, the episodic training loop, evaluation
//! on held-out classes, and synthetic data export.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_jsonl, save_jsonl, DataError, Dataset};
use crate::episodes::{split_dataset, DatasetSplit, EpisodeSampler, EpisodeShape, QueryRule};
use crate::error::Error;
use crate::evaluation::{summarize, Report};
use crate::heads::{GraphConfig, HeadKind, RelationLoss};
use crate::learner::{Learner, LearnerError, LossParts, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, stream};
use crate::synth::{generate, SynthConfig};

// Independent random streams derived from the run seed.
pub const STREAM_SPLIT: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_EVAL: u64 = 3;
pub const STREAM_BOOTSTRAP: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub head: HeadKind,
    pub way: usize,
    pub shot: usize,
    /// Queries per episode; unset means `max(way / 2, 1)`.
    pub queries: Option<usize>,
    /// Training episodes.
    pub episodes: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub nlc: bool,
    pub lambda: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub knn: Option<usize>,
    pub relation_loss: RelationLoss,
    pub learning_rate: f64,
    pub halving_interval: u64,
    pub embedding_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub relation_hidden: Vec<usize>,
    pub count_hidden: Vec<usize>,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// JSONL feature file; the synthetic generator is used when unset.
    pub data: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(HeadKind::Proto, 5, 1);
        let adam = AdamConfig::default();
        let graph = GraphConfig::default();
        Self {
            head: HeadKind::Proto,
            way: 5,
            shot: 1,
            queries: None,
            episodes: 10_000,
            eval_episodes: 1000,
            seed: 0,
            nlc: false,
            lambda: model.lambda,
            alpha: graph.alpha,
            sigma: graph.sigma,
            knn: graph.knn,
            relation_loss: model.relation_loss,
            learning_rate: adam.learning_rate,
            halving_interval: adam.halving_interval,
            embedding_hidden: model.embedding_hidden,
            embedding_dim: model.embedding_dim,
            relation_hidden: model.relation_hidden,
            count_hidden: model.count_hidden,
            train_fraction: 0.6,
            val_fraction: 0.2,
            data: None,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.way < 2 {
            return bad(format!("way must be at least 2, got {}", self.way));
        }
        if self.shot < 1 {
            return bad("shot must be at least 1".into());
        }
        if self.queries == Some(0) {
            return bad("queries must be positive".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.knn == Some(0) {
            return bad("knn must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive".into());
        }
        if self.halving_interval == 0 {
            return bad("halving_interval must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        if self.embedding_dim == 0
            || [&self.embedding_hidden, &self.relation_hidden, &self.count_hidden]
                .iter()
                .any(|h| h.contains(&0))
        {
            return bad("layer widths must be positive".into());
        }
        if self.data.is_none() {
            self.synth.validate()?;
        }
        Ok(())
    }

    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            way: self.way,
            shot: self.shot,
            queries: self.queries.map_or(QueryRule::HalfWay, QueryRule::Fixed),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            halving_interval: self.halving_interval,
            ..AdamConfig::default()
        }
    }

    pub fn model(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            head: self.head,
            way: self.way,
            input_dim,
            embedding_hidden: self.embedding_hidden.clone(),
            embedding_dim: self.embedding_dim,
            relation_hidden: self.relation_hidden.clone(),
            relation_loss: self.relation_loss,
            count_hidden: self.count_hidden.clone(),
            graph: GraphConfig {
                alpha: self.alpha,
                sigma: self.sigma,
                knn: self.knn,
            },
            nlc: self.nlc,
            lambda: self.lambda,
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset, Error> {
        match &self.data {
            Some(path) => load_jsonl(path).map_err(|e| match e {
                DataError::Io(io) => Error::io(path, io),
                other => other.into(),
            }),
            None => Ok(generate(&self.synth)?),
        }
    }

    pub fn split(&self, dataset: &Dataset) -> Result<DatasetSplit, Error> {
        let mut rng = stream(self.seed, STREAM_SPLIT);
        Ok(split_dataset(dataset, self.train_fraction, self.val_fraction, &mut rng)?)
    }
}

/// Trained model plus the metadata needed to evaluate it safely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub episodes: usize,
    pub head: HeadKind,
    pub train_classes: Vec<String>,
    pub config: RunConfig,
    pub model: Learner,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub episode: usize,
    pub learning_rate: f64,
    pub loss: LossParts,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
}

fn class_names(dataset: &Dataset, classes: &[crate::dataset::ClassId]) -> Vec<String> {
    classes
        .iter()
        .map(|&c| dataset.class_name(c).to_string())
        .collect()
}

fn diverged(episode: usize, source: impl Into<Error>) -> Error {
    Error::Diverged {
        episode,
        source: Box::new(source.into()),
    }
}

/// Runs the episodic loop on the training split of `dataset`.
pub fn train_on(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome, Error> {
    config.validate()?;
    let input_dim = dataset
        .feature_dim()
        .ok_or_else(|| Error::Config("dataset is empty".into()))?;
    let split = config.split(dataset)?;
    let sampler = EpisodeSampler::new(&split.train);
    let shape = config.shape();

    let mut learner = Learner::new(config.model(input_dim), &mut stream(config.seed, STREAM_INIT));
    let adam_config = config.adam();
    let mut adam = Adam::new(adam_config, &learner.parameters());
    let mut rng = stream(config.seed, STREAM_TRAIN);
    let mut log = Vec::with_capacity(config.episodes);

    for episode in 0..config.episodes {
        let ep = sampler.sample(shape, &mut rng)?;
        let (loss, grads) = learner.loss_and_gradients(&ep).map_err(|e| match e {
            LearnerError::Numeric(_) | LearnerError::Head(_) | LearnerError::Count(_) => {
                diverged(episode, e)
            }
            other => other.into(),
        })?;
        if !loss.total.is_finite() {
            return Err(diverged(
                episode,
                crate::numeric::NumericError::NonFinite("loss"),
            ));
        }
        adam.step(&mut learner.parameters_mut(), &grads, episode as u64)
            .map_err(|e| diverged(episode, e))?;
        log.push(TrainLogRow {
            episode,
            learning_rate: adam_config.effective_lr(episode as u64),
            loss,
        });
    }

    let checkpoint = Checkpoint {
        seed: config.seed,
        episodes: config.episodes,
        head: config.head,
        train_classes: class_names(dataset, &split.train_classes),
        config: config.clone(),
        model: learner,
    };
    Ok(TrainOutcome { checkpoint, log })
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome, Error> {
    let dataset = config.load_dataset()?;
    train_on(config, &dataset)
}

pub fn write_train_log(log: &[TrainLogRow], path: impl AsRef<Path>) -> Result<(), Error> {
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["episode", "loss", "head_loss", "count_loss", "learning_rate"])?;
    for row in log {
        w.write_record([
            row.episode.to_string(),
            row.loss.total.to_string(),
            row.loss.head.to_string(),
            row.loss.count.map_or(String::new(), |c| c.to_string()),
            row.learning_rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Evaluates `checkpoint` on the test classes of `dataset`.
pub fn eval_on(config: &RunConfig, checkpoint: &Checkpoint, dataset: &Dataset) -> Result<Report, Error> {
    config.validate()?;
    if config.head != checkpoint.head {
        return Err(Error::Config(format!(
            "checkpoint was trained with head {}, config asks for {}",
            checkpoint.head, config.head
        )));
    }
    let model = &checkpoint.model;
    if config.way != model.config.way {
        return Err(Error::Config(format!(
            "checkpoint was trained for {}-way episodes, config asks for {}-way",
            model.config.way, config.way
        )));
    }
    let split = config.split(dataset)?;
    let test_names = class_names(dataset, &split.test_classes);
    let leaked: Vec<String> = test_names
        .iter()
        .filter(|n| checkpoint.train_classes.contains(n))
        .cloned()
        .collect();
    if !leaked.is_empty() {
        return Err(Error::Leakage(leaked));
    }

    let sampler = EpisodeSampler::new(&split.test);
    let shape = config.shape();
    let eval_seed = derive_seed(config.seed, STREAM_EVAL);
    let scored: Vec<_> = (0..config.eval_episodes)
        .into_par_iter()
        .map(|i| -> Result<_, Error> {
            let ep = sampler.sample(shape, &mut stream(eval_seed, i as u64))?;
            Ok(model.score_episode(&ep)?)
        })
        .collect::<Result<_, _>>()?;
    let fallbacks = scored.iter().map(|(_, f)| f).sum();
    let results: Vec<_> = scored.into_iter().map(|(r, _)| r).collect();
    Ok(summarize(&results, fallbacks, &mut stream(config.seed, STREAM_BOOTSTRAP))?)
}

pub fn eval(config: &RunConfig, checkpoint: &Checkpoint) -> Result<Report, Error> {
    let dataset = config.load_dataset()?;
    eval_on(config, checkpoint, &dataset)
}

pub fn report_json(report: &Report) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(report)?)
}

const REPORT_COLUMNS: [&str; 13] = [
    "head", "way", "shot", "seed", "episodes", "queries", "map", "map_lo", "map_hi", "macro_map",
    "lc", "hard_acc", "count_fallbacks",
];

/// One fixed-width CSV row (with header) describing a run.
pub fn report_csv(config: &RunConfig, report: &Report) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    let values = [
        config.head.to_string(),
        config.way.to_string(),
        config.shot.to_string(),
        config.seed.to_string(),
        report.episodes.to_string(),
        report.queries.to_string(),
        format!("{:.6}", report.map),
        format!("{:.6}", report.map_ci[0]),
        format!("{:.6}", report.map_ci[1]),
        format!("{:.6}", report.macro_map),
        opt(report.lc),
        opt(report.hard_acc),
        report.count_fallbacks.to_string(),
    ];
    let widths: Vec<usize> = REPORT_COLUMNS
        .iter()
        .zip(&values)
        .map(|(h, v)| h.len().max(v.len()))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    format!(
        "{}\n{}\n",
        line(REPORT_COLUMNS.to_vec()),
        line(values.iter().map(String::as_str).collect())
    )
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), Error> {
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

pub fn synth(config: &SynthConfig, out: impl AsRef<Path>) -> Result<Dataset, Error> {
    let dataset = generate(config)?;
    save_jsonl(&dataset, &out)?;
    Ok(dataset)
}
