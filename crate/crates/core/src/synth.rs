//! Synthetic multi-label data: Gaussian clusters around random class
//! centres, where a sample's features are the mean of its classes' centres
//! plus isotropic noise.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, Dataset, Sample};
use crate::rng::{seeded, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Samples generated with each class as their anchor label.
    pub samples_per_class: usize,
    /// Label-set sizes are uniform in `1..=max_labels`.
    pub max_labels: usize,
    /// Norm of every class centre.
    pub separation: f64,
    /// Per-dimension noise standard deviation.
    pub noise: f64,
    /// 0 draws extra labels uniformly; 1 draws them from a fixed random
    /// co-occurrence graph.
    pub cooccurrence: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 30,
            feature_dim: 16,
            samples_per_class: 60,
            max_labels: 2,
            separation: 10.0,
            noise: 1.0,
            cooccurrence: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.num_classes == 0 || self.feature_dim == 0 || self.samples_per_class == 0 {
            return bad("classes, feature dimension and samples per class must be positive".into());
        }
        if self.max_labels == 0 || self.max_labels > self.num_classes {
            return bad(format!(
                "max_labels {} must lie in 1..={}",
                self.max_labels, self.num_classes
            ));
        }
        if !(self.separation > 0.0) || !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("separation must be positive and noise non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.cooccurrence) {
            return bad(format!("cooccurrence {} outside [0, 1]", self.cooccurrence));
        }
        Ok(())
    }
}

/// Class centres: random unit directions scaled by `separation`.
pub fn class_centres(config: &SynthConfig, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..config.num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..config.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| config.separation * x / norm).collect();
            }
        })
        .collect()
}

/// `partners[c]` lists the classes that preferentially co-occur with `c`.
fn cooccurrence_graph(config: &SynthConfig, rng: &mut Rng) -> Vec<Vec<usize>> {
    let degree = config.max_labels.saturating_sub(1);
    (0..config.num_classes)
        .map(|c| {
            let mut others: Vec<usize> = (0..config.num_classes).filter(|&o| o != c).collect();
            others.shuffle(rng);
            others.truncate(degree);
            others
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let centres = class_centres(config, &mut rng);
    let partners = cooccurrence_graph(config, &mut rng);
    let mut samples = Vec::with_capacity(config.num_classes * config.samples_per_class);

    for anchor in 0..config.num_classes {
        for _ in 0..config.samples_per_class {
            let size = rng.random_range(1..=config.max_labels);
            let mut labels = vec![anchor];
            while labels.len() < size {
                let linked: Vec<usize> = labels
                    .iter()
                    .flat_map(|&l| partners[l].iter().copied())
                    .filter(|c| !labels.contains(c))
                    .collect();
                let next = if !linked.is_empty() && rng.random_bool(config.cooccurrence) {
                    *linked.choose(&mut rng).expect("non-empty")
                } else {
                    let free: Vec<usize> = (0..config.num_classes)
                        .filter(|c| !labels.contains(c))
                        .collect();
                    *free.choose(&mut rng).expect("size <= num_classes")
                };
                labels.push(next);
            }
            let inv = 1.0 / labels.len() as f64;
            let features = (0..config.feature_dim)
                .map(|d| {
                    let centre: f64 = labels.iter().map(|&l| centres[l][d]).sum::<f64>() * inv;
                    let noise: f64 = rng.sample(StandardNormal);
                    centre + config.noise * noise
                })
                .collect();
            let id = format!("s{}", samples.len());
            let labels = labels.into_iter().map(|l| ClassId(l as u32)).collect();
            samples.push(Sample::new(id, features, labels).expect("distinct, non-empty labels"));
        }
    }
    let names = (0..config.num_classes).map(|c| format!("class{c:03}")).collect();
    Ok(Dataset::new(samples, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_label_sits_on_centres() {
        let cfg = SynthConfig {
            max_labels: 1,
            noise: 0.0,
            samples_per_class: 3,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let centres = class_centres(&cfg, &mut seeded(cfg.seed));
        for s in &ds.samples {
            assert_eq!(s.labels().len(), 1);
            assert_eq!(s.features, centres[s.labels()[0].0 as usize]);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn rejects_too_many_labels() {
        let cfg = SynthConfig {
            num_classes: 3,
            max_labels: 4,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn every_class_is_covered() {
        let cfg = SynthConfig::default();
        let ds = generate(&cfg).unwrap();
        for members in ds.class_index() {
            assert!(members.len() >= cfg.samples_per_class);
        }
    }

    #[test]
    fn full_cooccurrence_follows_graph() {
        let cfg = SynthConfig {
            max_labels: 2,
            cooccurrence: 1.0,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        // With one partner per class and ρ = 1, a pair is always (anchor, partner(anchor)).
        let mut partner = vec![None; cfg.num_classes];
        for s in ds.samples.iter().filter(|s| s.labels().len() == 2) {
            let anchor = s.id[1..].parse::<usize>().unwrap() / cfg.samples_per_class;
            let other = s.labels().iter().find(|c| c.0 as usize != anchor).unwrap().0;
            let seen = partner[anchor].get_or_insert(other);
            assert_eq!(*seen, other);
        }
    }
}
