//! Multi-label few-shot classification by episodic meta-learning.
//!
//! The crate samples multi-label N-way K-shot episodes, trains a shared
//! embedding network together with one of three classifier heads
//! (prototypes, a learned relation module, or transductive label
//! propagation) and an optional neural label-count module, and scores the
//! result with mean average precision, label-count accuracy and exact-set
//! accuracy.

pub mod dataset;
pub mod embedding;
pub mod episodes;
pub mod error;
pub mod evaluation;
pub mod heads;
pub mod learner;
pub mod nlc;
pub mod numeric;
pub mod optim;
pub mod rng;
pub mod run;
pub mod selftest;
pub mod synth;

pub use error::Error;
