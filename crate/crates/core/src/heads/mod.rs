//! Classifier heads producing per-query, per-class scores.

pub mod propagation;
pub mod proto;
pub mod relation;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::NumericError;

pub use propagation::{
    build_graph, graph_operator, label_matrices, lp_loss, normalize_graph, propagate, propagate_iterative,
    propagate_solve, GraphConfig,
};
pub use proto::{compute_prototypes, proto_loss, proto_scores};
pub use relation::{relation_loss, relation_scores, RelationLoss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Proto,
    Relation,
    Lpn,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Proto, HeadKind::Relation, HeadKind::Lpn];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Proto => "proto",
            HeadKind::Relation => "relation",
            HeadKind::Lpn => "lpn",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = HeadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proto" => Ok(HeadKind::Proto),
            "relation" => Ok(HeadKind::Relation),
            "lpn" => Ok(HeadKind::Lpn),
            other => Err(HeadError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("unknown head kind {0:?} (expected proto, relation or lpn)")]
    UnknownKind(String),
    #[error("class {0} has no supporting sample")]
    EmptyClass(usize),
    #[error("label vector has width {found}, expected {expected}")]
    LabelWidth { expected: usize, found: usize },
    #[error("{embeddings} support embeddings but {labels} label vectors")]
    SupportCount { embeddings: usize, labels: usize },
    #[error("{scores} score rows but {labels} query labels")]
    QueryCount { scores: usize, labels: usize },
    #[error("graph: {0}")]
    Graph(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}
