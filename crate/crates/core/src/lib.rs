// SPDX-License-Identifier: MIT OR Apache-2.0

//! Comment-concept probing and activation steering.
//!
//! The pipeline: locate and classify comments in Java sources
//! ([`comments`]), turn a corpus into positive/negative pairs ([`dataset`]),
//! capture last-token hidden states from a small decoder-only transformer
//! ([`tinylm`]), fit per-layer logistic probes and derive concept activation
//! vectors ([`probes`]), push hidden states to a target concept probability
//! during generation ([`steering`]), score generations ([`metrics`]) and
//! measure per-task concept activation ([`profiler`]). [`pipeline`] wires the
//! stages together behind the command-line tool.

pub mod comments;
pub mod dataset;
pub mod error;
pub mod io;
pub mod lexer;
pub mod metrics;
pub mod pipeline;
pub mod probes;
pub mod profiler;
pub mod steering;
pub mod synth;
pub mod tinylm;

pub use comments::{
    classify_concepts, contains_concept, scan_comments, strip_concept, CommentSpan, ConceptGroup,
    ConceptKind, Placement, Syntax,
};
pub use dataset::{build_pairs, sample_size, split, ExamplePair, SplitSpec};
pub use error::{Error, Result};
pub use probes::{
    accuracy, accuracy_curve, cav, dynamic_threshold, predict, train_probe, Cav, Probe,
};
pub use steering::{SteeringDirection, SteeringPlan, SteeringScope};
pub use tinylm::{LayerEmbedding, Model, ModelConfig};
