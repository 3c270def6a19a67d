//! Domain-adaptive transfer learning for regulatory-text retrieval: corpus
//! preparation, static embeddings, a miniature bidirectional encoder with
//! domain further-pretraining, classification and tagging heads, and the
//! weighted-F1 experiment protocol.

pub mod checkpoint;
pub mod corpus;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod heads;
pub mod labels;
pub mod metrics;
pub mod rng;
pub mod sgns;
pub mod synthetic;
pub mod tokenize;

pub use error::{Error, Result};
