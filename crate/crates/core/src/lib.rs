//! Knowledge-augmented temporal graph neural network for clinical risk
//! prediction.
//!
//! The pipeline turns each patient's visits into two modality-specific graphs
//! (diagnoses, binned measurements), enriches them with ontology-derived and
//! co-occurrence edges, encodes them with a GCN, pools visit embeddings with
//! time-aware local and global attention, and fuses the modalities into a
//! single risk probability.

pub mod autodiff;
pub mod cooccur;
pub mod discretize;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod network;
pub mod ontology;
pub mod train;

pub use error::{Error, Result};
