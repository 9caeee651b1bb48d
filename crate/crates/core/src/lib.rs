//! Probes for how language-neutral multilingual contextual embeddings are.
//!
//! The encoder itself lives outside this crate: embeddings arrive as EMB1
//! files (see [`embstore`]), one per corpus and language, holding every layer.
//! On top of that the crate provides language centroids and centering,
//! least-squares projection between spaces, and five probes: language
//! identification, language similarity, parallel sentence retrieval, word
//! alignment and MT quality estimation.

pub mod alignment;
pub mod cli;
pub mod embstore;
pub mod error;
pub mod geometry;
pub mod langid;
pub mod langsim;
mod linalg;
pub mod persist;
pub mod qe;
pub mod report;
pub mod retrieval;

pub use embstore::{EmbeddingSet, ReprSource, SentenceRepr};
pub use error::{Error, Result};
pub use geometry::{Centroid, LinearMap};
pub use retrieval::Transform;
