//! Unsupervised machine translation from monolingual data: phrase-table
//! induction from cross-lingual embeddings, a phrase-based decoder,
//! refinement on forward-translated synthetic data, and incremental
//! training of an external translator on filtered back-translations.

pub mod align;
pub mod corpus;
pub mod decoder;
pub mod embedding;
pub mod evaltune;
pub mod fixtures;
pub mod induction;
pub mod lm;
pub mod phrase;
pub mod pipeline;
pub mod table;
pub mod vocab;

pub use corpus::{Corpus, PhraseInventory};
pub use embedding::EmbeddingSpace;
pub use phrase::Phrase;
pub use table::{PairScores, PhraseTable, Provenance};
