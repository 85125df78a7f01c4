//! Scene descriptors: text embeddings of the twelve labels, a visual
//! embedder that maps images into the same space, and a cosine-softmax
//! classifier tying the two together.

mod embedder;
mod train;
mod vocab;
#[cfg(test)]
mod tests;

pub use embedder::{similarity_scores, BatchStats, Classification, EmbedderConfig, SceneEmbedder};
pub use train::{evaluate_classifier, train_embedders, EmbedTrainConfig, EpochLog, Sample};
pub use vocab::{hashed_vector, WordVectors, WORD_DIM};
