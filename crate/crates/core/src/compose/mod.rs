//! Bridges external embeddings to the reasoner.

pub mod emb;
pub mod pca;
pub mod predict;
pub mod protocol;

pub use emb::{decode_emb, encode_emb, read_emb, write_emb, EmbeddingSet, EMB_MAGIC, EMB_VERSION};
pub use pca::{fit_pca, PcaModel, DEFAULT_COMPONENTS};
pub use predict::{accuracy, probe_predict, subsample, tart_predict, ToyBenchmark};
pub use protocol::{
    build_prompt, embed_set, embed_test_set, BagOfTokensEmbedder, CausalEmbedder, Embedder, Prompt, Protocol, Slot,
};
