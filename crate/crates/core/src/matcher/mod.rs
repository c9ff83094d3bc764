//! Concept scoring against a neuron's patches.

mod embedder;
mod explain;

pub use embedder::{
    cosine, embed_image, embed_text, similarity, Embedder, EmbedderKind, HttpEmbedder, ENV_EMBEDDER_DIM,
    ENV_EMBEDDER_MODEL, ENV_EMBEDDER_URL,
};
pub use explain::{
    explain_neuron, rank_from_similarities, score_concept, sort_ranked, ConceptMatcher, ConceptScore, Explanation,
    MatchParams, PatchRender,
};
