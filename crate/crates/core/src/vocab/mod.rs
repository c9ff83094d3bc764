//! Concept vocabularies built by prompting a language model once per class.

mod client;
mod concept;
mod prompt;

pub use client::{
    build_vocabulary, class_slug, now_rfc3339, BuildOptions, LlmClient, LlmMode, ENV_ENDPOINT, ENV_MODEL, ENV_TOKEN,
};
pub use concept::{merge_vocabulary, normalize_key, Concept, Provenance, Vocabulary, MAX_CONCEPT_CHARS, SCHEMA_VERSION};
pub use prompt::{build_prompt, parse_reply, PROMPT_TEMPLATE};
