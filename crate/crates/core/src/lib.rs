//! Retrieval-augmented adaptive translation with completion-style models.

pub mod embed;
pub mod gateway;
pub mod ivf;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod terminology;
pub mod tm;
pub mod wlac;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/translation-memories.md")]
    mod translation_memories {}
    #[doc = include_str!("../../../book/src/fuzzy-matches.md")]
    mod fuzzy_matches {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/gateway.md")]
    mod gateway {}
    #[doc = include_str!("../../../book/src/terminology.md")]
    mod terminology {}
    #[doc = include_str!("../../../book/src/autocompletion.md")]
    mod autocompletion {}
    #[doc = include_str!("../../../book/src/corpus-pipeline.md")]
    mod corpus_pipeline {}
    #[doc = include_str!("../../../book/src/server.md")]
    mod server {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
