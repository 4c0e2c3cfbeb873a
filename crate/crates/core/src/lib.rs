pub mod canonicalizer;
pub mod config;
pub mod corpus;
pub mod evaluator;
pub mod extractor;
pub mod gateway;
pub mod pipeline;
pub mod polls;
pub mod prompt_kit;
pub mod types;
pub mod voteshare;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/gateway.md")]
    mod gateway {}
    #[doc = include_str!("../../../book/src/extraction.md")]
    mod extraction {}
    #[doc = include_str!("../../../book/src/aliases.md")]
    mod aliases {}
    #[doc = include_str!("../../../book/src/vote-shares.md")]
    mod vote_shares {}
    #[doc = include_str!("../../../book/src/polls.md")]
    mod polls {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
