//! Language-disorder classification of transcribed speech with masked
//! language models, and session markers derived from it.
//!
//! The guide in `book/` walks through the modules in pipeline order.

pub mod backend;
pub mod baselines;
pub mod chat;
pub mod eval;
pub mod formulation;
pub mod label;
pub mod markers;
pub mod records;
pub mod registry;
pub mod split;
pub mod stats;
pub mod synthetic;
pub mod train;
pub mod vocab;

// Book chapters are compiled as doctests so their listings stay runnable.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/formulations.md")]
    mod formulations {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/markers.md")]
    mod markers {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
