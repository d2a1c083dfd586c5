//! Every chapter of the guide as a module, so `cargo test` runs its snippets.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/scoring.md")]
pub mod scoring {}
#[doc = include_str!("src/dataset.md")]
pub mod dataset {}
#[doc = include_str!("src/augmentation.md")]
pub mod augmentation {}
#[doc = include_str!("src/network.md")]
pub mod network {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
