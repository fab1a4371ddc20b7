//! Compiles and runs every Rust listing in `book/src` as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/dictionaries.md")]
pub mod dictionaries {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/relevance.md")]
pub mod relevance {}
#[doc = include_str!("../../../book/src/interpretation.md")]
pub mod interpretation {}
#[doc = include_str!("../../../book/src/planted.md")]
pub mod planted {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
