//! Compiles the book's Rust listings as doc-tests, one module per chapter, so
//! a failing listing names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/hypergraphs.md")]
pub mod hypergraphs {}
#[doc = include_str!("../../../book/src/tape.md")]
pub mod tape {}
#[doc = include_str!("../../../book/src/layer.md")]
pub mod layer {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
