//! The guide's chapters, compiled here so `cargo test` runs every snippet.
//! The book itself lives in `book/` at the workspace root.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/structure-space.md")]
pub mod structure_space {}

#[doc = include_str!("../../../book/src/discovery.md")]
pub mod discovery {}

#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}

#[doc = include_str!("../../../book/src/gcn.md")]
pub mod gcn {}

#[doc = include_str!("../../../book/src/clustering.md")]
pub mod clustering {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
