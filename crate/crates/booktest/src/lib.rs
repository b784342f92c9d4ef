//! Every Rust code block in `book/src` is compiled and run as a doc-test of
//! this crate, so the guide cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/images.md")]
pub mod images {}

#[doc = include_str!("../../../book/src/base-layer.md")]
pub mod base_layer {}

#[doc = include_str!("../../../book/src/enhancement-layer.md")]
pub mod enhancement_layer {}

#[doc = include_str!("../../../book/src/entropy-coding.md")]
pub mod entropy_coding {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
