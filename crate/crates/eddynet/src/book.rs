//! The guide's chapters, attached as doc comments so every Rust snippet in
//! `book/` runs under `cargo test --doc`. A chapter that drifts from the API
//! fails the build instead of quietly rotting.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/convolutions.md")]
pub mod convolutions {}

#[doc = include_str!("../../../book/src/normalization-activations.md")]
pub mod normalization_activations {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}

#[doc = include_str!("../../../book/src/architecture.md")]
pub mod architecture {}

#[doc = include_str!("../../../book/src/data-formats.md")]
pub mod data_formats {}

#[doc = include_str!("../../../book/src/synthetic-scenes.md")]
pub mod synthetic_scenes {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
