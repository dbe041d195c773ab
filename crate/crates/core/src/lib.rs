//! memseal: dataset provenance sealing through injected template
//! memorization.
//!
//! The toolkit covers the full lifecycle: build a templated set with a
//! shared border and diverse foregrounds, inject it into a captioned image
//! dataset at a low alteration rate, simulate an unauthorized builder's
//! preprocessing (de-duplication, re-captioning, corruptions, purification),
//! fine-tune a toy text-conditioned diffusion model to develop the
//! memorization, and verify usage with one-query and multiple-query
//! statistical tests.

pub mod adversary;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod foreground;
pub mod nn;
pub mod pipeline;
pub mod pixel;
pub mod procedural;
pub mod report;
pub mod similarity;
pub mod stats;
pub mod template;
pub mod verify;

pub use error::{Error, Result};
