//! Causally-masked multimodal modeling over minimal HTML, at desk scale.
//!
//! The pipeline: [`html::minify`] reduces raw pages to minimal markup,
//! [`image`] inlines images as discrete tokens, [`objective`] rewrites documents
//! under the causally-masked objective, [`model`] and [`train`] fit a small
//! decoder-only transformer, and [`decode`] plus [`prompts`] drive infilling,
//! captioning, entity scoring and constrained generation.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod experiments;
pub mod html;
pub mod image;
pub mod model;
pub mod objective;
pub mod prompts;
pub mod record;
pub mod train;
pub mod vocab;

pub use record::{Document, Record, Source};
pub use vocab::{TokenId, Vocab};
