//! Typography attribute generation for design documents.
//!
//! Given a canvas background, texts and rough positions, the model in
//! [`model`] predicts eight typographic attributes per text element
//! (font, color, alignment, capitalization, font size, angle, letter
//! spacing, line spacing). [`sampling`] draws diverse suggestions while
//! preserving the predicted typographic structure, and [`metrics`]
//! scores predictions for fidelity, structure and diversity.

pub mod color;
pub mod corpus;
pub mod doc_model;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod quantizer;
pub mod render;
pub mod sampling;

pub use doc_model::{Attribute, DesignDocument, TypographicAttributes};
pub use error::{Error, Result};
