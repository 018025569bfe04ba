//! Gesture-video motion graphs: construction, pruning, audio-driven path
//! retrieval, and the geometric pieces needed to stitch retrieved clips.

pub mod align;
pub mod contrastive;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixtures;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod mask;
pub mod motion;
pub mod pipeline;
pub mod retrieval;

pub use error::{Error, Result};
