//! Copied-segment localization between pairs of untrimmed videos.
//!
//! Videos arrive as frame-level embedding sequences sampled at one frame per
//! second. The pipeline enhances both sequences with stacked self/cross
//! attention, builds a temperature-scaled dual-softmax similarity matrix,
//! localizes copied segments as boxes on that matrix, and scores the result
//! with area-based segment metrics.
//!
//! With the default `parallel` feature, row- and pair-level loops run on
//! rayon; without it every helper in [`par`] degrades to a plain iterator.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod annotations;
pub mod attention;
pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod semisup;
pub mod simgen;
pub mod synth;

pub use annotations::{PairAnnotation, PairPrediction, SegmentBox};
pub use error::{Error, Result};
pub use features::FeatureSequence;
pub use simgen::{SimKind, SimMatrix};

/// Feature dimension of the embeddings the defaults are tuned for.
pub const DEFAULT_DIM: usize = 256;
/// Longest accepted sequence, in frames (20 minutes at 1 fps).
pub const DEFAULT_MAX_LEN: usize = 1200;
