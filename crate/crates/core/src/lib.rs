//! Sheet-music language-model pipeline: ABC parsing, preprocessing, bar-stream
//! patching, a hierarchical patch/character decoder, preference optimization
//! and evaluation metrics.

pub mod abc;
pub mod dpo;
pub mod evaluator;
pub mod metrics;
pub mod midi;
pub mod preprocess;
pub mod patching;
pub mod model;
pub mod synth;
