//! Attention-guided compression of long user-personalization contexts.
//!
//! A marking model's last-token attention is averaged over heads, reduced to
//! per-sentence scores and thresholded against the best-scoring sentence. The
//! selected sentences are wrapped in importance markers and the marked history
//! is handed to a summarizer that writes a token-limited profile. Baselines,
//! evaluation harnesses and ablations live alongside the main pipeline.

pub mod attention;
pub mod context;
pub mod marking;
pub mod providers;
pub mod pipeline;
pub mod templates;
pub mod eval;
pub mod synthetic;
