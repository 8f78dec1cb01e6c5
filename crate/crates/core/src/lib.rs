//! Multi-stream tied-state HMM toolkit for glove-style sign and gesture
//! sequences.
//!
//! The pipeline: normalize 48-dimensional glove frames split into six
//! synchronous streams ([`frames`]), train left-to-right sign HMMs ([`hmm`],
//! [`train`]), tie every (sign, state) stream density to a small per-stream
//! pattern codebook ([`tying`]), gate isolated recognition through
//! start-state codeword posteriors ([`isolated`]), model inter-sign movement
//! epenthesis ([`epenthesis`]), and decode sentences over a recursive
//! transition network with bigram weighting and two-level beams
//! ([`decoder`]). [`synth`] samples ground-truth model sets for end-to-end
//! validation, [`metrics`] scores hypotheses, and [`bundle`] persists the
//! whole model set.

pub mod bundle;
pub mod decoder;
pub mod epenthesis;
pub mod error;
pub mod frames;
pub mod hmm;
pub mod isolated;
pub mod kmeans;
pub mod metrics;
pub mod synth;
pub mod train;
pub mod tying;

pub use error::{Error, Result};
